//! Probability heads shared by the generators: mixture-of-logistics
//! likelihood and sampling, categorical sampling, sinusoidal positional
//! encoding. Pure-f64 paths serve inference; tape builders serve training.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Tape, ValueId};

/// Floor on log-scales; keeps mixture components from collapsing to spikes.
pub const LOG_SCALE_MIN: f64 = -7.0;

/// K-component logistic mixture for one scalar attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub weight_logits: Vec<f64>,
    pub means: Vec<f64>,
    pub log_scales: Vec<f64>,
}

impl MixtureParams {
    pub fn new(weight_logits: Vec<f64>, means: Vec<f64>, log_scales: Vec<f64>) -> Self {
        assert_eq!(weight_logits.len(), means.len());
        assert_eq!(weight_logits.len(), log_scales.len());
        assert!(!weight_logits.is_empty(), "mixture needs at least one component");
        let log_scales = log_scales.iter().map(|&v| v.max(LOG_SCALE_MIN)).collect();
        MixtureParams { weight_logits, means, log_scales }
    }

    pub fn k(&self) -> usize {
        self.weight_logits.len()
    }

    /// Split one head-output row laid out as [K weight logits, K means,
    /// K log scales].
    pub fn from_row(row: &[f64]) -> Self {
        assert_eq!(row.len() % 3, 0, "mixture row length must be 3K");
        let k = row.len() / 3;
        MixtureParams::new(row[..k].to_vec(), row[k..2 * k].to_vec(), row[2 * k..].to_vec())
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.weight_logits)
    }

    pub fn mean(&self) -> f64 {
        self.weights().iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }
}

/// Logits over a finite label set.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalParams {
    pub logits: Vec<f64>,
}

impl CategoricalParams {
    pub fn new(logits: Vec<f64>) -> Self {
        assert!(logits.iter().all(|v| v.is_finite()), "categorical logits must be finite");
        CategoricalParams { logits }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&v| v - lse).collect()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Negative log-likelihood of `x` under the mixture, via log-sum-exp.
pub fn mol_nll(x: f64, params: &MixtureParams) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Numeric(format!("mol_nll: non-finite sample {x}")));
    }
    let log_w = log_softmax(&params.weight_logits);
    let mut lse = f64::NEG_INFINITY;
    let mut terms = Vec::with_capacity(params.k());
    for k in 0..params.k() {
        let ls = params.log_scales[k];
        let u = (x - params.means[k]) * (-ls).exp();
        // log f_logistic = -u - log sigma - 2 log(1 + e^{-u})
        let log_f = -u - ls - 2.0 * softplus(-u);
        let term = log_w[k] + log_f;
        terms.push(term);
        lse = lse.max(term);
    }
    let total = lse + terms.iter().map(|t| (t - lse).exp()).sum::<f64>().ln();
    Ok(-total)
}

/// Sample a component index and a value; `temperature` rescales the
/// component logits and 0 means argmax.
pub fn mol_sample_component<R: Rng>(
    params: &MixtureParams,
    rng: &mut R,
    temperature: f64,
) -> Result<(usize, f64)> {
    let k = pick_index(&params.weight_logits, rng, temperature)?;
    let mut u: f64 = rng.gen();
    while u <= 0.0 {
        u = rng.gen();
    }
    // Inverse CDF of the logistic distribution.
    let x = params.means[k] + params.log_scales[k].exp() * (u.ln() - (1.0 - u).ln());
    Ok((k, x))
}

pub fn mol_sample<R: Rng>(params: &MixtureParams, rng: &mut R, temperature: f64) -> Result<f64> {
    mol_sample_component(params, rng, temperature).map(|(_, x)| x)
}

/// Sample an index from softmax(logits / temperature); 0 means argmax.
pub fn categorical_sample<R: Rng>(
    params: &CategoricalParams,
    rng: &mut R,
    temperature: f64,
) -> Result<usize> {
    pick_index(&params.logits, rng, temperature)
}

fn pick_index<R: Rng>(logits: &[f64], rng: &mut R, temperature: f64) -> Result<usize> {
    if logits.is_empty() {
        return Err(Error::Contract("empty label set".to_string()));
    }
    if temperature < 0.0 {
        return Err(Error::Contract(format!("negative temperature {temperature}")));
    }
    if temperature < 1e-12 {
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        return Ok(best);
    }
    let scaled: Vec<f64> = logits.iter().map(|&v| v / temperature).collect();
    let probs = softmax(&scaled);
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return Ok(i);
        }
    }
    Ok(probs.len() - 1)
}

/// Sinusoidal encoding: each scalar maps to `dims_per_scalar` values
/// [sin(v w_0), cos(v w_0), ...] with w_i = 10000^(-2i/d); outputs
/// concatenated in input order.
pub fn pos_enc(v: &[f64], dims_per_scalar: usize) -> Vec<f64> {
    assert!(dims_per_scalar % 2 == 0, "dims_per_scalar must be even");
    let half = dims_per_scalar / 2;
    let mut out = Vec::with_capacity(v.len() * dims_per_scalar);
    for &x in v {
        for i in 0..half {
            let omega = 10000f64.powf(-2.0 * i as f64 / dims_per_scalar as f64);
            out.push((x * omega).sin());
            out.push((x * omega).cos());
        }
    }
    out
}

// ── tape builders ────────────────────────────────────────────────────

/// Per-row mixture NLL for a head output laid out [n, 3K]; returns an [n]
/// value. Log-scales are clamped at -7 inside the graph, mirroring
/// `MixtureParams::new`.
pub fn mol_nll_rows(tape: &mut Tape, head: ValueId, targets: &[f64]) -> ValueId {
    let shape = tape.shape(head).to_vec();
    assert_eq!(shape.len(), 2, "mixture head must be [n, 3K]");
    assert_eq!(shape[1] % 3, 0, "mixture head width must be 3K");
    let n = shape[0];
    let k = shape[1] / 3;
    assert_eq!(targets.len(), n, "targets length mismatch");

    let pi = tape.slice(head, 1, 0, k);
    let mu = tape.slice(head, 1, k, k);
    let ls_raw = tape.slice(head, 1, 2 * k, k);
    let ls = tape.clamp_min(ls_raw, LOG_SCALE_MIN);

    let log_w = tape.log_softmax(pi);
    let x = tape.value(vec![n, 1], targets.to_vec());
    let diff = tape.sub(x, mu);
    let neg_ls = tape.scale(ls, -1.0);
    let inv_sigma = tape.exp(neg_ls);
    let u = tape.mul(diff, inv_sigma);
    let neg_u = tape.scale(u, -1.0);
    let sp = tape.softplus(neg_u);
    let sp2 = tape.scale(sp, 2.0);
    let a = tape.sub(neg_u, ls);
    let log_f = tape.sub(a, sp2);
    let joint = tape.add(log_w, log_f);
    let lp = tape.logsumexp(joint);
    tape.scale(lp, -1.0)
}

/// Cross-entropy of one target index against a logits row [1, L].
pub fn ce_row(tape: &mut Tape, logits: ValueId, target: usize) -> ValueId {
    let l = tape.shape(logits)[1];
    assert!(target < l, "target {target} out of range {l}");
    let logp = tape.log_softmax(logits);
    let picked = tape.slice(logp, 1, target, 1);
    let s = tape.sum(picked);
    tape.scale(s, -1.0)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::gradcheck::max_rel_error;
    use crate::numerics::{ParamStore, Tensor};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn nll_at_mean_is_log_four_sigma() {
        // Logistic pdf at its mean is 1/(4 sigma).
        let p = MixtureParams::new(vec![0.0], vec![0.7], vec![0.0]);
        assert!((mol_nll(0.7, &p).unwrap() - 4.0f64.ln()).abs() < 1e-9);

        let p = MixtureParams::new(vec![0.0], vec![-0.2], vec![0.5f64.ln()]);
        assert!((mol_nll(-0.2, &p).unwrap() - 2.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn density_integrates_to_one() {
        let mut r = rng(50);
        for _ in 0..3 {
            let k = 2;
            let p = MixtureParams::new(
                (0..k).map(|_| r.gen_range(-1.0..1.0)).collect(),
                (0..k).map(|_| r.gen_range(-3.0..3.0)).collect(),
                (0..k).map(|_| r.gen_range(-1.5..0.5)).collect(),
            );
            let step = 1e-3;
            let mut total = 0.0;
            let n = (100.0 / step) as usize;
            let mut prev = (-mol_nll(-50.0, &p).unwrap()).exp();
            for i in 1..=n {
                let x = -50.0 + i as f64 * step;
                let cur = (-mol_nll(x, &p).unwrap()).exp();
                total += 0.5 * (prev + cur) * step;
                prev = cur;
            }
            assert!((total - 1.0).abs() < 1e-3, "integral {total}");
        }
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut r = rng(51);
        let k = 4;
        let mut row = Vec::new();
        for _ in 0..k {
            row.push(r.gen_range(-1.0..1.0)); // weight logits
        }
        for _ in 0..k {
            row.push(r.gen_range(-0.5..0.5)); // means
        }
        for _ in 0..k {
            row.push(r.gen_range(-1.0..0.0)); // log scales, away from the clamp
        }
        let mut store = ParamStore::new();
        store.insert("head", Tensor::param(vec![2, 3 * k], [row.clone(), row].concat()));
        let err = max_rel_error(
            &store,
            |tape, store| {
                let head = tape.param("head", store);
                let nll = mol_nll_rows(tape, head, &[0.3, -0.8]);
                tape.sum(nll)
            },
            1e-5,
        );
        assert!(err < 1e-4, "mol nll gradient mismatch: {err}");
    }

    #[test]
    fn tape_nll_matches_pure_nll() {
        let mut r = rng(52);
        let k = 5;
        let row: Vec<f64> = (0..3 * k).map(|_| r.gen_range(-1.0..1.0)).collect();
        let x = 0.42;
        let pure = mol_nll(x, &MixtureParams::from_row(&row)).unwrap();
        let mut tape = Tape::new();
        let head = tape.value(vec![1, 3 * k], row);
        let nll = mol_nll_rows(&mut tape, head, &[x]);
        assert!((tape.data(nll)[0] - pure).abs() < 1e-12);
    }

    #[test]
    fn degenerate_scale_concentrates_at_mean() {
        let p = MixtureParams::new(vec![0.0], vec![0.25], vec![-30.0]); // clamped to -7
        assert_eq!(p.log_scales[0], LOG_SCALE_MIN);
        let mut r = rng(53);
        let samples: Vec<f64> =
            (0..2000).map(|_| mol_sample(&p, &mut r, 1.0).unwrap()).collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let std = (samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
            / samples.len() as f64)
            .sqrt();
        assert!(std < 0.01, "std {std}");
        assert!((mean - 0.25).abs() < 0.01);
    }

    #[test]
    fn monte_carlo_mean_matches_analytic() {
        let mut r = rng(54);
        let p = MixtureParams::new(
            vec![0.4, -0.3, 1.1],
            vec![-1.0, 0.5, 2.0],
            vec![-0.5, -1.0, 0.0],
        );
        let n = 100_000;
        let mean = (0..n)
            .map(|_| mol_sample(&p, &mut r, 1.0).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - p.mean()).abs() < 0.05, "mc {mean} vs {}", p.mean());
    }

    #[test]
    fn component_frequencies_within_binomial_bounds() {
        let mut r = rng(55);
        let p = MixtureParams::new(vec![0.2, -0.4, 0.9], vec![0.0; 3], vec![0.0; 3]);
        let w = p.weights();
        let n = 100_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let (k, _) = mol_sample_component(&p, &mut r, 1.0).unwrap();
            counts[k] += 1;
        }
        for k in 0..3 {
            let expected = w[k] * n as f64;
            let sigma = (n as f64 * w[k] * (1.0 - w[k])).sqrt();
            let dev = (counts[k] as f64 - expected).abs();
            assert!(dev <= 3.0 * sigma, "component {k}: dev {dev} > 3 sigma {sigma}");
        }
    }

    #[test]
    fn fixed_seed_reproduces_sample_sequence() {
        let p = MixtureParams::new(vec![0.3, -0.2], vec![-1.0, 1.0], vec![-0.5, -0.7]);
        let seq = |seed| {
            let mut r = rng(seed);
            (0..32)
                .map(|_| mol_sample(&p, &mut r, 1.0).unwrap().to_bits())
                .collect::<Vec<u64>>()
        };
        assert_eq!(seq(56), seq(56));
    }

    #[test]
    fn categorical_dominated_logits_pick_argmax() {
        let p = CategoricalParams::new(vec![0.0, 40.0, 0.0, 0.0]);
        let mut r = rng(57);
        for _ in 0..1000 {
            assert_eq!(categorical_sample(&p, &mut r, 1.0).unwrap(), 1);
        }
    }

    #[test]
    fn categorical_uniform_frequencies() {
        let p = CategoricalParams::new(vec![0.0; 4]);
        let mut r = rng(58);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[categorical_sample(&p, &mut r, 1.0).unwrap()] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.25).abs() < 0.02, "frequency {f}");
        }
    }

    #[test]
    fn categorical_zero_temperature_is_argmax() {
        let p = CategoricalParams::new(vec![0.1, 0.9, 0.3]);
        let mut r = rng(59);
        assert_eq!(categorical_sample(&p, &mut r, 0.0).unwrap(), 1);
    }

    #[test]
    fn categorical_empty_is_contract_violation() {
        let p = CategoricalParams::new(vec![]);
        let mut r = rng(60);
        match categorical_sample(&p, &mut r, 1.0) {
            Err(Error::Contract(_)) => {}
            other => panic!("expected contract violation, got {other:?}"),
        }
    }

    #[test]
    fn pos_enc_zero_and_shape() {
        assert_eq!(pos_enc(&[0.0], 4), vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(pos_enc(&[0.3, -0.7, 0.1], 8).len(), 3 * 8);
    }

    #[test]
    fn pos_enc_injective_on_grid() {
        let d = 8;
        let values: Vec<f64> = (0..1000).map(|i| -1.0 + 2.0 * i as f64 / 999.0).collect();
        let encs: Vec<Vec<f64>> = values.iter().map(|&v| pos_enc(&[v], d)).collect();
        let mut min_dist = f64::INFINITY;
        for i in 0..encs.len() {
            for j in i + 1..encs.len() {
                let dist: f64 = encs[i]
                    .iter()
                    .zip(&encs[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                min_dist = min_dist.min(dist);
            }
        }
        assert!(min_dist > 1e-6, "closest encodings {min_dist}");
    }
}
