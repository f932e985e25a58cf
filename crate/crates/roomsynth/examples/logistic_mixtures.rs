//! Mixture-of-logistics heads: likelihood values, a numerical-integration
//! sanity check, and sampling moments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roomsynth::distributions::{mol_nll, mol_sample, pos_enc, MixtureParams};

fn main() {
    // A logistic density at its mean is 1/(4 sigma).
    let single = MixtureParams::new(vec![0.0], vec![0.0], vec![0.0]);
    println!("K=1 NLL at the mean: {:.6} (log 4 = {:.6})", mol_nll(0.0, &single).unwrap(), 4f64.ln());

    let mix = MixtureParams::new(vec![0.5, -0.5, 0.1], vec![-1.5, 0.0, 2.0], vec![-0.7, -0.3, 0.0]);

    // Trapezoid integration of exp(-NLL) over a wide interval.
    let step = 1e-3;
    let mut integral = 0.0;
    let mut prev = (-mol_nll(-50.0, &mix).unwrap()).exp();
    for i in 1..=(100.0 / step) as usize {
        let x = -50.0 + i as f64 * step;
        let cur = (-mol_nll(x, &mix).unwrap()).exp();
        integral += 0.5 * (prev + cur) * step;
        prev = cur;
    }
    println!("density integrates to {integral:.6}");

    // Monte-Carlo mean against the analytic mixture mean.
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 100_000;
    let mean = (0..n).map(|_| mol_sample(&mix, &mut rng, 1.0).unwrap()).sum::<f64>() / n as f64;
    println!("empirical mean {mean:.4} vs analytic {:.4}", mix.mean());

    // Positional encoding of a scalar.
    println!("pos_enc(0.25, 8) = {:?}", pos_enc(&[0.25], 8));
}
