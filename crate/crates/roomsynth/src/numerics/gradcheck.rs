//! Central finite-difference gradient checking.
//!
//! The numeric side only re-runs forward passes, so it is independent of the
//! backward rules it validates.

use super::{ParamStore, Tape, ValueId};

/// Max relative error between the analytic gradient of `build`'s scalar
/// output w.r.t. every parameter in `store`, and central finite differences
/// with step `h`. Relative error is |a-n| / max(1, |a|, |n|).
pub fn max_rel_error<F>(store: &ParamStore, build: F, h: f64) -> f64
where
    F: Fn(&mut Tape, &ParamStore) -> ValueId,
{
    let mut work = store.clone();
    let mut tape = Tape::new();
    let loss = build(&mut tape, &work);
    tape.backward(loss, &mut work).expect("gradcheck backward failed");

    let names: Vec<String> = work.iter().map(|(n, _)| n.clone()).collect();
    let mut worst: f64 = 0.0;
    for name in names {
        if !work.get(&name).requires_grad {
            continue;
        }
        let analytic = work.get(&name).grad.clone().expect("gradient missing");
        let n = work.get(&name).data.len();
        for i in 0..n {
            let orig = work.get(&name).data[i];

            work.get_mut(&name).data[i] = orig + h;
            let mut t_plus = Tape::new();
            let lp = build(&mut t_plus, &work);
            let fp = t_plus.data(lp)[0];

            work.get_mut(&name).data[i] = orig - h;
            let mut t_minus = Tape::new();
            let lm = build(&mut t_minus, &work);
            let fm = t_minus.data(lm)[0];

            work.get_mut(&name).data[i] = orig;

            let numeric = (fp - fm) / (2.0 * h);
            let denom = 1.0_f64.max(analytic[i].abs()).max(numeric.abs());
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
    }
    worst
}
