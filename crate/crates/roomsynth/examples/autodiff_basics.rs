//! The tensor tape in isolation: forward ops, reverse-mode gradients, a
//! finite-difference check, and a few Adam steps on a tiny regression.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roomsynth::numerics::{adam_step, gradcheck, AdamState, ParamStore, Tape, Tensor};

fn main() {
    // Forward + backward on a two-layer network.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    store.insert("w1", Tensor::glorot(vec![3, 8], (3, 8), &mut rng));
    store.insert("b1", Tensor::param(vec![1, 8], vec![0.0; 8]));
    store.insert("w2", Tensor::glorot(vec![8, 1], (8, 1), &mut rng));

    let xs: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // Targets: y = x0 - 2*x1 + 0.5*x2
    let ys: Vec<f64> = xs.chunks(3).map(|r| r[0] - 2.0 * r[1] + 0.5 * r[2]).collect();

    let build = |tape: &mut Tape, store: &ParamStore, xs: &[f64], ys: &[f64]| {
        let x = tape.value(vec![10, 3], xs.to_vec());
        let w1 = tape.param("w1", store);
        let b1 = tape.param("b1", store);
        let w2 = tape.param("w2", store);
        let h = tape.matmul(x, w1);
        let h = tape.add(h, b1);
        let h = tape.relu(h);
        let pred = tape.matmul(h, w2);
        let target = tape.value(vec![10, 1], ys.to_vec());
        let diff = tape.sub(pred, target);
        let sq = tape.mul(diff, diff);
        tape.mean(sq)
    };

    // Analytic gradients agree with central finite differences.
    let err = gradcheck::max_rel_error(&store, |t, s| build(t, s, &xs, &ys), 1e-5);
    println!("finite-difference max relative error: {err:.2e}");

    // A short optimization run.
    let mut adam = AdamState::new(0.05);
    for step in 0..200 {
        let mut tape = Tape::new();
        let loss = build(&mut tape, &store, &xs, &ys);
        if step % 50 == 0 {
            println!("step {step:3}  mse {:.5}", tape.data(loss)[0]);
        }
        tape.backward(loss, &mut store).unwrap();
        adam_step(&mut store, &mut adam).unwrap();
    }
    let mut tape = Tape::new();
    let loss = build(&mut tape, &store, &xs, &ys);
    println!("final mse {:.6}", tape.data(loss)[0]);
}
