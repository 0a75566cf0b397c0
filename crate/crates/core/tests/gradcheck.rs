//! Gradient fidelity against the central finite-difference oracle, plus the
//! exactness properties of the stop-gradient operator and training
//! determinism.

use mbd_core::numerics::fdcheck::finite_difference_check;
use mbd_core::numerics::{Activation, Algorithm, Mlp, MlpSpec, Optimizer, ParamStore, Tape};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random MLP with <= 4 layers and width <= 16, deterministic per seed.
fn random_spec(seed: u64) -> (MlpSpec, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=4usize);
    let mut widths = Vec::new();
    for _ in 0..=depth {
        widths.push(rng.random_range(1..=16usize));
    }
    let act = if seed % 2 == 0 {
        Activation::Identity
    } else {
        Activation::Sigmoid
    };
    let input: Vec<f64> = (0..widths[0]).map(|_| rng.random_range(-1.5..1.5)).collect();
    let target: Vec<f64> = (0..*widths.last().unwrap())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    (MlpSpec::new(widths, act, seed ^ 0x9e37).unwrap(), input, target)
}

fn mse_fd_report(seed: u64) -> f64 {
    let (spec, input, target) = random_spec(seed);
    let mut store: ParamStore<f64> = ParamStore::new();
    let mlp = Mlp::init(spec, &mut store, "net").unwrap();
    let report = finite_difference_check(&mut store, 1e-5, |tape, store| {
        let x = tape.constant(&input);
        let f = mlp.forward(tape, store, x)?;
        let t = tape.constant(&target);
        let diff = tape.sub(f.output, t);
        let sq = tape.mul(diff, diff);
        Ok(tape.mean(sq))
    })
    .unwrap();
    assert!(report.coordinates_checked >= 4);
    report.max_rel_error
}

#[test]
fn mlp_gradients_match_finite_differences_over_100_seeds() {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        worst = worst.max(mse_fd_report(seed));
    }
    assert!(
        worst < 1e-4,
        "max relative error {worst:.3e} exceeds 1e-4"
    );
}

#[test]
fn ten_parameter_mlp_matches_oracle() {
    // 2-2-1 net with sigmoid head: 2*2 + 2 + 2*1 + 1 = 11 params; checks the
    // documented h = 1e-5 oracle at < 1e-4 max relative error.
    let spec = MlpSpec::new(vec![2, 2, 1], Activation::Sigmoid, 17).unwrap();
    let mut store: ParamStore<f64> = ParamStore::new();
    let mlp = Mlp::init(spec, &mut store, "net").unwrap();
    let report = finite_difference_check(&mut store, 1e-5, |tape, store| {
        let x = tape.constant(&[0.8, -0.4]);
        let f = mlp.forward(tape, store, x)?;
        let loss = tape.bce_with_logits(f.preactivation, &[1.0]);
        Ok(tape.mean(loss))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4);
}

#[test]
fn composite_ops_match_oracle() {
    // Exercises exp, scale, max_const, sum, concat and pinball away from
    // their kink points.
    let spec = MlpSpec::new(vec![3, 5, 2], Activation::Identity, 3).unwrap();
    let mut store: ParamStore<f64> = ParamStore::new();
    let mlp = Mlp::init(spec, &mut store, "net").unwrap();
    let report = finite_difference_check(&mut store, 1e-5, |tape, store| {
        let x = tape.constant(&[0.2, -0.7, 1.1]);
        let f = mlp.forward(tape, store, x)?;
        let scaled = tape.scale(f.output, 0.3);
        let e = tape.exp(scaled);
        let floored = tape.max_const(e, 0.05);
        let p = tape.constant(&[5.0, 5.0]);
        let pb = tape.pinball(p, f.output, 0.9)?;
        let joined = tape.concat(&[floored, pb]);
        let s = tape.sum(joined);
        Ok(tape.scale(s, 0.25))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "err {:.3e}", report.max_rel_error);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Stop-gradient opacity: in L = mean((sg[f(x)] - g(x))^2) the
    /// parameters of f receive exactly zero gradient, not approximately.
    #[test]
    fn stop_gradient_is_exactly_opaque(seed in 0u64..5000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = rng.random_range(1..=8usize);
        let f_spec = MlpSpec::new(vec![3, width, 2], Activation::Identity, seed).unwrap();
        let g_spec = MlpSpec::new(vec![3, 2], Activation::Identity, seed + 1).unwrap();
        let mut f_store: ParamStore<f64> = ParamStore::new();
        let mut g_store: ParamStore<f64> = ParamStore::new();
        let f = Mlp::init(f_spec, &mut f_store, "f").unwrap();
        let g = Mlp::init(g_spec, &mut g_store, "g").unwrap();

        let input: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut tape = Tape::new();
        let x = tape.constant(&input);
        let fo = f.forward(&mut tape, &f_store, x).unwrap();
        let go = g.forward(&mut tape, &g_store, x).unwrap();
        let f_sg = tape.stop_grad(fo.output);
        let diff = tape.sub(f_sg, go.output);
        let sq = tape.mul(diff, diff);
        let loss = tape.mean(sq);
        tape.backward_scalar(loss, &mut [&mut f_store, &mut g_store]).unwrap();

        prop_assert!(f_store.grads_are_zero());
        // and g actually receives gradient unless the residual is zero
        let residual: f64 = tape.value(diff).iter().map(|d| d.abs()).sum();
        if residual > 1e-9 {
            prop_assert!(!g_store.grads_are_zero());
        }
    }
}

#[test]
fn training_is_bit_deterministic() {
    let run = || {
        let spec = MlpSpec::new(vec![2, 8, 1], Activation::Identity, 11).unwrap();
        let mut store: ParamStore<f64> = ParamStore::new();
        let mlp = Mlp::init(spec, &mut store, "net").unwrap();
        let mut opt = Optimizer::new(Algorithm::adam_default(), 1e-2);
        let data: Vec<([f64; 2], f64)> = (0..16)
            .map(|i| {
                let a = (i as f64) / 8.0 - 1.0;
                let b = ((i * 7 % 16) as f64) / 8.0 - 1.0;
                ([a, b], a * 2.0 - b)
            })
            .collect();
        for _ in 0..50 {
            let mut tape = Tape::new();
            let mut parts = Vec::new();
            for (x, y) in &data {
                let xn = tape.constant(x);
                let f = mlp.forward(&mut tape, &store, xn).unwrap();
                let t = tape.constant(&[*y]);
                let d = tape.sub(f.output, t);
                parts.push(tape.mul(d, d));
            }
            let all = tape.concat(&parts);
            let loss = tape.mean(all);
            tape.backward_scalar(loss, &mut [&mut store]).unwrap();
            opt.step(&mut store).unwrap();
            store.zero_grads();
        }
        store.value_bits()
    };
    assert_eq!(run(), run());
}

