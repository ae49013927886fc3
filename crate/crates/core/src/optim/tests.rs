use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn sgd_single_step_on_quadratic() {
    // f(w) = w^2/2, grad = w
    let mut w = [1.0];
    sgd_step(&mut w, &[1.0], 0.1).unwrap();
    assert!((w[0] - 0.9).abs() < 1e-15);
}

#[test]
fn sgd_zero_gradient_is_identity() {
    let mut w = [0.37, -4.0];
    sgd_step(&mut w, &[0.0, 0.0], 0.5).unwrap();
    assert_eq!(w, [0.37, -4.0]);
}

#[test]
fn sgd_geometric_decay_over_100_steps() {
    let mut w = [1.0];
    for _ in 0..100 {
        let g = [w[0]];
        sgd_step(&mut w, &g, 0.1).unwrap();
    }
    let expect = 0.9f64.powi(100); // ~2.656e-5
    assert!((w[0] - expect).abs() < 1e-18);
    assert!((expect - 2.656e-5).abs() < 1e-8);
}

#[test]
fn sgd_rejects_shape_mismatch() {
    let mut w = [1.0, 2.0];
    assert!(matches!(
        sgd_step(&mut w, &[1.0], 0.1),
        Err(OptimError::ShapeMismatch { .. })
    ));
}

#[test]
fn momentum_with_zero_beta_matches_sgd_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut w_sgd = [1.0, -2.0, 0.5];
    let mut w_mom = w_sgd;
    let mut z = [0.0; 3];
    for _ in 0..50 {
        let g: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        sgd_step(&mut w_sgd, &g, 0.05).unwrap();
        momentum_step(&mut w_mom, &g, &mut z, 0.05, 0.0).unwrap();
        assert_eq!(w_sgd, w_mom);
    }
}

#[test]
fn momentum_hand_iteration() {
    // f = w^2/2, w0 = 1, lr = 0.1, beta = 0.9:
    // z1 = 1, w1 = 0.9; z2 = 0.9 + 0.9 = 1.8, w2 = 0.9 - 0.18 = 0.72
    let mut w = [1.0];
    let mut z = [0.0];
    momentum_step(&mut w, &[1.0], &mut z, 0.1, 0.9).unwrap();
    assert!((z[0] - 1.0).abs() < 1e-15);
    assert!((w[0] - 0.9).abs() < 1e-15);
    let g = [w[0]];
    momentum_step(&mut w, &g, &mut z, 0.1, 0.9).unwrap();
    assert!((z[0] - 1.8).abs() < 1e-15);
    assert!((w[0] - 0.72).abs() < 1e-15);
}

#[test]
fn momentum_two_stage_and_single_recurrence_agree() {
    // w_{k+1} = w_k - lr*g_k + beta*(w_k - w_{k-1}) reproduces the two-stage
    // form on an arbitrary gradient sequence.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (lr, beta) = (0.07, 0.9);
    let mut w_two = 1.3;
    let mut z = [0.0];
    let mut w_one = 1.3;
    let mut w_prev = 1.3;
    for _ in 0..20 {
        let g = rng.random_range(-2.0..2.0);
        let mut buf = [w_two];
        momentum_step(&mut buf, &[g], &mut z, lr, beta).unwrap();
        w_two = buf[0];

        let next = w_one - lr * g + beta * (w_one - w_prev);
        w_prev = w_one;
        w_one = next;

        assert!((w_two - w_one).abs() < 1e-12, "{w_two} vs {w_one}");
    }
}

#[test]
fn rmsprop_hand_first_step() {
    // avg = 0.9, step = 0.1, eps = 1e-8, g = 1:
    // s = 0.1, w = 1 - 0.1 / sqrt(0.1 + 1e-8)
    let mut w = [1.0];
    let mut s = [0.0];
    rmsprop_step(&mut w, &[1.0], &mut s, 0.9, 0.1, 1e-8).unwrap();
    let expect = 1.0 - 0.1 / (0.1f64 + 1e-8).sqrt();
    assert!((w[0] - expect).abs() < 1e-15);
    assert!((expect - 0.683772).abs() < 1e-6);
    assert!((s[0] - 0.1).abs() < 1e-15);
}

#[test]
fn rmsprop_zero_gradient_keeps_params() {
    let mut w = [2.0, -1.0];
    let mut s = [0.0, 0.0];
    for _ in 0..100 {
        rmsprop_step(&mut w, &[0.0, 0.0], &mut s, 0.9, 0.01, 1e-8).unwrap();
    }
    assert_eq!(w, [2.0, -1.0]);
}

#[test]
fn rmsprop_step_magnitude_converges_to_step_size() {
    // With a constant gradient the squared average tends to g^2, so the
    // update magnitude tends to the step size.
    let g = 3.0;
    let mut w = [100.0];
    let mut s = [0.0];
    let step = 0.01;
    let mut last = w[0];
    for i in 0..300 {
        rmsprop_step(&mut w, &[g], &mut s, 0.9, step, 1e-8).unwrap();
        if i > 200 {
            let delta = last - w[0];
            assert!((delta - step).abs() < 1e-6, "delta {delta}");
        }
        last = w[0];
    }
    assert!(s[0] >= 0.0);
}

#[test]
fn adaptive_moment_hand_first_step() {
    // g = 1, b1 = 0.9, b2 = 0.999, lr = 0.001, eps = 1e-8:
    // m = 0.1, v = 0.001, dw = -0.001 * 0.1 / sqrt(0.001 + 1e-8)
    let mut w = [0.0];
    let (mut m, mut v) = ([0.0], [0.0]);
    adaptive_moment_step(&mut w, &[1.0], &mut m, &mut v, 0.001, 0.9, 0.999, 1e-8).unwrap();
    assert!((m[0] - 0.1).abs() < 1e-15);
    assert!((v[0] - 0.001).abs() < 1e-15);
    let expect = -0.001 * 0.1 / (0.001f64 + 1e-8).sqrt();
    assert!((w[0] - expect).abs() < 1e-15);
    assert!((expect - (-3.1623e-3)).abs() < 1e-6);
}

#[test]
fn adaptive_moment_zero_gradient_from_fresh_state() {
    let mut w = [5.0];
    let (mut m, mut v) = ([0.0], [0.0]);
    adaptive_moment_step(&mut w, &[0.0], &mut m, &mut v, 0.001, 0.9, 0.999, 1e-8).unwrap();
    assert_eq!(w, [5.0]);
}

#[test]
fn adaptive_moment_zero_betas_is_sign_scaled_step() {
    // b1 = b2 = 0 reduces to w -= lr * g / sqrt(g^2 + eps)
    for g in [2.5, -0.4, 10.0] {
        let mut w = [1.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        adaptive_moment_step(&mut w, &[g], &mut m, &mut v, 0.01, 0.0, 0.0, 1e-8).unwrap();
        let expect = 1.0 - 0.01 * g / (g * g + 1e-8).sqrt();
        assert!((w[0] - expect).abs() < 1e-15);
        assert!((w[0] - (1.0 - 0.01 * g.signum())).abs() < 1e-8);
    }
}

#[test]
fn hyperparameters_validated() {
    let mut w = [1.0];
    let mut z = [0.0];
    assert!(sgd_step(&mut w, &[1.0], 0.0).is_err());
    assert!(momentum_step(&mut w, &[1.0], &mut z, 0.1, 1.0).is_err());
    assert!(rmsprop_step(&mut w, &[1.0], &mut z, -0.1, 0.1, 1e-8).is_err());
    let (mut m, mut v) = ([0.0], [0.0]);
    assert!(adaptive_moment_step(&mut w, &[1.0], &mut m, &mut v, 0.001, 0.9, 1.5, 1e-8).is_err());
    assert!(Optimizer::new(
        OptimizerKind::Momentum,
        Hyperparams { momentum_beta: -0.2, ..Hyperparams::defaults(OptimizerKind::Momentum) }
    )
    .is_err());
}

/// Quadratic-bowl convergence harness: returns `f = ||w||^2 / 2` after
/// `steps` iterations.
fn drive_quadratic(kind: OptimizerKind, lr: f64, dim: usize, steps: usize) -> f64 {
    let hyper = Hyperparams { learning_rate: lr, ..Hyperparams::defaults(kind) };
    let mut opt = Optimizer::new(kind, hyper).unwrap();
    let mut w = vec![1.0; dim];
    for _ in 0..steps {
        let g = w.clone();
        opt.step("w", &mut w, &g).unwrap();
        assert!(opt.squared_state_nonnegative());
    }
    0.5 * w.iter().map(|v| v * v).sum::<f64>()
}

#[test]
fn all_kinds_reach_low_loss_on_quadratic() {
    assert!(drive_quadratic(OptimizerKind::Sgd, 0.1, 4, 500) < 1e-3);
    assert!(drive_quadratic(OptimizerKind::Momentum, 0.05, 4, 500) < 1e-3);
    assert!(drive_quadratic(OptimizerKind::RmsProp, 0.005, 4, 500) < 1e-3);
    assert!(drive_quadratic(OptimizerKind::AdaptiveMoment, 0.01, 4, 500) < 1e-3);
}

#[test]
fn optimizer_state_entries_are_prefixed() {
    let mut opt = Optimizer::with_defaults(OptimizerKind::AdaptiveMoment);
    let mut w = [1.0, 2.0];
    opt.step("layer.weight", &mut w, &[0.1, 0.2]).unwrap();
    let entries = opt.state_entries();
    let names: Vec<&str> = entries.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["opt.m.layer.weight", "opt.v.layer.weight"]);

    let opt = Optimizer::with_defaults(OptimizerKind::Sgd);
    assert!(opt.state_entries().is_empty());
}

#[test]
fn state_roundtrips_through_entries() {
    let mut opt = Optimizer::with_defaults(OptimizerKind::RmsProp);
    let mut w = [1.0, 2.0];
    for _ in 0..5 {
        let g = w;
        opt.step("layer.w", &mut w, &g).unwrap();
    }
    let entries = opt.state_entries();

    // a fresh optimizer restored from the entries continues identically
    let mut restored = Optimizer::with_defaults(OptimizerKind::RmsProp);
    assert_eq!(restored.load_state_entries(&entries), 1);
    let mut w_a = w;
    let mut w_b = w;
    for _ in 0..5 {
        let g = w_a;
        opt.step("layer.w", &mut w_a, &g).unwrap();
        restored.step("layer.w", &mut w_b, &g).unwrap();
        assert_eq!(w_a, w_b);
    }
}

#[test]
fn kind_parsing() {
    assert_eq!("sgd".parse::<OptimizerKind>().unwrap(), OptimizerKind::Sgd);
    assert_eq!("momentum".parse::<OptimizerKind>().unwrap(), OptimizerKind::Momentum);
    assert_eq!("rmsprop".parse::<OptimizerKind>().unwrap(), OptimizerKind::RmsProp);
    assert_eq!("adam".parse::<OptimizerKind>().unwrap(), OptimizerKind::AdaptiveMoment);
    assert!("adagrad".parse::<OptimizerKind>().is_err());
}
