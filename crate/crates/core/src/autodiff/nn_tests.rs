use super::{PoolMode, Tape, Tensor};
use crate::gradcheck::{central_difference_gradient, max_relative_error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Finite-difference check of `d loss / d input` where `build` maps the
/// perturbed input tensor to a scalar loss on a fresh tape.
fn check_input_gradient(
    shape: &[usize],
    x0: &[f64],
    build: &dyn Fn(&mut Tape, super::Var) -> super::Var,
) {
    let analytic = {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_slice(shape, x0).unwrap());
        let loss = build(&mut tape, x);
        tape.backward(loss).unwrap();
        tape.grad_slice(x).unwrap().to_vec()
    };
    let mut f = |xs: &[f64]| {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_slice(shape, xs).unwrap());
        let loss = build(&mut tape, x);
        tape.value(loss).item()
    };
    let numeric = central_difference_gradient(&mut f, x0, 1e-5);
    let err = max_relative_error(&analytic, &numeric);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn conv2d_identity_kernel() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_slice(&[1, 1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let w = tape.constant(Tensor::from_slice(&[1, 1, 1, 1], &[1.0]).unwrap());
    let y = tape.conv2d(x, w, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), tape.value(x).data());
    assert_eq!(tape.value(y).shape(), &[1, 1, 2, 3]);
}

#[test]
fn conv2d_output_shape() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(vec![1, 1, 4, 4]));
    let w = tape.constant(Tensor::zeros(vec![1, 1, 3, 3]));
    let y = tape.conv2d(x, w, 1, 0).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 1, 2, 2]);
}

#[test]
fn conv2d_hand_double_sum() {
    // 3x3 input, 2x2 kernel, stride 1, no padding:
    // out(i,j) = sum_{m,n} input(i+m, j+n) * kernel(m,n)
    let input = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
    let kernel = [1.0, 0.5, -1.0, 2.0];
    let mut expect = [0.0; 4];
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = 0.0;
            for m in 0..2 {
                for n in 0..2 {
                    acc += input[(i + m) * 3 + (j + n)] * kernel[m * 2 + n];
                }
            }
            expect[i * 2 + j] = acc;
        }
    }
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_slice(&[1, 1, 3, 3], &input).unwrap());
    let w = tape.constant(Tensor::from_slice(&[1, 1, 2, 2], &kernel).unwrap());
    let y = tape.conv2d(x, w, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), &expect);
}

#[test]
fn conv2d_rejects_oversized_kernel() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(vec![1, 1, 2, 2]));
    let w = tape.constant(Tensor::zeros(vec![1, 1, 3, 3]));
    assert!(tape.conv2d(x, w, 1, 0).is_err());
    // padding makes it fit
    let x = tape.constant(Tensor::zeros(vec![1, 1, 2, 2]));
    let w = tape.constant(Tensor::zeros(vec![1, 1, 3, 3]));
    assert!(tape.conv2d(x, w, 1, 1).is_ok());
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x0 = rand_vec(&mut rng, 2 * 2 * 4 * 4);
    let w0 = rand_vec(&mut rng, 3 * 2 * 3 * 3);
    // input gradient
    let w_frozen = w0.clone();
    check_input_gradient(&[2, 2, 4, 4], &x0, &move |tape, x| {
        let w = tape.constant(Tensor::from_slice(&[3, 2, 3, 3], &w_frozen).unwrap());
        let y = tape.conv2d(x, w, 2, 1).unwrap();
        tape.sum(y)
    });
    // weight gradient
    let x_frozen = x0;
    check_input_gradient(&[3, 2, 3, 3], &w0, &move |tape, w| {
        let x = tape.constant(Tensor::from_slice(&[2, 2, 4, 4], &x_frozen).unwrap());
        let y = tape.conv2d(x, w, 2, 1).unwrap();
        tape.sum(y)
    });
}

#[test]
fn pool_constant_input_any_mode() {
    for mode in [PoolMode::Max, PoolMode::Avg] {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(vec![1, 2, 4, 4], 7.5));
        let y = tape.pool2d(x, (2, 2), 2, 0, mode).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 2, 2, 2]);
        assert!(tape.value(y).iter().all(|&v| v == 7.5));
    }
}

#[test]
fn maxpool_hand_example() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_slice(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = tape.maxpool2d(x, (2, 2), 2, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0]);
}

#[test]
fn maxpool_tie_routes_to_first() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::from_slice(&[1, 1, 2, 2], &[5.0, 5.0, 1.0, 5.0]).unwrap());
    let y = tape.maxpool2d(x, (2, 2), 2, 0).unwrap();
    let loss = tape.sum(y);
    tape.backward(loss).unwrap();
    // first occurrence in scan order wins the tie
    assert_eq!(tape.grad_slice(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn avgpool_matches_uniform_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = rand_vec(&mut rng, 4 * 4);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_slice(&[1, 1, 4, 4], &data).unwrap());
    let pooled = tape.avgpool2d(x, (2, 2), 2, 0).unwrap();
    let w = tape.constant(Tensor::filled(vec![1, 1, 2, 2], 0.25));
    let conved = tape.conv2d(x, w, 2, 0).unwrap();
    for (a, b) in tape.value(pooled).iter().zip(tape.value(conved).iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn pool_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    // Distinct values so the max argument is stable under the probe step.
    let mut x0 = rand_vec(&mut rng, 2 * 4 * 4);
    for (i, v) in x0.iter_mut().enumerate() {
        *v += i as f64 * 0.01;
    }
    for mode in [PoolMode::Max, PoolMode::Avg] {
        let x = x0.clone();
        check_input_gradient(&[1, 2, 4, 4], &x, &move |tape, xv| {
            let y = tape.pool2d(xv, (2, 2), 1, 1, mode).unwrap();
            // square so upstream gradients differ per cell
            let sq = tape.mul(y, y).unwrap();
            tape.sum(sq)
        });
    }
}

#[test]
fn gap_values_and_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::from_slice(&[1, 2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 10.0, 10.0, 10.0, 10.0]).unwrap());
    let y = tape.global_average_pool(x).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 2]);
    assert_eq!(tape.value(y).data(), &[2.5, 10.0]);
    let loss = tape.sum(y);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad_slice(x).unwrap(), &[0.25; 8]);

    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x0 = rand_vec(&mut rng, 2 * 3 * 2 * 2);
    check_input_gradient(&[2, 3, 2, 2], &x0, &|tape, x| {
        let y = tape.global_average_pool(x).unwrap();
        let sq = tape.mul(y, y).unwrap();
        tape.sum(sq)
    });
}

#[test]
fn dense_contracts() {
    // zero weights -> bias; identity weights -> input
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_slice(&[1, 2], &[3.0, -1.0]).unwrap());
    let w0 = tape.constant(Tensor::zeros(vec![2, 2]));
    let b = tape.constant(Tensor::from_slice(&[2], &[0.5, -0.25]).unwrap());
    let y = tape.dense(x, w0, b).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, -0.25]);

    let wi = tape.constant(Tensor::from_slice(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap());
    let zb = tape.constant(Tensor::zeros(vec![2]));
    let y = tape.dense(x, wi, zb).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, -1.0]);

    // hand 2 -> 2 example: W = [[1,2],[3,4]], b = [0.5,-0.5], x = [1,1]
    let x1 = tape.constant(Tensor::from_slice(&[1, 2], &[1.0, 1.0]).unwrap());
    let w = tape.constant(Tensor::from_slice(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = tape.constant(Tensor::from_slice(&[2], &[0.5, -0.5]).unwrap());
    let y = tape.dense(x1, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[3.5, 6.5]);
}

#[test]
fn dense_rejects_width_mismatch() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(vec![1, 3]));
    let w = tape.constant(Tensor::zeros(vec![2, 2]));
    let b = tape.constant(Tensor::zeros(vec![2]));
    assert!(tape.dense(x, w, b).is_err());
}

#[test]
fn dropout_identity_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_slice(&[1, 4], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    // rate 0 and inference mode are exact identities (same node)
    let y = tape.dropout(x, 0.0, true, &mut rng).unwrap();
    assert_eq!(y, x);
    let y = tape.dropout(x, 0.9, false, &mut rng).unwrap();
    assert_eq!(y, x);
    assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
    assert!(tape.dropout(x, -0.1, true, &mut rng).is_err());
}

#[test]
fn dropout_preserves_mean_at_half_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 100_000;
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::filled(vec![1, n], 1.0));
    let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
    let mean = tape.value(y).iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
}

#[test]
fn dropout_deterministic_given_seed() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(vec![1, 64], 2.0));
        let y = tape.dropout(x, 0.4, true, &mut rng).unwrap();
        tape.value(y).data().to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn dropout_gradient_uses_same_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut tape = Tape::new();
    let x = tape.param(Tensor::filled(vec![1, 32], 3.0));
    let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
    let loss = tape.sum(y);
    tape.backward(loss).unwrap();
    let grads = tape.grad_slice(x).unwrap();
    let outputs = tape.value(y).data();
    for (g, o) in grads.iter().zip(outputs) {
        if *o == 0.0 {
            assert_eq!(*g, 0.0);
        } else {
            assert_eq!(*g, 2.0); // 1/(1-0.5)
        }
    }
}

#[test]
fn cross_entropy_perfect_prediction() {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::from_slice(&[1, 2], &[1.0, 0.0]).unwrap());
    let y = tape.constant(Tensor::from_slice(&[1, 2], &[1.0, 0.0]).unwrap());
    let loss = tape.cross_entropy(p, y).unwrap();
    assert!(tape.value(loss).item() <= 1e-11);
}

#[test]
fn cross_entropy_uniform_two_class() {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::from_slice(&[1, 2], &[0.5, 0.5]).unwrap());
    let y = tape.constant(Tensor::from_slice(&[1, 2], &[0.0, 1.0]).unwrap());
    let loss = tape.cross_entropy(p, y).unwrap();
    assert!((tape.value(loss).item() - 2.0f64.ln()).abs() < 1e-12);
}

#[test]
fn cross_entropy_monotone_in_true_class_mass() {
    let mut prev = f64::INFINITY;
    for p_true in [0.2, 0.4, 0.6, 0.8, 0.99] {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::from_slice(&[1, 2], &[p_true, 1.0 - p_true]).unwrap());
        let y = tape.constant(Tensor::from_slice(&[1, 2], &[1.0, 0.0]).unwrap());
        let loss = tape.cross_entropy(p, y).unwrap();
        let l = tape.value(loss).item();
        assert!(l < prev, "loss must strictly decrease");
        assert!(l >= 0.0);
        prev = l;
    }
}

#[test]
fn cross_entropy_validates_inputs() {
    let mut tape = Tape::new();
    let bad_p = tape.constant(Tensor::from_slice(&[1, 2], &[0.7, 0.7]).unwrap());
    let y = tape.constant(Tensor::from_slice(&[1, 2], &[1.0, 0.0]).unwrap());
    assert!(tape.cross_entropy(bad_p, y).is_err());

    let p = tape.constant(Tensor::from_slice(&[1, 2], &[0.5, 0.5]).unwrap());
    let bad_y = tape.constant(Tensor::from_slice(&[1, 2], &[0.5, 0.5]).unwrap());
    assert!(tape.cross_entropy(p, bad_y).is_err());

    let p = tape.constant(Tensor::from_slice(&[1, 2], &[0.5, 0.5]).unwrap());
    let wrong_shape = tape.constant(Tensor::from_slice(&[2, 1], &[1.0, 0.0]).unwrap());
    assert!(tape.cross_entropy(p, wrong_shape).is_err());
}

#[test]
fn softmax_cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let logits = rand_vec(&mut rng, 3 * 2);
    check_input_gradient(&[3, 2], &logits, &|tape, x| {
        let probs = tape.softmax(x).unwrap();
        let labels = tape.constant(
            Tensor::from_slice(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap(),
        );
        tape.cross_entropy(probs, labels).unwrap()
    });
}

#[test]
fn relu_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    // keep values away from the kink at 0
    let x0: Vec<f64> = rand_vec(&mut rng, 12)
        .into_iter()
        .map(|v| if v.abs() < 0.05 { v + 0.1 } else { v })
        .collect();
    check_input_gradient(&[3, 4], &x0, &|tape, x| {
        let y = tape.relu(x);
        let sq = tape.mul(y, y).unwrap();
        tape.sum(sq)
    });
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let a0 = rand_vec(&mut rng, 6);
    let b0 = rand_vec(&mut rng, 12);
    let b_frozen = b0.clone();
    check_input_gradient(&[2, 3], &a0, &move |tape, a| {
        let b = tape.constant(Tensor::from_slice(&[3, 4], &b_frozen).unwrap());
        let c = tape.matmul(a, b).unwrap();
        let sq = tape.mul(c, c).unwrap();
        tape.sum(sq)
    });
    let a_frozen = a0;
    check_input_gradient(&[3, 4], &b0, &move |tape, b| {
        let a = tape.constant(Tensor::from_slice(&[2, 3], &a_frozen).unwrap());
        let c = tape.matmul(a, b).unwrap();
        let sq = tape.mul(c, c).unwrap();
        tape.sum(sq)
    });
}
