//! Finite-difference oracles against the backward pass: plain parameter
//! gradients of random networks, and parameter gradients of functions of the
//! input gradient (the double-backprop path the gradient penalty relies on).

mod common;

use common::{backward_grads, close, finite_difference_grads, kink_free_batch};
use minmax_measure::autodiff::Tape;
use minmax_measure::nets::{init_mlp, Activation, MlpConfig};
use minmax_measure::rng::Stream;

const FD_STEP: f64 = 1e-5;

fn random_mlp(seed: u64, input: usize, hidden: usize, depth: usize, act: Activation) -> minmax_measure::nets::Mlp {
    let cfg = MlpConfig::new(input, 1, depth, hidden, act);
    init_mlp(&cfg, &mut Stream::derive(seed, "gradcheck")).unwrap()
}

#[test]
fn random_mlp_loss_matches_finite_differences() {
    // A three-layer tanh network under a mean-square loss.
    let mut mlp = random_mlp(1, 3, 12, 3, Activation::Tanh);
    let mut rng = Stream::derive(2, "batch");
    let batch = kink_free_batch(&mlp, 9, &mut rng, 1e-3);

    let ad = backward_grads(&mlp, &mut |tape, bound| {
        let x = tape.input(batch.clone());
        let y = bound.forward(tape, x).unwrap();
        let sq = tape.square(y);
        tape.mean(sq)
    });
    let fd = finite_difference_grads(
        &mut mlp,
        &mut |m| {
            let mut tape = Tape::new();
            let x = tape.input(batch.clone());
            let bound = m.bind_frozen(&mut tape);
            let y = bound.forward(&mut tape, x).unwrap();
            let sq = tape.square(y);
            let l = tape.mean(sq);
            tape.value(l).item()
        },
        FD_STEP,
    );
    for (ga, gf) in ad.iter().zip(&fd) {
        for (&a, &f) in ga.iter().zip(gf) {
            assert!(close(a, f, 1e-4, 1e-7), "ad {a} vs fd {f}");
        }
    }
}

#[test]
fn relu_mlp_away_from_kinks_matches_finite_differences() {
    let mut mlp = random_mlp(3, 2, 10, 4, Activation::Relu);
    let mut rng = Stream::derive(4, "batch");
    let batch = kink_free_batch(&mlp, 7, &mut rng, 1e-3);
    let ad = backward_grads(&mlp, &mut |tape, bound| {
        let x = tape.input(batch.clone());
        let y = bound.forward(tape, x).unwrap();
        tape.mean(y)
    });
    let fd = finite_difference_grads(
        &mut mlp,
        &mut |m| {
            let out = m.forward_plain(&batch);
            out.data().iter().sum::<f64>() / out.len() as f64
        },
        FD_STEP,
    );
    for (ga, gf) in ad.iter().zip(&fd) {
        for (&a, &f) in ga.iter().zip(gf) {
            assert!(close(a, f, 1e-4, 1e-7), "ad {a} vs fd {f}");
        }
    }
}

#[test]
fn gradient_penalty_double_backprop_matches_finite_differences() {
    // Parameter gradient of mean ((‖∇ₓh(x)‖ − L)⁺)² for a two-layer ReLU
    // net, checked against finite differences in the weights.
    let lipschitz = 0.05; // small so the one-sided penalty is active
    let mut mlp = random_mlp(5, 2, 8, 2, Activation::Relu);
    let mut rng = Stream::derive(6, "batch");
    let batch = kink_free_batch(&mlp, 11, &mut rng, 1e-3);

    let penalty_loss = |tape: &mut Tape, bound: &minmax_measure::nets::BoundMlp| {
        let x = tape.input(batch.clone());
        let g = bound.input_gradient(tape, x).unwrap();
        let norm = tape.row_norm(g).unwrap();
        let excess = tape.add_scalar(norm, -lipschitz);
        let pos = tape.relu(excess);
        let sq = tape.square(pos);
        tape.mean(sq)
    };

    let ad = backward_grads(&mlp, &mut |tape, bound| penalty_loss(tape, bound));
    let fd = finite_difference_grads(
        &mut mlp,
        &mut |m| {
            let mut tape = Tape::new();
            let bound = m.bind_frozen(&mut tape);
            let l = penalty_loss(&mut tape, &bound);
            tape.value(l).item()
        },
        FD_STEP,
    );
    let mut checked = 0;
    for (ga, gf) in ad.iter().zip(&fd) {
        for (&a, &f) in ga.iter().zip(gf) {
            assert!(close(a, f, 1e-3, 1e-6), "ad {a} vs fd {f}");
            if a.abs() > 1e-6 {
                checked += 1;
            }
        }
    }
    assert!(checked > 5, "penalty gradient vanished everywhere ({checked})");
}

#[test]
fn tanh_double_backprop_matches_finite_differences() {
    let mut mlp = random_mlp(7, 3, 6, 3, Activation::Tanh);
    let mut rng = Stream::derive(8, "batch");
    let batch = kink_free_batch(&mlp, 5, &mut rng, 0.0);
    let loss = |tape: &mut Tape, bound: &minmax_measure::nets::BoundMlp| {
        let x = tape.input(batch.clone());
        let g = bound.input_gradient(tape, x).unwrap();
        let sq = tape.square(g);
        tape.mean(sq)
    };
    let ad = backward_grads(&mlp, &mut |tape, bound| loss(tape, bound));
    let fd = finite_difference_grads(
        &mut mlp,
        &mut |m| {
            let mut tape = Tape::new();
            let bound = m.bind_frozen(&mut tape);
            let l = loss(&mut tape, &bound);
            tape.value(l).item()
        },
        FD_STEP,
    );
    for (ga, gf) in ad.iter().zip(&fd) {
        for (&a, &f) in ga.iter().zip(gf) {
            assert!(close(a, f, 1e-3, 1e-6), "ad {a} vs fd {f}");
        }
    }
}
