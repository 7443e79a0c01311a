mod common;

use common::{check_op, op_cases, EPS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use racc::numerics::gradcheck::{numeric_gradient, relative_error};
use racc::numerics::{
    learning_rate, AdamWConfig, Graph, Optimizer, ParamSet, ScheduleState, Tensor, Var,
};
use racc::Result;

const PER_OP_TOL: f64 = 1e-6;

#[test]
fn every_op_matches_finite_differences() {
    for (i, (name, op, x, others, first)) in op_cases().into_iter().enumerate() {
        let err = check_op(op, x, others, first, 100 + i as u64);
        assert!(err < PER_OP_TOL, "{name}: relative error {err:e}");
    }
}

/// Three stacked affine+nonlinearity layers with a softmax/cross-entropy head.
fn three_layer(g: &mut Graph, x: Var, ws: &[Var; 3]) -> Result<Var> {
    let h1 = g.matmul(x, ws[0])?;
    let h1 = g.layer_norm(h1)?;
    let h1 = g.relu(h1)?;
    let h2 = g.matmul(h1, ws[1])?;
    let h2 = g.softmax(h2)?;
    let logits = g.matmul(h2, ws[2])?;
    g.cross_entropy(logits, &[Some(0), Some(2), None, Some(1)])
}

#[test]
fn random_three_layer_composition_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::randn(&[4, 5], 1.0, &mut rng);
    let ws = [
        Tensor::randn(&[5, 6], 0.5, &mut rng),
        Tensor::randn(&[6, 4], 0.5, &mut rng),
        Tensor::randn(&[4, 3], 0.5, &mut rng),
    ];
    for which in 0..3 {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let vars = [0, 1, 2].map(|i| {
            if i == which {
                g.param(ws[i].clone())
            } else {
                g.constant(ws[i].clone())
            }
        });
        let loss = three_layer(&mut g, xv, &vars).unwrap();
        let analytic = g.backward(loss).unwrap().wrt(vars[which]);
        let numeric = numeric_gradient(
            |t| {
                let mut g = Graph::new();
                let xv = g.constant(x.clone());
                let vars = [0, 1, 2].map(|i| g.constant(if i == which { t.clone() } else { ws[i].clone() }));
                let l = three_layer(&mut g, xv, &vars)?;
                Ok(g.value(l).item())
            },
            &ws[which],
            EPS,
        )
        .unwrap();
        let err = relative_error(&analytic, &numeric);
        assert!(err < PER_OP_TOL, "layer {which}: relative error {err:e}");
    }
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let ws = [
            Tensor::randn(&[5, 6], 0.5, &mut rng),
            Tensor::randn(&[6, 4], 0.5, &mut rng),
            Tensor::randn(&[4, 3], 0.5, &mut rng),
        ];
        let mut g = Graph::new();
        let xv = g.constant(x);
        let vars = ws.map(|w| g.param(w));
        let loss = three_layer(&mut g, xv, &vars).unwrap();
        let value = g.value(loss).item();
        let grads = g.backward(loss).unwrap();
        (value.to_bits(), vars.map(|v| grads.wrt(v).to_le_bytes()))
    };
    assert_eq!(run(), run());
}

#[test]
fn adamw_converges_on_convex_quadratic() {
    // f(w) = sum_i a_i (w_i - c_i)^2, minimizer w* = c
    let a = Tensor::from_vec(vec![1.0, 3.0, 0.5]);
    let c = Tensor::from_vec(vec![0.4, -0.2, 0.1]);
    let mut params = ParamSet::new();
    let w = params.add("w", Tensor::from_vec(vec![0.0, 0.0, 0.0]));
    let cfg = AdamWConfig {
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut opt = Optimizer::new(&params, cfg);
    let sched = ScheduleState::new(10, 200, 1e-2, 5e-2).unwrap();
    for step in 0..200 {
        let mut g = Graph::new();
        let b = params.bind(&mut g, true);
        let cv = g.constant(c.clone());
        let neg = g.scale(cv, -1.0).unwrap();
        let d = g.add(b[w], neg).unwrap();
        let sq = g.mul(d, d).unwrap();
        let av = g.constant(a.clone());
        let weighted = g.mul(sq, av).unwrap();
        let loss = g.sum(weighted).unwrap();
        let grads = g.backward(loss).unwrap();
        let gs: Vec<_> = b.vars().iter().map(|v| grads.get(*v).cloned()).collect();
        opt.step(&mut params, &gs, &sched.at(step)).unwrap();
    }
    let dist = params.get(w).max_abs_diff(&c);
    assert!(dist < 1e-2, "|w - w*| = {dist}");
}

proptest! {
    #[test]
    fn stop_gradient_is_identity_then_zero(depth in 1usize..6, vals in prop::collection::vec(-3.0f64..3.0, 1..8)) {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vals.clone()));
        let mut y = x;
        for i in 0..depth {
            y = g.scale(y, 1.0 + i as f64 * 0.1).unwrap();
            y = g.stop_gradient(y).unwrap();
        }
        let mut expected = vals.clone();
        for i in 0..depth {
            expected.iter_mut().for_each(|v| *v *= 1.0 + i as f64 * 0.1);
        }
        prop_assert_eq!(g.value(y).data(), &expected[..]);
        let l = g.sum(y).unwrap();
        let grads = g.backward(l).unwrap();
        prop_assert!(grads.get(x).is_none());
        prop_assert!(grads.wrt(x).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn schedule_stays_within_bounds(warmup in 1usize..50, extra in 1usize..500, step in 0usize..600) {
        let total = warmup + extra;
        let s = ScheduleState::new(warmup, total, 1e-5, 1e-4).unwrap();
        let lr = learning_rate(&s.at(step.min(total)));
        prop_assert!((0.0..=1e-4 + 1e-18).contains(&lr));
    }
}
