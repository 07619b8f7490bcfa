mod common;

use common::*;
use mihash::minibatch::{efficient_jacobian, minibatch_objective, naive_jacobian};
use mihash::trainer::backprop_to_weights;
use mihash::{AffinityMatrix, HashModel, RelaxedCodeMatrix};
use ndarray::{Array2, Axis};
use rand::Rng;

#[test]
fn naive_jacobian_matches_finite_differences() {
    let mut r = rng(11);
    for _ in 0..5 {
        let (codes, aff) = random_batch(&mut r, 8, 4, 2, 1e-3);
        let g = naive_jacobian(&codes, &aff).unwrap();
        let fd = fd_jacobian(&codes, &aff, FD_STEP);
        for (a, n) in g.jacobian.iter().zip(fd.iter()) {
            assert!(close(*a, *n, REL_TOL, ABS_FLOOR), "analytic {a} vs fd {n}");
        }
        assert!((g.objective - minibatch_objective(&codes, &aff).unwrap()).abs() < 1e-14);
    }
}

#[test]
fn efficient_equals_naive_on_many_batches() {
    let mut r = rng(12);
    for seed in 0..120 {
        let m = [2, 3, 5, 8, 16][seed % 5];
        let b = [1, 2, 4, 8][seed % 4];
        let (codes, aff) = random_batch(&mut r, m, b, 3, 0.0);
        let e = efficient_jacobian(&codes, &aff).unwrap();
        let n = naive_jacobian(&codes, &aff).unwrap();
        let worst = e
            .jacobian
            .iter()
            .zip(n.jacobian.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-10, "seed {seed}: {worst}");
        assert_eq!(e.per_query_mi.len(), m);
    }
}

#[test]
fn objective_is_bounded() {
    let mut r = rng(13);
    for _ in 0..200 {
        let m = r.random_range(2..12);
        let (codes, aff) = random_batch(&mut r, m, 6, 4, 0.0);
        let o = minibatch_objective(&codes, &aff).unwrap();
        assert!((0.0..=std::f64::consts::LN_2 + 1e-12).contains(&o), "{o}");
    }
}

#[test]
fn permuting_items_permutes_jacobian_columns() {
    let mut r = rng(14);
    for _ in 0..20 {
        let (codes, aff) = random_batch(&mut r, 9, 5, 3, 0.0);
        let mut perm: Vec<usize> = (0..9).collect();
        for i in (1..9).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        // column t of the permuted batch is column perm[t] of the original
        let pc = RelaxedCodeMatrix::new(codes.values().select(Axis(1), &perm)).unwrap();
        let pa = aff.permuted(&perm);
        let base = efficient_jacobian(&codes, &aff).unwrap();
        let moved = efficient_jacobian(&pc, &pa).unwrap();
        let expected = base.jacobian.select(Axis(1), &perm);
        for (x, y) in moved.jacobian.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((moved.objective - base.objective).abs() < 1e-12);
    }
}

fn objective_at(model: &HashModel, x: &Array2<f64>, aff: &AffinityMatrix) -> f64 {
    minibatch_objective(&model.relaxed_codes(x.view()).unwrap(), aff).unwrap()
}

fn weight_gradient(model: &HashModel, x: &Array2<f64>, aff: &AffinityMatrix) -> Array2<f64> {
    let g = efficient_jacobian(&model.relaxed_codes(x.view()).unwrap(), aff).unwrap();
    backprop_to_weights(model, x.view(), &g.jacobian).unwrap()
}

#[test]
fn weight_gradient_matches_finite_differences() {
    let mut r = rng(15);
    let (m, n, b) = (12, 6, 8);
    let x = Array2::from_shape_fn((m, n), |_| r.random_range(-1.5..1.5));
    let labels: Vec<u32> = (0..m).map(|i| (i % 3) as u32).collect();
    let aff = AffinityMatrix::from_labels(&labels);
    let model = HashModel::random(n, b, 1.0, 3).unwrap();
    let grad = weight_gradient(&model, &x, &aff);
    let h = 1e-6;
    for _ in 0..20 {
        let (k, c) = (r.random_range(0..b), r.random_range(0..n));
        let shifted = |delta: f64| {
            let mut w = model.weights().clone();
            w[[k, c]] += delta;
            HashModel::new(w, model.gamma()).unwrap()
        };
        let fd = (objective_at(&shifted(h), &x, &aff) - objective_at(&shifted(-h), &x, &aff))
            / (2.0 * h);
        assert!(
            close(grad[[k, c]], fd, 1e-3, ABS_FLOOR),
            "W[{k},{c}]: {} vs {fd}",
            grad[[k, c]]
        );
    }
}

#[test]
fn feature_scaling_follows_the_chain_rule() {
    // W (c x) = (c W) x, so dO/dW at (W, c x) equals c dO/dW at (c W, x).
    let mut r = rng(16);
    let (m, n, b) = (10, 5, 6);
    let x = Array2::from_shape_fn((m, n), |_| r.random_range(-1.0..1.0));
    let labels: Vec<u32> = (0..m).map(|i| (i % 2) as u32).collect();
    let aff = AffinityMatrix::from_labels(&labels);
    let model = HashModel::random(n, b, 1.0, 4).unwrap();
    let c = 2.0;
    let scaled_inputs = weight_gradient(&model, &(&x * c), &aff);
    let scaled_model = HashModel::new(model.weights() * c, model.gamma()).unwrap();
    let scaled_weights = weight_gradient(&scaled_model, &x, &aff) * c;
    for (a, e) in scaled_inputs.iter().zip(scaled_weights.iter()) {
        assert!((a - e).abs() < 1e-12 * (1.0 + e.abs()), "{a} vs {e}");
    }
    assert!(scaled_inputs.iter().any(|v| v.abs() > 1e-6));
}
