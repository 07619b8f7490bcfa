#![allow(dead_code)]

use mihash::minibatch::{minibatch_objective, pairwise_relaxed_distances};
use mihash::{AffinityMatrix, RelaxedCodeMatrix};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entry passes when either the relative or the absolute error is small.
pub fn close(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    let err = (analytic - numeric).abs();
    err < abs || err / analytic.abs().max(numeric.abs()) < rel
}

/// Smallest distance from any off-diagonal relaxed distance to an integer.
pub fn kink_margin(codes: &RelaxedCodeMatrix) -> f64 {
    let d = pairwise_relaxed_distances(codes).unwrap();
    let m = d.nrows();
    let mut margin = f64::INFINITY;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                let f = d[[i, j]] - d[[i, j]].floor();
                margin = margin.min(f.min(1.0 - f));
            }
        }
    }
    margin
}

/// Random batch with relaxed codes in (-0.95, 0.95), labels from `classes`
/// classes, and every off-diagonal distance at least `margin` from a bin
/// center.
pub fn random_batch(
    rng: &mut ChaCha8Rng,
    m: usize,
    b: usize,
    classes: u32,
    margin: f64,
) -> (RelaxedCodeMatrix, AffinityMatrix) {
    loop {
        let values = Array2::from_shape_fn((b, m), |_| rng.random_range(-0.95..0.95));
        let codes = RelaxedCodeMatrix::new(values).unwrap();
        if kink_margin(&codes) >= margin {
            let labels: Vec<u32> = (0..m).map(|_| rng.random_range(0..classes)).collect();
            return (codes, AffinityMatrix::from_labels(&labels));
        }
    }
}

/// Central finite differences of the minibatch objective, one coordinate
/// at a time.
pub fn fd_jacobian(codes: &RelaxedCodeMatrix, aff: &AffinityMatrix, h: f64) -> Array2<f64> {
    let base = codes.values().clone();
    let mut out = Array2::zeros(base.dim());
    for ((k, i), slot) in out.indexed_iter_mut() {
        let mut up = base.clone();
        up[[k, i]] += h;
        let mut down = base.clone();
        down[[k, i]] -= h;
        let f_up = minibatch_objective(&RelaxedCodeMatrix::new(up).unwrap(), aff).unwrap();
        let f_down = minibatch_objective(&RelaxedCodeMatrix::new(down).unwrap(), aff).unwrap();
        *slot = (f_up - f_down) / (2.0 * h);
    }
    out
}

/// AP straight from the definition: rank by (distance, index), then average
/// precision@rank over the relevant positions, dividing by min(R, K).
pub fn brute_force_ap(distances: &[u32], relevant: &[bool], cutoff: Option<usize>) -> f64 {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by_key(|&i| (distances[i], i));
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return 0.0;
    }
    let depth = cutoff.unwrap_or(order.len()).min(order.len());
    let mut sum = 0.0;
    for r in 0..depth {
        if relevant[order[r]] {
            let hits_so_far = (0..=r).filter(|&s| relevant[order[s]]).count();
            sum += hits_so_far as f64 / (r + 1) as f64;
        }
    }
    sum / cutoff.map_or(total, |k| total.min(k)) as f64
}

/// `(sum_{d,c} p(d,c) ln p(d,c)/(p(d)p(c)))` on the joint table, with
/// conditionals taken as given (not renormalized).
pub fn joint_mi(p_plus: &[f64], p_minus: &[f64], prior_plus: f64) -> f64 {
    let prior_minus = 1.0 - prior_plus;
    let mut mi = 0.0;
    for l in 0..p_plus.len() {
        let jp = prior_plus * p_plus[l];
        let jm = prior_minus * p_minus[l];
        let pd = jp + jm;
        if jp > 0.0 {
            mi += jp * (jp / (pd * prior_plus)).ln();
        }
        if jm > 0.0 {
            mi += jm * (jm / (pd * prior_minus)).ln();
        }
    }
    mi
}

/// `H(p_D) - sum_c prior_c H(p_c)` with `p_D = prior+ p+ + prior- p-`,
/// treating every bin as a free coordinate.
pub fn entropy_form_mi(p_plus: &[f64], p_minus: &[f64], prior_plus: f64) -> f64 {
    let h = |p: &[f64]| -> f64 {
        -p.iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| v * v.ln())
            .sum::<f64>()
    };
    let prior_minus = 1.0 - prior_plus;
    let marginal: Vec<f64> = p_plus
        .iter()
        .zip(p_minus)
        .map(|(a, b)| prior_plus * a + prior_minus * b)
        .collect();
    h(&marginal) - prior_plus * h(p_plus) - prior_minus * h(p_minus)
}

pub fn random_simplex(rng: &mut ChaCha8Rng, bins: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..bins).map(|_| rng.random_range(floor..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}
