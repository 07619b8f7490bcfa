//! Hamming distances and distance histograms.
//!
//! Histograms have `b + 1` bins centered at the integers `0..=b`. Relaxed
//! (real-valued) distances are spread over neighboring bins with a
//! triangular kernel of half-width `delta`; with `delta = 1` the weights of
//! any distance in `[0, b]` sum to one and integer distances land in a
//! single bin, so soft and hard binning agree on integer inputs.

use std::io::Write;

use crate::embedding::BinaryCode;
use crate::error::{invalid, Result};

/// Kernel half-width used throughout training: the spacing of the bins.
pub const BIN_DELTA: f64 = 1.0;

const NORMALIZATION_TOL: f64 = 1e-9;

/// Number of differing bits, computed with XOR and popcount on the packed
/// words.
pub fn hard_hamming(a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    if a.len() != b.len() {
        return invalid(format!("code lengths differ: {} vs {}", a.len(), b.len()));
    }
    Ok(hamming_words(a.words(), b.words()))
}

#[inline]
pub(crate) fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// `(b - <u, v>) / 2` for relaxed codes.
pub fn relaxed_hamming(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return invalid(format!("code lengths differ: {} vs {}", u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((u.len() as f64 - dot) / 2.0)
}

/// Triangular kernel `max(0, 1 - |d - l| / delta)`.
#[inline]
pub fn triangular_weight(d: f64, l: usize, delta: f64) -> f64 {
    (1.0 - (d - l as f64).abs() / delta).max(0.0)
}

/// Subgradient of [`triangular_weight`] with respect to `d`.
///
/// At the three kinks (`d = l` and `d = l +- delta`) this returns 0.
#[inline]
pub fn triangular_subgrad(d: f64, l: usize, delta: f64) -> f64 {
    let t = d - l as f64;
    if t > -delta && t < 0.0 {
        1.0 / delta
    } else if t > 0.0 && t < delta {
        -1.0 / delta
    } else {
        0.0
    }
}

/// Bins whose kernel support contains `d`.
#[inline]
pub(crate) fn bin_range(d: f64, b: usize, delta: f64) -> std::ops::RangeInclusive<usize> {
    let lo = (d - delta).ceil().max(0.0) as usize;
    let hi = ((d + delta).floor().max(0.0) as usize).min(b);
    lo..=hi
}

/// Normalized soft histogram of relaxed distances. An empty input yields the
/// all-zero histogram.
pub fn soft_histogram(distances: &[f64], b: usize, delta: f64) -> Result<Vec<f64>> {
    if !(delta.is_finite() && delta > 0.0) {
        return invalid(format!("delta must be positive, got {delta}"));
    }
    let mut hist = vec![0.0; b + 1];
    if distances.is_empty() {
        return Ok(hist);
    }
    let top = b as f64;
    for &d in distances {
        if !(0.0..=top).contains(&d) {
            return invalid(format!("distance {d} outside [0, {b}]"));
        }
        for l in bin_range(d, b, delta) {
            hist[l] += triangular_weight(d, l, delta);
        }
    }
    let count = distances.len() as f64;
    hist.iter_mut().for_each(|h| *h /= count);
    Ok(hist)
}

/// Normalized counts of integer distances. An empty input yields the
/// all-zero histogram.
pub fn hard_histogram(distances: &[u32], b: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; b + 1];
    for &d in distances {
        let d = d as usize;
        if d > b {
            return invalid(format!("distance {d} outside [0, {b}]"));
        }
        counts[d] += 1;
    }
    if distances.is_empty() {
        return Ok(vec![0.0; b + 1]);
    }
    let total = distances.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

/// Distance distributions of neighbors (`p_plus`) and non-neighbors
/// (`p_minus`) for one query, with the empirical class priors.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceHistogramPair {
    pub p_plus: Vec<f64>,
    pub p_minus: Vec<f64>,
    pub prior_plus: f64,
    pub prior_minus: f64,
    pub n_plus: usize,
    pub n_minus: usize,
}

impl DistanceHistogramPair {
    /// Validates the histograms and derives the priors from the population
    /// sizes.
    pub fn new(p_plus: Vec<f64>, p_minus: Vec<f64>, n_plus: usize, n_minus: usize) -> Result<Self> {
        if p_plus.len() != p_minus.len() || p_plus.is_empty() {
            return invalid(format!(
                "histogram lengths differ or are empty: {} vs {}",
                p_plus.len(),
                p_minus.len()
            ));
        }
        check_histogram(&p_plus, n_plus, "p_plus")?;
        check_histogram(&p_minus, n_minus, "p_minus")?;
        let total = n_plus + n_minus;
        let (prior_plus, prior_minus) = if total == 0 {
            (0.0, 0.0)
        } else {
            (n_plus as f64 / total as f64, n_minus as f64 / total as f64)
        };
        Ok(Self {
            p_plus,
            p_minus,
            prior_plus,
            prior_minus,
            n_plus,
            n_minus,
        })
    }

    /// Soft-binned histograms of relaxed neighbor / non-neighbor distances.
    pub fn from_relaxed(plus: &[f64], minus: &[f64], b: usize) -> Result<Self> {
        Self::new(
            soft_histogram(plus, b, BIN_DELTA)?,
            soft_histogram(minus, b, BIN_DELTA)?,
            plus.len(),
            minus.len(),
        )
    }

    /// Hard histograms of integer Hamming distances.
    pub fn from_hamming(plus: &[u32], minus: &[u32], b: usize) -> Result<Self> {
        Self::new(
            hard_histogram(plus, b)?,
            hard_histogram(minus, b)?,
            plus.len(),
            minus.len(),
        )
    }

    /// Number of bins, `b + 1`.
    pub fn bins(&self) -> usize {
        self.p_plus.len()
    }

    /// Both populations are non-empty.
    pub fn is_informative(&self) -> bool {
        self.n_plus > 0 && self.n_minus > 0
    }

    /// Marginal distance distribution `prior_plus * p_plus + prior_minus * p_minus`.
    pub fn marginal(&self) -> Vec<f64> {
        self.p_plus
            .iter()
            .zip(&self.p_minus)
            .map(|(p, m)| self.prior_plus * p + self.prior_minus * m)
            .collect()
    }

    /// `sum_l min(p_plus[l], p_minus[l])`, the overlap of the two conditionals.
    pub fn overlap(&self) -> f64 {
        overlap(&self.p_plus, &self.p_minus)
    }
}

pub fn overlap(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a.min(*b)).sum()
}

fn check_histogram(h: &[f64], count: usize, name: &str) -> Result<()> {
    if h.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return invalid(format!("{name} has negative or non-finite entries"));
    }
    let sum: f64 = h.iter().sum();
    if count == 0 {
        if sum != 0.0 {
            return invalid(format!("{name} must be all zero for an empty population"));
        }
    } else if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return invalid(format!("{name} sums to {sum}, expected 1"));
    }
    Ok(())
}

/// Writes a histogram pair as CSV with columns `bin,p_plus,p_minus`.
pub fn write_histogram_csv<W: Write>(mut w: W, p_plus: &[f64], p_minus: &[f64]) -> Result<()> {
    writeln!(w, "bin,p_plus,p_minus")?;
    for (l, (p, m)) in p_plus.iter().zip(p_minus).enumerate() {
        writeln!(w, "{l},{p},{m}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn code(signs: &[i8]) -> BinaryCode {
        BinaryCode::from_signs(signs).unwrap()
    }

    #[test]
    fn hard_hamming_examples() {
        let a = code(&[1, -1, 1, 1, -1, -1, 1, 1]);
        assert_eq!(hard_hamming(&a, &a).unwrap(), 0);
        let b = code(&[1, 1, 1, 1, -1, 1, 1, 1]);
        assert_eq!(hard_hamming(&a, &b).unwrap(), 2);
        assert_eq!(a.inner_product(&b).unwrap(), 4);
        assert_eq!((8 - a.inner_product(&b).unwrap()) / 2, 2);
        let neg: Vec<i8> = a.to_signs().iter().map(|s| -s).collect();
        assert_eq!(hard_hamming(&a, &code(&neg)).unwrap(), 8);
        assert!(hard_hamming(&a, &code(&[1])).is_err());
    }

    #[test]
    fn relaxed_hamming_examples() {
        let ones = [1.0; 5];
        assert_eq!(relaxed_hamming(&ones, &ones).unwrap(), 0.0);
        assert_eq!(relaxed_hamming(&ones, &[-1.0; 5]).unwrap(), 5.0);
        assert_eq!(relaxed_hamming(&[0.5; 4], &[0.5; 4]).unwrap(), 1.5);
        assert!(relaxed_hamming(&[0.5; 4], &[0.5; 3]).is_err());
    }

    #[test]
    fn triangular_examples() {
        assert_eq!(triangular_weight(3.0, 3, 1.0), 1.0);
        assert_abs_diff_eq!(triangular_weight(2.3, 2, 1.0), 0.7, epsilon = 1e-15);
        assert_eq!(triangular_weight(3.5, 2, 1.0), 0.0);

        assert_eq!(triangular_subgrad(1.5, 2, 1.0), 1.0);
        assert_eq!(triangular_subgrad(2.5, 2, 1.0), -1.0);
        assert_eq!(triangular_subgrad(2.0, 2, 1.0), 0.0);
        assert_eq!(triangular_subgrad(1.0, 2, 1.0), 0.0);
        assert_eq!(triangular_subgrad(3.0, 2, 1.0), 0.0);
        assert_eq!(triangular_subgrad(3.5, 2, 1.0), 0.0);
    }

    #[test]
    fn soft_histogram_examples() {
        assert_eq!(
            soft_histogram(&[2.0], 4, 1.0).unwrap(),
            vec![0.0, 0.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(
            soft_histogram(&[2.5], 4, 1.0).unwrap(),
            vec![0.0, 0.0, 0.5, 0.5, 0.0]
        );
        assert_eq!(
            soft_histogram(&[1.0, 3.0], 4, 1.0).unwrap(),
            vec![0.0, 0.5, 0.0, 0.5, 0.0]
        );
        assert_eq!(soft_histogram(&[], 4, 1.0).unwrap(), vec![0.0; 5]);
        assert!(soft_histogram(&[4.5], 4, 1.0).is_err());
        assert!(soft_histogram(&[-0.1], 4, 1.0).is_err());
    }

    #[test]
    fn hard_histogram_examples() {
        assert_eq!(
            hard_histogram(&[2, 2, 2], 4).unwrap(),
            vec![0.0, 0.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(
            hard_histogram(&[0, 4], 4).unwrap(),
            vec![0.5, 0.0, 0.0, 0.0, 0.5]
        );
        assert!(hard_histogram(&[5], 4).is_err());
    }

    #[test]
    fn partition_of_unity_on_grid() {
        let b = 8;
        for k in 0..=1000 {
            let d = b as f64 * k as f64 / 1000.0;
            let total: f64 = (0..=b).map(|l| triangular_weight(d, l, 1.0)).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pair_validation_and_priors() {
        let p = DistanceHistogramPair::new(vec![1.0, 0.0], vec![0.5, 0.5], 1, 3).unwrap();
        assert_eq!(p.prior_plus, 0.25);
        assert_eq!(p.prior_minus, 0.75);
        assert_eq!(p.marginal(), vec![0.625, 0.375]);
        assert_eq!(p.overlap(), 0.5);
        let empty = DistanceHistogramPair::new(vec![0.0, 0.0], vec![0.5, 0.5], 0, 2).unwrap();
        assert_eq!((empty.prior_plus, empty.prior_minus), (0.0, 1.0));
        assert!(!empty.is_informative());
        assert!(DistanceHistogramPair::new(vec![0.9, 0.0], vec![0.5, 0.5], 1, 1).is_err());
        assert!(DistanceHistogramPair::new(vec![0.5, 0.5], vec![0.5, 0.5], 0, 1).is_err());
        assert!(DistanceHistogramPair::new(vec![1.5, -0.5], vec![0.5, 0.5], 1, 1).is_err());
    }

    #[test]
    fn histogram_csv_layout() {
        let mut out = Vec::new();
        write_histogram_csv(&mut out, &[1.0, 0.0], &[0.25, 0.75]).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "bin,p_plus,p_minus\n0,1,0.25\n1,0,0.75\n"
        );
    }

    fn signs(len: usize) -> impl Strategy<Value = Vec<i8>> {
        prop::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], len)
    }

    proptest! {
        #[test]
        fn soft_equals_hard_at_integers(d in prop::collection::vec(0u32..=12, 1..40)) {
            let real: Vec<f64> = d.iter().map(|&x| x as f64).collect();
            prop_assert_eq!(soft_histogram(&real, 12, 1.0).unwrap(), hard_histogram(&d, 12).unwrap());
        }

        #[test]
        fn soft_histogram_is_normalized(d in prop::collection::vec(0.0f64..=16.0, 1..40)) {
            let h = soft_histogram(&d, 16, 1.0).unwrap();
            prop_assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn subgrad_matches_finite_difference(d in 0.0f64..10.0, l in 0usize..=10) {
            let h = 1e-5;
            let frac = (d - l as f64).abs() % 1.0;
            prop_assume!(frac > 10.0 * h && frac < 1.0 - 10.0 * h);
            let fd = (triangular_weight(d + h, l, 1.0) - triangular_weight(d - h, l, 1.0)) / (2.0 * h);
            let g = triangular_subgrad(d, l, 1.0);
            if g == 0.0 {
                prop_assert!(fd.abs() < 1e-9);
            } else {
                prop_assert!((fd - g).abs() / g.abs() < 1e-4);
            }
        }

        #[test]
        fn hamming_triangle_inequality((a, b, c) in (1usize..150).prop_flat_map(|n| (signs(n), signs(n), signs(n)))) {
            let (a, b, c) = (code(&a), code(&b), code(&c));
            let ab = hard_hamming(&a, &b).unwrap();
            let bc = hard_hamming(&b, &c).unwrap();
            let ac = hard_hamming(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc);
        }

        #[test]
        fn relaxed_equals_hard_on_sign_vectors((a, b) in (1usize..150).prop_flat_map(|n| (signs(n), signs(n)))) {
            let ra: Vec<f64> = a.iter().map(|&s| s as f64).collect();
            let rb: Vec<f64> = b.iter().map(|&s| s as f64).collect();
            let hard = hard_hamming(&code(&a), &code(&b)).unwrap();
            prop_assert_eq!(relaxed_hamming(&ra, &rb).unwrap(), hard as f64);
        }
    }
}
