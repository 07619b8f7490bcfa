//! Mutual information between the Hamming distance to a query and the
//! neighbor/non-neighbor membership of the retrieved item, in nats.

use crate::error::{invalid, Result};
use crate::histogram::DistanceHistogramPair;

/// Probability floor used inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

const NORMALIZATION_TOL: f64 = 1e-9;

/// Mutual information together with the entropies it was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MIValue {
    pub value: f64,
    /// Entropy of the marginal distance distribution.
    pub h_d: f64,
    /// Conditional entropy of the distance given membership.
    pub h_d_given_c: f64,
    /// Entropy of the membership variable.
    pub h_c: f64,
}

#[inline]
fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

fn entropy_unchecked(p: &[f64]) -> f64 {
    -p.iter().copied().map(plogp).sum::<f64>()
}

/// Shannon entropy in nats, with `0 ln 0 = 0`. The all-zero vector has
/// entropy 0.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return invalid("probability vector has negative or non-finite entries");
    }
    let sum: f64 = p.iter().sum();
    if sum != 0.0 && (sum - 1.0).abs() > NORMALIZATION_TOL {
        return invalid(format!("probability vector sums to {sum}"));
    }
    Ok(entropy_unchecked(p).max(0.0))
}

/// `I(D; C) = H(D) - [p+ H(D | C=1) + p- H(D | C=0)]`.
///
/// When either population is empty, `H(C) = 0` and the value is 0.
pub fn mutual_information(h: &DistanceHistogramPair) -> Result<MIValue> {
    let h_plus = entropy(&h.p_plus)?;
    let h_minus = entropy(&h.p_minus)?;
    let marginal = h.marginal();
    let h_d = entropy(&marginal)?;
    let h_c = entropy(&[h.prior_plus, h.prior_minus])?;
    if !h.is_informative() {
        return Ok(MIValue {
            value: 0.0,
            h_d,
            h_d_given_c: h_d,
            h_c,
        });
    }
    let h_d_given_c = h.prior_plus * h_plus + h.prior_minus * h_minus;
    Ok(MIValue {
        value: (h_d - h_d_given_c).max(0.0),
        h_d,
        h_d_given_c,
        h_c,
    })
}

/// MI value without validation, for histograms built internally.
pub(crate) fn mi_value_unchecked(h: &DistanceHistogramPair) -> f64 {
    if !h.is_informative() {
        return 0.0;
    }
    let h_d = entropy_unchecked(&h.marginal());
    let h_d_given_c =
        h.prior_plus * entropy_unchecked(&h.p_plus) + h.prior_minus * entropy_unchecked(&h.p_minus);
    (h_d - h_d_given_c).max(0.0)
}

/// Partial derivatives of [`mutual_information`] with respect to each bin of
/// `p_plus` and `p_minus`, treating the bins as free coordinates and the
/// priors as constants:
///
/// `dI/dp+_l = p+ (ln p+_l - ln p_l)` and likewise for `p-`.
///
/// Bin masses are floored at [`LOG_FLOOR`]; a bin where both the
/// conditional and the marginal mass fall below the floor gets gradient 0.
/// Uninformative pairs (an empty population) get zero gradients.
pub fn mi_grad_wrt_histograms(h: &DistanceHistogramPair) -> (Vec<f64>, Vec<f64>) {
    let bins = h.bins();
    if !h.is_informative() {
        return (vec![0.0; bins], vec![0.0; bins]);
    }
    let marginal = h.marginal();
    let side = |cond: &[f64], prior: f64| -> Vec<f64> {
        cond.iter()
            .zip(&marginal)
            .map(|(&c, &m)| {
                if c < LOG_FLOOR && m < LOG_FLOOR {
                    0.0
                } else {
                    prior * (c.max(LOG_FLOOR).ln() - m.max(LOG_FLOOR).ln())
                }
            })
            .collect()
    };
    (
        side(&h.p_plus, h.prior_plus),
        side(&h.p_minus, h.prior_minus),
    )
}
