//! Minibatch objective and its Jacobian with respect to the relaxed codes.
//!
//! Inside a batch of `M` items every item acts once as a query against the
//! other `M - 1`. The objective `O_B` is the mean of the `M` per-query
//! mutual information values, and its Jacobian with respect to the `b x M`
//! relaxed code matrix `Phi` is computed two ways:
//!
//! - [`naive_jacobian`] applies the chain rule query by query, bin by bin
//!   and pair by pair. It is slow and serves as the reference.
//! - [`efficient_jacobian`] uses the matrix form
//!   `-(Phi / 2M) sum_l (A+_l B+_l + B+_l A+_l + A-_l B-_l + B-_l A-_l)`,
//!   where `A_l` is diagonal (per-query MI sensitivities of bin `l`, divided
//!   by the population size) and `B_l` holds the kernel subgradients of
//!   bin `l` for every in-population pair. Diagonal products are row and
//!   column scalings, so the whole thing costs `O(b M^2)`.

use ndarray::{Array2, ArrayView1, Axis};

use crate::embedding::RelaxedCodeMatrix;
use crate::error::{invalid, Result};
use crate::histogram::{
    bin_range, triangular_subgrad, triangular_weight, DistanceHistogramPair, BIN_DELTA,
};
use crate::mi::{mi_grad_wrt_histograms, mi_value_unchecked};

/// Relation between two batch items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Neighbor,
    NonNeighbor,
    /// The diagonal: an item is never part of its own populations.
    SelfPair,
}

/// Dense symmetric `M x M` neighbor relation of a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffinityMatrix {
    size: usize,
    entries: Vec<Relation>,
}

impl AffinityMatrix {
    /// Builds the matrix from a neighbor predicate. The predicate is only
    /// evaluated for `i < j` and mirrored, so the result is symmetric by
    /// construction.
    pub fn from_fn(size: usize, mut is_neighbor: impl FnMut(usize, usize) -> bool) -> Self {
        let mut entries = vec![Relation::SelfPair; size * size];
        for i in 0..size {
            for j in (i + 1)..size {
                let r = if is_neighbor(i, j) {
                    Relation::Neighbor
                } else {
                    Relation::NonNeighbor
                };
                entries[i * size + j] = r;
                entries[j * size + i] = r;
            }
        }
        Self { size, entries }
    }

    /// Items sharing a label are neighbors.
    pub fn from_labels<T: PartialEq>(labels: &[T]) -> Self {
        Self::from_fn(labels.len(), |i, j| labels[i] == labels[j])
    }

    /// Validates an explicit row-major relation table.
    pub fn from_entries(size: usize, entries: Vec<Relation>) -> Result<Self> {
        if entries.len() != size * size {
            return invalid(format!(
                "expected {} entries, got {}",
                size * size,
                entries.len()
            ));
        }
        for i in 0..size {
            for j in 0..size {
                let r = entries[i * size + j];
                if (i == j) != (r == Relation::SelfPair) {
                    return invalid(format!(
                        "SelfPair must appear exactly on the diagonal (at {i},{j})"
                    ));
                }
                if r != entries[j * size + i] {
                    return invalid(format!("affinity is not symmetric at ({i},{j})"));
                }
            }
        }
        Ok(Self { size, entries })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Relation {
        self.entries[i * self.size + j]
    }

    pub fn is_neighbor(&self, i: usize, j: usize) -> bool {
        self.get(i, j) == Relation::Neighbor
    }

    /// Population sizes `(N+_i, N-_i)` of query `i`.
    pub fn population(&self, i: usize) -> (usize, usize) {
        let row = &self.entries[i * self.size..(i + 1) * self.size];
        let plus = row.iter().filter(|&&r| r == Relation::Neighbor).count();
        let minus = row.iter().filter(|&&r| r == Relation::NonNeighbor).count();
        (plus, minus)
    }

    /// Relabels items so that new item `k` is old item `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.size);
        Self::from_fn(self.size, |i, j| self.is_neighbor(perm[i], perm[j]))
    }
}

/// Objective value and Jacobian of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    /// `dO_B / dPhi`, `b x M`.
    pub jacobian: Array2<f64>,
    pub objective: f64,
    pub per_query_mi: Vec<f64>,
}

fn check_batch(codes: &RelaxedCodeMatrix, affinity: &AffinityMatrix) -> Result<()> {
    let m = codes.batch_size();
    if m < 2 {
        return invalid(format!("a batch needs at least 2 items, got {m}"));
    }
    if codes.code_length() == 0 {
        return invalid("codes have zero length");
    }
    if affinity.size() != m {
        return invalid(format!(
            "affinity is {0}x{0} but batch has {m} items",
            affinity.size()
        ));
    }
    Ok(())
}

/// `(b - <phi_i, phi_j>) / 2` for every pair of batch columns.
pub fn pairwise_relaxed_distances(codes: &RelaxedCodeMatrix) -> Result<Array2<f64>> {
    let m = codes.batch_size();
    if m < 2 {
        return invalid(format!("a batch needs at least 2 items, got {m}"));
    }
    let b = codes.code_length() as f64;
    let phi = codes.values();
    let gram = phi.t().dot(phi);
    Ok(gram.mapv(|g| ((b - g) / 2.0).clamp(0.0, b)))
}

/// Soft histograms of neighbor and non-neighbor distances for every query.
pub fn batch_histograms(
    distances: &Array2<f64>,
    affinity: &AffinityMatrix,
    b: usize,
) -> Result<Vec<DistanceHistogramPair>> {
    let m = affinity.size();
    if distances.dim() != (m, m) {
        return invalid(format!(
            "distance matrix is {:?}, affinity is {m}x{m}",
            distances.dim()
        ));
    }
    (0..m)
        .map(|i| query_histograms(distances.row(i), affinity, i, b))
        .collect()
}

fn query_histograms(
    row: ArrayView1<'_, f64>,
    affinity: &AffinityMatrix,
    i: usize,
    b: usize,
) -> Result<DistanceHistogramPair> {
    let (n_plus, n_minus) = affinity.population(i);
    let mut p_plus = vec![0.0; b + 1];
    let mut p_minus = vec![0.0; b + 1];
    for (j, &d) in row.iter().enumerate() {
        let hist = match affinity.get(i, j) {
            Relation::Neighbor => &mut p_plus,
            Relation::NonNeighbor => &mut p_minus,
            Relation::SelfPair => continue,
        };
        if !(0.0..=b as f64).contains(&d) {
            return invalid(format!("distance {d} outside [0, {b}]"));
        }
        for l in bin_range(d, b, BIN_DELTA) {
            hist[l] += triangular_weight(d, l, BIN_DELTA);
        }
    }
    if n_plus > 0 {
        p_plus.iter_mut().for_each(|p| *p /= n_plus as f64);
    }
    if n_minus > 0 {
        p_minus.iter_mut().for_each(|p| *p /= n_minus as f64);
    }
    DistanceHistogramPair::new(p_plus, p_minus, n_plus, n_minus)
}

/// Mean per-query mutual information of the batch.
pub fn minibatch_objective(codes: &RelaxedCodeMatrix, affinity: &AffinityMatrix) -> Result<f64> {
    check_batch(codes, affinity)?;
    let dist = pairwise_relaxed_distances(codes)?;
    let hists = batch_histograms(&dist, affinity, codes.code_length())?;
    Ok(hists.iter().map(mi_value_unchecked).sum::<f64>() / hists.len() as f64)
}

/// Per-query quantities shared by both Jacobian routes.
struct QueryTerms {
    distances: Array2<f64>,
    per_query_mi: Vec<f64>,
    /// `dI_i / dp+_{i,l}` and `dI_i / dp-_{i,l}`, indexed `[i][l]`.
    grad_plus: Vec<Vec<f64>>,
    grad_minus: Vec<Vec<f64>>,
    n_plus: Vec<usize>,
    n_minus: Vec<usize>,
}

impl QueryTerms {
    fn compute(codes: &RelaxedCodeMatrix, affinity: &AffinityMatrix) -> Result<Self> {
        check_batch(codes, affinity)?;
        let distances = pairwise_relaxed_distances(codes)?;
        let hists = batch_histograms(&distances, affinity, codes.code_length())?;
        let m = hists.len();
        let mut terms = Self {
            distances,
            per_query_mi: Vec::with_capacity(m),
            grad_plus: Vec::with_capacity(m),
            grad_minus: Vec::with_capacity(m),
            n_plus: Vec::with_capacity(m),
            n_minus: Vec::with_capacity(m),
        };
        for h in &hists {
            let (gp, gm) = mi_grad_wrt_histograms(h);
            terms.per_query_mi.push(mi_value_unchecked(h));
            terms.grad_plus.push(gp);
            terms.grad_minus.push(gm);
            terms.n_plus.push(h.n_plus);
            terms.n_minus.push(h.n_minus);
        }
        Ok(terms)
    }

    fn objective(&self) -> f64 {
        self.per_query_mi.iter().sum::<f64>() / self.per_query_mi.len() as f64
    }

    /// `alpha_{l,i} = (dI_i / dp_{i,l}) / N_i` for one side.
    fn alpha(&self, side: Relation, l: usize, i: usize) -> f64 {
        let (grad, n) = match side {
            Relation::Neighbor => (&self.grad_plus, self.n_plus[i]),
            Relation::NonNeighbor => (&self.grad_minus, self.n_minus[i]),
            Relation::SelfPair => return 0.0,
        };
        if n == 0 {
            0.0
        } else {
            grad[i][l] / n as f64
        }
    }
}

/// Reference Jacobian: for every query `i`, bin `l` and item `j != i`,
/// accumulates `dI_i/dp_{i,l} * dp_{i,l}/dPhi`. The column of item `j`
/// receives `-beta phi_i / (2N)` and the query column receives
/// `-beta phi_j / (2N)`.
pub fn naive_jacobian(
    codes: &RelaxedCodeMatrix,
    affinity: &AffinityMatrix,
) -> Result<BatchGradients> {
    let terms = QueryTerms::compute(codes, affinity)?;
    let phi = codes.values();
    let (b, m) = phi.dim();
    let mut jac = Array2::<f64>::zeros((b, m));
    for i in 0..m {
        for l in 0..=b {
            for j in 0..m {
                let side = affinity.get(i, j);
                if side == Relation::SelfPair {
                    continue;
                }
                let beta = triangular_subgrad(terms.distances[[i, j]], l, BIN_DELTA);
                let coeff = -0.5 * terms.alpha(side, l, i) * beta;
                if coeff == 0.0 {
                    continue;
                }
                for k in 0..b {
                    jac[[k, j]] += coeff * phi[[k, i]];
                    jac[[k, i]] += coeff * phi[[k, j]];
                }
            }
        }
    }
    jac.mapv_inplace(|v| v / m as f64);
    Ok(BatchGradients {
        jacobian: jac,
        objective: terms.objective(),
        per_query_mi: terms.per_query_mi,
    })
}

/// Rows of the accumulator handled per tile. Keeps the subgradient rows,
/// distance rows and accumulator rows of a tile in cache across all bins.
const ROW_BLOCK: usize = 8;

/// The diagonal `A_l` and a block of rows of the subgradient matrices `B_l`
/// of one bin, for both the neighbor and non-neighbor sides. Allocated once
/// per batch shape and reused across bins and row blocks.
#[derive(Debug, Clone)]
pub struct BinScratch {
    pub alpha_plus: Vec<f64>,
    pub alpha_minus: Vec<f64>,
    /// Rows `first..first + rows` of `B_l`, restricted to neighbors.
    pub beta_plus: Array2<f64>,
    pub beta_minus: Array2<f64>,
    first: usize,
    rows: usize,
}

impl BinScratch {
    /// Scratch for up to `rows` rows of an `m`-item batch.
    pub fn new(m: usize, rows: usize) -> Self {
        Self {
            alpha_plus: vec![0.0; m],
            alpha_minus: vec![0.0; m],
            beta_plus: Array2::zeros((rows, m)),
            beta_minus: Array2::zeros((rows, m)),
            first: 0,
            rows: 0,
        }
    }

    fn fill(
        &mut self,
        l: usize,
        terms: &QueryTerms,
        affinity: &AffinityMatrix,
        rows: std::ops::Range<usize>,
    ) {
        let m = affinity.size();
        for i in 0..m {
            self.alpha_plus[i] = terms.alpha(Relation::Neighbor, l, i);
            self.alpha_minus[i] = terms.alpha(Relation::NonNeighbor, l, i);
        }
        self.first = rows.start;
        self.rows = rows.len();
        let span = rows.start * m..rows.end * m;
        let bp = &mut self.beta_plus.as_slice_mut().expect("standard layout")[..span.len()];
        let bm = &mut self.beta_minus.as_slice_mut().expect("standard layout")[..span.len()];
        let dist = &terms.distances.as_slice().expect("standard layout")[span.clone()];
        let rel = &affinity.entries[span];
        for idx in 0..dist.len() {
            let s = triangular_subgrad(dist[idx], l, BIN_DELTA);
            let (p, n) = match rel[idx] {
                Relation::Neighbor => (s, 0.0),
                Relation::NonNeighbor => (0.0, s),
                Relation::SelfPair => (0.0, 0.0),
            };
            bp[idx] = p;
            bm[idx] = n;
        }
    }

    /// `acc += A B + B A` for both sides, as row and column scalings, on
    /// the filled rows. `acc` holds exactly those rows.
    fn accumulate(&self, acc: &mut [f64]) {
        let m = self.alpha_plus.len();
        let bp = self.beta_plus.as_slice().expect("standard layout");
        let bm = self.beta_minus.as_slice().expect("standard layout");
        for r in 0..self.rows {
            let i = self.first + r;
            let (ap_i, am_i) = (self.alpha_plus[i], self.alpha_minus[i]);
            let row = r * m..(r + 1) * m;
            for (((a, &p), &n), (&ap_j, &am_j)) in acc[row.clone()]
                .iter_mut()
                .zip(&bp[row.clone()])
                .zip(&bm[row])
                .zip(self.alpha_plus.iter().zip(&self.alpha_minus))
            {
                *a += p * (ap_i + ap_j) + n * (am_i + am_j);
            }
        }
    }
}

/// Builds the full (all rows) bin scratch for bin `l` of a batch, exposed
/// for inspection.
pub fn bin_scratch(
    codes: &RelaxedCodeMatrix,
    affinity: &AffinityMatrix,
    l: usize,
) -> Result<BinScratch> {
    let terms = QueryTerms::compute(codes, affinity)?;
    if l > codes.code_length() {
        return invalid(format!("bin {l} out of range 0..={}", codes.code_length()));
    }
    let m = codes.batch_size();
    let mut scratch = BinScratch::new(m, m);
    scratch.fill(l, &terms, affinity, 0..m);
    Ok(scratch)
}

/// Sums `A_l B_l + B_l A_l` over all bins into one block of accumulator
/// rows starting at `first`.
fn accumulate_block(
    terms: &QueryTerms,
    affinity: &AffinityMatrix,
    b: usize,
    first: usize,
    acc: &mut [f64],
) {
    let m = affinity.size();
    let rows = acc.len() / m;
    let mut scratch = BinScratch::new(m, rows);
    for l in 0..=b {
        scratch.fill(l, terms, affinity, first..first + rows);
        scratch.accumulate(acc);
    }
}

fn finish(phi: &Array2<f64>, sum: &Array2<f64>, terms: QueryTerms) -> BatchGradients {
    let m = phi.ncols();
    let mut jac = phi.dot(sum);
    jac.mapv_inplace(|v| -v / (2.0 * m as f64));
    BatchGradients {
        jacobian: jac,
        objective: terms.objective(),
        per_query_mi: terms.per_query_mi,
    }
}

/// Jacobian in the `O(b M^2)` matrix form,
/// `-(Phi / 2M) sum_l (A+_l B+_l + B+_l A+_l + A-_l B-_l + B-_l A-_l)`.
/// The sum is built in tiles of rows so the working set stays in cache.
pub fn efficient_jacobian(
    codes: &RelaxedCodeMatrix,
    affinity: &AffinityMatrix,
) -> Result<BatchGradients> {
    let terms = QueryTerms::compute(codes, affinity)?;
    let phi = codes.values();
    let (b, m) = phi.dim();
    let mut sum = Array2::<f64>::zeros((m, m));
    let flat = sum.as_slice_mut().expect("standard layout");
    for (k, block) in flat.chunks_mut(ROW_BLOCK * m).enumerate() {
        accumulate_block(&terms, affinity, b, k * ROW_BLOCK, block);
    }
    Ok(finish(phi, &sum, terms))
}

/// [`efficient_jacobian`] with the row tiles spread over the rayon pool.
/// Every accumulator entry is summed by one worker in bin order, so the
/// result is bitwise identical to the sequential version.
pub fn efficient_jacobian_parallel(
    codes: &RelaxedCodeMatrix,
    affinity: &AffinityMatrix,
) -> Result<BatchGradients> {
    use rayon::prelude::*;

    let terms = QueryTerms::compute(codes, affinity)?;
    let phi = codes.values();
    let (b, m) = phi.dim();
    let mut sum = Array2::<f64>::zeros((m, m));
    let flat = sum.as_slice_mut().expect("standard layout");
    flat.par_chunks_mut(ROW_BLOCK * m)
        .enumerate()
        .for_each(|(k, block)| accumulate_block(&terms, affinity, b, k * ROW_BLOCK, block));
    Ok(finish(phi, &sum, terms))
}

/// Column `j` of the Jacobian viewed as the gradient for item `j`.
pub fn item_gradient(grads: &BatchGradients, j: usize) -> ArrayView1<'_, f64> {
    grads.jacobian.index_axis(Axis(1), j)
}
