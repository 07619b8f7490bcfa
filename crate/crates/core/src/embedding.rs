//! The hash mapping: a single linear layer followed by `sgn`, and its
//! sigmoid relaxation used during training.
//!
//! Codes take values in `{-1, +1}^b`. A relaxed code replaces `sgn(f)` with
//! `2 sigma(gamma f) - 1`, which lies strictly inside `(-1, 1)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default sigmoid steepness.
pub const DEFAULT_GAMMA: f64 = 1.0;

const MODEL_MAGIC: &[u8; 4] = b"MIH1";

// Largest f64 strictly below 1. Relaxed values are clamped to this so that
// saturated activations still satisfy the open-interval invariant.
const RELAX_BOUND: f64 = 1.0 - f64::EPSILON / 2.0;

/// Weights of the linear hash layer (`b` rows by `n` columns) and the
/// sigmoid steepness `gamma`.
///
/// There is no bias term. Append a constant feature to emulate one.
#[derive(Debug, Clone, PartialEq)]
pub struct HashModel {
    weights: Array2<f64>,
    gamma: f64,
}

impl HashModel {
    pub fn new(weights: Array2<f64>, gamma: f64) -> Result<Self> {
        let (b, n) = weights.dim();
        if b == 0 || n == 0 {
            return invalid(format!("weight matrix must be non-empty, got {b}x{n}"));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return invalid(format!("gamma must be positive and finite, got {gamma}"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return invalid("weights contain non-finite entries");
        }
        Ok(Self { weights, gamma })
    }

    /// Gaussian initialization with standard deviation `1/sqrt(n)`. This is
    /// also the LSH baseline: an untrained model is a random projection.
    pub fn random(input_dim: usize, code_length: usize, gamma: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || code_length == 0 {
            return invalid("input_dim and code_length must be positive");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt())
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        let weights =
            Array2::from_shape_simple_fn((code_length, input_dim), || normal.sample(&mut rng));
        Self::new(weights, gamma)
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn code_length(&self) -> usize {
        self.weights.nrows()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// Replaces the weights, keeping the shape.
    pub fn set_weights(&mut self, weights: Array2<f64>) -> Result<()> {
        if weights.dim() != self.weights.dim() {
            return invalid(format!(
                "weight shape mismatch: expected {:?}, got {:?}",
                self.weights.dim(),
                weights.dim()
            ));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite(
                "weights contain non-finite entries".into(),
            ));
        }
        self.weights = weights;
        Ok(())
    }

    /// Activations `f_i(x) = <w_i, x>` for one feature vector.
    pub fn forward_linear(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let x = ArrayView1::from(x);
        Ok(self.weights.dot(&x).to_vec())
    }

    /// Activations for a block of feature rows (`M x n`), returned as a
    /// `b x M` matrix with one column per row of `rows`.
    pub fn forward_batch(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.input_dim() {
            return invalid(format!(
                "feature dimension {} does not match model input dimension {}",
                rows.ncols(),
                self.input_dim()
            ));
        }
        Ok(self.weights.dot(&rows.t()))
    }

    /// Relaxed codes for a block of feature rows.
    pub fn relaxed_codes(&self, rows: ArrayView2<'_, f64>) -> Result<RelaxedCodeMatrix> {
        let mut act = self.forward_batch(rows)?;
        let gamma = self.gamma;
        act.mapv_inplace(|f| relax_scalar(f, gamma));
        Ok(RelaxedCodeMatrix(act))
    }

    /// Binary code of one feature vector.
    pub fn encode(&self, x: &[f64]) -> Result<BinaryCode> {
        Ok(binarize(&self.forward_linear(x)?))
    }

    /// Binary codes for every row of `rows`.
    pub fn encode_rows(&self, rows: ArrayView2<'_, f64>) -> Result<Vec<BinaryCode>> {
        let act = self.forward_batch(rows)?;
        Ok(act
            .axis_iter(Axis(1))
            .map(|col| BinaryCode::from_activations(col.iter().copied()))
            .collect())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return invalid(format!(
                "feature vector has length {}, model expects {}",
                x.len(),
                self.input_dim()
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return invalid("feature vector contains non-finite entries");
        }
        Ok(())
    }

    /// Writes the `MIH1` binary format: magic, `n` and `b` as u64, `gamma`
    /// as f64, then the `b*n` weights row-major as f64, all little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&(self.input_dim() as u64).to_le_bytes())?;
        w.write_all(&(self.code_length() as u64).to_le_bytes())?;
        w.write_all(&self.gamma.to_le_bytes())?;
        for v in self.weights.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R, path: &Path) -> Result<Self> {
        let parse_err = |offset: usize, message: &str| Error::Parse {
            path: path.to_path_buf(),
            location: format!("byte {offset}"),
            message: message.to_string(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| parse_err(0, "truncated header"))?;
        if &magic != MODEL_MAGIC {
            return Err(parse_err(0, "bad magic, expected MIH1"));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)
            .map_err(|_| parse_err(4, "truncated header"))?;
        let n = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)
            .map_err(|_| parse_err(12, "truncated header"))?;
        let b = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)
            .map_err(|_| parse_err(20, "truncated header"))?;
        let gamma = f64::from_le_bytes(word);
        let count = n
            .checked_mul(b)
            .filter(|&c| c > 0)
            .ok_or_else(|| parse_err(4, "invalid dimensions"))?;
        let mut data = Vec::with_capacity(count);
        for k in 0..count {
            r.read_exact(&mut word)
                .map_err(|_| parse_err(28 + 8 * k, "truncated weight block"))?;
            data.push(f64::from_le_bytes(word));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(parse_err(28 + 8 * count, "trailing bytes after weights"));
        }
        let weights = Array2::from_shape_vec((b, n), data).expect("length checked");
        Self::new(weights, gamma).map_err(|e| parse_err(0, &e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?), path)
    }

    /// Human-readable JSON export, for debugging only.
    pub fn to_json(&self) -> String {
        let dump = ModelJson {
            input_dim: self.input_dim(),
            code_length: self.code_length(),
            gamma: self.gamma,
            weights: self.weights.outer_iter().map(|r| r.to_vec()).collect(),
        };
        serde_json::to_string_pretty(&dump).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dump: ModelJson =
            serde_json::from_str(text).map_err(|e| Error::InvalidInput(e.to_string()))?;
        if dump.weights.len() != dump.code_length
            || dump.weights.iter().any(|r| r.len() != dump.input_dim)
        {
            return invalid("weight rows do not match declared dimensions");
        }
        let flat: Vec<f64> = dump.weights.into_iter().flatten().collect();
        let weights = Array2::from_shape_vec((dump.code_length, dump.input_dim), flat)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::new(weights, dump.gamma)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    input_dim: usize,
    code_length: usize,
    gamma: f64,
    weights: Vec<Vec<f64>>,
}

/// Codes of a minibatch after relaxation: `b` rows by `M` columns, one
/// column per item.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedCodeMatrix(Array2<f64>);

impl RelaxedCodeMatrix {
    /// Wraps a `b x M` matrix. Entries produced by [`relax`] are strictly
    /// inside `(-1, 1)`; the closed boundary is accepted so that exact `+-1`
    /// codes can be used as test vectors.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values
            .iter()
            .any(|v| !(v.is_finite() && (-1.0..=1.0).contains(v)))
        {
            return invalid("relaxed code entries must lie in [-1, 1]");
        }
        Ok(Self(values))
    }

    /// Builds a matrix from one code per item.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let m = columns.len();
        let b = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != b) {
            return invalid("code columns have different lengths");
        }
        Self::new(Array2::from_shape_fn((b, m), |(k, j)| columns[j][k]))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn code_length(&self) -> usize {
        self.0.nrows()
    }

    pub fn batch_size(&self) -> usize {
        self.0.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Packed code over `{-1, +1}`: bit `k` of the packed words is set when
/// entry `k` is `+1`. Bits past `len` are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryCode {
    words: Vec<u64>,
    len: usize,
}

impl BinaryCode {
    pub fn from_signs(signs: &[i8]) -> Result<Self> {
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return invalid("code entries must be -1 or +1");
        }
        Ok(Self::from_activations(signs.iter().map(|&s| s as f64)))
    }

    fn from_activations(values: impl IntoIterator<Item = f64>) -> Self {
        let mut words = Vec::new();
        let mut len = 0;
        for v in values {
            if len % 64 == 0 {
                words.push(0);
            }
            if v >= 0.0 {
                words[len / 64] |= 1u64 << (len % 64);
            }
            len += 1;
        }
        Self { words, len }
    }

    /// Wraps already-packed words. Padding bits past `len` must be zero.
    pub fn from_words(words: Vec<u64>, len: usize) -> Result<Self> {
        if words.len() != len.div_ceil(64) {
            return invalid(format!(
                "{} words cannot hold exactly {len} bits",
                words.len()
            ));
        }
        if !len.is_multiple_of(64) {
            if let Some(&last) = words.last() {
                if last >> (len % 64) != 0 {
                    return invalid("padding bits beyond code length must be zero");
                }
            }
        }
        Ok(Self { words, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, k: usize) -> i8 {
        assert!(
            k < self.len,
            "bit index {k} out of range for {}-bit code",
            self.len
        );
        if (self.words[k / 64] >> (k % 64)) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    pub fn to_signs(&self) -> Vec<i8> {
        (0..self.len).map(|k| self.get(k)).collect()
    }

    /// `<a, b>` over `{-1, +1}` entries, i.e. `b - 2 * hamming`.
    pub fn inner_product(&self, other: &Self) -> Result<i64> {
        let d = crate::histogram::hard_hamming(self, other)? as i64;
        Ok(self.len as i64 - 2 * d)
    }
}

fn relax_scalar(f: f64, gamma: f64) -> f64 {
    // 2 sigma(x) - 1 == tanh(x / 2), which is exactly odd.
    (0.5 * gamma * f).tanh().clamp(-RELAX_BOUND, RELAX_BOUND)
}

fn sigmoid_slope(f: f64, gamma: f64) -> f64 {
    // 2 gamma sigma(x) (1 - sigma(x)) = 2 gamma e^{-|x|} / (1 + e^{-|x|})^2
    let e = (-(gamma * f).abs()).exp();
    2.0 * gamma * e / ((1.0 + e) * (1.0 + e))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        invalid(format!("gamma must be positive and finite, got {gamma}"))
    }
}

/// Sigmoid relaxation `2 sigma(gamma f) - 1` of each activation.
pub fn relax(activations: &[f64], gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    if activations.iter().any(|f| !f.is_finite()) {
        return invalid("activations contain non-finite entries");
    }
    Ok(activations
        .iter()
        .map(|&f| relax_scalar(f, gamma))
        .collect())
}

/// Derivative of [`relax`] with respect to each activation (the Jacobian is
/// diagonal).
///
/// The value underflows to zero once `|gamma f|` exceeds roughly 745.
pub fn relax_jacobian_diag(activations: &[f64], gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    Ok(activations
        .iter()
        .map(|&f| sigmoid_slope(f, gamma))
        .collect())
}

pub(crate) fn relax_jacobian_matrix(activations: &Array2<f64>, gamma: f64) -> Array2<f64> {
    activations.mapv(|f| sigmoid_slope(f, gamma))
}

/// `sgn` of each activation, with `sgn(0) = +1`.
pub fn binarize(activations: &[f64]) -> BinaryCode {
    BinaryCode::from_activations(activations.iter().copied())
}
