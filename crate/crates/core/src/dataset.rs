//! Feature matrices, labels, splits and neighborhood oracles.
//!
//! Feature files come in two formats:
//!
//! - CSV: one row per item, comma-separated reals, no header.
//! - `MIF1` packed binary: magic, `N` and `n` as little-endian u64, then
//!   `N*n` little-endian f32 values row-major.
//!
//! Features are held in memory as f64; the packed format stores f32, so a
//! read/write cycle of a packed file is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const FEATURES_MAGIC: &[u8; 4] = b"MIF1";

/// Cap on the number of pairs used to estimate the metric-oracle threshold.
pub const MAX_THRESHOLD_PAIRS: usize = 1_000_000;

/// Per-dimension standardization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Mean and standard deviation of the selected rows. Constant
    /// dimensions get a standard deviation of 1.
    pub fn fit(features: ArrayView2<'_, f64>, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return invalid("cannot fit normalization on zero rows");
        }
        let sel = features.select(Axis(0), rows);
        let mean = sel.mean_axis(Axis(0)).expect("non-empty");
        let var = sel.var_axis(Axis(0), 0.0);
        let std = var
            .iter()
            .map(|&v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Ok(Self {
            mean: mean.to_vec(),
            std,
        })
    }

    pub fn apply(&self, features: &mut Array2<f64>) -> Result<()> {
        if features.ncols() != self.mean.len() {
            return invalid(format!(
                "normalization has {} dimensions, features have {}",
                self.mean.len(),
                features.ncols()
            ));
        }
        for mut row in features.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
        Ok(())
    }

    /// Two-column CSV `mean,std`, one row per dimension.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "mean,std")?;
        for (m, s) in self.mean.iter().zip(&self.std) {
            writeln!(w, "{m},{s}")?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for rec in reader.deserialize::<(f64, f64)>() {
            let (m, s) = rec.map_err(|e| csv_error(path, e))?;
            mean.push(m);
            std.push(s);
        }
        Ok(Self { mean, std })
    }
}

/// `N x n` real feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
    pub norm: Option<NormStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
    Packed,
}

impl FeatureFormat {
    /// `.csv` files are CSV, anything else is the packed format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Packed,
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let location = e.position().map_or_else(
        || "unknown position".to_string(),
        |p| format!("line {}", p.line()),
    );
    Error::Parse {
        path: path.to_path_buf(),
        location,
        message: e.to_string(),
    }
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Self {
        Self { data, norm: None }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn load(path: &Path, format: FeatureFormat) -> Result<Self> {
        match format {
            FeatureFormat::Csv => Self::read_csv(BufReader::new(File::open(path)?), path),
            FeatureFormat::Packed => Self::read_packed(BufReader::new(File::open(path)?), path),
        }
    }

    pub fn save(&self, path: &Path, format: FeatureFormat) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        match format {
            FeatureFormat::Csv => self.write_csv(&mut w)?,
            FeatureFormat::Packed => self.write_packed(&mut w)?,
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(r);
        let mut values = Vec::new();
        let mut width = None;
        let mut rows = 0;
        for rec in reader.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map_or(rows + 1, |p| p.line() as usize);
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                location: format!("line {line}"),
                message,
            };
            let expected = *width.get_or_insert(rec.len());
            if rec.len() != expected {
                return Err(err(format!(
                    "row {line} has {} fields, expected {expected}",
                    rec.len()
                )));
            }
            for field in rec.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("row {line}: cannot parse {field:?} as a number")))?;
                if !v.is_finite() {
                    return Err(err(format!("row {line}: non-finite value")));
                }
                values.push(v);
            }
            rows += 1;
        }
        let width = width.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            location: "line 1".into(),
            message: "no rows".into(),
        })?;
        Ok(Self::new(
            Array2::from_shape_vec((rows, width), values).expect("rows checked"),
        ))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for row in self.data.rows() {
            let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn read_packed<R: Read>(mut r: R, path: &Path) -> Result<Self> {
        let err = |offset: usize, message: &str| Error::Parse {
            path: path.to_path_buf(),
            location: format!("byte {offset}"),
            message: message.to_string(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| err(0, "truncated header"))?;
        if &magic != FEATURES_MAGIC {
            return Err(err(0, "bad magic, expected MIF1"));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)
            .map_err(|_| err(4, "truncated header"))?;
        let rows = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)
            .map_err(|_| err(12, "truncated header"))?;
        let cols = u64::from_le_bytes(word) as usize;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| err(4, "dimensions overflow"))?;
        if cols == 0 {
            return Err(err(12, "feature dimension must be positive"));
        }
        let mut values = Vec::with_capacity(count);
        let mut buf = [0u8; 4];
        for k in 0..count {
            r.read_exact(&mut buf)
                .map_err(|_| err(20 + 4 * k, "truncated feature block"))?;
            let v = f32::from_le_bytes(buf);
            if !v.is_finite() {
                return Err(err(20 + 4 * k, "non-finite value"));
            }
            values.push(v as f64);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(err(20 + 4 * count, "trailing bytes after features"));
        }
        Ok(Self::new(
            Array2::from_shape_vec((rows, cols), values).expect("length checked"),
        ))
    }

    /// Writes `MIF1`. Values are narrowed to f32.
    pub fn write_packed<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FEATURES_MAGIC)?;
        w.write_all(&(self.rows() as u64).to_le_bytes())?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        for &v in self.data.iter() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    /// Fits standardization on `rows` and applies it to every row.
    pub fn standardize(&mut self, rows: &[usize]) -> Result<()> {
        let stats = NormStats::fit(self.data.view(), rows)?;
        stats.apply(&mut self.data)?;
        self.norm = Some(stats);
        Ok(())
    }
}

/// Set of concept indices, stored as a bitset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct LabelSet {
    words: Vec<u64>,
}

impl LabelSet {
    pub fn from_labels(labels: &[u32]) -> Self {
        let mut set = Self::default();
        for &l in labels {
            set.insert(l);
        }
        set
    }

    pub fn insert(&mut self, label: u32) {
        let w = label as usize / 64;
        if self.words.len() <= w {
            self.words.resize(w + 1, 0);
        }
        self.words[w] |= 1u64 << (label % 64);
    }

    pub fn contains(&self, label: u32) -> bool {
        self.words
            .get(label as usize / 64)
            .is_some_and(|w| (w >> (label % 64)) & 1 == 1)
    }

    pub fn shares_any(&self, other: &Self) -> bool {
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }

    pub fn labels(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for (w, &word) in self.words.iter().enumerate() {
            for bit in 0..64 {
                if (word >> bit) & 1 == 1 {
                    out.push((w * 64 + bit) as u32);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Single(Vec<u32>),
    Multi(Vec<LabelSet>),
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    #[default]
    Single,
    Multi,
}

impl Labels {
    /// Number of labeled items; `None` for an unlabeled dataset.
    pub fn count(&self) -> Option<usize> {
        match self {
            Labels::Single(v) => Some(v.len()),
            Labels::Multi(v) => Some(v.len()),
            Labels::None => None,
        }
    }

    /// One line per item, labels separated by commas. A multi-label line may
    /// be empty.
    pub fn read(path: &Path, kind: LabelKind) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut sets = Vec::new();
        for (k, line) in reader.lines().enumerate() {
            let line = line?;
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                location: format!("line {}", k + 1),
                message,
            };
            let labels = line
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<u32>()
                        .map_err(|_| err(format!("bad label {t:?}")))
                })
                .collect::<Result<Vec<u32>>>()?;
            if kind == LabelKind::Single && labels.len() != 1 {
                return Err(err(format!(
                    "expected exactly one label, found {}",
                    labels.len()
                )));
            }
            sets.push(labels);
        }
        Ok(match kind {
            LabelKind::Single => Labels::Single(sets.into_iter().map(|s| s[0]).collect()),
            LabelKind::Multi => {
                Labels::Multi(sets.iter().map(|s| LabelSet::from_labels(s)).collect())
            }
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        match self {
            Labels::Single(v) => {
                for l in v {
                    writeln!(w, "{l}")?;
                }
            }
            Labels::Multi(v) => {
                for s in v {
                    let parts: Vec<String> = s.labels().iter().map(u32::to_string).collect();
                    writeln!(w, "{}", parts.join(","))?;
                }
            }
            Labels::None => {}
        }
        Ok(())
    }
}

/// Index lists of the train, retrieval (database) and test (query) splits.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub retrieval: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Every item in train and retrieval, no test split.
    pub fn all_train(n: usize) -> Self {
        Self {
            train: (0..n).collect(),
            retrieval: (0..n).collect(),
            test: Vec::new(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for (name, idx) in [
            ("train", &self.train),
            ("retrieval", &self.retrieval),
            ("test", &self.test),
        ] {
            if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
                return invalid(format!(
                    "{name} split index {bad} out of range for {n} items"
                ));
            }
        }
        let mut in_retrieval = vec![false; n];
        for &i in &self.retrieval {
            in_retrieval[i] = true;
        }
        if let Some(&i) = self.test.iter().find(|&&i| in_retrieval[i]) {
            return invalid(format!("item {i} is in both the test and retrieval splits"));
        }
        Ok(())
    }

    /// CSV with header `index,split`; an item may appear under several
    /// splits.
    pub fn read(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            index: usize,
            split: String,
        }
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut splits = Self::default();
        for (k, rec) in reader.deserialize::<Row>().enumerate() {
            let row = rec.map_err(|e| csv_error(path, e))?;
            match row.split.as_str() {
                "train" => splits.train.push(row.index),
                "retrieval" => splits.retrieval.push(row.index),
                "test" => splits.test.push(row.index),
                other => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        location: format!("line {}", k + 2),
                        message: format!("unknown split {other:?}"),
                    })
                }
            }
        }
        Ok(splits)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,split")?;
        for (name, idx) in [
            ("train", &self.train),
            ("retrieval", &self.retrieval),
            ("test", &self.test),
        ] {
            for i in idx {
                writeln!(w, "{i},{name}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: FeatureMatrix,
    pub labels: Labels,
    pub splits: Splits,
}

impl Dataset {
    pub fn new(features: FeatureMatrix, labels: Labels, splits: Splits) -> Result<Self> {
        if let Some(n) = labels.count() {
            if n != features.rows() {
                return invalid(format!("{n} labels for {} feature rows", features.rows()));
            }
        }
        splits.validate(features.rows())?;
        Ok(Self {
            features,
            labels,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn single_labels(&self) -> Option<&[u32]> {
        match &self.labels {
            Labels::Single(v) => Some(v),
            _ => None,
        }
    }

    /// Writes `features.mif`, `labels.csv`, `splits.csv` and a
    /// `dataset.toml` manifest into `dir`; returns the manifest path.
    pub fn save_dir(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        self.features
            .save(&dir.join("features.mif"), FeatureFormat::Packed)?;
        let mut manifest = String::from("features = \"features.mif\"\n");
        let kind = match &self.labels {
            Labels::Single(_) => Some("single"),
            Labels::Multi(_) => Some("multi"),
            Labels::None => None,
        };
        if let Some(kind) = kind {
            let mut w = BufWriter::new(File::create(dir.join("labels.csv"))?);
            self.labels.write(&mut w)?;
            w.flush()?;
            manifest.push_str(&format!(
                "labels = \"labels.csv\"\nlabel_kind = \"{kind}\"\n"
            ));
        }
        let mut w = BufWriter::new(File::create(dir.join("splits.csv"))?);
        self.splits.write(&mut w)?;
        w.flush()?;
        manifest.push_str("splits = \"splits.csv\"\n");
        let path = dir.join("dataset.toml");
        std::fs::write(&path, manifest)?;
        Ok(path)
    }
}

/// Symmetric neighbor relation over dataset indices.
pub trait Neighborhood: Sync {
    fn is_neighbor(&self, i: usize, j: usize) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// Same class label.
    #[default]
    SingleLabel,
    /// At least one shared label.
    MultiLabel,
    /// Euclidean distance at or below a percentile of training-pair
    /// distances.
    MetricThreshold,
}

impl std::str::FromStr for OracleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_label" => Ok(Self::SingleLabel),
            "multi_label" => Ok(Self::MultiLabel),
            "metric_threshold" => Ok(Self::MetricThreshold),
            other => Err(Error::InvalidConfig(format!(
                "unknown oracle mode {other:?} (expected single_label, multi_label or metric_threshold)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
enum OracleData {
    Single(Vec<u32>),
    Multi(Vec<LabelSet>),
    Metric {
        features: Array2<f64>,
        threshold_sq: f64,
    },
}

/// Neighbor oracle built from a dataset. Self pairs are never neighbors.
#[derive(Debug, Clone)]
pub struct AffinityOracle {
    pub mode: OracleMode,
    /// Metric mode only.
    pub threshold_distance: Option<f64>,
    pub percentile: Option<f64>,
    data: OracleData,
}

impl Neighborhood for AffinityOracle {
    fn is_neighbor(&self, i: usize, j: usize) -> bool {
        if i == j {
            return false;
        }
        match &self.data {
            OracleData::Single(l) => l[i] == l[j],
            OracleData::Multi(s) => s[i].shares_any(&s[j]),
            OracleData::Metric {
                features,
                threshold_sq,
            } => {
                squared_distance(
                    features.row(i).as_slice().unwrap(),
                    features.row(j).as_slice().unwrap(),
                ) <= *threshold_sq
            }
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl AffinityOracle {
    /// Builds the oracle for `mode`. Metric mode measures distances on the
    /// training split; `percentile` must be in (0, 100) and pairs are
    /// subsampled (seeded) beyond [`MAX_THRESHOLD_PAIRS`].
    pub fn build(
        dataset: &Dataset,
        mode: OracleMode,
        percentile: Option<f64>,
        seed: u64,
    ) -> Result<Self> {
        Self::build_with_cap(dataset, mode, percentile, seed, MAX_THRESHOLD_PAIRS)
    }

    pub fn build_with_cap(
        dataset: &Dataset,
        mode: OracleMode,
        percentile: Option<f64>,
        seed: u64,
        max_pairs: usize,
    ) -> Result<Self> {
        let missing =
            |what: &str| Error::InvalidConfig(format!("oracle mode {mode:?} needs {what}"));
        let (data, threshold, pct) = match mode {
            OracleMode::SingleLabel => match &dataset.labels {
                Labels::Single(l) => (OracleData::Single(l.clone()), None, None),
                _ => return Err(missing("single labels")),
            },
            OracleMode::MultiLabel => match &dataset.labels {
                Labels::Multi(s) => (OracleData::Multi(s.clone()), None, None),
                Labels::Single(l) => (
                    OracleData::Multi(l.iter().map(|&x| LabelSet::from_labels(&[x])).collect()),
                    None,
                    None,
                ),
                Labels::None => return Err(missing("labels")),
            },
            OracleMode::MetricThreshold => {
                let p = percentile.ok_or_else(|| missing("a percentile"))?;
                if !(p > 0.0 && p < 100.0) {
                    return Err(Error::InvalidConfig(format!(
                        "percentile must be in (0, 100), got {p}"
                    )));
                }
                let t = metric_threshold(
                    dataset.features.data.view(),
                    &dataset.splits.train,
                    p,
                    seed,
                    max_pairs,
                )?;
                (
                    OracleData::Metric {
                        features: dataset.features.data.clone(),
                        threshold_sq: t * t,
                    },
                    Some(t),
                    Some(p),
                )
            }
        };
        Ok(Self {
            mode,
            threshold_distance: threshold,
            percentile: pct,
            data,
        })
    }
}

/// Nearest-rank percentile of pairwise Euclidean distances among `rows`.
pub fn metric_threshold(
    features: ArrayView2<'_, f64>,
    rows: &[usize],
    percentile: f64,
    seed: u64,
    max_pairs: usize,
) -> Result<f64> {
    let n = rows.len();
    if n < 2 {
        return invalid("metric threshold needs at least two training items");
    }
    let total = n * (n - 1) / 2;
    let dist = |a: usize, b: usize| {
        let (ra, rb) = (features.row(rows[a]), features.row(rows[b]));
        ra.iter()
            .zip(rb.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut d: Vec<f64> = if total <= max_pairs {
        (0..n)
            .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
            .map(|(a, b)| dist(a, b))
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..max_pairs)
            .map(|_| {
                let a = rng.random_range(0..n);
                let mut b = rng.random_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                dist(a, b)
            })
            .collect()
    };
    d.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * d.len() as f64).ceil() as usize;
    Ok(d[rank.clamp(1, d.len()) - 1])
}

/// Parameters of the Gaussian-cluster generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Radius of the sphere the class centers are drawn on; noise has unit
    /// variance per dimension.
    pub separation: f64,
    pub seed: u64,
    /// Items per class moved to the test split.
    pub test_per_class: usize,
}

/// Isotropic Gaussian clusters around random centers on a sphere of radius
/// `separation`. Labels are the cluster index. The first `test_per_class`
/// items of each class form the test split; the rest are both the training
/// and the retrieval split.
pub fn synth_dataset(config: &SynthConfig) -> Result<Dataset> {
    if !(config.separation.is_finite() && config.separation >= 0.0) {
        return invalid(format!(
            "separation must be non-negative, got {}",
            config.separation
        ));
    }
    if config.classes == 0 || config.per_class == 0 || config.dim == 0 {
        return invalid("classes, per_class and dim must be positive");
    }
    if config.test_per_class > config.per_class {
        return invalid("test_per_class exceeds per_class");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centers: Vec<Vec<f64>> = (0..config.classes)
        .map(|_| {
            let v: Vec<f64> = (0..config.dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = v
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            v.iter().map(|x| x / norm * config.separation).collect()
        })
        .collect();
    let n = config.classes * config.per_class;
    let mut data = Array2::<f64>::zeros((n, config.dim));
    let mut labels = Vec::with_capacity(n);
    let mut splits = Splits::default();
    for (c, center) in centers.iter().enumerate() {
        for k in 0..config.per_class {
            let row = c * config.per_class + k;
            for (d, x) in data.row_mut(row).iter_mut().enumerate() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                *x = center[d] + noise;
            }
            labels.push(c as u32);
            if k < config.test_per_class {
                splits.test.push(row);
            } else {
                splits.train.push(row);
                splits.retrieval.push(row);
            }
        }
    }
    // Store f32-exact values so the packed format round-trips.
    data.mapv_inplace(|v| v as f32 as f64);
    Dataset::new(FeatureMatrix::new(data), Labels::Single(labels), splits)
}

/// Shuffled copy of `indices`, seeded.
pub fn shuffled(indices: &[usize], seed: u64) -> Vec<usize> {
    let mut v = indices.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}
