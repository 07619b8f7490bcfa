//! Hamming ranking over packed binary codes and the usual retrieval metrics.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::embedding::{BinaryCode, HashModel};
use crate::error::{invalid, Error, Result};
use crate::histogram::{hamming_words, DistanceHistogramPair};
use crate::mi::mutual_information;

const CODES_MAGIC: &[u8; 4] = b"MIC1";

/// Contiguous storage of `count` codes of `bits` bits, `ceil(bits / 64)`
/// little-endian words each. Padding bits are zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCodeSet {
    words: Vec<u64>,
    words_per_code: usize,
    bits: usize,
}

impl BinaryCodeSet {
    pub fn new(bits: usize) -> Result<Self> {
        if bits == 0 {
            return invalid("code length must be positive");
        }
        Ok(Self {
            words: Vec::new(),
            words_per_code: bits.div_ceil(64),
            bits,
        })
    }

    pub fn from_codes(codes: &[BinaryCode], bits: usize) -> Result<Self> {
        let mut set = Self::new(bits)?;
        set.words.reserve(codes.len() * set.words_per_code);
        for c in codes {
            set.push(c)?;
        }
        Ok(set)
    }

    /// Encodes every row of `features` with `model`.
    pub fn encode(model: &HashModel, features: ArrayView2<'_, f64>) -> Result<Self> {
        Self::from_codes(&model.encode_rows(features)?, model.code_length())
    }

    pub fn push(&mut self, code: &BinaryCode) -> Result<()> {
        if code.len() != self.bits {
            return invalid(format!(
                "code has {} bits, set holds {}-bit codes",
                code.len(),
                self.bits
            ));
        }
        self.words.extend_from_slice(code.words());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.words.len() / self.words_per_code
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    #[inline]
    pub fn code_words(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_code..(i + 1) * self.words_per_code]
    }

    pub fn get(&self, i: usize) -> BinaryCode {
        BinaryCode::from_words(self.code_words(i).to_vec(), self.bits).expect("canonical padding")
    }

    /// Hamming distance from `query` to every code, in index order.
    pub fn distances_to(&self, query: &[u64]) -> Vec<u32> {
        match self.words_per_code {
            1 => {
                let q = query[0];
                self.words.iter().map(|w| (w ^ q).count_ones()).collect()
            }
            _ => self
                .words
                .chunks_exact(self.words_per_code)
                .map(|c| hamming_words(c, query))
                .collect(),
        }
    }

    /// `MIC1` binary format: magic, `count` and `bits` as u64, then the
    /// packed words of each code, all little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CODES_MAGIC)?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.bits as u64).to_le_bytes())?;
        for word in &self.words {
            w.write_all(&word.to_le_bytes())?;
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
        if &magic != CODES_MAGIC {
            return Err(parse_err(0, "bad magic, expected MIC1"));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)
            .map_err(|_| parse_err(4, "truncated header"))?;
        let count = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)
            .map_err(|_| parse_err(12, "truncated header"))?;
        let bits = u64::from_le_bytes(word) as usize;
        let mut set = Self::new(bits).map_err(|_| parse_err(12, "code length must be positive"))?;
        let total = count
            .checked_mul(set.words_per_code)
            .ok_or_else(|| parse_err(4, "code count overflows"))?;
        let tail_bits = bits % 64;
        for k in 0..total {
            let offset = 20 + 8 * k;
            r.read_exact(&mut word)
                .map_err(|_| parse_err(offset, "truncated code block"))?;
            let w = u64::from_le_bytes(word);
            if tail_bits != 0
                && k % set.words_per_code == set.words_per_code - 1
                && w >> tail_bits != 0
            {
                return Err(parse_err(offset, "non-zero padding bits"));
            }
            set.words.push(w);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(parse_err(20 + 8 * total, "trailing bytes after codes"));
        }
        Ok(set)
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

    /// One line per code, entries `1` or `-1` separated by commas.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for i in 0..self.len() {
            let line: Vec<&str> = self
                .get(i)
                .to_signs()
                .iter()
                .map(|&s| if s > 0 { "1" } else { "-1" })
                .collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, path: &Path) -> Result<Self> {
        let mut set: Option<Self> = None;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                location: format!("line {}", lineno + 1),
                message,
            };
            let signs = line
                .split(',')
                .map(|t| match t.trim() {
                    "1" | "+1" => Ok(1i8),
                    "-1" => Ok(-1i8),
                    other => Err(err(format!("expected 1 or -1, got {other:?}"))),
                })
                .collect::<Result<Vec<i8>>>()?;
            let code = BinaryCode::from_signs(&signs).map_err(|e| err(e.to_string()))?;
            let set = match &mut set {
                Some(s) => s,
                None => set.insert(Self::new(code.len()).map_err(|e| err(e.to_string()))?),
            };
            set.push(&code).map_err(|e| err(e.to_string()))?;
        }
        set.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            location: "line 1".into(),
            message: "no codes".into(),
        })
    }
}

/// Database indices ordered by Hamming distance to a query, ties broken by
/// ascending index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub ordering: Vec<usize>,
    pub distances: Vec<u32>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.ordering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordering.is_empty()
    }

    pub fn relevance(&self, is_relevant: impl Fn(usize) -> bool) -> Vec<bool> {
        self.ordering.iter().map(|&i| is_relevant(i)).collect()
    }
}

/// Full ranking of `db` against `query`. Distances take only `b + 1`
/// values, so a counting sort keeps this linear and stable.
pub fn rank_database(query: &BinaryCode, db: &BinaryCodeSet) -> Result<RankedList> {
    if query.len() != db.bits() {
        return invalid(format!(
            "query has {} bits, database has {}",
            query.len(),
            db.bits()
        ));
    }
    Ok(rank_by_distance(&db.distances_to(query.words()), db.bits()))
}

fn rank_by_distance(distances: &[u32], bits: usize) -> RankedList {
    let mut starts = vec![0usize; bits + 2];
    for &d in distances {
        starts[d as usize + 1] += 1;
    }
    for k in 1..starts.len() {
        starts[k] += starts[k - 1];
    }
    let mut ordering = vec![0usize; distances.len()];
    for (i, &d) in distances.iter().enumerate() {
        let slot = &mut starts[d as usize];
        ordering[*slot] = i;
        *slot += 1;
    }
    let sorted = ordering.iter().map(|&i| distances[i]).collect();
    RankedList {
        ordering,
        distances: sorted,
    }
}

fn check_cutoff(cutoff: Option<usize>) -> Result<()> {
    if cutoff == Some(0) {
        return invalid("cutoff K must be positive");
    }
    Ok(())
}

/// Average precision of a ranked relevance list.
///
/// Without a cutoff this is the mean of precision@rank over all relevant
/// items. With cutoff `K` only hits in the top `K` count and the sum is
/// divided by `min(total relevant, K)`. A list with no relevant items has
/// AP 0.
pub fn average_precision(relevance: &[bool], cutoff: Option<usize>) -> Result<f64> {
    if relevance.is_empty() {
        return invalid("ranking is empty");
    }
    check_cutoff(cutoff)?;
    let total = relevance.iter().filter(|&&r| r).count();
    if total == 0 {
        return Ok(0.0);
    }
    let depth = cutoff.map_or(relevance.len(), |k| k.min(relevance.len()));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, _) in relevance[..depth].iter().enumerate().filter(|(_, &r)| r) {
        hits += 1;
        sum += hits as f64 / (rank + 1) as f64;
    }
    let denom = cutoff.map_or(total, |k| total.min(k));
    Ok(sum / denom as f64)
}

/// Fraction of relevant items among the top `k`.
pub fn precision_at_k(relevance: &[bool], k: usize) -> Result<f64> {
    if k == 0 || k > relevance.len() {
        return invalid(format!("K = {k} outside 1..={}", relevance.len()));
    }
    Ok(relevance[..k].iter().filter(|&&r| r).count() as f64 / k as f64)
}

/// What to do with queries that have no relevant database items.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum EmptyQueryPolicy {
    /// AP 0, included in the mean.
    #[default]
    CountAsZero,
    /// Left out of the mean.
    Skip,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MapOptions {
    pub cutoff: Option<usize>,
    pub empty_queries: EmptyQueryPolicy,
}

fn check_pair(queries: &BinaryCodeSet, db: &BinaryCodeSet) -> Result<()> {
    if queries.is_empty() {
        return invalid("query set is empty");
    }
    if db.is_empty() {
        return invalid("database is empty");
    }
    if queries.bits() != db.bits() {
        return invalid(format!(
            "queries have {} bits, database has {}",
            queries.bits(),
            db.bits()
        ));
    }
    Ok(())
}

/// Mean of per-query AP. Queries are ranked in parallel; the mean is
/// accumulated in query order, so the result does not depend on the pool.
pub fn mean_average_precision(
    queries: &BinaryCodeSet,
    db: &BinaryCodeSet,
    is_relevant: impl Fn(usize, usize) -> bool + Sync,
    options: &MapOptions,
) -> Result<f64> {
    check_pair(queries, db)?;
    check_cutoff(options.cutoff)?;
    let per_query: Vec<Option<f64>> = (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let ranked = rank_by_distance(&db.distances_to(queries.code_words(q)), db.bits());
            let rel = ranked.relevance(|d| is_relevant(q, d));
            if options.empty_queries == EmptyQueryPolicy::Skip && !rel.contains(&true) {
                return Ok(None);
            }
            average_precision(&rel, options.cutoff).map(Some)
        })
        .collect::<Result<_>>()?;
    let kept: Vec<f64> = per_query.into_iter().flatten().collect();
    if kept.is_empty() {
        return Ok(0.0);
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Metrics of one evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub map: f64,
    /// `(K, mAP@K)` for each requested K.
    pub map_at: Vec<(usize, f64)>,
    /// `(K, mean precision@K)`; K is clamped to the database size.
    pub precision_at: Vec<(usize, f64)>,
    pub queries: usize,
}

/// AP, AP@K per K and precision@K per K of one query.
type QueryMetrics = (f64, Vec<f64>, Vec<f64>);

/// mAP, mAP@K and precision@K for every K in `ks`, ranking each query once.
pub fn evaluate(
    queries: &BinaryCodeSet,
    db: &BinaryCodeSet,
    is_relevant: impl Fn(usize, usize) -> bool + Sync,
    ks: &[usize],
    empty_queries: EmptyQueryPolicy,
) -> Result<RetrievalReport> {
    check_pair(queries, db)?;
    if ks.contains(&0) {
        return invalid("cutoff K must be positive");
    }
    let per_query: Vec<Option<QueryMetrics>> = (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let ranked = rank_by_distance(&db.distances_to(queries.code_words(q)), db.bits());
            let rel = ranked.relevance(|d| is_relevant(q, d));
            if empty_queries == EmptyQueryPolicy::Skip && !rel.contains(&true) {
                return Ok(None);
            }
            let ap = average_precision(&rel, None)?;
            let ap_k = ks
                .iter()
                .map(|&k| average_precision(&rel, Some(k)))
                .collect::<Result<_>>()?;
            let p_k = ks
                .iter()
                .map(|&k| precision_at_k(&rel, k.min(rel.len())))
                .collect::<Result<_>>()?;
            Ok(Some((ap, ap_k, p_k)))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<_> = per_query.into_iter().flatten().collect();
    let n = kept.len().max(1) as f64;
    let map = kept.iter().map(|r| r.0).sum::<f64>() / n;
    let column = |pick: &dyn Fn(&QueryMetrics) -> f64| kept.iter().map(pick).sum::<f64>() / n;
    let map_at = ks
        .iter()
        .enumerate()
        .map(|(t, &k)| (k, column(&|r| r.1[t])))
        .collect();
    let precision_at = ks
        .iter()
        .enumerate()
        .map(|(t, &k)| (k.min(db.len()), column(&|r| r.2[t])))
        .collect();
    Ok(RetrievalReport {
        map,
        map_at,
        precision_at,
        queries: kept.len(),
    })
}

/// Hard Hamming-distance histograms of neighbors and non-neighbors for each
/// query against the whole database.
pub fn query_histograms(
    queries: &BinaryCodeSet,
    db: &BinaryCodeSet,
    is_relevant: impl Fn(usize, usize) -> bool + Sync,
) -> Result<Vec<DistanceHistogramPair>> {
    check_pair(queries, db)?;
    (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let dist = db.distances_to(queries.code_words(q));
            let (mut plus, mut minus) = (Vec::new(), Vec::new());
            for (d, &h) in dist.iter().enumerate() {
                if is_relevant(q, d) {
                    plus.push(h)
                } else {
                    minus.push(h)
                }
            }
            DistanceHistogramPair::from_hamming(&plus, &minus, db.bits())
        })
        .collect()
}

/// Mean over queries of the mutual information between Hamming distance and
/// relevance.
pub fn mean_query_mi(hists: &[DistanceHistogramPair]) -> Result<f64> {
    if hists.is_empty() {
        return invalid("no histograms");
    }
    let mut sum = 0.0;
    for h in hists {
        sum += mutual_information(h)?.value;
    }
    Ok(sum / hists.len() as f64)
}

/// Bin-wise mean of the conditional histograms over queries with a
/// non-empty population on the respective side.
pub fn mean_histograms(hists: &[DistanceHistogramPair]) -> (Vec<f64>, Vec<f64>) {
    let bins = hists.first().map_or(0, |h| h.bins());
    let mut plus = vec![0.0; bins];
    let mut minus = vec![0.0; bins];
    let (mut np, mut nm) = (0usize, 0usize);
    for h in hists {
        if h.n_plus > 0 {
            np += 1;
            plus.iter_mut().zip(&h.p_plus).for_each(|(a, b)| *a += b);
        }
        if h.n_minus > 0 {
            nm += 1;
            minus.iter_mut().zip(&h.p_minus).for_each(|(a, b)| *a += b);
        }
    }
    if np > 0 {
        plus.iter_mut().for_each(|v| *v /= np as f64);
    }
    if nm > 0 {
        minus.iter_mut().for_each(|v| *v /= nm as f64);
    }
    (plus, minus)
}

/// Codes from a seeded Gaussian random projection followed by `sgn`.
pub fn lsh_codes(features: ArrayView2<'_, f64>, bits: usize, seed: u64) -> Result<BinaryCodeSet> {
    if features.iter().any(|v| !v.is_finite()) {
        return invalid("features contain non-finite entries");
    }
    let model = HashModel::random(features.ncols(), bits, 1.0, seed)?;
    BinaryCodeSet::encode(&model, features)
}
