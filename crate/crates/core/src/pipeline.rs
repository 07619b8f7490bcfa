//! End-to-end train and eval steps shared by the command line and tests.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Axis;

use crate::config::{norm_sidecar, DatasetManifest, ExperimentConfig};
use crate::dataset::{AffinityOracle, Dataset, NormStats, OracleMode};
use crate::embedding::HashModel;
use crate::error::{invalid, Result};
use crate::histogram::overlap;
use crate::retrieval::{
    evaluate, mean_histograms, mean_query_mi, query_histograms, BinaryCodeSet, EmptyQueryPolicy,
    RetrievalReport,
};
use crate::trainer::{train, TrainOutcome, TrainingSet, Validation};

/// Loads a dataset manifest and builds its oracle. The oracle always sees
/// the raw features, so ground truth does not depend on preprocessing.
pub fn load_with_oracle(
    manifest: &Path,
    mode: OracleMode,
    percentile: Option<f64>,
    seed: u64,
) -> Result<(Dataset, AffinityOracle)> {
    let dataset = DatasetManifest::load(manifest)?.load_dataset()?;
    let oracle = AffinityOracle::build(&dataset, mode, percentile, seed)?;
    Ok((dataset, oracle))
}

/// Trains per `cfg` and writes the model, the log and, when standardizing,
/// the normalization sidecar.
pub fn run_training(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let (mut dataset, oracle) = load_with_oracle(
        &cfg.dataset,
        cfg.oracle,
        cfg.percentile_for_oracle(),
        cfg.oracle_seed,
    )?;
    if cfg.standardize {
        dataset.features.standardize(&dataset.splits.train)?;
    }
    let train_cfg = cfg.train_config();
    let set = TrainingSet {
        features: dataset.features.data.view(),
        train_indices: &dataset.splits.train,
        oracle: &oracle,
        class_labels: dataset.single_labels(),
    };
    if cfg.validation && dataset.splits.test.is_empty() {
        return invalid("validation needs a non-empty test split");
    }
    let validation = Validation {
        queries: &dataset.splits.test,
        database: &dataset.splits.retrieval,
        options: cfg.map_options(),
    };
    let outcome = train(&set, &train_cfg, cfg.validation.then_some(&validation))?;

    outcome.model.save(&cfg.output_model)?;
    let mut log = BufWriter::new(File::create(&cfg.output_log)?);
    outcome.log.write_csv(&mut log)?;
    log.flush()?;
    let sidecar = norm_sidecar(&cfg.output_model);
    match &dataset.features.norm {
        Some(stats) => {
            let mut w = BufWriter::new(File::create(&sidecar)?);
            stats.write_csv(&mut w)?;
            w.flush()?;
        }
        None if sidecar.exists() => std::fs::remove_file(&sidecar)?,
        None => {}
    }
    Ok(outcome)
}

/// Normalization saved next to `model_path`, if any.
pub fn load_model_norm(model_path: &Path) -> Result<Option<NormStats>> {
    let sidecar = norm_sidecar(model_path);
    if sidecar.exists() {
        NormStats::read_csv(&sidecar).map(Some)
    } else {
        Ok(None)
    }
}

/// Metrics and distance distributions of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: RetrievalReport,
    /// Mean hard-histogram conditionals over the test queries.
    pub p_plus: Vec<f64>,
    pub p_minus: Vec<f64>,
    pub mean_mi: f64,
}

impl Evaluation {
    pub fn overlap(&self) -> f64 {
        overlap(&self.p_plus, &self.p_minus)
    }
}

/// Encodes the test split as queries and the retrieval split as database.
pub fn encode_splits(
    model: &HashModel,
    dataset: &Dataset,
) -> Result<(BinaryCodeSet, BinaryCodeSet)> {
    if model.input_dim() != dataset.features.dim() {
        return invalid(format!(
            "model expects {}-d features, dataset has {}-d",
            model.input_dim(),
            dataset.features.dim()
        ));
    }
    if dataset.splits.test.is_empty() || dataset.splits.retrieval.is_empty() {
        return invalid("evaluation needs non-empty test and retrieval splits");
    }
    let x = dataset.features.data.view();
    let queries = BinaryCodeSet::encode(model, x.select(Axis(0), &dataset.splits.test).view())?;
    let database =
        BinaryCodeSet::encode(model, x.select(Axis(0), &dataset.splits.retrieval).view())?;
    Ok((queries, database))
}

/// Test-vs-retrieval evaluation of precomputed codes.
pub fn evaluate_codes(
    queries: &BinaryCodeSet,
    database: &BinaryCodeSet,
    dataset: &Dataset,
    oracle: &AffinityOracle,
    ks: &[usize],
    policy: EmptyQueryPolicy,
) -> Result<Evaluation> {
    use crate::dataset::Neighborhood;
    let (test, retrieval) = (&dataset.splits.test, &dataset.splits.retrieval);
    let rel = |q: usize, d: usize| oracle.is_neighbor(test[q], retrieval[d]);
    let report = evaluate(queries, database, rel, ks, policy)?;
    let hists = query_histograms(queries, database, rel)?;
    let (p_plus, p_minus) = mean_histograms(&hists);
    Ok(Evaluation {
        report,
        p_plus,
        p_minus,
        mean_mi: mean_query_mi(&hists)?,
    })
}

/// Encodes with `model` and evaluates. `dataset` must already carry any
/// normalization the model was trained with.
pub fn evaluate_model(
    model: &HashModel,
    dataset: &Dataset,
    oracle: &AffinityOracle,
    ks: &[usize],
    policy: EmptyQueryPolicy,
) -> Result<Evaluation> {
    let (queries, database) = encode_splits(model, dataset)?;
    evaluate_codes(&queries, &database, dataset, oracle, ks, policy)
}
