//! `mihash` command line: synthesize data, train, evaluate, export codes and
//! query a code database.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mihash::config::ExperimentConfig;
use mihash::dataset::{synth_dataset, FeatureFormat, SynthConfig};
use mihash::histogram::write_histogram_csv;
use mihash::pipeline::{
    encode_splits, evaluate_codes, load_model_norm, load_with_oracle, run_training, Evaluation,
};
use mihash::report::{histogram_svg, write_report_csv};
use mihash::retrieval::{lsh_codes, rank_database, EmptyQueryPolicy};
use mihash::{BinaryCodeSet, Dataset, FeatureMatrix, HashModel, OracleMode};
use ndarray::Axis;

#[derive(Parser)]
#[command(
    name = "mihash",
    version,
    about = "Binary hashing by mutual information maximization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a Gaussian-cluster dataset (features, labels, splits, manifest).
    Synth(SynthArgs),
    /// Train a hash model from an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a model (or an LSH baseline) on a dataset's test split.
    Eval(EvalArgs),
    /// Write mean neighbor/non-neighbor distance distributions as CSV + SVG.
    PlotDists {
        #[command(flatten)]
        source: EvalSource,
        /// Output prefix; writes `<prefix>.csv` and `<prefix>.svg`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a feature file into packed binary codes.
    ExportCodes {
        #[arg(long)]
        model: PathBuf,
        /// Feature file (`.csv` or MIF1).
        #[arg(long)]
        features: PathBuf,
        /// Packed MIC1 output.
        #[arg(long)]
        out: PathBuf,
        /// Also write codes as CSV rows of 1/-1.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rank a code database for each query and print the top k.
    Query {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        db_codes: PathBuf,
        /// Query feature file (`.csv` or MIF1).
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 5.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Items per class placed in the test split.
    #[arg(long, default_value_t = 10)]
    test_per_class: usize,
}

#[derive(Args)]
struct EvalSource {
    /// Trained model; a `<model>.norm.csv` sidecar is applied if present.
    #[arg(
        long,
        conflicts_with = "lsh_bits",
        required_unless_present = "lsh_bits"
    )]
    model: Option<PathBuf>,
    /// Evaluate a random-projection LSH baseline with this many bits.
    #[arg(long)]
    lsh_bits: Option<usize>,
    #[arg(long, default_value_t = 0)]
    lsh_seed: u64,
    /// Dataset manifest.
    #[arg(long)]
    dataset: PathBuf,
    /// single_label, multi_label or metric_threshold.
    #[arg(long, default_value = "single_label")]
    oracle: OracleMode,
    #[arg(long, default_value_t = 5.0)]
    percentile: f64,
    #[arg(long, default_value_t = 0)]
    oracle_seed: u64,
    /// Leave queries without relevant items out of the means.
    #[arg(long)]
    skip_empty_queries: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    source: EvalSource,
    /// Cutoffs for mAP@K and precision@K.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    k: Vec<usize>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write distance distributions to `<prefix>.csv` and `<prefix>.svg`.
    #[arg(long, value_name = "PREFIX")]
    plot_dists: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

fn load_model(path: &Path) -> Result<(HashModel, Option<mihash::dataset::NormStats>)> {
    let model =
        HashModel::load(path).with_context(|| format!("cannot load model {}", path.display()))?;
    Ok((model, load_model_norm(path)?))
}

fn load_features(path: &Path, norm: Option<&mihash::dataset::NormStats>) -> Result<FeatureMatrix> {
    let mut f = FeatureMatrix::load(path, FeatureFormat::from_path(path))
        .with_context(|| format!("cannot load features {}", path.display()))?;
    if let Some(norm) = norm {
        norm.apply(&mut f.data)?;
    }
    Ok(f)
}

fn run_eval(source: &EvalSource, ks: &[usize]) -> Result<Evaluation> {
    let percentile = (source.oracle == OracleMode::MetricThreshold).then_some(source.percentile);
    let (mut dataset, oracle): (Dataset, _) = load_with_oracle(
        &source.dataset,
        source.oracle,
        percentile,
        source.oracle_seed,
    )?;
    let (queries, database) = match (&source.model, source.lsh_bits) {
        (Some(path), _) => {
            let (model, norm) = load_model(path)?;
            if let Some(norm) = norm {
                norm.apply(&mut dataset.features.data)?;
            }
            encode_splits(&model, &dataset)?
        }
        (None, Some(bits)) => {
            let x = dataset.features.data.view();
            (
                lsh_codes(
                    x.select(Axis(0), &dataset.splits.test).view(),
                    bits,
                    source.lsh_seed,
                )?,
                lsh_codes(
                    x.select(Axis(0), &dataset.splits.retrieval).view(),
                    bits,
                    source.lsh_seed,
                )?,
            )
        }
        (None, None) => bail!("either --model or --lsh-bits is required"),
    };
    let policy = if source.skip_empty_queries {
        EmptyQueryPolicy::Skip
    } else {
        EmptyQueryPolicy::CountAsZero
    };
    Ok(evaluate_codes(
        &queries, &database, &dataset, &oracle, ks, policy,
    )?)
}

fn write_dists(prefix: &Path, ev: &Evaluation) -> Result<()> {
    let csv = prefix.with_extension("csv");
    let mut w = create(&csv)?;
    write_histogram_csv(&mut w, &ev.p_plus, &ev.p_minus)?;
    w.flush()?;
    let title = format!("Hamming distance distributions (mAP {:.4})", ev.report.map);
    std::fs::write(
        prefix.with_extension("svg"),
        histogram_svg(&ev.p_plus, &ev.p_minus, &title)?,
    )?;
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var("MIHASH_THREADS") {
        let n: usize = value
            .parse()
            .with_context(|| format!("MIHASH_THREADS={value:?} is not a number"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => {
            let ds = synth_dataset(&SynthConfig {
                classes: a.classes,
                per_class: a.per_class,
                dim: a.dim,
                separation: a.separation,
                seed: a.seed,
                test_per_class: a.test_per_class,
            })?;
            let manifest = ds.save_dir(&a.out)?;
            println!("{}", manifest.display());
        }
        Command::Train { config } => {
            let cfg = ExperimentConfig::load(&config)
                .with_context(|| format!("bad config {}", config.display()))?;
            let out = run_training(&cfg)?;
            for e in &out.log.epochs {
                match e.val_map {
                    Some(m) => eprintln!(
                        "epoch {:>3}  objective {:.6}  lr {}  val mAP {m:.4}",
                        e.epoch, e.mean_objective, e.lr
                    ),
                    None => eprintln!(
                        "epoch {:>3}  objective {:.6}  lr {}",
                        e.epoch, e.mean_objective, e.lr
                    ),
                }
            }
            println!("{}", cfg.output_model.display());
        }
        Command::Eval(a) => {
            let ev = run_eval(&a.source, &a.k)?;
            match &a.out {
                Some(path) => {
                    let mut w = create(path)?;
                    write_report_csv(&mut w, &ev.report)?;
                    w.flush()?;
                }
                None => write_report_csv(io::stdout().lock(), &ev.report)?,
            }
            if let Some(prefix) = &a.plot_dists {
                write_dists(prefix, &ev)?;
            }
        }
        Command::PlotDists { source, out } => {
            let ev = run_eval(&source, &[])?;
            write_dists(&out, &ev)?;
        }
        Command::ExportCodes {
            model,
            features,
            out,
            csv,
        } => {
            let (model, norm) = load_model(&model)?;
            let x = load_features(&features, norm.as_ref())?;
            if x.dim() != model.input_dim() {
                bail!(
                    "model expects {}-d features, {} has {}-d",
                    model.input_dim(),
                    features.display(),
                    x.dim()
                );
            }
            let codes = BinaryCodeSet::encode(&model, x.data.view())?;
            codes.save(&out)?;
            if let Some(path) = csv {
                let mut w = create(&path)?;
                codes.write_csv(&mut w)?;
                w.flush()?;
            }
        }
        Command::Query {
            model,
            db_codes,
            queries,
            k,
        } => {
            if k == 0 {
                bail!("k must be at least 1");
            }
            let (model, norm) = load_model(&model)?;
            let db = BinaryCodeSet::load(&db_codes)
                .with_context(|| format!("cannot load codes {}", db_codes.display()))?;
            if db.bits() != model.code_length() {
                bail!(
                    "database codes have {} bits, model produces {}",
                    db.bits(),
                    model.code_length()
                );
            }
            let x = load_features(&queries, norm.as_ref())?;
            if x.dim() != model.input_dim() {
                bail!(
                    "model expects {}-d features, {} has {}-d",
                    model.input_dim(),
                    queries.display(),
                    x.dim()
                );
            }
            let k = if k > db.len() {
                eprintln!(
                    "warning: k = {k} exceeds the database size; using {}",
                    db.len()
                );
                db.len()
            } else {
                k
            };
            let mut out = BufWriter::new(io::stdout().lock());
            writeln!(out, "query,rank,index,distance")?;
            for (q, code) in model.encode_rows(x.data.view())?.iter().enumerate() {
                let ranked = rank_database(code, &db)?;
                for r in 0..k {
                    writeln!(
                        out,
                        "{q},{},{},{}",
                        r + 1,
                        ranked.ordering[r],
                        ranked.distances[r]
                    )?;
                }
            }
            out.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
