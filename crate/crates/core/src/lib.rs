//! Learning binary hash codes by maximizing the mutual information between
//! Hamming distances and neighborhood membership.
//!
//! The crate is organized bottom-up:
//!
//! - [`embedding`]: the single-layer hash model, its sigmoid relaxation and
//!   sign binarization, plus the `MIH1` model file format.
//! - [`histogram`]: hard and relaxed Hamming distances, triangular-kernel
//!   soft binning and per-query distance histograms.
//! - [`mi`]: entropy, mutual information of a histogram pair and its
//!   gradient with respect to the conditional histograms.
//! - [`minibatch`]: the minibatch objective and its Jacobian with respect to
//!   the relaxed codes, computed both per query and in the `O(bM^2)` matrix
//!   form.
//! - [`trainer`]: minibatch SGD with momentum and weight decay.
//! - [`retrieval`]: packed binary codes, Hamming ranking, AP/mAP/precision
//!   and the LSH baseline.
//! - [`dataset`], [`config`] and [`report`]: ingestion, neighborhood oracles,
//!   experiment configuration and CSV/SVG output used by the CLI.
//! - [`pipeline`]: the train and eval steps behind the CLI commands.

pub mod config;
pub mod dataset;
pub mod embedding;
mod error;
pub mod histogram;
pub mod mi;
pub mod minibatch;
pub mod pipeline;
pub mod report;
pub mod retrieval;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};

pub use dataset::{
    AffinityOracle, Dataset, FeatureMatrix, Labels, Neighborhood, OracleMode, Splits,
};
pub use embedding::{BinaryCode, HashModel, RelaxedCodeMatrix};
pub use histogram::DistanceHistogramPair;
pub use mi::MIValue;
pub use minibatch::{AffinityMatrix, BatchGradients, Relation};
pub use retrieval::{BinaryCodeSet, RankedList};
pub use trainer::{TrainConfig, TrainLog};
