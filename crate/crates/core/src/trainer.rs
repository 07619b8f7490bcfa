//! Minibatch SGD training of the hash layer against the mutual information
//! objective.
//!
//! The objective is maximized; internally the optimizer minimizes its
//! negation with momentum and L2 weight decay:
//!
//! ```text
//! v <- momentum * v - lr * (-dO/dW + weight_decay * W)
//! W <- W + v
//! ```

use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Neighborhood;
use crate::embedding::{relax_jacobian_matrix, HashModel, RelaxedCodeMatrix};
use crate::error::{invalid, Error, Result};
use crate::minibatch::{efficient_jacobian, efficient_jacobian_parallel, AffinityMatrix};
use crate::retrieval::{mean_average_precision, BinaryCodeSet, MapOptions};

/// Optimization hyperparameters. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Code length `b`.
    pub bits: usize,
    /// Minibatch size `M`.
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    /// Epochs between learning rate decays.
    pub lr_decay_period: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Draw batches round-robin over classes (single-label data only).
    pub balanced_sampling: bool,
    /// Compute the batch Jacobian on the calling thread. The multi-threaded
    /// path gives bitwise identical results; this only pins the thread
    /// count.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            bits: 32,
            batch_size: 256,
            epochs: 20,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay_factor: 0.5,
            lr_decay_period: 10,
            gamma: crate::embedding::DEFAULT_GAMMA,
            seed: 0,
            balanced_sampling: false,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.bits == 0 {
            return bad("bits must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!(
                "lr_decay_factor must be in (0, 1], got {}",
                self.lr_decay_factor
            ));
        }
        if self.lr_decay_period == 0 {
            return bad("lr_decay_period must be at least 1".into());
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        Ok(())
    }

    /// `lr * factor^floor(epoch / period)` for a 0-based epoch.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr
            * self
                .lr_decay_factor
                .powi((epoch / self.lr_decay_period) as i32)
    }
}

/// Momentum buffer and schedule position.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Array2<f64>,
    pub step_count: u64,
    pub current_lr: f64,
}

impl OptimizerState {
    pub fn new(shape: (usize, usize), lr: f64) -> Self {
        Self {
            velocity: Array2::zeros(shape),
            step_count: 0,
            current_lr: lr,
        }
    }
}

/// One SGD-with-momentum step. `grad_objective` is the gradient of the
/// maximized objective; it is negated into a loss gradient here.
pub fn sgd_step(
    weights: &mut Array2<f64>,
    grad_objective: &Array2<f64>,
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<()> {
    if weights.dim() != grad_objective.dim() || weights.dim() != state.velocity.dim() {
        return invalid("weights, gradient and velocity shapes differ");
    }
    if grad_objective.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "non-finite gradient at step {}",
            state.step_count
        )));
    }
    let lr = state.current_lr;
    let (mu, wd) = (config.momentum, config.weight_decay);
    ndarray::Zip::from(&mut state.velocity)
        .and(&*weights)
        .and(grad_objective)
        .for_each(|v, &w, &g| *v = mu * *v - lr * (-g + wd * w));
    *weights += &state.velocity;
    state.step_count += 1;
    Ok(())
}

/// Gradient of the objective with respect to the weights, given its
/// Jacobian with respect to the relaxed codes of `features` (`M x n`):
/// `sum_j (J[:, j] * relax'(f_j)) x_j^T`.
pub fn backprop_to_weights(
    model: &HashModel,
    features: ArrayView2<'_, f64>,
    batch_jacobian: &Array2<f64>,
) -> Result<Array2<f64>> {
    let act = model.forward_batch(features)?;
    if act.dim() != batch_jacobian.dim() {
        return invalid(format!(
            "jacobian is {:?}, expected {:?}",
            batch_jacobian.dim(),
            act.dim()
        ));
    }
    let slope = relax_jacobian_matrix(&act, model.gamma());
    Ok((batch_jacobian * &slope).dot(&features))
}

/// Batch drawn from the training split.
#[derive(Debug, Clone)]
pub struct Minibatch {
    /// Dataset row indices, in batch order.
    pub indices: Vec<usize>,
    pub features: Array2<f64>,
    pub affinity: AffinityMatrix,
}

/// Draws `m` distinct training items uniformly without replacement.
pub fn sample_minibatch(
    features: ArrayView2<'_, f64>,
    train_indices: &[usize],
    m: usize,
    oracle: &dyn Neighborhood,
    rng: &mut ChaCha8Rng,
) -> Result<Minibatch> {
    if train_indices.len() < m {
        return invalid(format!(
            "training split has {} items, fewer than the batch size {m}",
            train_indices.len()
        ));
    }
    let picks = index::sample(rng, train_indices.len(), m);
    let indices: Vec<usize> = picks.iter().map(|k| train_indices[k]).collect();
    Ok(assemble(features, indices, oracle))
}

fn assemble(
    features: ArrayView2<'_, f64>,
    indices: Vec<usize>,
    oracle: &dyn Neighborhood,
) -> Minibatch {
    let affinity = AffinityMatrix::from_fn(indices.len(), |i, j| {
        oracle.is_neighbor(indices[i], indices[j])
    });
    Minibatch {
        features: features.select(Axis(0), &indices),
        indices,
        affinity,
    }
}

/// Class-balanced sampler: each batch visits the classes in a shuffled
/// order, taking one fresh item per class per round.
struct BalancedSampler {
    groups: Vec<Vec<usize>>,
}

impl BalancedSampler {
    fn new(train_indices: &[usize], labels: &[u32]) -> Result<Self> {
        let mut by_label = std::collections::BTreeMap::<u32, Vec<usize>>::new();
        for &i in train_indices {
            let label = *labels
                .get(i)
                .ok_or_else(|| Error::InvalidInput(format!("no label for item {i}")))?;
            by_label.entry(label).or_default().push(i);
        }
        Ok(Self {
            groups: by_label.into_values().collect(),
        })
    }

    fn sample(&self, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.groups.len()).collect();
        order.shuffle(rng);
        let mut pools: Vec<Vec<usize>> = order
            .iter()
            .map(|&g| {
                let mut pool = self.groups[g].clone();
                pool.shuffle(rng);
                pool
            })
            .collect();
        let mut picked = Vec::with_capacity(m);
        while picked.len() < m {
            for pool in pools.iter_mut() {
                if picked.len() == m {
                    break;
                }
                if let Some(i) = pool.pop() {
                    picked.push(i);
                }
            }
        }
        picked
    }
}

/// Training inputs: the full feature matrix plus which rows to train on.
pub struct TrainingSet<'a> {
    pub features: ArrayView2<'a, f64>,
    pub train_indices: &'a [usize],
    pub oracle: &'a dyn Neighborhood,
    /// Single labels by dataset row; required for balanced sampling.
    pub class_labels: Option<&'a [u32]>,
}

/// Held-out retrieval problem evaluated after every epoch.
pub struct Validation<'a> {
    pub queries: &'a [usize],
    pub database: &'a [usize],
    pub options: MapOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub mean_objective: f64,
    pub lr: f64,
    pub val_map: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// CSV with columns `epoch,mean_objective,lr` and, when validation ran,
    /// `val_map`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let with_val = self.epochs.iter().any(|e| e.val_map.is_some());
        if with_val {
            writeln!(w, "epoch,mean_objective,lr,val_map")?;
        } else {
            writeln!(w, "epoch,mean_objective,lr")?;
        }
        for e in &self.epochs {
            write!(w, "{},{},{}", e.epoch, e.mean_objective, e.lr)?;
            if with_val {
                match e.val_map {
                    Some(v) => write!(w, ",{v}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_objective).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: HashModel,
    pub log: TrainLog,
}

/// The untrained model `train` starts from (Gaussian, seeded by
/// `config.seed`).
pub fn initial_model(input_dim: usize, config: &TrainConfig) -> Result<HashModel> {
    HashModel::random(input_dim, config.bits, config.gamma, config.seed)
}

/// mAP of `model` on a held-out retrieval problem.
pub fn validation_map(
    model: &HashModel,
    features: ArrayView2<'_, f64>,
    oracle: &dyn Neighborhood,
    validation: &Validation<'_>,
) -> Result<f64> {
    let encode = |rows: &[usize]| -> Result<BinaryCodeSet> {
        BinaryCodeSet::from_codes(
            &model.encode_rows(features.select(Axis(0), rows).view())?,
            model.code_length(),
        )
    };
    let queries = encode(validation.queries)?;
    let database = encode(validation.database)?;
    mean_average_precision(
        &queries,
        &database,
        |q, d| oracle.is_neighbor(validation.queries[q], validation.database[d]),
        &validation.options,
    )
}

/// Trains a hash model from a Gaussian initialization.
///
/// Each epoch draws `max(1, |train| / batch_size)` independent uniform
/// batches. The result is a pure function of the inputs and `config.seed`.
pub fn train(
    set: &TrainingSet<'_>,
    config: &TrainConfig,
    validation: Option<&Validation<'_>>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let n_train = set.train_indices.len();
    if n_train < config.batch_size {
        return invalid(format!(
            "training split has {n_train} items, fewer than the batch size {}",
            config.batch_size
        ));
    }
    if let Some(&bad) = set
        .train_indices
        .iter()
        .find(|&&i| i >= set.features.nrows())
    {
        return invalid(format!("training index {bad} out of range"));
    }
    let balanced = if config.balanced_sampling {
        let labels = set.class_labels.ok_or_else(|| {
            Error::InvalidConfig("balanced_sampling needs single-label class labels".into())
        })?;
        Some(BalancedSampler::new(set.train_indices, labels)?)
    } else {
        None
    };

    let mut model = initial_model(set.features.ncols(), config)?;
    let mut weights = model.weights().clone();
    let mut state = OptimizerState::new(weights.dim(), config.lr);
    // Stream 1 keeps batch sampling independent of the initialization draw.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let batches = (n_train / config.batch_size).max(1);
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        state.current_lr = config.lr_at_epoch(epoch);
        let mut objective_sum = 0.0;
        for _ in 0..batches {
            let batch = match &balanced {
                Some(s) => assemble(
                    set.features,
                    s.sample(config.batch_size, &mut rng),
                    set.oracle,
                ),
                None => sample_minibatch(
                    set.features,
                    set.train_indices,
                    config.batch_size,
                    set.oracle,
                    &mut rng,
                )?,
            };
            let codes: RelaxedCodeMatrix = model.relaxed_codes(batch.features.view())?;
            let grads = if config.deterministic {
                efficient_jacobian(&codes, &batch.affinity)?
            } else {
                efficient_jacobian_parallel(&codes, &batch.affinity)?
            };
            objective_sum += grads.objective;
            let grad_w = backprop_to_weights(&model, batch.features.view(), &grads.jacobian)?;
            sgd_step(&mut weights, &grad_w, &mut state, config)?;
            model.set_weights(weights.clone())?;
        }
        let val_map = validation
            .map(|v| validation_map(&model, set.features, set.oracle, v))
            .transpose()?;
        log.epochs.push(EpochRecord {
            epoch: epoch + 1,
            mean_objective: objective_sum / batches as f64,
            lr: state.current_lr,
            val_map,
        });
    }
    Ok(TrainOutcome { model, log })
}
