//! Mini-batch AdamW training, the sink-only first stage, and evaluation.

mod metrics;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ForwardOptions, Model, ModelError, Pooling};
use crate::numerics::{lr_at_step, AdamW, AdamWConfig, Gradients, Graph};
use crate::pipeline::mix_seed;
use crate::retrieval::TokenSequence;
use crate::scalar::Scalar;

pub use metrics::{auc, bce_loss};

/// Samples per gradient work unit. Batch gradients are summed unit by unit
/// in index order, so results do not depend on the thread count.
const CHUNK: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no training data")]
    EmptyData,
    #[error("auc needs both classes, got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("{0} scores but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("score is NaN")]
    NonFiniteScore,
    #[error("example {0} has no sinks but the stage pools over sinks")]
    MissingSinks(usize),
    #[error("invalid stage config: {0}")]
    InvalidStage(String),
}

/// One model input with its click label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub seq: TokenSequence,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    /// Pooling for this stage; `None` keeps the model's configured pooling.
    pub pooling: Option<Pooling>,
    pub epochs: usize,
    pub peak_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub warm_ratio: f64,
    pub optimizer: AdamWConfig,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            pooling: None,
            epochs: 3,
            peak_lr: 1e-3,
            batch_size: 32,
            seed: 0,
            shuffle: true,
            warm_ratio: 0.05,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidStage("batch_size must be positive".into()));
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return Err(TrainError::InvalidStage(format!("peak_lr must be finite and >= 0, got {}", self.peak_lr)));
        }
        if !(0.0..=1.0).contains(&self.warm_ratio) {
            return Err(TrainError::InvalidStage(format!("warm_ratio must lie in [0, 1], got {}", self.warm_ratio)));
        }
        Ok(())
    }

    pub fn total_steps(&self, n_examples: usize) -> usize {
        self.epochs * steps_per_epoch(n_examples, self.batch_size)
    }
}

pub fn steps_per_epoch(n_examples: usize, batch_size: usize) -> usize {
    n_examples.div_ceil(batch_size)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStageConfig {
    /// Runs with sink-mean pooling whatever its `pooling` field says.
    pub stage1: StageConfig,
    pub stage2: StageConfig,
}

/// One line of the training log, written once per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub stage: usize,
    pub epoch: usize,
    /// Optimizer steps taken so far, counted across stages.
    pub step: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Mean training loss over the epoch.
    pub loss: f64,
    pub val_auc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    pub steps: usize,
}

impl TrainLog {
    pub fn to_json_lines(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record") + "\n")
            .collect()
    }

    fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
        self.steps += other.steps;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub auc: f64,
    pub mean_loss: f64,
    pub scores: Vec<f64>,
}

/// Sum of per-example losses and gradients over `batch`, each scaled by `scale`.
fn chunk_grads<F: Scalar>(
    model: &Model<F>,
    examples: &[Example],
    batch: &[usize],
    pooling: Option<Pooling>,
    seeds: &[u64],
    scale: F,
) -> Result<(Gradients<F>, f64), TrainError> {
    let mut grads = Gradients::zeros_like(model.params());
    let mut loss_sum = 0.0;
    for (&i, &seed) in batch.iter().zip(seeds) {
        let ex = &examples[i];
        let mut opts = ForwardOptions::train(seed);
        opts.pooling = pooling;
        let mut g = Graph::new();
        let built = model.build(&mut g, &ex.seq, &opts)?;
        let y = if ex.label == 1 { F::one() } else { F::zero() };
        let loss = g.bce_with_logits(built.logit, y);
        loss_sum += g.value(loss).item().as_f64();
        g.backward(loss).map_err(ModelError::from)?;
        g.accumulate_param_grads(&mut grads, scale);
    }
    Ok((grads, loss_sum))
}

/// One stage of mini-batch training. `step_offset` only shifts the logged step counter.
pub fn train_stage<F: Scalar>(
    model: &mut Model<F>,
    train: &[Example],
    val: Option<&[Example]>,
    stage: &StageConfig,
    stage_index: usize,
    step_offset: usize,
) -> Result<TrainLog, TrainError> {
    stage.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let pooling = stage.pooling.unwrap_or(model.config().pooling);
    if pooling == Pooling::SinkMean {
        if let Some(i) = train.iter().position(|e| e.seq.sink_positions().is_empty()) {
            return Err(TrainError::MissingSinks(i));
        }
    }
    let total = stage.total_steps(train.len());
    let mut opt = AdamW::new(model.params(), stage.optimizer);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut lr = 0.0;
    for epoch in 0..stage.epochs {
        if stage.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(stage.seed, (stage_index * 1_000_003 + epoch) as u64));
            order.sort_unstable();
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(stage.batch_size).enumerate() {
            let step = opt.steps_taken() as usize;
            let batch_seed = mix_seed(stage.seed ^ 0xD15C_0000, (stage_index as u64) << 40 | step as u64);
            let seeds: Vec<u64> = (0..batch.len()).map(|j| mix_seed(batch_seed, j as u64)).collect();
            let scale = F::one() / F::from_usize(batch.len()).expect("batch size");
            let parts = batch
                .par_chunks(CHUNK)
                .zip(seeds.par_chunks(CHUNK))
                .map(|(c, s)| chunk_grads(model, train, c, Some(pooling), s, scale))
                .collect::<Result<Vec<_>, _>>()?;
            let mut parts = parts.into_iter();
            let (mut grads, mut batch_loss) = parts.next().expect("non-empty batch");
            for (g, l) in parts {
                grads.accumulate(&g);
                batch_loss += l;
            }
            loss_sum += batch_loss;
            lr = lr_at_step(step, total, stage.peak_lr, stage.warm_ratio);
            opt.step(model.params_mut(), &grads, lr).map_err(ModelError::from)?;
            debug_assert_eq!(b + 1 + epoch * steps_per_epoch(train.len(), stage.batch_size), opt.steps_taken() as usize);
        }
        let val_auc = match val {
            Some(v) if !v.is_empty() => Some(evaluate_with(model, v, Some(pooling))?.auc),
            _ => None,
        };
        log.records.push(LogRecord {
            stage: stage_index,
            epoch,
            step: step_offset + opt.steps_taken() as usize,
            lr,
            loss: loss_sum / train.len() as f64,
            val_auc,
        });
    }
    log.steps = opt.steps_taken() as usize;
    Ok(log)
}

/// Stage 1 pools over sinks only; stage 2 continues from the same parameters
/// with a fresh optimizer and schedule.
pub fn two_stage_train<F: Scalar>(
    model: &mut Model<F>,
    train: &[Example],
    val: Option<&[Example]>,
    cfg: &TwoStageConfig,
) -> Result<TrainLog, TrainError> {
    let mut log = TrainLog::default();
    if cfg.stage1.epochs > 0 {
        let stage1 = StageConfig {
            pooling: Some(Pooling::SinkMean),
            ..cfg.stage1.clone()
        };
        log.extend(train_stage(model, train, val, &stage1, 1, 0)?);
    }
    let offset = log.steps;
    log.extend(train_stage(model, train, val, &cfg.stage2, 2, offset)?);
    Ok(log)
}

pub fn predict<F: Scalar>(model: &Model<F>, examples: &[Example], pooling: Option<Pooling>) -> Result<Vec<f64>, TrainError> {
    examples
        .par_iter()
        .map(|e| {
            let mut opts = ForwardOptions::eval();
            opts.pooling = pooling;
            Ok(model.forward(&e.seq, &opts)?.logit.as_f64())
        })
        .collect()
}

/// Dropout-free scoring with the model's configured pooling.
pub fn evaluate<F: Scalar>(model: &Model<F>, examples: &[Example]) -> Result<Evaluation, TrainError> {
    evaluate_with(model, examples, None)
}

pub fn evaluate_with<F: Scalar>(
    model: &Model<F>,
    examples: &[Example],
    pooling: Option<Pooling>,
) -> Result<Evaluation, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let scores = predict(model, examples, pooling)?;
    let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    let mean_loss = scores.iter().zip(&labels).map(|(&z, &y)| bce_loss(z, y)).sum::<f64>() / scores.len() as f64;
    Ok(Evaluation {
        auc: auc(&scores, &labels)?,
        mean_loss,
        scores,
    })
}
