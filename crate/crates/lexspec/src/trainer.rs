//! Contrastive fine-tuning loop: sample constraint batches, push same-synset
//! instances together with the temperature-scaled objective, step AdamW, and
//! validate on a fixed schedule.
//!
//! Validation runs four times per epoch at the quarter marks and scores each
//! validation set by MRR at the final layer. The checkpoint with the highest
//! mean relative improvement over the untrained scores is kept; the untrained
//! model itself is the baseline with improvement 0, so a run that never beats
//! vanilla returns the initial weights.

use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::encoder::{EncoderError, EncoderModel, ModelState, NamedParam};
use crate::evalsuite::{bli_mrr, BliDataset, EvalError};
use crate::lexdata::ConstraintPair;
use crate::objective::{
    info_nce_loss, BatchEmbeddings, LossConfig, ObjectiveError, PositiveSetMode,
};
use crate::sampler::{
    compute_distribution, epoch_plan, sample_batch, ConstraintIndex, SamplerConfig, SamplerError,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("invalid training configuration: {reason}")]
    InvalidConfig { reason: String },
    #[error("parameter {name} has no gradient; run backward before stepping")]
    MissingGradient { name: String },
    #[error("gradient of parameter {name} is not finite at optimizer step {step}")]
    NonFiniteGradient { name: String, step: u64 },
    #[error("vanilla score {value} of validation set {name:?} is not positive; relative improvement is undefined")]
    VanillaScoreNotPositive { name: String, value: f64 },
    #[error("relative improvement is undefined for vanilla score {vanilla}")]
    VanillaNotPositive { vanilla: f64 },
    #[error("score series have different lengths ({current} vs {vanilla})")]
    ScoreLengthMismatch { current: usize, vanilla: usize },
    #[error("at least one validation set is required")]
    NoValidationSets,
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Hyperparameters of one training run. The encoder mode (full fine-tuning
/// versus adapter-only) is a property of the model being trained, not of this
/// config.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Encode constraint words with their glosses instead of in isolation.
    pub sense_level: bool,
    pub tau: f64,
    pub alpha: f64,
    pub positive_mode: PositiveSetMode,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 2e-5,
            epochs: 15,
            batch_size: 32,
            seed: 17,
            sense_level: false,
            tau: 0.07,
            alpha: 0.5,
            positive_mode: PositiveSetMode::AllInstancePairs,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let fail = |reason: String| Err(TrainerError::InvalidConfig { reason });
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".to_string());
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        Ok(())
    }
}

/// Decoupled-weight-decay Adam. Moment slots are keyed by parameter name and
/// created lazily; the shared timestep advances once per `step` call.
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    t: u64,
    slots: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new() -> AdamW {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            t: 0,
            slots: HashMap::new(),
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    /// One update over the given parameters. Gradients are validated before
    /// any parameter moves, then zeroed after the update, so a failed step
    /// leaves every parameter untouched.
    pub fn step(&mut self, params: &[NamedParam], learning_rate: f64) -> Result<(), TrainerError> {
        let step = self.t + 1;
        let mut grads = Vec::with_capacity(params.len());
        for param in params {
            let grad = param
                .tensor
                .grad()
                .ok_or_else(|| TrainerError::MissingGradient {
                    name: param.name.clone(),
                })?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainerError::NonFiniteGradient {
                    name: param.name.clone(),
                    step,
                });
            }
            grads.push(grad);
        }
        self.t = step;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (param, grad) in params.iter().zip(&grads) {
            let (m, v) = self
                .slots
                .entry(param.name.clone())
                .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            let mut theta = param.tensor.values();
            for i in 0..grad.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -=
                    learning_rate * (m_hat / (v_hat.sqrt() + self.epsilon) + self.weight_decay * theta[i]);
            }
            param.tensor.set_values(&theta);
            param.tensor.zero_grad();
        }
        Ok(())
    }
}

impl Default for AdamW {
    fn default() -> AdamW {
        AdamW::new()
    }
}

/// `(current - vanilla) / vanilla`; the untrained score must be positive.
pub fn relative_improvement(current: f64, vanilla: f64) -> Result<f64, TrainerError> {
    if vanilla <= 0.0 || vanilla.is_nan() {
        return Err(TrainerError::VanillaNotPositive { vanilla });
    }
    Ok((current - vanilla) / vanilla)
}

/// Mean of per-set relative improvements.
pub fn mean_relative_improvement(current: &[f64], vanilla: &[f64]) -> Result<f64, TrainerError> {
    if current.len() != vanilla.len() {
        return Err(TrainerError::ScoreLengthMismatch {
            current: current.len(),
            vanilla: vanilla.len(),
        });
    }
    if current.is_empty() {
        return Err(TrainerError::NoValidationSets);
    }
    let mut total = 0.0;
    for (&c, &v) in current.iter().zip(vanilla) {
        total += relative_improvement(c, v)?;
    }
    Ok(total / current.len() as f64)
}

/// Within-epoch batch indices (1-based) at which validation runs: the four
/// quarter marks `ceil(q * batches / 4)`, deduplicated when an epoch has
/// fewer than four batches.
pub fn validation_marks(batches_per_epoch: usize) -> BTreeSet<usize> {
    (1..=4)
        .map(|quarter| (quarter * batches_per_epoch).div_ceil(4))
        .collect()
}

/// A named word-translation set scored during training.
pub struct ValidationSet {
    pub name: String,
    pub dataset: BliDataset,
}

/// The validation sets of a run. Scoring always reads the final layer, the
/// same representations the objective trains.
pub struct Validator {
    sets: Vec<ValidationSet>,
}

impl Validator {
    pub fn new(sets: Vec<ValidationSet>) -> Result<Validator, TrainerError> {
        if sets.is_empty() {
            return Err(TrainerError::NoValidationSets);
        }
        Ok(Validator { sets })
    }

    pub fn sets(&self) -> &[ValidationSet] {
        &self.sets
    }

    pub fn scores(&self, model: &EncoderModel) -> Result<Vec<f64>, TrainerError> {
        let layer = model.layer_count() - 1;
        self.sets
            .iter()
            .map(|set| Ok(bli_mrr(model, layer, &set.dataset)?))
            .collect()
    }
}

/// One line of the training log, serialized as JSON lines.
#[derive(Debug, Clone, serde::Serialize)]
#[serde(untagged)]
pub enum LogRecord {
    Step {
        step: u64,
        epoch: usize,
        loss: f64,
    },
    Validation {
        step: u64,
        mrr: Vec<f64>,
        relative_improvement: Vec<f64>,
        mean_relative_improvement: f64,
    },
}

/// Scores of one validation pass.
#[derive(Debug, Clone)]
pub struct ValidationOutcome {
    pub per_set: Vec<f64>,
    pub improvements: Vec<f64>,
    pub mean: f64,
}

pub struct TrainOutcome {
    /// Weights of the best checkpoint by mean relative improvement. With no
    /// improvement over vanilla this is the untrained model.
    pub best_state: ModelState,
    pub best_metric: f64,
    /// Optimizer step after which the best checkpoint was taken; 0 means the
    /// untrained model.
    pub best_step: u64,
    pub vanilla_scores: Vec<f64>,
    pub last_validation: Option<ValidationOutcome>,
    pub log: Vec<LogRecord>,
    pub steps_run: u64,
    /// Set when a non-finite loss stopped the run early; the best checkpoint
    /// from before the failure is still returned.
    pub aborted: Option<String>,
}

/// Runs the fine-tuning loop over the constraints and returns the best
/// checkpoint. Vanilla validation scores are taken before the first step.
pub fn train(
    model: &mut EncoderModel,
    constraints: &[ConstraintPair],
    config: &TrainConfig,
    validator: &Validator,
) -> Result<TrainOutcome, TrainerError> {
    config.validate()?;
    let index = ConstraintIndex::build(constraints.iter().cloned());
    let sampler_config = SamplerConfig {
        alpha: config.alpha,
        batch_size: config.batch_size,
        seed: config.seed,
    };
    sampler_config.validate()?;
    let q = compute_distribution(&index.counts(), config.alpha)?;
    let batches_per_epoch = epoch_plan(index.total(), config.batch_size);
    let marks = validation_marks(batches_per_epoch);
    let loss_config = LossConfig {
        tau: config.tau,
        positive_mode: config.positive_mode,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let vanilla = validator.scores(model)?;
    for (set, &score) in validator.sets().iter().zip(&vanilla) {
        if score <= 0.0 || score.is_nan() {
            return Err(TrainerError::VanillaScoreNotPositive {
                name: set.name.clone(),
                value: score,
            });
        }
    }

    let trainable = model.trainable_parameters();
    let mut optimizer = AdamW::new();
    let mut best_state = model.export_state();
    let mut best_metric = 0.0;
    let mut best_step = 0u64;
    let mut last_validation = None;
    let mut log = Vec::new();
    let mut step = 0u64;
    let mut aborted = None;

    'epochs: for epoch in 1..=config.epochs {
        for batch_idx in 1..=batches_per_epoch {
            step += 1;
            let batch = sample_batch(&index, &q, &sampler_config, &mut rng)?;
            let tape = Tape::new();
            let mut pairs = Vec::with_capacity(batch.len());
            for pair in batch.pairs() {
                let (first, second) = if config.sense_level {
                    let g1 = pair.gloss1.as_ref().map_or("", |g| g.text.as_str());
                    let g2 = pair.gloss2.as_ref().map_or("", |g| g.text.as_str());
                    (
                        model.encode_sense(&tape, &pair.word1, g1)?,
                        model.encode_sense(&tape, &pair.word2, g2)?,
                    )
                } else {
                    (
                        model.encode_type(&tape, &pair.word1)?,
                        model.encode_type(&tape, &pair.word2)?,
                    )
                };
                pairs.push((
                    first.final_layer().clone(),
                    second.final_layer().clone(),
                    pair.synset_id.clone(),
                ));
            }
            let embeddings = BatchEmbeddings::from_pairs(pairs);
            let loss = info_nce_loss(&tape, &embeddings, &loss_config)?;
            let loss_value = loss.item();
            log.push(LogRecord::Step {
                step,
                epoch,
                loss: loss_value,
            });
            if !loss_value.is_finite() {
                aborted = Some(format!("non-finite loss {loss_value} at step {step}"));
                break 'epochs;
            }
            tape.backward(&loss);
            optimizer.step(&trainable, config.learning_rate)?;

            if marks.contains(&batch_idx) {
                let scores = validator.scores(model)?;
                let improvements: Vec<f64> = scores
                    .iter()
                    .zip(&vanilla)
                    .map(|(&c, &v)| relative_improvement(c, v))
                    .collect::<Result<_, _>>()?;
                let mean = improvements.iter().sum::<f64>() / improvements.len() as f64;
                log.push(LogRecord::Validation {
                    step,
                    mrr: scores.clone(),
                    relative_improvement: improvements.clone(),
                    mean_relative_improvement: mean,
                });
                if mean > best_metric {
                    best_metric = mean;
                    best_step = step;
                    best_state = model.export_state();
                }
                last_validation = Some(ValidationOutcome {
                    per_set: scores,
                    improvements,
                    mean,
                });
            }
        }
    }

    Ok(TrainOutcome {
        best_state,
        best_metric,
        best_step,
        vanilla_scores: vanilla,
        last_validation,
        log,
        steps_run: step,
        aborted,
    })
}
