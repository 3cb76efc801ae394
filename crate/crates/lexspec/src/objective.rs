//! Contrastive objective over batches of synonym pairs.
//!
//! Positives are all ordered pairs of word instances sharing a synset id;
//! negatives for an anchor are every instance from batch pairs with a
//! different synset id. Similarity is `exp(cos(x, y) / tau)`, so the
//! temperature shapes the softmax ratio instead of cancelling out of it.
//!
//! The loss is the mean over positives of
//! `-log(sim_pos / (sim_pos + sum sim_neg))`, which is non-negative and
//! exactly zero when an anchor has no negatives.

use crate::autodiff::{Tape, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error("invalid loss config: {reason}")]
    InvalidConfig { reason: String },
    #[error("batch has no positive pairs")]
    EmptyBatch,
}

/// Which word slot of a constraint pair an instance occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotTag {
    First,
    Second,
}

/// One encoded word instance inside a batch.
pub struct InstanceEmbedding {
    /// Tape-connected vector of the encoder's output dimension.
    pub vector: Tensor,
    pub syn_id: String,
    pub slot: SlotTag,
    /// Index of the constraint pair this instance came from.
    pub pair_index: usize,
}

/// The encoded batch: two instances per constraint pair.
pub struct BatchEmbeddings {
    pub instances: Vec<InstanceEmbedding>,
}

impl BatchEmbeddings {
    /// Assemble from per-pair embedding pairs in batch order.
    pub fn from_pairs(pairs: Vec<(Tensor, Tensor, String)>) -> BatchEmbeddings {
        let mut instances = Vec::with_capacity(pairs.len() * 2);
        for (index, (first, second, syn_id)) in pairs.into_iter().enumerate() {
            instances.push(InstanceEmbedding {
                vector: first,
                syn_id: syn_id.clone(),
                slot: SlotTag::First,
                pair_index: index,
            });
            instances.push(InstanceEmbedding {
                vector: second,
                syn_id,
                slot: SlotTag::Second,
                pair_index: index,
            });
        }
        BatchEmbeddings { instances }
    }
}

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub tau: f64,
    pub positive_mode: PositiveSetMode,
}

impl Default for LossConfig {
    fn default() -> LossConfig {
        LossConfig {
            tau: 0.07,
            positive_mode: PositiveSetMode::AllInstancePairs,
        }
    }
}

impl LossConfig {
    fn validate(&self) -> Result<(), ObjectiveError> {
        if self.tau <= 0.0 || self.tau.is_nan() {
            return Err(ObjectiveError::InvalidConfig {
                reason: format!("tau must be positive, got {}", self.tau),
            });
        }
        Ok(())
    }
}

/// How the ordered positive set is built from same-synset instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositiveSetMode {
    /// Every ordered pair of distinct same-synset instances, slots ignored.
    AllInstancePairs,
    /// Only ordered pairs combining a first-slot and a second-slot instance.
    CrossSlotOnly,
}

/// Ordered positive index pairs (anchor, positive) into
/// [`BatchEmbeddings::instances`].
pub fn build_positive_set(
    batch: &BatchEmbeddings,
    mode: PositiveSetMode,
) -> Vec<(usize, usize)> {
    let n = batch.instances.len();
    let mut positives = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u == v {
                continue;
            }
            let (a, b) = (&batch.instances[u], &batch.instances[v]);
            if a.syn_id != b.syn_id {
                continue;
            }
            if mode == PositiveSetMode::CrossSlotOnly && a.slot == b.slot {
                continue;
            }
            positives.push((u, v));
        }
    }
    positives
}

/// Negative instance indices for an anchor: all instances of batch pairs
/// whose synset id differs from the anchor's.
fn negatives_of(batch: &BatchEmbeddings, anchor: usize) -> Vec<usize> {
    let anchor_syn = &batch.instances[anchor].syn_id;
    (0..batch.instances.len())
        .filter(|&n| batch.instances[n].syn_id != *anchor_syn)
        .collect()
}

/// Tape-connected contrastive loss of a batch.
///
/// Panics (via the autodiff layer) on zero-norm embeddings, for which cosine
/// is undefined.
pub fn info_nce_loss(
    tape: &Tape,
    batch: &BatchEmbeddings,
    config: &LossConfig,
) -> Result<Tensor, ObjectiveError> {
    config.validate()?;
    let positives = build_positive_set(batch, config.positive_mode);
    if positives.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let inv_tau = 1.0 / config.tau;
    // one similarity node per (anchor, other) pair, shared by every term
    // that touches it
    let mut sims: std::collections::HashMap<(usize, usize), Tensor> =
        std::collections::HashMap::new();
    let mut sim = |u: usize, v: usize| -> Tensor {
        sims.entry((u, v))
            .or_insert_with(|| {
                let cos = tape.cosine(&batch.instances[u].vector, &batch.instances[v].vector);
                tape.exp(&tape.scale(&cos, inv_tau))
            })
            .clone()
    };
    let mut sum: Option<Tensor> = None;
    for &(u, v) in &positives {
        let sim_pos = sim(u, v);
        // the denominator reuses the same positive-similarity node, so an
        // anchor without negatives contributes log(s) - log(s) = exact 0
        let mut denom = sim_pos.clone();
        for n in negatives_of(batch, u) {
            denom = tape.add(&denom, &sim(u, n));
        }
        let term = tape.add(&tape.log(&sim_pos), &tape.scale(&tape.log(&denom), -1.0));
        sum = Some(match sum {
            Some(acc) => tape.add(&acc, &term),
            None => term,
        });
    }
    let total = sum.expect("positive set is non-empty");
    Ok(tape.scale(&total, -1.0 / positives.len() as f64))
}
