//! Language-pair aware batch sampling.
//!
//! Constraint counts per language pair are smoothed into a multinomial
//! (`q = p^alpha / sum p^alpha`) so low-resource pairs are oversampled
//! relative to their raw share. Batches draw a language pair per slot, then a
//! constraint from that pair's pool without replacement within the batch.
//!
//! All randomness flows from a single 64-bit seed through ChaCha8, so batch
//! sequences are reproducible across runs and platforms.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::lexdata::{ConstraintPair, Lang};

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("all language-pair counts are zero")]
    AllCountsZero,
    #[error("invalid sampler config: {reason}")]
    InvalidConfig { reason: String },
    #[error("{total} constraints cannot fill a batch of {batch_size} without repeats")]
    NotEnoughConstraints { total: usize, batch_size: usize },
}

/// Unordered language pair in canonical order (`lo <= hi` lexicographically).
/// Monolingual pairs have `lo == hi`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LanguagePairKey {
    lo: Lang,
    hi: Lang,
}

impl LanguagePairKey {
    pub fn new(a: Lang, b: Lang) -> LanguagePairKey {
        if a <= b {
            LanguagePairKey { lo: a, hi: b }
        } else {
            LanguagePairKey { lo: b, hi: a }
        }
    }

    pub fn of_pair(pair: &ConstraintPair) -> LanguagePairKey {
        LanguagePairKey::new(pair.lang1.clone(), pair.lang2.clone())
    }

    pub fn lo(&self) -> &Lang {
        &self.lo
    }

    pub fn hi(&self) -> &Lang {
        &self.hi
    }

    pub fn is_monolingual(&self) -> bool {
        self.lo == self.hi
    }
}

impl fmt::Display for LanguagePairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

/// Constraints grouped by language pair; pool order is insertion order.
#[derive(Debug, Clone, Default)]
pub struct ConstraintIndex {
    pools: BTreeMap<LanguagePairKey, Vec<ConstraintPair>>,
    total: usize,
}

impl ConstraintIndex {
    pub fn build(pairs: impl IntoIterator<Item = ConstraintPair>) -> ConstraintIndex {
        let mut index = ConstraintIndex::default();
        for pair in pairs {
            let key = LanguagePairKey::of_pair(&pair);
            index.pools.entry(key).or_default().push(pair);
            index.total += 1;
        }
        index
    }

    pub fn counts(&self) -> BTreeMap<LanguagePairKey, usize> {
        self.pools.iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn pools(&self) -> &BTreeMap<LanguagePairKey, Vec<ConstraintPair>> {
        &self.pools
    }
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    /// Smoothing exponent in (0, 1]; 1 keeps the raw distribution.
    pub alpha: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(SamplerError::InvalidConfig {
                reason: format!("alpha must be in (0, 1], got {}", self.alpha),
            });
        }
        if self.batch_size < 2 {
            return Err(SamplerError::InvalidConfig {
                reason: format!(
                    "batch_size must be at least 2 for in-batch negatives, got {}",
                    self.batch_size
                ),
            });
        }
        Ok(())
    }
}

/// One training batch; length is exactly the configured batch size.
#[derive(Debug, Clone)]
pub struct Batch {
    pairs: Vec<ConstraintPair>,
}

impl Batch {
    pub fn pairs(&self) -> &[ConstraintPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Smoothed sampling distribution over language pairs:
/// `p = n / sum(n)`, `q = p^alpha / sum(p^alpha)`.
pub fn compute_distribution(
    counts: &BTreeMap<LanguagePairKey, usize>,
    alpha: f64,
) -> Result<BTreeMap<LanguagePairKey, f64>, SamplerError> {
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(SamplerError::AllCountsZero);
    }
    let smoothed: BTreeMap<LanguagePairKey, f64> = counts
        .iter()
        .map(|(k, &n)| (k.clone(), (n as f64 / total as f64).powf(alpha)))
        .collect();
    let norm: f64 = smoothed.values().sum();
    Ok(smoothed.into_iter().map(|(k, v)| (k, v / norm)).collect())
}

/// Draw one language pair from the distribution. Iteration order of the map
/// fixes the cumulative scan, so draws are reproducible.
pub fn draw_key<'a>(
    q: &'a BTreeMap<LanguagePairKey, f64>,
    rng: &mut ChaCha8Rng,
) -> &'a LanguagePairKey {
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    let mut last_positive = None;
    for (key, &prob) in q {
        if prob > 0.0 {
            last_positive = Some(key);
        }
        cumulative += prob;
        if u < cumulative && prob > 0.0 {
            return key;
        }
    }
    last_positive.expect("distribution has at least one positive entry")
}

/// Number of batches that constitute one epoch: `ceil(total / batch_size)`.
pub fn epoch_plan(total_constraints: usize, batch_size: usize) -> usize {
    assert!(
        total_constraints > 0 && batch_size > 0,
        "epoch_plan requires positive inputs, got ({}, {})",
        total_constraints,
        batch_size
    );
    total_constraints.div_ceil(batch_size)
}

/// Fill a batch: per slot, draw a language pair from `q`, then a constraint
/// uniformly from that pair's pool, skipping constraints already in the
/// batch. A pool exhausted within the batch triggers a key redraw.
pub fn sample_batch(
    index: &ConstraintIndex,
    q: &BTreeMap<LanguagePairKey, f64>,
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Batch, SamplerError> {
    config.validate()?;
    if index.total() < config.batch_size {
        return Err(SamplerError::NotEnoughConstraints {
            total: index.total(),
            batch_size: config.batch_size,
        });
    }
    let mut used: BTreeMap<&LanguagePairKey, Vec<bool>> = BTreeMap::new();
    let mut pairs = Vec::with_capacity(config.batch_size);
    while pairs.len() < config.batch_size {
        let key = draw_key(q, rng);
        let Some(pool) = index.pools().get(key) else {
            continue;
        };
        let used_mask = used.entry(key).or_insert_with(|| vec![false; pool.len()]);
        let remaining = used_mask.iter().filter(|&&u| !u).count();
        if remaining == 0 {
            continue;
        }
        let pick = rng.gen_range(0..remaining);
        let slot = used_mask
            .iter()
            .enumerate()
            .filter(|(_, &u)| !u)
            .nth(pick)
            .map(|(i, _)| i)
            .expect("pick is within the remaining count");
        used_mask[slot] = true;
        pairs.push(pool[slot].clone());
    }
    Ok(Batch { pairs })
}
