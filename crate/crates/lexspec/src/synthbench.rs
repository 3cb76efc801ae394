//! Synthetic two-language lexicon with a known latent structure.
//!
//! Every concept owns one shared unit vector in the leading embedding
//! dimensions; each individual word adds a private nuisance component in the
//! trailing dimensions, scaled so that raw cosine similarity is dominated by
//! nuisance overlap. A model can only score well on held-out translation
//! pairs by suppressing the nuisance subspace inside the shared encoder
//! weights, so trained-versus-untrained comparisons on this data measure
//! generalisation rather than memorisation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::encoder::{EncoderConfig, EncoderError, EncoderModel, SubwordVocabulary};
use crate::evalsuite::{BliDataset, EvalError};
use crate::lexdata::{ConstraintPair, Lang, LexDataError};

#[derive(Debug, Error)]
pub enum SynthBenchError {
    #[error("invalid benchmark config: {reason}")]
    InvalidConfig { reason: String },
    #[error("encoder dimension {model_dim} does not match benchmark dimension {bench_dim}")]
    DimensionMismatch { model_dim: usize, bench_dim: usize },
    #[error(transparent)]
    Lex(#[from] LexDataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Shape of the generated lexicon. Words are named `xaw<concept>_<slot>` and
/// `xbw<concept>_<slot>` with two slots per language per concept, so a
/// benchmark has `4 * concepts` words in total.
#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    /// Total number of latent concepts; the first `train_concepts` back the
    /// training constraints and the rest form the held-out test split.
    pub concepts: usize,
    pub train_concepts: usize,
    /// Constraints emitted per training concept, between 1 and 4. The slot
    /// combinations (a0,b1) and (a1,b0) are never emitted; (a0,b1) serves as
    /// the unseen validation pair.
    pub constraints_per_concept: usize,
    /// Embedding width of the generated vectors.
    pub dimension: usize,
    /// Leading dimensions that carry the shared concept vector; the remaining
    /// `dimension - concept_dims` carry per-word nuisance.
    pub concept_dims: usize,
    /// Norm of the nuisance component. Above 1.0 it outweighs the unit-norm
    /// concept component in raw cosine similarity.
    pub nuisance_scale: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> BenchmarkConfig {
        BenchmarkConfig {
            concepts: 100,
            train_concepts: 50,
            constraints_per_concept: 3,
            dimension: 48,
            concept_dims: 40,
            nuisance_scale: 2.0,
            seed: 97,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), SynthBenchError> {
        let fail = |reason: String| Err(SynthBenchError::InvalidConfig { reason });
        if self.train_concepts == 0 || self.train_concepts >= self.concepts {
            return fail(format!(
                "train_concepts {} must be at least 1 and below concepts {}",
                self.train_concepts, self.concepts
            ));
        }
        if self.constraints_per_concept == 0 || self.constraints_per_concept > CONSTRAINT_SLOTS.len()
        {
            return fail(format!(
                "constraints_per_concept {} must be between 1 and {}",
                self.constraints_per_concept,
                CONSTRAINT_SLOTS.len()
            ));
        }
        if self.concept_dims == 0 || self.concept_dims >= self.dimension {
            return fail(format!(
                "concept_dims {} must be at least 1 and below dimension {}",
                self.concept_dims, self.dimension
            ));
        }
        if !self.nuisance_scale.is_finite() || self.nuisance_scale < 0.0 {
            return fail(format!(
                "nuisance_scale {} must be finite and non-negative",
                self.nuisance_scale
            ));
        }
        Ok(())
    }
}

/// Slot combinations per training concept, as ((side, slot), (side, slot))
/// with side 0 = language "xa" and side 1 = language "xb". The held-out
/// combinations (a0,b1) and (a1,b0) are deliberately absent.
const CONSTRAINT_SLOTS: [((usize, usize), (usize, usize)); 4] = [
    ((0, 0), (1, 0)),
    ((0, 1), (1, 1)),
    ((0, 0), (0, 1)),
    ((1, 0), (1, 1)),
];

fn word_name(side: usize, concept: usize, slot: usize) -> String {
    let side = if side == 0 { 'a' } else { 'b' };
    format!("x{side}w{concept}_{slot}")
}

/// Standard normal draw via the Box-Muller transform.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Isotropic unit vector; resampling guards the degenerate-norm corner.
fn unit_vector(rng: &mut ChaCha8Rng, dims: usize) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..dims).map(|_| standard_normal(rng)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return raw.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// A generated lexicon: word vectors to implant, training constraints over
/// the train concepts, a validation set of unseen same-concept pairs over
/// training words, and a test set whose words never occur in training.
pub struct SyntheticBenchmark {
    config: BenchmarkConfig,
    words: Vec<(String, Vec<f64>)>,
    train_constraints: Vec<ConstraintPair>,
    validation: BliDataset,
    test: BliDataset,
}

impl SyntheticBenchmark {
    pub fn generate(config: BenchmarkConfig) -> Result<SyntheticBenchmark, SynthBenchError> {
        config.validate()?;
        let lang_a = Lang::new("xa")?;
        let lang_b = Lang::new("xb")?;
        let lang_of = |side: usize| {
            if side == 0 {
                lang_a.clone()
            } else {
                lang_b.clone()
            }
        };

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let nuisance_dims = config.dimension - config.concept_dims;
        let mut words = Vec::with_capacity(config.concepts * 4);
        for concept in 0..config.concepts {
            let shared = unit_vector(&mut rng, config.concept_dims);
            for side in 0..2 {
                for slot in 0..2 {
                    let nuisance = unit_vector(&mut rng, nuisance_dims);
                    let mut vector = shared.clone();
                    vector.extend(nuisance.iter().map(|x| x * config.nuisance_scale));
                    words.push((word_name(side, concept, slot), vector));
                }
            }
        }

        let mut train_constraints = Vec::with_capacity(
            config.train_concepts * config.constraints_per_concept,
        );
        for concept in 0..config.train_concepts {
            for &((side1, slot1), (side2, slot2)) in
                CONSTRAINT_SLOTS.iter().take(config.constraints_per_concept)
            {
                train_constraints.push(ConstraintPair::new(
                    word_name(side1, concept, slot1),
                    lang_of(side1),
                    word_name(side2, concept, slot2),
                    lang_of(side2),
                    None,
                    None,
                    format!("syn{concept}"),
                )?);
            }
        }

        // Validation queries pair two trained words whose pairing itself was
        // never a constraint; test queries use exclusively held-out words.
        let validation_rows: Vec<(String, String)> = (0..config.train_concepts)
            .map(|c| (word_name(0, c, 0), word_name(1, c, 1)))
            .collect();
        let validation_candidates: Vec<String> = (0..config.train_concepts)
            .flat_map(|c| [word_name(1, c, 0), word_name(1, c, 1)])
            .collect();
        let validation = BliDataset::new(
            lang_a.clone(),
            lang_b.clone(),
            &validation_rows,
            validation_candidates,
        )?;

        let test_rows: Vec<(String, String)> = (config.train_concepts..config.concepts)
            .map(|c| (word_name(0, c, 0), word_name(1, c, 0)))
            .collect();
        let test_candidates: Vec<String> = (config.train_concepts..config.concepts)
            .flat_map(|c| [word_name(1, c, 0), word_name(1, c, 1)])
            .collect();
        let test = BliDataset::new(lang_a, lang_b, &test_rows, test_candidates)?;

        Ok(SyntheticBenchmark {
            config,
            words,
            train_constraints,
            validation,
            test,
        })
    }

    pub fn config(&self) -> &BenchmarkConfig {
        &self.config
    }

    /// Every word with its implant vector, in generation order.
    pub fn words(&self) -> &[(String, Vec<f64>)] {
        &self.words
    }

    pub fn train_constraints(&self) -> &[ConstraintPair] {
        &self.train_constraints
    }

    pub fn validation_dataset(&self) -> &BliDataset {
        &self.validation
    }

    pub fn test_dataset(&self) -> &BliDataset {
        &self.test
    }

    /// Initialise an encoder whose vocabulary is exactly the benchmark words
    /// (one token each) and overwrite their embedding rows with the generated
    /// vectors. All other parameters keep their seeded initialisation.
    pub fn build_model(
        &self,
        config: EncoderConfig,
        seed: u64,
    ) -> Result<EncoderModel, SynthBenchError> {
        if config.dim != self.config.dimension {
            return Err(SynthBenchError::DimensionMismatch {
                model_dim: config.dim,
                bench_dim: self.config.dimension,
            });
        }
        let tokens: Vec<String> = self.words.iter().map(|(w, _)| w.clone()).collect();
        let vocab = SubwordVocabulary::new(tokens)?;
        let model = EncoderModel::init(config, vocab, seed)?;
        let d = self.config.dimension;
        let mut values = model.embedding_tensor().values();
        for (word, vector) in &self.words {
            let id = model
                .vocab()
                .id_of(word)
                .expect("vocabulary was built from these words");
            values[id * d..(id + 1) * d].copy_from_slice(vector);
        }
        model.embedding_tensor().set_values(&values);
        Ok(model)
    }
}
