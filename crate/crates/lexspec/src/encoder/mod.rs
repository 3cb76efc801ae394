//! The bi-encoder: subword tokenization, special-token framing, a small
//! transformer-style stack with optional bottleneck adapters, and per-layer
//! mean-pooled word and sentence representations.
//!
//! Architecture per block: single-head self-attention (no biases, scores
//! scaled by `1/sqrt(d)`), residual, then a two-layer relu FFN with biases,
//! residual; in adapter mode a bottleneck adapter (down, relu, up, residual)
//! follows the FFN residual and only adapter parameters are trainable.
//! There is no layer normalization.
//!
//! Layer 0 is the raw token-embedding layer: position vectors are added
//! after it, on the way into block 1, so layer-0 representations are both
//! attention-free and position-free.

mod checkpoint;
mod vocab;

pub use checkpoint::{load_checkpoint_state, save_checkpoint_state, ModelState, TensorState};
pub use vocab::{SubwordVocabulary, SPEC1_ID, SPEC2_ID, UNK_ID};

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid encoder config: {reason}")]
    InvalidConfig { reason: String },
    #[error("duplicate vocabulary token {token:?}")]
    DuplicateToken { token: String },
    #[error("token {token:?} collides with a reserved token")]
    ReservedToken { token: String },
    #[error("invalid vocabulary token {token:?}")]
    InvalidToken { token: String },
    #[error("cannot encode word {word:?}: {reason}")]
    InvalidWord { word: String, reason: String },
    #[error("sequence of {needed} tokens exceeds max_sequence_length {max}")]
    SequenceTooLong { needed: usize, max: usize },
    #[error("cannot encode an empty sentence")]
    EmptySentence,
    #[error("word-vector file {path}, line {line}: {reason}")]
    MalformedVectorFile {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("word-vector dimension {found} does not match model dimension {expected}")]
    VectorDimensionMismatch { expected: usize, found: usize },
    #[error("checkpoint manifest names unknown tensor {name:?}")]
    UnknownManifestTensor { name: String },
    #[error("checkpoint is missing tensor {name:?}")]
    MissingTensor { name: String },
    #[error("tensor {name:?}: checkpoint shape {found:?} does not match model shape {expected:?}")]
    TensorShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("weights file holds {found} bytes, manifest implies {expected}")]
    WeightsSizeMismatch { expected: usize, found: usize },
    #[error("malformed checkpoint manifest: {reason}")]
    MalformedManifest { reason: String },
}

impl EncoderError {
    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> EncoderError + '_ {
        move |source| EncoderError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Which parameter set trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderMode {
    /// All parameters trainable; no adapters in the architecture.
    Full,
    /// Adapters inserted after each block; only they are trainable.
    Adapter,
}

impl std::str::FromStr for EncoderMode {
    type Err = String;
    fn from_str(s: &str) -> Result<EncoderMode, String> {
        match s {
            "full" => Ok(EncoderMode::Full),
            "adapter" => Ok(EncoderMode::Adapter),
            other => Err(format!("unknown mode {other:?} (expected full or adapter)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub dim: usize,
    pub num_layers: usize,
    pub ffn_dim: usize,
    pub adapter_bottleneck: usize,
    pub mode: EncoderMode,
    pub max_sequence_length: usize,
}

impl Default for EncoderConfig {
    fn default() -> EncoderConfig {
        let dim = 48;
        EncoderConfig {
            dim,
            num_layers: 2,
            ffn_dim: 96,
            // reduction ratio 16, rounded up
            adapter_bottleneck: dim.div_ceil(16),
            mode: EncoderMode::Full,
            max_sequence_length: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let fail = |reason: String| Err(EncoderError::InvalidConfig { reason });
        if self.dim == 0 || self.ffn_dim == 0 || self.max_sequence_length == 0 {
            return fail("dim, ffn_dim and max_sequence_length must be positive".to_string());
        }
        if self.mode == EncoderMode::Adapter {
            if self.adapter_bottleneck == 0 {
                return fail("adapter_bottleneck must be positive".to_string());
            }
            if self.adapter_bottleneck >= self.dim {
                return fail(format!(
                    "adapter_bottleneck {} must be below dim {}",
                    self.adapter_bottleneck, self.dim
                ));
            }
        }
        Ok(())
    }
}

struct AdapterParams {
    down_w: Tensor,
    down_b: Tensor,
    up_w: Tensor,
    up_b: Tensor,
}

struct LayerParams {
    w_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    w_o: Tensor,
    ffn_w1: Tensor,
    ffn_b1: Tensor,
    ffn_w2: Tensor,
    ffn_b2: Tensor,
    adapter: Option<AdapterParams>,
}

/// A named trainable or frozen tensor of the model.
#[derive(Clone)]
pub struct NamedParam {
    pub name: String,
    pub tensor: Tensor,
}

/// Per-layer pooled representations of one encoded input, layer 0 first.
pub struct WordEncoding {
    layers: Vec<Tensor>,
    mask: Vec<usize>,
}

impl WordEncoding {
    /// Pooled vector after block `idx`; 0 is the embedding layer.
    pub fn layer(&self, idx: usize) -> &Tensor {
        &self.layers[idx]
    }

    pub fn final_layer(&self) -> &Tensor {
        self.layers.last().expect("at least layer 0")
    }

    /// Number of available layers, embedding layer included.
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Token positions the pooled mean ranges over.
    pub fn mask_positions(&self) -> &[usize] {
        &self.mask
    }
}

pub struct EncoderModel {
    config: EncoderConfig,
    vocab: SubwordVocabulary,
    embedding: Tensor,
    positional: Tensor,
    layers: Vec<LayerParams>,
    /// Test hook: replace attention output with the value path only, so each
    /// token attends exclusively to itself.
    self_attention_only: bool,
}

impl EncoderModel {
    /// Fresh model with uniform(-0.05, 0.05) weights from the seed. Base
    /// parameters are drawn first and adapter parameters last, so full and
    /// adapter mode share identical base weights for the same seed. Adapter
    /// up-projections start at zero: adapters are identity residuals until
    /// trained.
    pub fn init(
        config: EncoderConfig,
        vocab: SubwordVocabulary,
        seed: u64,
    ) -> Result<EncoderModel, EncoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.05..0.05)).collect();
            Tensor::param(shape, values)
        };
        let d = config.dim;
        let ffn = config.ffn_dim;
        let embedding = uniform(&[vocab.len(), d]);
        let positional = uniform(&[config.max_sequence_length, d]);
        let mut layers: Vec<LayerParams> = (0..config.num_layers)
            .map(|_| LayerParams {
                w_q: uniform(&[d, d]),
                w_k: uniform(&[d, d]),
                w_v: uniform(&[d, d]),
                w_o: uniform(&[d, d]),
                ffn_w1: uniform(&[d, ffn]),
                ffn_b1: uniform(&[ffn]),
                ffn_w2: uniform(&[ffn, d]),
                ffn_b2: uniform(&[d]),
                adapter: None,
            })
            .collect();
        if config.mode == EncoderMode::Adapter {
            let b = config.adapter_bottleneck;
            for layer in &mut layers {
                layer.adapter = Some(AdapterParams {
                    down_w: uniform(&[d, b]),
                    down_b: uniform(&[b]),
                    up_w: Tensor::param(&[b, d], vec![0.0; b * d]),
                    up_b: Tensor::param(&[d], vec![0.0; d]),
                });
            }
        }
        let model = EncoderModel {
            config,
            vocab,
            embedding,
            positional,
            layers,
            self_attention_only: false,
        };
        model.apply_mode();
        Ok(model)
    }

    fn apply_mode(&self) {
        let adapter_only = self.config.mode == EncoderMode::Adapter;
        for param in self.all_parameters() {
            let trainable = !adapter_only || param.name.contains(".adapter.");
            param.tensor.set_requires_grad(trainable);
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &SubwordVocabulary {
        &self.vocab
    }

    /// Layer count including the embedding layer (usable layer indices are
    /// `0..layer_count()`).
    pub fn layer_count(&self) -> usize {
        self.config.num_layers + 1
    }

    #[cfg(test)]
    pub(crate) fn set_self_attention_only(&mut self, value: bool) {
        self.self_attention_only = value;
    }

    /// Every parameter tensor with its stable name, in checkpoint order.
    pub fn all_parameters(&self) -> Vec<NamedParam> {
        let mut params = vec![
            NamedParam {
                name: "embedding".to_string(),
                tensor: self.embedding.clone(),
            },
            NamedParam {
                name: "positional".to_string(),
                tensor: self.positional.clone(),
            },
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut push = |suffix: &str, tensor: &Tensor| {
                params.push(NamedParam {
                    name: format!("layer{i}.{suffix}"),
                    tensor: tensor.clone(),
                });
            };
            push("attn.w_q", &layer.w_q);
            push("attn.w_k", &layer.w_k);
            push("attn.w_v", &layer.w_v);
            push("attn.w_o", &layer.w_o);
            push("ffn.w1", &layer.ffn_w1);
            push("ffn.b1", &layer.ffn_b1);
            push("ffn.w2", &layer.ffn_w2);
            push("ffn.b2", &layer.ffn_b2);
            if let Some(adapter) = &layer.adapter {
                push("adapter.down_w", &adapter.down_w);
                push("adapter.down_b", &adapter.down_b);
                push("adapter.up_w", &adapter.up_w);
                push("adapter.up_b", &adapter.up_b);
            }
        }
        params
    }

    /// The parameters the current mode trains.
    pub fn trainable_parameters(&self) -> Vec<NamedParam> {
        self.all_parameters()
            .into_iter()
            .filter(|p| p.tensor.requires_grad())
            .collect()
    }

    /// Run the stack over a framed token-id sequence; returns per-layer
    /// hidden states `[seq_len, dim]`, embedding layer first.
    fn forward(&self, tape: &Tape, ids: &[usize]) -> Vec<Tensor> {
        let token_emb = tape.gather_rows(&self.embedding, ids);
        let mut states = vec![token_emb.clone()];
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos_emb = tape.gather_rows(&self.positional, &positions);
        let mut x = tape.add(&token_emb, &pos_emb);
        let scale = 1.0 / (self.config.dim as f64).sqrt();
        for layer in &self.layers {
            let v = tape.matmul(&x, &layer.w_v);
            let ctx = if self.self_attention_only {
                v
            } else {
                let q = tape.matmul(&x, &layer.w_q);
                let k = tape.matmul(&x, &layer.w_k);
                let scores = tape.scale(&tape.matmul_nt(&q, &k), scale);
                let attn = tape.softmax_lastaxis(&scores);
                tape.matmul(&attn, &v)
            };
            let attn_out = tape.matmul(&ctx, &layer.w_o);
            x = tape.add(&x, &attn_out);
            let hidden = tape.relu(&tape.add(&tape.matmul(&x, &layer.ffn_w1), &layer.ffn_b1));
            let ffn_out = tape.add(&tape.matmul(&hidden, &layer.ffn_w2), &layer.ffn_b2);
            x = tape.add(&x, &ffn_out);
            if let Some(adapter) = &layer.adapter {
                let down =
                    tape.relu(&tape.add(&tape.matmul(&x, &adapter.down_w), &adapter.down_b));
                let up = tape.add(&tape.matmul(&down, &adapter.up_w), &adapter.up_b);
                x = tape.add(&x, &up);
            }
            states.push(x.clone());
        }
        states
    }

    fn pool(&self, tape: &Tape, states: &[Tensor], mask: &[usize]) -> WordEncoding {
        let layers = states
            .iter()
            .map(|state| {
                let rows = tape.gather_rows(state, mask);
                tape.mean_axis(&rows, 0)
            })
            .collect();
        WordEncoding {
            layers,
            mask: mask.to_vec(),
        }
    }

    /// Context-free word representation: frame `[SPEC1] sw_1..sw_m [SPEC2]`,
    /// pool over the word's subword positions only.
    pub fn encode_type(&self, tape: &Tape, word: &str) -> Result<WordEncoding, EncoderError> {
        let subwords = self.vocab.tokenize_word(word)?;
        let needed = subwords.len() + 2;
        if needed > self.config.max_sequence_length {
            return Err(EncoderError::SequenceTooLong {
                needed,
                max: self.config.max_sequence_length,
            });
        }
        let mut ids = Vec::with_capacity(needed);
        ids.push(SPEC1_ID);
        ids.extend(&subwords);
        ids.push(SPEC2_ID);
        let mask: Vec<usize> = (1..=subwords.len()).collect();
        let states = self.forward(tape, &ids);
        Ok(self.pool(tape, &states, &mask))
    }

    /// Gloss-contextualized word representation: frame
    /// `[SPEC1] sw_1..sw_m [SPEC2] g_1..g_k [SPEC2]`. The gloss is truncated
    /// from the right to fit the sequence budget; the word never is. Pooling
    /// still covers only the word's subwords.
    pub fn encode_sense(
        &self,
        tape: &Tape,
        word: &str,
        gloss: &str,
    ) -> Result<WordEncoding, EncoderError> {
        let subwords = self.vocab.tokenize_word(word)?;
        let frame_len = subwords.len() + 3;
        if frame_len > self.config.max_sequence_length {
            return Err(EncoderError::SequenceTooLong {
                needed: frame_len,
                max: self.config.max_sequence_length,
            });
        }
        let mut gloss_ids = self.vocab.tokenize_text(gloss);
        gloss_ids.truncate(self.config.max_sequence_length - frame_len);
        let mut ids = Vec::with_capacity(frame_len + gloss_ids.len());
        ids.push(SPEC1_ID);
        ids.extend(&subwords);
        ids.push(SPEC2_ID);
        ids.extend(&gloss_ids);
        ids.push(SPEC2_ID);
        let mask: Vec<usize> = (1..=subwords.len()).collect();
        let states = self.forward(tape, &ids);
        Ok(self.pool(tape, &states, &mask))
    }

    /// Sentence representation: frame the whole token sequence once and pool
    /// over every subword position (special tokens excluded). Token overflow
    /// is truncated from the right.
    pub fn encode_sentence(
        &self,
        tape: &Tape,
        sentence: &str,
    ) -> Result<WordEncoding, EncoderError> {
        let mut tokens = self.vocab.tokenize_text(sentence);
        if tokens.is_empty() {
            return Err(EncoderError::EmptySentence);
        }
        tokens.truncate(self.config.max_sequence_length - 2);
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(SPEC1_ID);
        ids.extend(&tokens);
        ids.push(SPEC2_ID);
        let mask: Vec<usize> = (1..=tokens.len()).collect();
        let states = self.forward(tape, &ids);
        Ok(self.pool(tape, &states, &mask))
    }

    /// Overwrite embedding rows from a word-vector text file (first line
    /// `<count> <dim>`, then `word v1 .. vd`). Words absent from the
    /// vocabulary are ignored; the dimension must match the model.
    pub fn load_word_vectors(&mut self, path: &Path) -> Result<usize, EncoderError> {
        checkpoint::load_word_vectors(self, path)
    }

    /// Write `manifest.json` + `weights.bin` into the directory.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), EncoderError> {
        save_checkpoint_state(&self.export_state(), dir)
    }

    /// Restore all parameters bit-exactly from a checkpoint directory. The
    /// manifest must name exactly this model's tensors with matching shapes.
    pub fn load_checkpoint(&mut self, dir: &Path) -> Result<(), EncoderError> {
        let state = load_checkpoint_state(dir)?;
        self.import_state(&state)
    }

    /// Snapshot of every parameter's values, in checkpoint order.
    pub fn export_state(&self) -> ModelState {
        ModelState {
            tensors: self
                .all_parameters()
                .into_iter()
                .map(|p| TensorState {
                    name: p.name,
                    shape: p.tensor.shape(),
                    values: p.tensor.values(),
                })
                .collect(),
        }
    }

    /// Restore a snapshot. Names and shapes must match this model exactly,
    /// in both directions.
    pub fn import_state(&mut self, state: &ModelState) -> Result<(), EncoderError> {
        let params = self.all_parameters();
        let by_name: std::collections::HashMap<&str, &NamedParam> =
            params.iter().map(|p| (p.name.as_str(), p)).collect();
        for tensor in &state.tensors {
            let param = by_name.get(tensor.name.as_str()).ok_or_else(|| {
                EncoderError::UnknownManifestTensor {
                    name: tensor.name.clone(),
                }
            })?;
            if param.tensor.shape() != tensor.shape {
                return Err(EncoderError::TensorShapeMismatch {
                    name: tensor.name.clone(),
                    expected: param.tensor.shape(),
                    found: tensor.shape.clone(),
                });
            }
        }
        let provided: std::collections::HashSet<&str> =
            state.tensors.iter().map(|t| t.name.as_str()).collect();
        for param in &params {
            if !provided.contains(param.name.as_str()) {
                return Err(EncoderError::MissingTensor {
                    name: param.name.clone(),
                });
            }
        }
        for tensor in &state.tensors {
            by_name[tensor.name.as_str()].tensor.set_values(&tensor.values);
        }
        Ok(())
    }

    pub(crate) fn embedding_tensor(&self) -> &Tensor {
        &self.embedding
    }
}
