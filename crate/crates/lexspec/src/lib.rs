//! Multilingual lexical specialization engine.
//!
//! The crate mines synonym and synonym-gloss constraints from a multilingual
//! synset dump, fine-tunes a small bi-encoder with a contrastive objective
//! (either all parameters or bottleneck adapters only), and evaluates the
//! resulting representation space on bilingual lexicon induction, cross-lingual
//! word similarity, and sentence retrieval.
//!
//! Modules, roughly in pipeline order:
//!
//! - [`lexdata`]: synset/constraint domain types and the mining pipeline.
//! - [`sampler`]: smoothed multinomial sampling of training batches over
//!   language pairs.
//! - [`autodiff`]: minimal reverse-mode automatic differentiation over dense
//!   `f64` tensors, with a finite-difference gradient checker.
//! - [`encoder`]: subword tokenization and the trainable transformer-style
//!   bi-encoder with optional adapters.
//! - [`objective`]: the contrastive loss over ordered positive pairs and
//!   in-batch negatives.
//! - [`trainer`]: AdamW training loop with quarter-epoch validation and
//!   best-checkpoint selection.
//! - [`evalsuite`]: BLI (MRR), cross-lingual similarity (Spearman), sentence
//!   retrieval (accuracy), and per-layer sweeps.
//! - [`analysis`]: typological diversity, train-test language similarity, and
//!   distribution-preserving constraint subsetting.
//! - [`synthbench`]: synthetic two-language benchmarks for end-to-end checks.

pub mod analysis;
pub mod autodiff;
pub mod encoder;
pub mod evalsuite;
pub mod lexdata;
pub mod objective;
pub mod report;
pub mod sampler;
pub mod synthbench;
pub mod trainer;
