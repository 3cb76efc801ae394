//! `train`: fine-tune an encoder on a constraint file, validating against a
//! held-out translation set. Writes the best checkpoint, a JSON-lines
//! training log and the resolved config into the output directory.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use lexspec::encoder::{save_checkpoint_state, EncoderModel, SubwordVocabulary};
use lexspec::evalsuite::load_bli_dataset;
use lexspec::lexdata::read_constraints;
use lexspec::report::to_json_line;
use lexspec::trainer::{train, TrainConfig, ValidationSet, Validator};

use crate::config::{Overrides, RunConfig};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Constraint TSV produced by `mine`
    #[arg(long, value_name = "FILE")]
    pub constraints: PathBuf,
    /// Subword vocabulary, one token per line
    #[arg(long, value_name = "FILE")]
    pub vocab: PathBuf,
    /// Output directory for checkpoint, log and resolved config
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Start from an existing checkpoint instead of a fresh init
    #[arg(long, value_name = "DIR")]
    pub model_in: Option<PathBuf>,
    /// Validation translation pairs, `source<TAB>gold` per line
    #[arg(long, value_name = "FILE")]
    pub val_pairs: PathBuf,
    /// Validation candidate vocabulary, one word per line
    #[arg(long, value_name = "FILE")]
    pub val_candidates: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

pub fn run(args: &TrainArgs, config: &RunConfig) -> Result<()> {
    let train_config = TrainConfig {
        learning_rate: config.get_f64("lr")?,
        epochs: config.get_usize("epochs")?,
        batch_size: config.get_usize("batch_size")?,
        seed: config.get_u64("seed")?,
        sense_level: config.get_bool("sense_level")?,
        tau: config.get_f64("tau")?,
        alpha: config.get_f64("alpha")?,
        positive_mode: config.get_positive_mode()?,
    };
    let vocab = SubwordVocabulary::from_file(&args.vocab)?;
    let mut model = EncoderModel::init(config.encoder_config()?, vocab, train_config.seed)?;
    if let Some(dir) = &args.model_in {
        model.load_checkpoint(dir)?;
    }
    let constraints = read_constraints(&args.constraints)?;
    let dataset = load_bli_dataset(
        &args.val_pairs,
        &args.val_candidates,
        config.get_lang("val_source_lang")?,
        config.get_lang("val_target_lang")?,
    )?;
    let validator = Validator::new(vec![ValidationSet {
        name: "validation".to_string(),
        dataset,
    }])?;

    let outcome = train(&mut model, &constraints, &train_config, &validator)?;

    save_checkpoint_state(&outcome.best_state, &args.out)?;
    let mut log = String::new();
    for record in &outcome.log {
        log.push_str(&to_json_line(record)?);
        log.push('\n');
    }
    let log_path = args.out.join("log.jsonl");
    std::fs::write(&log_path, log)
        .with_context(|| format!("cannot write training log {}", log_path.display()))?;
    config.write_next_to(&args.out)?;

    if let Some(validation) = &outcome.last_validation {
        println!("final validation mrr {}", validation.per_set[0]);
    }
    println!(
        "best step {} mean relative improvement {}",
        outcome.best_step, outcome.best_metric
    );
    if let Some(reason) = &outcome.aborted {
        bail!("training aborted after {} steps: {reason}", outcome.steps_run);
    }
    Ok(())
}
