//! `eval-bli`, `eval-xlsim`, `eval-retrieval`: score a checkpoint on one
//! dataset, by default sweeping every layer and reporting the best.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;
use lexspec::encoder::{EncoderModel, SubwordVocabulary};
use lexspec::evalsuite::{
    layer_sweep, load_bli_dataset, load_retrieval_dataset, load_xlsim_dataset, EvalReport,
    EvalTask,
};
use lexspec::lexdata::Lang;
use lexspec::report::write_json_report;

use crate::config::{Overrides, RunConfig};

/// Dataset-independent eval inputs shared by the three commands.
#[derive(Debug, Args)]
pub struct EvalCommon {
    /// Checkpoint directory written by `train`
    #[arg(long, value_name = "DIR")]
    pub checkpoint: PathBuf,
    /// Subword vocabulary the checkpoint was trained with
    #[arg(long, value_name = "FILE")]
    pub vocab: PathBuf,
    /// Report JSON path
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Score only this layer instead of sweeping all of them
    #[arg(long, value_name = "N")]
    pub layer: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalBliArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    /// Test pairs, `source<TAB>gold` per line
    #[arg(long, value_name = "FILE")]
    pub pairs: PathBuf,
    /// Candidate vocabulary, one word per line
    #[arg(long, value_name = "FILE")]
    pub candidates: PathBuf,
    /// Language of the source words
    #[arg(long, value_name = "LANG")]
    pub source_lang: String,
    /// Language of the gold translations and candidates
    #[arg(long, value_name = "LANG")]
    pub target_lang: String,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvalXlsimArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    /// Scored pairs, `word1<TAB>word2<TAB>score` per line
    #[arg(long, value_name = "FILE")]
    pub pairs: PathBuf,
    /// Language of the first word in each pair
    #[arg(long, value_name = "LANG")]
    pub lang1: String,
    /// Language of the second word in each pair
    #[arg(long, value_name = "LANG")]
    pub lang2: String,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvalRetrievalArgs {
    #[command(flatten)]
    pub common: EvalCommon,
    /// Parallel sentences, `foreign<TAB>english` per line
    #[arg(long, value_name = "FILE")]
    pub pairs: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

pub fn run_bli(args: &EvalBliArgs, config: &RunConfig) -> Result<()> {
    let dataset = load_bli_dataset(
        &args.pairs,
        &args.candidates,
        Lang::new(&args.source_lang)?,
        Lang::new(&args.target_lang)?,
    )?;
    score(&args.common, config, EvalTask::Bli(&dataset), &args.pairs)
}

pub fn run_xlsim(args: &EvalXlsimArgs, config: &RunConfig) -> Result<()> {
    let dataset = load_xlsim_dataset(&args.pairs, Lang::new(&args.lang1)?, Lang::new(&args.lang2)?)?;
    score(&args.common, config, EvalTask::Xlsim(&dataset), &args.pairs)
}

pub fn run_retrieval(args: &EvalRetrievalArgs, config: &RunConfig) -> Result<()> {
    let dataset = load_retrieval_dataset(&args.pairs)?;
    score(&args.common, config, EvalTask::Retrieval(&dataset), &args.pairs)
}

fn score(common: &EvalCommon, config: &RunConfig, task: EvalTask, dataset_path: &Path) -> Result<()> {
    let vocab = SubwordVocabulary::from_file(&common.vocab)?;
    let mut model = EncoderModel::init(config.encoder_config()?, vocab, config.get_u64("seed")?)?;
    model.load_checkpoint(&common.checkpoint)?;
    let dataset_id = dataset_path.display().to_string();
    let checkpoint_id = common.checkpoint.display().to_string();
    let report = match common.layer {
        None => layer_sweep(&model, &task, &dataset_id, &checkpoint_id)?,
        Some(layer) => {
            if layer >= model.layer_count() {
                bail!(
                    "layer {layer} out of range; valid layers are 0..{}",
                    model.layer_count()
                );
            }
            let value = task.score(&model, layer)?;
            EvalReport {
                task: task.name().to_string(),
                dataset_id,
                checkpoint_id,
                per_layer: vec![value],
                best_layer: layer,
                best_score: value,
            }
        }
    };
    write_json_report(&report, &common.out)?;
    config.write_next_to(&common.out)?;
    println!(
        "{}: best layer {} score {}",
        report.task, report.best_layer, report.best_score
    );
    Ok(())
}
