//! `analyze`: language-sample diversity, train-test similarity and
//! distribution-preserving constraint subsets.

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Args, Subcommand};
use lexspec::analysis::{
    subset_constraints, train_test_similarity, typological_diversity, FeatureMatrix,
};
use lexspec::lexdata::{read_constraints, write_constraints};
use lexspec::report::write_json_report;
use lexspec::sampler::ConstraintIndex;
use serde_json::json;

use crate::commands::parse_lang_set;
use crate::config::{Overrides, RunConfig};

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Mean per-feature entropy of a language sample
    Diversity(DiversityArgs),
    /// Mean feature-vector cosine between train and test languages
    Similarity(SimilarityArgs),
    /// Draw a smaller constraint set with the same language-pair mix
    Subset(SubsetArgs),
}

#[derive(Debug, Args)]
pub struct DiversityArgs {
    /// Feature matrix CSV with a `lang` column followed by feature columns
    #[arg(long, value_name = "FILE")]
    pub features: PathBuf,
    /// Comma-separated language sample
    #[arg(long, value_name = "LANGS")]
    pub sample: String,
    /// Report JSON path
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct SimilarityArgs {
    /// Feature matrix CSV with a `lang` column followed by feature columns
    #[arg(long, value_name = "FILE")]
    pub features: PathBuf,
    /// Comma-separated training languages
    #[arg(long, value_name = "LANGS")]
    pub train_langs: String,
    /// Comma-separated test languages
    #[arg(long, value_name = "LANGS")]
    pub test_langs: String,
    /// Report JSON path
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct SubsetArgs {
    /// Constraint TSV to subsample
    #[arg(long, value_name = "FILE")]
    pub constraints: PathBuf,
    /// Number of constraints to keep
    #[arg(long, value_name = "N")]
    pub target: usize,
    /// Output constraint TSV; a `.stats.json` summary lands beside it
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

pub fn run(command: &AnalyzeCommand, config_file: Option<&Path>) -> Result<()> {
    match command {
        AnalyzeCommand::Diversity(args) => {
            let config = RunConfig::resolve(config_file, &args.overrides.pairs())?;
            diversity(args, &config)
        }
        AnalyzeCommand::Similarity(args) => {
            let config = RunConfig::resolve(config_file, &args.overrides.pairs())?;
            similarity(args, &config)
        }
        AnalyzeCommand::Subset(args) => {
            let config = RunConfig::resolve(config_file, &args.overrides.pairs())?;
            subset(args, &config)
        }
    }
}

fn diversity(args: &DiversityArgs, config: &RunConfig) -> Result<()> {
    let matrix = FeatureMatrix::from_csv(&args.features)?;
    let sample = parse_lang_set(&args.sample)?;
    let value = typological_diversity(&matrix, &sample)?;
    let report = json!({
        "d_typ": value,
        "feature_count": matrix.feature_count(),
        "sample": sample.iter().map(|lang| lang.to_string()).collect::<Vec<_>>(),
    });
    write_json_report(&report, &args.out)?;
    config.write_next_to(&args.out)?;
    println!("d_typ {value}");
    Ok(())
}

fn similarity(args: &SimilarityArgs, config: &RunConfig) -> Result<()> {
    let matrix = FeatureMatrix::from_csv(&args.features)?;
    let train = parse_lang_set(&args.train_langs)?;
    let test = parse_lang_set(&args.test_langs)?;
    let value = train_test_similarity(&matrix, &train, &test)?;
    let report = json!({
        "similarity": value,
        "test": test.iter().map(|lang| lang.to_string()).collect::<Vec<_>>(),
        "train": train.iter().map(|lang| lang.to_string()).collect::<Vec<_>>(),
    });
    write_json_report(&report, &args.out)?;
    config.write_next_to(&args.out)?;
    println!("similarity {value}");
    Ok(())
}

fn subset(args: &SubsetArgs, config: &RunConfig) -> Result<()> {
    let pairs = read_constraints(&args.constraints)?;
    let chosen = subset_constraints(&pairs, args.target, config.get_u64("seed")?)?;
    write_constraints(&chosen, &args.out)?;
    let counts: serde_json::Map<String, serde_json::Value> =
        ConstraintIndex::build(chosen.iter().cloned())
            .counts()
            .iter()
            .map(|(key, n)| (key.to_string(), json!(n)))
            .collect();
    let report = json!({
        "pairs": counts,
        "requested": args.target,
        "selected": chosen.len(),
        "source_total": pairs.len(),
    });
    write_json_report(&report, &args.out.with_extension("stats.json"))?;
    config.write_next_to(&args.out)?;
    println!("kept {} of {} constraints", chosen.len(), pairs.len());
    Ok(())
}
