//! `mine`: synset dump plus frequency lists in, constraint TSV plus a
//! per-language-pair sampling summary out.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use lexspec::lexdata::{
    load_frequency_lists, load_synset_dump, mine_constraints, write_constraints, ConstraintPair,
    Lang, MiningConfig,
};
use lexspec::report::write_json_report;
use lexspec::sampler::{compute_distribution, ConstraintIndex};
use serde_json::json;

use crate::config::{Overrides, RunConfig};

#[derive(Debug, Args)]
pub struct MineArgs {
    /// JSON-lines synset dump
    #[arg(long, value_name = "FILE")]
    pub dump: PathBuf,
    /// Directory holding one `<lang>.freq` word list per mined language
    #[arg(long, value_name = "DIR")]
    pub freq_dir: PathBuf,
    /// Output constraint TSV; a `.stats.json` summary lands beside it
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

pub fn run(args: &MineArgs, config: &RunConfig) -> Result<()> {
    let languages: BTreeSet<Lang> = config.get_langs("languages")?.into_iter().collect();
    if languages.len() < 2 {
        bail!("the languages key must list at least two codes to mine");
    }
    let freqs = load_frequency_lists(&args.freq_dir, &languages)?;
    let stopwords = match config.get_path("stopwords_file") {
        Some(path) => read_word_list(&path)?,
        None => BTreeSet::new(),
    };
    let exclusion_words = match config.get_path("exclusions_file") {
        Some(path) => read_exclusions(&path)?,
        None => BTreeSet::new(),
    };
    let mining = MiningConfig {
        languages,
        seed_count: config.get_usize("seed_count")?,
        frequency_cutoff: config.get_usize("frequency_cutoff")?,
        stopwords,
        exclusion_words,
        gloss_language_priority: config.get_langs("gloss_priority")?,
    };
    let dump = load_synset_dump(&args.dump)?;
    let pairs = mine_constraints(&dump, &freqs, &mining)?;
    write_constraints(&pairs, &args.out)?;
    let alpha = config.get_f64("alpha")?;
    let stats_path = args.out.with_extension("stats.json");
    write_json_report(&pair_stats(&pairs, alpha)?, &stats_path)?;
    config.write_next_to(&args.out)?;
    println!("mined {} constraints into {}", pairs.len(), args.out.display());
    Ok(())
}

/// Per-language-pair counts with their raw (`p`) and smoothed (`q`) sampling
/// probabilities at the resolved alpha.
fn pair_stats(pairs: &[ConstraintPair], alpha: f64) -> Result<serde_json::Value> {
    let index = ConstraintIndex::build(pairs.iter().cloned());
    let counts = index.counts();
    let total = index.total();
    let mut table = serde_json::Map::new();
    if total > 0 {
        let smoothed = compute_distribution(&counts, alpha)?;
        for (key, n) in &counts {
            let entry = json!({
                "n": n,
                "p": *n as f64 / total as f64,
                "q": smoothed[key],
            });
            table.insert(key.to_string(), entry);
        }
    }
    Ok(json!({ "alpha": alpha, "total": total, "pairs": table }))
}

/// One word per line; blank lines are skipped.
fn read_word_list(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read word list {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|line| !line.is_empty())
        .map(str::to_string)
        .collect())
}

/// `word<TAB>lang` per line.
fn read_exclusions(path: &Path) -> Result<BTreeSet<(String, Lang)>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read exclusion list {}", path.display()))?;
    let mut rows = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((word, lang)) = line.split_once('\t') else {
            bail!(
                "exclusion list {}, line {}: expected word<TAB>lang",
                path.display(),
                idx + 1
            );
        };
        rows.insert((word.to_string(), Lang::new(lang.trim())?));
    }
    Ok(rows)
}
