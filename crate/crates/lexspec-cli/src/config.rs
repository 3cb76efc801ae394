//! Run configuration: a flat key=value namespace shared by every command.
//!
//! Values are resolved in precedence order built-in default < config file
//! (`--config`) < environment (`LEXSPEC_` prefix) < command-line flag, and
//! the fully-resolved set is written next to each command's outputs so a run
//! can be reproduced from its artifacts alone. Unknown keys are rejected
//! wherever they appear.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lexspec::encoder::{EncoderConfig, EncoderMode};
use lexspec::lexdata::Lang;
use lexspec::objective::PositiveSetMode;

pub const ENV_PREFIX: &str = "LEXSPEC_";

/// Every known key with its built-in default. An empty default means the key
/// is unset until a command that needs it requires a value.
const REGISTRY: &[(&str, &str)] = &[
    ("adapter_bottleneck", ""),
    ("alpha", "0.5"),
    ("batch_size", "32"),
    ("dim", "48"),
    ("epochs", "15"),
    ("exclusions_file", ""),
    ("ffn_dim", "96"),
    ("frequency_cutoff", "100000"),
    ("gloss_priority", "en"),
    ("languages", ""),
    ("lr", "2e-5"),
    ("max_sequence_length", "64"),
    ("mode", "full"),
    ("num_layers", "2"),
    ("positive_mode", "all"),
    ("seed", "17"),
    ("seed_count", "1000"),
    ("sense_level", "false"),
    ("stopwords_file", ""),
    ("tau", "0.07"),
    ("val_source_lang", ""),
    ("val_target_lang", ""),
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Resolve from all four layers. `flags` holds only the keys the user
    /// actually passed on the command line.
    pub fn resolve(config_file: Option<&Path>, flags: &[(&str, String)]) -> Result<RunConfig> {
        let mut values: BTreeMap<String, String> = REGISTRY
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        if let Some(path) = config_file {
            for (key, value) in parse_config_file(path)? {
                require_known(&values, &key, &format!("config file {}", path.display()))?;
                values.insert(key, value);
            }
        }
        for (name, value) in std::env::vars() {
            if let Some(suffix) = name.strip_prefix(ENV_PREFIX) {
                let key = suffix.to_ascii_lowercase();
                require_known(&values, &key, &format!("environment variable {name}"))?;
                values.insert(key, value);
            }
        }
        for (key, value) in flags {
            debug_assert!(values.contains_key(*key), "flag key {key} not registered");
            values.insert(key.to_string(), value.clone());
        }
        Ok(RunConfig { values })
    }

    /// Sorted `key=value` lines, the same format the config file uses.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.values {
            out.push_str(key);
            out.push('=');
            out.push_str(value);
            out.push('\n');
        }
        out
    }

    /// Write the resolved config next to an output artifact.
    pub fn write_next_to(&self, output: &Path) -> Result<()> {
        let path = resolved_config_path(output);
        std::fs::write(&path, self.render())
            .with_context(|| format!("cannot write resolved config {}", path.display()))
    }

    fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key {key} missing from registry"))
    }

    pub fn is_set(&self, key: &str) -> bool {
        !self.raw(key).is_empty()
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        let raw = self.raw(key);
        raw.parse()
            .with_context(|| format!("key {key}: cannot parse {raw:?} as an unsigned integer"))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        let raw = self.raw(key);
        raw.parse()
            .with_context(|| format!("key {key}: cannot parse {raw:?} as an unsigned integer"))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let raw = self.raw(key);
        raw.parse()
            .with_context(|| format!("key {key}: cannot parse {raw:?} as a number"))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" => Ok(true),
            "false" => Ok(false),
            other => bail!("key {key}: expected true or false, got {other:?}"),
        }
    }

    pub fn get_mode(&self) -> Result<EncoderMode> {
        match self.raw("mode") {
            "full" => Ok(EncoderMode::Full),
            "adapter" => Ok(EncoderMode::Adapter),
            other => bail!("key mode: expected full or adapter, got {other:?}"),
        }
    }

    pub fn get_positive_mode(&self) -> Result<PositiveSetMode> {
        match self.raw("positive_mode") {
            "all" => Ok(PositiveSetMode::AllInstancePairs),
            "cross_slot" => Ok(PositiveSetMode::CrossSlotOnly),
            other => bail!("key positive_mode: expected all or cross_slot, got {other:?}"),
        }
    }

    pub fn get_lang(&self, key: &str) -> Result<Lang> {
        let raw = self.raw(key);
        if raw.is_empty() {
            bail!("key {key} is required but unset");
        }
        Lang::new(raw).with_context(|| format!("key {key}"))
    }

    /// Comma-separated language codes; empty value means an empty list.
    pub fn get_langs(&self, key: &str) -> Result<Vec<Lang>> {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|code| Lang::new(code.trim()).with_context(|| format!("key {key}")))
            .collect()
    }

    /// A path-valued key; `None` when unset.
    pub fn get_path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.raw(key);
        if raw.is_empty() {
            None
        } else {
            Some(PathBuf::from(raw))
        }
    }

    /// The model shape shared by train and eval commands.
    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        let dim = self.get_usize("dim")?;
        let adapter_bottleneck = if self.is_set("adapter_bottleneck") {
            self.get_usize("adapter_bottleneck")?
        } else {
            dim.div_ceil(16)
        };
        Ok(EncoderConfig {
            dim,
            num_layers: self.get_usize("num_layers")?,
            ffn_dim: self.get_usize("ffn_dim")?,
            adapter_bottleneck,
            mode: self.get_mode()?,
            max_sequence_length: self.get_usize("max_sequence_length")?,
        })
    }
}

fn require_known(values: &BTreeMap<String, String>, key: &str, origin: &str) -> Result<()> {
    if !values.contains_key(key) {
        bail!("unknown configuration key {key:?} in {origin}");
    }
    Ok(())
}

/// `key=value` per line; blank lines and `#` comments are skipped.
fn parse_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!(
                "config file {}, line {}: expected key=value, got {line:?}",
                path.display(),
                idx + 1
            );
        };
        entries.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(entries)
}

/// `out.tsv` -> `out.config`; a directory output gets `run.config` inside.
pub fn resolved_config_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join("run.config")
    } else {
        output.with_extension("config")
    }
}

/// One optional flag per configuration key. Flags given on the command line
/// override the config file and the environment.
#[derive(Debug, Clone, clap::Args)]
pub struct Overrides {
    /// Adapter bottleneck width; defaults to dim/16 rounded up
    #[arg(long, value_name = "N")]
    adapter_bottleneck: Option<usize>,
    /// Language-pair sampling smoothing exponent
    #[arg(long, value_name = "X")]
    alpha: Option<f64>,
    /// Constraint pairs per training batch
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,
    /// Encoder embedding width
    #[arg(long, value_name = "N")]
    dim: Option<usize>,
    /// Training epochs
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// TSV of word<TAB>lang rows excluded from mining
    #[arg(long, value_name = "FILE")]
    exclusions_file: Option<String>,
    /// Feed-forward hidden width
    #[arg(long, value_name = "N")]
    ffn_dim: Option<usize>,
    /// Keep only words ranked above this frequency cutoff
    #[arg(long, value_name = "N")]
    frequency_cutoff: Option<usize>,
    /// Comma-separated gloss language preference order
    #[arg(long, value_name = "LANGS")]
    gloss_priority: Option<String>,
    /// Comma-separated languages to mine
    #[arg(long, value_name = "LANGS")]
    languages: Option<String>,
    /// Learning rate
    #[arg(long, value_name = "X")]
    lr: Option<f64>,
    /// Token positions the encoder supports
    #[arg(long, value_name = "N")]
    max_sequence_length: Option<usize>,
    /// Training mode: full or adapter
    #[arg(long, value_name = "MODE")]
    mode: Option<String>,
    /// Transformer layer count
    #[arg(long, value_name = "N")]
    num_layers: Option<usize>,
    /// Positive-pair selection: all or cross_slot
    #[arg(long, value_name = "MODE")]
    positive_mode: Option<String>,
    /// RNG seed for init, batching and subsetting
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// English seed words anchoring the mining pass
    #[arg(long, value_name = "N")]
    seed_count: Option<usize>,
    /// Encode constraint words with their glosses: true or false
    #[arg(long, value_name = "BOOL")]
    sense_level: Option<bool>,
    /// Stopword list dropped while mining, one word per line
    #[arg(long, value_name = "FILE")]
    stopwords_file: Option<String>,
    /// Softmax temperature of the training loss
    #[arg(long, value_name = "X")]
    tau: Option<f64>,
    /// Source language of the validation pairs
    #[arg(long, value_name = "LANG")]
    val_source_lang: Option<String>,
    /// Target language of the validation pairs
    #[arg(long, value_name = "LANG")]
    val_target_lang: Option<String>,
}

impl Overrides {
    /// Only the flags actually given, as registry key and value pairs.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        fn push<T: std::fmt::Display>(
            out: &mut Vec<(&'static str, String)>,
            key: &'static str,
            value: &Option<T>,
        ) {
            if let Some(value) = value {
                out.push((key, value.to_string()));
            }
        }
        let mut out = Vec::new();
        push(&mut out, "adapter_bottleneck", &self.adapter_bottleneck);
        push(&mut out, "alpha", &self.alpha);
        push(&mut out, "batch_size", &self.batch_size);
        push(&mut out, "dim", &self.dim);
        push(&mut out, "epochs", &self.epochs);
        push(&mut out, "exclusions_file", &self.exclusions_file);
        push(&mut out, "ffn_dim", &self.ffn_dim);
        push(&mut out, "frequency_cutoff", &self.frequency_cutoff);
        push(&mut out, "gloss_priority", &self.gloss_priority);
        push(&mut out, "languages", &self.languages);
        push(&mut out, "lr", &self.lr);
        push(&mut out, "max_sequence_length", &self.max_sequence_length);
        push(&mut out, "mode", &self.mode);
        push(&mut out, "num_layers", &self.num_layers);
        push(&mut out, "positive_mode", &self.positive_mode);
        push(&mut out, "seed", &self.seed);
        push(&mut out, "seed_count", &self.seed_count);
        push(&mut out, "sense_level", &self.sense_level);
        push(&mut out, "stopwords_file", &self.stopwords_file);
        push(&mut out, "tau", &self.tau);
        push(&mut out, "val_source_lang", &self.val_source_lang);
        push(&mut out, "val_target_lang", &self.val_target_lang);
        out
    }
}
