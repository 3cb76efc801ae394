//! Domain model for multilingual synsets and synonym constraints, plus the
//! mining pipeline that turns a synset dump into a training set of
//! synonym(-gloss) pairs.
//!
//! Mining is a pure function of its inputs: two runs over the same dump,
//! frequency lists and config produce byte-identical constraint files.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum LexDataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dump line {line}: {message}")]
    MalformedDumpLine { line: usize, message: String },
    #[error("dump line {line}: {reason}")]
    InvalidDumpRecord { line: usize, reason: String },
    #[error("duplicate synset_id {synset_id:?}")]
    DuplicateSynsetId { synset_id: String },
    #[error("invalid language code {code:?} (expected two ASCII lowercase letters)")]
    InvalidLang { code: String },
    #[error("duplicate word {word:?} in frequency list for {lang}")]
    DuplicateFrequencyWord { lang: Lang, word: String },
    #[error("no frequency list for language {lang}")]
    MissingFrequencyList { lang: Lang },
    #[error("only {available} non-stopword entries available, {requested} seed words requested")]
    InsufficientSeedWords { available: usize, requested: usize },
    #[error("invalid mining config: {reason}")]
    InvalidConfig { reason: String },
    #[error("self-pair {word:?}@{lang} carries no signal")]
    SelfPair { word: String, lang: Lang },
    #[error("gloss language {lang} equals the word language in the same slot")]
    GlossLanguageMatchesWord { lang: Lang },
    #[error("word {word:?} contains whitespace")]
    WhitespaceInWord { word: String },
    #[error("column {column} value {value:?} contains a tab or newline")]
    SeparatorInField { column: &'static str, value: String },
    #[error("constraint file line {line}: expected {expected} columns, found {found}")]
    ColumnCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("constraint file line {line}: {reason}")]
    MalformedConstraintRow { line: usize, reason: String },
    #[error("constraint file has unexpected header {found:?}")]
    BadHeader { found: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LexDataError + '_ {
    move |source| LexDataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// ISO-639-1 style language code: exactly two ASCII lowercase letters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Lang(String);

impl Lang {
    pub fn new(code: &str) -> Result<Lang, LexDataError> {
        if code.len() == 2 && code.bytes().all(|b| b.is_ascii_lowercase()) {
            Ok(Lang(code.to_string()))
        } else {
            Err(LexDataError::InvalidLang {
                code: code.to_string(),
            })
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Lang {
    type Error = LexDataError;
    fn try_from(code: String) -> Result<Lang, LexDataError> {
        Lang::new(&code)
    }
}

impl From<Lang> for String {
    fn from(lang: Lang) -> String {
        lang.0
    }
}

impl std::str::FromStr for Lang {
    type Err = LexDataError;
    fn from_str(s: &str) -> Result<Lang, LexDataError> {
        Lang::new(s)
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One lemma occurrence inside a synset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma {
    pub lang: Lang,
    pub text: String,
    pub is_auto_translation: bool,
    pub is_redirection: bool,
}

/// One gloss (defining sentence) of a synset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Gloss {
    pub lang: Lang,
    pub text: String,
}

/// One multilingual synset from the dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynsetRecord {
    pub synset_id: String,
    pub is_named_entity: bool,
    pub lemmas: Vec<Lemma>,
    pub glosses: Vec<Gloss>,
}

impl SynsetRecord {
    fn validate(&self) -> Result<(), String> {
        if self.synset_id.is_empty() {
            return Err("empty synset_id".to_string());
        }
        for lemma in &self.lemmas {
            if lemma.text.is_empty() {
                return Err(format!("empty lemma text in synset {}", self.synset_id));
            }
        }
        Ok(())
    }
}

/// One mined synonym pair, the training atom. Slot 1 and slot 2 are in
/// canonical order: (word1, lang1) <= (word2, lang2) lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConstraintPair {
    pub word1: String,
    pub lang1: Lang,
    pub word2: String,
    pub lang2: Lang,
    pub gloss1: Option<Gloss>,
    pub gloss2: Option<Gloss>,
    pub synset_id: String,
}

impl ConstraintPair {
    /// Validating constructor. Rejects self-pairs, whitespace-bearing words
    /// and glosses whose language equals the word language in the same slot.
    pub fn new(
        word1: String,
        lang1: Lang,
        word2: String,
        lang2: Lang,
        gloss1: Option<Gloss>,
        gloss2: Option<Gloss>,
        synset_id: String,
    ) -> Result<ConstraintPair, LexDataError> {
        if word1 == word2 && lang1 == lang2 {
            return Err(LexDataError::SelfPair {
                word: word1,
                lang: lang1,
            });
        }
        for word in [&word1, &word2] {
            if word.chars().any(char::is_whitespace) {
                return Err(LexDataError::WhitespaceInWord { word: word.clone() });
            }
        }
        if let Some(g) = &gloss1 {
            if g.lang == lang1 {
                return Err(LexDataError::GlossLanguageMatchesWord {
                    lang: g.lang.clone(),
                });
            }
        }
        if let Some(g) = &gloss2 {
            if g.lang == lang2 {
                return Err(LexDataError::GlossLanguageMatchesWord {
                    lang: g.lang.clone(),
                });
            }
        }
        Ok(ConstraintPair {
            word1,
            lang1,
            word2,
            lang2,
            gloss1,
            gloss2,
            synset_id,
        })
    }
}

/// Words of one language in descending frequency order; rank is 1-based.
#[derive(Debug, Clone)]
pub struct FrequencyList {
    lang: Lang,
    words: Vec<String>,
    ranks: HashMap<String, usize>,
}

impl FrequencyList {
    pub fn new(lang: Lang, words: Vec<String>) -> Result<FrequencyList, LexDataError> {
        let mut ranks = HashMap::with_capacity(words.len());
        for (i, word) in words.iter().enumerate() {
            if ranks.insert(word.clone(), i + 1).is_some() {
                return Err(LexDataError::DuplicateFrequencyWord {
                    lang,
                    word: word.clone(),
                });
            }
        }
        Ok(FrequencyList { lang, words, ranks })
    }

    /// Load a `<lang>.freq` file: one word per line, descending frequency.
    /// Blank lines are skipped.
    pub fn from_file(lang: Lang, path: &Path) -> Result<FrequencyList, LexDataError> {
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        let mut words = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(io_err(path))?;
            let word = line.trim();
            if !word.is_empty() {
                words.push(word.to_string());
            }
        }
        FrequencyList::new(lang, words)
    }

    pub fn lang(&self) -> &Lang {
        &self.lang
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// 1-based rank, `None` when the word is absent (treated as rank infinity
    /// by the mining filters).
    pub fn rank(&self, word: &str) -> Option<usize> {
        self.ranks.get(word).copied()
    }
}

/// Load `<lang>.freq` for every requested language from one directory.
pub fn load_frequency_lists<'a>(
    dir: &Path,
    langs: impl IntoIterator<Item = &'a Lang>,
) -> Result<BTreeMap<Lang, FrequencyList>, LexDataError> {
    let mut lists = BTreeMap::new();
    for lang in langs {
        let path = dir.join(format!("{}.freq", lang));
        if !path.is_file() {
            return Err(LexDataError::MissingFrequencyList { lang: lang.clone() });
        }
        lists.insert(lang.clone(), FrequencyList::from_file(lang.clone(), &path)?);
    }
    Ok(lists)
}

/// Mining parameters.
///
/// `exclusion_words` is the test-set leakage guard: any (word, lang) listed
/// there never appears in a mined pair.
#[derive(Debug, Clone)]
pub struct MiningConfig {
    pub languages: BTreeSet<Lang>,
    /// Number of seed words taken from the top of the English frequency list.
    pub seed_count: usize,
    /// Words ranked below this cutoff in their language are filtered out.
    pub frequency_cutoff: usize,
    pub stopwords: BTreeSet<String>,
    pub exclusion_words: BTreeSet<(String, Lang)>,
    /// Preferred gloss languages in order; languages not listed are
    /// considered afterwards in dump order.
    pub gloss_language_priority: Vec<Lang>,
}

impl MiningConfig {
    fn validate(&self) -> Result<(), LexDataError> {
        if self.languages.is_empty() {
            return Err(LexDataError::InvalidConfig {
                reason: "language set is empty".to_string(),
            });
        }
        if self.seed_count == 0 {
            return Err(LexDataError::InvalidConfig {
                reason: "seed_count must be positive".to_string(),
            });
        }
        if self.frequency_cutoff == 0 {
            return Err(LexDataError::InvalidConfig {
                reason: "frequency_cutoff must be positive".to_string(),
            });
        }
        Ok(())
    }
}

/// Parse a JSON-lines synset dump. Records come back in file order; blank
/// lines are skipped; malformed lines and duplicate synset ids fail with the
/// 1-based line number.
pub fn load_synset_dump(path: &Path) -> Result<Vec<SynsetRecord>, LexDataError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    let mut seen_ids = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SynsetRecord =
            serde_json::from_str(&line).map_err(|e| LexDataError::MalformedDumpLine {
                line: idx + 1,
                message: e.to_string(),
            })?;
        record
            .validate()
            .map_err(|reason| LexDataError::InvalidDumpRecord {
                line: idx + 1,
                reason,
            })?;
        if !seen_ids.insert(record.synset_id.clone()) {
            return Err(LexDataError::DuplicateSynsetId {
                synset_id: record.synset_id,
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// First `seed_count` entries of the English frequency list after dropping
/// stopwords, order preserved.
pub fn select_seed_words(
    freq_en: &FrequencyList,
    config: &MiningConfig,
) -> Result<Vec<String>, LexDataError> {
    config.validate()?;
    if freq_en.lang.as_str() != "en" {
        return Err(LexDataError::InvalidConfig {
            reason: format!("seed words come from English, got list for {}", freq_en.lang),
        });
    }
    let survivors: Vec<&String> = freq_en
        .words
        .iter()
        .filter(|w| !config.stopwords.contains(w.as_str()))
        .collect();
    if survivors.len() < config.seed_count {
        return Err(LexDataError::InsufficientSeedWords {
            available: survivors.len(),
            requested: config.seed_count,
        });
    }
    Ok(survivors[..config.seed_count]
        .iter()
        .map(|w| w.to_string())
        .collect())
}

/// First gloss usable for a word in language `lang`: scan the priority
/// languages in order, then the remaining glosses in dump order, skipping
/// glosses written in `lang` itself.
fn pick_gloss(record: &SynsetRecord, lang: &Lang, priority: &[Lang]) -> Option<Gloss> {
    for pref in priority {
        if pref == lang {
            continue;
        }
        if let Some(g) = record.glosses.iter().find(|g| &g.lang == pref) {
            return Some(g.clone());
        }
    }
    record.glosses.iter().find(|g| &g.lang != lang).cloned()
}

/// Mine synonym constraints from a dump.
///
/// A synset participates when it contains a seed word as a lemma in any
/// configured language. Skipped entirely: named-entity synsets and synsets
/// with fewer than two glosses in configured languages. Individual lemmas are
/// dropped when flagged as auto-translation or redirection, when they contain
/// whitespace, rank below the frequency cutoff (or are unranked), or appear
/// in the exclusion list. Every unordered pair of distinct surviving lemma
/// occurrences is emitted once, in canonical slot order, with per-slot
/// glosses via [`MiningConfig::gloss_language_priority`]. Output order is
/// dump order, then lemma-pair order within each synset.
pub fn mine_constraints(
    dump: &[SynsetRecord],
    freqs: &BTreeMap<Lang, FrequencyList>,
    config: &MiningConfig,
) -> Result<Vec<ConstraintPair>, LexDataError> {
    config.validate()?;
    for lang in &config.languages {
        if !freqs.contains_key(lang) {
            return Err(LexDataError::MissingFrequencyList { lang: lang.clone() });
        }
    }
    let english = Lang::new("en").expect("static code");
    let freq_en = freqs
        .get(&english)
        .ok_or(LexDataError::MissingFrequencyList { lang: english })?;
    let seeds: HashSet<String> = select_seed_words(freq_en, config)?.into_iter().collect();

    let mut out = Vec::new();
    for record in dump {
        let contains_seed = record.lemmas.iter().any(|lemma| {
            config.languages.contains(&lemma.lang) && seeds.contains(lemma.text.as_str())
        });
        if !contains_seed || record.is_named_entity {
            continue;
        }
        let glosses_in_l = record
            .glosses
            .iter()
            .filter(|g| config.languages.contains(&g.lang))
            .count();
        if glosses_in_l < 2 {
            continue;
        }
        let surviving: Vec<&Lemma> = record
            .lemmas
            .iter()
            .filter(|lemma| {
                config.languages.contains(&lemma.lang)
                    && !lemma.is_auto_translation
                    && !lemma.is_redirection
                    && !lemma.text.chars().any(char::is_whitespace)
                    && freqs[&lemma.lang]
                        .rank(&lemma.text)
                        .is_some_and(|r| r <= config.frequency_cutoff)
                    && !config
                        .exclusion_words
                        .contains(&(lemma.text.clone(), lemma.lang.clone()))
            })
            .collect();
        let mut seen = HashSet::new();
        for i in 0..surviving.len() {
            for j in (i + 1)..surviving.len() {
                let (a, b) = (surviving[i], surviving[j]);
                if a.text == b.text && a.lang == b.lang {
                    continue;
                }
                let ((w1, l1), (w2, l2)) =
                    if (&a.text, &a.lang) <= (&b.text, &b.lang) {
                        ((&a.text, &a.lang), (&b.text, &b.lang))
                    } else {
                        ((&b.text, &b.lang), (&a.text, &a.lang))
                    };
                if !seen.insert((w1.clone(), l1.clone(), w2.clone(), l2.clone())) {
                    continue;
                }
                let pair = ConstraintPair::new(
                    w1.clone(),
                    l1.clone(),
                    w2.clone(),
                    l2.clone(),
                    pick_gloss(record, l1, &config.gloss_language_priority),
                    pick_gloss(record, l2, &config.gloss_language_priority),
                    record.synset_id.clone(),
                )?;
                out.push(pair);
            }
        }
    }
    Ok(out)
}

const TSV_HEADER: &str = "w1\tl1\tw2\tl2\tg1\tgl1\tg2\tgl2\tsynset_id";
const TSV_COLUMNS: usize = 9;

fn check_field(column: &'static str, value: &str) -> Result<(), LexDataError> {
    if value.contains(['\t', '\n', '\r']) {
        return Err(LexDataError::SeparatorInField {
            column,
            value: value.to_string(),
        });
    }
    Ok(())
}

/// Write constraints as a 9-column TSV with header. Absent glosses become
/// empty columns; a tab or newline inside any field is a write error.
pub fn write_constraints(pairs: &[ConstraintPair], path: &Path) -> Result<(), LexDataError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", TSV_HEADER).map_err(io_err(path))?;
    for pair in pairs {
        let (g1, gl1) = match &pair.gloss1 {
            Some(g) => (g.text.as_str(), g.lang.as_str()),
            None => ("", ""),
        };
        let (g2, gl2) = match &pair.gloss2 {
            Some(g) => (g.text.as_str(), g.lang.as_str()),
            None => ("", ""),
        };
        check_field("w1", &pair.word1)?;
        check_field("w2", &pair.word2)?;
        check_field("g1", g1)?;
        check_field("g2", g2)?;
        check_field("synset_id", &pair.synset_id)?;
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            pair.word1, pair.lang1, pair.word2, pair.lang2, g1, gl1, g2, gl2, pair.synset_id
        )
        .map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Read a constraint TSV written by [`write_constraints`]; the round-trip is
/// lossless.
pub fn read_constraints(path: &Path) -> Result<Vec<ConstraintPair>, LexDataError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    match lines.next() {
        Some((_, Ok(header))) if header == TSV_HEADER => {}
        Some((_, Ok(header))) => return Err(LexDataError::BadHeader { found: header }),
        Some((_, Err(e))) => return Err(io_err(path)(e)),
        None => return Err(LexDataError::BadHeader {
            found: String::new(),
        }),
    }
    let mut pairs = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(io_err(path))?;
        let line_no = idx + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != TSV_COLUMNS {
            return Err(LexDataError::ColumnCount {
                line: line_no,
                expected: TSV_COLUMNS,
                found: cols.len(),
            });
        }
        let row_err = |reason: String| LexDataError::MalformedConstraintRow {
            line: line_no,
            reason,
        };
        let lang = |code: &str| Lang::new(code).map_err(|e| row_err(e.to_string()));
        let gloss = |text: &str, code: &str| -> Result<Option<Gloss>, LexDataError> {
            match (text.is_empty(), code.is_empty()) {
                (true, true) => Ok(None),
                (false, false) => Ok(Some(Gloss {
                    lang: lang(code)?,
                    text: text.to_string(),
                })),
                _ => Err(row_err(
                    "gloss text and gloss language must be both present or both empty".to_string(),
                )),
            }
        };
        let pair = ConstraintPair::new(
            cols[0].to_string(),
            lang(cols[1])?,
            cols[2].to_string(),
            lang(cols[3])?,
            gloss(cols[4], cols[5])?,
            gloss(cols[6], cols[7])?,
            cols[8].to_string(),
        )
        .map_err(|e| row_err(e.to_string()))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lang(code: &str) -> Lang {
        Lang::new(code).unwrap()
    }

    fn lemma(code: &str, text: &str) -> Lemma {
        Lemma {
            lang: lang(code),
            text: text.to_string(),
            is_auto_translation: false,
            is_redirection: false,
        }
    }

    fn gloss(code: &str, text: &str) -> Gloss {
        Gloss {
            lang: lang(code),
            text: text.to_string(),
        }
    }

    fn freq(code: &str, words: &[&str]) -> FrequencyList {
        FrequencyList::new(lang(code), words.iter().map(|w| w.to_string()).collect()).unwrap()
    }

    fn base_config(langs: &[&str]) -> MiningConfig {
        MiningConfig {
            languages: langs.iter().map(|l| lang(l)).collect(),
            seed_count: 3,
            frequency_cutoff: 100,
            stopwords: BTreeSet::new(),
            exclusion_words: BTreeSet::new(),
            gloss_language_priority: vec![lang("en")],
        }
    }

    fn production_synset() -> SynsetRecord {
        SynsetRecord {
            synset_id: "bn:00064584n".to_string(),
            is_named_entity: false,
            lemmas: vec![lemma("en", "production"), lemma("fr", "produit")],
            glosses: vec![
                gloss("bg", "Нещо, което е направено"),
                gloss("en", "Something that is made"),
                gloss("fr", "Quelque chose qui est fabriqué"),
            ],
        }
    }

    #[test]
    fn empty_dump_loads_as_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dump.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_synset_dump(&path).unwrap().is_empty());
    }

    #[test]
    fn dump_line_parses_into_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dump.jsonl");
        let json = serde_json::to_string(&production_synset()).unwrap();
        std::fs::write(&path, format!("{}\n", json)).unwrap();
        let records = load_synset_dump(&path).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].synset_id, "bn:00064584n");
        assert_eq!(records[0], production_synset());
    }

    #[test]
    fn duplicate_synset_id_fails_with_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dump.jsonl");
        let json = serde_json::to_string(&production_synset()).unwrap();
        std::fs::write(&path, format!("{}\n{}\n", json, json)).unwrap();
        let err = load_synset_dump(&path).unwrap_err();
        assert!(err.to_string().contains("bn:00064584n"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dump.jsonl");
        let json = serde_json::to_string(&production_synset()).unwrap();
        std::fs::write(&path, format!("{}\nnot json\n", json)).unwrap();
        let err = load_synset_dump(&path).unwrap_err();
        assert!(matches!(err, LexDataError::MalformedDumpLine { line: 2, .. }), "{err}");
    }

    #[test]
    fn seed_selection_skips_stopwords() {
        let list = freq("en", &["the", "of", "cat", "dog"]);
        let mut config = base_config(&["en"]);
        config.seed_count = 2;
        config.stopwords = ["the", "of"].iter().map(|s| s.to_string()).collect();
        assert_eq!(select_seed_words(&list, &config).unwrap(), vec!["cat", "dog"]);
    }

    #[test]
    fn seed_count_zero_is_invalid() {
        let list = freq("en", &["a", "b"]);
        let mut config = base_config(&["en"]);
        config.seed_count = 0;
        assert!(matches!(
            select_seed_words(&list, &config),
            Err(LexDataError::InvalidConfig { .. })
        ));
    }

    #[test]
    fn seed_selection_without_stopwords_is_prefix() {
        let list = freq("en", &["a", "b", "c"]);
        let mut config = base_config(&["en"]);
        config.seed_count = 3;
        assert_eq!(select_seed_words(&list, &config).unwrap(), vec!["a", "b", "c"]);
    }

    #[test]
    fn too_few_seeds_reports_available_count() {
        let list = freq("en", &["the", "cat"]);
        let mut config = base_config(&["en"]);
        config.seed_count = 3;
        config.stopwords = ["the"].iter().map(|s| s.to_string()).collect();
        let err = select_seed_words(&list, &config).unwrap_err();
        assert!(matches!(
            err,
            LexDataError::InsufficientSeedWords {
                available: 1,
                requested: 3
            }
        ));
    }

    fn mining_fixture() -> (Vec<SynsetRecord>, BTreeMap<Lang, FrequencyList>, MiningConfig) {
        let dump = vec![production_synset()];
        let mut freqs = BTreeMap::new();
        freqs.insert(lang("en"), freq("en", &["production", "cat", "dog"]));
        freqs.insert(lang("fr"), freq("fr", &["produit"]));
        let mut config = base_config(&["en", "fr"]);
        config.seed_count = 3;
        (dump, freqs, config)
    }

    #[test]
    fn appendix_pair_mined_with_cross_language_glosses() {
        let (dump, freqs, config) = mining_fixture();
        let pairs = mine_constraints(&dump, &freqs, &config).unwrap();
        assert_eq!(pairs.len(), 1);
        let pair = &pairs[0];
        assert_eq!(pair.word1, "production");
        assert_eq!(pair.lang1, lang("en"));
        assert_eq!(pair.word2, "produit");
        assert_eq!(pair.lang2, lang("fr"));
        assert_eq!(pair.synset_id, "bn:00064584n");
        // slot 1 is English: priority list is exhausted, dump order gives bg
        assert_eq!(pair.gloss1.as_ref().unwrap().lang, lang("bg"));
        // slot 2 is French: English gloss is first in priority
        assert_eq!(pair.gloss2.as_ref().unwrap().lang, lang("en"));
    }

    #[test]
    fn named_entity_synsets_contribute_nothing() {
        let (mut dump, freqs, config) = mining_fixture();
        dump[0].is_named_entity = true;
        assert!(mine_constraints(&dump, &freqs, &config).unwrap().is_empty());
    }

    #[test]
    fn multiword_lemmas_are_excluded() {
        let (mut dump, mut freqs, config) = mining_fixture();
        dump[0].lemmas.push(lemma("en", "New York"));
        freqs.insert(lang("en"), freq("en", &["production", "New York", "cat"]));
        let pairs = mine_constraints(&dump, &freqs, &config).unwrap();
        assert!(pairs
            .iter()
            .all(|p| p.word1 != "New York" && p.word2 != "New York"));
        assert_eq!(pairs.len(), 1);
    }

    #[test]
    fn flagged_lemmas_are_excluded() {
        let (mut dump, mut freqs, config) = mining_fixture();
        let mut auto = lemma("fr", "fabrication");
        auto.is_auto_translation = true;
        dump[0].lemmas.push(auto);
        freqs.insert(lang("fr"), freq("fr", &["produit", "fabrication"]));
        let pairs = mine_constraints(&dump, &freqs, &config).unwrap();
        assert_eq!(pairs.len(), 1);
    }

    #[test]
    fn low_frequency_and_unranked_lemmas_are_excluded() {
        let (mut dump, mut freqs, mut config) = mining_fixture();
        dump[0].lemmas.push(lemma("fr", "rare"));
        dump[0].lemmas.push(lemma("fr", "absent"));
        freqs.insert(lang("fr"), freq("fr", &["produit", "rare"]));
        config.frequency_cutoff = 1;
        let pairs = mine_constraints(&dump, &freqs, &config).unwrap();
        assert_eq!(pairs.len(), 1, "{pairs:?}");
    }

    #[test]
    fn excluded_test_words_are_dropped() {
        let (dump, freqs, mut config) = mining_fixture();
        config
            .exclusion_words
            .insert(("produit".to_string(), lang("fr")));
        assert!(mine_constraints(&dump, &freqs, &config).unwrap().is_empty());
    }

    #[test]
    fn synsets_with_one_configured_language_gloss_are_skipped() {
        let (mut dump, freqs, config) = mining_fixture();
        dump[0].glosses.retain(|g| g.lang != lang("fr"));
        // en is the only remaining gloss in a configured language
        assert!(mine_constraints(&dump, &freqs, &config).unwrap().is_empty());
    }

    #[test]
    fn missing_frequency_list_fails_before_mining() {
        let (dump, mut freqs, config) = mining_fixture();
        freqs.remove(&lang("fr"));
        assert!(matches!(
            mine_constraints(&dump, &freqs, &config),
            Err(LexDataError::MissingFrequencyList { .. })
        ));
    }

    #[test]
    fn duplicate_lemma_occurrences_dedup() {
        let (mut dump, freqs, config) = mining_fixture();
        dump[0].lemmas.push(lemma("fr", "produit"));
        let pairs = mine_constraints(&dump, &freqs, &config).unwrap();
        assert_eq!(pairs.len(), 1);
    }

    #[test]
    fn monolingual_pairs_require_distinct_surface_forms() {
        let (mut dump, mut freqs, config) = mining_fixture();
        dump[0].lemmas.push(lemma("en", "output"));
        freqs.insert(lang("en"), freq("en", &["production", "output", "cat"]));
        let pairs = mine_constraints(&dump, &freqs, &config).unwrap();
        // (output, production), (production, produit), (output, produit)
        assert_eq!(pairs.len(), 3);
        assert!(pairs
            .iter()
            .any(|p| p.word1 == "output" && p.word2 == "production"));
    }

    #[test]
    fn mining_is_deterministic() {
        let (dump, freqs, config) = mining_fixture();
        let a = mine_constraints(&dump, &freqs, &config).unwrap();
        let b = mine_constraints(&dump, &freqs, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tsv_row_has_nine_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.tsv");
        let (dump, freqs, config) = mining_fixture();
        let pairs = mine_constraints(&dump, &freqs, &config).unwrap();
        write_constraints(&pairs, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TSV_HEADER);
        let row = lines.next().unwrap();
        assert_eq!(row.split('\t').count(), 9);
        assert!(row.starts_with("production\ten\tproduit\tfr\t"));
    }

    #[test]
    fn empty_sequence_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.tsv");
        write_constraints(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{}\n", TSV_HEADER));
        assert!(read_constraints(&path).unwrap().is_empty());
    }

    #[test]
    fn round_trip_without_glosses_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.tsv");
        let pairs: Vec<ConstraintPair> = (0..3)
            .map(|i| {
                ConstraintPair::new(
                    format!("word{i}"),
                    lang("en"),
                    format!("mot{i}"),
                    lang("fr"),
                    None,
                    None,
                    format!("bn:{i:08}n"),
                )
                .unwrap()
            })
            .collect();
        write_constraints(&pairs, &path).unwrap();
        assert_eq!(read_constraints(&path).unwrap(), pairs);
    }

    #[test]
    fn tab_in_gloss_is_a_write_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.tsv");
        let pair = ConstraintPair::new(
            "a".to_string(),
            lang("en"),
            "b".to_string(),
            lang("fr"),
            Some(gloss("de", "has\ttab")),
            None,
            "bn:1".to_string(),
        )
        .unwrap();
        assert!(matches!(
            write_constraints(&[pair], &path),
            Err(LexDataError::SeparatorInField { column: "g1", .. })
        ));
    }

    #[test]
    fn column_count_mismatch_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.tsv");
        std::fs::write(&path, format!("{}\na\ten\tb\n", TSV_HEADER)).unwrap();
        assert!(matches!(
            read_constraints(&path),
            Err(LexDataError::ColumnCount {
                line: 2,
                expected: 9,
                found: 3
            })
        ));
    }

    #[test]
    fn self_pair_is_rejected() {
        assert!(matches!(
            ConstraintPair::new(
                "same".to_string(),
                lang("en"),
                "same".to_string(),
                lang("en"),
                None,
                None,
                "bn:1".to_string(),
            ),
            Err(LexDataError::SelfPair { .. })
        ));
    }

    #[test]
    fn gloss_language_must_differ_from_word_language() {
        assert!(matches!(
            ConstraintPair::new(
                "a".to_string(),
                lang("en"),
                "b".to_string(),
                lang("fr"),
                Some(gloss("en", "an English gloss")),
                None,
                "bn:1".to_string(),
            ),
            Err(LexDataError::GlossLanguageMatchesWord { .. })
        ));
    }

    #[test]
    fn invalid_lang_codes_are_rejected() {
        assert!(Lang::new("EN").is_err());
        assert!(Lang::new("eng").is_err());
        assert!(Lang::new("").is_err());
        assert!(Lang::new("e1").is_err());
        assert!(Lang::new("en").is_ok());
    }

    proptest::proptest! {
        #[test]
        fn constraint_tsv_round_trip(
            w1 in "[a-zà-öø-þ]{1,12}",
            w2 in "[a-zà-öø-þ]{1,12}",
            g1 in proptest::option::of("[a-z ,.]{1,40}"),
            g2 in proptest::option::of("[a-z ,.]{1,40}"),
            id in "bn:[0-9]{8}[nva]",
        ) {
            let pair = ConstraintPair::new(
                w1,
                lang("en"),
                w2,
                lang("fr"),
                g1.map(|t| gloss("de", &t)),
                g2.map(|t| gloss("it", &t)),
                id,
            );
            let pair = match pair {
                Ok(p) => p,
                Err(LexDataError::SelfPair { .. }) => return Ok(()),
                Err(e) => panic!("unexpected constructor error: {e}"),
            };
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("pairs.tsv");
            write_constraints(std::slice::from_ref(&pair), &path).unwrap();
            let back = read_constraints(&path).unwrap();
            proptest::prop_assert_eq!(back, vec![pair]);
        }
    }
}
