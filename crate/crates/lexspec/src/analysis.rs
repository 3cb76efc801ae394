//! Diagnostics over language samples and constraint sets: a typological
//! diversity index, train/test language similarity, and proportional
//! subsetting of constraint sets for size ablations.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::lexdata::{ConstraintPair, Lang, LexDataError};
use crate::sampler::{ConstraintIndex, LanguagePairKey};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    MalformedCsv {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("bad feature matrix header: {reason}")]
    BadHeader { reason: String },
    #[error("feature matrix has no feature columns")]
    NoFeatures,
    #[error("feature matrix has no language rows")]
    NoLanguages,
    #[error("duplicate language {lang} in feature matrix")]
    DuplicateLanguage { lang: Lang },
    #[error("language {lang} has {found} features, expected {expected}")]
    InconsistentFeatureCount {
        lang: Lang,
        expected: usize,
        found: usize,
    },
    #[error("feature {feature:?} of language {lang} is not finite")]
    NonFiniteFeature { lang: Lang, feature: String },
    #[error("language {lang} is not in the feature matrix")]
    UnknownLanguage { lang: Lang },
    #[error("language sample is empty")]
    EmptySample,
    #[error("feature vector of language {lang} has zero norm")]
    ZeroNormFeatureVector { lang: Lang },
    #[error("subset target {target} out of range 1..={total}")]
    TargetOutOfRange { target: usize, total: usize },
    #[error("per-pair budget must be positive")]
    ZeroBudget,
    #[error(transparent)]
    Lang(#[from] LexDataError),
}

/// Per-language typological feature vectors, all of the same length.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    feature_names: Vec<String>,
    rows: BTreeMap<Lang, Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(
        feature_names: Vec<String>,
        rows: Vec<(Lang, Vec<f64>)>,
    ) -> Result<FeatureMatrix, AnalysisError> {
        if feature_names.is_empty() {
            return Err(AnalysisError::NoFeatures);
        }
        if rows.is_empty() {
            return Err(AnalysisError::NoLanguages);
        }
        let expected = feature_names.len();
        let mut map = BTreeMap::new();
        for (lang, values) in rows {
            if values.len() != expected {
                return Err(AnalysisError::InconsistentFeatureCount {
                    lang,
                    expected,
                    found: values.len(),
                });
            }
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(AnalysisError::NonFiniteFeature {
                    lang,
                    feature: feature_names[i].clone(),
                });
            }
            if map.insert(lang.clone(), values).is_some() {
                return Err(AnalysisError::DuplicateLanguage { lang });
            }
        }
        Ok(FeatureMatrix {
            feature_names,
            rows: map,
        })
    }

    /// CSV with header `lang,f1,...,fK` and one language per row.
    pub fn from_csv(path: &Path) -> Result<FeatureMatrix, AnalysisError> {
        let text = std::fs::read_to_string(path).map_err(|source| AnalysisError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, line)| (i + 1, line.trim_end_matches('\r')))
            .filter(|(_, line)| !line.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| AnalysisError::BadHeader {
            reason: "file is empty".to_string(),
        })?;
        let columns: Vec<&str> = header.split(',').map(str::trim).collect();
        if columns.first() != Some(&"lang") {
            return Err(AnalysisError::BadHeader {
                reason: format!("first column must be \"lang\", found {:?}", columns.first()),
            });
        }
        let feature_names: Vec<String> = columns[1..].iter().map(|c| c.to_string()).collect();
        if feature_names.is_empty() {
            return Err(AnalysisError::NoFeatures);
        }
        let mut rows = Vec::new();
        for (line_no, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != feature_names.len() + 1 {
                return Err(AnalysisError::MalformedCsv {
                    path: path.to_path_buf(),
                    line: line_no,
                    reason: format!(
                        "expected {} fields, found {}",
                        feature_names.len() + 1,
                        fields.len()
                    ),
                });
            }
            let lang: Lang = fields[0].parse()?;
            let mut values = Vec::with_capacity(feature_names.len());
            for field in &fields[1..] {
                let v: f64 = field.parse().map_err(|_| AnalysisError::MalformedCsv {
                    path: path.to_path_buf(),
                    line: line_no,
                    reason: format!("cannot parse feature value {field:?}"),
                })?;
                values.push(v);
            }
            rows.push((lang, values));
        }
        FeatureMatrix::new(feature_names, rows)
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn languages(&self) -> impl Iterator<Item = &Lang> {
        self.rows.keys()
    }

    pub fn vector(&self, lang: &Lang) -> Option<&[f64]> {
        self.rows.get(lang).map(Vec::as_slice)
    }

    fn require(&self, lang: &Lang) -> Result<&[f64], AnalysisError> {
        self.vector(lang)
            .ok_or_else(|| AnalysisError::UnknownLanguage { lang: lang.clone() })
    }
}

/// Base-2 Shannon entropy of values grouped by exact bit equality.
fn value_entropy(values: &[f64]) -> f64 {
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for &v in values {
        *counts.entry(v.to_bits()).or_insert(0) += 1;
    }
    let n = values.len() as f64;
    let mut entropy = 0.0;
    for &count in counts.values() {
        let p = count as f64 / n;
        entropy -= p * p.log2();
    }
    entropy
}

/// Mean over features of the entropy of the sample's feature values. Zero
/// when all sampled languages share identical vectors, and for a singleton
/// sample, where every distribution is a point mass.
pub fn typological_diversity(
    matrix: &FeatureMatrix,
    sample: &BTreeSet<Lang>,
) -> Result<f64, AnalysisError> {
    if sample.is_empty() {
        return Err(AnalysisError::EmptySample);
    }
    let vectors: Vec<&[f64]> = sample
        .iter()
        .map(|lang| matrix.require(lang))
        .collect::<Result<_, _>>()?;
    let k = matrix.feature_count();
    let mut total = 0.0;
    for f in 0..k {
        let column: Vec<f64> = vectors.iter().map(|v| v[f]).collect();
        total += value_entropy(&column);
    }
    Ok(total / k as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot / (na * nb))
}

/// Mean cosine similarity of feature vectors over all (train, test) language
/// pairs.
pub fn train_test_similarity(
    matrix: &FeatureMatrix,
    train: &BTreeSet<Lang>,
    test: &BTreeSet<Lang>,
) -> Result<f64, AnalysisError> {
    if train.is_empty() || test.is_empty() {
        return Err(AnalysisError::EmptySample);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for train_lang in train {
        let a = matrix.require(train_lang)?;
        for test_lang in test {
            let b = matrix.require(test_lang)?;
            let sim = cosine(a, b).ok_or_else(|| {
                let zero = if a.iter().all(|&x| x == 0.0) {
                    train_lang
                } else {
                    test_lang
                };
                AnalysisError::ZeroNormFeatureVector { lang: zero.clone() }
            })?;
            total += sim;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Largest-remainder apportionment of `target` over the pair counts.
/// Remainder ties go to the larger count, then to the lexicographically
/// smaller key. Quotas sum to `target` and never exceed a pair's count.
pub fn apportion_quotas(
    counts: &BTreeMap<LanguagePairKey, usize>,
    target: usize,
) -> Result<BTreeMap<LanguagePairKey, usize>, AnalysisError> {
    let total: usize = counts.values().sum();
    if target == 0 || target > total {
        return Err(AnalysisError::TargetOutOfRange { target, total });
    }
    let mut quotas: BTreeMap<LanguagePairKey, usize> = BTreeMap::new();
    let mut remainders: Vec<(usize, usize, &LanguagePairKey)> = Vec::new();
    let mut assigned = 0usize;
    for (key, &count) in counts {
        let product = target * count;
        let floor = product / total;
        let remainder = product % total;
        quotas.insert(key.clone(), floor);
        assigned += floor;
        remainders.push((remainder, count, key));
    }
    let leftover = target - assigned;
    remainders.sort_by(|a, b| {
        b.0.cmp(&a.0) // larger remainder first
            .then(b.1.cmp(&a.1)) // then larger count
            .then(a.2.cmp(b.2)) // then lexicographically smaller key
    });
    for (_, _, key) in remainders.into_iter().take(leftover) {
        *quotas.get_mut(key).expect("key present") += 1;
    }
    Ok(quotas)
}

/// Uniform subset of the constraints that preserves the relative
/// distribution over language pairs. Quotas come from largest-remainder
/// apportionment; members are drawn without replacement per pair from the
/// seeded generator, so the same seed reproduces the same subset.
pub fn subset_constraints(
    constraints: &[ConstraintPair],
    target_size: usize,
    seed: u64,
) -> Result<Vec<ConstraintPair>, AnalysisError> {
    let index = ConstraintIndex::build(constraints.iter().cloned());
    let quotas = apportion_quotas(&index.counts(), target_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subset = Vec::with_capacity(target_size);
    for (key, pool) in index.pools() {
        let quota = quotas[key];
        if quota == 0 {
            continue;
        }
        let mut picks = rand::seq::index::sample(&mut rng, pool.len(), quota).into_vec();
        picks.sort_unstable();
        subset.extend(picks.into_iter().map(|i| pool[i].clone()));
    }
    debug_assert_eq!(subset.len(), target_size);
    Ok(subset)
}

/// Constraint quota table for a balanced mining run: every unordered
/// language pair, monolingual pairs included, gets the same budget.
#[derive(Debug, Clone)]
pub struct MiningPlan {
    pub quotas: BTreeMap<LanguagePairKey, usize>,
    pub per_pair_budget: usize,
    pub total: usize,
}

pub fn fixed_budget_mining_plan(
    languages: &BTreeSet<Lang>,
    per_pair_budget: usize,
) -> Result<MiningPlan, AnalysisError> {
    if languages.is_empty() {
        return Err(AnalysisError::NoLanguages);
    }
    if per_pair_budget == 0 {
        return Err(AnalysisError::ZeroBudget);
    }
    let langs: Vec<&Lang> = languages.iter().collect();
    let mut quotas = BTreeMap::new();
    for i in 0..langs.len() {
        for j in i..langs.len() {
            quotas.insert(
                LanguagePairKey::new(langs[i].clone(), langs[j].clone()),
                per_pair_budget,
            );
        }
    }
    let total = quotas.len() * per_pair_budget;
    Ok(MiningPlan {
        quotas,
        per_pair_budget,
        total,
    })
}
