//! Evaluation metrics over encoder representations.
//!
//! Three tasks share one shape: embed some words or sentences at a chosen
//! layer, compare by cosine, reduce to a scalar score. Word translation is
//! scored by mean reciprocal rank (MRR), word similarity by Spearman rank
//! correlation against human scores, and sentence retrieval by
//! nearest-neighbour accuracy. Every task can be swept across all layers.
//!
//! Ties are never broken at random: equal cosines resolve in favor of the
//! earlier candidate, and equal layer scores in favor of the lower layer, so
//! repeated runs produce identical reports.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::autodiff::Tape;
use crate::encoder::{EncoderError, EncoderModel};
use crate::lexdata::Lang;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("{path}:{line}: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("dataset has no entries")]
    EmptyDataset,
    #[error("candidate vocabulary is empty")]
    EmptyVocabulary,
    #[error("duplicate candidate word {word:?}")]
    DuplicateCandidate { word: String },
    #[error("gold word {word:?} is not in the candidate vocabulary")]
    GoldOutsideVocabulary { word: String },
    #[error("correlation is undefined: {series} scores are constant")]
    ConstantScores { series: &'static str },
    #[error("need at least 2 scored pairs, found {found}")]
    TooFewEntries { found: usize },
    #[error("score at entry {index} is not finite")]
    NonFiniteScore { index: usize },
    #[error("score series have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("layer {layer} out of range, model has layers 0..={max}")]
    LayerOutOfRange { layer: usize, max: usize },
    #[error("cannot compute cosine against a zero-norm vector")]
    ZeroVector,
    #[error("similarity is not finite; an embedding contains non-finite values")]
    NonFiniteSimilarity,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One source word with the candidate indices of its gold translations.
#[derive(Debug, Clone)]
pub struct BliQuery {
    pub source: String,
    pub golds: Vec<usize>,
}

/// Word-translation test set: queries in one language, ranked against a fixed
/// candidate vocabulary in another. Golds must resolve inside the candidate
/// list; a gold the metric could never rank is a data error, not a zero.
#[derive(Debug, Clone)]
pub struct BliDataset {
    pub source_lang: Lang,
    pub target_lang: Lang,
    queries: Vec<BliQuery>,
    candidates: Vec<String>,
}

impl BliDataset {
    /// Groups `(source, gold)` rows by source word, preserving first-seen
    /// order of sources and of golds within a source.
    pub fn new(
        source_lang: Lang,
        target_lang: Lang,
        rows: &[(String, String)],
        candidates: Vec<String>,
    ) -> Result<BliDataset, EvalError> {
        if rows.is_empty() {
            return Err(EvalError::EmptyDataset);
        }
        if candidates.is_empty() {
            return Err(EvalError::EmptyVocabulary);
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, word) in candidates.iter().enumerate() {
            if index.insert(word, i).is_some() {
                return Err(EvalError::DuplicateCandidate { word: word.clone() });
            }
        }
        let mut queries: Vec<BliQuery> = Vec::new();
        let mut by_source: HashMap<&str, usize> = HashMap::new();
        for (source, gold) in rows {
            let gold_idx = *index
                .get(gold.as_str())
                .ok_or_else(|| EvalError::GoldOutsideVocabulary { word: gold.clone() })?;
            let q = match by_source.get(source.as_str()) {
                Some(&q) => q,
                None => {
                    by_source.insert(source, queries.len());
                    queries.push(BliQuery {
                        source: source.clone(),
                        golds: Vec::new(),
                    });
                    queries.len() - 1
                }
            };
            if !queries[q].golds.contains(&gold_idx) {
                queries[q].golds.push(gold_idx);
            }
        }
        Ok(BliDataset {
            source_lang,
            target_lang,
            queries,
            candidates,
        })
    }

    pub fn queries(&self) -> &[BliQuery] {
        &self.queries
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }
}

#[derive(Debug, Clone)]
pub struct XlsimEntry {
    pub word1: String,
    pub word2: String,
    pub human_score: f64,
}

/// Word-similarity test set: word pairs with human similarity judgements.
#[derive(Debug, Clone)]
pub struct XlsimDataset {
    pub lang1: Lang,
    pub lang2: Lang,
    entries: Vec<XlsimEntry>,
}

impl XlsimDataset {
    pub fn new(lang1: Lang, lang2: Lang, entries: Vec<XlsimEntry>) -> Result<XlsimDataset, EvalError> {
        if entries.len() < 2 {
            return Err(EvalError::TooFewEntries {
                found: entries.len(),
            });
        }
        for (index, entry) in entries.iter().enumerate() {
            if !entry.human_score.is_finite() {
                return Err(EvalError::NonFiniteScore { index });
            }
        }
        Ok(XlsimDataset {
            lang1,
            lang2,
            entries,
        })
    }

    pub fn entries(&self) -> &[XlsimEntry] {
        &self.entries
    }
}

/// Parallel sentences: each foreign sentence must retrieve its own English
/// side from among all English sides. A single pair is allowed; its only
/// candidate is the right one.
#[derive(Debug, Clone)]
pub struct RetrievalDataset {
    pairs: Vec<(String, String)>,
}

impl RetrievalDataset {
    pub fn new(pairs: Vec<(String, String)>) -> Result<RetrievalDataset, EvalError> {
        if pairs.is_empty() {
            return Err(EvalError::EmptyDataset);
        }
        Ok(RetrievalDataset { pairs })
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }
}

/// Non-blank lines of a text file with 1-based line numbers, `\r` stripped.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.trim_end_matches('\r').to_string()))
        .filter(|(_, line)| !line.trim().is_empty())
        .collect())
}

fn split_tsv(
    path: &Path,
    line_no: usize,
    line: &str,
    expected: usize,
) -> Result<Vec<String>, EvalError> {
    let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
    if fields.len() != expected {
        return Err(EvalError::MalformedRow {
            path: path.to_path_buf(),
            line: line_no,
            reason: format!("expected {expected} tab-separated fields, found {}", fields.len()),
        });
    }
    Ok(fields)
}

/// One word per line, in file order.
pub fn load_vocabulary(path: &Path) -> Result<Vec<String>, EvalError> {
    Ok(read_lines(path)?
        .into_iter()
        .map(|(_, line)| line.trim().to_string())
        .collect())
}

/// Test pairs as `source<TAB>gold`, candidates one word per line.
pub fn load_bli_dataset(
    pairs_path: &Path,
    vocab_path: &Path,
    source_lang: Lang,
    target_lang: Lang,
) -> Result<BliDataset, EvalError> {
    let mut rows = Vec::new();
    for (line_no, line) in read_lines(pairs_path)? {
        let fields = split_tsv(pairs_path, line_no, &line, 2)?;
        rows.push((fields[0].clone(), fields[1].clone()));
    }
    let candidates = load_vocabulary(vocab_path)?;
    BliDataset::new(source_lang, target_lang, &rows, candidates)
}

/// Scored pairs as `word1<TAB>word2<TAB>score`.
pub fn load_xlsim_dataset(
    path: &Path,
    lang1: Lang,
    lang2: Lang,
) -> Result<XlsimDataset, EvalError> {
    let mut entries = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let fields = split_tsv(path, line_no, &line, 3)?;
        let human_score: f64 = fields[2].parse().map_err(|_| EvalError::MalformedRow {
            path: path.to_path_buf(),
            line: line_no,
            reason: format!("cannot parse score {:?}", fields[2]),
        })?;
        if !human_score.is_finite() {
            return Err(EvalError::MalformedRow {
                path: path.to_path_buf(),
                line: line_no,
                reason: "score is not finite".to_string(),
            });
        }
        entries.push(XlsimEntry {
            word1: fields[0].clone(),
            word2: fields[1].clone(),
            human_score,
        });
    }
    XlsimDataset::new(lang1, lang2, entries)
}

/// Parallel sentences as `foreign<TAB>english`.
pub fn load_retrieval_dataset(path: &Path) -> Result<RetrievalDataset, EvalError> {
    let mut pairs = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let fields = split_tsv(path, line_no, &line, 2)?;
        pairs.push((fields[0].clone(), fields[1].clone()));
    }
    RetrievalDataset::new(pairs)
}

fn cosine_raw(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::ZeroVector);
    }
    let cos = dot / (na * nb);
    if !cos.is_finite() {
        return Err(EvalError::NonFiniteSimilarity);
    }
    Ok(cos)
}

/// Mean reciprocal rank over queries of `(embedding, gold candidate indices)`
/// against a fixed candidate embedding list. Candidates are ranked by
/// descending cosine; exact ties keep candidate order; a query with several
/// golds scores its best-ranked one.
pub fn mrr_from_embeddings(
    queries: &[(Vec<f64>, Vec<usize>)],
    candidates: &[Vec<f64>],
) -> Result<f64, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    if candidates.is_empty() {
        return Err(EvalError::EmptyVocabulary);
    }
    let mut total = 0.0;
    for (embedding, golds) in queries {
        debug_assert!(!golds.is_empty(), "query without golds");
        let mut sims = Vec::with_capacity(candidates.len());
        for candidate in candidates {
            sims.push(cosine_raw(embedding, candidate)?);
        }
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| {
            sims[b]
                .partial_cmp(&sims[a])
                .expect("cosines of finite vectors are finite")
                .then(a.cmp(&b))
        });
        let best = order
            .iter()
            .position(|idx| golds.contains(idx))
            .expect("golds are candidate indices");
        total += 1.0 / (best + 1) as f64;
    }
    Ok(total / queries.len() as f64)
}

/// Average ranks, 1-based; tied values share the mean of their positions.
fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("scores are finite"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    // One square root of the product, not a product of square roots: the
    // former keeps clean cases (e.g. vx = vy = 2) exactly representable.
    cov / (vx * vy).sqrt()
}

/// Spearman rank correlation: Pearson over fractional ranks. A constant
/// series on either side leaves the correlation undefined and is an error,
/// never a silent zero.
pub fn spearman(model_scores: &[f64], human_scores: &[f64]) -> Result<f64, EvalError> {
    if model_scores.len() != human_scores.len() {
        return Err(EvalError::LengthMismatch {
            left: model_scores.len(),
            right: human_scores.len(),
        });
    }
    if model_scores.len() < 2 {
        return Err(EvalError::TooFewEntries {
            found: model_scores.len(),
        });
    }
    for (index, &s) in model_scores.iter().chain(human_scores).enumerate() {
        if !s.is_finite() {
            return Err(EvalError::NonFiniteScore {
                index: index % model_scores.len(),
            });
        }
    }
    let constant = |xs: &[f64]| xs.iter().all(|&x| x == xs[0]);
    if constant(model_scores) {
        return Err(EvalError::ConstantScores { series: "model" });
    }
    if constant(human_scores) {
        return Err(EvalError::ConstantScores { series: "human" });
    }
    Ok(pearson(
        &fractional_ranks(model_scores),
        &fractional_ranks(human_scores),
    ))
}

/// Fraction of queries whose nearest candidate by cosine is their own pair.
/// Exact cosine ties retrieve the earliest candidate.
pub fn retrieval_accuracy_from_embeddings(
    queries: &[Vec<f64>],
    candidates: &[Vec<f64>],
) -> Result<f64, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    if queries.len() != candidates.len() {
        return Err(EvalError::LengthMismatch {
            left: queries.len(),
            right: candidates.len(),
        });
    }
    let mut hits = 0usize;
    for (i, query) in queries.iter().enumerate() {
        let mut best = 0usize;
        let mut best_sim = cosine_raw(query, &candidates[0])?;
        for (j, candidate) in candidates.iter().enumerate().skip(1) {
            let sim = cosine_raw(query, candidate)?;
            if sim > best_sim {
                best = j;
                best_sim = sim;
            }
        }
        if best == i {
            hits += 1;
        }
    }
    Ok(hits as f64 / queries.len() as f64)
}

/// Highest score wins; exact ties go to the lower layer.
pub fn select_best_layer(scores: &[f64]) -> (usize, f64) {
    assert!(!scores.is_empty(), "no layer scores");
    let mut best = 0usize;
    for (i, &score) in scores.iter().enumerate().skip(1) {
        if score > scores[best] {
            best = i;
        }
    }
    (best, scores[best])
}

fn check_layer(model: &EncoderModel, layer: usize) -> Result<(), EvalError> {
    if layer >= model.layer_count() {
        return Err(EvalError::LayerOutOfRange {
            layer,
            max: model.layer_count() - 1,
        });
    }
    Ok(())
}

/// MRR of a translation test set at one layer. The candidate vocabulary is
/// embedded once per call, not once per query.
pub fn bli_mrr(model: &EncoderModel, layer: usize, dataset: &BliDataset) -> Result<f64, EvalError> {
    check_layer(model, layer)?;
    let tape = Tape::no_grad();
    let mut candidates = Vec::with_capacity(dataset.candidates().len());
    for word in dataset.candidates() {
        candidates.push(model.encode_type(&tape, word)?.layer(layer).values());
    }
    let mut queries = Vec::with_capacity(dataset.queries().len());
    for query in dataset.queries() {
        let embedding = model.encode_type(&tape, &query.source)?.layer(layer).values();
        queries.push((embedding, query.golds.clone()));
    }
    mrr_from_embeddings(&queries, &candidates)
}

/// Spearman correlation between model cosine scores and human judgements at
/// one layer.
pub fn xlsim_spearman(
    model: &EncoderModel,
    layer: usize,
    dataset: &XlsimDataset,
) -> Result<f64, EvalError> {
    check_layer(model, layer)?;
    let tape = Tape::no_grad();
    let mut model_scores = Vec::with_capacity(dataset.entries().len());
    let mut human_scores = Vec::with_capacity(dataset.entries().len());
    for entry in dataset.entries() {
        let a = model.encode_type(&tape, &entry.word1)?.layer(layer).values();
        let b = model.encode_type(&tape, &entry.word2)?.layer(layer).values();
        model_scores.push(cosine_raw(&a, &b)?);
        human_scores.push(entry.human_score);
    }
    spearman(&model_scores, &human_scores)
}

/// Accuracy of retrieving each English sentence from its foreign side at one
/// layer.
pub fn sentence_retrieval_accuracy(
    model: &EncoderModel,
    layer: usize,
    dataset: &RetrievalDataset,
) -> Result<f64, EvalError> {
    check_layer(model, layer)?;
    let tape = Tape::no_grad();
    let mut queries = Vec::with_capacity(dataset.pairs().len());
    let mut candidates = Vec::with_capacity(dataset.pairs().len());
    for (foreign, english) in dataset.pairs() {
        queries.push(model.encode_sentence(&tape, foreign)?.layer(layer).values());
        candidates.push(model.encode_sentence(&tape, english)?.layer(layer).values());
    }
    retrieval_accuracy_from_embeddings(&queries, &candidates)
}

/// A dataset paired with the metric that scores it.
pub enum EvalTask<'a> {
    Bli(&'a BliDataset),
    Xlsim(&'a XlsimDataset),
    Retrieval(&'a RetrievalDataset),
}

impl EvalTask<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            EvalTask::Bli(_) => "bli",
            EvalTask::Xlsim(_) => "xlsim",
            EvalTask::Retrieval(_) => "retrieval",
        }
    }

    pub fn score(&self, model: &EncoderModel, layer: usize) -> Result<f64, EvalError> {
        match self {
            EvalTask::Bli(dataset) => bli_mrr(model, layer, dataset),
            EvalTask::Xlsim(dataset) => xlsim_spearman(model, layer, dataset),
            EvalTask::Retrieval(dataset) => sentence_retrieval_accuracy(model, layer, dataset),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EvalReport {
    pub task: String,
    pub dataset_id: String,
    pub checkpoint_id: String,
    pub per_layer: Vec<f64>,
    pub best_layer: usize,
    pub best_score: f64,
}

/// Scores the task at every layer, embedding layer included.
pub fn layer_sweep(
    model: &EncoderModel,
    task: &EvalTask,
    dataset_id: &str,
    checkpoint_id: &str,
) -> Result<EvalReport, EvalError> {
    let mut per_layer = Vec::with_capacity(model.layer_count());
    for layer in 0..model.layer_count() {
        per_layer.push(task.score(model, layer)?);
    }
    let (best_layer, best_score) = select_best_layer(&per_layer);
    Ok(EvalReport {
        task: task.name().to_string(),
        dataset_id: dataset_id.to_string(),
        checkpoint_id: checkpoint_id.to_string(),
        per_layer,
        best_layer,
        best_score,
    })
}
