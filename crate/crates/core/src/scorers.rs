//! The three factual-consistency scorers and the corpus-scale scoring driver.
//!
//! * greedy precision: every summary token is matched to its most similar
//!   document token by embedding cosine; the score is the mean of those maxima.
//! * conditional likelihood: mean per-token log-probability of the summary
//!   given the document.
//! * arc entailment: mean factual-class probability over the summary's
//!   dependency arcs.
//!
//! All three compare a summary to its source document; none looks at a
//! reference summary.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    cosine, truncate_document, Backend, BackendDescriptor, BackendError, BackendRegistry,
};
use crate::corpus::{Corpus, Pair};

/// Pairs scored per chunk before results are appended to the scores file.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScorerKind {
    GreedyPrecision,
    ConditionalLikelihood,
    ArcEntailment,
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 3] = [
        ScorerKind::GreedyPrecision,
        ScorerKind::ConditionalLikelihood,
        ScorerKind::ArcEntailment,
    ];

    /// Column name used in score files and tables.
    pub fn name(self) -> &'static str {
        match self {
            ScorerKind::GreedyPrecision => "greedy",
            ScorerKind::ConditionalLikelihood => "condll",
            ScorerKind::ArcEntailment => "dae",
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScorerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "greedy" | "bertscore_art" | "bertscore-art" => Ok(ScorerKind::GreedyPrecision),
            "condll" | "bartscore" => Ok(ScorerKind::ConditionalLikelihood),
            "dae" => Ok(ScorerKind::ArcEntailment),
            other => Err(format!("unknown scorer `{other}` (expected greedy, condll or dae)")),
        }
    }
}

/// Why a single pair could not be scored.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScoreError {
    #[error("summary has no tokens")]
    EmptySummary,
    #[error("summary has no dependency arcs")]
    NoArcs,
    #[error("scorer produced a non-finite value")]
    NonFinite,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactualityScore {
    pub pair_id: String,
    pub scorer: ScorerKind,
    pub backend: BackendDescriptor,
    pub value: f64,
    pub truncated: bool,
}

fn finished(
    pair: &Pair,
    scorer: ScorerKind,
    backend: &dyn Backend,
    value: f64,
    truncated: bool,
) -> Result<FactualityScore, ScoreError> {
    if !value.is_finite() {
        return Err(ScoreError::NonFinite);
    }
    Ok(FactualityScore {
        pair_id: pair.id.clone(),
        scorer,
        backend: backend.descriptor(),
        value,
        truncated,
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn score_greedy_precision(pair: &Pair, embedder: &dyn Backend) -> Result<FactualityScore, ScoreError> {
    if pair.summary.trim().is_empty() {
        return Err(ScoreError::EmptySummary);
    }
    let (document, truncated) = truncate_document(embedder, &pair.document);
    let summary = embedder.embed_tokens(&pair.summary)?;
    if summary.is_empty() {
        return Err(ScoreError::EmptySummary);
    }
    let doc = embedder.embed_tokens(&document)?;
    let best: Vec<f64> = summary
        .vectors()
        .iter()
        .map(|s| {
            doc.vectors()
                .iter()
                .map(|d| cosine(s, d))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    finished(pair, ScorerKind::GreedyPrecision, embedder, mean(&best), truncated)
}

pub fn score_conditional_likelihood(
    pair: &Pair,
    generator: &dyn Backend,
) -> Result<FactualityScore, ScoreError> {
    if pair.summary.trim().is_empty() {
        return Err(ScoreError::EmptySummary);
    }
    let (document, truncated) = truncate_document(generator, &pair.document);
    let logprobs = generator.conditional_token_logprobs(&document, &pair.summary)?;
    if logprobs.is_empty() {
        return Err(ScoreError::EmptySummary);
    }
    finished(pair, ScorerKind::ConditionalLikelihood, generator, mean(&logprobs), truncated)
}

pub fn score_arc_entailment(
    pair: &Pair,
    parser: &dyn Backend,
    entailer: &dyn Backend,
) -> Result<FactualityScore, ScoreError> {
    if pair.summary.trim().is_empty() {
        return Err(ScoreError::EmptySummary);
    }
    let arcs = parser.parse_dependencies(&pair.summary)?;
    if arcs.is_empty() {
        return Err(ScoreError::NoArcs);
    }
    let (document, truncated) = truncate_document(entailer, &pair.document);
    let probs = entailer.arc_entailment_probs(&document, &arcs)?;
    if probs.len() != arcs.len() {
        return Err(BackendError::Protocol(format!("{} probabilities for {} arcs", probs.len(), arcs.len())).into());
    }
    finished(pair, ScorerKind::ArcEntailment, entailer, mean(&probs), truncated)
}

/// Runs one scorer; the same backend serves as parser and entailer for
/// arc entailment.
pub fn score_pair(kind: ScorerKind, pair: &Pair, backend: &dyn Backend) -> Result<FactualityScore, ScoreError> {
    match kind {
        ScorerKind::GreedyPrecision => score_greedy_precision(pair, backend),
        ScorerKind::ConditionalLikelihood => score_conditional_likelihood(pair, backend),
        ScorerKind::ArcEntailment => score_arc_entailment(pair, backend, backend),
    }
}

/// One row of a scores file. A row with `value: null` is a sentinel for a
/// pair that could not be scored; `error` says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub pair_id: String,
    pub scorer: String,
    pub backend_name: String,
    pub backend_version: String,
    pub value: Option<f64>,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScoreRecord {
    pub fn from_outcome(
        pair_id: &str,
        scorer: ScorerKind,
        backend: &BackendDescriptor,
        outcome: Result<FactualityScore, ScoreError>,
    ) -> Self {
        let (value, truncated, error) = match outcome {
            Ok(s) => (Some(s.value), s.truncated, None),
            Err(e) => (None, false, Some(e.to_string())),
        };
        ScoreRecord {
            pair_id: pair_id.to_string(),
            scorer: scorer.name().to_string(),
            backend_name: backend.name.clone(),
            backend_version: backend.version.clone(),
            value,
            truncated,
            error,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.value.is_none()
    }

    fn key(&self) -> (String, String) {
        (self.pair_id.clone(), self.scorer.clone())
    }
}

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("cannot score empty corpus `{0}`")]
    EmptyCorpus(String),
    #[error("score table integrity error: {0}")]
    Integrity(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Per-pair, per-scorer scores for one corpus.
///
/// Every column covers the same pair ids, each column was produced by exactly
/// one backend `(name, version)`, and sentinel cells are kept explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    corpus_name: String,
    columns: BTreeMap<String, BTreeMap<String, ScoreRecord>>,
}

impl ScoreTable {
    pub fn from_records(
        corpus_name: impl Into<String>,
        records: impl IntoIterator<Item = ScoreRecord>,
    ) -> Result<Self, ScoringError> {
        let mut columns: BTreeMap<String, BTreeMap<String, ScoreRecord>> = BTreeMap::new();
        for rec in records {
            if let Some(v) = rec.value {
                if !v.is_finite() {
                    return Err(ScoringError::Integrity(format!(
                        "non-finite {} value for `{}`",
                        rec.scorer, rec.pair_id
                    )));
                }
            }
            let col = columns.entry(rec.scorer.clone()).or_default();
            if let Some(first) = col.values().next() {
                if (&first.backend_name, &first.backend_version) != (&rec.backend_name, &rec.backend_version) {
                    return Err(ScoringError::Integrity(format!(
                        "column `{}` mixes backends {}@{} and {}@{}",
                        rec.scorer, first.backend_name, first.backend_version, rec.backend_name, rec.backend_version
                    )));
                }
            }
            if col.contains_key(&rec.pair_id) {
                return Err(ScoringError::Integrity(format!(
                    "duplicate {} score for `{}`",
                    rec.scorer, rec.pair_id
                )));
            }
            col.insert(rec.pair_id.clone(), rec);
        }
        let mut shapes = columns.iter().map(|(name, col)| (name, col.keys().collect::<Vec<_>>()));
        if let Some((first_name, first_ids)) = shapes.next() {
            for (name, ids) in shapes {
                if ids != first_ids {
                    return Err(ScoringError::Integrity(format!(
                        "columns `{first_name}` and `{name}` cover different pair ids"
                    )));
                }
            }
        }
        Ok(ScoreTable {
            corpus_name: corpus_name.into(),
            columns,
        })
    }

    /// Keeps only the rows for the given pair ids and scorer names; errors
    /// when a requested cell is missing.
    pub fn restrict(&self, ids: &[&str], scorers: &[String]) -> Result<ScoreTable, ScoringError> {
        let mut rows = Vec::with_capacity(ids.len() * scorers.len());
        for scorer in scorers {
            let col = self
                .columns
                .get(scorer)
                .ok_or_else(|| ScoringError::Integrity(format!("no `{scorer}` column")))?;
            for id in ids {
                let rec = col.get(*id).ok_or_else(|| {
                    ScoringError::Integrity(format!("no `{scorer}` score for `{id}`"))
                })?;
                rows.push(rec.clone());
            }
        }
        ScoreTable::from_records(self.corpus_name.clone(), rows)
    }

    pub fn corpus_name(&self) -> &str {
        &self.corpus_name
    }

    pub fn scorer_names(&self) -> Vec<String> {
        self.columns.keys().cloned().collect()
    }

    pub fn column(&self, scorer: &str) -> Option<&BTreeMap<String, ScoreRecord>> {
        self.columns.get(scorer)
    }

    /// Successful values of one column; sentinels are left out.
    pub fn values(&self, scorer: &str) -> Option<BTreeMap<String, f64>> {
        self.columns.get(scorer).map(|col| {
            col.iter()
                .filter_map(|(id, r)| r.value.map(|v| (id.clone(), v)))
                .collect()
        })
    }

    pub fn pair_ids(&self) -> Vec<String> {
        self.columns
            .values()
            .next()
            .map(|c| c.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn n_pairs(&self) -> usize {
        self.columns.values().next().map_or(0, BTreeMap::len)
    }

    pub fn n_values(&self) -> usize {
        self.columns.values().map(BTreeMap::len).sum()
    }

    /// `scorer → backend descriptor string` for provenance records.
    pub fn provenance(&self) -> BTreeMap<String, String> {
        self.columns
            .iter()
            .filter_map(|(name, col)| {
                col.values()
                    .next()
                    .map(|r| (name.clone(), format!("{}@{}", r.backend_name, r.backend_version)))
            })
            .collect()
    }

    pub fn records(&self) -> impl Iterator<Item = &ScoreRecord> {
        self.columns.values().flat_map(BTreeMap::values)
    }
}

/// A scorer bound to the backend that serves it.
#[derive(Clone)]
pub struct ScorerSpec {
    pub kind: ScorerKind,
    pub backend: Arc<dyn Backend>,
}

impl fmt::Debug for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.kind, self.backend.descriptor().name)
    }
}

/// Resolves scorer names against a backend id before any work starts.
pub fn resolve_scorers(
    names: &[String],
    backend_id: &str,
    registry: &BackendRegistry,
) -> Result<Vec<ScorerSpec>, ScoringError> {
    if names.is_empty() {
        return Err(ScoringError::Config("no scorers requested".into()));
    }
    let kinds = names
        .iter()
        .map(|n| n.parse::<ScorerKind>().map_err(ScoringError::Config))
        .collect::<Result<Vec<_>, _>>()?;
    let mut seen = HashSet::new();
    if let Some(dup) = kinds.iter().find(|k| !seen.insert(**k)) {
        return Err(ScoringError::Config(format!("scorer `{dup}` requested twice")));
    }
    if !registry.contains(backend_id) {
        return Err(ScoringError::Config(format!("unknown backend `{backend_id}`")));
    }
    let backend = registry.create(backend_id)?;
    Ok(kinds
        .into_iter()
        .map(|kind| ScorerSpec {
            kind,
            backend: Arc::clone(&backend),
        })
        .collect())
}

fn run_tasks(
    pairs: &[&Pair],
    scorers: &[ScorerSpec],
    tasks: &[(usize, usize)],
    parallelism: usize,
) -> Vec<ScoreRecord> {
    let run = |&(p, s): &(usize, usize)| {
        let spec = &scorers[s];
        let pair = pairs[p];
        let outcome = score_pair(spec.kind, pair, spec.backend.as_ref());
        ScoreRecord::from_outcome(&pair.id, spec.kind, &spec.backend.descriptor(), outcome)
    };
    let serial = parallelism <= 1 || scorers.iter().any(|s| !s.backend.descriptor().concurrent);
    if serial {
        return tasks.iter().map(run).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
        // `collect` on an indexed parallel iterator keeps input order.
        Ok(pool) => pool.install(|| tasks.par_iter().map(run).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); scoring serially");
            tasks.iter().map(run).collect()
        }
    }
}

/// Every (pair, scorer) cell not in `done`, in corpus order then scorer order.
fn pending_tasks(pairs: &[&Pair], scorers: &[ScorerSpec], done: &HashSet<(String, String)>) -> Vec<(usize, usize)> {
    let mut tasks = Vec::new();
    for (p, pair) in pairs.iter().enumerate() {
        for (s, spec) in scorers.iter().enumerate() {
            if !done.contains(&(pair.id.clone(), spec.kind.name().to_string())) {
                tasks.push((p, s));
            }
        }
    }
    tasks
}

/// Scores every pair with every scorer. Per-pair failures become sentinel
/// rows; the result does not depend on `parallelism`.
pub fn score_corpus(corpus: &Corpus, scorers: &[ScorerSpec], parallelism: usize) -> Result<ScoreTable, ScoringError> {
    if corpus.is_empty() {
        return Err(ScoringError::EmptyCorpus(corpus.name().to_string()));
    }
    if scorers.is_empty() {
        return Err(ScoringError::Config("no scorers requested".into()));
    }
    let pairs: Vec<&Pair> = corpus.pairs().iter().collect();
    let tasks = pending_tasks(&pairs, scorers, &HashSet::new());
    let records = run_tasks(&pairs, scorers, &tasks, parallelism);
    ScoreTable::from_records(corpus.name(), records)
}

/// Reads a scores file. A final line without a terminating newline that does
/// not parse is treated as an interrupted write and ignored.
pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>, ScoringError> {
    let io_err = |source| ScoringError::Io {
        path: path.display().to_string(),
        source,
    };
    let text = std::fs::read_to_string(path).map_err(io_err)?;
    let complete = text.ends_with('\n') || text.is_empty();
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ScoreRecord>(line) {
            Ok(rec) => out.push(rec),
            Err(_) if !complete && i + 1 == lines.len() => {
                log::warn!("{}: ignoring incomplete final line", path.display());
            }
            Err(e) => {
                return Err(ScoringError::Integrity(format!("{} line {}: {e}", path.display(), i + 1)));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreRunSummary {
    pub already_present: usize,
    pub written: usize,
    pub sentinels: usize,
}

/// Appends scores for every missing (pair, scorer) key to `path`, skipping
/// keys already present. Rows are appended in corpus order then scorer order,
/// in chunks, so an interrupted run can be resumed.
pub fn score_corpus_to_file(
    corpus: &Corpus,
    scorers: &[ScorerSpec],
    path: &Path,
    parallelism: usize,
) -> Result<ScoreRunSummary, ScoringError> {
    if corpus.is_empty() {
        return Err(ScoringError::EmptyCorpus(corpus.name().to_string()));
    }
    let io_err = |source| ScoringError::Io {
        path: path.display().to_string(),
        source,
    };
    let existing = if path.exists() { read_scores(path)? } else { Vec::new() };
    for rec in &existing {
        if let Some(spec) = scorers.iter().find(|s| s.kind.name() == rec.scorer) {
            let d = spec.backend.descriptor();
            if (d.name.as_str(), d.version.as_str()) != (rec.backend_name.as_str(), rec.backend_version.as_str()) {
                return Err(ScoringError::Integrity(format!(
                    "{} already holds `{}` scores from {}@{}, not {}@{}",
                    path.display(),
                    rec.scorer,
                    rec.backend_name,
                    rec.backend_version,
                    d.name,
                    d.version
                )));
            }
        }
    }
    let done: HashSet<(String, String)> = existing.iter().map(ScoreRecord::key).collect();
    // Rewrite once to drop a torn final line before appending.
    if path.exists() {
        let raw = std::fs::read_to_string(path).map_err(io_err)?;
        if !raw.is_empty() && !raw.ends_with('\n') {
            let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
            for rec in &existing {
                serde_json::to_writer(&mut w, rec).map_err(|e| io_err(e.into()))?;
                w.write_all(b"\n").map_err(io_err)?;
            }
            w.flush().map_err(io_err)?;
        }
    }

    let pairs: Vec<&Pair> = corpus.pairs().iter().collect();
    let tasks = pending_tasks(&pairs, scorers, &done);
    log::info!(
        "scoring {}: {} cells pending, {} already present",
        corpus.name(),
        tasks.len(),
        done.len()
    );
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    let mut summary = ScoreRunSummary {
        already_present: done.len(),
        written: 0,
        sentinels: 0,
    };
    for chunk in tasks.chunks(CHUNK * scorers.len().max(1)) {
        for rec in run_tasks(&pairs, scorers, chunk, parallelism) {
            if rec.is_sentinel() {
                summary.sentinels += 1;
                log::warn!("{} failed on `{}`: {}", rec.scorer, rec.pair_id, rec.error.as_deref().unwrap_or(""));
            }
            serde_json::to_writer(&mut out, &rec).map_err(|e| io_err(e.into()))?;
            out.write_all(b"\n").map_err(io_err)?;
            summary.written += 1;
        }
        out.flush().map_err(io_err)?;
        log::info!("scored {}/{} cells", summary.written, tasks.len());
    }
    Ok(summary)
}

/// Loads a scores file into a table.
pub fn load_score_table(path: &Path, corpus_name: &str) -> Result<ScoreTable, ScoringError> {
    ScoreTable::from_records(corpus_name, read_scores(path)?)
}
