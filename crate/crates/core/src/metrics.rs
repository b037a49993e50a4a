//! Summary-quality metrics used to compare models trained on different
//! selections: ROUGE-2 (reference-based) and BLANC-help (reference-free),
//! plus the three factuality scorers applied to generated summaries.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError};
use crate::corpus::{Corpus, Pair, Split};
use crate::filtration::FilterManifest;
use crate::scorers::{score_pair, ScorerKind};

/// Filler token used in place of the summary for the baseline pass.
pub const BLANC_FILLER_TOKEN: &str = ".";
/// Every `BLANC_MASK_GAP`-th token is a masking candidate.
pub const BLANC_MASK_GAP: usize = 4;
/// Candidates shorter than this many characters are not masked.
pub const BLANC_MIN_TOKEN_CHARS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(overlap: usize, candidate: usize, reference: usize) -> Self {
        let precision = if candidate == 0 { 0.0 } else { overlap as f64 / candidate as f64 };
        let recall = if reference == 0 { 0.0 } else { overlap as f64 / reference as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore { precision, recall, f1 }
    }
}

fn bigram_counts(tokens: &[String]) -> HashMap<(&str, &str), usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(2) {
        *counts.entry((w[0].as_str(), w[1].as_str())).or_insert(0) += 1;
    }
    counts
}

/// Lowercased Unicode-whitespace tokens.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// ROUGE-2 with clipped bigram counts. No stemming or stopword removal.
pub fn rouge2(candidate: &str, reference: &str) -> RougeScore {
    let cand = rouge_tokens(candidate);
    let refr = rouge_tokens(reference);
    let cand_counts = bigram_counts(&cand);
    let ref_counts = bigram_counts(&refr);
    let overlap: usize = cand_counts
        .iter()
        .map(|(bg, &c)| c.min(ref_counts.get(bg).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(
        overlap,
        cand.len().saturating_sub(1),
        refr.len().saturating_sub(1),
    )
}

/// Splits after `.`, `!` or `?` when followed by whitespace. Empty pieces
/// are dropped.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() {
                    let end = i + c.len_utf8();
                    out.push(&text[start..end]);
                    start = end;
                }
            }
        }
    }
    out.push(&text[start..]);
    out.into_iter().map(str::trim).filter(|s| !s.is_empty()).collect()
}

/// Token positions masked in one sentence.
pub fn blanc_mask_positions(sentence: &str) -> BTreeSet<usize> {
    sentence
        .split_whitespace()
        .enumerate()
        .filter(|(i, tok)| i % BLANC_MASK_GAP == 0 && tok.chars().count() >= BLANC_MIN_TOKEN_CHARS)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlancScore {
    pub value: f64,
    /// Sentences that had at least one masked token.
    pub n_sentences: usize,
    pub n_masked_tokens: usize,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BlancError {
    #[error("document has no sentences")]
    NoSentences,
    #[error("summary is empty")]
    EmptySummary,
    #[error("no sentence of the document has a maskable token")]
    NoMaskableTokens,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// BLANC-help: mean over document sentences of the gain in masked-token
/// accuracy when the summary, rather than a same-length filler, precedes the
/// sentence. Sentences without maskable tokens are skipped.
pub fn blanc_help(document: &str, summary: &str, backend: &dyn Backend) -> Result<BlancScore, BlancError> {
    let n_summary_tokens = summary.split_whitespace().count();
    if n_summary_tokens == 0 {
        return Err(BlancError::EmptySummary);
    }
    let sentences = split_sentences(document);
    if sentences.is_empty() {
        return Err(BlancError::NoSentences);
    }
    let filler = vec![BLANC_FILLER_TOKEN; n_summary_tokens].join(" ");
    let mut gains = Vec::with_capacity(sentences.len());
    let mut n_masked = 0;
    for sentence in sentences {
        let masks = blanc_mask_positions(sentence);
        if masks.is_empty() {
            continue;
        }
        let help = backend.masked_fill_accuracy(summary, sentence, &masks)?;
        let base = backend.masked_fill_accuracy(&filler, sentence, &masks)?;
        gains.push(help - base);
        n_masked += masks.len();
    }
    if gains.is_empty() {
        return Err(BlancError::NoMaskableTokens);
    }
    Ok(BlancScore {
        value: gains.iter().sum::<f64>() / gains.len() as f64,
        n_sentences: gains.len(),
        n_masked_tokens: n_masked,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetricKind {
    Factuality(ScorerKind),
    Blanc,
    Rouge2,
}

impl MetricKind {
    /// Column order of the comparison table.
    pub const ALL: [MetricKind; 5] = [
        MetricKind::Factuality(ScorerKind::GreedyPrecision),
        MetricKind::Factuality(ScorerKind::ConditionalLikelihood),
        MetricKind::Factuality(ScorerKind::ArcEntailment),
        MetricKind::Blanc,
        MetricKind::Rouge2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Factuality(k) => k.name(),
            MetricKind::Blanc => "blanc",
            MetricKind::Rouge2 => "rouge2",
        }
    }

    pub fn is_reference_based(self) -> bool {
        matches!(self, MetricKind::Rouge2)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rouge2" | "rouge-2" => Ok(MetricKind::Rouge2),
            "blanc" | "blanc-help" => Ok(MetricKind::Blanc),
            other => other.parse::<ScorerKind>().map(MetricKind::Factuality).map_err(|_| {
                format!("unknown metric `{s}` (expected greedy, condll, dae, blanc or rouge2)")
            }),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("corpus has no test split")]
    NoTestSplit,
    #[error("generated summaries missing for: {}", .0.join(", "))]
    Coverage(Vec<String>),
    #[error("metric `{0}` needs a backend")]
    NoBackend(String),
    #[error("manifest is for `{manifest}`, corpus is `{corpus}`")]
    ManifestMismatch { manifest: String, corpus: String },
    #[error("manifest keeps no test pairs")]
    EmptyFilteredTest,
    #[error("malformed report: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub pair_id: String,
    pub metric: String,
    /// `None` when the metric failed on this pair.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    /// Pairs with a value.
    pub n: usize,
    pub n_failed: usize,
    pub mean: Option<f64>,
}

/// Per-pair and mean metric values for one set of generated summaries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    rows: Vec<EvalRow>,
    summaries: Vec<MetricSummary>,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
        for row in &rows {
            if !groups.contains_key(&row.metric) {
                order.push(row.metric.clone());
            }
            groups.entry(row.metric.clone()).or_default().push(row.value);
        }
        let summaries = order
            .into_iter()
            .map(|metric| {
                let vals = &groups[&metric];
                let ok: Vec<f64> = vals.iter().flatten().copied().collect();
                MetricSummary {
                    n: ok.len(),
                    n_failed: vals.len() - ok.len(),
                    mean: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
                    metric,
                }
            })
            .collect();
        EvalReport { rows, summaries }
    }

    pub fn rows(&self) -> &[EvalRow] {
        &self.rows
    }

    pub fn summaries(&self) -> &[MetricSummary] {
        &self.summaries
    }

    pub fn summary(&self, metric: &str) -> Option<&MetricSummary> {
        self.summaries.iter().find(|s| s.metric == metric)
    }

    pub fn metrics(&self) -> Vec<&str> {
        self.summaries.iter().map(|s| s.metric.as_str()).collect()
    }

    /// Successful per-pair values of one metric.
    pub fn values(&self, metric: &str) -> BTreeMap<String, f64> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric)
            .filter_map(|r| r.value.map(|v| (r.pair_id.clone(), v)))
            .collect()
    }

    /// Every pair id evaluated for a metric, failed or not.
    pub fn ids(&self, metric: &str) -> BTreeSet<String> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| r.pair_id.clone())
            .collect()
    }

    /// CSV with columns `scope,pair_id,metric,n,value`: one `pair` row per
    /// (pair, metric), then one `aggregate` row per metric holding the count
    /// and the mean. Failed cells have an empty value.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scope", "pair_id", "metric", "n", "value"])?;
        for row in &self.rows {
            w.write_record(["pair", &row.pair_id, &row.metric, "", &fmt_opt(row.value)])?;
        }
        for s in &self.summaries {
            w.write_record(["aggregate", "", &s.metric, &s.n.to_string(), &fmt_opt(s.mean)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads what [`EvalReport::write_csv`] wrote. Aggregates are recomputed
    /// from the pair rows and must agree with the stored ones.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, EvalError> {
        let fmt_err = |e: csv::Error| EvalError::Format(e.to_string());
        let mut rdr = csv::Reader::from_reader(input);
        let mut rows = Vec::new();
        let mut stored: Vec<(String, usize, Option<f64>)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(fmt_err)?;
            if rec.len() != 5 {
                return Err(EvalError::Format(format!("expected 5 columns, got {}", rec.len())));
            }
            let value = parse_opt(&rec[4])?;
            match &rec[0] {
                "pair" => rows.push(EvalRow {
                    pair_id: rec[1].to_string(),
                    metric: rec[2].to_string(),
                    value,
                }),
                "aggregate" => {
                    let n = rec[3].parse().map_err(|_| EvalError::Format(format!("bad count `{}`", &rec[3])))?;
                    stored.push((rec[2].to_string(), n, value));
                }
                other => return Err(EvalError::Format(format!("unknown scope `{other}`"))),
            }
        }
        let report = EvalReport::from_rows(rows);
        for (metric, n, mean) in stored {
            let s = report
                .summary(&metric)
                .ok_or_else(|| EvalError::Format(format!("aggregate for unknown metric `{metric}`")))?;
            let close = match (s.mean, mean) {
                (Some(a), Some(b)) => (a - b).abs() <= 1e-12 * a.abs().max(1.0),
                (None, None) => true,
                _ => false,
            };
            if s.n != n || !close {
                return Err(EvalError::Format(format!("aggregate for `{metric}` disagrees with its rows")));
            }
        }
        Ok(report)
    }

    /// One comparison-table row: the mean of each metric in canonical column
    /// order, with ROUGE-2 scaled to a percentage.
    pub fn table_row(&self) -> Vec<(&'static str, Option<f64>)> {
        MetricKind::ALL
            .iter()
            .map(|m| {
                let mean = self.summary(m.name()).and_then(|s| s.mean);
                let shown = if *m == MetricKind::Rouge2 { mean.map(|v| v * 100.0) } else { mean };
                (m.name(), shown)
            })
            .collect()
    }
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str) -> Result<Option<f64>, EvalError> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse()
            .map(Some)
            .map_err(|_| EvalError::Format(format!("bad number `{s}`")))
    }
}

/// Writes comparison-table rows (`selection` label plus one column per
/// metric) for several labelled reports.
pub fn write_table_csv<W: Write>(out: W, rows: &[(String, &EvalReport)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["selection".to_string()];
    header.extend(MetricKind::ALL.iter().map(|m| m.name().to_string()));
    w.write_record(&header)?;
    for (label, report) in rows {
        let mut rec = vec![label.clone()];
        rec.extend(report.table_row().into_iter().map(|(_, v)| fmt_opt(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn metric_value(metric: MetricKind, pair: &Pair, generated: &str, backend: Option<&dyn Backend>) -> Option<f64> {
    match metric {
        MetricKind::Rouge2 => Some(rouge2(generated, &pair.summary).f1),
        MetricKind::Blanc => {
            let backend = backend?;
            match blanc_help(&pair.document, generated, backend) {
                Ok(s) => Some(s.value),
                Err(e) => {
                    log::warn!("blanc failed on `{}`: {e}", pair.id);
                    None
                }
            }
        }
        MetricKind::Factuality(kind) => {
            let backend = backend?;
            let candidate = Pair {
                summary: generated.to_string(),
                ..pair.clone()
            };
            match score_pair(kind, &candidate, backend) {
                Ok(s) => Some(s.value),
                Err(e) => {
                    log::warn!("{} failed on `{}`: {e}", metric.name(), pair.id);
                    None
                }
            }
        }
    }
}

/// Evaluates generated summaries for the corpus's test split.
///
/// ROUGE-2 is computed only over test pairs the manifest keeps (when one is
/// given); reference-free metrics always use the full test split.
pub fn evaluate_outputs(
    generated: &BTreeMap<String, String>,
    corpus: &Corpus,
    manifest: Option<&FilterManifest>,
    metrics: &[MetricKind],
    backend: Option<&dyn Backend>,
    parallelism: usize,
) -> Result<EvalReport, EvalError> {
    let test = corpus.split(Split::Test);
    if test.is_empty() {
        return Err(EvalError::NoTestSplit);
    }
    let missing: Vec<String> = test
        .ids()
        .filter(|id| !generated.contains_key(*id))
        .map(String::from)
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::Coverage(missing));
    }
    if let Some(m) = metrics.iter().find(|m| !m.is_reference_based()) {
        if backend.is_none() {
            return Err(EvalError::NoBackend(m.name().to_string()));
        }
    }
    let kept = match manifest {
        Some(m) if m.corpus_name != corpus.name() => {
            return Err(EvalError::ManifestMismatch {
                manifest: m.corpus_name.clone(),
                corpus: corpus.name().to_string(),
            })
        }
        Some(m) => Some(m.kept_set()),
        None => None,
    };

    let mut tasks: Vec<(MetricKind, &Pair)> = Vec::new();
    for &metric in metrics {
        let before = tasks.len();
        for pair in test.pairs() {
            let included = !metric.is_reference_based()
                || kept.as_ref().is_none_or(|k| k.contains(pair.id.as_str()));
            if included {
                tasks.push((metric, pair));
            }
        }
        if metric.is_reference_based() && tasks.len() == before {
            return Err(EvalError::EmptyFilteredTest);
        }
    }
    let run = |(metric, pair): &(MetricKind, &Pair)| EvalRow {
        pair_id: pair.id.clone(),
        metric: metric.name().to_string(),
        value: metric_value(*metric, pair, &generated[&pair.id], backend),
    };
    let serial = parallelism <= 1 || backend.is_some_and(|b| !b.descriptor().concurrent);
    let rows: Vec<EvalRow> = if serial {
        tasks.iter().map(run).collect()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
            Ok(pool) => pool.install(|| tasks.par_iter().map(run).collect()),
            Err(_) => tasks.iter().map(run).collect(),
        }
    };
    Ok(EvalReport::from_rows(rows))
}
