//! Experiment scaffolding: score distributions, threshold sweeps behind an
//! evaluation hook, and paired comparisons of two evaluated selections.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Backend;
use crate::corpus::Corpus;
use crate::filtration::{
    apply_manifest, intersect_filter, keep_count, random_manifest, single_scorer_filter, FilterError, FilterManifest,
};
use crate::metrics::{blanc_help, fmt_opt, EvalReport, MetricKind};
use crate::scorers::{score_pair, ScoreTable};
use crate::stats::{wilcoxon_signed_rank, StatsError, WilcoxonResult};

/// Significance level for declaring a winner.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
/// Threshold grid used when a sweep does not specify one.
pub const DEFAULT_SWEEP_GRID: [f64; 4] = [0.1, 0.25, 0.4, 0.55];
pub const DEFAULT_HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExperimentError {
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("score table has no values for `{0}`")]
    EmptyColumn(String),
    #[error("reports differ in coverage: {0}")]
    Coverage(String),
    #[error("{0}")]
    Hook(String),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Linear-interpolation quantile (type 7) of ascending `sorted` values.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        FiveNumber {
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin edges, one more than `counts`. Bins are half-open except the
    /// last, which includes the maximum.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Fixed-width bins spanning `[min, max]`. A constant column gets a
    /// single zero-width bin.
    pub fn of(values: &[f64], bins: usize) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi == lo || bins <= 1 {
            return Histogram {
                edges: vec![lo, hi],
                counts: vec![values.len()],
            };
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + i as f64 * width })
            .collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        Histogram { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerDistribution {
    pub scorer: String,
    pub n: usize,
    pub summary: FiveNumber,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DistributionReport {
    pub corpus_name: String,
    pub scorers: Vec<ScorerDistribution>,
}

impl DistributionReport {
    /// `corpus,scorer,n,min,q1,median,q3,max`
    pub fn write_summary_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["corpus", "scorer", "n", "min", "q1", "median", "q3", "max"])?;
        for d in &self.scorers {
            let s = d.summary;
            w.write_record([
                self.corpus_name.clone(),
                d.scorer.clone(),
                d.n.to_string(),
                s.min.to_string(),
                s.q1.to_string(),
                s.median.to_string(),
                s.q3.to_string(),
                s.max.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `corpus,scorer,bin,lo,hi,count`
    pub fn write_histogram_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["corpus", "scorer", "bin", "lo", "hi", "count"])?;
        for d in &self.scorers {
            for (i, count) in d.histogram.counts.iter().enumerate() {
                w.write_record([
                    self.corpus_name.clone(),
                    d.scorer.clone(),
                    i.to_string(),
                    d.histogram.edges[i].to_string(),
                    d.histogram.edges[i + 1].to_string(),
                    count.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Five-number summaries and histograms of each scorer's successful values.
pub fn distribution_report(table: &ScoreTable, bins: usize) -> Result<DistributionReport> {
    let mut scorers = Vec::new();
    for name in table.scorer_names() {
        let values: Vec<f64> = table.values(&name).unwrap_or_default().into_values().collect();
        if values.is_empty() {
            return Err(ExperimentError::EmptyColumn(name));
        }
        scorers.push(ScorerDistribution {
            n: values.len(),
            summary: FiveNumber::of(&values),
            histogram: Histogram::of(&values, bins),
            scorer: name,
        });
    }
    Ok(DistributionReport {
        corpus_name: table.corpus_name().to_string(),
        scorers,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "scorer")]
pub enum SweepStrategy {
    SingleScorer(String),
    Combined,
    Random,
}

impl fmt::Display for SweepStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepStrategy::SingleScorer(s) => write!(f, "single:{s}"),
            SweepStrategy::Combined => f.write_str("combined"),
            SweepStrategy::Random => f.write_str("random"),
        }
    }
}

impl FromStr for SweepStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "combined" | "intersection" => Ok(SweepStrategy::Combined),
            "random" => Ok(SweepStrategy::Random),
            _ => match s.strip_prefix("single:") {
                Some(name) if !name.is_empty() => Ok(SweepStrategy::SingleScorer(name.to_string())),
                _ => Err(format!("unknown strategy `{s}` (expected combined, random or single:<scorer>)")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Drop fractions, strictly ascending in (0, 1).
    pub thresholds: Vec<f64>,
    pub strategies: Vec<SweepStrategy>,
    pub seed: u64,
}

impl SweepSpec {
    pub fn with_default_grid(strategies: Vec<SweepStrategy>, seed: u64) -> Self {
        SweepSpec {
            thresholds: DEFAULT_SWEEP_GRID.to_vec(),
            strategies,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(ExperimentError::InvalidSweep("no thresholds".into()));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(ExperimentError::InvalidSweep(format!("threshold {t} outside (0, 1)")));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ExperimentError::InvalidSweep("thresholds must be strictly ascending".into()));
        }
        if self.strategies.is_empty() {
            return Err(ExperimentError::InvalidSweep("no strategies".into()));
        }
        let distinct: BTreeSet<_> = self.strategies.iter().collect();
        if distinct.len() != self.strategies.len() {
            return Err(ExperimentError::InvalidSweep("duplicate strategy".into()));
        }
        Ok(())
    }
}

/// Boundary between a selection and the downstream numbers reported for it.
/// A real fine-tune-and-evaluate harness plugs in here.
pub trait EvalHook: Send + Sync {
    /// Metric columns, in output order.
    fn metric_names(&self) -> Vec<String>;

    /// Metric values for a model trained on `selection`. Missing keys are
    /// written as empty cells.
    fn evaluate(&self, selection: &Corpus) -> std::result::Result<BTreeMap<String, f64>, String>;
}

/// Desk-scale stand-in for training: scores the selection's own reference
/// summaries with reference-free metrics, without learning anything.
pub struct MockTrainProxy {
    backend: Arc<dyn Backend>,
    metrics: Vec<MetricKind>,
}

impl MockTrainProxy {
    pub fn new(backend: Arc<dyn Backend>, metrics: Vec<MetricKind>) -> Result<Self> {
        if let Some(m) = metrics.iter().find(|m| m.is_reference_based()) {
            return Err(ExperimentError::Hook(format!(
                "`{m}` compares against references and is meaningless on references"
            )));
        }
        Ok(MockTrainProxy { backend, metrics })
    }

    /// Every reference-free metric.
    pub fn reference_free(backend: Arc<dyn Backend>) -> Self {
        let metrics = MetricKind::ALL.into_iter().filter(|m| !m.is_reference_based()).collect();
        MockTrainProxy { backend, metrics }
    }
}

impl EvalHook for MockTrainProxy {
    fn metric_names(&self) -> Vec<String> {
        self.metrics.iter().map(|m| m.name().to_string()).collect()
    }

    fn evaluate(&self, selection: &Corpus) -> std::result::Result<BTreeMap<String, f64>, String> {
        let backend = self.backend.as_ref();
        let mut out = BTreeMap::new();
        for &metric in &self.metrics {
            let values: Vec<f64> = selection
                .pairs()
                .iter()
                .filter_map(|pair| match metric {
                    MetricKind::Factuality(kind) => score_pair(kind, pair, backend).ok().map(|s| s.value),
                    MetricKind::Blanc => blanc_help(&pair.document, &pair.summary, backend).ok().map(|s| s.value),
                    MetricKind::Rouge2 => None,
                })
                .collect();
            if !values.is_empty() {
                out.insert(metric.name().to_string(), values.iter().sum::<f64>() / values.len() as f64);
            }
        }
        Ok(out)
    }
}

/// Runs an external training harness once per selection. The selection is
/// written to the child's stdin as corpus JSONL; the child prints one JSON
/// object mapping metric names to numbers on stdout.
pub struct CommandHook {
    command: Vec<String>,
    metrics: Vec<String>,
}

impl CommandHook {
    pub fn new(command: Vec<String>, metrics: Vec<String>) -> Result<Self> {
        if command.is_empty() {
            return Err(ExperimentError::Hook("empty hook command".into()));
        }
        Ok(CommandHook { command, metrics })
    }
}

impl EvalHook for CommandHook {
    fn metric_names(&self) -> Vec<String> {
        self.metrics.clone()
    }

    fn evaluate(&self, selection: &Corpus) -> std::result::Result<BTreeMap<String, f64>, String> {
        use std::process::{Command, Stdio};
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| format!("cannot start `{}`: {e}", self.command[0]))?;
        let mut input = Vec::new();
        selection.write_jsonl(&mut input).map_err(|e| e.to_string())?;
        let mut stdin = child.stdin.take().ok_or("hook stdin unavailable")?;
        let writer = std::thread::spawn(move || stdin.write_all(&input));
        let output = child.wait_with_output().map_err(|e| e.to_string())?;
        writer
            .join()
            .map_err(|_| "hook writer panicked".to_string())?
            .map_err(|e| format!("writing selection to hook: {e}"))?;
        if !output.status.success() {
            return Err(format!("hook exited with {}", output.status));
        }
        serde_json::from_slice(&output.stdout).map_err(|e| format!("hook output is not a metric map: {e}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: SweepStrategy,
    pub threshold: f64,
    pub n_selected: Option<usize>,
    pub ratio: Option<f64>,
    pub metrics: BTreeMap<String, f64>,
    pub manifest_hash: Option<String>,
    /// Set when the cell failed; the sweep carries on.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub metric_names: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn row(&self, strategy: &SweepStrategy, threshold: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| &r.strategy == strategy && r.threshold == threshold)
    }

    /// `strategy,threshold,n_selected,ratio,<metrics…>,manifest_hash,error`
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["strategy".to_string(), "threshold".into(), "n_selected".into(), "ratio".into()];
        header.extend(self.metric_names.iter().cloned());
        header.extend(["manifest_hash".to_string(), "error".into()]);
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                row.strategy.to_string(),
                row.threshold.to_string(),
                row.n_selected.map(|n| n.to_string()).unwrap_or_default(),
                fmt_opt(row.ratio),
            ];
            rec.extend(self.metric_names.iter().map(|m| fmt_opt(row.metrics.get(m).copied())));
            rec.push(row.manifest_hash.clone().unwrap_or_default());
            rec.push(row.error.clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn sweep_manifest(
    corpus: &Corpus,
    table: &ScoreTable,
    strategy: &SweepStrategy,
    threshold: f64,
    seed: u64,
) -> std::result::Result<FilterManifest, FilterError> {
    match strategy {
        SweepStrategy::Combined => intersect_filter(table, threshold),
        SweepStrategy::SingleScorer(name) => single_scorer_filter(table, name, threshold),
        // Same proportion as a single-scorer cut at this threshold.
        SweepStrategy::Random => random_manifest(corpus, keep_count(corpus.len(), threshold), seed),
    }
}

fn run_cell(
    corpus: &Corpus,
    table: &ScoreTable,
    strategy: &SweepStrategy,
    threshold: f64,
    seed: u64,
    hook: &dyn EvalHook,
) -> SweepRow {
    let mut row = SweepRow {
        strategy: strategy.clone(),
        threshold,
        n_selected: None,
        ratio: None,
        metrics: BTreeMap::new(),
        manifest_hash: None,
        error: None,
    };
    let manifest = match sweep_manifest(corpus, table, strategy, threshold, seed) {
        Ok(m) => m,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.n_selected = Some(manifest.kept_ids.len());
    row.ratio = Some(manifest.selection_ratio);
    row.manifest_hash = Some(manifest.content_hash());
    match apply_manifest(corpus, &manifest).map_err(|e| e.to_string()).and_then(|sel| hook.evaluate(&sel)) {
        Ok(metrics) => row.metrics = metrics,
        Err(e) => row.error = Some(e),
    }
    row
}

/// One row per (strategy, threshold), in spec order. Cells that fail are
/// recorded with an error and do not stop the sweep.
pub fn run_sweep(
    corpus: &Corpus,
    table: &ScoreTable,
    spec: &SweepSpec,
    hook: &dyn EvalHook,
    parallelism: usize,
) -> Result<SweepReport> {
    spec.validate()?;
    let cells: Vec<(&SweepStrategy, f64)> = spec
        .strategies
        .iter()
        .flat_map(|s| spec.thresholds.iter().map(move |&t| (s, t)))
        .collect();
    let run = |&(s, t): &(&SweepStrategy, f64)| {
        let row = run_cell(corpus, table, s, t, spec.seed, hook);
        if let Some(e) = &row.error {
            log::warn!("sweep cell {s} @ {t} failed: {e}");
        }
        row
    };
    let rows = if parallelism <= 1 {
        cells.iter().map(run).collect()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
            Ok(pool) => pool.install(|| cells.par_iter().map(run).collect()),
            Err(_) => cells.iter().map(run).collect(),
        }
    };
    Ok(SweepReport {
        metric_names: hook.metric_names(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    A,
    B,
    Tie,
}

impl Winner {
    fn swapped(self) -> Self {
        match self {
            Winner::A => Winner::B,
            Winner::B => Winner::A,
            Winner::Tie => Winner::Tie,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    /// Pairs with a value in both reports.
    pub n: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub wilcoxon: Option<WilcoxonResult>,
    pub winner: Winner,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub label_a: String,
    pub label_b: String,
    pub metrics: Vec<MetricComparison>,
}

impl ComparisonReport {
    pub fn metric(&self, name: &str) -> Option<&MetricComparison> {
        self.metrics.iter().find(|m| m.metric == name)
    }

    /// The same comparison with the roles of the two reports exchanged.
    pub fn swapped(&self) -> Self {
        ComparisonReport {
            label_a: self.label_b.clone(),
            label_b: self.label_a.clone(),
            metrics: self
                .metrics
                .iter()
                .map(|m| MetricComparison {
                    mean_a: m.mean_b,
                    mean_b: m.mean_a,
                    winner: m.winner.swapped(),
                    ..m.clone()
                })
                .collect(),
        }
    }

    /// `metric,n,label_a,label_b,mean_a,mean_b,w_statistic,p_value,method,winner,note`
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "metric", "n", "label_a", "label_b", "mean_a", "mean_b", "w_statistic", "p_value", "method", "winner", "note",
        ])?;
        for m in &self.metrics {
            let winner = match m.winner {
                Winner::A => self.label_a.as_str(),
                Winner::B => self.label_b.as_str(),
                Winner::Tie => "tie",
            };
            let method = m.wilcoxon.map(|wx| match wx.method {
                crate::stats::WilcoxonMethod::Exact => "exact",
                crate::stats::WilcoxonMethod::NormalApprox => "normal_approx",
            });
            w.write_record([
                m.metric.clone(),
                m.n.to_string(),
                self.label_a.clone(),
                self.label_b.clone(),
                m.mean_a.to_string(),
                m.mean_b.to_string(),
                fmt_opt(m.wilcoxon.map(|wx| wx.w_statistic)),
                fmt_opt(m.wilcoxon.map(|wx| wx.p_value)),
                method.unwrap_or_default().to_string(),
                winner.to_string(),
                m.note.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Paired Wilcoxon test per metric. Both reports must hold the same metrics
/// over the same pair ids; pairs where either side failed are dropped.
pub fn compare_selections(
    a: &EvalReport,
    b: &EvalReport,
    label_a: &str,
    label_b: &str,
) -> Result<ComparisonReport> {
    let metrics_a: BTreeSet<&str> = a.metrics().into_iter().collect();
    let metrics_b: BTreeSet<&str> = b.metrics().into_iter().collect();
    if metrics_a != metrics_b {
        let only: Vec<String> = metrics_a
            .symmetric_difference(&metrics_b)
            .map(|m| m.to_string())
            .collect();
        return Err(ExperimentError::Coverage(format!(
            "metrics present in only one report: {}",
            only.join(", ")
        )));
    }
    let mut out = Vec::new();
    for metric in a.metrics() {
        let (ids_a, ids_b) = (a.ids(metric), b.ids(metric));
        if ids_a != ids_b {
            let diff: Vec<String> = ids_a.symmetric_difference(&ids_b).cloned().collect();
            return Err(ExperimentError::Coverage(format!(
                "`{metric}` evaluated on different pairs: {}",
                diff.join(", ")
            )));
        }
        let (va, vb) = (a.values(metric), b.values(metric));
        let paired: Vec<(f64, f64)> = va
            .iter()
            .filter_map(|(id, x)| vb.get(id).map(|y| (*x, *y)))
            .collect();
        if paired.len() < ids_a.len() {
            log::warn!(
                "`{metric}`: {} pairs failed in at least one report and are excluded",
                ids_a.len() - paired.len()
            );
        }
        let xs: Vec<f64> = paired.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = paired.iter().map(|p| p.1).collect();
        let (mean_a, mean_b) = (mean(&xs), mean(&ys));
        let (wilcoxon, winner, note) = match wilcoxon_signed_rank(&xs, &ys) {
            Ok(w) if w.p_value < SIGNIFICANCE_LEVEL => {
                let winner = if mean_b > mean_a { Winner::B } else { Winner::A };
                (Some(w), winner, None)
            }
            Ok(w) => (Some(w), Winner::Tie, None),
            Err(e @ (StatsError::Degenerate(_) | StatsError::InsufficientData(_))) => {
                (None, Winner::Tie, Some(e.to_string()))
            }
            Err(e) => return Err(ExperimentError::Coverage(format!("`{metric}`: {e}"))),
        };
        out.push(MetricComparison {
            metric: metric.to_string(),
            n: paired.len(),
            mean_a,
            mean_b,
            wilcoxon,
            winner,
            note,
        });
    }
    Ok(ComparisonReport {
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        metrics: out,
    })
}
