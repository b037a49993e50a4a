//! Scorer validation against FRANK-style human factuality annotations:
//! dataset-sliced partial correlations and error-category flip analysis.
//!
//! Annotations are read through a column-mapped adapter ([`FrankColumns`]),
//! so both the flattened default layout and the public FRANK release field
//! names can be loaded without a conversion step.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::stats::{average_ranks, partial_pearson, PartialCorrelationResult, StatsError};

/// Minimum fraction of a slice that must have a score.
pub const COVERAGE_FLOOR: f64 = 0.95;

#[derive(Debug, Error)]
pub enum FrankError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("record {record}: {message}")]
    Parse { record: usize, message: String },
    #[error("annotations without error flags must have factuality 1: {}", .0.join(", "))]
    Integrity(Vec<String>),
    #[error("duplicate summary id `{0}`")]
    Duplicate(String),
    #[error("scores cover {covered}/{total} annotations of the slice (need {:.0}%); missing: {}", COVERAGE_FLOOR * 100.0, .missing.join(", "))]
    Coverage {
        covered: usize,
        total: usize,
        missing: Vec<String>,
    },
    #[error("slice {0} has no annotations")]
    EmptySlice(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("flipped and original runs used different samples for {0}")]
    SampleMismatch(String),
}

pub type Result<T> = std::result::Result<T, FrankError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceDataset {
    Cnndm,
    Xsum,
}

impl SourceDataset {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceDataset::Cnndm => "cnndm",
            SourceDataset::Xsum => "xsum",
        }
    }
}

impl fmt::Display for SourceDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceDataset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['/', '_', '-'], "").as_str() {
            "cnndm" | "cnndailymail" => Ok(SourceDataset::Cnndm),
            "xsum" | "bbc" => Ok(SourceDataset::Xsum),
            _ => Err(format!("unknown source dataset `{s}` (expected cnndm or xsum)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    SemanticFrame,
    Discourse,
    ContentVerifiability,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 3] = [
        ErrorCategory::SemanticFrame,
        ErrorCategory::Discourse,
        ErrorCategory::ContentVerifiability,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::SemanticFrame => "semantic_frame",
            ErrorCategory::Discourse => "discourse",
            ErrorCategory::ContentVerifiability => "content_verifiability",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorCategory {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ErrorCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown error category `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryFlags {
    pub semantic_frame: bool,
    pub discourse: bool,
    pub content_verifiability: bool,
}

impl CategoryFlags {
    pub fn get(&self, c: ErrorCategory) -> bool {
        match c {
            ErrorCategory::SemanticFrame => self.semantic_frame,
            ErrorCategory::Discourse => self.discourse,
            ErrorCategory::ContentVerifiability => self.content_verifiability,
        }
    }

    pub fn set(&mut self, c: ErrorCategory, value: bool) {
        match c {
            ErrorCategory::SemanticFrame => self.semantic_frame = value,
            ErrorCategory::Discourse => self.discourse = value,
            ErrorCategory::ContentVerifiability => self.content_verifiability = value,
        }
    }

    pub fn any(&self) -> bool {
        ErrorCategory::ALL.iter().any(|&c| self.get(c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrankAnnotation {
    pub summary_id: String,
    pub source_dataset: SourceDataset,
    pub system_id: String,
    pub factuality: f64,
    pub category_flags: CategoryFlags,
    /// Flags as loaded, kept so factuality can be recomposed after flips.
    pub original_flags: CategoryFlags,
    pub original_factuality: f64,
}

impl FrankAnnotation {
    pub fn new(
        summary_id: impl Into<String>,
        source_dataset: SourceDataset,
        system_id: impl Into<String>,
        factuality: f64,
        flags: CategoryFlags,
    ) -> Self {
        FrankAnnotation {
            summary_id: summary_id.into(),
            source_dataset,
            system_id: system_id.into(),
            factuality,
            category_flags: flags,
            original_flags: flags,
            original_factuality: factuality,
        }
    }

    /// Factuality implied by the current flags: 1 when nothing is flagged,
    /// the annotated value while any originally set flag is still set, and 0
    /// when only newly introduced flags remain.
    fn recomposed_factuality(&self) -> f64 {
        let flags = &self.category_flags;
        if !flags.any() {
            1.0
        } else if ErrorCategory::ALL
            .iter()
            .any(|&c| flags.get(c) && self.original_flags.get(c))
        {
            self.original_factuality
        } else {
            0.0
        }
    }
}

/// Column names used to read annotation records. Each category may be fed
/// by several columns; it is flagged when any of them is truthy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrankColumns {
    pub summary_id: String,
    pub dataset: String,
    pub system: String,
    pub factuality: String,
    pub semantic_frame: Vec<String>,
    pub discourse: Vec<String>,
    pub content_verifiability: Vec<String>,
}

impl Default for FrankColumns {
    fn default() -> Self {
        FrankColumns {
            summary_id: "summary_id".into(),
            dataset: "dataset".into(),
            system: "system".into(),
            factuality: "factuality".into(),
            semantic_frame: vec!["semantic_frame".into()],
            discourse: vec!["discourse".into()],
            content_verifiability: vec!["content_verifiability".into()],
        }
    }
}

impl FrankColumns {
    /// Field names of the public FRANK release after per-summary
    /// aggregation of the fine-grained error types.
    pub fn frank_release() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        FrankColumns {
            summary_id: "hash".into(),
            dataset: "dataset".into(),
            system: "model_name".into(),
            factuality: "Factuality".into(),
            semantic_frame: v(&["PredE", "EntE", "CircE"]),
            discourse: v(&["CorefE", "LinkE"]),
            content_verifiability: v(&["OutE", "GramE"]),
        }
    }

    fn category_columns(&self, c: ErrorCategory) -> &[String] {
        match c {
            ErrorCategory::SemanticFrame => &self.semantic_frame,
            ErrorCategory::Discourse => &self.discourse,
            ErrorCategory::ContentVerifiability => &self.content_verifiability,
        }
    }
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str, record: usize) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| FrankError::Parse {
        record,
        message: format!("missing column `{key}`"),
    })
}

fn text_field(obj: &serde_json::Map<String, Value>, key: &str, record: usize) -> Result<String> {
    match field(obj, key, record)? {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(FrankError::Parse {
            record,
            message: format!("column `{key}` should be text, got {other}"),
        }),
    }
}

fn truthy(v: &Value, key: &str, record: usize) -> Result<bool> {
    match v {
        Value::Bool(b) => Ok(*b),
        Value::Number(n) => Ok(n.as_f64().is_some_and(|x| x > 0.0)),
        other => Err(FrankError::Parse {
            record,
            message: format!("column `{key}` should be a boolean or a number, got {other}"),
        }),
    }
}

fn parse_record(value: &Value, columns: &FrankColumns, record: usize) -> Result<FrankAnnotation> {
    let obj = value.as_object().ok_or_else(|| FrankError::Parse {
        record,
        message: "expected a JSON object".into(),
    })?;
    let summary_id = text_field(obj, &columns.summary_id, record)?;
    let dataset = text_field(obj, &columns.dataset, record)?
        .parse()
        .map_err(|message| FrankError::Parse { record, message })?;
    let system = text_field(obj, &columns.system, record)?;
    let factuality = field(obj, &columns.factuality, record)?
        .as_f64()
        .filter(|f| (0.0..=1.0).contains(f))
        .ok_or_else(|| FrankError::Parse {
            record,
            message: format!("column `{}` must be a number in [0, 1]", columns.factuality),
        })?;
    let mut flags = CategoryFlags::default();
    for c in ErrorCategory::ALL {
        let mut set = false;
        for key in columns.category_columns(c) {
            set |= truthy(field(obj, key, record)?, key, record)?;
        }
        flags.set(c, set);
    }
    Ok(FrankAnnotation::new(summary_id, dataset, system, factuality, flags))
}

/// Reads annotations from either a JSON array or JSON lines.
pub fn read_frank<R: Read>(mut input: R, columns: &FrankColumns) -> Result<Vec<FrankAnnotation>> {
    let io_err = |source| FrankError::Io {
        path: PathBuf::from("<input>"),
        source,
    };
    let mut text = String::new();
    input.read_to_string(&mut text).map_err(io_err)?;
    let values: Vec<(usize, Value)> = if text.trim_start().starts_with('[') {
        let arr: Vec<Value> = serde_json::from_str(&text).map_err(|e| FrankError::Parse {
            record: 0,
            message: e.to_string(),
        })?;
        arr.into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect()
    } else {
        let mut out = Vec::new();
        for (i, line) in BufReader::new(text.as_bytes()).lines().enumerate() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let v = serde_json::from_str(&line).map_err(|e| FrankError::Parse {
                record: i + 1,
                message: e.to_string(),
            })?;
            out.push((i + 1, v));
        }
        out
    };

    let mut seen = BTreeSet::new();
    let mut bad = Vec::new();
    let mut out = Vec::with_capacity(values.len());
    for (record, value) in values {
        let ann = parse_record(&value, columns, record)?;
        if !seen.insert(ann.summary_id.clone()) {
            return Err(FrankError::Duplicate(ann.summary_id));
        }
        if !ann.category_flags.any() && ann.factuality != 1.0 {
            bad.push(ann.summary_id.clone());
        }
        out.push(ann);
    }
    if !bad.is_empty() {
        return Err(FrankError::Integrity(bad));
    }
    Ok(out)
}

pub fn load_frank(path: &Path, columns: &FrankColumns) -> Result<Vec<FrankAnnotation>> {
    let file = std::fs::File::open(path).map_err(|source| FrankError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_frank(file, columns)
}

/// Annotation counts per dataset.
pub fn slice_counts(annotations: &[FrankAnnotation]) -> BTreeMap<SourceDataset, usize> {
    let mut counts = BTreeMap::new();
    for a in annotations {
        *counts.entry(a.source_dataset).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSpec {
    None,
    /// One-hot indicators of the generating system, first level dropped.
    #[default]
    SystemIndicators,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMode {
    #[default]
    Pearson,
    /// Partial correlation of average ranks.
    Rank,
}

impl FromStr for CovariateSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(CovariateSpec::None),
            "system" | "system_indicators" => Ok(CovariateSpec::SystemIndicators),
            _ => Err(format!("unknown covariates `{s}` (expected none or system)")),
        }
    }
}

impl FromStr for CorrelationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pearson" => Ok(CorrelationMode::Pearson),
            "rank" | "spearman" => Ok(CorrelationMode::Rank),
            _ => Err(format!("unknown correlation mode `{s}` (expected pearson or rank)")),
        }
    }
}

struct Sample {
    ids: Vec<String>,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<Vec<f64>>,
}

fn build_sample(
    scores: &BTreeMap<String, f64>,
    annotations: &[FrankAnnotation],
    slice: Option<SourceDataset>,
    covariates: CovariateSpec,
) -> Result<Sample> {
    let in_slice: Vec<&FrankAnnotation> = annotations
        .iter()
        .filter(|a| slice.is_none_or(|s| a.source_dataset == s))
        .collect();
    if in_slice.is_empty() {
        return Err(FrankError::EmptySlice(slice.map_or("all".into(), |s| s.to_string())));
    }
    let (covered, missing): (Vec<&FrankAnnotation>, Vec<&FrankAnnotation>) =
        in_slice.iter().partition(|a| scores.contains_key(&a.summary_id));
    if (covered.len() as f64) < COVERAGE_FLOOR * in_slice.len() as f64 {
        return Err(FrankError::Coverage {
            covered: covered.len(),
            total: in_slice.len(),
            missing: missing.iter().map(|a| a.summary_id.clone()).collect(),
        });
    }
    if !missing.is_empty() {
        log::warn!("{} annotated summaries have no score and are excluded", missing.len());
    }
    let z = match covariates {
        CovariateSpec::None => Vec::new(),
        CovariateSpec::SystemIndicators => {
            let levels: BTreeSet<&str> = covered.iter().map(|a| a.system_id.as_str()).collect();
            levels
                .into_iter()
                .skip(1)
                .map(|level| {
                    covered
                        .iter()
                        .map(|a| if a.system_id == level { 1.0 } else { 0.0 })
                        .collect()
                })
                .collect()
        }
    };
    Ok(Sample {
        ids: covered.iter().map(|a| a.summary_id.clone()).collect(),
        x: covered.iter().map(|a| scores[&a.summary_id]).collect(),
        y: covered.iter().map(|a| a.factuality).collect(),
        z,
    })
}

fn correlate(sample: &Sample, mode: CorrelationMode) -> Result<PartialCorrelationResult> {
    Ok(match mode {
        CorrelationMode::Pearson => partial_pearson(&sample.x, &sample.y, &sample.z)?,
        CorrelationMode::Rank => partial_pearson(&average_ranks(&sample.x), &average_ranks(&sample.y), &sample.z)?,
    })
}

/// Partial correlation between a scorer and human factuality over one
/// dataset slice (`None` pools both datasets). Systems within a slice are
/// pooled.
pub fn validate_scorer(
    scores: &BTreeMap<String, f64>,
    annotations: &[FrankAnnotation],
    slice: Option<SourceDataset>,
    covariates: CovariateSpec,
    mode: CorrelationMode,
) -> Result<PartialCorrelationResult> {
    correlate(&build_sample(scores, annotations, slice, covariates)?, mode)
}

/// Negates one category's flags and recomposes factuality. Flipping the
/// same category twice restores the input.
pub fn flip_labels(annotations: &[FrankAnnotation], category: ErrorCategory) -> Vec<FrankAnnotation> {
    annotations
        .iter()
        .map(|a| {
            let mut out = a.clone();
            out.category_flags.set(category, !a.category_flags.get(category));
            out.factuality = out.recomposed_factuality();
            out
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRow {
    pub scorer: String,
    pub dataset: SourceDataset,
    pub category: ErrorCategory,
    pub r_original: f64,
    pub r_flipped: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FlipReport {
    pub rows: Vec<FlipRow>,
}

impl FlipReport {
    pub fn delta(&self, scorer: &str, dataset: SourceDataset, category: ErrorCategory) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.scorer == scorer && r.dataset == dataset && r.category == category)
            .map(|r| r.delta)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Change in partial correlation when each error category's labels are
/// flipped, per scorer and dataset. Rows are ordered by scorer, dataset,
/// category.
pub fn flip_analysis(
    scores: &BTreeMap<String, BTreeMap<String, f64>>,
    annotations: &[FrankAnnotation],
    covariates: CovariateSpec,
    mode: CorrelationMode,
) -> Result<FlipReport> {
    let datasets: BTreeSet<SourceDataset> = annotations.iter().map(|a| a.source_dataset).collect();
    let flipped: BTreeMap<ErrorCategory, Vec<FrankAnnotation>> = ErrorCategory::ALL
        .into_iter()
        .map(|c| (c, flip_labels(annotations, c)))
        .collect();
    let mut cells = Vec::new();
    for (scorer, column) in scores {
        for &dataset in &datasets {
            for category in ErrorCategory::ALL {
                cells.push((scorer.as_str(), column, dataset, category));
            }
        }
    }
    let rows = cells
        .par_iter()
        .map(|&(scorer, column, dataset, category)| {
            let before = build_sample(column, annotations, Some(dataset), covariates)?;
            let after = build_sample(column, &flipped[&category], Some(dataset), covariates)?;
            if before.ids != after.ids {
                return Err(FrankError::SampleMismatch(format!("{scorer}/{dataset}/{category}")));
            }
            let r_original = correlate(&before, mode)?.r;
            let r_flipped = correlate(&after, mode)?.r;
            Ok(FlipRow {
                scorer: scorer.to_string(),
                dataset,
                category,
                r_original,
                r_flipped,
                delta: r_original - r_flipped,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FlipReport { rows })
}
