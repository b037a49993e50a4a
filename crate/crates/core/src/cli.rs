//! Command-line front end: one subcommand per pipeline stage.
//!
//! Exit codes: 0 success, 1 usage, 2 data or integrity, 3 backend.
//! Progress goes to stderr through `log`; data goes only to the declared
//! output files. Every run writes `<output>.config.json`, which can be
//! replayed with `factfilter --config <file>`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::{serve, Backend, BackendError, BackendRegistry};
use crate::corpus::{corpus_stats, load_corpus, Corpus, CorpusError, CorpusFormat, Pair, Split};
use crate::experiments::{
    compare_selections, distribution_report, run_sweep, CommandHook, EvalHook, ExperimentError, MockTrainProxy,
    SweepSpec, SweepStrategy, DEFAULT_HISTOGRAM_BINS, DEFAULT_SWEEP_GRID,
};
use crate::filtration::{
    apply_manifest, intersect_filter_on, keep_count, random_manifest, single_scorer_filter, FilterError,
    FilterManifest, Strategy, DEFAULT_DROP_FRACTION,
};
use crate::frankval::{
    flip_analysis, load_frank, slice_counts, validate_scorer, CorrelationMode, CovariateSpec, FrankColumns,
    FrankError,
};
use crate::metrics::{evaluate_outputs, write_table_csv, EvalError, EvalReport, MetricKind};
use crate::scorers::{load_score_table, read_scores, resolve_scorers, score_corpus_to_file, ScoringError};
use crate::stats::StatsError;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Backend(_) => EXIT_BACKEND,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Unknown(_) | BackendError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<ScoringError> for CliError {
    fn from(e: ScoringError) -> Self {
        match e {
            ScoringError::Config(m) => CliError::Usage(m),
            ScoringError::Backend(b) => b.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::DropFraction(_) | FilterError::TooFewScorers(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<FrankError> for CliError {
    fn from(e: FrankError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::NoBackend(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::InvalidSweep(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "factfilter", version, about = "Factual-consistency filtering for summarization corpora")]
struct Cli {
    /// Replay a run from a config echo instead of giving a subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Convert raw JSONL records into a validated corpus file.
    Ingest(IngestArgs),
    /// Score every pair with the requested scorers (resumable).
    Score(ScoreArgs),
    /// Build a selection manifest from a scores file.
    Filter(FilterArgs),
    /// Corpus statistics and score distributions.
    Stats(StatsArgs),
    /// Partial correlation of scorers with human factuality labels.
    ValidateFrank(FrankArgs),
    /// Correlation change when each error category's labels are flipped.
    FlipAnalysis(FrankArgs),
    /// Threshold sweep over selection strategies.
    Sweep(SweepArgs),
    /// Evaluate generated summaries on the test split.
    Evaluate(EvaluateArgs),
    /// Paired significance test between two evaluation reports.
    Compare(CompareArgs),
    /// Serve a registered backend over the line protocol on stdin/stdout.
    #[command(hide = true)]
    ServeBackend(ServeArgs),
}

fn default_backend() -> String {
    "mock".into()
}
fn default_jobs() -> usize {
    1
}
fn default_q() -> f64 {
    DEFAULT_DROP_FRACTION
}
fn default_scorers() -> Vec<String> {
    vec!["greedy".into(), "condll".into(), "dae".into()]
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct IngestArgs {
    /// Raw JSONL input.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Corpus output; its file stem becomes the corpus name.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "id")]
    pub id_field: String,
    #[arg(long, default_value = "document")]
    pub document_field: String,
    #[arg(long, default_value = "summary")]
    pub summary_field: String,
    #[arg(long, default_value = "split")]
    pub split_field: String,
    /// Split for records that lack the split field.
    #[arg(long)]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ScoreArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "mock")]
    #[serde(default = "default_backend")]
    pub backend: String,
    #[arg(long, value_delimiter = ',', default_value = "greedy,condll,dae")]
    #[serde(default = "default_scorers")]
    pub scorers: Vec<String>,
    #[arg(long, default_value_t = 1)]
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FilterArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    /// Manifest output.
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of pairs dropped per scorer.
    #[arg(long, default_value_t = DEFAULT_DROP_FRACTION)]
    #[serde(default = "default_q")]
    pub q: f64,
    /// Scorers to intersect; defaults to every scorer in the scores file.
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub scorers: Vec<String>,
    /// `intersection`, `single:<scorer>` or `random`.
    #[arg(long, default_value = "intersection")]
    pub strategy: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random selection size; defaults to the single-scorer keep count.
    #[arg(long)]
    pub size: Option<usize>,
    /// Rebuild an existing manifest from its recorded parameters.
    #[arg(long, conflicts_with_all = ["strategy", "scorers", "seed", "size"])]
    pub manifest: Option<PathBuf>,
    /// Also write the filtered corpus.
    #[arg(long)]
    pub out_corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct StatsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_HISTOGRAM_BINS)]
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FrankArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    /// Scores file whose pair ids are annotation summary ids.
    #[arg(long)]
    pub scores: PathBuf,
    /// JSON column mapping for the annotation adapter.
    #[arg(long, conflicts_with = "frank_release")]
    pub columns: Option<PathBuf>,
    /// Use the public FRANK release field names.
    #[arg(long)]
    #[serde(default)]
    pub frank_release: bool,
    /// `system` (one-hot system indicators) or `none`.
    #[arg(long, default_value = "system")]
    pub covariates: CovariateSpec,
    /// `pearson` or `rank`.
    #[arg(long, default_value = "pearson")]
    pub mode: CorrelationMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Drop fractions, ascending.
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub thresholds: Vec<f64>,
    /// `combined`, `random`, `single:<scorer>`; defaults to combined, every
    /// single scorer, then random.
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub strategies: Vec<String>,
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    pub seed: u64,
    /// Backend for the built-in mock-train proxy.
    #[arg(long, default_value = "mock")]
    #[serde(default = "default_backend")]
    pub backend: String,
    /// External harness, run once per selection (whitespace-separated argv).
    #[arg(long, requires = "hook_metrics")]
    pub hook_command: Option<String>,
    /// Metric columns reported by the external harness.
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub hook_metrics: Vec<String>,
    #[arg(long, default_value_t = 1)]
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// JSONL of `{"id", "summary"}`.
    #[arg(long)]
    pub generated: PathBuf,
    /// Restricts ROUGE-2 to the manifest's test pairs.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "greedy,condll,dae,blanc,rouge2")]
    pub metrics: Vec<String>,
    #[arg(long, default_value = "mock")]
    #[serde(default = "default_backend")]
    pub backend: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a one-row comparison table.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Row label for the table; defaults to the generated file stem.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long, default_value_t = 1)]
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub label_a: Option<String>,
    #[arg(long)]
    pub label_b: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write both reports as comparison-table rows.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ServeArgs {
    #[arg(long, default_value = "mock")]
    #[serde(default = "default_backend")]
    pub backend: String,
}

/// What a run did, as written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub factfilter_version: String,
    #[serde(flatten)]
    pub command: Command,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            factfilter_version: env!("CARGO_PKG_VERSION").to_string(),
            command,
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Where the echo of this run goes.
    pub fn echo_path(&self) -> Option<PathBuf> {
        let primary = match &self.command {
            Command::Ingest(a) => &a.out,
            Command::Score(a) => &a.out,
            Command::Filter(a) => &a.out,
            Command::Stats(a) => return Some(a.out_dir.join("stats.config.json")),
            Command::ValidateFrank(a) | Command::FlipAnalysis(a) => &a.out,
            Command::Sweep(a) => &a.out,
            Command::Evaluate(a) => &a.out,
            Command::Compare(a) => &a.out,
            Command::ServeBackend(_) => return None,
        };
        let mut name = primary.file_name()?.to_os_string();
        name.push(".config.json");
        Some(primary.with_file_name(name))
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    init_logging(cli.quiet);
    let command = match (cli.command, cli.config) {
        (Some(c), None) => Ok(c),
        (None, Some(path)) => RunConfig::load(&path).map(|rc| rc.command),
        (Some(_), Some(_)) => Err(CliError::Usage("give either a subcommand or --config, not both".into())),
        (None, None) => Err(CliError::Usage("no subcommand given; see --help".into())),
    };
    match command.and_then(execute) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(quiet: bool) {
    let default = if quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Validates and runs one command, then writes its config echo.
pub fn execute(command: Command) -> CliResult<()> {
    validate(&command)?;
    let config = RunConfig::new(command.clone());
    match command {
        Command::Ingest(a) => ingest(&a)?,
        Command::Score(a) => score(&a)?,
        Command::Filter(a) => filter(&a)?,
        Command::Stats(a) => stats(&a)?,
        Command::ValidateFrank(a) => frank_validate(&a)?,
        Command::FlipAnalysis(a) => frank_flip(&a)?,
        Command::Sweep(a) => sweep(&a)?,
        Command::Evaluate(a) => evaluate(&a)?,
        Command::Compare(a) => compare(&a)?,
        Command::ServeBackend(a) => return serve_backend(&a),
    }
    if let Some(path) = config.echo_path() {
        let text = serde_json::to_string_pretty(&config).expect("config serializes") + "\n";
        write_atomic(&path, text.as_bytes())?;
    }
    Ok(())
}

fn check_jobs(jobs: usize) -> CliResult<()> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    Ok(())
}

fn check_q(q: f64) -> CliResult<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(CliError::Usage(format!("--q must be in (0, 1), got {q}")));
    }
    Ok(())
}

/// Argument checks that need no I/O.
fn validate(command: &Command) -> CliResult<()> {
    match command {
        Command::Score(a) => {
            check_jobs(a.jobs)?;
            for s in &a.scorers {
                s.parse::<crate::scorers::ScorerKind>().map_err(CliError::Usage)?;
            }
        }
        Command::Filter(a) => {
            check_q(a.q)?;
            if a.manifest.is_none() {
                parse_filter_strategy(&a.strategy)?;
            }
        }
        Command::Sweep(a) => {
            check_jobs(a.jobs)?;
            for s in &a.strategies {
                s.parse::<SweepStrategy>().map_err(CliError::Usage)?;
            }
            if !a.thresholds.is_empty() {
                SweepSpec {
                    thresholds: a.thresholds.clone(),
                    strategies: vec![SweepStrategy::Combined],
                    seed: a.seed,
                }
                .validate()?;
            }
        }
        Command::Evaluate(a) => {
            check_jobs(a.jobs)?;
            parse_metrics(&a.metrics)?;
        }
        Command::Stats(a) if a.bins == 0 => {
            return Err(CliError::Usage("--bins must be at least 1".into()));
        }
        _ => {}
    }
    Ok(())
}

fn parse_metrics(names: &[String]) -> CliResult<Vec<MetricKind>> {
    if names.is_empty() {
        return Err(CliError::Usage("no metrics requested".into()));
    }
    names
        .iter()
        .map(|m| m.parse::<MetricKind>().map_err(CliError::Usage))
        .collect()
}

enum FilterStrategy {
    Intersection,
    Single(String),
    Random,
}

fn parse_filter_strategy(s: &str) -> CliResult<FilterStrategy> {
    match s {
        "intersection" | "combined" => Ok(FilterStrategy::Intersection),
        "random" => Ok(FilterStrategy::Random),
        _ => match s.strip_prefix("single:") {
            Some(name) if !name.is_empty() => Ok(FilterStrategy::Single(name.to_string())),
            _ => Err(CliError::Usage(format!(
                "unknown strategy `{s}` (expected intersection, single:<scorer> or random)"
            ))),
        },
    }
}

/// Writes through a temporary sibling so readers never see partial files.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| data_err(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| data_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| data_err(path, e))
}

fn write_with<F>(path: &Path, f: F) -> CliResult<()>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), Box<dyn std::error::Error>>,
{
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| data_err(path, e))?;
    write_atomic(path, &buf)
}

fn registry() -> CliResult<BackendRegistry> {
    Ok(BackendRegistry::from_env()?)
}

fn create_backend(id: &str) -> CliResult<Arc<dyn Backend>> {
    Ok(registry()?.create(id)?)
}

fn read_manifest(path: &Path) -> CliResult<FilterManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| data_err(path, e))?;
    FilterManifest::from_json(&text).map_err(|e| data_err(path, e))
}

fn field_text(obj: &serde_json::Map<String, Value>, key: &str, line: usize) -> CliResult<Option<String>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(Value::Number(n)) => Ok(Some(n.to_string())),
        Some(other) => Err(CliError::Data(format!("line {line}: field `{key}` is not text: {other}"))),
    }
}

fn normalize_split(raw: &str) -> Option<Split> {
    match raw.to_ascii_lowercase().as_str() {
        "train" | "training" => Some(Split::Train),
        "validation" | "valid" | "val" | "dev" => Some(Split::Validation),
        "test" => Some(Split::Test),
        _ => None,
    }
}

fn ingest(a: &IngestArgs) -> CliResult<()> {
    let file = File::open(&a.input).map_err(|e| data_err(&a.input, e))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| data_err(&a.input, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, Value> =
            serde_json::from_str(&line).map_err(|e| data_err(&a.input, format!("line {line_no}: {e}")))?;
        let require = |key: &str| {
            field_text(&obj, key, line_no)?
                .ok_or_else(|| CliError::Data(format!("line {line_no}: missing field `{key}`")))
        };
        let id = require(&a.id_field)?;
        let document = require(&a.document_field)?;
        let summary = require(&a.summary_field)?;
        let split = match field_text(&obj, &a.split_field, line_no)? {
            Some(raw) => normalize_split(&raw)
                .ok_or_else(|| CliError::Data(format!("line {line_no}: unknown split `{raw}`")))?,
            None => a
                .split
                .ok_or_else(|| CliError::Data(format!("line {line_no}: no split field and no --split default")))?,
        };
        pairs.push(Pair::new(id, document, summary, split));
    }
    let name = a
        .out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let corpus = Corpus::new(name, pairs)?;
    let mut buf = Vec::new();
    corpus.write_jsonl(&mut buf).map_err(|e| data_err(&a.out, e))?;
    write_atomic(&a.out, &buf)?;
    let s = corpus_stats(&corpus)?;
    log::info!(
        "ingested {} pairs ({}) into {}",
        s.n_pairs,
        s.splits_label(),
        a.out.display()
    );
    Ok(())
}

fn score(a: &ScoreArgs) -> CliResult<()> {
    let registry = registry()?;
    let specs = resolve_scorers(&a.scorers, &a.backend, &registry)?;
    let corpus = load_corpus(&a.input, CorpusFormat::Jsonl)?;
    log::info!(
        "scoring {} pairs of `{}` with {} via {} ({} jobs)",
        corpus.len(),
        corpus.name(),
        a.scorers.join(","),
        a.backend,
        a.jobs
    );
    let summary = score_corpus_to_file(&corpus, &specs, &a.out, a.jobs)?;
    log::info!(
        "{} rows already present, {} written, {} sentinels",
        summary.already_present,
        summary.written,
        summary.sentinels
    );
    Ok(())
}

fn filter(a: &FilterArgs) -> CliResult<()> {
    let corpus = load_corpus(&a.input, CorpusFormat::Jsonl)?;
    let table = load_score_table(&a.scores, corpus.name())?;
    let missing: Vec<String> = corpus
        .ids()
        .filter(|id| !table.pair_ids().iter().any(|t| t == id))
        .map(String::from)
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Data(format!(
            "{} has no scores for {} pairs (first: {})",
            a.scores.display(),
            missing.len(),
            missing[0]
        )));
    }
    let manifest = match &a.manifest {
        Some(path) => {
            let previous = read_manifest(path)?;
            let rebuilt = match &previous.strategy {
                Strategy::Intersection => {
                    intersect_filter_on(&table, &previous.scorer_names, previous.drop_fraction)?
                }
                Strategy::SingleScorer { scorer } => single_scorer_filter(&table, scorer, previous.drop_fraction)?,
                Strategy::Random { seed, size } => random_manifest(&corpus, *size, *seed)?,
            };
            if rebuilt.content_hash() != previous.content_hash() {
                return Err(CliError::Data(format!(
                    "{} is not reproduced by {}",
                    path.display(),
                    a.scores.display()
                )));
            }
            rebuilt
        }
        None => {
            let scorers = if a.scorers.is_empty() {
                table.scorer_names()
            } else {
                a.scorers.clone()
            };
            match parse_filter_strategy(&a.strategy)? {
                FilterStrategy::Intersection => intersect_filter_on(&table, &scorers, a.q)?,
                FilterStrategy::Single(s) => single_scorer_filter(&table, &s, a.q)?,
                FilterStrategy::Random => {
                    let seed = a
                        .seed
                        .ok_or_else(|| CliError::Usage("--strategy random needs --seed".into()))?;
                    let size = a.size.unwrap_or_else(|| keep_count(corpus.len(), a.q));
                    random_manifest(&corpus, size, seed)?
                }
            }
        }
    };
    write_atomic(&a.out, manifest.to_canonical_json().as_bytes())?;
    log::info!(
        "kept {}/{} pairs (ratio {:.4}), manifest {}",
        manifest.kept_ids.len(),
        manifest.n_pairs,
        manifest.selection_ratio,
        manifest.content_hash()
    );
    if let Some(path) = &a.out_corpus {
        let filtered = apply_manifest(&corpus, &manifest)?;
        let mut buf = Vec::new();
        filtered.write_jsonl(&mut buf).map_err(|e| data_err(path, e))?;
        write_atomic(path, &buf)?;
    }
    Ok(())
}

fn stats(a: &StatsArgs) -> CliResult<()> {
    let corpus = load_corpus(&a.input, CorpusFormat::Jsonl)?;
    let mut rows = vec![("full".to_string(), corpus_stats(&corpus)?, 1.0)];
    if let Some(path) = &a.manifest {
        let manifest = read_manifest(path)?;
        let filtered = apply_manifest(&corpus, &manifest)?;
        rows.push(("filtered".to_string(), corpus_stats(&filtered)?, manifest.selection_ratio));
    }
    write_with(&a.out_dir.join("corpus_stats.csv"), |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record([
            "corpus",
            "selection",
            "splits",
            "n_pairs",
            "mean_doc_words",
            "mean_sum_words",
            "selection_ratio",
        ])?;
        for (label, s, ratio) in &rows {
            w.write_record([
                corpus.name().to_string(),
                label.clone(),
                s.splits_label(),
                s.n_pairs.to_string(),
                s.mean_doc_words.to_string(),
                s.mean_sum_words.to_string(),
                ratio.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    if let Some(path) = &a.scores {
        let table = load_score_table(path, corpus.name())?;
        let report = distribution_report(&table, a.bins)?;
        write_with(&a.out_dir.join("distribution_summary.csv"), |buf| {
            Ok(report.write_summary_csv(buf)?)
        })?;
        write_with(&a.out_dir.join("distribution_histogram.csv"), |buf| {
            Ok(report.write_histogram_csv(buf)?)
        })?;
    }
    log::info!("wrote statistics to {}", a.out_dir.display());
    Ok(())
}

/// Successful scores grouped by scorer. Sentinel rows are skipped.
fn score_columns(path: &Path) -> CliResult<BTreeMap<String, BTreeMap<String, f64>>> {
    let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for rec in read_scores(path)? {
        if let Some(v) = rec.value {
            if out.entry(rec.scorer.clone()).or_default().insert(rec.pair_id.clone(), v).is_some() {
                return Err(data_err(path, format!("duplicate `{}` score for `{}`", rec.scorer, rec.pair_id)));
            }
        }
    }
    if out.is_empty() {
        return Err(data_err(path, "no successful scores"));
    }
    Ok(out)
}

type ScoreColumns = BTreeMap<String, BTreeMap<String, f64>>;

fn frank_inputs(a: &FrankArgs) -> CliResult<(Vec<crate::frankval::FrankAnnotation>, ScoreColumns)> {
    let columns = match (&a.columns, a.frank_release) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| data_err(path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        (None, true) => FrankColumns::frank_release(),
        (None, false) => FrankColumns::default(),
    };
    let annotations = load_frank(&a.annotations, &columns)?;
    for (ds, n) in slice_counts(&annotations) {
        log::info!("{ds}: {n} annotated summaries");
    }
    Ok((annotations, score_columns(&a.scores)?))
}

fn frank_validate(a: &FrankArgs) -> CliResult<()> {
    let (annotations, scores) = frank_inputs(a)?;
    let datasets: Vec<_> = slice_counts(&annotations).into_keys().collect();
    write_with(&a.out, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["scorer", "dataset", "n", "n_covariates", "r", "mode", "pooling"])?;
        for (scorer, column) in &scores {
            for &ds in &datasets {
                let r = validate_scorer(column, &annotations, Some(ds), a.covariates, a.mode)?;
                w.write_record([
                    scorer.clone(),
                    ds.to_string(),
                    r.n.to_string(),
                    r.n_covariates.to_string(),
                    r.r.to_string(),
                    format!("{:?}", a.mode).to_lowercase(),
                    "pooled_systems".into(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })
}

fn frank_flip(a: &FrankArgs) -> CliResult<()> {
    let (annotations, scores) = frank_inputs(a)?;
    let report = flip_analysis(&scores, &annotations, a.covariates, a.mode)?;
    write_with(&a.out, |buf| Ok(report.write_csv(buf)?))
}

fn sweep(a: &SweepArgs) -> CliResult<()> {
    let corpus = load_corpus(&a.input, CorpusFormat::Jsonl)?;
    let table = load_score_table(&a.scores, corpus.name())?;
    let strategies = if a.strategies.is_empty() {
        let mut s = vec![SweepStrategy::Combined];
        s.extend(table.scorer_names().into_iter().map(SweepStrategy::SingleScorer));
        s.push(SweepStrategy::Random);
        s
    } else {
        a.strategies
            .iter()
            .map(|s| s.parse().map_err(CliError::Usage))
            .collect::<CliResult<_>>()?
    };
    let spec = SweepSpec {
        thresholds: if a.thresholds.is_empty() {
            DEFAULT_SWEEP_GRID.to_vec()
        } else {
            a.thresholds.clone()
        },
        strategies,
        seed: a.seed,
    };
    let hook: Box<dyn EvalHook> = match &a.hook_command {
        Some(cmd) => Box::new(CommandHook::new(
            cmd.split_whitespace().map(String::from).collect(),
            a.hook_metrics.clone(),
        )?),
        None => Box::new(MockTrainProxy::reference_free(create_backend(&a.backend)?)),
    };
    let report = run_sweep(&corpus, &table, &spec, hook.as_ref(), a.jobs)?;
    let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
    log::info!("sweep: {} cells, {failed} failed", report.rows.len());
    write_with(&a.out, |buf| Ok(report.write_csv(buf)?))
}

fn read_generated(path: &Path) -> CliResult<BTreeMap<String, String>> {
    #[derive(Deserialize)]
    struct Generated {
        id: String,
        summary: String,
    }
    let file = File::open(path).map_err(|e| data_err(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| data_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let g: Generated = serde_json::from_str(&line).map_err(|e| data_err(path, format!("line {}: {e}", i + 1)))?;
        if out.insert(g.id.clone(), g.summary).is_some() {
            return Err(data_err(path, format!("duplicate id `{}`", g.id)));
        }
    }
    Ok(out)
}

fn file_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let metrics = parse_metrics(&a.metrics)?;
    let backend = if metrics.iter().any(|m| !m.is_reference_based()) {
        Some(create_backend(&a.backend)?)
    } else {
        None
    };
    let corpus = load_corpus(&a.input, CorpusFormat::Jsonl)?;
    let generated = read_generated(&a.generated)?;
    let manifest = a.manifest.as_deref().map(read_manifest).transpose()?;
    let report = evaluate_outputs(
        &generated,
        &corpus,
        manifest.as_ref(),
        &metrics,
        backend.as_deref(),
        a.jobs,
    )?;
    for s in report.summaries() {
        log::info!("{}: n={} failed={} mean={:?}", s.metric, s.n, s.n_failed, s.mean);
    }
    write_with(&a.out, |buf| Ok(report.write_csv(buf)?))?;
    if let Some(path) = &a.table {
        let label = a.label.clone().unwrap_or_else(|| file_label(&a.generated));
        write_with(path, |buf| Ok(write_table_csv(buf, &[(label, &report)])?))?;
    }
    Ok(())
}

fn read_report(path: &Path) -> CliResult<EvalReport> {
    let file = File::open(path).map_err(|e| data_err(path, e))?;
    EvalReport::read_csv(file).map_err(|e| data_err(path, e))
}

fn compare(a: &CompareArgs) -> CliResult<()> {
    let ra = read_report(&a.a)?;
    let rb = read_report(&a.b)?;
    let la = a.label_a.clone().unwrap_or_else(|| file_label(&a.a));
    let lb = a.label_b.clone().unwrap_or_else(|| file_label(&a.b));
    let report = compare_selections(&ra, &rb, &la, &lb)?;
    for m in &report.metrics {
        log::info!("{}: {} {:?}", m.metric, m.n, m.winner);
    }
    write_with(&a.out, |buf| Ok(report.write_csv(buf)?))?;
    if let Some(path) = &a.table {
        write_with(path, |buf| Ok(write_table_csv(buf, &[(la, &ra), (lb, &rb)])?))?;
    }
    Ok(())
}

fn serve_backend(a: &ServeArgs) -> CliResult<()> {
    let backend = create_backend(&a.backend)?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve(backend.as_ref(), stdin.lock(), BufWriter::new(stdout.lock()))
        .map_err(|e| CliError::Backend(format!("serving backend: {e}")))?;
    std::io::stdout().flush().ok();
    Ok(())
}
