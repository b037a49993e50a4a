//! Inference contracts for the neural components the scorers and BLANC rely on.
//!
//! Every backend implements [`Backend`]. Two implementations ship here:
//! [`MockBackend`], a bit-deterministic stand-in with analytic behaviour used
//! throughout the tests, and [`RemoteBackend`], which forwards each call to an
//! out-of-process model server over a line-delimited JSON protocol.
//! Backends are constructed by string id through a [`BackendRegistry`].

mod mock;
mod registry;
mod remote;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::MockBackend;
pub use registry::{BackendFactory, BackendRegistry, REGISTRY_ENV};
pub use remote::{handle_request, serve, LoopbackTransport, ProcessTransport, RemoteBackend, Transport};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("input of {actual} tokens exceeds the backend limit of {limit}")]
    Length { limit: usize, actual: usize },
    #[error("unknown backend `{0}`")]
    Unknown(String),
    #[error("backend configuration error: {0}")]
    Config(String),
    #[error("remote backend protocol error: {0}")]
    Protocol(String),
    #[error("remote backend I/O error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, BackendError>;

/// Provenance of a backend. `(name, version)` identifies which model produced
/// a score.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub version: String,
    pub deterministic: bool,
    /// Whether concurrent inference calls are allowed. When false the scoring
    /// driver serializes all calls.
    #[serde(default)]
    pub concurrent: bool,
}

/// Per-token vectors aligned index-wise with the tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbeddings {
    tokens: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl TokenEmbeddings {
    pub fn new(tokens: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if tokens.len() != vectors.len() {
            return Err(BackendError::Protocol(format!(
                "{} tokens but {} vectors",
                tokens.len(),
                vectors.len()
            )));
        }
        for (tok, v) in tokens.iter().zip(&vectors) {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(BackendError::Protocol(format!("non-finite vector for `{tok}`")));
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(BackendError::Protocol(format!("zero vector for `{tok}`")));
            }
        }
        Ok(TokenEmbeddings { tokens, vectors })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A labelled head → child arc over summary token positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DependencyArc {
    pub head_token: String,
    pub child_token: String,
    pub relation_label: String,
    pub head_index: usize,
    pub child_index: usize,
}

/// Cosine similarity clamped to `[-1, 1]`.
///
/// The denominator is `sqrt(|a|²·|b|²)` rather than `|a|·|b|`: for identical
/// vectors `sqrt(fl(x²)) == x` in binary floating point, so the result is
/// exactly 1.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    (dot / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

/// The inference surface needed by the scorers and by BLANC-help.
///
/// Implementations must be safe to call from several threads, or report
/// `concurrent: false` in their descriptor so the driver serializes calls.
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// Maximum accepted input length in tokens, if any.
    fn max_tokens(&self) -> Option<usize> {
        None
    }

    fn embed_tokens(&self, text: &str) -> Result<TokenEmbeddings>;

    /// One log-probability per target token, conditioned on `source`.
    fn conditional_token_logprobs(&self, source: &str, target: &str) -> Result<Vec<f64>>;

    /// Probability of the factual class for each arc, order-aligned.
    fn arc_entailment_probs(&self, document: &str, arcs: &[DependencyArc]) -> Result<Vec<f64>>;

    /// Fraction of the masked sentence tokens the model reconstructs when the
    /// sentence is preceded by `prefix`.
    fn masked_fill_accuracy(
        &self,
        prefix: &str,
        sentence: &str,
        mask_positions: &BTreeSet<usize>,
    ) -> Result<f64>;

    /// Dependency arcs of the summary; empty for single-token input.
    fn parse_dependencies(&self, summary: &str) -> Result<Vec<DependencyArc>>;
}

/// Cuts `document` to the backend's token limit (whitespace tokens).
/// Returns the possibly shortened text and whether truncation happened.
pub fn truncate_document(backend: &dyn Backend, document: &str) -> (String, bool) {
    match backend.max_tokens() {
        Some(limit) if document.split_whitespace().nth(limit).is_some() => {
            let kept: Vec<&str> = document.split_whitespace().take(limit).collect();
            (kept.join(" "), true)
        }
        _ => (document.to_string(), false),
    }
}
