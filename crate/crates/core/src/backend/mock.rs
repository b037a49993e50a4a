use std::collections::{BTreeSet, HashSet};

use super::{Backend, BackendDescriptor, BackendError, DependencyArc, Result, TokenEmbeddings};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) const DEFAULT_SEED: u64 = 0x5e_ed0f_fac7;
pub(crate) const DEFAULT_DIM: usize = 32;
pub(crate) const DEFAULT_MAX_TOKENS: usize = 512;

/// Deterministic, model-free backend with whitespace tokenization.
///
/// * embeddings: each token gets a fixed unit vector drawn from a seeded hash
///   of its string, independent of context;
/// * conditional likelihood: `ln 0.9` for target tokens that occur in the
///   source, `ln 0.1` otherwise;
/// * arc entailment: 1 iff head and child tokens both occur in the document;
/// * masked fill: a masked token is recovered iff it occurs in the prefix;
/// * parsing: tokens left of the middle attach to their right neighbour,
///   tokens right of it to their left neighbour.
///
/// All arithmetic is fixed-order integer hashing plus IEEE operations, so
/// results are identical across runs and platforms.
#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    dim: usize,
    max_tokens: Option<usize>,
}

impl Default for MockBackend {
    fn default() -> Self {
        MockBackend {
            seed: DEFAULT_SEED,
            dim: DEFAULT_DIM,
            max_tokens: Some(DEFAULT_MAX_TOKENS),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn tokens(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

fn require_text(text: &str, what: &str) -> Result<()> {
    if text.trim().is_empty() {
        Err(BackendError::Precondition(format!("{what} is empty")))
    } else {
        Ok(())
    }
}

impl MockBackend {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        MockBackend {
            seed,
            dim,
            max_tokens: Some(DEFAULT_MAX_TOKENS),
        }
    }

    pub fn with_max_tokens(mut self, max_tokens: Option<usize>) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    /// Unit vector for one token string.
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut state = fnv1a(token.as_bytes()) ^ self.seed;
        let raw: Vec<f64> = (0..self.dim)
            .map(|_| {
                let bits = splitmix64(&mut state) >> 11;
                (bits as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        raw.into_iter().map(|x| x / norm).collect()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        match self.max_tokens {
            Some(limit) if n > limit => Err(BackendError::Length { limit, actual: n }),
            _ => Ok(()),
        }
    }
}

impl Backend for MockBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: "mock".into(),
            version: format!("1-d{}-s{:x}", self.dim, self.seed),
            deterministic: true,
            concurrent: true,
        }
    }

    fn max_tokens(&self) -> Option<usize> {
        self.max_tokens
    }

    fn embed_tokens(&self, text: &str) -> Result<TokenEmbeddings> {
        require_text(text, "text")?;
        let toks = tokens(text);
        self.check_len(toks.len())?;
        let vectors = toks.iter().map(|t| self.token_vector(t)).collect();
        TokenEmbeddings::new(toks.into_iter().map(String::from).collect(), vectors)
    }

    fn conditional_token_logprobs(&self, source: &str, target: &str) -> Result<Vec<f64>> {
        require_text(source, "source")?;
        require_text(target, "target")?;
        let src = tokens(source);
        let tgt = tokens(target);
        self.check_len(src.len())?;
        self.check_len(tgt.len())?;
        let vocab: HashSet<&str> = src.into_iter().collect();
        let (hit, miss) = (0.9f64.ln(), 0.1f64.ln());
        Ok(tgt
            .into_iter()
            .map(|t| if vocab.contains(t) { hit } else { miss })
            .collect())
    }

    fn arc_entailment_probs(&self, document: &str, arcs: &[DependencyArc]) -> Result<Vec<f64>> {
        if arcs.is_empty() {
            return Err(BackendError::Precondition("no arcs to judge".into()));
        }
        let doc = tokens(document);
        self.check_len(doc.len())?;
        let vocab: HashSet<&str> = doc.into_iter().collect();
        Ok(arcs
            .iter()
            .map(|arc| {
                let supported = vocab.contains(arc.head_token.as_str())
                    && vocab.contains(arc.child_token.as_str());
                if supported {
                    1.0
                } else {
                    0.0
                }
            })
            .collect())
    }

    fn masked_fill_accuracy(
        &self,
        prefix: &str,
        sentence: &str,
        mask_positions: &BTreeSet<usize>,
    ) -> Result<f64> {
        if mask_positions.is_empty() {
            return Err(BackendError::Precondition("empty mask set".into()));
        }
        let sent = tokens(sentence);
        if let Some(&bad) = mask_positions.iter().find(|&&i| i >= sent.len()) {
            return Err(BackendError::Precondition(format!(
                "mask position {bad} outside sentence of {} tokens",
                sent.len()
            )));
        }
        let pre = tokens(prefix);
        self.check_len(pre.len() + 1 + sent.len())?;
        let vocab: HashSet<&str> = pre.into_iter().collect();
        let recovered = mask_positions
            .iter()
            .filter(|&&i| vocab.contains(sent[i]))
            .count();
        Ok(recovered as f64 / mask_positions.len() as f64)
    }

    fn parse_dependencies(&self, summary: &str) -> Result<Vec<DependencyArc>> {
        require_text(summary, "summary")?;
        let toks = tokens(summary);
        self.check_len(toks.len())?;
        let n = toks.len();
        if n < 2 {
            return Ok(Vec::new());
        }
        let middle = n / 2;
        Ok((0..n)
            .filter(|&i| i != middle)
            .map(|child| {
                let head = if child < middle { child + 1 } else { child - 1 };
                DependencyArc {
                    head_token: toks[head].to_string(),
                    child_token: toks[child].to_string(),
                    relation_label: "dep".into(),
                    head_index: head,
                    child_index: child,
                }
            })
            .collect())
    }
}
