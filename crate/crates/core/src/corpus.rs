//! Document–summary corpora: the data model, JSONL ingestion and
//! descriptive statistics.
//!
//! A [`Corpus`] is an ordered list of [`Pair`]s with unique, caller-supplied
//! ids. Once built it is never mutated; filtration produces new corpora.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Current on-disk schema version stamped into every [`Corpus`].
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("corpus `{0}` is empty")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// One document–summary sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub id: String,
    pub document: String,
    pub summary: String,
    pub split: Split,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl Pair {
    pub fn new(
        id: impl Into<String>,
        document: impl Into<String>,
        summary: impl Into<String>,
        split: Split,
    ) -> Self {
        Pair {
            id: id.into(),
            document: document.into(),
            summary: summary.into(),
            split,
            meta: serde_json::Map::new(),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.document.trim().is_empty() {
            return Err(format!("pair `{}` has an empty document", self.id));
        }
        if self.summary.trim().is_empty() {
            return Err(format!("pair `{}` has an empty summary", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    name: String,
    pairs: Vec<Pair>,
    schema_version: u32,
}

impl Corpus {
    /// Builds a corpus, checking the id and non-emptiness invariants.
    pub fn new(name: impl Into<String>, pairs: Vec<Pair>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for pair in &pairs {
            pair.validate().map_err(CorpusError::Integrity)?;
            if !seen.insert(pair.id.as_str()) {
                return Err(CorpusError::Integrity(format!("duplicate id `{}`", pair.id)));
            }
        }
        Ok(Corpus {
            name: name.into(),
            pairs,
            schema_version: SCHEMA_VERSION,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn schema_version(&self) -> u32 {
        self.schema_version
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Pair> {
        self.pairs.iter().find(|p| p.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.id.as_str())
    }

    /// Pairs restricted to one split, as a new corpus with the same name.
    pub fn split(&self, split: Split) -> Corpus {
        Corpus {
            name: self.name.clone(),
            pairs: self.pairs.iter().filter(|p| p.split == split).cloned().collect(),
            schema_version: self.schema_version,
        }
    }

    pub fn into_pairs(self) -> Vec<Pair> {
        self.pairs
    }

    /// Writes one JSON record per line with LF terminators.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for pair in &self.pairs {
            serde_json::to_writer(&mut out, pair)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let io_err = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        self.write_jsonl(std::io::BufWriter::new(file)).map_err(io_err)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    Jsonl,
}

/// Loads a corpus; its name is the file stem.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match format {
        CorpusFormat::Jsonl => read_jsonl(name, BufReader::new(file)),
    }
}

/// Parses JSONL records. Blank lines are skipped; line numbers are 1-based.
pub fn read_jsonl<R: BufRead>(name: impl Into<String>, reader: R) -> Result<Corpus> {
    let mut pairs = Vec::new();
    let mut first_line: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: Pair = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        pair.validate()
            .map_err(|m| CorpusError::Integrity(format!("line {line_no}: {m}")))?;
        if let Some(prev) = first_line.insert(pair.id.clone(), line_no) {
            return Err(CorpusError::Integrity(format!(
                "duplicate id `{}` on lines {prev} and {line_no}",
                pair.id
            )));
        }
        pairs.push(pair);
    }
    Corpus::new(name, pairs)
}

/// Number of maximal non-whitespace runs, using Unicode whitespace.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_pairs: usize,
    pub mean_doc_words: f64,
    pub mean_sum_words: f64,
    pub per_split_counts: BTreeMap<Split, usize>,
}

impl CorpusStats {
    /// Splits that contributed to the means, in canonical order.
    pub fn splits_included(&self) -> Vec<Split> {
        self.per_split_counts
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(&s, _)| s)
            .collect()
    }

    pub fn splits_label(&self) -> String {
        self.splits_included()
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join("+")
    }
}

pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty(corpus.name().to_string()));
    }
    let mut per_split_counts: BTreeMap<Split, usize> = Split::ALL.iter().map(|&s| (s, 0)).collect();
    // Integer sums keep the means independent of pair order.
    let mut doc_words = 0u64;
    let mut sum_words = 0u64;
    for pair in corpus.pairs() {
        doc_words += word_count(&pair.document) as u64;
        sum_words += word_count(&pair.summary) as u64;
        *per_split_counts.entry(pair.split).or_default() += 1;
    }
    let n = corpus.len();
    Ok(CorpusStats {
        n_pairs: n,
        mean_doc_words: doc_words as f64 / n as f64,
        mean_sum_words: sum_words as f64 / n as f64,
        per_split_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(id: &str, split: &str) -> String {
        format!(r#"{{"id":"{id}","document":"doc {id}","summary":"sum {id}","split":"{split}","meta":{{"source":"x"}}}}"#)
    }

    #[test]
    fn loads_three_lines_in_order() {
        let text = [line("c", "train"), line("a", "test"), line("b", "validation")].join("\n");
        let corpus = read_jsonl("toy", text.as_bytes()).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.ids().collect::<Vec<_>>(), ["c", "a", "b"]);
        assert_eq!(corpus.pairs()[0].meta["source"], "x");
    }

    #[test]
    fn duplicate_id_is_named() {
        let text = [
            line("a", "train"),
            line("b", "train"),
            line("c", "train"),
            line("d", "train"),
            line("a", "test"),
        ]
        .join("\n");
        let err = read_jsonl("toy", text.as_bytes()).unwrap_err();
        match err {
            CorpusError::Integrity(msg) => {
                assert!(msg.contains("`a`"), "{msg}");
                assert!(msg.contains("lines 1 and 5"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_empty_corpus() {
        let corpus = read_jsonl("empty", "".as_bytes()).unwrap();
        assert!(corpus.is_empty());
        assert!(matches!(corpus_stats(&corpus), Err(CorpusError::Empty(_))));
    }

    #[test]
    fn malformed_line_carries_line_number() {
        let text = format!("{}\n{{not json\n", line("a", "train"));
        match read_jsonl("toy", text.as_bytes()).unwrap_err() {
            CorpusError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let missing_split = r#"{"id":"a","document":"d","summary":"s"}"#;
        assert!(matches!(
            read_jsonl("toy", missing_split.as_bytes()),
            Err(CorpusError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn blank_summary_rejected() {
        let text = r#"{"id":"a","document":"d","summary":"  ","split":"train"}"#;
        assert!(matches!(read_jsonl("toy", text.as_bytes()), Err(CorpusError::Integrity(_))));
    }

    #[test]
    fn word_count_examples() {
        assert_eq!(word_count("the cat sat"), 3);
        assert_eq!(word_count("  a\tb\nc  "), 3);
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("a\u{3000}b\u{00a0}c"), 3);
    }

    #[test]
    fn stats_means() {
        let corpus = Corpus::new(
            "t",
            vec![
                Pair::new("1", "a b c d", "x", Split::Train),
                Pair::new("2", "a b c d e f", "x y z", Split::Test),
            ],
        )
        .unwrap();
        let stats = corpus_stats(&corpus).unwrap();
        assert_eq!(stats.n_pairs, 2);
        assert_eq!(stats.mean_doc_words, 5.0);
        assert_eq!(stats.mean_sum_words, 2.0);
        assert_eq!(stats.per_split_counts[&Split::Train], 1);
        assert_eq!(stats.per_split_counts[&Split::Validation], 0);
        assert_eq!(stats.splits_label(), "train+test");

        let single = Corpus::new("t", vec![Pair::new("1", "a b c", "x y", Split::Train)]).unwrap();
        let stats = corpus_stats(&single).unwrap();
        assert_eq!((stats.mean_doc_words, stats.mean_sum_words), (3.0, 2.0));
    }

    fn arb_pair() -> impl Strategy<Value = (String, String, u8)> {
        ("[a-z]{1,6}( [a-z]{1,6}){0,8}", "[a-z]{1,6}( [a-z]{1,6}){0,3}", 0u8..3)
    }

    proptest! {
        #[test]
        fn round_trip_preserves_records(raw in prop::collection::vec(arb_pair(), 0..20)) {
            let pairs: Vec<Pair> = raw
                .into_iter()
                .enumerate()
                .map(|(i, (d, s, k))| {
                    let mut p = Pair::new(format!("id{i}"), d, s, Split::ALL[k as usize]);
                    p.meta.insert("n".into(), serde_json::json!(i));
                    p
                })
                .collect();
            let corpus = Corpus::new("rt", pairs).unwrap();
            let mut buf = Vec::new();
            corpus.write_jsonl(&mut buf).unwrap();
            let back = read_jsonl("rt", buf.as_slice()).unwrap();
            prop_assert_eq!(&back, &corpus);
            let mut again = Vec::new();
            back.write_jsonl(&mut again).unwrap();
            prop_assert_eq!(buf, again);
        }

        #[test]
        fn stats_permutation_invariant(raw in prop::collection::vec(arb_pair(), 1..20), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let pairs: Vec<Pair> = raw
                .into_iter()
                .enumerate()
                .map(|(i, (d, s, k))| Pair::new(format!("id{i}"), d, s, Split::ALL[k as usize]))
                .collect();
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = corpus_stats(&Corpus::new("p", pairs).unwrap()).unwrap();
            let b = corpus_stats(&Corpus::new("p", shuffled).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn word_count_is_additive(a in "[^\\s]{1,5}( [^\\s]{1,5}){0,5}", b in "[^\\s]{1,5}(\t[^\\s]{1,5}){0,5}") {
            prop_assert_eq!(word_count(&format!("{a} {b}")), word_count(&a) + word_count(&b));
        }
    }
}
