//! Percentile-intersection filtration and the random-selection baseline.
//!
//! Each scorer drops the lowest-scored fraction `q` of a corpus; a pair
//! survives only if every scorer keeps it. Percentiles are per corpus, never
//! pooled across corpora.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, Pair};
use crate::scorers::ScoreTable;

pub const DEFAULT_DROP_FRACTION: f64 = 0.25;

/// Meta key under which filtered corpora record the manifest hash.
pub const MANIFEST_META_KEY: &str = "filter_manifest";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FilterError {
    #[error("drop fraction {0} is outside (0, 1)")]
    DropFraction(f64),
    #[error("no scores to filter")]
    NoScores,
    #[error("score for `{0}` is not finite")]
    NonFinite(String),
    #[error("intersection filtering needs at least 2 scorers, got {0}")]
    TooFewScorers(usize),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("selection is empty")]
    EmptySelection,
    #[error("selection size {size} is not in 1..={n}")]
    SelectionSize { size: usize, n: usize },
}

pub type Result<T> = std::result::Result<T, FilterError>;

fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(FilterError::DropFraction(q))
    }
}

/// `⌈(1 − q)·n⌉`, tolerant of binary rounding in `1 − q` (for example
/// `(1 − 0.7)·10` evaluates to `3.0000000000000004`).
pub fn keep_count(n: usize, q: f64) -> usize {
    let raw = (1.0 - q) * n as f64;
    let nearest = raw.round();
    let k = if (raw - nearest).abs() <= 1e-9 * raw.max(1.0) {
        nearest
    } else {
        raw.ceil()
    };
    (k as usize).clamp(usize::from(n > 0), n)
}

/// Ids ordered from lowest to highest rank: ascending score, ties by
/// ascending id.
fn ranked(scores: &BTreeMap<String, f64>) -> Vec<(&str, f64)> {
    // BTreeMap iteration is already id-ascending; a stable sort on score keeps it.
    let mut v: Vec<(&str, f64)> = scores.iter().map(|(k, &s)| (k.as_str(), s)).collect();
    v.sort_by(|a, b| a.1.total_cmp(&b.1));
    v
}

/// Keeps the `⌈(1 − q)·n⌉` highest-scored ids. Among tied scores the
/// lexicographically smaller id ranks lower.
pub fn percentile_keep_set(scores: &BTreeMap<String, f64>, q: f64) -> Result<BTreeSet<String>> {
    Ok(keep_with_threshold(scores, q)?.0)
}

fn keep_with_threshold(scores: &BTreeMap<String, f64>, q: f64) -> Result<(BTreeSet<String>, f64)> {
    check_q(q)?;
    if scores.is_empty() {
        return Err(FilterError::NoScores);
    }
    if let Some((id, _)) = scores.iter().find(|(_, v)| !v.is_finite()) {
        return Err(FilterError::NonFinite(id.clone()));
    }
    let order = ranked(scores);
    let keep = keep_count(order.len(), q);
    let kept = &order[order.len() - keep..];
    let threshold = kept[0].1;
    Ok((kept.iter().map(|(id, _)| id.to_string()).collect(), threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    /// Intersection of per-scorer percentile keep sets.
    Intersection,
    /// Percentile keep set of one scorer.
    SingleScorer { scorer: String },
    /// Uniform sample of a fixed size.
    Random { seed: u64, size: usize },
}

/// The reproducible record of a selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterManifest {
    pub corpus_name: String,
    pub scorer_names: Vec<String>,
    pub drop_fraction: f64,
    pub per_scorer_thresholds: BTreeMap<String, f64>,
    /// Sorted ascending.
    pub kept_ids: Vec<String>,
    pub n_pairs: usize,
    pub selection_ratio: f64,
    /// `scorer → backend@version` the scores came from.
    pub created_with: BTreeMap<String, String>,
    pub seedless: bool,
    pub strategy: Strategy,
}

impl FilterManifest {
    /// Canonical JSON: sorted keys, sorted ids, two-space indentation and a
    /// trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("manifest serializes");
        // serde_json's default map is ordered, so keys come out sorted.
        let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: FilterManifest =
            serde_json::from_str(text).map_err(|e| FilterError::Integrity(format!("bad manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_json().as_bytes()))
    }

    pub fn kept_set(&self) -> BTreeSet<&str> {
        self.kept_ids.iter().map(String::as_str).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kept_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FilterError::Integrity("kept_ids not strictly ascending".into()));
        }
        if self.kept_ids.len() > self.n_pairs {
            return Err(FilterError::Integrity("more kept ids than pairs".into()));
        }
        let ratio = self.kept_ids.len() as f64 / self.n_pairs.max(1) as f64;
        if ratio != self.selection_ratio {
            return Err(FilterError::Integrity(format!(
                "selection_ratio {} does not match {}/{}",
                self.selection_ratio,
                self.kept_ids.len(),
                self.n_pairs
            )));
        }
        Ok(())
    }
}

/// Bounds on the intersection size implied by the per-scorer keep counts:
/// at least `n − Σ(n − kᵢ)` pairs and at most `min kᵢ` pairs survive. With
/// every pair scored, `kᵢ = ⌈(1 − q)·n⌉`, so the ratio lies in
/// `[1 − k·q, ⌈(1 − q)·n⌉ / n]`.
pub fn intersection_bounds(n: usize, keep_counts: &[usize]) -> (usize, usize) {
    let dropped: usize = keep_counts.iter().map(|&k| n - k).sum();
    let lower = n.saturating_sub(dropped);
    let upper = keep_counts.iter().copied().min().unwrap_or(n);
    (lower, upper)
}

/// Intersects the per-scorer keep sets of every column in `table`.
///
/// Sentinel cells are never kept, and percentiles are taken over each
/// column's successful scores.
pub fn intersect_filter(table: &ScoreTable, q: f64) -> Result<FilterManifest> {
    let scorers = table.scorer_names();
    intersect_filter_on(table, &scorers, q)
}

/// As [`intersect_filter`], restricted to the named scorers.
pub fn intersect_filter_on(table: &ScoreTable, scorers: &[String], q: f64) -> Result<FilterManifest> {
    check_q(q)?;
    if scorers.len() < 2 {
        return Err(FilterError::TooFewScorers(scorers.len()));
    }
    let n = table.n_pairs();
    let mut kept: Option<BTreeSet<String>> = None;
    let mut thresholds = BTreeMap::new();
    let mut keep_counts = Vec::with_capacity(scorers.len());
    for scorer in scorers {
        let values = table
            .values(scorer)
            .ok_or_else(|| FilterError::Integrity(format!("no `{scorer}` column")))?;
        if values.is_empty() {
            return Err(FilterError::Integrity(format!("column `{scorer}` has no successful scores")));
        }
        let (keep, threshold) = keep_with_threshold(&values, q)?;
        keep_counts.push(keep.len());
        thresholds.insert(scorer.clone(), threshold);
        kept = Some(match kept {
            None => keep,
            Some(acc) => acc.intersection(&keep).cloned().collect(),
        });
    }
    let kept_ids: Vec<String> = kept.unwrap_or_default().into_iter().collect();
    let (lower, upper) = intersection_bounds(n, &keep_counts);
    assert!(
        (lower..=upper).contains(&kept_ids.len()),
        "intersection of {} outside [{lower}, {upper}]",
        kept_ids.len()
    );
    if kept_ids.is_empty() {
        return Err(FilterError::EmptySelection);
    }
    let provenance = table.provenance();
    Ok(FilterManifest {
        corpus_name: table.corpus_name().to_string(),
        scorer_names: scorers.to_vec(),
        drop_fraction: q,
        per_scorer_thresholds: thresholds,
        selection_ratio: kept_ids.len() as f64 / n as f64,
        kept_ids,
        n_pairs: n,
        created_with: scorers
            .iter()
            .filter_map(|s| provenance.get(s).map(|p| (s.clone(), p.clone())))
            .collect(),
        seedless: true,
        strategy: Strategy::Intersection,
    })
}

/// Manifest for one scorer's percentile keep set.
pub fn single_scorer_filter(table: &ScoreTable, scorer: &str, q: f64) -> Result<FilterManifest> {
    let values = table
        .values(scorer)
        .ok_or_else(|| FilterError::Integrity(format!("no `{scorer}` column")))?;
    let (keep, threshold) = keep_with_threshold(&values, q)?;
    let n = table.n_pairs();
    let kept_ids: Vec<String> = keep.into_iter().collect();
    Ok(FilterManifest {
        corpus_name: table.corpus_name().to_string(),
        scorer_names: vec![scorer.to_string()],
        drop_fraction: q,
        per_scorer_thresholds: [(scorer.to_string(), threshold)].into_iter().collect(),
        selection_ratio: kept_ids.len() as f64 / n as f64,
        kept_ids,
        n_pairs: n,
        created_with: table
            .provenance()
            .get(scorer)
            .map(|p| [(scorer.to_string(), p.clone())].into_iter().collect())
            .unwrap_or_default(),
        seedless: true,
        strategy: Strategy::SingleScorer {
            scorer: scorer.to_string(),
        },
    })
}

/// Uniform sample of `size` ids without replacement, reproducible from
/// `(corpus, size, seed)`.
pub fn random_selection(corpus: &Corpus, size: usize, seed: u64) -> Result<BTreeSet<String>> {
    let n = corpus.len();
    if size == 0 || size > n {
        return Err(FilterError::SelectionSize { size, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, n, size);
    Ok(picked.into_iter().map(|i| corpus.pairs()[i].id.clone()).collect())
}

/// Manifest for a random selection, used as the equal-size baseline.
pub fn random_manifest(corpus: &Corpus, size: usize, seed: u64) -> Result<FilterManifest> {
    let kept_ids: Vec<String> = random_selection(corpus, size, seed)?.into_iter().collect();
    Ok(FilterManifest {
        corpus_name: corpus.name().to_string(),
        scorer_names: Vec::new(),
        drop_fraction: 1.0 - size as f64 / corpus.len() as f64,
        per_scorer_thresholds: BTreeMap::new(),
        selection_ratio: kept_ids.len() as f64 / corpus.len() as f64,
        kept_ids,
        n_pairs: corpus.len(),
        created_with: BTreeMap::new(),
        seedless: false,
        strategy: Strategy::Random { seed, size },
    })
}

/// Keeps the manifest's pairs in their original order and stamps each with
/// the manifest hash.
pub fn apply_manifest(corpus: &Corpus, manifest: &FilterManifest) -> Result<Corpus> {
    if manifest.corpus_name != corpus.name() {
        return Err(FilterError::Integrity(format!(
            "manifest is for `{}`, corpus is `{}`",
            manifest.corpus_name,
            corpus.name()
        )));
    }
    if manifest.kept_ids.is_empty() {
        return Err(FilterError::EmptySelection);
    }
    let kept = manifest.kept_set();
    let present: BTreeSet<&str> = corpus.ids().collect();
    let missing: Vec<&str> = kept.difference(&present).copied().collect();
    if !missing.is_empty() {
        return Err(FilterError::Integrity(format!(
            "manifest ids not in corpus: {}",
            missing.join(", ")
        )));
    }
    let hash = manifest.content_hash();
    let pairs: Vec<Pair> = corpus
        .pairs()
        .iter()
        .filter(|p| kept.contains(p.id.as_str()))
        .map(|p| {
            let mut p = p.clone();
            p.meta.insert(MANIFEST_META_KEY.into(), serde_json::Value::String(hash.clone()));
            p
        })
        .collect();
    Corpus::new(corpus.name(), pairs).map_err(|e| FilterError::Integrity(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::scorers::ScoreRecord;

    fn scores(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    type Column<'a> = (&'a str, &'a [(&'a str, Option<f64>)]);

    fn table(cols: &[Column]) -> ScoreTable {
        let recs = cols.iter().flat_map(|(scorer, rows)| {
            rows.iter().map(move |(id, v)| ScoreRecord {
                pair_id: id.to_string(),
                scorer: scorer.to_string(),
                backend_name: "mock".into(),
                backend_version: "1".into(),
                value: *v,
                truncated: false,
                error: v.is_none().then(|| "failed".to_string()),
            })
        });
        ScoreTable::from_records("toy", recs).unwrap()
    }

    #[test]
    fn keep_count_uses_ceiling() {
        assert_eq!(keep_count(4, 0.25), 3);
        assert_eq!(keep_count(10, 0.7), 3);
        assert_eq!(keep_count(10, 0.1), 9);
        assert_eq!(keep_count(7, 0.25), 6);
        assert_eq!(keep_count(1, 0.99), 1);
        assert_eq!(keep_count(3, 0.5), 2);
    }

    #[test]
    fn bottom_quarter_dropped() {
        let s = scores(&[("a", 0.1), ("b", 0.2), ("c", 0.3), ("d", 0.4)]);
        assert_eq!(percentile_keep_set(&s, 0.25).unwrap(), set(&["b", "c", "d"]));
    }

    #[test]
    fn ties_broken_by_id() {
        let s = scores(&[("d", 0.5), ("b", 0.5), ("a", 0.5), ("c", 0.5)]);
        assert_eq!(percentile_keep_set(&s, 0.25).unwrap(), set(&["b", "c", "d"]));
    }

    #[test]
    fn single_id_always_kept() {
        let s = scores(&[("only", -3.0)]);
        for q in [0.01, 0.5, 0.99] {
            assert_eq!(percentile_keep_set(&s, q).unwrap(), set(&["only"]));
        }
    }

    #[test]
    fn bad_inputs() {
        let s = scores(&[("a", 1.0)]);
        for q in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(percentile_keep_set(&s, q), Err(FilterError::DropFraction(_))));
        }
        assert_eq!(percentile_keep_set(&BTreeMap::new(), 0.25), Err(FilterError::NoScores));
        let s = scores(&[("a", f64::NAN)]);
        assert_eq!(percentile_keep_set(&s, 0.25), Err(FilterError::NonFinite("a".into())));
    }

    #[test]
    fn intersection_example() {
        // A keeps {2,3,4}, B keeps {1,2,3}
        let t = table(&[
            ("A", &[("1", Some(0.0)), ("2", Some(1.0)), ("3", Some(2.0)), ("4", Some(3.0))]),
            ("B", &[("1", Some(3.0)), ("2", Some(2.0)), ("3", Some(1.0)), ("4", Some(0.0))]),
        ]);
        let m = intersect_filter(&t, 0.25).unwrap();
        assert_eq!(m.kept_ids, vec!["2", "3"]);
        assert_eq!(m.selection_ratio, 0.5);
        assert_eq!(m.per_scorer_thresholds["A"], 1.0);
        assert_eq!(m.per_scorer_thresholds["B"], 1.0);
        assert_eq!(m.created_with["A"], "mock@1");
    }

    #[test]
    fn identical_scorers_keep_three_quarters() {
        let rows: &[(&str, Option<f64>)] = &[("a", Some(0.3)), ("b", Some(0.1)), ("c", Some(0.9)), ("d", Some(0.5))];
        let t = table(&[("A", rows), ("B", rows), ("C", rows)]);
        assert_eq!(intersect_filter(&t, 0.25).unwrap().selection_ratio, 0.75);
    }

    #[test]
    fn sentinels_never_survive() {
        let t = table(&[
            ("A", &[("a", Some(1.0)), ("b", Some(2.0)), ("c", Some(3.0)), ("d", Some(4.0))]),
            ("B", &[("a", Some(1.0)), ("b", Some(2.0)), ("c", Some(3.0)), ("d", None)]),
        ]);
        let m = intersect_filter(&t, 0.25).unwrap();
        // A keeps {b,c,d}; B ranks {a,b,c} and keeps ⌈0.75·3⌉ = 3 of them
        assert_eq!(m.kept_ids, vec!["b", "c"]);
        assert_eq!(m.n_pairs, 4);
    }

    #[test]
    fn needs_two_scorers() {
        let t = table(&[("A", &[("a", Some(1.0))])]);
        assert_eq!(intersect_filter(&t, 0.25), Err(FilterError::TooFewScorers(1)));
    }

    #[test]
    fn empty_intersection_is_an_error() {
        let t = table(&[
            ("A", &[("a", Some(1.0)), ("b", Some(0.0))]),
            ("B", &[("a", Some(0.0)), ("b", Some(1.0))]),
        ]);
        assert_eq!(intersect_filter(&t, 0.5), Err(FilterError::EmptySelection));
    }

    fn corpus4() -> Corpus {
        Corpus::new(
            "toy",
            (1..=4).map(|i| Pair::new(i.to_string(), format!("doc {i}"), "sum", Split::Train)).collect(),
        )
        .unwrap()
    }

    fn manifest(ids: &[&str]) -> FilterManifest {
        FilterManifest {
            corpus_name: "toy".into(),
            scorer_names: vec!["A".into(), "B".into()],
            drop_fraction: 0.25,
            per_scorer_thresholds: BTreeMap::new(),
            kept_ids: ids.iter().map(|s| s.to_string()).collect(),
            n_pairs: 4,
            selection_ratio: ids.len() as f64 / 4.0,
            created_with: BTreeMap::new(),
            seedless: true,
            strategy: Strategy::Intersection,
        }
    }

    #[test]
    fn apply_keeps_original_order() {
        let out = apply_manifest(&corpus4(), &manifest(&["2", "3"])).unwrap();
        assert_eq!(out.ids().collect::<Vec<_>>(), ["2", "3"]);
        assert!(out.pairs()[0].meta.contains_key(MANIFEST_META_KEY));
    }

    #[test]
    fn apply_all_and_idempotence() {
        let m = manifest(&["1", "2", "3", "4"]);
        let once = apply_manifest(&corpus4(), &m).unwrap();
        assert_eq!(once.ids().collect::<Vec<_>>(), corpus4().ids().collect::<Vec<_>>());
        for (a, b) in once.pairs().iter().zip(corpus4().pairs()) {
            assert_eq!((&a.document, &a.summary), (&b.document, &b.summary));
        }
        let twice = apply_manifest(&once, &m).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn apply_rejects_empty_missing_and_foreign() {
        assert_eq!(apply_manifest(&corpus4(), &manifest(&[])), Err(FilterError::EmptySelection));
        assert!(matches!(apply_manifest(&corpus4(), &manifest(&["9"])), Err(FilterError::Integrity(_))));
        let mut foreign = manifest(&["1"]);
        foreign.corpus_name = "other".into();
        assert!(matches!(apply_manifest(&corpus4(), &foreign), Err(FilterError::Integrity(_))));
    }

    #[test]
    fn canonical_json_is_stable_and_sorted() {
        let m = manifest(&["2", "3"]);
        let json = m.to_canonical_json();
        let back = FilterManifest::from_json(&json).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.content_hash(), m.content_hash());
        let keys: Vec<usize> = ["corpus_name", "created_with", "drop_fraction", "kept_ids", "n_pairs"]
            .iter()
            .map(|k| json.find(&format!("\"{k}\"")).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(m.content_hash().len(), 64);
    }

    #[test]
    fn random_selection_contract() {
        let c = corpus4();
        assert_eq!(random_selection(&c, 4, 7).unwrap(), set(&["1", "2", "3", "4"]));
        assert_eq!(random_selection(&c, 2, 11).unwrap(), random_selection(&c, 2, 11).unwrap());
        assert_eq!(random_selection(&c, 5, 0), Err(FilterError::SelectionSize { size: 5, n: 4 }));
        assert_eq!(random_selection(&c, 0, 0), Err(FilterError::SelectionSize { size: 0, n: 4 }));
        let m = random_manifest(&c, 3, 5).unwrap();
        assert!(!m.seedless);
        assert_eq!(m.selection_ratio, 0.75);
    }

    #[test]
    fn random_selection_is_uniform() {
        // 10,000 size-1 draws over 4 ids: each count within 4σ of 2,500.
        let c = corpus4();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for seed in 0..10_000u64 {
            for id in random_selection(&c, 1, seed).unwrap() {
                *counts.entry(id).or_default() += 1;
            }
        }
        let sigma = (10_000.0f64 * 0.25 * 0.75).sqrt();
        assert_eq!(counts.len(), 4);
        for (id, n) in counts {
            assert!((n as f64 - 2_500.0).abs() < 4.0 * sigma, "{id}: {n}");
        }
    }
}
