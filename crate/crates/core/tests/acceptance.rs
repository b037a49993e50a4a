//! Acceptance checks. Each criterion prints one PASS, FAIL or SKIP line and
//! the test fails if any criterion fails.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use factfilter::backend::MockBackend;
use factfilter::corpus::{Pair, Split};
use factfilter::filtration::{self, FilterError};
use factfilter::frankval::{
    flip_analysis, CategoryFlags, CorrelationMode, CovariateSpec, ErrorCategory, FrankAnnotation, SourceDataset,
};
use factfilter::metrics::rouge2;
use factfilter::scorers::{score_pair, ScoreRecord, ScoreTable, ScorerKind};
use factfilter::stats::{self, WilcoxonMethod};

// Tolerances and budgets.
const ROUGE_BUDGET: Duration = Duration::from_secs(5);
const PARTIAL_TOL: f64 = 1e-10;
const WILCOXON_APPROX_TOL: f64 = 0.02;
const FILTER_BUDGET: Duration = Duration::from_secs(30);
const FLIP_NOISE_TOL: f64 = 0.1;
const SCORER_TOL: f64 = 1e-12;
const RATIO_EPS: f64 = 1e-12;
const REAL_RATIO_RANGE: (f64, f64) = (0.25, 0.75);

enum Outcome {
    Pass(String),
    Skip(String),
}

type Check = fn() -> Outcome;

#[test]
fn acceptance() {
    let checks: [(u32, Check); 8] = [
        (1, rouge_matches_bigram_oracle),
        (2, partial_correlation_matches_normal_equations),
        (3, wilcoxon_exact_and_approximate),
        (4, filtration_set_algebra),
        (5, toy_pipeline_is_reproducible),
        (6, flip_analysis_singles_out_category),
        (7, mock_scorer_analytics),
        (8, real_data_selection_ratio),
    ];
    let mut failed = Vec::new();
    for (n, check) in checks {
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(Outcome::Pass(detail)) => println!("criterion {n}: PASS - {detail}"),
            Ok(Outcome::Skip(detail)) => println!("criterion {n}: SKIP - {detail}"),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("criterion {n}: FAIL - {msg}");
                failed.push(n);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

// ---- 1: ROUGE-2 ----

/// Bigram overlap by sorting both bigram lists and merging.
fn oracle_rouge2(candidate: &str, reference: &str) -> (f64, f64, f64) {
    let bigrams = |text: &str| {
        let toks: Vec<String> = text.split_whitespace().map(|t| t.to_lowercase()).collect();
        let mut v: Vec<(String, String)> = toks.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
        v.sort();
        v
    };
    let (c, r) = (bigrams(candidate), bigrams(reference));
    let (mut i, mut j, mut overlap) = (0, 0, 0usize);
    while i < c.len() && j < r.len() {
        match c[i].cmp(&r[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                overlap += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let p = if c.is_empty() { 0.0 } else { overlap as f64 / c.len() as f64 };
    let rc = if r.is_empty() { 0.0 } else { overlap as f64 / r.len() as f64 };
    let f = if p + rc > 0.0 { 2.0 * p * rc / (p + rc) } else { 0.0 };
    (p, rc, f)
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const VOCAB: [&str; 8] = ["the", "The", "cat", "CAT", "sat", "on", "mat", "a"];
    let len = rng.random_range(0..25);
    (0..len).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

fn rouge_matches_bigram_oracle() -> Outcome {
    let start = Instant::now();
    let worked = rouge2("the cat sat", "the cat slept");
    assert!(
        worked.precision == 0.5 && worked.recall == 0.5 && worked.f1 == 0.5,
        "worked example gave {worked:?}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1000 {
        let (c, r) = (random_text(&mut rng), random_text(&mut rng));
        let got = rouge2(&c, &r);
        let want = oracle_rouge2(&c, &r);
        assert!(
            (got.precision, got.recall, got.f1) == want,
            "pair {i}: {got:?} vs oracle {want:?} for {c:?} / {r:?}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed < ROUGE_BUDGET, "took {elapsed:?}");
    Outcome::Pass(format!("1000 pairs exact, worked example P=R=F=0.5, {elapsed:.2?} < {ROUGE_BUDGET:?}"))
}

// ---- 2: partial correlation ----

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting.
fn gauss_jordan(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let k = b.len();
    for col in 0..k {
        let pivot = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let d = a[col][col];
        for v in a[col].iter_mut() {
            *v /= d;
        }
        b[col] /= d;
        for row in 0..k {
            if row != col {
                let f = a[row][col];
                let pivot_row = a[col].clone();
                for (v, p) in a[row].iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                b[row] -= f * b[col];
            }
        }
    }
    b
}

fn oracle_partial(x: &[f64], y: &[f64], z: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let design: Vec<Vec<f64>> = (0..n)
        .map(|i| std::iter::once(1.0).chain(z.iter().map(|c| c[i])).collect())
        .collect();
    let k = design[0].len();
    let xtx: Vec<Vec<f64>> = (0..k)
        .map(|a| (0..k).map(|b| (0..n).map(|i| design[i][a] * design[i][b]).sum()).collect())
        .collect();
    let resid = |t: &[f64]| -> Vec<f64> {
        let xty: Vec<f64> = (0..k).map(|a| (0..n).map(|i| design[i][a] * t[i]).sum()).collect();
        let beta = gauss_jordan(xtx.clone(), xty);
        (0..n).map(|i| t[i] - (0..k).map(|a| design[i][a] * beta[a]).sum::<f64>()).collect()
    };
    let (rx, ry) = (resid(x), resid(y));
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

fn partial_correlation_matches_normal_equations() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for inst in 0..200 {
        let n = 20;
        let n_cov = inst % 4;
        let z: Vec<Vec<f64>> = (0..n_cov).map(|_| (0..n).map(|_| normal(&mut rng)).collect()).collect();
        let x: Vec<f64> = (0..n).map(|i| normal(&mut rng) + z.iter().map(|c| c[i]).sum::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|i| 0.5 * x[i] + normal(&mut rng)).collect();
        let got = stats::partial_pearson(&x, &y, &z).unwrap();
        let want = oracle_partial(&x, &y, &z);
        let err = (got.r - want).abs();
        assert!(err <= PARTIAL_TOL, "instance {inst}: {} vs oracle {want}", got.r);
        worst = worst.max(err);
        if n_cov == 0 {
            assert_eq!(got.r.to_bits(), stats::pearson(&x, &y).unwrap().to_bits(), "Z empty differs from pearson");
        }
    }
    Outcome::Pass(format!("200 instances, max |err| {worst:.1e} <= {PARTIAL_TOL:e}, empty Z equals pearson bit for bit"))
}

// ---- 3: Wilcoxon ----

/// Two-sided exact p by enumerating every sign assignment of `ranks`.
fn enumerate_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len();
    let total: f64 = ranks.iter().sum();
    let observed = (w_plus - total / 2.0).abs();
    let hits = (0u32..1 << n)
        .filter(|mask| {
            let w: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
            (w - total / 2.0).abs() >= observed - 1e-9
        })
        .count();
    hits as f64 / (1u64 << n) as f64
}

fn wilcoxon_exact_and_approximate() -> Outcome {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [0.0; 5];
    let res = stats::wilcoxon_signed_rank(&a, &b).unwrap();
    let brute = enumerate_p(&[1.0, 2.0, 3.0, 4.0, 5.0], 15.0);
    assert_eq!(brute, 2.0 / 32.0);
    assert_eq!(res.method, WilcoxonMethod::Exact);
    assert_eq!(res.p_value, 0.0625, "exact p {}", res.p_value);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let shift = rng.random_range(-0.5..0.5);
        let a: Vec<f64> = (0..20).map(|_| normal(&mut rng) + shift).collect();
        let b: Vec<f64> = (0..20).map(|_| normal(&mut rng)).collect();
        let exact = stats::wilcoxon_signed_rank_with(&a, &b, Some(WilcoxonMethod::Exact)).unwrap();
        let approx = stats::wilcoxon_signed_rank_with(&a, &b, Some(WilcoxonMethod::NormalApprox)).unwrap();
        assert_eq!(exact.w_statistic, approx.w_statistic);
        let gap = (exact.p_value - approx.p_value).abs();
        assert!(gap <= WILCOXON_APPROX_TOL, "trial {trial}: exact {} vs normal {}", exact.p_value, approx.p_value);
        worst = worst.max(gap);
    }
    Outcome::Pass(format!(
        "p([1..5]) = 0.0625 by enumeration, 200 trials at n=20 max |exact - normal| {worst:.4} <= {WILCOXON_APPROX_TOL}"
    ))
}

// ---- 4: filtration ----

fn table_from(columns: &[(&str, Vec<f64>)]) -> ScoreTable {
    let records = columns.iter().flat_map(|(name, values)| {
        values.iter().enumerate().map(move |(i, &v)| ScoreRecord {
            pair_id: format!("p{i:04}"),
            scorer: name.to_string(),
            backend_name: "mock".into(),
            backend_version: "test".into(),
            value: Some(v),
            truncated: false,
            error: None,
        })
    });
    ScoreTable::from_records("toy", records).unwrap()
}

fn kept(result: Result<filtration::FilterManifest, FilterError>) -> BTreeSet<String> {
    match result {
        Ok(m) => m.kept_ids.into_iter().collect(),
        Err(FilterError::EmptySelection) => BTreeSet::new(),
        Err(e) => panic!("filter failed: {e}"),
    }
}

fn filtration_set_algebra() -> Outcome {
    let start = Instant::now();
    let scorers = ["greedy", "condll", "dae"];
    let mut granular = 0usize;
    for seed in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=1000usize);
        // Small value ranges give plenty of ties on some seeds.
        let levels = if seed % 3 == 0 { 20 } else { 1_000_000 };
        let columns: Vec<(&str, Vec<f64>)> = scorers
            .iter()
            .map(|s| (*s, (0..n).map(|_| rng.random_range(0..levels) as f64).collect()))
            .collect();
        let table = table_from(&columns);
        // Strictly increasing on the sampled values.
        let warped: Vec<(&str, Vec<f64>)> = columns
            .iter()
            .map(|(s, v)| (*s, v.iter().map(|x| (x / 1e6).exp() * 3.0 - 7.0).collect()))
            .collect();
        let warped = table_from(&warped);

        let mut qs: Vec<f64> = (0..3).map(|_| rng.random_range(1e-6..0.5)).collect();
        qs.sort_by(f64::total_cmp);
        let mut previous: Option<(BTreeSet<String>, Vec<BTreeSet<String>>)> = None;
        for &q in &qs {
            let combined = kept(filtration::intersect_filter(&table, q));
            let singles: Vec<BTreeSet<String>> = scorers
                .iter()
                .map(|s| kept(filtration::single_scorer_filter(&table, s, q)))
                .collect();

            let ratio = combined.len() as f64 / n as f64;
            assert!(ratio >= 1.0 - 3.0 * q - RATIO_EPS, "seed {seed}: ratio {ratio} below 1-3q at q={q}, n={n}");
            let exact = (1.0 - q) * n as f64;
            if (exact - exact.round()).abs() <= 1e-9 {
                assert!(ratio <= 1.0 - q + RATIO_EPS, "seed {seed}: ratio {ratio} above 1-q at q={q}, n={n}");
            } else {
                let k = filtration::keep_count(n, q);
                assert!(ratio <= k as f64 / n as f64 + RATIO_EPS, "seed {seed}: ratio {ratio} above ceil bound");
                if ratio > 1.0 - q {
                    granular += 1;
                }
            }
            for (s, single) in scorers.iter().zip(&singles) {
                assert!(combined.is_subset(single), "seed {seed}: combined not within {s} at q={q}");
            }
            assert_eq!(combined, kept(filtration::intersect_filter(&warped, q)), "seed {seed}: transform changed keep set");
            for (s, single) in scorers.iter().zip(&singles) {
                assert_eq!(
                    single,
                    &kept(filtration::single_scorer_filter(&warped, s, q)),
                    "seed {seed}: transform changed {s} keep set"
                );
            }
            if let Some((prev_combined, prev_singles)) = &previous {
                assert!(combined.is_subset(prev_combined), "seed {seed}: combined keep sets not nested");
                for (now, before) in singles.iter().zip(prev_singles) {
                    assert!(now.is_subset(before), "seed {seed}: single keep sets not nested");
                }
            }
            previous = Some((combined, singles));
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < FILTER_BUDGET, "took {elapsed:?}");
    Outcome::Pass(format!(
        "500 seeds x 3 thresholds, {elapsed:.2?} < {FILTER_BUDGET:?}; ratio >= 1-3q always; \
         ratio <= 1-q whenever (1-q)n is whole, else <= ceil((1-q)n)/n ({granular} cells above 1-q by rounding)"
    ))
}

// ---- 5: end to end ----

fn toy_pipeline_is_reproducible() -> Outcome {
    let expected = std::fs::read_to_string(common::golden_dir().join("manifest.sha256")).unwrap();
    let expected = expected.trim();
    for (run, jobs) in [(1, 1), (2, 1), (3, 4)] {
        let dir = tempfile::tempdir().unwrap();
        common::run_toy_pipeline(dir.path(), jobs);
        let hash = common::manifest_hash(&dir.path().join("manifest.json"));
        assert_eq!(hash, expected, "run {run} (jobs {jobs}) manifest hash");
        let bad = common::golden_mismatches(dir.path());
        assert!(bad.is_empty(), "run {run} (jobs {jobs}) differs in {bad:?}");
    }
    Outcome::Pass(format!(
        "3 runs (jobs 1, 1, 4) match manifest {}… and {} golden files byte for byte",
        &expected[..12],
        common::GOLDEN_FILES.len()
    ))
}

// ---- 6: flip analysis ----

fn synthetic_annotations(rng: &mut ChaCha8Rng, per_dataset: usize) -> Vec<FrankAnnotation> {
    let mut out = Vec::new();
    for (d, dataset) in [SourceDataset::Cnndm, SourceDataset::Xsum].into_iter().enumerate() {
        for i in 0..per_dataset {
            let flags = CategoryFlags {
                semantic_frame: rng.random_bool(0.3),
                discourse: rng.random_bool(0.3),
                content_verifiability: rng.random_bool(0.3),
            };
            let factuality = if flags.any() { rng.random_range(0.0..0.7) } else { 1.0 };
            let system = format!("sys{}", rng.random_range(0..4));
            out.push(FrankAnnotation::new(format!("d{d}-{i}"), dataset, system, factuality, flags));
        }
    }
    out
}

fn flip_analysis_singles_out_category() -> Outcome {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anns = synthetic_annotations(&mut rng, 150);
        let scores: BTreeMap<String, BTreeMap<String, f64>> = ErrorCategory::ALL
            .iter()
            .map(|&c| {
                let col = anns
                    .iter()
                    .map(|a| (a.summary_id.clone(), if a.category_flags.get(c) { 0.0 } else { 1.0 }))
                    .collect();
                (c.as_str().to_string(), col)
            })
            .collect();
        let report = flip_analysis(&scores, &anns, CovariateSpec::SystemIndicators, CorrelationMode::Pearson).unwrap();
        for target in ErrorCategory::ALL {
            for dataset in [SourceDataset::Cnndm, SourceDataset::Xsum] {
                let own = report.delta(target.as_str(), dataset, target).unwrap();
                for other in ErrorCategory::ALL.into_iter().filter(|&c| c != target) {
                    let d = report.delta(target.as_str(), dataset, other).unwrap();
                    assert!(own > d, "seed {seed}: scorer for {target} on {dataset} has delta {own} <= {d} for {other}");
                }
            }
        }
    }

    // Each draw is checked against the bound as stated. Flipping a category
    // anti-correlates the labels, so delta for a noise scorer has a spread of
    // roughly 2/sqrt(n) and some draws land past the bound by chance.
    let mut worst: f64 = 0.0;
    let mut over = Vec::new();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let anns = synthetic_annotations(&mut rng, 1000);
        let noise: BTreeMap<String, f64> = anns.iter().map(|a| (a.summary_id.clone(), rng.random())).collect();
        let scores = BTreeMap::from([("noise".to_string(), noise)]);
        let report = flip_analysis(&scores, &anns, CovariateSpec::SystemIndicators, CorrelationMode::Pearson).unwrap();
        let draw = report.rows.iter().map(|r| r.delta.abs()).fold(0.0, f64::max);
        worst = worst.max(draw);
        if draw >= FLIP_NOISE_TOL {
            over.push(seed);
        }
    }
    assert!(
        over.is_empty(),
        "target category always has the largest delta (100 seeds), but the noise scorer at n=1000 per dataset \
         reached |delta| >= {FLIP_NOISE_TOL} in {}/100 draws (max {worst:.4})",
        over.len()
    );
    Outcome::Pass(format!(
        "100 seeds x 3 categories x 2 datasets, target category always has the largest delta; \
         noise scorer at n=1000 per dataset max |delta| {worst:.4} < {FLIP_NOISE_TOL} over 100 draws"
    ))
}

// ---- 7: mock scorers ----

fn score(kind: ScorerKind, document: &str, summary: &str) -> f64 {
    let backend = MockBackend::default();
    let pair = Pair::new("x", document, summary, Split::Test);
    score_pair(kind, &pair, &backend).unwrap().value
}

fn mock_scorer_analytics() -> Outcome {
    let doc = "the cat sat on the mat";
    let ln9 = 0.9f64.ln();
    let ln1 = 0.1f64.ln();
    assert_eq!(score(ScorerKind::GreedyPrecision, doc, doc), 1.0);
    assert_eq!(score(ScorerKind::ArcEntailment, doc, doc), 1.0);
    let condll = score(ScorerKind::ConditionalLikelihood, doc, doc);
    assert!((condll - ln9).abs() <= SCORER_TOL, "verbatim condll {condll}");

    // Greedy values come from tests/oracles/mock_greedy.py.
    let cases: [(ScorerKind, &str, &str, f64); 6] = [
        (ScorerKind::GreedyPrecision, doc, "the dog sat", 0.7506497198122526),
        (ScorerKind::GreedyPrecision, doc, "volcano penguin", 0.17979681920128343),
        (ScorerKind::GreedyPrecision, "alpha beta gamma delta", "alpha beta epsilon zeta", 0.5571686845682903),
        (ScorerKind::ConditionalLikelihood, doc, "the dog sat", (2.0 * ln9 + ln1) / 3.0),
        (ScorerKind::ConditionalLikelihood, doc, "penguin", ln1),
        // arcs the→cat, cat→ran, on→ran; only the first has both ends in the document
        (ScorerKind::ArcEntailment, doc, "the cat ran on", 1.0 / 3.0),
    ];
    for (kind, d, s, want) in cases {
        let got = score(kind, d, s);
        assert!((got - want).abs() <= SCORER_TOL, "{kind:?} on {s:?}: {got} vs {want}");
    }
    Outcome::Pass(format!("verbatim copy 1.0 / ln 0.9 / 1.0, {} mixed cases within {SCORER_TOL:e}", cases.len()))
}

// ---- 8: real corpora ----

/// Expects `FACTFILTER_REAL_DATA` to name a directory holding
/// `<corpus>.jsonl` with a `<corpus>.scores.jsonl` next to it, scored with
/// the real backends.
fn real_data_selection_ratio() -> Outcome {
    let Some(root) = std::env::var_os("FACTFILTER_REAL_DATA") else {
        return Outcome::Skip("FACTFILTER_REAL_DATA not set".into());
    };
    let root = Path::new(&root);
    let mut corpora: Vec<String> = std::fs::read_dir(root)
        .unwrap()
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter_map(|f| f.strip_suffix(".scores.jsonl").map(str::to_string))
        .filter(|c| root.join(format!("{c}.jsonl")).exists())
        .collect();
    corpora.sort();
    assert!(!corpora.is_empty(), "no <corpus>.jsonl + <corpus>.scores.jsonl pairs in {}", root.display());
    let mut ratios = Vec::new();
    let work = tempfile::tempdir().unwrap();
    for c in &corpora {
        let corpus = root.join(format!("{c}.jsonl"));
        let scores = root.join(format!("{c}.scores.jsonl"));
        let manifest = work.path().join(format!("{c}.manifest.json"));
        let stats_dir = work.path().join(c);
        let s = |p: &Path| p.to_str().unwrap().to_string();
        common::run_ok(
            work.path(),
            &["filter", "--in", &s(&corpus), "--scores", &s(&scores), "--q", "0.25", "--out", &s(&manifest)],
        );
        common::run_ok(
            work.path(),
            &["stats", "--in", &s(&corpus), "--manifest", &s(&manifest), "--scores", &s(&scores), "--out-dir", &s(&stats_dir)],
        );
        let table = std::fs::read_to_string(stats_dir.join("corpus_stats.csv")).unwrap();
        let mut lines = table.lines();
        assert_eq!(
            lines.next(),
            Some("corpus,selection,splits,n_pairs,mean_doc_words,mean_sum_words,selection_ratio")
        );
        let filtered = lines.find(|l| !l.split(',').nth(1).unwrap_or("").starts_with("full")).expect("filtered row");
        let ratio: f64 = filtered.rsplit(',').next().unwrap().parse().unwrap();
        assert!(
            (REAL_RATIO_RANGE.0..=REAL_RATIO_RANGE.1).contains(&ratio),
            "{c}: selection ratio {ratio} outside {REAL_RATIO_RANGE:?}"
        );
        ratios.push(format!("{c}={ratio:.4}"));
    }
    Outcome::Pass(format!("ratios within {REAL_RATIO_RANGE:?}: {}", ratios.join(", ")))
}
