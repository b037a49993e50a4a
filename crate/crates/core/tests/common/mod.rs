//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Files the toy pipeline produces that are compared byte for byte.
pub const GOLDEN_FILES: &[&str] = &[
    "scores.jsonl",
    "manifest.json",
    "stats/corpus_stats.csv",
    "stats/distribution_summary.csv",
    "stats/distribution_histogram.csv",
    "report_a.csv",
    "report_b.csv",
    "comparison.csv",
    "table.csv",
];

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_factfilter"))
}

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .env_remove("FACTFILTER_BACKENDS")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn run_ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "factfilter {} failed with {:?}\n{}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Copies the toy inputs into `dir` and runs score, filter, stats, two
/// evaluations and a comparison there with `jobs` workers.
pub fn run_toy_pipeline(dir: &Path, jobs: usize) {
    for f in ["toy.jsonl", "toy_generated_a.jsonl", "toy_generated_b.jsonl"] {
        std::fs::copy(data_dir().join(f), dir.join(f)).expect("copy toy input");
    }
    let jobs = jobs.to_string();
    run_ok(
        dir,
        &["score", "--backend", "mock", "--scorers", "greedy,condll,dae", "--in", "toy.jsonl", "--out", "scores.jsonl", "--jobs", &jobs],
    );
    run_ok(dir, &["filter", "--q", "0.25", "--in", "toy.jsonl", "--scores", "scores.jsonl", "--out", "manifest.json"]);
    run_ok(
        dir,
        &["stats", "--in", "toy.jsonl", "--manifest", "manifest.json", "--scores", "scores.jsonl", "--out-dir", "stats"],
    );
    for (gen, out) in [("toy_generated_a.jsonl", "report_a.csv"), ("toy_generated_b.jsonl", "report_b.csv")] {
        run_ok(
            dir,
            &["evaluate", "--in", "toy.jsonl", "--generated", gen, "--manifest", "manifest.json", "--out", out, "--jobs", &jobs],
        );
    }
    run_ok(
        dir,
        &["compare", "--a", "report_a.csv", "--b", "report_b.csv", "--label-a", "full", "--label-b", "filtered", "--out", "comparison.csv", "--table", "table.csv"],
    );
}

/// Golden files that differ from the pipeline output in `dir`.
pub fn golden_mismatches(dir: &Path) -> Vec<String> {
    GOLDEN_FILES
        .iter()
        .filter(|f| {
            let produced = std::fs::read(dir.join(f)).ok();
            let expected = std::fs::read(golden_dir().join(f)).ok();
            produced.is_none() || produced != expected
        })
        .map(|f| f.to_string())
        .collect()
}

pub fn manifest_hash(path: &Path) -> String {
    let text = std::fs::read_to_string(path).expect("manifest readable");
    factfilter::filtration::FilterManifest::from_json(&text)
        .expect("manifest parses")
        .content_hash()
}
