mod common;

use std::path::Path;
use std::process::Command;

use common::*;

fn bless_requested() -> bool {
    std::env::var_os("FACTFILTER_BLESS").is_some()
}

#[test]
fn toy_pipeline_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    run_toy_pipeline(dir.path(), 1);
    let hash = manifest_hash(&dir.path().join("manifest.json"));
    if bless_requested() {
        for f in GOLDEN_FILES {
            let target = golden_dir().join(f);
            std::fs::create_dir_all(target.parent().unwrap()).unwrap();
            std::fs::copy(dir.path().join(f), target).unwrap();
        }
        std::fs::write(golden_dir().join("manifest.sha256"), format!("{hash}\n")).unwrap();
        return;
    }
    assert_eq!(golden_mismatches(dir.path()), Vec::<String>::new());
    let expected = std::fs::read_to_string(golden_dir().join("manifest.sha256")).unwrap();
    assert_eq!(hash, expected.trim());
}

#[test]
fn score_writes_one_row_per_pair_and_scorer() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(data_dir().join("toy.jsonl"), dir.path().join("toy.jsonl")).unwrap();
    run_ok(
        dir.path(),
        &["score", "--backend", "mock", "--scorers", "greedy,condll,dae", "--in", "toy.jsonl", "--out", "scores.jsonl"],
    );
    let text = std::fs::read_to_string(dir.path().join("scores.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 150);
    assert!(dir.path().join("scores.jsonl.config.json").exists());
}

#[test]
fn interrupted_score_run_resumes_to_identical_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(data_dir().join("toy.jsonl"), dir.path().join("toy.jsonl")).unwrap();
    let golden = std::fs::read_to_string(golden_dir().join("scores.jsonl")).unwrap();
    // keep 70 complete rows plus half of the next one
    let cut: usize = golden.lines().take(70).map(|l| l.len() + 1).sum();
    let torn = &golden[..cut + 20];
    std::fs::write(dir.path().join("scores.jsonl"), torn).unwrap();
    run_ok(dir.path(), &["score", "--in", "toy.jsonl", "--out", "scores.jsonl", "--jobs", "3"]);
    assert_eq!(std::fs::read_to_string(dir.path().join("scores.jsonl")).unwrap(), golden);
    // a second run has nothing left to do
    run_ok(dir.path(), &["score", "--in", "toy.jsonl", "--out", "scores.jsonl"]);
    assert_eq!(std::fs::read_to_string(dir.path().join("scores.jsonl")).unwrap(), golden);
}

#[test]
fn filter_on_its_own_manifest_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    run_toy_pipeline(dir.path(), 1);
    run_ok(
        dir.path(),
        &["filter", "--in", "toy.jsonl", "--scores", "scores.jsonl", "--manifest", "manifest.json", "--out", "again.json"],
    );
    assert_eq!(manifest_hash(&dir.path().join("again.json")), manifest_hash(&dir.path().join("manifest.json")));
    assert_eq!(
        std::fs::read(dir.path().join("again.json")).unwrap(),
        std::fs::read(dir.path().join("manifest.json")).unwrap()
    );
}

#[test]
fn config_echo_replays_the_run() {
    let dir = tempfile::tempdir().unwrap();
    run_toy_pipeline(dir.path(), 1);
    let before = std::fs::read(dir.path().join("report_a.csv")).unwrap();
    std::fs::remove_file(dir.path().join("report_a.csv")).unwrap();
    run_ok(dir.path(), &["--config", "report_a.csv.config.json"]);
    assert_eq!(std::fs::read(dir.path().join("report_a.csv")).unwrap(), before);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = run(dir.path(), &["frobnicate"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));

    let bad_q = run(dir.path(), &["filter", "--in", "a", "--scores", "b", "--out", "c", "--q", "0"]);
    assert_eq!(bad_q.status.code(), Some(1));

    let missing = run(dir.path(), &["score", "--in", "missing.jsonl", "--out", "s.jsonl"]);
    assert_eq!(missing.status.code(), Some(2));

    let help = run(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));

    std::fs::copy(data_dir().join("toy.jsonl"), dir.path().join("toy.jsonl")).unwrap();
    let registry = dir.path().join("backends.json");
    std::fs::write(&registry, r#"{"backends": {"broken": {"command": ["/nonexistent/model-server"]}}}"#).unwrap();
    let out = Command::new(bin())
        .current_dir(dir.path())
        .args(["score", "--backend", "broken", "--in", "toy.jsonl", "--out", "s.jsonl"])
        .env("FACTFILTER_BACKENDS", &registry)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn remote_backend_over_a_child_process_matches_the_mock() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(data_dir().join("toy.jsonl"), dir.path().join("toy.jsonl")).unwrap();
    let registry = dir.path().join("backends.json");
    let entry = serde_json::json!({
        "backends": {"served-mock": {"command": [bin(), "serve-backend", "--backend", "mock"]}}
    });
    std::fs::write(&registry, entry.to_string()).unwrap();
    let out = Command::new(bin())
        .current_dir(dir.path())
        .args(["score", "--backend", "served-mock", "--in", "toy.jsonl", "--out", "scores.jsonl"])
        .env("FACTFILTER_BACKENDS", &registry)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("scores.jsonl")).unwrap(),
        std::fs::read_to_string(golden_dir().join("scores.jsonl")).unwrap()
    );
}

#[test]
fn ingest_maps_raw_fields() {
    let dir = tempfile::tempdir().unwrap();
    let raw = [
        r#"{"id": 7, "article": "the council approved the budget.", "highlights": "council approved budget", "part": "val"}"#,
        r#"{"id": "x2", "article": "rain fell all day.", "highlights": "rain fell"}"#,
    ];
    std::fs::write(dir.path().join("raw.jsonl"), raw.join("\n")).unwrap();
    run_ok(
        dir.path(),
        &[
            "ingest", "--in", "raw.jsonl", "--out", "news.jsonl", "--document-field", "article", "--summary-field",
            "highlights", "--split-field", "part", "--split", "train",
        ],
    );
    let corpus = factfilter::corpus::load_corpus(&dir.path().join("news.jsonl"), Default::default()).unwrap();
    assert_eq!(corpus.name(), "news");
    assert_eq!(corpus.ids().collect::<Vec<_>>(), ["7", "x2"]);
    assert_eq!(corpus.pairs()[0].split, factfilter::corpus::Split::Validation);
    assert_eq!(corpus.pairs()[1].split, factfilter::corpus::Split::Train);

    std::fs::write(dir.path().join("bad.jsonl"), r#"{"id": "a", "article": "x"}"#).unwrap();
    let out = run(dir.path(), &["ingest", "--in", "bad.jsonl", "--out", "bad_out.jsonl", "--split", "test"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_output_is_independent_of_parallelism() {
    let dir = tempfile::tempdir().unwrap();
    run_toy_pipeline(dir.path(), 1);
    for (jobs, out) in [("1", "sweep1.csv"), ("4", "sweep4.csv")] {
        run_ok(
            dir.path(),
            &["sweep", "--in", "toy.jsonl", "--scores", "scores.jsonl", "--seed", "11", "--jobs", jobs, "--out", out],
        );
    }
    let a = std::fs::read_to_string(dir.path().join("sweep1.csv")).unwrap();
    assert_eq!(a, std::fs::read_to_string(dir.path().join("sweep4.csv")).unwrap());
    // combined, three single-scorer strategies and random at four thresholds
    assert_eq!(a.lines().count(), 1 + 5 * 4);
    assert!(a.starts_with("strategy,threshold,n_selected,ratio,greedy,condll,dae,blanc,manifest_hash,error\n"));
}

fn write_frank_fixture(dir: &Path) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let mut ann = String::new();
    let mut scores = String::new();
    for i in 0..200 {
        let flags = [rng.random_bool(0.3), rng.random_bool(0.3), rng.random_bool(0.3)];
        let fact = if flags.iter().any(|f| *f) { rng.random_range(0.0..0.8) } else { 1.0 };
        let ds = if i % 2 == 0 { "cnndm" } else { "xsum" };
        ann.push_str(
            &serde_json::json!({
                "summary_id": format!("f{i}"), "dataset": ds, "system": format!("m{}", i % 4),
                "factuality": fact, "semantic_frame": flags[0], "discourse": flags[1],
                "content_verifiability": flags[2],
            })
            .to_string(),
        );
        ann.push('\n');
        let noisy = fact + rng.random_range(-0.3..0.3);
        scores.push_str(
            &serde_json::json!({"pair_id": format!("f{i}"), "scorer": "greedy", "backend_name": "mock",
                "backend_version": "1", "value": noisy, "truncated": false})
            .to_string(),
        );
        scores.push('\n');
    }
    std::fs::write(dir.join("frank.jsonl"), ann).unwrap();
    std::fs::write(dir.join("frank_scores.jsonl"), scores).unwrap();
}

#[test]
fn frank_commands_write_plot_ready_csv() {
    let dir = tempfile::tempdir().unwrap();
    write_frank_fixture(dir.path());
    run_ok(
        dir.path(),
        &["validate-frank", "--annotations", "frank.jsonl", "--scores", "frank_scores.jsonl", "--out", "fig1.csv"],
    );
    let fig1 = std::fs::read_to_string(dir.path().join("fig1.csv")).unwrap();
    assert_eq!(fig1.lines().count(), 3);
    assert!(fig1.starts_with("scorer,dataset,n,n_covariates,r,mode,pooling\ngreedy,cnndm,100,1,"), "{fig1}");

    run_ok(
        dir.path(),
        &["flip-analysis", "--annotations", "frank.jsonl", "--scores", "frank_scores.jsonl", "--out", "fig2.csv", "--mode", "rank"],
    );
    let fig2 = std::fs::read_to_string(dir.path().join("fig2.csv")).unwrap();
    assert!(fig2.starts_with("scorer,dataset,category,r_original,r_flipped,delta\n"));
    assert_eq!(fig2.lines().count(), 1 + 2 * 3);

    std::fs::write(
        dir.path().join("bad.jsonl"),
        r#"{"summary_id":"z","dataset":"xsum","system":"s","factuality":0.2,"semantic_frame":false,"discourse":false,"content_verifiability":false}"#,
    )
    .unwrap();
    let out = run(dir.path(), &["validate-frank", "--annotations", "bad.jsonl", "--scores", "frank_scores.jsonl", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("z"));
}
