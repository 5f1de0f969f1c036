use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use teachmix::cli::{self, DECISIONS, ERRORS_COT, ERRORS_PCOT, MIXED_EXPORT};
use teachmix::corpus::{ingest_corpus, CorpusSchema, Split};
use teachmix::mixing::{load_decisions, load_records, select_per_skill, ErrorTable, RecordKind};
use teachmix::SignalKind;

fn fixture_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus")
}

fn write_config(dir: &Path, backend: &str) -> PathBuf {
    let text = format!(
        r#"corpus_root = "{corpus}"
backend_id = "teacher"
parallelism = 3
seed = 7
output_dir = "{out}"
fixed_timestamps = true

[retry]
max_attempts = 1
base_delay_ms = 0
jitter = false

[[backends]]
id = "teacher"
{backend}
"#,
        corpus = fixture_root().display(),
        out = dir.join("run").display(),
    );
    let path = dir.join("teachmix.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, args: &[&str]) -> i32 {
    let mut argv = vec![
        "teachmix".to_string(),
        "--config".into(),
        config.display().to_string(),
    ];
    argv.extend(args.iter().map(|s| s.to_string()));
    cli::run(argv)
}

fn manifest(dir: &Path, command: &str) -> serde_json::Value {
    let text =
        std::fs::read_to_string(dir.join("run/manifests").join(format!("{command}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn config_is_required_outside_demo() {
    assert_eq!(cli::run(["teachmix", "ingest"]), 2);
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kind = \"mock\"");
    assert_eq!(run(&cfg, &["--parallelism", "0", "ingest"]), 2);
    assert_eq!(run(&cfg, &["--backend", "missing", "ingest"]), 2);
    std::fs::write(&cfg, "corpus_root = 3\n").unwrap();
    assert_eq!(run(&cfg, &["ingest"]), 2);
}

#[test]
fn ingest_writes_stats_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kind = \"mock\"");
    assert_eq!(run(&cfg, &["ingest"]), 0);
    let m = manifest(dir.path(), "ingest");
    assert_eq!(m["counts"]["train"], 10);
    assert_eq!(m["counts"]["val"], 5);
    assert_eq!(m["counts"]["test"], 5);
    assert_eq!(m["status"], "complete");
    assert!(m["inputs"]["corpus"].is_string());
    assert!(dir.path().join("run/config.toml").exists());
}

#[test]
fn second_gen_cot_makes_no_backend_calls() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kind = \"mock\"");
    let signals = dir.path().join("run/signals/cot.jsonl");
    assert_eq!(run(&cfg, &["gen-cot"]), 0);
    let first = std::fs::read(&signals).unwrap();
    assert_eq!(manifest(dir.path(), "gen-cot")["backend_calls"], 15);
    assert_eq!(run(&cfg, &["gen-cot"]), 0);
    assert_eq!(manifest(dir.path(), "gen-cot")["backend_calls"], 0);
    assert_eq!(std::fs::read(&signals).unwrap(), first);

    // Without the signals file the cache still answers everything.
    std::fs::remove_file(&signals).unwrap();
    assert_eq!(run(&cfg, &["gen-cot"]), 0);
    assert_eq!(manifest(dir.path(), "gen-cot")["backend_calls"], 0);
    assert_eq!(std::fs::read(&signals).unwrap(), first);
}

#[test]
fn unreachable_teacher_is_partial() {
    std::env::set_var("TEACHMIX_TEST_KEY", "test-key");
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "kind = \"remote\"\nbase_url = \"http://127.0.0.1:9\"\nmodel_name = \"m\"\napi_key_env = \"TEACHMIX_TEST_KEY\"",
    );
    assert_eq!(run(&cfg, &["gen-cot", "--splits", "val"]), 3);
    let m = manifest(dir.path(), "gen-cot");
    assert_eq!(m["status"], "partial");
    assert_eq!(m["pending"].as_array().unwrap().len(), 5);
    assert_eq!(m["pending"][0]["stage"], "cot");
}

#[test]
fn replay_miss_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kind = \"replay\"");
    assert_eq!(run(&cfg, &["gen-cot", "--splits", "test"]), 4);
    let m = manifest(dir.path(), "gen-cot");
    assert_eq!(m["status"], "failed");
    assert_eq!(m["failed"].as_array().unwrap().len(), 5);
}

#[test]
fn missing_remote_key_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "kind = \"remote\"\nbase_url = \"http://127.0.0.1:9\"\nmodel_name = \"m\"\napi_key_env = \"TEACHMIX_TEST_UNSET_KEY\"",
    );
    assert_eq!(run(&cfg, &["gen-cot"]), 4);
}

fn generate_all(cfg: &Path) {
    for cmd in [&["gen-cot"][..], &["gen-skill-artifacts"], &["gen-pcot"]] {
        assert_eq!(run(cfg, cmd), 0, "{cmd:?}");
    }
}

#[test]
fn mix_with_scripted_answers_follows_recorded_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kind = \"mock\"");
    generate_all(&cfg);

    // CoT is wrong on the map questions, PCoT is wrong on the rest.
    let corpus = ingest_corpus(&fixture_root(), CorpusSchema::ScienceQa).unwrap();
    let mut cot = serde_json::Map::new();
    let mut pcot = serde_json::Map::new();
    for ex in corpus.split(Split::Val) {
        let wrong = Some((ex.answer_index + 1) % ex.options.len());
        let right = Some(ex.answer_index);
        let map = ex.skill.starts_with("Read a map");
        cot.insert(
            ex.id.clone(),
            serde_json::json!(if map { wrong } else { right }),
        );
        pcot.insert(
            ex.id.clone(),
            serde_json::json!(if map { right } else { wrong }),
        );
    }
    let answers = dir.path().join("answers.json");
    std::fs::write(
        &answers,
        serde_json::json!({"COT": cot, "PCOT": pcot}).to_string(),
    )
    .unwrap();
    assert_eq!(
        run(&cfg, &["mix", "--answers", answers.to_str().unwrap()]),
        0
    );

    let read_table = |rel: &str| -> ErrorTable {
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run").join(rel)).unwrap())
            .unwrap()
    };
    let recomputed = select_per_skill(&read_table(ERRORS_COT), &read_table(ERRORS_PCOT)).unwrap();
    let stored = load_decisions(&dir.path().join("run").join(DECISIONS)).unwrap();
    for (skill, d) in &recomputed {
        assert_eq!(&stored[skill], d);
    }
    assert_eq!(
        stored["Read a map: cardinal directions"].chosen,
        SignalKind::Pcot
    );
    assert_eq!(stored["Read a map: cardinal directions"].cot_errors, 2);
    for skill in [
        "Animal adaptations: beaks, mouths, and necks",
        "Interpret figures of speech",
        "Weather and climate around the world",
    ] {
        assert_eq!(stored[skill].chosen, SignalKind::Cot, "{skill}");
    }

    let records = load_records(&dir.path().join("run").join(MIXED_EXPORT)).unwrap();
    assert_eq!(records.len(), 10);
    let mut kinds: BTreeMap<&str, RecordKind> = BTreeMap::new();
    for r in &records {
        let want = if r.skill.starts_with("Read a map") {
            RecordKind::Pcot
        } else {
            RecordKind::Cot
        };
        assert_eq!(r.kind, want, "{}", r.example_id);
        assert_eq!(*kinds.entry(&r.skill).or_insert(r.kind), r.kind);
    }
}

#[test]
fn blend_export_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kind = \"mock\"");
    generate_all(&cfg);
    assert_eq!(
        run(&cfg, &["blend", "--p", "0.3"]),
        2,
        "blend needs a mixed export"
    );
    assert_eq!(run(&cfg, &["mix"]), 0);
    assert_eq!(run(&cfg, &["blend", "--p", "1.5"]), 2);
    assert_eq!(run(&cfg, &["blend", "--p", "0.3"]), 0);
    let blended = load_records(&dir.path().join("run/exports/teaching_blend_p30.jsonl")).unwrap();
    assert_eq!(
        blended
            .iter()
            .filter(|r| r.kind != RecordKind::Annotated)
            .count(),
        3
    );

    assert_eq!(run(&cfg, &["export", "--variant", "annotated"]), 0);
    let inputs = std::fs::read_to_string(dir.path().join("run/exports/test_inputs.jsonl")).unwrap();
    assert_eq!(inputs.lines().count(), 5);

    let preds = dir.path().join("preds.json");
    std::fs::write(
        &preds,
        r#"{"16": 2, "17": "The answer is (B).", "18": "(B)", "19": null, "20": 1}"#,
    )
    .unwrap();
    assert_eq!(
        run(&cfg, &["eval", "--predictions", preds.to_str().unwrap()]),
        0
    );
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("run/reports/eval_test.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["n"], 5);
    assert_eq!(report["correct"], 3);

    std::fs::write(&preds, r#"{"16": 2}"#).unwrap();
    assert_eq!(
        run(&cfg, &["eval", "--predictions", preds.to_str().unwrap()]),
        2
    );
    std::fs::write(&preds, r#"{"999": 0}"#).unwrap();
    assert_eq!(
        run(&cfg, &["eval", "--predictions", preds.to_str().unwrap()]),
        2
    );
}

#[test]
fn pcot_before_artifacts_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kind = \"mock\"");
    assert_eq!(run(&cfg, &["gen-pcot"]), 2);
}
