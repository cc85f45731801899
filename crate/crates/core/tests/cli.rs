use std::path::{Path, PathBuf};
use std::process::Command;

use vcop::cli::{run, EXIT_FINDINGS, EXIT_OK, EXIT_USAGE};

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(rel)
}

fn vcop(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("vcop").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

const BROKEN_MANUAL: &str = "\
#MANUAL TST Test manual

#CHAPTER 1 Tests

#SECTION 1.1 Only @1

#STEPS X .......... Y
";

#[test]
fn ingest_bundled_manuals() {
    let (code, out, _) = vcop(&["ingest"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.trim(), "2 manuals, 50 procedures");
}

#[test]
fn ingest_explicit_files() {
    let qrh = data("qrh-a320.qrh");
    let (code, out, _) = vcop(&["ingest", path_str(&qrh)]);
    assert_eq!(code, EXIT_OK);
    assert!(out.starts_with("1 manuals, "), "{out}");
}

#[test]
fn ingest_syntax_error_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.qrh");
    std::fs::write(&path, BROKEN_MANUAL).unwrap();
    let (code, _, err) = vcop(&["ingest", path_str(&path)]);
    assert_eq!(code, EXIT_FINDINGS);
    assert!(err.contains("SyntaxError"), "{err}");
    assert!(err.contains("line 7"), "{err}");
}

#[test]
fn ingest_missing_file_is_a_usage_error() {
    let (code, _, err) = vcop(&["ingest", "/nonexistent/manual.qrh"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("/nonexistent/manual.qrh"), "{err}");
}

#[test]
fn query_prints_excerpt_and_citation() {
    let panel = data("panels/eng1-fail.txt");
    let (code, out, err) = vcop(&[
        "query",
        "--setting",
        "SNAPSHOT_PLUS_INSTRUCTION",
        "--panel",
        path_str(&panel),
        "--instruction",
        "ECAM actions",
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.starts_with("Condition: "), "{out}");
    assert!(out.contains("QRH, section 2.1, page 17"), "{out}");
}

#[test]
fn query_json_round_trips() {
    let panel = data("panels/eng1-fail.txt");
    let (code, out, _) = vcop(&[
        "query",
        "--setting",
        "SNAPSHOT_ONLY",
        "--panel",
        path_str(&panel),
        "--json",
    ]);
    assert_eq!(code, EXIT_OK);
    let value: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(value["citation"]["manual_id"], "QRH");
    assert!(value["excerpt"].as_str().unwrap().contains(".........."));
}

#[test]
fn query_rejects_instruction_without_that_setting() {
    let panel = data("panels/eng1-fail.txt");
    let (code, _, err) = vcop(&[
        "query",
        "--setting",
        "SNAPSHOT_ONLY",
        "--panel",
        path_str(&panel),
        "--instruction",
        "ECAM actions",
    ]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("ExtraneousInput"), "{err}");
}

#[test]
fn query_normal_panel() {
    let panel = data("panels/cruise.txt");
    let (code, out, _) = vcop(&[
        "query",
        "--setting",
        "SNAPSHOT_ONLY",
        "--panel",
        path_str(&panel),
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("No anomaly detected"), "{out}");
}

#[test]
fn unknown_setting_is_a_usage_error() {
    let panel = data("panels/cruise.txt");
    let (code, _, _) = vcop(&[
        "query",
        "--setting",
        "TELEPATHY",
        "--panel",
        path_str(&panel),
    ]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn evaluate_bundled_dataset_prints_three_rows() {
    let (code, out, _) = vcop(&["evaluate"]);
    assert_eq!(code, EXIT_OK);
    let rows: Vec<&str> = out.lines().filter(|l| l.contains("100%")).collect();
    assert_eq!(rows.len(), 3, "{out}");
}

#[test]
fn evaluate_selected_settings() {
    let (code, out, _) = vcop(&[
        "evaluate",
        "--settings",
        "SNAPSHOT_ONLY,OCR_PLUS_INSTRUCTION",
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("OCR + Pilot's Instruction"));
    assert!(!out.contains("Image + Pilot's Instruction"), "{out}");
}

#[test]
fn evaluate_missing_dataset_is_a_usage_error() {
    let (code, _, _) = vcop(&["evaluate", "--dataset", "/nonexistent/dataset.jsonl"]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn evaluate_malformed_dataset_names_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"id\": 3}\n").unwrap();
    let (code, _, err) = vcop(&["evaluate", "--dataset", path_str(&path)]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("DatasetSyntaxError"), "{err}");
}

#[test]
fn replay_reproduces_recorded_rows() {
    let replay = data("replay/ablation.jsonl");
    let (code, out, _) = vcop(&["evaluate", "--replay", path_str(&replay)]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("94% 86% 72%"), "{out}");
}

#[test]
fn replay_breakdown() {
    let replay = data("replay/breakdown.jsonl");
    let (code, out, _) = vcop(&[
        "evaluate",
        "--replay",
        path_str(&replay),
        "--breakdown",
        "IFC",
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("42.11%"), "{out}");
}

#[test]
fn written_records_replay_to_the_same_table() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("records.jsonl");
    let (code, first, _) = vcop(&["evaluate", "--records", path_str(&records)]);
    assert_eq!(code, EXIT_OK);
    let (code, replayed, _) = vcop(&["evaluate", "--replay", path_str(&records)]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(first, replayed);
}

#[test]
fn output_is_deterministic() {
    let panel = data("panels/eng1-fail.txt");
    let args = [
        "query",
        "--setting",
        "SNAPSHOT_ONLY",
        "--panel",
        path_str(&panel),
        "--json",
    ];
    let a = vcop(&args);
    let b = vcop(&args);
    assert_eq!(a, b);
    assert_eq!(vcop(&["evaluate"]), vcop(&["evaluate"]));
}

#[test]
fn config_file_is_honoured() {
    let config = data("vcop.toml");
    let (code, out, err) = vcop(&["--config", path_str(&config), "evaluate"]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("100%"));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_vcop");
    let ok = Command::new(bin).arg("ingest").output().unwrap();
    assert_eq!(ok.status.code(), Some(EXIT_OK));
    assert_eq!(
        String::from_utf8_lossy(&ok.stdout).trim(),
        "2 manuals, 50 procedures"
    );
    let usage = Command::new(bin).arg("frobnicate").output().unwrap();
    assert_eq!(usage.status.code(), Some(EXIT_USAGE));
    let help = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(EXIT_OK));
}
