use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nni(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nni"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn nni")
}

fn ok(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

/// The one-line machine-readable error every failing command prints.
fn error_line(out: &Output) -> (i32, Value) {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    (
        out.status.code().unwrap(),
        serde_json::from_str(lines[0]).unwrap(),
    )
}

const SMALL_TRAIN: [&str; 6] = [
    "--regions",
    "20",
    "--level1-epochs",
    "20",
    "--level2-epochs",
    "30",
];

#[test]
fn generate_train_build_lookup_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&nni(
        &[
            "generate",
            "--names",
            "10000",
            "--seed",
            "1",
            "--output",
            "names.txt",
        ],
        d,
    ));
    let names = std::fs::read_to_string(d.join("names.txt")).unwrap();
    assert_eq!(names.lines().count(), 10_000);

    let train = ok(&nni(
        &[
            "train",
            "--dataset",
            "names.txt",
            "--regions",
            "100",
            "--seed",
            "1",
            "--output",
            "m.pnn",
        ],
        d,
    ));
    let acc = train["training"]["classification_accuracy"]
        .as_f64()
        .unwrap();
    assert!(acc > 0.5, "{train}");
    assert!(train["training"]["level1_mse"].as_f64().is_some());
    assert!(train["training"]["level2_mse"].as_f64().is_some());

    let build = ok(&nni(
        &[
            "build",
            "--dataset",
            "names.txt",
            "--model",
            "m.pnn",
            "--slots",
            "40000",
            "--output",
            "i.lni",
        ],
        d,
    ));
    assert_eq!(build["build"]["names"], 10_000);
    assert_eq!(build["build"]["slots"], 40_000);

    let first = names.lines().next().unwrap();
    let lookup = ok(&nni(
        &["lookup", "--index", "i.lni", first, "/absent/name"],
        d,
    ));
    assert_eq!(lookup["lookups"][0]["result"], "hit");
    assert_eq!(lookup["lookups"][0]["false_positive"], false);
    assert_eq!(lookup["stats"]["lookups"], 2);
}

#[test]
fn training_twice_gives_identical_model_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut args = vec![
        "train", "--names", "2000", "--seed", "9", "--output", "a.pnn",
    ];
    args.extend(SMALL_TRAIN);
    let a = ok(&nni(&args, d));
    args[6] = "b.pnn";
    let b = ok(&nni(&args, d));
    assert_eq!(a["training"]["model_crc"], b["training"]["model_crc"]);
    assert_eq!(
        std::fs::read(d.join("a.pnn")).unwrap(),
        std::fs::read(d.join("b.pnn")).unwrap()
    );
}

#[test]
fn build_rounds_slots_up_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut args = vec!["train", "--names", "1000", "--output", "m.pnn"];
    args.extend(SMALL_TRAIN);
    ok(&nni(&args, d));
    let out = nni(
        &[
            "build", "--names", "1000", "--model", "m.pnn", "--slots", "4010", "--output", "i.lni",
        ],
        d,
    );
    let summary = ok(&out);
    assert_eq!(summary["build"]["requested_slots"], 4010);
    assert_eq!(summary["build"]["slots"], 4020);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(
        stderr.contains("warning") && stderr.contains("4020"),
        "{stderr}"
    );
}

#[test]
fn failures_exit_nonzero_with_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let (code, err) = error_line(&nni(
        &["train", "--dataset", "missing.txt", "--output", "m.pnn"],
        d,
    ));
    assert_eq!((code, err["error"]["kind"].as_str()), (3, Some("io")));

    let (code, err) = error_line(&nni(&["bench", "--fp-target", "1.5", "--no-timing"], d));
    assert_eq!((code, err["error"]["kind"].as_str()), (2, Some("config")));

    let (code, err) = error_line(&nni(&["bench", "--bogus"], d));
    assert_eq!((code, err["error"]["kind"].as_str()), (2, Some("usage")));

    std::fs::write(d.join("junk.pnn"), b"PNN1\x01\x00\x05").unwrap();
    let (code, err) = error_line(&nni(
        &[
            "build", "--names", "100", "--model", "junk.pnn", "--output", "i.lni",
        ],
        d,
    ));
    assert_eq!((code, err["error"]["kind"].as_str()), (4, Some("format")));
    assert!(
        err["error"]["message"]
            .as_str()
            .unwrap()
            .contains("offset 6"),
        "{err}"
    );

    std::fs::write(d.join("bad.txt"), "/ok/name\nnot-a-name\n").unwrap();
    let (code, err) = error_line(&nni(
        &["train", "--dataset", "bad.txt", "--output", "m.pnn"],
        d,
    ));
    assert_eq!((code, err["error"]["kind"].as_str()), (4, Some("format")));
}

#[test]
fn bench_writes_reports_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut args = vec![
        "bench",
        "--names",
        "2000",
        "--seed",
        "2",
        "--no-timing",
        "--output",
        "out",
    ];
    args.extend(SMALL_TRAIN);
    let first = nni(&args, d);
    ok(&first);
    let json_a = std::fs::read(d.join("out/report.json")).unwrap();
    let report: Value = serde_json::from_slice(&json_a).unwrap();
    assert_eq!(report["report"], "metrics");
    assert_eq!(report["throughput"].as_array().unwrap().len(), 0);

    let second = nni(&args, d);
    ok(&second);
    assert!(String::from_utf8_lossy(&second.stderr).contains(" 0 computed"));
    assert_eq!(std::fs::read(d.join("out/report.json")).unwrap(), json_a);

    // A fresh directory reproduces the same bytes.
    let mut fresh = args.clone();
    fresh[7] = "out2";
    ok(&nni(&fresh, d));
    assert_eq!(std::fs::read(d.join("out2/report.json")).unwrap(), json_a);

    let mut csv = args.clone();
    csv.extend(["--format", "csv"]);
    ok(&nni(&csv, d));
    let text = std::fs::read_to_string(d.join("out/report.csv")).unwrap();
    assert!(text.starts_with("section,row,field,value\n"));

    let cmp = nni(&["compare", "out/report.json", "--output", "cmp"], d);
    ok(&cmp);
    let comparison: Value =
        serde_json::from_slice(&std::fs::read(d.join("cmp/comparison.json")).unwrap()).unwrap();
    assert_eq!(comparison["report"], "comparison");
    assert!(comparison["ratios"]
        .as_array()
        .unwrap()
        .iter()
        .any(|r| r["metric"] == "slots_required"));
}

#[test]
fn version_names_the_build() {
    let dir = tempfile::tempdir().unwrap();
    let out = nni(&["--version"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("nni 0.1.0+"));
}
