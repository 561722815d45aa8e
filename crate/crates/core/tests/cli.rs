use std::path::Path;
use std::process::{Command, Output};

fn mte(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mte")).args(args).current_dir(dir).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn simulate(dir: &Path, preset: &str, n: usize, seed: u64, name: &str) {
    let out = mte(&["simulate", "--preset", preset, "--n", &n.to_string(), "--seed", &seed.to_string(), "--output", name], dir);
    assert!(out.status.success(), "{}", stderr(&out));
}

const ESTIMATE: &[&str] = &["estimate", "--outcome", "y", "--treatment", "d", "--continuous", "xc1", "--discrete", "xd1"];

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "separable", 300, 9, "a");
    simulate(dir.path(), "separable", 300, 9, "b");
    simulate(dir.path(), "separable", 300, 10, "c");
    let read = |name: &str| std::fs::read_to_string(dir.path().join(name).join("sample.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    assert_eq!(read("a").lines().count(), 301);
    let oracle: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/oracle.json")).unwrap()).unwrap();
    assert_eq!(oracle["spec"]["n"], 300);
}

#[test]
fn simulate_rejects_bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let out = mte(&["simulate", "--n", "0", "--output", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = mte(&["simulate", "--preset", "nonesuch", "--output", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("nonesuch"));
    assert!(err.contains("separable") && err.contains("single_index"), "{err}");
}

#[test]
fn unknown_column_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "separable", 200, 1, "data");
    let out = mte(
        &["estimate", "--input", "data/sample.csv", "--outcome", "y", "--treatment", "d", "--continuous", "nope"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("column not found: nope"));
    assert!(stderr(&out).contains("hint:"));

    let out = mte(&["estimate", "--outcome", "y"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn both_procedures_write_a_comparison() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "separable", 1200, 2, "data");
    let mut args = ESTIMATE.to_vec();
    args.extend(["--input", "data/sample.csv", "--procedure", "both", "--no-diagnostics", "--output", "out"]);
    let out = mte(&args, dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Difference") && stdout.contains("Observations"));
    for file in ["mte.csv", "mte_liv.csv", "mte_comparison.csv", "liv_curves.csv", "coefficients_liv.txt"] {
        assert!(dir.path().join("out").join(file).exists(), "{file}");
    }
    assert!(!dir.path().join("out/diagnostics.json").exists());
}

#[test]
fn liv_alone_writes_mte_csv() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "separable", 1000, 3, "data");
    let mut args = ESTIMATE.to_vec();
    args.extend(["--input", "data/sample.csv", "--procedure", "liv", "--no-diagnostics", "--output", "out"]);
    let out = mte(&args, dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("out/mte.csv").exists());
    assert!(!dir.path().join("out/g_curves.csv").exists());
}

#[test]
fn strict_diagnose_fails_on_monotone_scores() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "probit", 2000, 4, "probit");
    simulate(dir.path(), "separable", 2000, 4, "sine");
    let run = |data: &str| {
        let args = ["diagnose", "--input", data, "--outcome", "y", "--treatment", "d", "--continuous", "xc1", "--strict"];
        let mut args = args.to_vec();
        if data.starts_with("sine") {
            args.extend(["--discrete", "xd1"]);
        }
        args.extend(["--output", "out"]);
        mte(&args, dir.path())
    };
    let out = run("probit/sample.csv");
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    let out = run("sine/sample.csv");
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("out/diagnostics.json").exists());
}

#[test]
fn row_order_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "separable", 800, 6, "data");
    let text = std::fs::read_to_string(dir.path().join("data/sample.csv")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let header = lines.remove(0);
    lines.reverse();
    lines.rotate_left(123);
    std::fs::write(dir.path().join("shuffled.csv"), format!("{header}\n{}\n", lines.join("\n"))).unwrap();

    let run = |input: &str, output: &str| {
        let mut args = ESTIMATE.to_vec();
        args.extend(["--input", input, "--bootstrap", "4", "--output", output]);
        let out = mte(&args, dir.path());
        assert!(out.status.success(), "{}", stderr(&out));
    };
    run("data/sample.csv", "a");
    run("shuffled.csv", "b");
    for file in ["coefficients.csv", "mte.csv", "g_curves.csv", "summary.json"] {
        let a = std::fs::read_to_string(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read_to_string(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "separable", 900, 8, "data");
    let config = r#"{
        "input": "data/sample.csv",
        "columns": {"outcome": "y", "treatment": "d", "continuous": ["xc1"], "discrete": ["xd1"]},
        "estimation": {"second_step": {"kind": "normal", "order": 1}},
        "output": "from-config"
    }"#;
    std::fs::write(dir.path().join("run.json"), config).unwrap();
    let out = mte(&["estimate", "--config", "run.json", "--output", "from-flag", "--no-diagnostics"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("from-flag/metadata.json").exists());
    assert!(!dir.path().join("from-config").exists());

    std::fs::write(dir.path().join("bad.json"), r#"{"input": "x", "columns": {"outcome": "y", "treatment": "d"}, "extra": 1}"#)
        .unwrap();
    let out = mte(&["estimate", "--config", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
