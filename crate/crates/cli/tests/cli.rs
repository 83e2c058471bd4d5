use std::path::Path;
use std::process::{Command, Output};

fn lppl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lppl"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path) {
    let out = lppl(&["synth", "--preset", "base", "--seed", "4", "--n", "300", "--out", "trace.csv"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_writes_trace_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(csv.starts_with("index,log_price,price\n"));
    assert_eq!(csv.lines().count(), 301);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace.json")).unwrap()).unwrap();
    assert_eq!(meta["spec"]["seed"], 4);
    assert_eq!(meta["spec"]["n"], 300);
}

#[test]
fn repeated_fits_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let args = ["fit", "trace.csv", "--column", "price", "--jobs", "2", "--threads", "1"];
    let a = lppl(&[&args[..], &["--out", "a.json"]].concat(), dir.path());
    let b = lppl(&[&args[..], &["--out", "b.json", "--plot", "plot.csv"]].concat(), dir.path());
    assert!(a.status.success() && b.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let ja = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(ja, std::fs::read(dir.path().join("b.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&ja).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert!(report["best"]["params"]["A"].is_number());
    assert!(dir.path().join("plot.csv").exists());
}

#[test]
fn classify_reads_a_saved_report() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let fit = lppl(&["fit", "trace.csv", "--out", "r.json", "--max-iterations", "200"], dir.path());
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let out = lppl(&["classify", "r.json", "--m-hi", "0.0"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["kind"], "non-lppl");
    assert_eq!(v["thresholds"]["m_hi"], 0.0);
}

#[test]
fn csv_format_lists_ranked_fits() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = lppl(&["fit", "trace.csv", "--format", "csv", "--triple", "100,220,270", "--max-iterations", "200"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("rank,task,scheme,seed,"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "close\n5\n0\n7\n").unwrap();
    for args in [
        &["fit", "missing.csv"][..],
        &["fit", "bad.csv"],
        &["fit", "bad.csv", "--weights", "cubic"],
        &["synth", "--preset", "base"],
        &["synth", "--preset", "nope", "--out", "x.csv"],
    ] {
        let out = lppl(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = lppl(&["fit", "bad.csv"], dir.path());
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 3"));
}
