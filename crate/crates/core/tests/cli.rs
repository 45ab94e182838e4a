use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_lineprot");
const SMALL_SUITE: &str = r#"
name = "small"
kinds = ["normal", "internal", "external"]
grid_sets = 1
fault_types = ["K1", "K3"]
resistances_ohm = [10.0]
alphas = [0.5]
inception_ms = [10.1]
"#;

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn simulate_then_analyze_trips_after_inception() {
    let dir = tempfile::tempdir().unwrap();
    let wave = dir.path().join("k1.csv");
    let wave = wave.to_str().unwrap();
    let sim = run(&["simulate", &config("internal_k1.toml"), "-o", wave]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    let text = fs::read_to_string(wave).unwrap();
    assert!(text.starts_with("t,u1a,u1b,u1c,u2a,u2b,u2c,i1a,i1b,i1c,i2a,i2b,i2c,missing"));
    assert_eq!(text.lines().count(), 3201);

    let out = run(&["analyze", wave, "--line", &config("internal_k1.toml")]);
    assert!(out.status.success());
    let lines: Vec<String> = stdout(&out).lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 16);
    for (k, line) in lines.iter().enumerate() {
        assert!(line.starts_with(&format!("window={k} start={} ", 200 * k)), "{line}");
        let trip = line.contains("state=trip");
        assert_eq!(trip, k >= 7, "{line}");
    }
    assert!(lines[7].contains("type=K1") && lines[7].contains("inception=14"));
}

#[test]
fn analyze_with_plain_line_file() {
    let dir = tempfile::tempdir().unwrap();
    let wave = dir.path().join("w.csv");
    let wave = wave.to_str().unwrap();
    assert!(run(&["simulate", &config("internal_k1.toml"), "-o", wave]).status.success());
    let out = run(&["analyze", wave, "--line", &config("line.toml"), "--m", "5", "--window-ms", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = stdout(&out).lines().next().unwrap().to_owned();
    assert!(first.starts_with("window=0 start=0 state=healthy case=1"));
    assert_eq!(first.split("deltas=").nth(1).unwrap().split(';').count(), 7);
}

#[test]
fn run_suite_writes_report_and_report_renders_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL_SUITE).unwrap();
    let out_dir = dir.path().join("report");
    let out = run(&["run-suite", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap(), "--jobs", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["windows.csv", "summary.csv", "metrics.csv", "timing.csv", "table.txt"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(metrics.contains("security,1.000000"), "{metrics}");
    assert!(metrics.contains("dependability,1.000000"), "{metrics}");

    let rendered = run(&["report", out_dir.to_str().unwrap()]);
    assert!(rendered.status.success());
    let text = stdout(&rendered);
    assert!(text.contains("security") && text.contains("K3"));
}

#[test]
fn sweep_noise_writes_one_point_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL_SUITE.replace("\"normal\", \"internal\", \"external\"", "\"internal\"")).unwrap();
    let out_dir = dir.path().join("noise");
    let out = run(&[
        "sweep-noise",
        cfg.to_str().unwrap(),
        "-o",
        out_dir.to_str().unwrap(),
        "--snr",
        "60,inf",
        "--jobs",
        "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sweep = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3, "{sweep}");
    assert!(out_dir.join("point_000").join("windows.csv").exists());
    assert!(run(&["report", out_dir.to_str().unwrap()]).status.success());
}

#[test]
fn bad_inputs_fail_with_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(&["analyze", "/nonexistent.csv", "--line", &config("line.toml")]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(!missing.stderr.is_empty());

    let wave = dir.path().join("w.csv");
    let wave = wave.to_str().unwrap();
    assert!(run(&["simulate", &config("internal_k1.toml"), "-o", wave]).status.success());
    let text = fs::read_to_string(wave).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let mut fields: Vec<String> = lines[50].split(',').map(str::to_owned).collect();
    fields[8] = "NaN".into();
    lines[50] = fields.join(",");
    fs::write(wave, lines.join("\n") + "\n").unwrap();
    let corrupt = run(&["analyze", wave, "--line", &config("line.toml")]);
    assert_eq!(corrupt.status.code(), Some(2), "{}", String::from_utf8_lossy(&corrupt.stderr));

    let bad_cfg = dir.path().join("bad.toml");
    fs::write(&bad_cfg, "grid_sets = 0\n").unwrap();
    let bad = run(&["run-suite", bad_cfg.to_str().unwrap(), "-o", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
}
