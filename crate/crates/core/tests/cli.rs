use std::fs;
use std::process::{Command, Output};

use lorvar::cli::parse_config;

fn lorvar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lorvar")).args(args).output().expect("binary runs")
}

#[test]
fn seed_flag_overrides_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "run.seed = 7\nonedmap.cells = 128\n").unwrap();
    let out = dir.path().join("out");
    let o = lorvar(&["ulam", "--config", cfg.to_str().unwrap(), "--seed", "42", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let echoed = parse_config(&fs::read_to_string(out.join("config.txt")).unwrap()).unwrap();
    assert_eq!(echoed.seed, 42);
    assert_eq!(echoed.ulam_cells, 128);
    assert_eq!(echoed.command.name(), "ulam");
}

#[test]
fn invalid_configuration_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "onedmap.gamma = 1.5\n").unwrap();
    let o = lorvar(&["ulam", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("onedmap.gamma") && err.contains("expansion"), "{err}");
    assert!(!dir.path().join("o").exists());

    fs::write(&cfg, "ulam.cells = 10\n").unwrap();
    let o = lorvar(&["ulam", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key `ulam.cells`"));
}

#[test]
fn unknown_command_is_a_usage_error() {
    let o = lorvar(&["plot"]);
    assert!(!o.status.success());
}

#[test]
fn json_format_switches_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("j");
    let o = lorvar(&["ulam", "--format", "json", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let table: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("density.json")).unwrap()).unwrap();
    assert_eq!(table["columns"], serde_json::json!(["x", "density"]));
    assert_eq!(table["rows"].as_array().unwrap().len(), 1024);
    assert!(!out.join("density.csv").exists());
}

#[test]
fn ode_returns_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ode.conf");
    fs::write(&cfg, "ode.n_returns = 20000\node.bins = 128\n").unwrap();
    let out = dir.path().join("ode");
    let o = lorvar(&["ode-returns", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = fs::read_to_string(out.join("crossings.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x,y,z,tau"));
    let mut n = 0;
    for line in lines {
        let z: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!((z - 27.0).abs() < 1e-10, "{line}");
        n += 1;
    }
    assert_eq!(n, 20_000);
    assert!(out.join("quotient.csv").exists() && out.join("ode_returns.json").exists());
}

#[test]
fn sweep_writes_summary_cells_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.conf");
    fs::write(
        &cfg,
        "sweep.eps_grid = 0.04, 0.02, 0\nsweep.samples = 100000\nsweep.mc_blocks = 400\nsweep.mc_block_time = 500\nsweep.ulam_cells = 1024\n",
    )
    .unwrap();
    let out = dir.path().join("sweep");
    let o = lorvar(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    // A coarse grid may well fail the final-gap test; it must not error out.
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(matches!(o.status.code(), Some(0..=2)) && !stderr.contains("error"), "{stderr}");
    let verdict = String::from_utf8_lossy(&o.stdout).lines().find_map(|l| l.strip_prefix("verdict: ").map(str::to_string)).unwrap();
    let expected = match verdict.as_str() {
        "PASS" => 0,
        "INCONCLUSIVE" => 2,
        _ => 1,
    };
    assert_eq!(o.status.code(), Some(expected));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next(), Some("eps,sigma2,stderr,method,gap_to_zero"));
    assert_eq!(summary.lines().count(), 4);
    for i in 0..3 {
        assert!(out.join(format!("cell_{i:02}.json")).exists());
    }
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("PASS") || report.contains("FAIL"));
}
