use std::fs;
use std::path::Path;
use std::process::Command;

use orthofit::Report;

fn orthofit(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_orthofit"))
        .args(args)
        .env_remove("ORTHOFIT_QUASAR_DATA")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_complete(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("x.csv");
    let xs: String = (1..=40).map(|i| format!("{}\n", -(1.0 - i as f64 / 41.0f64).ln() * 0.5)).collect();
    fs::write(&data, format!("x\n{xs}")).unwrap();
    data
}

#[test]
fn test_writes_report_and_draws() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_complete(dir.path());
    let out = dir.path().join("report.json");
    let draws = dir.path().join("draws.csv");
    let o = orthofit(&[
        "test", "--scheme", "complete", "--family", "exponential", "--data", path(&data),
        "--B", "99", "--seed", "7", "--alpha", "0.05", "--multiplier", "mammen",
        "--out", path(&out), "--emit-boot-draws", path(&draws),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let report = Report::from_json(&text).unwrap();
    assert_eq!(report.n, 40);
    assert_eq!(report.b, 99);
    assert_eq!(report.seed, 7);
    assert!((report.theta_hat.as_slice()[0] - 2.0).abs() < 0.3);
    for key in ["\"stat_nQ\"", "\"B\"", "\"grid_size\"", "\"boot_quantiles\"", "\"0.95\""] {
        assert!(text.contains(key), "{key}");
    }
    assert_eq!(Report::from_json(&report.to_json().unwrap()).unwrap(), report);
    assert_eq!(fs::read_to_string(&draws).unwrap().lines().count(), 100);
}

#[test]
fn config_file_supplies_flags_and_cli_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_complete(dir.path());
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("scheme = complete\ndata = {}\nB = 19\nseed = 5\n", path(&data))).unwrap();
    let o = orthofit(&["test", "--config", path(&cfg), "--seed", "6"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = Report::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(report.b, 19);
    assert_eq!(report.seed, 6);
}

#[test]
fn simple_null_skips_fit() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_complete(dir.path());
    let o = orthofit(&["test", "--scheme", "complete", "--data", path(&data), "--B", "19", "--simple-null", "theta=2"]);
    assert!(o.status.success());
    let report = Report::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert!(report.simple_null && report.fit.is_none());
    assert_eq!(report.theta_hat.as_slice(), &[2.0]);
    let o = orthofit(&["test", "--scheme", "complete", "--data", path(&data), "--simple-null", "theta=2", "--tol", "1e-8"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x,u,v\n1,0,2\n0.5,0.9,3\n").unwrap();
    let o = orthofit(&["test", "--scheme", "dt", "--data", path(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 2"));

    let o = orthofit(&["test", "--scheme", "dt", "--data", path(&dir.path().join("none.csv"))]);
    assert_eq!(o.status.code(), Some(4));

    let o = orthofit(&["quasar", "--data", path(&dir.path().join("q.csv"))]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("DTDA"));

    let cens = dir.path().join("cens.csv");
    fs::write(&cens, "y,u,delta\n1,0,0\n2,0.5,0\n3,1,0\n").unwrap();
    let o = orthofit(&["test", "--scheme", "ltrc", "--data", path(&cens)]);
    assert_eq!(o.status.code(), Some(3));

    let o = orthofit(&["test", "--scheme", "ltrc", "--family", "gamma", "--data", path(&cens)]);
    assert_eq!(o.status.code(), Some(2));

    let o = orthofit(&["test", "--scheme", "nope", "--data", path(&cens)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("table.csv");
    let o = orthofit(&[
        "simulate", "--study", "dt", "--nu", "1", "--trials", "10", "--B", "19", "--seed", "3",
        "--theta", "1", "--n", "30,40", "--out", path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "variant,theta,pt,n30,n40,se_n30,se_n40");
    assert!(lines.next().unwrap().starts_with("WT,1,0."));
}

#[test]
fn quasar_workflow_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("q.csv");
    let rows: String = (0..60)
        .map(|i| {
            let x = -2.0 + 0.05 * i as f64;
            format!("{x},{},{}\n", x - 0.7, x + 1.5 + 0.01 * i as f64)
        })
        .collect();
    fs::write(&data, format!("x,u,v\n{rows}")).unwrap();
    let (out, draws, cdf) = (dir.path().join("r.json"), dir.path().join("d.csv"), dir.path().join("c.csv"));
    let o = orthofit(&[
        "quasar", "--data", path(&data), "--B", "49", "--out", path(&out),
        "--emit-boot-draws", path(&draws), "--emit-cdf", path(&cdf),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = Report::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report.n, 60);
    let cdf = fs::read_to_string(&cdf).unwrap();
    assert_eq!(cdf.lines().next().unwrap(), "x,ecdf,fitted_cdf");
    assert!(cdf.lines().nth(1).unwrap().starts_with("0,"));
}
