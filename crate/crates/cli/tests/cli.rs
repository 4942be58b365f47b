use std::process::{Command, Output};

fn kerrwell(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kerrwell")).args(args).arg("--quiet").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn staircase_grid_gives_91_rows() {
    let o = kerrwell(&["staircase", "--kappa", "0.025", "--nth", "0.05", "--eps2", "1:10:0.1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("eps2,gamma_num,gamma_semi,"));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 91);
    assert_eq!(rows[3][0].parse::<f64>().unwrap(), 1.3);
    for r in &rows {
        let num: f64 = r[1].parse().unwrap();
        let semi: f64 = r[2].parse().unwrap();
        assert!(num > 0.0 && (semi / num - 1.0).abs() < 1.0, "{r:?}");
    }
}

#[test]
fn regimes_json_map() {
    let o = kerrwell(&["regimes", "--kappa", "0.1", "--nth-log", "-9:-1:4", "--eps2", "2:20:6"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["command"], "regimes");
    assert_eq!(v["config"]["nth-log"], "-9:-1:4");
    assert_eq!(v["config"]["kappa"].as_f64(), Some(0.1));
    let eps2 = v["result"]["eps2"].as_array().unwrap();
    let nth = v["result"]["nth"].as_array().unwrap();
    assert_eq!((eps2.len(), nth.len()), (4, 3));
    let labels = v["result"]["labels"].as_array().unwrap();
    assert_eq!(labels.len(), 12);
    let known = ["ground", "nonhermitian", "direct", "cascaded", "all", "undetermined"];
    assert!(labels.iter().all(|l| known.contains(&l.as_str().unwrap())));
    assert!(v["resolved"].as_array().unwrap().iter().all(|r| r["fock_dim"].as_u64().unwrap() >= 32));
}

#[test]
fn validate_passes() {
    let o = kerrwell(&["validate"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&stdout(&o));
    assert!(rows.len() >= 8);
    assert!(rows.iter().filter(|r| r[4] == "false").all(|r| r[3] == "true"));
}

#[test]
fn usage_errors_exit_1() {
    for args in [
        &["staircase", "--bogus"][..],
        &["regimes", "--nth", "0.1", "--nth-log", "-3:-1"],
        &["turnover", "--kappa", "0.1", "--kappa-log", "-3:-1"],
        &["staircase", "--eps2", "5:1"],
        &["staircase", "--variants", "casc(0)"],
        &["wkb", "--eps2", "0.5"],
        &["frobnicate"],
    ] {
        let o = kerrwell(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn help_exits_0() {
    let o = Command::new(env!("CARGO_BIN_EXE_kerrwell")).args(["staircase", "--help"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("[default: 0.025]") && text.contains("[default: 1:10:0.1]"));
}

#[test]
fn numerical_failure_exits_2() {
    let o = kerrwell(&["staircase", "--eps2", "4", "--max-basis", "10", "--semianalytic", "false"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_with_command_line_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# spectrum job\neps2 = 3,5\ndim = 40\nkerr = 2\n").unwrap();
    let o = kerrwell(&["spectrum", "--config", cfg.to_str().unwrap(), "--dim", "48"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&stdout(&o));
    assert!(rows.iter().all(|r| r[6] == "48"));
    let drives: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(drives.contains(&1.5) && drives.contains(&2.5), "eps2 / kerr with kerr = 2: {drives:?}");

    std::fs::write(&cfg, "kappa 0.1\n").unwrap();
    assert_eq!(kerrwell(&["spectrum", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
    std::fs::write(&cfg, "nonsense = 1\n").unwrap();
    assert_eq!(kerrwell(&["spectrum", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn dumped_config_reproduces_the_run_config() {
    let dir = tempfile::tempdir().unwrap();
    let first = kerrwell(&["tempscan", "--eps2", "6.45,13.25", "--kappa", "0.03", "--ratio-log", "-3:-1:0.5", "--dump-config"]);
    assert_eq!(first.status.code(), Some(0));
    let cfg = dir.path().join("dump.cfg");
    std::fs::write(&cfg, &first.stdout).unwrap();
    let second = kerrwell(&["tempscan", "--config", cfg.to_str().unwrap(), "--dump-config"]);
    assert_eq!(stdout(&first), stdout(&second));
    assert!(stdout(&first).contains("kappa = 2.9999999999999999e-2"));
}

#[test]
fn output_file_and_thread_env() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("wkb.json");
    let o = Command::new(env!("CARGO_BIN_EXE_kerrwell"))
        .args(["wkb", "--eps2", "8,10", "--format", "json", "-q", "-o", out.to_str().unwrap()])
        .env("KERRWELL_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["result"]["min_gaps"].as_array().unwrap().len(), 2);
    assert_eq!(v["resolved"][1]["eps2"].as_f64(), Some(10.0));

    let bad = Command::new(env!("CARGO_BIN_EXE_kerrwell"))
        .args(["wkb", "-q"])
        .env("KERRWELL_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn floats_carry_17_significant_digits() {
    let o = kerrwell(&["spectrum", "--eps2", "4"]);
    let rows = csv_rows(&stdout(&o));
    for cell in rows.iter().flat_map(|r| [&r[2], &r[3], &r[4]]) {
        let mantissa = cell.trim_start_matches('-').split('e').next().unwrap();
        assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17, "{cell}");
    }
}
