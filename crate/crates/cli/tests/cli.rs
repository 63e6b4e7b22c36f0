use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn asep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asep")).args(args).env_clear().output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).expect("utf-8 output")
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("asep-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn stationary_table_is_a_distribution() {
    let out = asep(&["stationary", "--n", "6", "--a", "0.5", "--b", "0.25", "--c", "-0.4", "--q", "0.3"]);
    assert!(out.status.success());
    let rows = rows(&stdout(&out));
    assert_eq!(rows.len(), 64);
    let total: f64 = rows.iter().map(|r| r[1].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() <= 1e-12, "total {total}");
}

#[test]
fn stationary_from_config() {
    let dir = temp_dir("cfg");
    let cfg = dir.join("fan.toml");
    fs::write(&cfg, "[params]\na = 0.5\nb = 0.5\nq = 0.3\n").unwrap();
    let out = asep(&["stationary", "--config", cfg.to_str().unwrap(), "--n", "6"]);
    assert!(out.status.success());
    assert_eq!(rows(&stdout(&out)).len(), 64);
}

#[test]
fn rational_and_float_tables_agree() {
    let args = ["stationary", "--n", "4", "--a", "0.5", "--b", "0.5", "--c", "-0.4", "--d", "-0.4", "--q", "0.5"];
    let float = rows(&stdout(&asep(&args)));
    let mut rational_args = args.to_vec();
    rational_args.extend(["--mode", "rational"]);
    let exact = rows(&stdout(&asep(&rational_args)));
    for (x, y) in float.iter().zip(&exact) {
        assert_eq!(x[0], y[0]);
        let (x, y): (f64, f64) = (x[1].parse().unwrap(), y[1].parse().unwrap());
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn rate_curve_vanishes_at_half() {
    let out = asep(&["rate-fn", "--a", "0", "--b", "0", "--line-slopes", "0.1:0.9:0.1"]);
    assert!(out.status.success());
    let rows = rows(&stdout(&out));
    assert_eq!(rows.len(), 9);
    let half = rows.iter().find(|r| r[0].parse::<f64>().unwrap() == 0.5).expect("row for 0.5");
    assert_eq!(half[1].parse::<f64>().unwrap(), 0.0);
    // 2 H(0.3) + log 4 at the neighbouring rows.
    let h = |x: f64| x * x.ln() + (1.0 - x) * (1.0 - x).ln();
    let r3: f64 = rows[2][1].parse().unwrap();
    assert!((r3 - (2.0 * h(0.3) + 4f64.ln())).abs() < 1e-12);
}

#[test]
fn scope_violation_has_its_own_exit_code() {
    let dir = temp_dir("scope");
    let cfg = dir.join("bad.toml");
    fs::write(&cfg, "[params]\na = 2\nb = 2\n").unwrap();
    let out = asep(&["stationary", "--config", cfg.to_str().unwrap(), "--n", "6"]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("fan region"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn malformed_config_and_usage_errors() {
    let dir = temp_dir("malformed");
    let cfg = dir.join("bad.toml");
    fs::write(&cfg, "[params]\na = 0.5\nbeta = 1\n").unwrap();
    assert_eq!(asep(&["stationary", "--config", cfg.to_str().unwrap()]).status.code(), Some(3));
    fs::write(&cfg, "[params\n").unwrap();
    assert_eq!(asep(&["stationary", "--config", cfg.to_str().unwrap()]).status.code(), Some(3));
    let usage = asep(&["stationary", "--no-such-flag"]);
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(String::from_utf8(usage.stderr).unwrap().trim_end().lines().count(), 1);
    assert_eq!(asep(&[]).status.code(), Some(2));
}

#[test]
fn environment_overrides_flags_defaults() {
    let out = Command::new(env!("CARGO_BIN_EXE_asep"))
        .args(["stationary"])
        .env_clear()
        .env("ASEP_N", "3")
        .env("ASEP_A", "0.5")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(rows(&stdout(&out)).len(), 8);
}

#[test]
fn samples_are_reproducible() {
    let args = ["sample", "--n", "8", "--samples", "50", "--a", "0.5", "--b", "0.5", "--q", "0.3", "--seed", "7"];
    let first = asep(&args);
    assert!(first.status.success());
    assert_eq!(first.stdout, asep(&args).stdout);
    let other = asep(&["sample", "--n", "8", "--samples", "50", "--a", "0.5", "--b", "0.5", "--q", "0.3", "--seed", "8"]);
    assert_ne!(first.stdout, other.stdout);
}

#[test]
fn bridge_samples_stay_in_range() {
    let out = asep(&["sample", "--sampler", "bridge", "--n", "6", "--x", "1", "--y", "4", "--samples", "20"]);
    assert!(out.status.success());
    for r in rows(&stdout(&out)) {
        let h: Vec<i64> = r[1].split(' ').map(|x| x.parse().unwrap()).collect();
        assert_eq!((h[0], h[6]), (1, 4));
        assert!(h.windows(2).all(|w| (0..=1).contains(&(w[1] - w[0]))));
    }
}

#[test]
fn out_directory_gets_csv_and_json_record() {
    let dir = temp_dir("out");
    let out = asep(&["two-layer", "--n", "5", "--a", "0.25", "--b", "0.75", "--c", "-0.4", "--q", "0.3", "--out", dir.to_str().unwrap(), "--seed", "11"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(rows(&fs::read_to_string(dir.join("two-layer.csv")).unwrap()).len(), 32);
    let json = fs::read_to_string(dir.join("two-layer.json")).unwrap();
    assert!(json.contains("\"seed\": 11"));
    assert!(json.contains("\"c\": -0.4"));
    assert!(json.contains("\"passed\": true"));
}

#[test]
fn bridge_suite_command_passes() {
    let out = asep(&["bridges", "--instances", "200", "--max-n", "8"]);
    assert!(out.status.success());
    for r in rows(&stdout(&out)) {
        assert_eq!(r[1], "200");
        assert_eq!(r[2], "0");
    }
}

#[test]
fn experiment_plan_from_config() {
    let dir = temp_dir("plan");
    let cfg = dir.join("plan.toml");
    fs::write(&cfg, "[params]\na = 2\nb = 0.2\n\n[experiment]\nname = \"ldp\"\nns = [50, 100]\nrhos = [0.2, 0.5]\ntolerance = 0.2\n").unwrap();
    let out = asep(&["experiments", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json = fs::read_to_string(dir.join("experiment-ldp.json")).unwrap();
    assert!(json.contains("\"passed\": true"));
    assert!(dir.join("experiment-ldp.dat").exists());
    assert_eq!(asep(&["experiments", "--name", "unknown"]).status.code(), Some(3));
}
