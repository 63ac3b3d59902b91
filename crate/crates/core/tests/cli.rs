use std::fs;
use std::process::{Command, Output};

use cavity_readout::config::{DEFAULT_CONFIG, KEY_DOCS};

fn cavsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cavsim")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_config_accepts_shipped_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("defaults.cfg");
    fs::write(&path, DEFAULT_CONFIG).unwrap();
    let o = cavsim(&["validate-config", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("config ok"));
}

#[test]
fn config_errors_exit_2_with_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    let bad = DEFAULT_CONFIG.replacen("kappa_mhz = 0.10", "kappa_mhz = fast", 1);
    let line = bad.lines().position(|l| l.starts_with("kappa_mhz")).unwrap() + 1;
    fs::write(&path, bad).unwrap();
    for cmd in ["validate-config", "search-cost"] {
        let o = cavsim(&[cmd, "--config", path.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2));
        let err = stderr(&o);
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.contains("cavity.kappa_mhz") && err.contains(&format!("line {line}")), "{err}");
    }
}

#[test]
fn typo_in_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.cfg");
    fs::write(&path, DEFAULT_CONFIG.replacen("tau_vacuum_ms", "tau_vaccum_ms", 1)).unwrap();
    let o = cavsim(&["validate-config", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("idle.tau_vaccum_ms") || err.contains("idle.tau_vacuum_ms"), "{err}");
}

#[test]
fn missing_config_file_and_bad_flags_exit_2() {
    assert_eq!(cavsim(&["validate-config", "--config", "/nonexistent/x.cfg"]).status.code(), Some(2));
    assert_eq!(cavsim(&["search-cost", "--threads", "0"]).status.code(), Some(2));
    assert_eq!(cavsim(&["search-cost", "--trials", "0"]).status.code(), Some(2));
    assert_eq!(cavsim(&["search-cost", "--seed", "minus-one"]).status.code(), Some(2));
    assert_eq!(cavsim(&["no-such-experiment"]).status.code(), Some(2));
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let o = cavsim(&["search-cost", "--trials", "10", "--out", "/nonexistent/dir/out.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).trim_end().lines().count(), 1);
}

#[test]
fn search_cost_is_reproducible_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = cavsim(&["search-cost", "--trials", "10000", "--seed", "7", "--out", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let csv = fs::read_to_string(&a).unwrap();
    assert_eq!(csv, fs::read_to_string(&b).unwrap());
    assert!(csv.starts_with("n,p,strategy,mean_intervals,stderr,analytic\n"));
    assert_eq!(csv.lines().count(), 1 + 9 * 5 * 3);

    let meta = fs::read_to_string(dir.path().join("a.csv.meta")).unwrap();
    assert!(meta.starts_with("version = v0.1.0\n"));
    assert!(meta.contains("seed = 7\n") && meta.contains("trials = 10000\n"));
    assert!(meta.contains("search.placement = at_most_one_bright\n"));
    assert!(!meta.contains("thread"));
}

#[test]
fn stdout_is_used_without_out() {
    let o = cavsim(&["histogram", "--trials", "100", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("counts,frequency,condition\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 31);
}

#[test]
fn seeds_change_output() {
    let a = cavsim(&["search-cost", "--trials", "500", "--seed", "1"]).stdout;
    let b = cavsim(&["search-cost", "--trials", "500", "--seed", "2"]).stdout;
    assert_ne!(a, b);
}

#[test]
fn help_documents_every_key() {
    let o = cavsim(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let help = String::from_utf8(o.stdout).unwrap();
    for (key, _) in KEY_DOCS {
        assert!(help.contains(key), "--help is missing {key}");
    }
    assert!(help.contains("table_row_"));
}
