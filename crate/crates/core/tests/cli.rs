//! End-to-end checks of the `ifvb` binary.

use std::path::Path;
use std::process::{Command, Output};

use ifvb::trace::{load_trace, TraceStatus, TRACE_HEADER};

fn ifvb(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ifvb"));
    cmd.args(args).env_remove(ifvb::harness::OUTPUT_DIR_ENV);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_spec(dir: &Path, text: &str) -> String {
    let path = dir.join("spec.txt");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn run_writes_one_trace_per_optimizer() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traces");
    let spec = write_spec(
        dir.path(),
        &format!(
            "# example 1, short\nexperiment=example1\noptimizer=ifvb,aifvb\nseed=4\nmax_iters=50\noutput={}\n",
            out.display()
        ),
    );
    let res = ifvb(&["run", &spec], &[]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    for name in ["example1_ifvb.csv", "example1_aifvb.csv"] {
        let path = out.join(name);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().any(|l| l == TRACE_HEADER));
        assert!(text.lines().any(|l| l == "# seed=4"));
        let trace = load_trace(&path).unwrap();
        assert_eq!(trace.records.len(), 50);
        assert_eq!(trace.status, Some(TraceStatus::Ok));
        assert!(trace.records.iter().all(|r| r.param_error.is_some()));
    }
}

#[test]
fn compare_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let base = "experiment=example5 optimizer=ngvb,ifvb,aifvb gradient=mc seed=2 max_iters=40";
    let spec_a = dir.path().join("a.txt");
    let spec_b = dir.path().join("b.txt");
    std::fs::write(&spec_a, format!("{base} output={}", a.display())).unwrap();
    std::fs::write(&spec_b, format!("{base} output={}", b.display())).unwrap();
    assert_eq!(ifvb(&["run", spec_a.to_str().unwrap()], &[]).status.code(), Some(0));
    assert_eq!(ifvb(&["compare", spec_b.to_str().unwrap()], &[]).status.code(), Some(0));
    for kind in ["ngvb", "ifvb", "aifvb"] {
        let x = load_trace(&a.join(format!("example5_{kind}.csv"))).unwrap();
        let y = load_trace(&b.join(format!("example5_{kind}.csv"))).unwrap();
        assert_eq!(x.records.len(), y.records.len());
        assert!(x.records.iter().zip(&y.records).all(|(p, q)| p.same_modulo_time(q)));
    }
}

#[test]
fn output_directory_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from_env");
    let spec = write_spec(dir.path(), "experiment=example1 optimizer=ngvb max_iters=5");
    let res = ifvb(&["run", &spec], &[(ifvb::harness::OUTPUT_DIR_ENV, &out)]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("example1_ngvb.csv").exists());
}

#[test]
fn spec_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "experiment=example1 optimizer=ifvb learning_rate=3");
    let res = ifvb(&["run", &spec], &[]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("learning_rate"));

    let spec = write_spec(dir.path(), "experiment=example1 optimizer=ifvb alpha=0.6 c_beta=1 beta=0.9");
    let res = ifvb(&["run", &spec], &[]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("beta"));
}

#[test]
fn numeric_errors_exit_with_three() {
    let res = ifvb(&["fisher-check", "beta", "0,2", "--smax", "10", "--seeds", "1"], &[]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("domain"));
}

#[test]
fn fisher_check_prints_diagnostic() {
    let res = ifvb(&["fisher-check", "beta", "58,144", "--smax", "2000", "--seeds", "3"], &[]);
    assert_eq!(res.status.code(), Some(0));
    let text = String::from_utf8(res.stdout).unwrap();
    assert_eq!(text.matches("s,rel_error_plain,rel_error_regularized").count(), 3);
    assert!(text.contains("# median_final_rel_error_plain="));
}

#[test]
fn simulate_writes_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data/example2.csv");
    let res = ifvb(&["simulate", "example2", "--seed", "3", "--out", out.to_str().unwrap()], &[]);
    assert_eq!(res.status.code(), Some(0));
    let data = ifvb::Dataset::load_csv(&out).unwrap();
    assert_eq!(data.n(), 200);

    let spec = write_spec(
        dir.path(),
        &format!(
            "experiment=example2 optimizer=ngvb data={} max_iters=20 output={}",
            out.display(),
            dir.path().display()
        ),
    );
    let res = ifvb(&["run", &spec], &[]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
}
