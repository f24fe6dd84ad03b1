use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use asysvrg::data::load_libsvm;
use asysvrg::metrics::RunMetrics;

const SMALL: &str = "n=200 d=5 seed=3 separation=4";

fn asysvrg(cache: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asysvrg"))
        .args(args)
        .env("ASYSVRG_CACHE_DIR", cache)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gen_data_output_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.svm");
    let o = asysvrg(
        dir.path(),
        &[
            "gen-data",
            "--n",
            "150",
            "--d",
            "7",
            "--seed",
            "2",
            "--out",
            path.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# synthetic n=150 d=7 seed=2"));
    let data = load_libsvm(&path, None).unwrap();
    assert_eq!((data.len(), data.dim()), (150, 7));
}

#[test]
fn single_worker_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "run",
        "--synthetic",
        SMALL,
        "--lambda",
        "0.01",
        "--workers",
        "1",
        "--eta",
        "0.5",
        "--epochs",
        "6",
        "--tol",
        "inf",
        "--seed",
        "9",
        "--omit-timing",
    ];
    let a = asysvrg(dir.path(), &args);
    let b = asysvrg(dir.path(), &args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let m = RunMetrics::from_csv(&stdout(&a)).unwrap();
    assert_eq!(m.rows.len(), 7);
    m.check_invariants().unwrap();
    assert_eq!(m.header_value("n"), Some("200"));
    assert_eq!(m.header_value("status"), Some("budget"));
    assert!(m.header_value("build").is_some());
    assert!(m
        .rows
        .windows(2)
        .all(|w| w[1].effective_passes == w[0].effective_passes + 3.0));
}

#[test]
fn tolerance_stops_early_and_auto_step_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = asysvrg(
        dir.path(),
        &[
            "run",
            "--synthetic",
            SMALL,
            "--lambda",
            "0.01",
            "--workers",
            "2",
            "--epochs",
            "30",
            "--tol",
            "1e-6",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m = RunMetrics::from_csv(&stdout(&o)).unwrap();
    assert_eq!(m.header_value("status"), Some("converged"));
    assert_eq!(m.header_value("eta_mode"), Some("auto"));
    assert!(m.final_gap().unwrap() < 1e-6);
    assert!(m.rows.len() < 31);
}

#[test]
fn divergence_exits_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let o = asysvrg(
        dir.path(),
        &[
            "run",
            "--synthetic",
            SMALL,
            "--lambda",
            "0.01",
            "--eta",
            "1e6",
            "--epochs",
            "5",
            "--tol",
            "inf",
        ],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
    let m = RunMetrics::from_csv(&stdout(&o)).unwrap();
    assert_eq!(m.header_value("status"), Some("diverged"));
}

#[test]
fn zero_budget_compare_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = asysvrg(
        dir.path(),
        &[
            "compare",
            "--synthetic",
            SMALL,
            "--budget",
            "0",
            "--config",
            "asysvrg:workers=2",
            "--config",
            "hogwild",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let body: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(
        body,
        ["config,epoch,effective_passes,objective,gap,wall_seconds,updates,max_delay"]
    );
}

#[test]
fn compare_respects_the_pass_budget() {
    let dir = tempfile::tempdir().unwrap();
    let o = asysvrg(
        dir.path(),
        &[
            "compare",
            "--synthetic",
            SMALL,
            "--lambda",
            "0.01",
            "--budget",
            "9",
            "--config",
            "svrg:eta=0.5",
            "--config",
            "hogwild:eta=1,workers=2",
            "--omit-timing",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for label in ["svrg", "hogwild-lock-free-p2"] {
        let last = out.lines().rfind(|l| l.starts_with(&format!("{label},"))).unwrap();
        let passes: f64 = last.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(passes, 9.0, "{label}");
    }
}

#[test]
fn certify_reports_validity_through_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let ok = asysvrg(
        dir.path(),
        &["certify", "-L", "1", "--mu", "0.01", "--tau", "2", "--m-tilde", "1e5"],
    );
    assert!(ok.status.success(), "{}", stderr(&ok));
    assert!(stdout(&ok).contains("valid=true"));
    let bad = asysvrg(
        dir.path(),
        &[
            "certify",
            "-L",
            "1",
            "--mu",
            "0.01",
            "--tau",
            "1",
            "--m-tilde",
            "1e4",
            "--eta",
            "0.6",
        ],
    );
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("step_above_half_inverse_smoothness"));
    let none = asysvrg(
        dir.path(),
        &[
            "certify",
            "-L",
            "0.2501",
            "--mu",
            "1e-4",
            "--tau",
            "10",
            "--m-tilde",
            "40484",
        ],
    );
    assert_eq!(none.status.code(), Some(1));
    assert!(stdout(&none).contains("no_certified_step"));
    let lockfree = asysvrg(
        dir.path(),
        &["certify", "-L", "1", "--mu", "0.01", "--scheme", "lock-free"],
    );
    assert!(!lockfree.status.success());
}

#[test]
fn simulate_replays_a_schedule_file() {
    let dir = tempfile::tempdir().unwrap();
    let sched = dir.path().join("s.txt");
    let mut text = String::from("# one worker, no delay\n");
    for _ in 0..400 {
        text.push_str("0 snapshot\n0 apply\n");
    }
    fs::write(&sched, text).unwrap();
    let steps = dir.path().join("steps.csv");
    let o = asysvrg(
        dir.path(),
        &[
            "simulate",
            "--synthetic",
            SMALL,
            "--lambda",
            "0.01",
            "--schedule",
            sched.to_str().unwrap(),
            "--epochs",
            "3",
            "--eta",
            "0.5",
            "--out",
            steps.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}\n{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("PASS bitwise match with sequential SVRG"), "{out}");
    assert!(!out.contains("FAIL"));
    assert_eq!(fs::read_to_string(&steps).unwrap().lines().count(), 1 + 3 * 400);
    assert!(steps.with_extension("epochs.csv").exists());
}

#[test]
fn simulate_rejects_a_schedule_that_breaks_its_bound() {
    let dir = tempfile::tempdir().unwrap();
    let sched = dir.path().join("bad.txt");
    fs::write(&sched, "tau 0\n0 snapshot\n1 snapshot\n1 apply\n0 apply\n").unwrap();
    let o = asysvrg(
        dir.path(),
        &[
            "simulate",
            "--synthetic",
            SMALL,
            "--lambda",
            "0.01",
            "--schedule",
            sched.to_str().unwrap(),
            "--eta",
            "0.1",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
}

#[test]
fn bad_input_is_a_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.svm");
    fs::write(&data, "+1 1:0.5\n-1 3:x\n").unwrap();
    let o = asysvrg(dir.path(), &["run", "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
    let o = asysvrg(
        dir.path(),
        &["certify", "--synthetic", SMALL, "--lambda", "0", "--tau", "1"],
    );
    assert!(!o.status.success());
}
