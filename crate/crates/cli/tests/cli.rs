use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
scenario = small
nx = 12
t_final = 0.004
steps = 4
epsilon = 0.1
nu_T = 1
nu_d = 0
nu_f = 0.01
initial = circle r=0.5
target = circle r=0.4
tol = 1e-8
gradcheck_directions = 3
";

fn acopt(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_acopt"));
    for a in args {
        cmd.arg(a);
    }
    cmd.env("RUST_LOG", "error").env_remove("ACOPT_THREADS");
    cmd.output().expect("spawn acopt")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("case.conf");
    fs::write(&p, text).unwrap();
    p
}

fn scenarios() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "conf"))
        .collect();
    v.sort();
    v
}

#[test]
fn check_accepts_every_checked_in_scenario() {
    let all = scenarios();
    assert_eq!(all.len(), 6);
    for p in all {
        let out = acopt(&[&"check", &p]);
        assert_eq!(out.status.code(), Some(0), "{}: {}", p.display(), String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains(": ok ("));
    }
}

#[test]
fn config_errors_exit_with_one_and_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), &SMALL.replace("nu_f = 0.01", "nu_f = banana"));
    let out = acopt(&[&"check", &p]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 8"), "{err}");

    let p = write_config(dir.path(), &SMALL.replace("epsilon = 0.1", "epsilon = -0.1"));
    assert_eq!(acopt(&[&"run", &p, &"--out", &dir.path().join("o")]).status.code(), Some(1));

    let missing = dir.path().join("nope.conf");
    assert_eq!(acopt(&[&"check", &missing]).status.code(), Some(1));
    assert_eq!(acopt(&[&"run", &p, &"--scheme", &"explicit"]).status.code(), Some(1));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_acopt"))
        .args(["check".as_ref(), p.as_os_str()])
        .env("ACOPT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_acopt"))
        .args(["check".as_ref(), p.as_os_str()])
        .env("ACOPT_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn unconverged_optimization_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), &format!("{SMALL}max_iter = 1\nwarm_start = false\n"));
    let out = acopt(&[&"run", &p, &"--out", &dir.path().join("o")]);
    assert_eq!(out.status.code(), Some(2));
    // outputs are still written for inspection
    assert!(dir.path().join("o/history.csv").exists());
}

#[test]
fn run_writes_outputs_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("o");
    let out = acopt(&[&"run", &p, &"--out", &out_dir, &"--scheme", &"semi"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let history = fs::read_to_string(out_dir.join("history.csv")).unwrap();
    assert_eq!(history.lines().next().unwrap(), "iter,j,grad_norm,delta,cg_iters,status,forward_solves");
    assert!(history.lines().last().unwrap().contains(",converged,"));
    let state = fs::read_to_string(out_dir.join("state_m00004.csv")).unwrap();
    assert_eq!(state.lines().next().unwrap(), "x,y,c1");
    assert_eq!(state.lines().count(), 1 + 12 * 12);
    // no temporary files left behind by the atomic writes
    assert!(fs::read_dir(&out_dir).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().starts_with('.')));
}

#[test]
fn forward_only_run_has_no_history() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("o");
    let out = acopt(&[&"run", &p, &"--out", &out_dir, &"--forward-only"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(!out_dir.join("history.csv").exists());
    assert!(out_dir.join("interface.csv").exists());
}

#[test]
fn gradcheck_prints_small_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), SMALL);
    let out = acopt(&[&"gradcheck", &p]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    let last = text.lines().last().unwrap();
    let nums: Vec<f64> = last.split_whitespace().filter_map(|w| w.trim_end_matches(',').parse().ok()).collect();
    assert_eq!(nums.len(), 2, "{last}");
    assert!(nums[0] < 1e-6 && nums[1] < 1e-8, "{last}");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), SMALL);
    let mut listings = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        assert_eq!(acopt(&[&"run", &p, &"--out", &out_dir]).status.code(), Some(0));
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out_dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        listings.push(files);
    }
    assert!(!listings[0].is_empty());
    assert!(listings[0] == listings[1]);
}

#[test]
fn help_exits_zero() {
    assert_eq!(acopt(&[&"--help"]).status.code(), Some(0));
    assert_eq!(acopt(&[&"frobnicate"]).status.code(), Some(1));
}
