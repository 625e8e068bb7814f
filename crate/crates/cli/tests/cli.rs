use std::path::Path;
use std::process::{Command, Output};

fn dbsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbsim")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const NAMES: [&str; 8] =
    ["scale4", "scale8", "scale16", "robustness", "homogeneous", "model_averaging", "one_shot", "sgd_convergence"];

#[test]
fn list_shows_every_builtin_with_its_description() {
    let o = dbsim(&["list"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in NAMES {
        let line = text.lines().find(|l| l.split_whitespace().next() == Some(name)).unwrap_or_else(|| panic!("{name}"));
        assert!(line.len() > name.len() + 1, "{line}");
    }
    assert!(text.lines().any(|l| l.starts_with("scale4") && l.contains("4 workers")));
}

#[test]
fn every_builtin_runs() {
    let dir = tempfile::tempdir().unwrap();
    for name in NAMES {
        let o = dbsim(&["run", name, "--out", dir.path().to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(dir.path().join(format!("{name}.json")).exists());
    }
}

#[test]
fn scale4_writes_two_csvs_and_a_json_and_saves_time() {
    let dir = tempfile::tempdir().unwrap();
    let o = dbsim(&["run", "scale4", "--out", dir.path().to_str().unwrap(), "--seed", "5"]);
    assert!(o.status.success());
    let mut files: Vec<String> =
        std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    assert_eq!(files, ["scale4.json", "scale4_dbs.csv", "scale4_fixed_ssgd.csv"]);
    let text = stdout(&o);
    let dbs_line = text.lines().find(|l| l.starts_with("dbs")).unwrap();
    let savings: f64 = dbs_line.split_whitespace().last().unwrap().parse().unwrap();
    assert!(savings > 0.0);
    let json = std::fs::read_to_string(dir.path().join("scale4.json")).unwrap();
    assert!(json.contains(r#""seed":5"#));
}

#[test]
fn parallel_and_sequential_runs_write_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(dbsim(&["run", "model_averaging", "--out", a.path().to_str().unwrap()]).status.success());
    assert!(dbsim(&["run", "model_averaging", "--out", b.path().to_str().unwrap(), "--parallel"]).status.success());
    for f in ["model_averaging.json", "model_averaging_fixed_ssgd.csv", "model_averaging_model_averaging_s8.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"
name = "small"
n_workers = 2
worker_costs = [0.001, 0.003]
dataset_size = 2048
total_budget = 32
n_epochs = 4
seed = 1

[[strategies]]
kind = "fixed_ssgd"

[[strategies]]
kind = "dbs"
"#;

#[test]
fn config_files_run_and_bad_ones_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let good = write(dir.path(), "small.toml", SMALL);
    let o = dbsim(&["run", &good, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("small_dbs.csv").exists());

    let bad = write(dir.path(), "bad.toml", &SMALL.replace("total_budget = 32", "total_budget = 1"));
    let o = dbsim(&["run", &bad, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("total_budget"));

    let broken = write(dir.path(), "broken.toml", "name = \n");
    let o = dbsim(&["run", &broken]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("broken.toml:1:"));

    assert_eq!(dbsim(&["run", "no_such_scenario"]).status.code(), Some(1));
    assert_eq!(dbsim(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn check_without_sgd_table_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dbsim(&["check", "scale4", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn failing_checks_exit_with_three() {
    // 50 draws cannot pin the m -> 4m variance ratio to within 0.01%.
    let text = format!(
        "{SMALL}\n[sgd_check]\ndimension = 2\nstep_sizes = [0.5]\nn_iterations = 20\nseeds = 20\n\
         variance_draws = 50\nratio_tolerance = 0.0001\n"
    );
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &text);
    let o = dbsim(&["check", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(String::from_utf8_lossy(&o.stderr).contains("variance_monotonicity"));
    assert!(dir.path().join("small_checks.json").exists());
}

#[test]
fn sgd_convergence_checks_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = dbsim(&["check", "sgd_convergence", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("pass")).count(), 5);
}

#[test]
fn step_size_outside_range_is_rejected() {
    let text = format!("{SMALL}\n[sgd_check]\ndimension = 2\nstep_sizes = [1.5]\nn_iterations = 20\n");
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.toml", &text);
    let o = dbsim(&["check", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sgd_check.step_sizes[0]"));
}
