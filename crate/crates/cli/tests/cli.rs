use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wf")).args(args).output().expect("running wf")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = "preset = \"desk1\"
methods = [\"vanilla\"]
seeds = [1]

[data]
examples_per_task = 200
test_examples_per_task = 100

[model]
hidden = [8]

[train]
epochs = [1, 1]
";

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn minimal_preset_config_is_echoed_in_full() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("run");
    let o = wf(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echo = fs::read_to_string(out.join("config.toml")).unwrap();
    for key in ["[data]", "[model]", "[train]", "[friction]", "[ewc]", "[convergence]", "friction_learning_rate", "mu_grid", "lambda", "jobs"] {
        assert!(echo.contains(key), "echo lacks {key}:\n{echo}");
    }
    let matrix = fs::read_to_string(out.join("accuracy_matrix_vanilla.csv")).unwrap();
    assert_eq!(matrix.lines().count(), 3);
    for name in ["run_log.jsonl", "resource_report.csv", "accuracy_per_seed.csv", "summary.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }

    // The snapshot alone reproduces the run.
    let again = dir.path().join("again");
    let o = wf(&["run", "--config", out.join("config.toml").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(again.join("accuracy_matrix_vanilla.csv")).unwrap(), matrix.into_bytes());
}

#[test]
fn negative_mu_is_a_config_error_naming_line_and_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "preset = \"desk1\"\n\n[friction]\nmu = -1\n");
    let o = wf(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("line 4") && e.contains("friction.mu"), "{e}");
}

#[test]
fn unknown_keys_are_rejected_with_their_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "preset = \"desk1\"\n[train]\nepochs = [1, 1]\nmomentum = 0.9\n");
    let o = wf(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("line 4") && e.contains("momentum"), "{e}");
}

#[test]
fn negative_mu_flag_is_rejected() {
    let o = wf(&["run", "--preset", "desk1", "--mu", "-1", "--out", "/nonexistent/never"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn paper_preset_without_data_is_a_data_error_after_echoing_its_settings() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p1");
    let o = wf(&["run", "--preset", "paper1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let echo = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echo.contains("hidden = [256, 256, 256]"), "{echo}");
    assert!(echo.contains("epochs = [50, 100]"));
    assert!(echo.contains("friction_learning_rate = 0.01"));
}

#[test]
fn missing_config_and_preset_is_a_usage_error() {
    assert_eq!(wf(&["run"]).status.code(), Some(2));
    assert_eq!(wf(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(wf(&["run", "--config", "/definitely/not/here.toml"]).status.code(), Some(2));
}

#[test]
fn report_on_an_empty_directory_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = wf(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no completed runs"));
}

#[test]
fn gridsearch_prints_scores_and_the_selected_mu() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("g");
    let o = wf(&["gridsearch", "--config", &cfg, "--mu", "0.5,1,2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("selected"), "{}", stdout(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let grid = &summary["methods"][0]["grid"];
    assert_eq!(grid["scores"].as_array().unwrap().len(), 3);
    assert!(grid["best_mu"].is_number());
}

#[test]
fn report_over_three_methods_normalizes_memory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &SMALL.replace("methods = [\"vanilla\"]", "methods = [\"vanilla\", \"weight_friction\", \"ewc\"]"));
    let out = dir.path().join("r");
    let o = wf(&["run", "--config", &cfg, "--mu", "5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = wf(&["report", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    let ewc = text.lines().find(|l| l.trim_start().starts_with("ewc") && l.contains("1.000")).is_some();
    assert!(ewc, "{text}");
    assert!(out.join("report_long.csv").exists());
}

const SMALL_CONVEX: &str = "preset = \"convex\"

[convergence]
quadratic_dims = [2]
logistic_dims = [2]
logistic_samples = 40
steps = 2000
";

#[test]
fn convergence_refuses_large_steps_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("{SMALL_CONVEX}alpha_scale = 1.5\n"));
    let out = dir.path().join("c");
    let o = wf(&["convergence", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hypothesis"), "{}", stderr(&o));
    let o = wf(&["convergence", "--config", &cfg, "--out", out.to_str().unwrap(), "--force-hypothesis-violation"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn convergence_with_zero_mu_matches_plain_descent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL_CONVEX);
    let out = dir.path().join("c");
    let o = wf(&["convergence", "--config", &cfg, "--mu", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("bound holds everywhere"));
    let summary = fs::read_to_string(out.join("convergence_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.lines().skip(1).all(|l| l.ends_with(",true")), "{summary}");
    assert!(out.join("traces").read_dir().unwrap().count() == 2);
}
