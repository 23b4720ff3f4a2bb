//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line with the measured values, then asserts.
//!
//! Tests share one lock so timing measurements are not disturbed by other
//! tests in this binary, and the desk-scale runs are executed once through
//! the `wf` binary and reused.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use weight_friction::continual::{train_epoch, MethodTag};
use weight_friction::convergence::{run_convergence_suite, ConvergenceSettings};
use weight_friction::data::idx::{encode_idx_images, encode_idx_labels, pixels_to_bytes, read_idx_images};
use weight_friction::data::{load_idx_labels, synthetic_gaussians, TaskView};
use weight_friction::error::Error;
use weight_friction::experiment::RunSummary;
use weight_friction::linalg::DenseMatrix;
use weight_friction::nn::{backward, forward, logits, mlp_specs, softmax_cross_entropy, xavier_init, Mlp};
use weight_friction::optim::{FrictionFunction, FrictionKind, OptimizerConfig, Stepper};
use weight_friction::rng::Prng;

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes straight to the process stdout so the line shows up even when the
/// test harness captures output.
fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    let line = format!(
        "criterion {n:>2} ({name}): {} - {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn wf(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_wf")).args(args).output().expect("running wf");
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

struct DeskRun {
    dir: PathBuf,
    summary: RunSummary,
    elapsed: Duration,
}

fn runs_root() -> &'static Path {
    static ROOT: OnceLock<tempfile::TempDir> = OnceLock::new();
    ROOT.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

fn desk_run(preset: &'static str) -> Arc<DeskRun> {
    static RUNS: Mutex<Vec<(&'static str, Arc<DeskRun>)>> = Mutex::new(Vec::new());
    let mut runs = RUNS.lock().unwrap_or_else(|e| e.into_inner());
    if let Some((_, r)) = runs.iter().find(|(p, _)| *p == preset) {
        return r.clone();
    }
    let dir = runs_root().join(preset);
    let start = Instant::now();
    let (ok, _, stderr) = wf(&["run", "--preset", preset, "--out", dir.to_str().unwrap()]);
    let elapsed = start.elapsed();
    assert!(ok, "wf run --preset {preset} failed: {stderr}");
    let summary = serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    let run = Arc::new(DeskRun { dir, summary, elapsed });
    runs.push((preset, run.clone()));
    run
}

fn mean_loss(model: &Mlp, x: &DenseMatrix, y: &[usize]) -> f64 {
    softmax_cross_entropy(&logits(model, x).unwrap(), y).unwrap().0
}

#[test]
fn criterion_01_gradient_check() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = Prng::new(2024);
    let mut worst: f64 = 0.0;
    let mut coords = 0usize;
    for _ in 0..20 {
        let layers = 1 + rng.below(3);
        let input = 1 + rng.below(32);
        let hidden: Vec<usize> = (1..layers).map(|_| 1 + rng.below(32)).collect();
        let classes = 2 + rng.below(31);
        let mut model = xavier_init(&mlp_specs(input, &hidden, classes), &mut rng).unwrap();
        // Xavier biases are zero, which can park a unit exactly on the ReLU
        // kink when everything feeding it is inactive.
        for layer in &mut model.params_mut().layers {
            for b in &mut layer.bias {
                *b = rng.uniform(-0.5, 0.5).unwrap();
            }
        }
        let batch = 1 + rng.below(4);
        let x = DenseMatrix::new(batch, input, (0..batch * input).map(|_| rng.next_f64()).collect()).unwrap();
        let y: Vec<usize> = (0..batch).map(|_| rng.below(classes)).collect();

        let (out, cache) = forward(&model, &x).unwrap();
        let (_, dlogits) = softmax_cross_entropy(&out, &y).unwrap();
        let analytic = backward(&model, &cache, &dlogits).unwrap();
        let analytic: Vec<f64> = analytic.values().collect();

        let h = 1e-6;
        for (i, &a) in analytic.iter().enumerate() {
            let nudge = |delta: f64| {
                let mut m = model.clone();
                let mut k = 0;
                m.params_mut()
                    .zip_apply(&model.params().clone(), |w, _, _| {
                        if k == i {
                            *w += delta;
                        }
                        k += 1;
                    })
                    .unwrap();
                mean_loss(&m, &x, &y)
            };
            let numeric = (nudge(h) - nudge(-h)) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            coords += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "gradient check",
        worst <= 1e-4 && secs < 30.0,
        format!("{coords} coordinates over 20 models, worst relative error {worst:.2e}, {secs:.1}s"),
    );
}

#[test]
fn criterion_02_friction_suite() {
    let _g = serial();
    let start = Instant::now();
    let mut failures = Vec::new();
    for kind in [FrictionKind::LogisticBell, FrictionKind::GaussianBell] {
        for mu in [0.0, 0.5, 1.0, 5.0, 50.0] {
            let f = FrictionFunction::new(kind, mu).unwrap();
            if f.factor(0.0) != 1.0 {
                failures.push(format!("{kind:?} μ={mu}: g(0) != 1"));
            }
            let grid: Vec<f64> = (0..10_001).map(|i| -10.0 + 20.0 * i as f64 / 10_000.0).collect();
            let mut prev = f64::INFINITY;
            for &w in grid.iter().filter(|w| **w >= 0.0) {
                let g = f.factor(w);
                if (g - f.factor(-w)).abs() >= 1e-15 {
                    failures.push(format!("{kind:?} μ={mu}: odd at {w}"));
                }
                if !(g > 0.0 && g <= 1.0) {
                    failures.push(format!("{kind:?} μ={mu}: g({w}) = {g} out of (0, 1]"));
                }
                if g > prev {
                    failures.push(format!("{kind:?} μ={mu}: increases at {w}"));
                }
                prev = g;
            }
            for t in [1e6, -1e6, 1e3] {
                let w = if mu > 0.0 { t / mu } else { t };
                let g = f.factor(w);
                if !g.is_finite() || g <= 0.0 {
                    failures.push(format!("{kind:?} μ={mu}: g at |μw| large is {g}"));
                }
            }
        }
    }
    let value = FrictionFunction::logistic(1.0).unwrap().factor(2.0);
    if (value - 0.419974).abs() > 1e-6 {
        failures.push(format!("logistic_bell(1, 2) = {value}"));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        2,
        "friction functions",
        failures.is_empty() && secs < 1.0,
        format!("logistic_bell(μ=1, w=2) = {value:.6}, {} violations, {secs:.3}s", failures.len()),
    );
}

#[test]
fn criterion_03_zero_mu_is_sgd() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = Prng::new(77);
    let data = synthetic_gaussians(4, 30, 12, 0.2, &mut rng).unwrap();
    let model = xavier_init(&mlp_specs(12, &[16, 8], 4), &mut rng).unwrap();
    let mut a = model.clone();
    let mut b = model;
    let mut sgd = Stepper::new(OptimizerConfig::sgd(0.05), &a).unwrap();
    let mut wfs =
        Stepper::new(OptimizerConfig::weight_friction(0.05, FrictionFunction::logistic(0.0).unwrap()), &b).unwrap();
    let mut identical = true;
    for step in 0..1000 {
        let rows: Vec<usize> = (0..16).map(|_| rng.below(data.len())).collect();
        let batch = data.subset(&rows, "batch").unwrap();
        for (m, s) in [(&mut a, &mut sgd), (&mut b, &mut wfs)] {
            let (out, cache) = forward(m, &batch.inputs).unwrap();
            let (_, d) = softmax_cross_entropy(&out, &batch.labels).unwrap();
            let g = backward(m, &cache, &d).unwrap();
            s.step(m, &g).unwrap();
        }
        if a.params() != b.params() || a.params().fingerprint() != b.params().fingerprint() {
            identical = false;
            eprintln!("diverged at step {step}");
            break;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        3,
        "μ = 0 reduces to SGD",
        identical && secs < 10.0,
        format!("1000 steps bit-identical: {identical}, {secs:.2}s"),
    );
}

#[test]
fn criterion_04_convex_suite() {
    let _g = serial();
    let start = Instant::now();
    let settings = ConvergenceSettings::default();
    let results = run_convergence_suite(&settings, &mut |_| Ok(())).unwrap();
    let descent = results.iter().all(|r| r.descent.holds);
    let bound = results.iter().all(|r| r.bound.holds);
    let worst_gap = results.iter().map(|r| r.comparison.wf_final_gap).fold(f64::MIN, f64::max);
    let unit_step = results.iter().all(|r| (r.alpha * r.smoothness - 1.0).abs() < 1e-12);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        4,
        "convex descent and regret bound",
        descent && bound && worst_gap < 1e-6 && unit_step && secs < 120.0,
        format!(
            "{} runs (μ {:?}), descent {descent}, bound {bound}, worst final gap {worst_gap:.2e}, {secs:.1}s",
            results.len(),
            settings.mus
        ),
    );
}

#[test]
fn criterion_05_forgetting_reproduces() {
    let _g = serial();
    let run = desk_run("desk1");
    let v = run.summary.method(MethodTag::Vanilla).unwrap();
    let a11 = v.accuracy.rows[0][0];
    let a21 = v.accuracy.rows[1][0];
    let secs = run.elapsed.as_secs_f64();
    verdict(
        5,
        "catastrophic forgetting on desk1",
        a11 - a21 >= 0.30 && run.summary.seeds.len() == 5 && secs < 600.0,
        format!("vanilla a11 {a11:.4} -> a21 {a21:.4} (drop {:.4}), 5 seeds, whole desk1 run {secs:.0}s", a11 - a21),
    );
}

#[test]
fn criterion_06_friction_retention() {
    let _g = serial();
    let run = desk_run("desk1");
    let v = run.summary.method(MethodTag::Vanilla).unwrap();
    let w = run.summary.method(MethodTag::WeightFriction).unwrap();
    let grid = w.grid.as_ref().expect("desk1 searches μ");
    let retained_gain = w.first_task_retained - v.first_task_retained;
    let task2_gap = v.final_task_accuracy - w.final_task_accuracy;
    let secs = run.elapsed.as_secs_f64();
    verdict(
        6,
        "weight-friction retention on desk1",
        retained_gain >= 0.20 && task2_gap.abs() <= 0.10 && secs < 1800.0,
        format!(
            "selected μ {} from {:?}; a21 WF {:.4} vs vanilla {:.4} (+{retained_gain:.4}); a22 WF {:.4} vs vanilla {:.4} (gap {task2_gap:.4}); {secs:.0}s",
            grid.best_mu,
            grid.scores.iter().map(|s| s.mu).collect::<Vec<_>>(),
            w.first_task_retained,
            v.first_task_retained,
            w.final_task_accuracy,
            v.final_task_accuracy
        ),
    );
}

#[test]
fn criterion_07_order_effect_report() {
    let _g = serial();
    let one = desk_run("desk1");
    let two = desk_run("desk2");
    let (ok, stdout, stderr) = wf(&["report", runs_root().to_str().unwrap()]);
    let orderings: Vec<String> = [&one, &two].iter().map(|r| r.summary.sequence.join(" -> ")).collect();
    let section = stdout.split("by ordering").nth(1).unwrap_or("");
    let printed = orderings.iter().all(|o| section.contains(o.as_str()));
    let retained: Vec<String> = [&one, &two]
        .iter()
        .map(|r| {
            let w = r.summary.method(MethodTag::WeightFriction).unwrap();
            let v = r.summary.method(MethodTag::Vanilla).unwrap();
            format!(
                "{}: vanilla {:.4}, WF {:.4}",
                r.summary.sequence.join(" -> "),
                v.first_task_retained,
                w.first_task_retained
            )
        })
        .collect();
    verdict(
        7,
        "order effect harness",
        ok && printed && one.dir.exists() && two.dir.exists(),
        format!("report lists both orderings: {printed}; {}{}", retained.join("; "), if ok { String::new() } else { stderr }),
    );
}

#[test]
fn criterion_08_permuted_sequence() {
    let _g = serial();
    let run = desk_run("desk3");
    let v = run.summary.method(MethodTag::Vanilla).unwrap();
    let w = run.summary.method(MethodTag::WeightFriction).unwrap();
    let (v5, w5, w1) = (
        *v.average_after_task.last().unwrap(),
        *w.average_after_task.last().unwrap(),
        w.average_after_task[0],
    );
    let secs = run.elapsed.as_secs_f64();
    verdict(
        8,
        "permuted five-task sequence",
        run.summary.sequence.len() == 5 && w5 - v5 >= 0.10 && w1 - w5 <= 0.15 && secs < 1800.0,
        format!(
            "average after task 5: WF {w5:.4} (μ {}) vs vanilla {v5:.4} (+{:.4}); WF after task 1 {w1:.4} (drop {:.4}); {secs:.0}s",
            w.mu.unwrap_or(f64::NAN),
            w5 - v5,
            w1 - w5
        ),
    );
}

fn median_epoch_seconds(stepper_cfg: &OptimizerConfig, model: &Mlp, view: &TaskView, reps: usize) -> Vec<f64> {
    (0..reps)
        .map(|r| {
            let mut m = model.clone();
            let mut s = Stepper::new(stepper_cfg.clone(), &m).unwrap();
            let mut rng = Prng::new(r as u64);
            let t = Instant::now();
            train_epoch(&mut m, &mut s, view, 64, &mut rng, None).unwrap();
            t.elapsed().as_secs_f64()
        })
        .collect()
}

#[test]
fn criterion_09_efficiency() {
    let _g = serial();
    let run = desk_run("desk1");
    let mem = |m| run.summary.method(m).unwrap().cost.memory_units;
    let (mv, mw, me) = (mem(MethodTag::Vanilla), mem(MethodTag::WeightFriction), mem(MethodTag::Ewc));

    let mut rng = Prng::new(5);
    let data = Arc::new(synthetic_gaussians(10, 200, 784, 0.2, &mut rng).unwrap());
    let view = TaskView::new(data);
    let model = xavier_init(&mlp_specs(784, &[64], 10), &mut rng).unwrap();
    let sgd = OptimizerConfig::sgd(0.1);
    let fric = OptimizerConfig::weight_friction(0.1, FrictionFunction::logistic(20.0).unwrap());
    let mut ts = Vec::new();
    let mut tw = Vec::new();
    for _ in 0..3 {
        ts.extend(median_epoch_seconds(&sgd, &model, &view, 3));
        tw.extend(median_epoch_seconds(&fric, &model, &view, 3));
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (s, w) = (median(&mut ts), median(&mut tw));
    let ratio = w / s;
    verdict(
        9,
        "memory and time cost",
        mw == mv && me > mv && ratio <= 1.2,
        format!("memory proxy vanilla {mv}, WF {mw}, EWC {me}; epoch time WF {w:.4}s vs SGD {s:.4}s (x{ratio:.3})"),
    );
}

#[test]
fn criterion_10_idx_loader() {
    let _g = serial();
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = vec![0, 255, 128, 1, 2, 3, 64, 200, 17, 0, 99, 254];
    let images = encode_idx_images(2, 3, &pixels).unwrap();
    let labels = encode_idx_labels(&[7, 0]);
    let ip = dir.path().join("images");
    let lp = dir.path().join("labels");
    fs::write(&ip, &images).unwrap();
    fs::write(&lp, &labels).unwrap();

    let decoded = read_idx_images(&ip).unwrap();
    let exact = decoded.rows == 2
        && decoded.cols == 3
        && decoded.pixels.shape() == (2, 6)
        && decoded.pixels.data().iter().zip(&pixels).all(|(v, &b)| *v == f64::from(b) / 255.0);
    let labels_ok = load_idx_labels(&lp).unwrap() == vec![7, 0];

    let mut bad_magic = images.clone();
    bad_magic[3] = 0x01;
    fs::write(&ip, &bad_magic).unwrap();
    let magic_rejected = matches!(read_idx_images(&ip), Err(Error::Format { .. }));
    fs::write(&ip, &images[..images.len() - 1]).unwrap();
    let truncated_rejected = matches!(read_idx_images(&ip), Err(Error::Length { .. }));
    fs::write(&lp, &labels[..labels.len() - 1]).unwrap();
    let truncated_labels_rejected = load_idx_labels(&lp).is_err();

    let round_trip = encode_idx_images(2, 3, &pixels_to_bytes(&decoded.pixels)).unwrap() == images;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        10,
        "IDX loader",
        exact && labels_ok && magic_rejected && truncated_rejected && truncated_labels_rejected && round_trip && secs < 1.0,
        format!(
            "exact decode {exact}, labels {labels_ok}, wrong magic rejected {magic_rejected}, truncation rejected {}, round trip {round_trip}",
            truncated_rejected && truncated_labels_rejected
        ),
    );
}

#[test]
fn criterion_11_determinism() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(
        &cfg,
        "preset = \"desk1\"\nseeds = [1, 2]\n\n[data]\nexamples_per_task = 500\ntest_examples_per_task = 200\n\n[friction]\nmu_grid = [1.0, 20.0]\n",
    )
    .unwrap();
    let outs: Vec<PathBuf> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    for out in &outs {
        let (ok, _, stderr) = wf(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(ok, "{stderr}");
    }
    let mut files = Vec::new();
    let mut same = true;
    for name in [
        "accuracy_matrix_vanilla.csv",
        "accuracy_matrix_weight_friction.csv",
        "accuracy_matrix_ewc.csv",
        "accuracy_per_seed.csv",
        "grid_scores.csv",
    ] {
        let a = fs::read(outs[0].join(name)).unwrap();
        let b = fs::read(outs[1].join(name)).unwrap();
        same &= a == b;
        files.push(name);
    }
    verdict(
        11,
        "determinism",
        same,
        format!("{} CSV files byte-identical across two invocations: {same}", files.len()),
    );
}
