//! Browser bindings for three small weight-friction demos. Every export
//! returns a JSON string so the page needs no generated type bindings.

use serde::Serialize;
use wasm_bindgen::prelude::*;
use weight_friction::config::{ExperimentConfig, TuningKind};
use weight_friction::continual::{run_continual, MethodTag};
use weight_friction::convergence::{compare_to_sgd, ConvexProblem, ConvexRunConfig, FrictionMode};
use weight_friction::error::Result;
use weight_friction::experiment::{build_sequence, run_config_for};
use weight_friction::optim::{FrictionFunction, FrictionKind};
use weight_friction::rng::Prng;

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
        .and_then(|v| serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string())))
}

fn kind(name: &str) -> Result<FrictionKind> {
    FrictionKind::parse(name).ok_or_else(|| {
        weight_friction::error::Error::Argument(format!("unknown friction kind {name:?}"))
    })
}

#[derive(Serialize)]
pub struct Curve {
    pub w: Vec<f64>,
    pub g: Vec<f64>,
}

pub fn friction_curve_data(kind_name: &str, mu: f64, w_max: f64, points: usize) -> Result<Curve> {
    let f = FrictionFunction::new(kind(kind_name)?, mu)?;
    let n = points.clamp(2, 2001);
    let w: Vec<f64> = (0..n)
        .map(|i| -w_max + 2.0 * w_max * i as f64 / (n - 1) as f64)
        .collect();
    let g = w.iter().map(|&x| f.factor(x)).collect();
    Ok(Curve { w, g })
}

/// Samples g(w) on `points` evenly spaced weights in `[-w_max, w_max]`.
#[wasm_bindgen]
pub fn friction_curve(kind: &str, mu: f64, w_max: f64, points: usize) -> std::result::Result<String, JsValue> {
    to_js(friction_curve_data(kind, mu, w_max, points))
}

#[derive(Serialize)]
pub struct Race {
    pub step: Vec<usize>,
    pub wf_gap: Vec<f64>,
    pub sgd_gap: Vec<f64>,
    pub wf_regret: f64,
    pub sgd_regret: f64,
    pub bound: f64,
    pub descent_holds: bool,
}

pub fn convex_race_data(mu: f64, dim: usize, condition: f64, steps: usize, seed: u64) -> Result<Race> {
    let mut rng = Prng::new(seed);
    let problem = ConvexProblem::random_quadratic(dim.clamp(1, 50), condition.max(1.0), &mut rng)?;
    let start = (0..problem.dim()).map(|_| rng.uniform(-1.0, 1.0)).collect::<Result<_>>()?;
    let cfg = ConvexRunConfig {
        alpha: 1.0 / problem.smoothness(),
        friction: FrictionFunction::logistic(mu)?,
        mode: FrictionMode::Elementwise,
        steps: steps.clamp(1, 20_000),
        start,
        force: false,
    };
    let (wf, sgd, cmp) = compare_to_sgd(&problem, &cfg)?;
    let idx = wf.sample_indices((wf.steps() / 200).max(1));
    let f_star = problem.optimal_loss();
    Ok(Race {
        step: idx.iter().map(|i| i + 1).collect(),
        wf_gap: idx.iter().map(|&i| wf.losses[i] - f_star).collect(),
        sgd_gap: idx.iter().map(|&i| sgd.losses[i] - f_star).collect(),
        wf_regret: cmp.wf_regret,
        sgd_regret: cmp.sgd_regret,
        bound: wf.final_bound(),
        descent_holds: weight_friction::convergence::check_descent(&wf).holds,
    })
}

/// Weight friction and plain gradient descent from the same start on a
/// random quadratic, with step size 1/L.
#[wasm_bindgen]
pub fn convex_race(mu: f64, dim: usize, condition: f64, steps: usize, seed: u64) -> std::result::Result<String, JsValue> {
    to_js(convex_race_data(mu, dim, condition, steps, seed))
}

#[derive(Serialize)]
pub struct Forgetting {
    pub tasks: Vec<String>,
    pub vanilla: Vec<Vec<f64>>,
    pub weight_friction: Vec<Vec<f64>>,
}

pub fn forgetting_data(mu: f64, friction_lr: f64, seed: u64) -> Result<Forgetting> {
    let mut cfg = ExperimentConfig::preset("desk1")?;
    cfg.seeds = vec![seed];
    cfg.data.examples_per_task = 600;
    cfg.data.test_examples_per_task = 300;
    cfg.model.hidden = vec![32];
    cfg.train.epochs = vec![5, 10];
    cfg.train.friction_learning_rate = friction_lr;
    cfg.friction.mu = mu;
    cfg.friction.tuning = TuningKind::None;
    let seq = build_sequence(&cfg)?;
    let rows = |m| -> Result<Vec<Vec<f64>>> {
        let run = run_continual(&run_config_for(&cfg, m, &seq, None)?, &mut |_| Ok(()))?;
        Ok(run.accuracy.rows)
    };
    Ok(Forgetting {
        tasks: seq.task_names(),
        vanilla: rows(MethodTag::Vanilla)?,
        weight_friction: rows(MethodTag::WeightFriction)?,
    })
}

/// Two glyph tasks in sequence, trained once with Adam throughout and once
/// with weight friction on the second task. Returns both accuracy matrices.
#[wasm_bindgen]
pub fn forgetting_demo(mu: f64, friction_lr: f64, seed: u64) -> std::result::Result<String, JsValue> {
    to_js(forgetting_data(mu, friction_lr, seed))
}
