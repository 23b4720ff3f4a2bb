//! Weight friction on smooth convex problems: descent and regret checks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::optim::FrictionFunction;
use crate::rng::Prng;

/// Absolute/relative slack allowed when checking `L(w_{t+1}) <= L(w_t)`.
pub const DESCENT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
enum Objective {
    /// `½ (w − c)ᵀ A (w − c)`
    Quadratic { a: DenseMatrix, center: Vec<f64> },
    /// Mean logistic loss of labels `y ∈ {0, 1}` under scores `X w`.
    Logistic { x: DenseMatrix, y: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexProblem {
    pub name: String,
    objective: Objective,
    optimum: Vec<f64>,
    optimal_loss: f64,
    smoothness: f64,
}

fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

fn from_na(m: &DMatrix<f64>) -> Result<DenseMatrix> {
    let mut data = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        data.extend(m.row(r).iter().copied());
    }
    DenseMatrix::new(m.nrows(), m.ncols(), data)
}

fn largest_eigenvalue(sym: DMatrix<f64>) -> f64 {
    sym.symmetric_eigen().eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ConvexProblem {
    /// `½ (w − center)ᵀ A (w − center)` for symmetric positive semidefinite `A`.
    pub fn quadratic(name: impl Into<String>, a: DenseMatrix, center: Vec<f64>) -> Result<Self> {
        let d = a.rows();
        if a.cols() != d || center.len() != d {
            return Err(Error::shape(
                "ConvexProblem::quadratic",
                format!("A is {:?}, center has {}", a.shape(), center.len()),
            ));
        }
        for i in 0..d {
            for j in 0..i {
                if (a.get(i, j) - a.get(j, i)).abs() > 1e-12 * (1.0 + a.get(i, j).abs()) {
                    return Err(Error::Argument("quadratic matrix is not symmetric".into()));
                }
            }
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric("non-finite quadratic center".into()));
        }
        let eig = to_na(&a).symmetric_eigen().eigenvalues;
        let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if min < -1e-12 * max.abs().max(1.0) || !(max > 0.0) {
            return Err(Error::Argument(format!(
                "quadratic matrix must be positive semidefinite and non-zero (eigenvalues in [{min}, {max}])"
            )));
        }
        Ok(Self {
            name: name.into(),
            objective: Objective::Quadratic {
                a,
                center: center.clone(),
            },
            optimum: center,
            optimal_loss: 0.0,
            smoothness: max,
        })
    }

    /// Random quadratic whose Hessian has eigenvalues evenly spaced in
    /// `[1/condition, 1]` and whose minimizer lies in `[-0.5, 0.5]^d`.
    pub fn random_quadratic(dim: usize, condition: f64, rng: &mut Prng) -> Result<Self> {
        if dim == 0 || !(condition >= 1.0) {
            return Err(Error::Argument(format!(
                "random_quadratic needs dim > 0 and condition >= 1 (got {dim}, {condition})"
            )));
        }
        let g = DMatrix::from_fn(dim, dim, |_, _| rng.normal());
        let q = g.qr().q();
        let spectrum = DVector::from_fn(dim, |i, _| {
            if dim == 1 {
                1.0
            } else {
                1.0 / condition + (1.0 - 1.0 / condition) * i as f64 / (dim - 1) as f64
            }
        });
        let a = &q * DMatrix::from_diagonal(&spectrum) * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        let center = (0..dim).map(|_| rng.uniform(-0.5, 0.5)).collect::<Result<Vec<_>>>()?;
        Self::quadratic(format!("quadratic_d{dim}"), from_na(&a)?, center)
    }

    /// Unregularized logistic regression; the minimizer is found by Newton's
    /// method and must exist (the data must not be separable).
    pub fn logistic(name: impl Into<String>, x: DenseMatrix, y: Vec<f64>) -> Result<Self> {
        let (n, d) = x.shape();
        if y.len() != n {
            return Err(Error::shape("ConvexProblem::logistic", format!("{n} rows, {} labels", y.len())));
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Argument("logistic labels must be 0 or 1".into()));
        }
        x.ensure_finite("logistic inputs")?;
        let xn = to_na(&x);
        let smoothness = 0.25 * largest_eigenvalue(xn.transpose() * &xn) / n as f64;
        let mut problem = Self {
            name: name.into(),
            objective: Objective::Logistic { x, y },
            optimum: vec![0.0; d],
            optimal_loss: 0.0,
            smoothness,
        };
        let mut w = DVector::<f64>::zeros(d);
        let mut converged = false;
        for _ in 0..100 {
            let ws: Vec<f64> = w.iter().copied().collect();
            let grad = DVector::from_vec(problem.gradient(&ws)?);
            let scores = &xn * &w;
            let weights = DVector::from_fn(n, |i, _| {
                let s = sigmoid(scores[i]);
                s * (1.0 - s)
            });
            let mut h = DMatrix::<f64>::zeros(d, d);
            for i in 0..n {
                let row = xn.row(i).transpose();
                h += (&row * row.transpose()) * (weights[i] / n as f64);
            }
            let step = h
                .cholesky()
                .ok_or_else(|| Error::Numeric("logistic Hessian is not positive definite".into()))?
                .solve(&grad);
            // on separable data the gradient vanishes while Newton steps stay large
            if grad.norm() < 1e-10 && step.norm() < 1e-6 {
                converged = true;
                break;
            }
            w -= step;
            if w.amax() > 1e6 || w.iter().any(|v| !v.is_finite()) {
                break;
            }
        }
        if !converged {
            return Err(Error::Argument(
                "logistic problem has no finite minimizer (data may be separable)".into(),
            ));
        }
        problem.optimum = w.iter().copied().collect();
        problem.optimal_loss = problem.loss(&problem.optimum)?;
        Ok(problem)
    }

    /// `n` Gaussian inputs with Bernoulli labels drawn from a weak linear
    /// model, so the classes overlap and the minimizer stays small.
    pub fn random_logistic(n: usize, dim: usize, rng: &mut Prng) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::Argument("random_logistic needs n > 0 and dim > 0".into()));
        }
        let truth = (0..dim)
            .map(|_| rng.uniform(-0.3, 0.3).map(|v| v / (dim as f64).sqrt()))
            .collect::<Result<Vec<_>>>()?;
        let mut data = Vec::with_capacity(n * dim);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let p = sigmoid(row.iter().zip(&truth).map(|(a, b)| a * b).sum());
            y.push(if rng.next_f64() < p { 1.0 } else { 0.0 });
            data.extend(row);
        }
        Self::logistic(format!("logistic_d{dim}"), DenseMatrix::new(n, dim, data)?, y)
    }

    pub fn dim(&self) -> usize {
        self.optimum.len()
    }

    pub fn optimum(&self) -> &[f64] {
        &self.optimum
    }

    pub fn optimal_loss(&self) -> f64 {
        self.optimal_loss
    }

    /// Lipschitz constant of the gradient.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    fn check_point(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::shape("ConvexProblem", format!("point has {} coordinates, expected {}", w.len(), self.dim())));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite point".into()));
        }
        Ok(())
    }

    pub fn loss(&self, w: &[f64]) -> Result<f64> {
        self.check_point(w)?;
        let v = match &self.objective {
            Objective::Quadratic { a, center } => {
                let diff: Vec<f64> = w.iter().zip(center).map(|(a, b)| a - b).collect();
                let mut total = 0.0;
                for (i, di) in diff.iter().enumerate() {
                    total += di * a.row(i).iter().zip(&diff).map(|(x, y)| x * y).sum::<f64>();
                }
                0.5 * total
            }
            Objective::Logistic { x, y } => {
                let n = x.rows();
                (0..n)
                    .map(|i| {
                        let s: f64 = x.row(i).iter().zip(w).map(|(a, b)| a * b).sum();
                        softplus(s) - y[i] * s
                    })
                    .sum::<f64>()
                    / n as f64
            }
        };
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite convex loss".into()));
        }
        Ok(v)
    }

    pub fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_point(w)?;
        let g = match &self.objective {
            Objective::Quadratic { a, center } => {
                let diff: Vec<f64> = w.iter().zip(center).map(|(a, b)| a - b).collect();
                (0..self.dim())
                    .map(|i| a.row(i).iter().zip(&diff).map(|(x, y)| x * y).sum())
                    .collect::<Vec<f64>>()
            }
            Objective::Logistic { x, y } => {
                let n = x.rows();
                let mut g = vec![0.0; self.dim()];
                for (i, yi) in y.iter().enumerate() {
                    let row = x.row(i);
                    let s: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
                    let r = (sigmoid(s) - yi) / n as f64;
                    g.iter_mut().zip(row).for_each(|(gj, xj)| *gj += r * xj);
                }
                g
            }
        };
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite convex gradient".into()));
        }
        Ok(g)
    }
}

/// How the friction factor is applied on convex problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrictionMode {
    /// `g(w_i)` per coordinate.
    Elementwise,
    /// One factor `g(mean |w|)` for every coordinate.
    Scalar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexRunConfig {
    pub alpha: f64,
    pub friction: FrictionFunction,
    pub mode: FrictionMode,
    pub steps: usize,
    pub start: Vec<f64>,
    /// Run even when `alpha > 1/L`; the guarantees no longer apply.
    pub force: bool,
}

/// Per-step record of a convex run. Index `t` holds values at iterate `w_{t+1}`
/// (the first entry is the starting point).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub problem: String,
    pub alpha: f64,
    pub mu: f64,
    pub friction: String,
    pub mode: FrictionMode,
    pub forced: bool,
    pub smoothness: f64,
    pub optimal_loss: f64,
    /// `‖w_1 − w*‖²`
    pub initial_distance_sq: f64,
    pub losses: Vec<f64>,
    /// Cumulative regret `Σ_{s<=t} (L(w_s) − L*)`.
    pub regret: Vec<f64>,
    /// Running minimum of the friction factors applied so far.
    pub g_min: Vec<f64>,
    pub final_point: Vec<f64>,
}

impl RegretTrace {
    pub fn steps(&self) -> usize {
        self.losses.len()
    }

    pub fn final_regret(&self) -> f64 {
        self.regret.last().copied().unwrap_or(0.0)
    }

    /// `‖w_1 − w*‖² / (2 α g_min)` after `t + 1` iterates.
    pub fn bound_at(&self, t: usize) -> f64 {
        self.initial_distance_sq / (2.0 * self.alpha * self.g_min[t])
    }

    pub fn final_bound(&self) -> f64 {
        self.bound_at(self.steps() - 1)
    }

    /// Row indices to keep when thinning the trace: every `stride`-th plus the last.
    pub fn sample_indices(&self, stride: usize) -> Vec<usize> {
        let stride = stride.max(1);
        let n = self.steps();
        let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
        if idx.last() != Some(&(n - 1)) {
            idx.push(n - 1);
        }
        idx
    }
}

/// Weight-friction gradient descent `w ← w − α g(w) ⊙ ∇L(w)` on `problem`,
/// recording `steps` iterates including the start.
pub fn run_wf_convex(problem: &ConvexProblem, cfg: &ConvexRunConfig) -> Result<RegretTrace> {
    if !(cfg.alpha > 0.0) || !cfg.alpha.is_finite() {
        return Err(Error::Argument(format!("step size must be positive, got {}", cfg.alpha)));
    }
    if cfg.steps == 0 {
        return Err(Error::Argument("at least one step is required".into()));
    }
    let limit = 1.0 / problem.smoothness();
    if cfg.alpha > limit * (1.0 + 1e-12) && !cfg.force {
        return Err(Error::Hypothesis(format!(
            "step size {} exceeds 1/L = {limit} for {}; the descent and regret guarantees need alpha <= 1/L",
            cfg.alpha, problem.name
        )));
    }
    let mut w = cfg.start.clone();
    problem.check_point(&w)?;
    let initial_distance_sq = w
        .iter()
        .zip(problem.optimum())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut regret = Vec::with_capacity(cfg.steps);
    let mut g_min = Vec::with_capacity(cfg.steps);
    let mut running_regret = 0.0;
    let mut running_g = 1.0f64;
    let mut factors = vec![1.0; w.len()];
    for t in 0..cfg.steps {
        let loss = problem.loss(&w)?;
        running_regret += loss - problem.optimal_loss();
        match cfg.mode {
            FrictionMode::Elementwise => {
                for (f, &wi) in factors.iter_mut().zip(&w) {
                    *f = cfg.friction.factor(wi);
                }
            }
            FrictionMode::Scalar => {
                let m = w.iter().map(|v| v.abs()).sum::<f64>() / w.len() as f64;
                factors.fill(cfg.friction.factor(m));
            }
        }
        running_g = factors.iter().copied().fold(running_g, f64::min);
        losses.push(loss);
        regret.push(running_regret);
        g_min.push(running_g);
        if t + 1 < cfg.steps {
            let grad = problem.gradient(&w)?;
            for ((wi, gi), fi) in w.iter_mut().zip(&grad).zip(&factors) {
                *wi -= cfg.alpha * fi * gi;
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("{}: iterate diverged at step {}", problem.name, t + 1)));
            }
        }
    }
    Ok(RegretTrace {
        problem: problem.name.clone(),
        alpha: cfg.alpha,
        mu: cfg.friction.mu(),
        friction: cfg.friction.kind().as_str().to_string(),
        mode: cfg.mode,
        forced: cfg.alpha > limit * (1.0 + 1e-12),
        smoothness: problem.smoothness(),
        optimal_loss: problem.optimal_loss(),
        initial_distance_sq,
        losses,
        regret,
        g_min,
        final_point: w,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentCheck {
    pub holds: bool,
    pub violations: usize,
    /// First step `t` (1-based) with `L(w_{t+1}) > L(w_t)` beyond tolerance.
    pub first_violation: Option<usize>,
    pub max_increase: f64,
}

/// Checks that the loss never increases by more than [`DESCENT_TOLERANCE`]
/// (relative to `max(1, |L|)`).
pub fn check_descent(trace: &RegretTrace) -> DescentCheck {
    let mut violations = 0;
    let mut first = None;
    let mut max_increase = 0.0f64;
    for (t, pair) in trace.losses.windows(2).enumerate() {
        let increase = pair[1] - pair[0];
        max_increase = max_increase.max(increase);
        if increase > DESCENT_TOLERANCE * pair[0].abs().max(1.0) {
            violations += 1;
            first.get_or_insert(t + 1);
        }
    }
    DescentCheck {
        holds: violations == 0,
        violations,
        first_violation: first,
        max_increase,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub holds: bool,
    pub final_regret: f64,
    pub final_bound: f64,
    /// Largest `R(t) / bound(t)` along the trace.
    pub worst_ratio: f64,
    pub first_violation: Option<usize>,
}

/// Checks `R(t) <= ‖w_1 − w*‖² / (2 α g_min(t))` at every step.
pub fn check_regret_bound(trace: &RegretTrace) -> BoundCheck {
    let mut worst = 0.0f64;
    let mut first = None;
    for t in 0..trace.steps() {
        let bound = trace.bound_at(t);
        let r = trace.regret[t];
        let ratio = if bound > 0.0 {
            r / bound
        } else if r > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        worst = worst.max(ratio);
        if r > bound * (1.0 + 1e-9) + 1e-15 {
            first.get_or_insert(t + 1);
        }
    }
    BoundCheck {
        holds: first.is_none(),
        final_regret: trace.final_regret(),
        final_bound: trace.final_bound(),
        worst_ratio: worst,
        first_violation: first,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdComparison {
    pub wf_regret: f64,
    pub sgd_regret: f64,
    /// `wf_regret / sgd_regret`
    pub regret_ratio: f64,
    pub wf_final_gap: f64,
    pub sgd_final_gap: f64,
    /// Both traces agree bit for bit.
    pub identical: bool,
}

/// Runs the same problem with friction and with plain gradient descent.
pub fn compare_to_sgd(problem: &ConvexProblem, cfg: &ConvexRunConfig) -> Result<(RegretTrace, RegretTrace, SgdComparison)> {
    let wf = run_wf_convex(problem, cfg)?;
    let sgd_cfg = ConvexRunConfig {
        friction: FrictionFunction::identity(),
        ..cfg.clone()
    };
    let sgd = run_wf_convex(problem, &sgd_cfg)?;
    let identical = wf.losses.len() == sgd.losses.len()
        && wf.losses.iter().zip(&sgd.losses).all(|(a, b)| a.to_bits() == b.to_bits())
        && wf.final_point.iter().zip(&sgd.final_point).all(|(a, b)| a.to_bits() == b.to_bits());
    let cmp = SgdComparison {
        wf_regret: wf.final_regret(),
        sgd_regret: sgd.final_regret(),
        regret_ratio: if sgd.final_regret() > 0.0 {
            wf.final_regret() / sgd.final_regret()
        } else {
            f64::NAN
        },
        wf_final_gap: wf.losses.last().copied().unwrap_or(0.0) - wf.optimal_loss,
        sgd_final_gap: sgd.losses.last().copied().unwrap_or(0.0) - sgd.optimal_loss,
        identical,
    };
    Ok((wf, sgd, cmp))
}

/// Parameters of the standard convergence suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSettings {
    pub quadratic_dims: Vec<usize>,
    pub quadratic_condition: f64,
    pub logistic_dims: Vec<usize>,
    pub logistic_samples: usize,
    pub mus: Vec<f64>,
    pub steps: usize,
    /// Step size as a multiple of `1/L`.
    pub alpha_scale: f64,
    pub friction: crate::optim::FrictionKind,
    pub mode: FrictionMode,
    pub seed: u64,
    /// Keep every `trace_stride`-th step (plus the last) in written traces.
    pub trace_stride: usize,
    /// Run even when the step size exceeds `1/L`.
    pub force_hypothesis_violation: bool,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        Self {
            quadratic_dims: vec![1, 2, 10],
            quadratic_condition: 10.0,
            logistic_dims: vec![2, 10],
            logistic_samples: 200,
            mus: vec![0.0, 0.5, 1.0, 5.0],
            steps: 100_000,
            alpha_scale: 1.0,
            friction: crate::optim::FrictionKind::LogisticBell,
            mode: FrictionMode::Elementwise,
            seed: 7,
            trace_stride: 100,
            force_hypothesis_violation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub problem: String,
    pub mu: f64,
    pub alpha: f64,
    pub smoothness: f64,
    pub steps: usize,
    pub forced: bool,
    pub descent: DescentCheck,
    pub bound: BoundCheck,
    pub comparison: SgdComparison,
}

/// The problems of the suite, generated deterministically from `settings.seed`.
pub fn suite_problems(settings: &ConvergenceSettings) -> Result<Vec<ConvexProblem>> {
    let base = Prng::new(settings.seed);
    let mut problems = Vec::new();
    for (i, &d) in settings.quadratic_dims.iter().enumerate() {
        problems.push(ConvexProblem::random_quadratic(
            d,
            settings.quadratic_condition,
            &mut base.derive(100 + i as u64),
        )?);
    }
    for (i, &d) in settings.logistic_dims.iter().enumerate() {
        problems.push(ConvexProblem::random_logistic(
            settings.logistic_samples,
            d,
            &mut base.derive(200 + i as u64),
        )?);
    }
    Ok(problems)
}

/// Runs every problem at every μ, reporting to `on_trace` as traces finish.
pub fn run_convergence_suite(
    settings: &ConvergenceSettings,
    on_trace: &mut dyn FnMut(&RegretTrace) -> Result<()>,
) -> Result<Vec<ConvergenceResult>> {
    if !(settings.alpha_scale > 0.0) || !settings.alpha_scale.is_finite() {
        return Err(Error::Argument("alpha_scale must be positive".into()));
    }
    if settings.steps == 0 || settings.mus.is_empty() {
        return Err(Error::Argument("the suite needs at least one step and one μ".into()));
    }
    let base = Prng::new(settings.seed);
    let mut out = Vec::new();
    for (p, problem) in suite_problems(settings)?.iter().enumerate() {
        let mut rng = base.derive(300 + p as u64);
        let start = (0..problem.dim()).map(|_| rng.uniform(-1.0, 1.0)).collect::<Result<Vec<_>>>()?;
        for &mu in &settings.mus {
            let cfg = ConvexRunConfig {
                alpha: settings.alpha_scale / problem.smoothness(),
                friction: FrictionFunction::new(settings.friction, mu)?,
                mode: settings.mode,
                steps: settings.steps,
                start: start.clone(),
                force: settings.force_hypothesis_violation,
            };
            let (wf, _, comparison) = compare_to_sgd(problem, &cfg)?;
            on_trace(&wf)?;
            out.push(ConvergenceResult {
                problem: problem.name.clone(),
                mu,
                alpha: cfg.alpha,
                smoothness: problem.smoothness(),
                steps: settings.steps,
                forced: wf.forced,
                descent: check_descent(&wf),
                bound: check_regret_bound(&wf),
                comparison,
            });
        }
    }
    Ok(out)
}
