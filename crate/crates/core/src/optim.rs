//! Parameter update rules: plain SGD, Adam, and weight friction.
//!
//! Weight friction scales each scalar's SGD step by `g(w)`, a bell-shaped
//! factor in `(0, 1]` that equals 1 at `w = 0` and decays as `|w|` grows:
//!
//! ```text
//! w ← w − α · g(w) · ∂L/∂w
//! ```
//!
//! `g` is evaluated independently for every scalar at its pre-update value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, Mlp, ParamSet};

/// Shape of the friction factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrictionKind {
    /// `4e^{μw} / (1 + e^{μw})²`
    LogisticBell,
    /// `e^{−μw²}`
    GaussianBell,
    /// `1` everywhere (plain SGD).
    Identity,
}

impl FrictionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FrictionKind::LogisticBell => "logistic_bell",
            FrictionKind::GaussianBell => "gaussian_bell",
            FrictionKind::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "logistic_bell" => Some(FrictionKind::LogisticBell),
            "gaussian_bell" => Some(FrictionKind::GaussianBell),
            "identity" => Some(FrictionKind::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrictionFunction {
    kind: FrictionKind,
    mu: f64,
}

impl FrictionFunction {
    pub fn new(kind: FrictionKind, mu: f64) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::Argument(format!("friction spread mu must be >= 0, got {mu}")));
        }
        Ok(Self { kind, mu })
    }

    pub fn logistic(mu: f64) -> Result<Self> {
        Self::new(FrictionKind::LogisticBell, mu)
    }

    pub fn gaussian(mu: f64) -> Result<Self> {
        Self::new(FrictionKind::GaussianBell, mu)
    }

    pub fn identity() -> Self {
        Self {
            kind: FrictionKind::Identity,
            mu: 0.0,
        }
    }

    pub fn kind(&self) -> FrictionKind {
        self.kind
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        Self::new(self.kind, mu)
    }

    /// True when `g ≡ 1`, i.e. the rule reduces to SGD.
    pub fn is_trivial(&self) -> bool {
        self.kind == FrictionKind::Identity || self.mu == 0.0
    }

    /// `g(w)` for a finite `w`.
    ///
    /// The result is floored at the smallest normal `f64`, so it stays
    /// strictly positive even where the exact value underflows.
    #[inline]
    pub fn factor(&self, w: f64) -> f64 {
        if self.is_trivial() {
            return 1.0;
        }
        let g = match self.kind {
            FrictionKind::LogisticBell => {
                // 4e^x/(1+e^x)^2 == 4e^{-|x|}/(1+e^{-|x|})^2, no overflow
                let e = (-(self.mu * w).abs()).exp();
                let d = 1.0 + e;
                4.0 * e / (d * d)
            }
            FrictionKind::GaussianBell => (-self.mu * w * w).exp(),
            FrictionKind::Identity => 1.0,
        };
        if g.is_nan() {
            f64::MIN_POSITIVE
        } else {
            g.clamp(f64::MIN_POSITIVE, 1.0)
        }
    }
}

/// `g(w)`, rejecting non-finite input.
pub fn friction_factor(f: &FrictionFunction, w: f64) -> Result<f64> {
    if !w.is_finite() {
        return Err(Error::Argument(format!("friction factor of non-finite weight {w}")));
    }
    Ok(f.factor(w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrictionSettings {
    pub friction: FrictionFunction,
    pub apply_to_biases: bool,
    /// Per-epoch multiplier on μ. Epochs past the end reuse the last entry.
    pub mu_schedule: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Sgd,
    Adam(AdamParams),
    WeightFriction(FrictionSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub method: Method,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            method: Method::Sgd,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            method: Method::Adam(AdamParams::default()),
        }
    }

    pub fn weight_friction(learning_rate: f64, friction: FrictionFunction) -> Self {
        Self {
            learning_rate,
            method: Method::WeightFriction(FrictionSettings {
                friction,
                apply_to_biases: false,
                mu_schedule: None,
            }),
        }
    }

    pub fn method_name(&self) -> &'static str {
        match self.method {
            Method::Sgd => "sgd",
            Method::Adam(_) => "adam",
            Method::WeightFriction(_) => "weight_friction",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Argument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        match &self.method {
            Method::Sgd => Ok(()),
            Method::Adam(p) => {
                let ok = (0.0..1.0).contains(&p.beta1)
                    && (0.0..1.0).contains(&p.beta2)
                    && p.epsilon > 0.0;
                if ok {
                    Ok(())
                } else {
                    Err(Error::Argument(format!("invalid Adam parameters {p:?}")))
                }
            }
            Method::WeightFriction(s) => {
                FrictionFunction::new(s.friction.kind, s.friction.mu)?;
                match &s.mu_schedule {
                    Some(sched) if sched.is_empty() => {
                        Err(Error::Argument("empty mu schedule".into()))
                    }
                    Some(sched) if sched.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) => Err(
                        Error::Argument("mu schedule multipliers must be finite and >= 0".into()),
                    ),
                    _ => Ok(()),
                }
            }
        }
    }
}

/// Friction in effect during `epoch` (0-based within the task): base μ times
/// the schedule multiplier, or the base friction when no schedule is set.
/// Non-friction methods get the identity.
pub fn apply_mu_schedule(cfg: &OptimizerConfig, epoch: usize) -> FrictionFunction {
    match &cfg.method {
        Method::WeightFriction(s) => {
            let mult = s
                .mu_schedule
                .as_ref()
                .and_then(|sched| sched.get(epoch).or(sched.last()))
                .copied()
                .unwrap_or(1.0);
            FrictionFunction {
                kind: s.friction.kind,
                mu: s.friction.mu * mult,
            }
        }
        _ => FrictionFunction::identity(),
    }
}

fn check_step_inputs(model: &Mlp, grads: &Gradients, lr: f64) -> Result<()> {
    model.params().check_congruent("optimizer step", grads)?;
    grads.ensure_finite("gradient")?;
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::Argument(format!("learning rate must be positive, got {lr}")));
    }
    Ok(())
}

/// `w ← w − α·grad` for every parameter.
pub fn sgd_step(model: &mut Mlp, grads: &Gradients, lr: f64) -> Result<()> {
    check_step_inputs(model, grads, lr)?;
    model.params_mut().zip_apply(grads, |w, g, _| *w -= lr * g)?;
    model.params().ensure_finite("sgd_step")
}

/// `w ← w − α·g(w)·grad`, with `g` evaluated per scalar before the update.
/// Biases use `g = 1` unless `apply_to_biases` is set.
pub fn wf_step(
    model: &mut Mlp,
    grads: &Gradients,
    lr: f64,
    friction: &FrictionFunction,
    apply_to_biases: bool,
) -> Result<()> {
    check_step_inputs(model, grads, lr)?;
    model.params_mut().zip_apply(grads, |w, g, is_bias| {
        let factor = if is_bias && !apply_to_biases {
            1.0
        } else {
            friction.factor(*w)
        };
        *w -= lr * factor * g;
    })?;
    model.params().ensure_finite("wf_step")
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &Mlp) -> Self {
        Self {
            m: ParamSet::zeros_like(model.params()),
            v: ParamSet::zeros_like(model.params()),
            t: 0,
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.m.scalar_count() + self.v.scalar_count()
    }
}

/// One Adam step with bias-corrected moments.
pub fn adam_step(
    model: &mut Mlp,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    params: &AdamParams,
) -> Result<()> {
    check_step_inputs(model, grads, lr)?;
    model.params().check_congruent("adam_step", &state.m)?;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - params.beta1.powi(t);
    let c2 = 1.0 - params.beta2.powi(t);
    let (b1, b2, eps) = (params.beta1, params.beta2, params.epsilon);
    for (((p, g), m), v) in model
        .params_mut()
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.m.layers)
        .zip(&mut state.v.layers)
    {
        let pw = p.weights.data_mut().iter_mut().chain(p.bias.iter_mut());
        let gw = g.weights.data().iter().chain(g.bias.iter());
        let mw = m.weights.data_mut().iter_mut().chain(m.bias.iter_mut());
        let vw = v.weights.data_mut().iter_mut().chain(v.bias.iter_mut());
        for (((w, &g), m), v) in pw.zip(gw).zip(mw).zip(vw) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    model.params().ensure_finite("adam_step")
}

/// An optimizer configuration bound to its mutable state.
#[derive(Debug, Clone)]
pub struct Stepper {
    cfg: OptimizerConfig,
    adam: Option<AdamState>,
    friction: FrictionFunction,
}

impl Stepper {
    pub fn new(cfg: OptimizerConfig, model: &Mlp) -> Result<Self> {
        cfg.validate()?;
        let adam = matches!(cfg.method, Method::Adam(_)).then(|| AdamState::new(model));
        let friction = apply_mu_schedule(&cfg, 0);
        Ok(Self {
            cfg,
            adam,
            friction,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    /// Selects the scheduled μ for `epoch`; returns the friction now in force.
    pub fn begin_epoch(&mut self, epoch: usize) -> FrictionFunction {
        self.friction = apply_mu_schedule(&self.cfg, epoch);
        self.friction
    }

    /// μ currently applied, when this is a friction stepper.
    pub fn effective_mu(&self) -> Option<f64> {
        matches!(self.cfg.method, Method::WeightFriction(_)).then_some(self.friction.mu())
    }

    /// Scalars of persistent optimizer state (Adam moments); zero for SGD and
    /// weight friction.
    pub fn state_slots(&self) -> usize {
        self.adam.as_ref().map_or(0, AdamState::scalar_count)
    }

    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients) -> Result<()> {
        let lr = self.cfg.learning_rate;
        match &self.cfg.method {
            Method::Sgd => sgd_step(model, grads, lr),
            Method::Adam(p) => {
                let state = self.adam.as_mut().expect("created with the stepper");
                adam_step(model, grads, state, lr, p)
            }
            Method::WeightFriction(s) => wf_step(model, grads, lr, &self.friction, s.apply_to_biases),
        }
    }
}
