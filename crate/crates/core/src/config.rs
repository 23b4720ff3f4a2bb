//! Experiment configuration: named presets, the config file format, command
//! line overrides and the echo-back snapshot.
//!
//! Config files are line-oriented `key = value` pairs grouped under
//! `[section]` headers (a subset of TOML). A file either names a `preset`
//! or a `setting`; every key it sets overrides that base. Unknown keys and
//! type mismatches are rejected with the offending line and key.
//!
//! ```text
//! preset = "desk1"
//! seeds = [1, 2, 3]
//!
//! [friction]
//! mu_grid = [1.0, 5.0, 20.0]
//! ```

use serde::{Deserialize, Serialize};

use crate::continual::{EwcConfig, MethodTag};
use crate::convergence::ConvergenceSettings;
use crate::error::{Error, Result};
use crate::optim::FrictionKind;

pub const PRESET_NAMES: [&str; 7] = ["desk1", "desk2", "desk3", "paper1", "paper2", "paper3", "convex"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Digits, then a second image family.
    Setting1,
    /// Setting 1 in the reverse order.
    Setting2,
    /// A chain of pixel-permuted copies of one image family.
    Setting3,
    /// The convex convergence suite.
    Convex,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Setting1 => "setting1",
            Setting::Setting2 => "setting2",
            Setting::Setting3 => "setting3",
            Setting::Convex => "convex",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generated 28×28 stroke images; needs no files.
    Glyphs,
    /// MNIST-layout IDX files under `mnist_dir` / `fashion_dir`.
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningKind {
    /// Use `friction.mu` as given.
    None,
    Validation,
    CrossValidation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub mnist_dir: String,
    pub fashion_dir: String,
    /// Seed for glyph generation, subsampling and the train/validation split.
    pub seed: u64,
    /// Examples drawn per task before the train/validation split
    /// (0 = every training example of an IDX source).
    pub examples_per_task: usize,
    /// Test examples per task (0 = the whole IDX test set).
    pub test_examples_per_task: usize,
    pub train_fraction: f64,
    /// Number of permuted tasks (setting3 only).
    pub num_tasks: usize,
    pub glyph_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Epochs per task; the last entry repeats for any further tasks.
    pub epochs: Vec<usize>,
    pub batch_size: usize,
    /// Adam step size: every task for vanilla and EWC, the first task for
    /// weight friction.
    pub learning_rate: f64,
    /// Step size of the weight-friction update after the first task.
    pub friction_learning_rate: f64,
    pub reset_head: bool,
    pub evaluate_every_epoch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionConfig {
    pub kind: FrictionKind,
    /// μ used when `tuning = "none"`.
    pub mu: f64,
    pub mu_grid: Vec<f64>,
    pub tuning: TuningKind,
    pub folds: usize,
    pub apply_to_biases: bool,
    /// Per-epoch μ multipliers; empty for none.
    pub mu_schedule: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Preset the config was built from ("" for none).
    pub preset: String,
    pub setting: Setting,
    pub methods: Vec<MethodTag>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub friction: FrictionConfig,
    pub ewc: EwcConfig,
    pub convergence: ConvergenceSettings,
}

fn desk1() -> ExperimentConfig {
    ExperimentConfig {
        preset: "desk1".into(),
        setting: Setting::Setting1,
        methods: MethodTag::ALL.to_vec(),
        seeds: (1..=5).collect(),
        jobs: 1,
        data: DataConfig {
            source: DataSource::Glyphs,
            mnist_dir: String::new(),
            fashion_dir: String::new(),
            seed: 2024,
            examples_per_task: 2500,
            test_examples_per_task: 1000,
            train_fraction: 0.8,
            num_tasks: 2,
            glyph_noise: 0.05,
        },
        model: ModelConfig { hidden: vec![64] },
        train: TrainConfig {
            epochs: vec![10, 20],
            batch_size: 64,
            learning_rate: 0.01,
            friction_learning_rate: 0.1,
            reset_head: false,
            evaluate_every_epoch: false,
        },
        friction: FrictionConfig {
            kind: FrictionKind::LogisticBell,
            mu: 20.0,
            mu_grid: vec![0.5, 1.0, 2.0, 5.0, 10.0, 20.0],
            tuning: TuningKind::Validation,
            folds: 3,
            apply_to_biases: false,
            mu_schedule: Vec::new(),
        },
        ewc: EwcConfig::default(),
        convergence: ConvergenceSettings::default(),
    }
}

impl ExperimentConfig {
    /// Fully materialized preset.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = desk1();
        c.preset = name.to_string();
        match name {
            "desk1" => {}
            "desk2" => c.setting = Setting::Setting2,
            "desk3" => {
                c.setting = Setting::Setting3;
                c.data.num_tasks = 5;
                c.model.hidden = vec![128, 128];
                c.train.epochs = vec![10];
                c.friction.mu = 5.0;
                c.friction.tuning = TuningKind::CrossValidation;
            }
            "paper1" | "paper2" => {
                c.setting = if name == "paper1" { Setting::Setting1 } else { Setting::Setting2 };
                c.seeds = (1..=10).collect();
                c.data.source = DataSource::Idx;
                c.data.mnist_dir = "data/mnist".into();
                c.data.fashion_dir = "data/fashion-mnist".into();
                c.data.examples_per_task = 0;
                c.data.test_examples_per_task = 0;
                c.model.hidden = vec![256, 256, 256];
                c.train.epochs = vec![50, 100];
                c.train.friction_learning_rate = 0.01;
            }
            "paper3" => {
                c.setting = Setting::Setting3;
                c.seeds = (1..=10).collect();
                c.data.source = DataSource::Idx;
                c.data.mnist_dir = "data/mnist".into();
                c.data.examples_per_task = 0;
                c.data.test_examples_per_task = 0;
                c.data.num_tasks = 10;
                c.model.hidden = vec![256, 256];
                c.train.epochs = vec![5000];
                c.train.learning_rate = 0.001;
                c.train.friction_learning_rate = 0.001;
                c.friction.mu = 5.0;
                c.friction.tuning = TuningKind::CrossValidation;
            }
            "convex" => c.setting = Setting::Convex,
            other => {
                return Err(Error::Config {
                    line: None,
                    key: "preset".into(),
                    message: format!("unknown preset `{other}` (known: {})", PRESET_NAMES.join(", ")),
                })
            }
        }
        Ok(c)
    }

    /// Base configuration for a config that names a setting but no preset.
    pub fn for_setting(setting: Setting) -> Self {
        let name = match setting {
            Setting::Setting1 => "desk1",
            Setting::Setting2 => "desk2",
            Setting::Setting3 => "desk3",
            Setting::Convex => "convex",
        };
        let mut c = Self::preset(name).expect("built-in preset");
        c.preset = String::new();
        c
    }

    /// Epoch budget of task `k` (0-based).
    pub fn epochs_for(&self, k: usize) -> usize {
        self.train
            .epochs
            .get(k)
            .or(self.train.epochs.last())
            .copied()
            .unwrap_or(1)
    }

    pub fn num_tasks(&self) -> usize {
        match self.setting {
            Setting::Setting1 | Setting::Setting2 => 2,
            Setting::Setting3 => self.data.num_tasks,
            Setting::Convex => 0,
        }
    }

    /// The snapshot written next to every run; parsing it yields this config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Checks every value; the error names the offending key.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        fn fail<T>(key: &str, message: impl Into<String>) -> std::result::Result<T, (String, String)> {
            Err((key.to_string(), message.into()))
        }
        let pos_real = |v: f64| v > 0.0 && v.is_finite();
        let nonneg_real = |v: f64| v >= 0.0 && v.is_finite();

        if self.seeds.is_empty() {
            return fail("seeds", "at least one seed is required");
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return fail("seeds", "seeds must be distinct");
        }
        if self.seeds.iter().any(|&s| s > i64::MAX as u64) {
            return fail("seeds", "seeds must fit in a signed 64-bit integer");
        }
        if self.jobs == 0 {
            return fail("jobs", "must be at least 1");
        }
        if self.setting == Setting::Convex {
            return self.validate_convergence();
        }
        if self.methods.is_empty() {
            return fail("methods", "at least one method is required");
        }
        let mut m = self.methods.clone();
        m.sort_unstable();
        m.dedup();
        if m.len() != self.methods.len() {
            return fail("methods", "methods must be distinct");
        }

        let d = &self.data;
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return fail("data.train_fraction", "must lie strictly between 0 and 1");
        }
        if !nonneg_real(d.glyph_noise) {
            return fail("data.glyph_noise", "must be finite and >= 0");
        }
        match d.source {
            DataSource::Glyphs => {
                if d.examples_per_task < 10 {
                    return fail("data.examples_per_task", "glyph tasks need at least 10 examples");
                }
                if d.test_examples_per_task < 10 {
                    return fail("data.test_examples_per_task", "glyph tasks need at least 10 test examples");
                }
            }
            DataSource::Idx => {
                if d.mnist_dir.is_empty() {
                    return fail("data.mnist_dir", "required for the idx source");
                }
                if matches!(self.setting, Setting::Setting1 | Setting::Setting2) && d.fashion_dir.is_empty() {
                    return fail("data.fashion_dir", "required for the idx source in settings 1 and 2");
                }
            }
        }
        if self.setting == Setting::Setting3 && d.num_tasks == 0 {
            return fail("data.num_tasks", "must be at least 1");
        }
        if self.model.hidden.contains(&0) {
            return fail("model.hidden", "hidden layer widths must be positive");
        }
        let t = &self.train;
        if t.epochs.is_empty() || t.epochs.contains(&0) {
            return fail("train.epochs", "needs at least one positive epoch count");
        }
        if t.batch_size == 0 {
            return fail("train.batch_size", "must be positive");
        }
        if !pos_real(t.learning_rate) {
            return fail("train.learning_rate", "must be finite and > 0");
        }
        if !pos_real(t.friction_learning_rate) {
            return fail("train.friction_learning_rate", "must be finite and > 0");
        }
        let f = &self.friction;
        if !nonneg_real(f.mu) {
            return fail("friction.mu", format!("μ must be finite and >= 0, got {}", f.mu));
        }
        if f.mu_grid.iter().any(|&v| !nonneg_real(v)) {
            return fail("friction.mu_grid", "every μ must be finite and >= 0");
        }
        if f.mu_schedule.iter().any(|&v| !nonneg_real(v)) {
            return fail("friction.mu_schedule", "multipliers must be finite and >= 0");
        }
        match f.tuning {
            TuningKind::None => {}
            _ if f.mu_grid.is_empty() => return fail("friction.mu_grid", "tuning needs a non-empty grid"),
            TuningKind::Validation if self.setting == Setting::Setting3 => {
                return fail(
                    "friction.tuning",
                    "setting3 has no validation split; use \"cross_validation\" or \"none\"",
                )
            }
            TuningKind::CrossValidation if f.folds < 2 => {
                return fail("friction.folds", "cross-validation needs at least 2 folds")
            }
            _ => {}
        }
        if !nonneg_real(self.ewc.lambda) {
            return fail("ewc.lambda", "must be finite and >= 0");
        }
        if self.ewc.fisher_samples == 0 {
            return fail("ewc.fisher_samples", "must be positive");
        }
        Ok(())
    }

    fn validate_convergence(&self) -> std::result::Result<(), (String, String)> {
        let c = &self.convergence;
        let fail = |key: &str, m: &str| Err((format!("convergence.{key}"), m.to_string()));
        if c.quadratic_dims.contains(&0) || c.logistic_dims.contains(&0) {
            return fail("quadratic_dims", "dimensions must be positive");
        }
        if c.quadratic_dims.is_empty() && c.logistic_dims.is_empty() {
            return fail("quadratic_dims", "the suite needs at least one problem");
        }
        if !(c.quadratic_condition >= 1.0) || !c.quadratic_condition.is_finite() {
            return fail("quadratic_condition", "must be finite and >= 1");
        }
        if c.logistic_samples == 0 {
            return fail("logistic_samples", "must be positive");
        }
        if c.mus.is_empty() || c.mus.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return fail("mus", "needs finite μ values >= 0");
        }
        if c.steps == 0 {
            return fail("steps", "must be positive");
        }
        if !(c.alpha_scale > 0.0) || !c.alpha_scale.is_finite() {
            return fail("alpha_scale", "must be finite and > 0");
        }
        if c.trace_stride == 0 {
            return fail("trace_stride", "must be positive");
        }
        Ok(())
    }
}

/// Values given on the command line; they win over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seeds: Option<Vec<u64>>,
    /// One value fixes μ; several values become the search grid.
    pub mu: Option<Vec<f64>>,
    pub jobs: Option<usize>,
    pub force_hypothesis_violation: bool,
}

fn config_error(text: &str, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line: locate_key(text, key),
        key: key.to_string(),
        message: message.into(),
    }
}

/// 1-based line on which `key` (a dotted path like `train.epochs`) is set.
pub fn locate_key(text: &str, key: &str) -> Option<usize> {
    let (section, name) = match key.rsplit_once('.') {
        Some((s, n)) => (s, n),
        None => ("", key),
    };
    let assigns = |line: &str, k: &str| {
        line.strip_prefix(k)
            .map(|rest| rest.trim_start().starts_with('='))
            .unwrap_or(false)
    };
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[') {
            current = h.split(']').next().unwrap_or("").trim().to_string();
            continue;
        }
        if (current == section && assigns(line, name)) || (current.is_empty() && assigns(line, key)) {
            return Some(i + 1);
        }
    }
    if !section.is_empty() {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.starts_with('[') && line.trim_matches(|c| c == '[' || c == ']').trim() == section {
                return Some(i + 1);
            }
        }
    }
    None
}

fn type_name(v: &toml::Value) -> &'static str {
    match v {
        toml::Value::String(_) => "a string",
        toml::Value::Integer(_) => "an integer",
        toml::Value::Float(_) => "a number",
        toml::Value::Boolean(_) => "a boolean",
        toml::Value::Datetime(_) => "a date",
        toml::Value::Array(_) => "a list",
        toml::Value::Table(_) => "a section",
    }
}

/// `value` converted to the type of `template`, or a description of the mismatch.
fn coerce(template: &toml::Value, value: &toml::Value) -> std::result::Result<toml::Value, String> {
    use toml::Value as V;
    match (template, value) {
        (V::Float(_), V::Integer(i)) => Ok(V::Float(*i as f64)),
        (V::Integer(_), V::Integer(i)) if *i < 0 => Err(format!("expected a non-negative integer, found {i}")),
        (V::Float(_), V::Float(_))
        | (V::Integer(_), V::Integer(_))
        | (V::String(_), V::String(_))
        | (V::Boolean(_), V::Boolean(_)) => Ok(value.clone()),
        (V::Array(t), V::Array(items)) => {
            let Some(elem) = t.first() else {
                return Ok(value.clone());
            };
            items
                .iter()
                .map(|item| coerce(elem, item).map_err(|m| format!("list element: {m}")))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(V::Array)
        }
        _ => Err(format!("expected {}, found {}", type_name(template), type_name(value))),
    }
}

fn merge(
    base: &mut toml::Table,
    template: &toml::Table,
    user: &toml::Table,
    path: &str,
    text: &str,
) -> Result<()> {
    for (k, v) in user {
        let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        let (Some(slot), Some(tmpl)) = (base.get_mut(k), template.get(k)) else {
            return Err(config_error(text, &key, "unknown key"));
        };
        match (slot, tmpl, v) {
            (toml::Value::Table(b), toml::Value::Table(t), toml::Value::Table(u)) => {
                merge(b, t, u, &key, text)?
            }
            (slot, tmpl, v) => *slot = coerce(tmpl, v).map_err(|m| config_error(text, &key, m))?,
        }
    }
    Ok(())
}

/// Value template with every list non-empty, so element types can be checked.
fn type_template() -> toml::Table {
    let mut c = desk1();
    c.friction.mu_schedule = vec![1.0];
    c.data.mnist_dir = "x".into();
    toml::Table::try_from(&c).expect("config serializes")
}

/// Resolves config text (possibly empty) plus command-line overrides into a
/// validated configuration.
pub fn load_config(text: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
    let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config {
        line: e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1),
        key: String::new(),
        message: e.message().trim().to_string(),
    })?;

    let file_preset = match user.get("preset") {
        Some(toml::Value::String(s)) => Some(s.clone()),
        Some(v) => return Err(config_error(text, "preset", format!("expected a string, found {}", type_name(v)))),
        None => None,
    };
    let base = match (&overrides.preset, &file_preset) {
        (Some(p), _) => ExperimentConfig::preset(p)?,
        (None, Some(p)) if !p.is_empty() => {
            ExperimentConfig::preset(p).map_err(|e| config_error(text, "preset", e_message(&e)))?
        }
        _ => match user.get("setting") {
            Some(v) => {
                let setting: Setting = v.clone().try_into().map_err(|_| {
                    config_error(
                        text,
                        "setting",
                        "expected one of \"setting1\", \"setting2\", \"setting3\", \"convex\"",
                    )
                })?;
                ExperimentConfig::for_setting(setting)
            }
            None => {
                return Err(Error::Config {
                    line: None,
                    key: "preset".into(),
                    message: "the config must name a preset or a setting".into(),
                })
            }
        },
    };
    let chosen_preset = base.preset.clone();
    let mut table = toml::Table::try_from(&base).map_err(|e| Error::Serde(e.to_string()))?;
    let mut user = user;
    user.remove("preset");
    merge(&mut table, &type_template(), &user, "", text)?;
    let mut cfg: ExperimentConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
        let msg = e.message().trim().to_string();
        let key = find_named_key(&msg);
        config_error(text, &key, msg)
    })?;
    cfg.preset = chosen_preset;

    if let Some(seeds) = &overrides.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(jobs) = overrides.jobs {
        cfg.jobs = jobs;
    }
    if let Some(mus) = &overrides.mu {
        match mus.as_slice() {
            [] => {}
            [mu] => {
                cfg.friction.mu = *mu;
                cfg.friction.mu_grid = vec![*mu];
                cfg.friction.tuning = TuningKind::None;
                cfg.convergence.mus = vec![*mu];
            }
            grid => {
                cfg.friction.mu_grid = grid.to_vec();
                cfg.convergence.mus = grid.to_vec();
                if cfg.friction.tuning == TuningKind::None {
                    cfg.friction.tuning = if cfg.setting == Setting::Setting3 {
                        TuningKind::CrossValidation
                    } else {
                        TuningKind::Validation
                    };
                }
            }
        }
    }
    if overrides.force_hypothesis_violation {
        cfg.convergence.force_hypothesis_violation = true;
    }
    cfg.validate().map_err(|(key, message)| {
        let from_cli = match key.as_str() {
            "seeds" => overrides.seeds.is_some(),
            "jobs" => overrides.jobs.is_some(),
            "friction.mu" | "friction.mu_grid" | "convergence.mus" => overrides.mu.is_some(),
            _ => false,
        };
        Error::Config {
            line: if from_cli { None } else { locate_key(text, &key) },
            key,
            message,
        }
    })?;
    Ok(cfg)
}

fn e_message(e: &Error) -> String {
    match e {
        Error::Config { message, .. } => message.clone(),
        other => other.to_string(),
    }
}

/// Best-effort extraction of a field name quoted in a deserializer message.
fn find_named_key(msg: &str) -> String {
    let sections = ["data", "model", "train", "friction", "ewc", "convergence"];
    let quoted: Vec<&str> = msg.split('`').skip(1).step_by(2).collect();
    for q in &quoted {
        for s in sections {
            if q.starts_with(&format!("{s}.")) {
                return q.to_string();
            }
        }
    }
    quoted.first().map(|q| q.to_string()).unwrap_or_default()
}

/// Parses config text with no command-line overrides.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    load_config(text, &Overrides::default())
}
