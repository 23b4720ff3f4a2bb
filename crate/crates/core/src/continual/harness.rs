use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::data::TaskView;
use crate::error::{Error, Result};
use crate::nn::{
    backward, count_correct, forward, save_checkpoint, softmax_cross_entropy, validate_specs,
    xavier_init, LayerSpec, Mlp,
};
use crate::optim::{Method, OptimizerConfig, Stepper};
use crate::rng::{fisher_yates_permutation, Prng};

use super::ewc::{ewc_estimate_fisher, ewc_penalized_gradients, EwcAnchor, EwcConfig, EwcState};
use super::metrics::{AccuracyMatrix, MethodCost};

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const FISHER_STREAM: u64 = 3;
const HEAD_STREAM: u64 = 4;
const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    Vanilla,
    WeightFriction,
    Ewc,
}

impl MethodTag {
    pub const ALL: [MethodTag; 3] = [MethodTag::Vanilla, MethodTag::WeightFriction, MethodTag::Ewc];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodTag::Vanilla => "vanilla",
            MethodTag::WeightFriction => "weight_friction",
            MethodTag::Ewc => "ewc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub name: String,
    pub train: TaskView,
    pub validation: Option<TaskView>,
    pub test: TaskView,
    pub epochs: usize,
}

#[derive(Debug, Clone)]
pub struct TaskSequence {
    pub name: String,
    pub tasks: Vec<TaskSpec>,
}

impl TaskSequence {
    pub fn task_names(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.name.clone()).collect()
    }

    pub fn has_validation(&self) -> bool {
        !self.tasks.is_empty() && self.tasks.iter().all(|t| t.validation.is_some())
    }
}

#[derive(Debug, Clone)]
pub struct ContinualRunConfig {
    pub run_id: String,
    pub method: MethodTag,
    pub sequence: TaskSequence,
    pub model_spec: Vec<LayerSpec>,
    /// Optimizer for the first task.
    pub first_task_optimizer: OptimizerConfig,
    /// Optimizer for every later task.
    pub subsequent_optimizer: OptimizerConfig,
    pub seeds: Vec<u64>,
    pub batch_size: usize,
    pub ewc: EwcConfig,
    pub reset_head_between_tasks: bool,
    pub evaluate_every_epoch: bool,
    pub jobs: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl ContinualRunConfig {
    pub fn optimizer_for(&self, task: usize) -> &OptimizerConfig {
        if task == 0 {
            &self.first_task_optimizer
        } else {
            &self.subsequent_optimizer
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_specs(&self.model_spec)?;
        self.first_task_optimizer.validate()?;
        self.subsequent_optimizer.validate()?;
        self.ewc.validate()?;
        if self.sequence.tasks.is_empty() {
            return Err(Error::Argument("task sequence is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Argument("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Argument("seed list contains duplicates".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be positive".into()));
        }
        let input = self.model_spec[0].in_dim;
        let output = self.model_spec.last().expect("validated").out_dim;
        for t in &self.sequence.tasks {
            if t.epochs == 0 {
                return Err(Error::Argument(format!("task {} has zero epochs", t.name)));
            }
            let views = [Some(&t.train), t.validation.as_ref(), Some(&t.test)];
            for v in views.into_iter().flatten() {
                if v.is_empty() {
                    return Err(Error::Data(format!("task {}: empty split of {}", t.name, v.name())));
                }
                if v.dim() != input {
                    return Err(Error::shape(
                        "task sequence",
                        format!("task {} has {} features, model expects {input}", t.name, v.dim()),
                    ));
                }
                if v.num_classes() > output {
                    return Err(Error::shape(
                        "task sequence",
                        format!("task {} has {} classes, model outputs {output}", t.name, v.num_classes()),
                    ));
                }
            }
        }
        let first_is_wf = matches!(self.first_task_optimizer.method, Method::WeightFriction(_));
        let later_is_wf = matches!(self.subsequent_optimizer.method, Method::WeightFriction(_));
        match self.method {
            MethodTag::WeightFriction if !later_is_wf => Err(Error::Argument(
                "weight_friction runs need a weight-friction optimizer after the first task".into(),
            )),
            MethodTag::Vanilla | MethodTag::Ewc if first_is_wf || later_is_wf => Err(Error::Argument(
                format!("{} runs must not use a weight-friction optimizer", self.method.as_str()),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Epoch,
    TaskEnd,
    Abort,
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub method: MethodTag,
    pub seed: u64,
    pub kind: RecordKind,
    /// 1-based task index.
    pub task: usize,
    /// 1-based epoch within the task; absent on task-end records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    pub optimizer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_accuracies: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_accuracies: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective_mu: Option<f64>,
    pub elapsed_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Fraction of `view` classified correctly.
pub fn evaluate_view(model: &Mlp, view: &TaskView) -> Result<f64> {
    if view.is_empty() {
        return Err(Error::Data(format!("{}: nothing to evaluate", view.name())));
    }
    let mut correct = 0;
    let positions: Vec<usize> = (0..view.len()).collect();
    for chunk in positions.chunks(EVAL_CHUNK) {
        let (x, y) = view.batch(chunk)?;
        correct += count_correct(model, &x, &y)?;
    }
    Ok(correct as f64 / view.len() as f64)
}

/// One shuffled pass over `view` in minibatches; returns the mean training
/// loss over examples.
pub fn train_epoch(
    model: &mut Mlp,
    stepper: &mut Stepper,
    view: &TaskView,
    batch_size: usize,
    rng: &mut Prng,
    ewc: Option<&EwcState>,
) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    let order = fisher_yates_permutation(rng, view.len())?;
    let mut loss_sum = 0.0;
    for chunk in order.chunks(batch_size) {
        let (x, y) = view.batch(chunk)?;
        let (out, cache) = forward(model, &x)?;
        let (loss, dlogits) = softmax_cross_entropy(&out, &y)?;
        let mut grads = backward(model, &cache, &dlogits)?;
        if let Some(state) = ewc.filter(|s| !s.anchors.is_empty()) {
            grads = ewc_penalized_gradients(&grads, model, state)?;
        }
        stepper.step(model, &grads)?;
        loss_sum += loss * chunk.len() as f64;
    }
    let loss = loss_sum / view.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite training loss".into()));
    }
    Ok(loss)
}

/// Training state of one seed, advanced one task at a time.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub model: Mlp,
    shuffle_rng: Prng,
    aux_rng: Prng,
    pub ewc: Option<EwcState>,
    pub peak_slots: usize,
    pub tasks_done: usize,
    pub elapsed_seconds: f64,
    pub test: AccuracyMatrix,
    pub validation: Option<AccuracyMatrix>,
    pub warnings: Vec<String>,
}

impl SeedRun {
    pub fn new(cfg: &ContinualRunConfig, seed: u64) -> Result<Self> {
        let base = Prng::new(seed);
        let model = xavier_init(&cfg.model_spec, &mut base.derive(INIT_STREAM))?;
        let names = cfg.sequence.task_names();
        Ok(Self {
            seed,
            peak_slots: model.param_count(),
            model,
            shuffle_rng: base.derive(SHUFFLE_STREAM),
            aux_rng: base.derive(FISHER_STREAM),
            ewc: (cfg.method == MethodTag::Ewc).then(|| EwcState::new(cfg.ewc.lambda)),
            tasks_done: 0,
            elapsed_seconds: 0.0,
            test: AccuracyMatrix::new(names.clone()),
            validation: cfg.sequence.has_validation().then(|| AccuracyMatrix::new(names)),
            warnings: Vec::new(),
        })
    }

    fn evaluate_seen(&self, cfg: &ContinualRunConfig, k: usize) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let tasks = &cfg.sequence.tasks[..=k];
        let test = tasks
            .iter()
            .map(|t| evaluate_view(&self.model, &t.test))
            .collect::<Result<Vec<_>>>()?;
        let validation = if self.validation.is_some() {
            Some(
                tasks
                    .iter()
                    .map(|t| evaluate_view(&self.model, t.validation.as_ref().expect("checked")))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok((test, validation))
    }

    /// Trains the next task with `optimizer`, appending log records to `log`.
    pub fn train_next_task(
        &mut self,
        cfg: &ContinualRunConfig,
        optimizer: &OptimizerConfig,
        log: &mut Vec<RunRecord>,
    ) -> Result<()> {
        let k = self.tasks_done;
        let task = cfg
            .sequence
            .tasks
            .get(k)
            .ok_or_else(|| Error::Argument(format!("no task {} in the sequence", k + 1)))?;
        let clock = Stopwatch::start();
        let started = self.elapsed_seconds;
        let seed = self.seed;
        let record = |kind, epoch, extra: &dyn Fn(&mut RunRecord)| {
            let mut r = RunRecord {
                run_id: cfg.run_id.clone(),
                method: cfg.method,
                seed,
                kind,
                task: k + 1,
                epoch,
                optimizer: optimizer.method_name().to_string(),
                train_loss: None,
                test_accuracies: None,
                validation_accuracies: None,
                effective_mu: None,
                elapsed_seconds: started + clock.elapsed_seconds(),
                message: None,
            };
            extra(&mut r);
            r
        };

        if k > 0 && cfg.reset_head_between_tasks {
            let mut rng = Prng::new(self.seed).derive(HEAD_STREAM + k as u64);
            self.model.reset_output_layer(&mut rng);
        }
        let mut stepper = Stepper::new(optimizer.clone(), &self.model)?;
        let ewc_slots = self.ewc.as_ref().map_or(0, EwcState::scalar_count);
        self.peak_slots = self
            .peak_slots
            .max(self.model.param_count() + stepper.state_slots() + ewc_slots);

        for epoch in 0..task.epochs {
            stepper.begin_epoch(epoch);
            let result = train_epoch(
                &mut self.model,
                &mut stepper,
                &task.train,
                cfg.batch_size,
                &mut self.shuffle_rng,
                self.ewc.as_ref(),
            );
            let loss = match result {
                Ok(loss) => loss,
                Err(e) => {
                    let message = format!("seed {}, task {}, epoch {}: {e}", self.seed, k + 1, epoch + 1);
                    log.push(record(RecordKind::Abort, Some(epoch + 1), &|r| {
                        r.message = Some(message.clone())
                    }));
                    self.elapsed_seconds = started + clock.elapsed_seconds();
                    return Err(match e {
                        Error::Numeric(_) => Error::Numeric(message),
                        other => other,
                    });
                }
            };
            let accs = if cfg.evaluate_every_epoch {
                Some(self.evaluate_seen(cfg, k)?)
            } else {
                None
            };
            let mu = stepper.effective_mu();
            log.push(record(RecordKind::Epoch, Some(epoch + 1), &|r| {
                r.train_loss = Some(loss);
                r.effective_mu = mu;
                if let Some((t, v)) = &accs {
                    r.test_accuracies = Some(t.clone());
                    r.validation_accuracies = v.clone();
                }
            }));
        }

        let (test, validation) = self.evaluate_seen(cfg, k)?;
        self.test.push_row(test.clone())?;
        if let (Some(m), Some(v)) = (self.validation.as_mut(), validation.clone()) {
            m.push_row(v)?;
        }
        let mu = stepper.effective_mu();
        log.push(record(RecordKind::TaskEnd, None, &|r| {
            r.test_accuracies = Some(test.clone());
            r.validation_accuracies = validation.clone();
            r.effective_mu = mu;
        }));

        let more_tasks = k + 1 < cfg.sequence.tasks.len();
        if let (Some(state), true) = (self.ewc.as_mut(), more_tasks) {
            let (fisher, warning) =
                ewc_estimate_fisher(&self.model, &task.train, cfg.ewc.fisher_samples, &mut self.aux_rng)?;
            if let Some(w) = warning {
                self.warnings.push(w);
            }
            state.anchors.push(EwcAnchor {
                params: self.model.params().clone(),
                fisher,
            });
            self.peak_slots = self.peak_slots.max(
                self.model.param_count() + stepper.state_slots() + state.scalar_count(),
            );
        }
        self.tasks_done += 1;
        self.elapsed_seconds = started + clock.elapsed_seconds();
        Ok(())
    }

    pub fn finish(self) -> SeedOutcome {
        SeedOutcome {
            seed: self.seed,
            test: self.test,
            validation: self.validation,
            wall_time_seconds: self.elapsed_seconds,
            peak_slots: self.peak_slots,
            warnings: self.warnings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub test: AccuracyMatrix,
    pub validation: Option<AccuracyMatrix>,
    pub wall_time_seconds: f64,
    pub peak_slots: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinualOutcome {
    pub run_id: String,
    pub method: MethodTag,
    /// Base μ of the weight-friction optimizer, when used.
    pub mu: Option<f64>,
    pub seeds: Vec<SeedOutcome>,
    /// Seed-averaged test accuracies.
    pub accuracy: AccuracyMatrix,
    pub validation: Option<AccuracyMatrix>,
    /// Mean wall time per seed and peak memory.
    pub cost: MethodCost,
}

impl ContinualOutcome {
    pub fn from_seeds(cfg: &ContinualRunConfig, seeds: Vec<SeedOutcome>) -> Result<Self> {
        let tests: Vec<AccuracyMatrix> = seeds.iter().map(|s| s.test.clone()).collect();
        let accuracy = AccuracyMatrix::mean(&tests)?;
        let validation = seeds
            .iter()
            .map(|s| s.validation.clone())
            .collect::<Option<Vec<_>>>()
            .map(|v| AccuracyMatrix::mean(&v))
            .transpose()?;
        let wall = seeds.iter().map(|s| s.wall_time_seconds).sum::<f64>() / seeds.len() as f64;
        let memory = seeds.iter().map(|s| s.peak_slots).max().unwrap_or(0);
        let mu = match &cfg.subsequent_optimizer.method {
            Method::WeightFriction(s) => Some(s.friction.mu()),
            _ => None,
        };
        Ok(Self {
            run_id: cfg.run_id.clone(),
            method: cfg.method,
            mu,
            seeds,
            accuracy,
            validation,
            cost: MethodCost {
                method: cfg.method.as_str().to_string(),
                wall_time_seconds: wall,
                memory_units: memory,
            },
        })
    }
}

fn run_seed(cfg: &ContinualRunConfig, seed: u64) -> (Vec<RunRecord>, Result<SeedOutcome>) {
    let mut log = Vec::new();
    let result = (|| {
        let mut run = SeedRun::new(cfg, seed)?;
        for k in 0..cfg.sequence.tasks.len() {
            run.train_next_task(cfg, cfg.optimizer_for(k), &mut log)?;
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            let path = dir.join(format!("model_{}_seed{seed}.json", cfg.method.as_str()));
            save_checkpoint(&run.model, seed, &path)?;
        }
        Ok(run.finish())
    })();
    (log, result)
}

/// Maps `f` over `items`, on up to `jobs` threads when parallelism is built in.
/// Results keep the input order.
pub(crate) fn map_jobs<T, R, F>(jobs: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if jobs > 1 && items.len() > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
    }
    let _ = jobs;
    items.iter().map(f).collect()
}

/// Trains every seed through the whole task sequence. Log records are passed
/// to `sink` in seed order. A seed that fails is reported after all seeds
/// have finished and their records have been written.
pub fn run_continual(
    cfg: &ContinualRunConfig,
    sink: &mut dyn FnMut(&RunRecord) -> Result<()>,
) -> Result<ContinualOutcome> {
    cfg.validate()?;
    let results = map_jobs(cfg.jobs, &cfg.seeds, |&seed| run_seed(cfg, seed));
    let mut seeds = Vec::with_capacity(results.len());
    let mut first_error = None;
    for (log, result) in results {
        for r in &log {
            sink(r)?;
        }
        match result {
            Ok(s) => seeds.push(s),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    ContinualOutcome::from_seeds(cfg, seeds)
}
