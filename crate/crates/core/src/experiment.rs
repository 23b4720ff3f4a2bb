//! Turning an [`ExperimentConfig`] into task sequences, runs and files.
//!
//! A run directory holds:
//!
//! | file | contents |
//! |------|----------|
//! | `config.toml` | the fully materialized config (re-runnable) |
//! | `run_log.jsonl` | one JSON record per epoch / task end / abort |
//! | `accuracy_matrix_<method>.csv` | seed-averaged test accuracies |
//! | `accuracy_per_seed.csv` | every seed's matrix in long format |
//! | `resource_report.csv` | wall time and memory proxy per method |
//! | `grid_scores.csv` | μ search scores (weight friction with tuning) |
//! | `summary.json` | everything above in one document |

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, Setting, TuningKind};
use crate::continual::{
    gridsearch_mu, resource_report, run_continual, with_mu, AccuracyMatrix, ContinualOutcome,
    ContinualRunConfig, GridScore, MethodCost, MethodTag, ResourceReport, RunRecord, TaskSequence,
    TaskSpec, Tuning,
};
use crate::convergence::{run_convergence_suite, ConvergenceResult, RegretTrace};
use crate::data::{
    load_mnist_layout, make_permuted_task, split_indices, GlyphSource, GlyphSpec, LabeledDataset,
    SplitSpec, TaskView,
};
use crate::error::{Error, Result};
use crate::nn::mlp_specs;
use crate::optim::{FrictionFunction, FrictionSettings, Method, OptimizerConfig};
use crate::rng::{fisher_yates_permutation, Prng, PRNG_ALGORITHM};

pub const SUMMARY_FORMAT: &str = "weight-friction-run";
pub const CONVERGENCE_FORMAT: &str = "weight-friction-convergence";

/// Training and test data of one image family.
struct Family {
    train: Arc<LabeledDataset>,
    test: Arc<LabeledDataset>,
}

fn glyph_family(cfg: &ExperimentConfig, which: u64) -> Result<Family> {
    let d = &cfg.data;
    let spec = GlyphSpec {
        noise: d.glyph_noise,
        ..GlyphSpec::default()
    };
    let classes = spec.num_classes;
    let base = Prng::new(d.seed).derive(10 + which);
    let source = GlyphSource::new(spec, &mut base.derive(0))?;
    let name = if which == 0 { "glyphs-a" } else { "glyphs-b" };
    let train = source.sample((d.examples_per_task / classes).max(1), name, &mut base.derive(1))?;
    let test = source.sample((d.test_examples_per_task / classes).max(1), name, &mut base.derive(2))?;
    Ok(Family {
        train: Arc::new(train),
        test: Arc::new(test),
    })
}

fn subsample(ds: LabeledDataset, n: usize, rng: &mut Prng) -> Result<LabeledDataset> {
    if n == 0 || n >= ds.len() {
        return Ok(ds);
    }
    let mut rows = fisher_yates_permutation(rng, ds.len())?;
    rows.truncate(n);
    let name = ds.name.clone();
    ds.subset(&rows, name)
}

fn idx_family(cfg: &ExperimentConfig, dir: &str, name: &str, which: u64) -> Result<Family> {
    let d = &cfg.data;
    let (train, test) = load_mnist_layout(Path::new(dir), name).map_err(|e| match e {
        Error::Io { context, source } => Error::Data(format!("{context}: {source}")),
        e => e,
    })?;
    let base = Prng::new(d.seed).derive(20 + which);
    let mut train = subsample(train, d.examples_per_task, &mut base.derive(0))?;
    let mut test = subsample(test, d.test_examples_per_task, &mut base.derive(1))?;
    train.name = name.to_string();
    test.name = name.to_string();
    Ok(Family {
        train: Arc::new(train),
        test: Arc::new(test),
    })
}

fn family(cfg: &ExperimentConfig, which: u64) -> Result<Family> {
    match cfg.data.source {
        DataSource::Glyphs => glyph_family(cfg, which),
        DataSource::Idx if which == 0 => idx_family(cfg, &cfg.data.mnist_dir, "mnist", 0),
        DataSource::Idx => idx_family(cfg, &cfg.data.fashion_dir, "fashion-mnist", 1),
    }
}

fn split_task(name: String, train: TaskView, test: TaskView, cfg: &ExperimentConfig, k: usize) -> Result<TaskSpec> {
    let (tr, va) = split_indices(
        train.len(),
        SplitSpec {
            train_fraction: cfg.data.train_fraction,
            seed: cfg.data.seed.wrapping_add(k as u64),
        },
    )?;
    if va.is_empty() {
        return Err(Error::Data(format!("task {name}: the validation split is empty")));
    }
    Ok(TaskSpec {
        name,
        validation: Some(train.with_rows(va)?),
        train: train.with_rows(tr)?,
        test,
        epochs: cfg.epochs_for(k),
    })
}

/// The task sequence described by `cfg`.
pub fn build_sequence(cfg: &ExperimentConfig) -> Result<TaskSequence> {
    let tasks = match cfg.setting {
        Setting::Setting1 | Setting::Setting2 => {
            let mut fams = vec![family(cfg, 0)?, family(cfg, 1)?];
            if cfg.setting == Setting::Setting2 {
                fams.reverse();
            }
            fams.into_iter()
                .enumerate()
                .map(|(k, f)| {
                    split_task(
                        f.train.name.clone(),
                        TaskView::new(f.train.clone()),
                        TaskView::new(f.test.clone()),
                        cfg,
                        k,
                    )
                })
                .collect::<Result<Vec<_>>>()?
        }
        Setting::Setting3 => {
            let f = family(cfg, 0)?;
            (0..cfg.data.num_tasks)
                .map(|k| {
                    let train = make_permuted_task(f.train.clone(), k as u64)?;
                    let test = make_permuted_task(f.test.clone(), k as u64)?;
                    Ok(TaskSpec {
                        name: format!("{}-p{k}", f.train.name),
                        train: TaskView::from_task(&train),
                        validation: None,
                        test: TaskView::from_task(&test),
                        epochs: cfg.epochs_for(k),
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        Setting::Convex => {
            return Err(Error::Argument("the convex setting has no task sequence".into()))
        }
    };
    Ok(TaskSequence {
        name: cfg.setting.as_str().to_string(),
        tasks,
    })
}

fn friction_optimizer(cfg: &ExperimentConfig, mu: f64) -> Result<OptimizerConfig> {
    let f = &cfg.friction;
    Ok(OptimizerConfig {
        learning_rate: cfg.train.friction_learning_rate,
        method: Method::WeightFriction(FrictionSettings {
            friction: FrictionFunction::new(f.kind, mu)?,
            apply_to_biases: f.apply_to_biases,
            mu_schedule: (!f.mu_schedule.is_empty()).then(|| f.mu_schedule.clone()),
        }),
    })
}

/// Harness configuration for one method over `sequence`.
pub fn run_config_for(
    cfg: &ExperimentConfig,
    method: MethodTag,
    sequence: &TaskSequence,
    checkpoint_dir: Option<PathBuf>,
) -> Result<ContinualRunConfig> {
    let classes = sequence
        .tasks
        .iter()
        .map(|t| t.train.num_classes())
        .max()
        .ok_or_else(|| Error::Argument("empty task sequence".into()))?;
    let input = sequence.tasks[0].train.dim();
    let adam = OptimizerConfig::adam(cfg.train.learning_rate);
    let subsequent = match method {
        MethodTag::WeightFriction => friction_optimizer(cfg, cfg.friction.mu)?,
        _ => adam.clone(),
    };
    Ok(ContinualRunConfig {
        run_id: format!("{}-{}", cfg.setting.as_str(), method.as_str()),
        method,
        sequence: sequence.clone(),
        model_spec: mlp_specs(input, &cfg.model.hidden, classes),
        first_task_optimizer: adam,
        subsequent_optimizer: subsequent,
        seeds: cfg.seeds.clone(),
        batch_size: cfg.train.batch_size,
        ewc: cfg.ewc,
        reset_head_between_tasks: cfg.train.reset_head,
        evaluate_every_epoch: cfg.train.evaluate_every_epoch,
        jobs: cfg.jobs,
        checkpoint_dir,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub tuning: Tuning,
    pub best_mu: f64,
    pub scores: Vec<GridScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: MethodTag,
    pub mu: Option<f64>,
    pub accuracy: AccuracyMatrix,
    /// Average accuracy over the tasks seen, after each task.
    pub average_after_task: Vec<f64>,
    /// Accuracy on the first task after the final task.
    pub first_task_retained: f64,
    /// Accuracy on the final task after training on it.
    pub final_task_accuracy: f64,
    pub per_seed: Vec<AccuracyMatrix>,
    pub cost: MethodCost,
    pub grid: Option<GridSummary>,
    pub warnings: Vec<String>,
}

impl MethodSummary {
    fn new(outcome: &ContinualOutcome, grid: Option<GridSummary>) -> Result<Self> {
        let m = &outcome.accuracy;
        let last = m
            .rows
            .last()
            .ok_or_else(|| Error::Argument("run produced no accuracies".into()))?;
        Ok(Self {
            method: outcome.method,
            mu: outcome.mu,
            average_after_task: (0..m.rows.len()).map(|i| m.average_after(i)).collect::<Result<_>>()?,
            first_task_retained: last[0],
            final_task_accuracy: *last.last().expect("non-empty row"),
            accuracy: m.clone(),
            per_seed: outcome.seeds.iter().map(|s| s.test.clone()).collect(),
            cost: outcome.cost.clone(),
            grid,
            warnings: outcome.seeds.iter().flat_map(|s| s.warnings.clone()).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format: String,
    pub version: u32,
    pub preset: String,
    pub setting: Setting,
    pub sequence: Vec<String>,
    pub prng_algorithm: String,
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodSummary>,
    pub resources: ResourceReport,
}

impl RunSummary {
    pub fn method(&self, m: MethodTag) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

/// Line-per-record writer for `run_log.jsonl`, flushed after every record so
/// an aborted run leaves a usable log behind.
pub struct RunLog {
    out: BufWriter<File>,
    path: PathBuf,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        Ok(Self {
            out: BufWriter::new(f),
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, r: &RunRecord) -> Result<()> {
        let line = serde_json::to_string(r)?;
        let ctx = || format!("writing {}", self.path.display());
        writeln!(self.out, "{line}").map_err(|e| Error::io(ctx(), e))?;
        self.out.flush().map_err(|e| Error::io(ctx(), e))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

fn fmt_acc(v: f64) -> String {
    format!("{v:.6}")
}

fn write_matrix_csv(path: &Path, m: &AccuracyMatrix) -> Result<()> {
    let mut w = csv_writer(path)?;
    let n = m.num_tasks();
    let mut header = vec!["after_task".to_string()];
    header.extend((1..=n).map(|j| format!("task_{j}")));
    w.write_record(&header)?;
    for (i, row) in m.rows.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend((0..n).map(|j| row.get(j).map(|&v| fmt_acc(v)).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_outputs(out: &Path, summary: &RunSummary) -> Result<()> {
    for m in &summary.methods {
        write_matrix_csv(&out.join(format!("accuracy_matrix_{}.csv", m.method.as_str())), &m.accuracy)?;
    }
    let path = out.join("accuracy_per_seed.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["method", "seed", "after_task", "task", "accuracy"])?;
    for m in &summary.methods {
        for (seed, mat) in summary.seeds.iter().zip(&m.per_seed) {
            for (i, row) in mat.rows.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    w.write_record([
                        m.method.as_str().to_string(),
                        seed.to_string(),
                        (i + 1).to_string(),
                        (j + 1).to_string(),
                        fmt_acc(v),
                    ])?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))?;

    let path = out.join("resource_report.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["method", "wall_time_seconds", "memory_units", "relative_time", "relative_memory"])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for e in &summary.resources.entries {
        w.write_record([
            e.method.clone(),
            format!("{:.6}", e.wall_time_seconds),
            e.memory_units.to_string(),
            opt(e.relative_time),
            opt(e.relative_memory),
        ])?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))?;

    if let Some(grid) = summary.methods.iter().find_map(|m| m.grid.as_ref()) {
        let path = out.join("grid_scores.csv");
        let mut w = csv_writer(&path)?;
        let mut header = vec!["mu".to_string(), "score".to_string(), "selected".to_string()];
        header.extend(summary.seeds.iter().map(|s| format!("seed_{s}")));
        w.write_record(&header)?;
        for s in &grid.scores {
            let mut rec = vec![s.mu.to_string(), fmt_acc(s.score), (s.mu == grid.best_mu).to_string()];
            rec.extend(s.per_seed.iter().map(|&v| fmt_acc(v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    let json = serde_json::to_string_pretty(summary)?;
    write_text(&out.join("summary.json"), &json)
}

/// Which methods a continual run covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunScope {
    /// Every method in the config.
    AllMethods,
    /// Only the weight-friction μ search.
    GridOnly,
}

/// Runs a continual-learning experiment and writes its artifacts into `out`.
/// The config snapshot is written first and the log is streamed, so a failed
/// run still leaves both behind.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, scope: RunScope) -> Result<RunSummary> {
    if cfg.setting == Setting::Convex {
        return Err(Error::Argument("use the convergence command for the convex setting".into()));
    }
    cfg.validate().map_err(|(key, message)| Error::Config {
        line: None,
        key,
        message,
    })?;
    create_dir(out)?;
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    let mut log = RunLog::create(&out.join("run_log.jsonl"))?;
    let sequence = build_sequence(cfg)?;

    let methods: Vec<MethodTag> = match scope {
        RunScope::AllMethods => cfg.methods.clone(),
        RunScope::GridOnly => vec![MethodTag::WeightFriction],
    };
    if scope == RunScope::GridOnly && (cfg.friction.tuning == TuningKind::None || cfg.friction.mu_grid.is_empty()) {
        return Err(Error::Config {
            line: None,
            key: "friction.tuning".into(),
            message: "the gridsearch command needs a μ grid and a tuning mode".into(),
        });
    }
    let mut summaries = Vec::new();
    for method in methods {
        let run_cfg = run_config_for(cfg, method, &sequence, None)?;
        let mut sink = |r: &RunRecord| log.write(r);
        let summary = if method == MethodTag::WeightFriction && cfg.friction.tuning != TuningKind::None {
            let tuning = match cfg.friction.tuning {
                TuningKind::CrossValidation => Tuning::CrossValidation {
                    folds: cfg.friction.folds,
                },
                _ => Tuning::Validation,
            };
            let g = gridsearch_mu(&run_cfg, &cfg.friction.mu_grid, tuning, &mut sink)?;
            MethodSummary::new(
                &g.best,
                Some(GridSummary {
                    tuning,
                    best_mu: g.best_mu,
                    scores: g.scores.clone(),
                }),
            )?
        } else {
            let run_cfg = if method == MethodTag::WeightFriction {
                let mut c = with_mu(&run_cfg, cfg.friction.mu)?;
                c.run_id = run_cfg.run_id.clone();
                c
            } else {
                run_cfg
            };
            MethodSummary::new(&run_continual(&run_cfg, &mut sink)?, None)?
        };
        summaries.push(summary);
    }
    let costs: Vec<MethodCost> = summaries.iter().map(|m| m.cost.clone()).collect();
    let summary = RunSummary {
        format: SUMMARY_FORMAT.into(),
        version: 1,
        preset: cfg.preset.clone(),
        setting: cfg.setting,
        sequence: sequence.task_names(),
        prng_algorithm: PRNG_ALGORITHM.into(),
        seeds: cfg.seeds.clone(),
        methods: summaries,
        resources: resource_report(&costs)?,
    };
    write_outputs(out, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub format: String,
    pub version: u32,
    pub prng_algorithm: String,
    pub results: Vec<ConvergenceResult>,
    pub all_descent: bool,
    pub all_bounds: bool,
}

fn trace_file_name(t: &RegretTrace) -> String {
    format!("trace_{}_mu{}.csv", t.problem, t.mu)
}

fn write_trace(path: &Path, t: &RegretTrace, stride: usize) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["step", "loss", "regret", "bound", "g_min"])?;
    for i in t.sample_indices(stride) {
        w.write_record([
            (i + 1).to_string(),
            format!("{:.17e}", t.losses[i]),
            format!("{:.17e}", t.regret[i]),
            format!("{:.17e}", t.bound_at(i)),
            format!("{:.17e}", t.g_min[i]),
        ])?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Runs the convex suite and writes traces and a summary into `out`.
pub fn run_convergence(cfg: &ExperimentConfig, out: &Path) -> Result<ConvergenceSummary> {
    create_dir(out)?;
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    let traces = out.join("traces");
    create_dir(&traces)?;
    let stride = cfg.convergence.trace_stride;
    let results = run_convergence_suite(&cfg.convergence, &mut |t| {
        write_trace(&traces.join(trace_file_name(t)), t, stride)
    })?;
    let path = out.join("convergence_summary.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "problem",
        "mu",
        "alpha",
        "smoothness",
        "steps",
        "forced",
        "descent_holds",
        "descent_violations",
        "max_increase",
        "bound_holds",
        "final_regret",
        "final_bound",
        "bound_margin",
        "final_gap",
        "sgd_regret",
        "regret_ratio",
        "identical_to_sgd",
    ])?;
    for r in &results {
        w.write_record([
            r.problem.clone(),
            r.mu.to_string(),
            format!("{:.12e}", r.alpha),
            format!("{:.12e}", r.smoothness),
            r.steps.to_string(),
            r.forced.to_string(),
            r.descent.holds.to_string(),
            r.descent.violations.to_string(),
            format!("{:.6e}", r.descent.max_increase),
            r.bound.holds.to_string(),
            format!("{:.12e}", r.bound.final_regret),
            format!("{:.12e}", r.bound.final_bound),
            format!("{:.12e}", r.bound.final_bound - r.bound.final_regret),
            format!("{:.6e}", r.comparison.wf_final_gap),
            format!("{:.12e}", r.comparison.sgd_regret),
            format!("{:.6}", r.comparison.regret_ratio),
            r.comparison.identical.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    let summary = ConvergenceSummary {
        format: CONVERGENCE_FORMAT.into(),
        version: 1,
        prng_algorithm: PRNG_ALGORITHM.into(),
        all_descent: results.iter().all(|r| r.descent.holds),
        all_bounds: results.iter().all(|r| r.bound.holds),
        results,
    };
    write_text(&out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
