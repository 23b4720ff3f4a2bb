use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::Method;
use crate::rng::{fisher_yates_permutation, Prng};

use super::harness::{
    map_jobs, run_continual, ContinualOutcome, ContinualRunConfig, MethodTag, RunRecord, SeedOutcome,
    SeedRun, TaskSequence,
};

const CV_STREAM: u64 = 0xc5;

/// How candidate μ values are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Tuning {
    /// Score on each task's held-out validation split.
    Validation,
    /// Split each task's training rows into folds; score on the held-out fold,
    /// then retrain on the full training rows with the winner.
    CrossValidation { folds: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub mu: f64,
    /// Mean over seeds (and folds) of the final average validation accuracy.
    pub score: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchOutcome {
    pub tuning: Tuning,
    pub best_mu: f64,
    pub scores: Vec<GridScore>,
    /// Test results for every candidate (validation tuning only).
    pub runs: Vec<ContinualOutcome>,
    /// Test results with the selected μ.
    pub best: ContinualOutcome,
}

/// Copy of `cfg` whose weight-friction optimizer uses `mu`.
pub fn with_mu(cfg: &ContinualRunConfig, mu: f64) -> Result<ContinualRunConfig> {
    let mut out = cfg.clone();
    match &mut out.subsequent_optimizer.method {
        Method::WeightFriction(s) => s.friction = s.friction.with_mu(mu)?,
        _ => {
            return Err(Error::Argument(
                "μ search needs a weight-friction optimizer after the first task".into(),
            ))
        }
    }
    out.run_id = format!("{}/mu={mu}", cfg.run_id);
    Ok(out)
}

fn normalize_grid(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Argument("μ grid is empty".into()));
    }
    if let Some(m) = grid.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
        return Err(Error::Argument(format!("μ grid value {m} must be finite and >= 0")));
    }
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    Ok(g)
}

/// Trains task 1 once per seed, then every candidate μ from that shared state.
/// Returns one outcome per candidate, in grid order.
fn sweep(
    cfg: &ContinualRunConfig,
    grid: &[f64],
    sink: &mut dyn FnMut(&RunRecord) -> Result<()>,
) -> Result<Vec<ContinualOutcome>> {
    cfg.validate()?;
    let cfgs = grid.iter().map(|&mu| with_mu(cfg, mu)).collect::<Result<Vec<_>>>()?;
    let tasks = cfg.sequence.tasks.len();
    let per_seed = map_jobs(cfg.jobs, &cfg.seeds, |&seed| {
        let mut log = Vec::new();
        let result = (|| {
            let mut base = SeedRun::new(cfg, seed)?;
            base.train_next_task(cfg, &cfg.first_task_optimizer, &mut log)?;
            cfgs.iter()
                .map(|c| {
                    let mut run = base.clone();
                    for _ in 1..tasks {
                        run.train_next_task(c, &c.subsequent_optimizer, &mut log)?;
                    }
                    Ok(run.finish())
                })
                .collect::<Result<Vec<SeedOutcome>>>()
        })();
        (log, result)
    });
    let mut by_seed = Vec::with_capacity(per_seed.len());
    let mut first_error = None;
    for (log, result) in per_seed {
        for r in &log {
            sink(r)?;
        }
        match result {
            Ok(v) => by_seed.push(v),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    cfgs.iter()
        .enumerate()
        .map(|(i, c)| {
            let seeds = by_seed.iter().map(|v| v[i].clone()).collect();
            ContinualOutcome::from_seeds(c, seeds)
        })
        .collect()
}

fn validation_scores(outcome: &ContinualOutcome) -> Result<Vec<f64>> {
    outcome
        .seeds
        .iter()
        .map(|s| {
            s.validation
                .as_ref()
                .ok_or_else(|| Error::Argument("validation splits are required for the μ search".into()))?
                .final_average()
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Highest score wins; ties go to the smaller μ.
fn select(scores: &[GridScore]) -> f64 {
    let mut best = &scores[0];
    for s in &scores[1..] {
        if s.score > best.score {
            best = s;
        }
    }
    best.mu
}

/// Sequence whose training rows exclude fold `fold`, which becomes validation.
fn fold_sequence(seq: &TaskSequence, folds: usize, fold: usize) -> Result<TaskSequence> {
    let tasks = seq
        .tasks
        .iter()
        .enumerate()
        .map(|(k, t)| {
            if t.train.len() < folds {
                return Err(Error::Data(format!(
                    "task {} has {} training rows, fewer than {folds} folds",
                    t.name,
                    t.train.len()
                )));
            }
            let perm = fisher_yates_permutation(&mut Prng::new(CV_STREAM).derive(k as u64), t.train.len())?;
            let (mut held, mut kept) = (Vec::new(), Vec::new());
            for (i, &p) in perm.iter().enumerate() {
                if i % folds == fold {
                    held.push(p)
                } else {
                    kept.push(p)
                }
            }
            let mut task = t.clone();
            task.validation = Some(t.train.with_rows(held)?);
            task.train = t.train.with_rows(kept)?;
            Ok(task)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskSequence {
        name: seq.name.clone(),
        tasks,
    })
}

/// Searches `grid` for the μ with the best final average validation accuracy.
pub fn gridsearch_mu(
    cfg: &ContinualRunConfig,
    grid: &[f64],
    tuning: Tuning,
    sink: &mut dyn FnMut(&RunRecord) -> Result<()>,
) -> Result<GridSearchOutcome> {
    if cfg.method != MethodTag::WeightFriction {
        return Err(Error::Argument("μ search applies to weight_friction runs".into()));
    }
    let grid = normalize_grid(grid)?;
    match tuning {
        Tuning::Validation => {
            if !cfg.sequence.has_validation() {
                return Err(Error::Argument(
                    "validation tuning needs a validation split for every task".into(),
                ));
            }
            let runs = sweep(cfg, &grid, sink)?;
            let scores = runs
                .iter()
                .zip(&grid)
                .map(|(r, &mu)| {
                    let per_seed = validation_scores(r)?;
                    Ok(GridScore {
                        mu,
                        score: mean(&per_seed),
                        per_seed,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let best_mu = select(&scores);
            let best = runs[grid.iter().position(|&m| m == best_mu).expect("from grid")].clone();
            Ok(GridSearchOutcome {
                tuning,
                best_mu,
                scores,
                runs,
                best,
            })
        }
        Tuning::CrossValidation { folds } => {
            if folds < 2 {
                return Err(Error::Argument(format!("cross-validation needs >= 2 folds, got {folds}")));
            }
            let mut per_seed = vec![vec![0.0; cfg.seeds.len()]; grid.len()];
            for fold in 0..folds {
                let mut fcfg = cfg.clone();
                fcfg.sequence = fold_sequence(&cfg.sequence, folds, fold)?;
                fcfg.run_id = format!("{}/fold={}", cfg.run_id, fold + 1);
                fcfg.checkpoint_dir = None;
                for (i, r) in sweep(&fcfg, &grid, sink)?.iter().enumerate() {
                    for (acc, s) in per_seed[i].iter_mut().zip(validation_scores(r)?) {
                        *acc += s / folds as f64;
                    }
                }
            }
            let scores: Vec<GridScore> = grid
                .iter()
                .zip(per_seed)
                .map(|(&mu, per_seed)| GridScore {
                    mu,
                    score: mean(&per_seed),
                    per_seed,
                })
                .collect();
            let best_mu = select(&scores);
            let mut final_cfg = with_mu(cfg, best_mu)?;
            final_cfg.run_id = cfg.run_id.clone();
            let best = run_continual(&final_cfg, sink)?;
            Ok(GridSearchOutcome {
                tuning,
                best_mu,
                scores,
                runs: Vec::new(),
                best,
            })
        }
    }
}
