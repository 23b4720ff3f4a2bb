//! Accuracy matrices, average accuracy and relative resource costs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower-triangular matrix of test accuracies: `rows[i][j]` is the accuracy
/// on task `j` after training on task `i` (both 0-based, `j <= i`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub task_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(task_names: Vec<String>) -> Self {
        Self {
            task_names,
            rows: Vec::new(),
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.task_names.len()
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let expected = self.rows.len() + 1;
        if row.len() != expected || expected > self.num_tasks() {
            return Err(Error::shape(
                "AccuracyMatrix::push_row",
                format!("row {} has {} entries, expected {expected}", self.rows.len(), row.len()),
            ));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.num_tasks()
    }

    pub fn get(&self, after_task: usize, task: usize) -> Option<f64> {
        self.rows.get(after_task).and_then(|r| r.get(task)).copied()
    }

    /// Average accuracy over the tasks seen so far, after task `after_task`.
    pub fn average_after(&self, after_task: usize) -> Result<f64> {
        let row = self
            .rows
            .get(after_task)
            .ok_or_else(|| Error::Index(format!("no accuracy row after task {}", after_task + 1)))?;
        average_accuracy(row)
    }

    /// Average accuracy in the final row.
    pub fn final_average(&self) -> Result<f64> {
        match self.rows.len() {
            0 => Err(Error::Argument("empty accuracy matrix".into())),
            n => self.average_after(n - 1),
        }
    }

    /// Entrywise mean of matrices with identical shape.
    pub fn mean(matrices: &[AccuracyMatrix]) -> Result<AccuracyMatrix> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::Argument("mean of zero accuracy matrices".into()))?;
        for m in matrices {
            if m.rows.len() != first.rows.len() || m.task_names != first.task_names {
                return Err(Error::shape("AccuracyMatrix::mean", "matrices differ in shape"));
            }
        }
        let n = matrices.len() as f64;
        let rows = (0..first.rows.len())
            .map(|i| {
                (0..=i)
                    .map(|j| matrices.iter().map(|m| m.rows[i][j]).sum::<f64>() / n)
                    .collect()
            })
            .collect();
        Ok(AccuracyMatrix {
            task_names: first.task_names.clone(),
            rows,
        })
    }
}

/// `(1/n) Σ a_k` over the accuracies of the tasks seen so far.
pub fn average_accuracy(accuracies: &[f64]) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(Error::Argument("average of zero accuracies".into()));
    }
    if let Some(a) = accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::Argument(format!("accuracy {a} outside [0, 1]")));
    }
    Ok(accuracies.iter().sum::<f64>() / accuracies.len() as f64)
}

/// Measured cost of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCost {
    pub method: String,
    pub wall_time_seconds: f64,
    /// Peak number of persistent `f64` slots: parameters, optimizer state and
    /// any stored anchors or importance weights.
    pub memory_units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceEntry {
    pub method: String,
    pub wall_time_seconds: f64,
    pub memory_units: usize,
    pub relative_time: Option<f64>,
    pub relative_memory: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub entries: Vec<ResourceEntry>,
    pub warning: Option<String>,
}

/// Normalizes time and memory to the most expensive method (which gets 1).
/// A single method is reported with absolute values only.
pub fn resource_report(costs: &[MethodCost]) -> Result<ResourceReport> {
    if costs.is_empty() {
        return Err(Error::Argument("resource report needs at least one method".into()));
    }
    for c in costs {
        if !(c.wall_time_seconds >= 0.0) || !c.wall_time_seconds.is_finite() {
            return Err(Error::Argument(format!(
                "{}: invalid wall time {}",
                c.method, c.wall_time_seconds
            )));
        }
    }
    if costs.len() == 1 {
        let c = &costs[0];
        return Ok(ResourceReport {
            entries: vec![ResourceEntry {
                method: c.method.clone(),
                wall_time_seconds: c.wall_time_seconds,
                memory_units: c.memory_units,
                relative_time: None,
                relative_memory: None,
            }],
            warning: Some("only one method measured; relative costs need at least two".into()),
        });
    }
    let max_time = costs.iter().map(|c| c.wall_time_seconds).fold(0.0, f64::max);
    let max_mem = costs.iter().map(|c| c.memory_units).max().unwrap_or(0);
    let ratio = |v: f64, max: f64| if max > 0.0 { Some(v / max) } else { None };
    let mut warning = None;
    if max_time == 0.0 {
        warning = Some("no wall time was recorded; relative time omitted".into());
    }
    Ok(ResourceReport {
        entries: costs
            .iter()
            .map(|c| ResourceEntry {
                method: c.method.clone(),
                wall_time_seconds: c.wall_time_seconds,
                memory_units: c.memory_units,
                relative_time: ratio(c.wall_time_seconds, max_time),
                relative_memory: ratio(c.memory_units as f64, max_mem as f64),
            })
            .collect(),
        warning,
    })
}

/// Published relative costs of related methods, normalized the same way
/// (most expensive method = 1). Shown next to measured values for context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceCost {
    pub method: &'static str,
    pub relative_time: f64,
    pub relative_memory: f64,
}

pub const REFERENCE_RELATIVE_COSTS: [ReferenceCost; 4] = [
    ReferenceCost {
        method: "weight_friction",
        relative_time: 1.0 / 2.16,
        relative_memory: 1.0 / 35.71,
    },
    ReferenceCost {
        method: "ewc",
        relative_time: 1.29 / 2.16,
        relative_memory: 3.04 / 35.71,
    },
    ReferenceCost {
        method: "pnn",
        relative_time: 1.98 / 2.16,
        relative_memory: 1.0,
    },
    ReferenceCost {
        method: "a-gem",
        relative_time: 1.0,
        relative_memory: 3.57 / 35.71,
    },
];
