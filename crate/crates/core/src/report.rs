//! Comparison tables over finished run directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::continual::{MethodTag, REFERENCE_RELATIVE_COSTS};
use crate::experiment::{RunSummary, SUMMARY_FORMAT};
use crate::error::{Error, Result};

/// A run summary together with the directory it was found in.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub summary: RunSummary,
}

fn collect_summaries(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
    let mut paths: Vec<PathBuf> = entries
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
    paths.sort();
    for p in paths {
        if p.is_dir() {
            collect_summaries(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == "summary.json") {
            found.push(p);
        }
    }
    Ok(())
}

/// Loads every continual-run summary below `dir`. Convergence summaries are
/// skipped. Finding none is a usage error.
pub fn load_runs(dir: &Path) -> Result<Vec<LoadedRun>> {
    if !dir.is_dir() {
        return Err(Error::Config {
            line: None,
            key: "report".into(),
            message: format!("{} is not a directory", dir.display()),
        });
    }
    let mut paths = Vec::new();
    collect_summaries(dir, &mut paths)?;
    let mut runs = Vec::new();
    for p in paths {
        let text = fs::read_to_string(&p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("format").and_then(|f| f.as_str()) != Some(SUMMARY_FORMAT) {
            continue;
        }
        let summary: RunSummary = serde_json::from_value(value)
            .map_err(|e| Error::Serde(format!("{}: {e}", p.display())))?;
        runs.push(LoadedRun {
            dir: p.parent().unwrap_or(dir).to_path_buf(),
            summary,
        });
    }
    if runs.is_empty() {
        return Err(Error::Config {
            line: None,
            key: "report".into(),
            message: format!("no completed runs found under {}", dir.display()),
        });
    }
    Ok(runs)
}

/// One row of the long-format CSV.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LongRow {
    pub run: String,
    pub setting: String,
    pub method: String,
    pub metric: String,
    pub after_task: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub text: String,
    pub long: Vec<LongRow>,
}

fn opt3(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

fn render_run(run: &LoadedRun, base: &Path, text: &mut String, long: &mut Vec<LongRow>) {
    let s = &run.summary;
    let label = run
        .dir
        .strip_prefix(base)
        .ok()
        .filter(|p| !p.as_os_str().is_empty())
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| ".".into());
    let setting = s.setting.as_str().to_string();
    let _ = writeln!(text, "== {label}  ({setting}: {})", s.sequence.join(" -> "));
    let _ = writeln!(text, "   prng {}, seeds {:?}", s.prng_algorithm, s.seeds);

    let n = s.sequence.len();
    let mut header = format!("   {:<16}", "method");
    for k in 1..=n {
        let _ = write!(header, " {:>8}", format!("avg@{k}"));
    }
    let has_vanilla = s.method(MethodTag::Vanilla).is_some();
    let _ = write!(header, " {:>10} {:>10}", "task1@end", "last@end");
    if has_vanilla {
        let _ = write!(header, " {:>10}", "Δ task1");
    }
    let _ = writeln!(text, "{header} {:>8}", "μ");
    let vanilla_retained = s.method(MethodTag::Vanilla).map(|v| v.first_task_retained);
    for m in &s.methods {
        let name = m.method.as_str();
        let mut line = format!("   {name:<16}");
        for (k, a) in m.average_after_task.iter().enumerate() {
            let _ = write!(line, " {a:>8.4}");
            long.push(LongRow {
                run: label.clone(),
                setting: setting.clone(),
                method: name.into(),
                metric: "average_accuracy".into(),
                after_task: Some(k + 1),
                value: *a,
            });
        }
        let _ = write!(line, " {:>10.4} {:>10.4}", m.first_task_retained, m.final_task_accuracy);
        if let Some(v) = vanilla_retained {
            let _ = write!(line, " {:>+10.4}", m.first_task_retained - v);
        }
        let _ = writeln!(line, " {:>8}", m.mu.map(|x| x.to_string()).unwrap_or_else(|| "-".into()));
        text.push_str(&line);
        for (metric, value) in [
            ("first_task_retained", m.first_task_retained),
            ("final_task_accuracy", m.final_task_accuracy),
        ] {
            long.push(LongRow {
                run: label.clone(),
                setting: setting.clone(),
                method: name.into(),
                metric: metric.into(),
                after_task: None,
                value,
            });
        }
    }
    for m in &s.methods {
        if let Some(g) = &m.grid {
            let scores: Vec<String> = g.scores.iter().map(|s| format!("{}:{:.4}", s.mu, s.score)).collect();
            let _ = writeln!(text, "   μ search ({:?}): selected {}  [{}]", g.tuning, g.best_mu, scores.join(" "));
        }
    }

    let _ = writeln!(
        text,
        "   {:<16} {:>12} {:>12} {:>10} {:>10}",
        "resources", "time (s)", "memory", "rel time", "rel mem"
    );
    for e in &s.resources.entries {
        let _ = writeln!(
            text,
            "   {:<16} {:>12.3} {:>12} {:>10} {:>10}",
            e.method,
            e.wall_time_seconds,
            e.memory_units,
            opt3(e.relative_time),
            opt3(e.relative_memory)
        );
        for (metric, value) in [("relative_time", e.relative_time), ("relative_memory", e.relative_memory)] {
            if let Some(value) = value {
                long.push(LongRow {
                    run: label.clone(),
                    setting: setting.clone(),
                    method: e.method.clone(),
                    metric: metric.into(),
                    after_task: None,
                    value,
                });
            }
        }
    }
    if let Some(w) = &s.resources.warning {
        let _ = writeln!(text, "   note: {w}");
    }
    text.push('\n');
}

/// Formats the tables for every run below `dir`.
pub fn build_report(dir: &Path) -> Result<Report> {
    let runs = load_runs(dir)?;
    let mut text = String::new();
    let mut long = Vec::new();
    for run in &runs {
        render_run(run, dir, &mut text, &mut long);
    }

    let retained: Vec<_> = runs
        .iter()
        .filter(|r| r.summary.sequence.len() == 2)
        .collect();
    if !retained.is_empty() {
        let _ = writeln!(text, "== first-task accuracy retained after the second task, by ordering");
        for r in retained {
            let row: Vec<String> = r
                .summary
                .methods
                .iter()
                .map(|m| format!("{} {:.4}", m.method.as_str(), m.first_task_retained))
                .collect();
            let _ = writeln!(text, "   {:<28} {}", r.summary.sequence.join(" -> "), row.join("  "));
        }
        text.push('\n');
    }

    let _ = writeln!(text, "== published relative costs of other methods (reference only, not measured here)");
    let _ = writeln!(text, "   {:<16} {:>10} {:>10}", "method", "rel time", "rel mem");
    for c in REFERENCE_RELATIVE_COSTS {
        let _ = writeln!(text, "   {:<16} {:>10.3} {:>10.3}", c.method, c.relative_time, c.relative_memory);
    }
    Ok(Report { text, long })
}

/// Writes the long-format table as CSV.
pub fn write_long_csv(path: &Path, rows: &[LongRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
