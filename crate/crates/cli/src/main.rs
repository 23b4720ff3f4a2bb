use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use weight_friction::config::{load_config, ExperimentConfig, Overrides};
use weight_friction::error::{Error, ErrorCategory, Result};
use weight_friction::experiment::{run_convergence, run_experiment, RunScope};
use weight_friction::report::{build_report, write_long_csv};

/// Weight-friction continual-learning experiments.
///
/// Exit codes: 0 success, 1 internal or I/O failure, 2 config, usage or
/// step-size hypothesis error, 3 data error, 4 numeric failure.
#[derive(Parser)]
#[command(name = "wf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured method over the task sequence.
    Run(RunArgs),
    /// Run the weight-friction μ search only.
    Gridsearch(RunArgs),
    /// Check descent and the regret bound on convex problems.
    Convergence(RunArgs),
    /// Print comparison tables for the runs found under a directory.
    Report {
        /// Directory containing one or more finished runs.
        dir: PathBuf,
        /// Where to write report_long.csv (defaults to DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (key = value lines with [section] headers).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Start from a named preset (desk1, desk2, desk3, paper1, paper2, paper3, convex).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Comma-separated seeds, e.g. 1,2,3.
    #[arg(long, value_name = "SEEDS", value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// One μ to fix it, or a comma-separated grid to search.
    #[arg(long, value_name = "MU", value_delimiter = ',', allow_negative_numbers = true)]
    mu: Option<Vec<f64>>,
    /// Output directory (defaults to runs/<preset or setting>).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seeds trained in parallel.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Allow convex step sizes above 1/L.
    #[arg(long)]
    force_hypothesis_violation: bool,
}

impl RunArgs {
    fn load(&self, default_preset: Option<&str>) -> Result<ExperimentConfig> {
        let text = match &self.config {
            Some(path) => fs::read_to_string(path).map_err(|e| Error::Config {
                line: None,
                key: "--config".into(),
                message: format!("cannot read {}: {e}", path.display()),
            })?,
            None => String::new(),
        };
        let preset = self.preset.clone().or_else(|| {
            (self.config.is_none()).then(|| default_preset.map(str::to_string)).flatten()
        });
        if self.config.is_none() && preset.is_none() {
            return Err(Error::Config {
                line: None,
                key: "--config".into(),
                message: "give a config file with --config or a preset with --preset".into(),
            });
        }
        let overrides = Overrides {
            preset,
            seeds: self.seed_list.clone(),
            mu: self.mu.clone(),
            jobs: self.jobs,
            force_hypothesis_violation: self.force_hypothesis_violation,
        };
        load_config(&text, &overrides)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            let name = if cfg.preset.is_empty() {
                cfg.setting.as_str()
            } else {
                cfg.preset.as_str()
            };
            Path::new("runs").join(name)
        })
    }
}

fn print_report(dir: &Path) -> Result<()> {
    let report = build_report(dir)?;
    print!("{}", report.text);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.load(None)?;
            let out = args.out_dir(&cfg);
            run_experiment(&cfg, &out, RunScope::AllMethods)?;
            print_report(&out)?;
            eprintln!("results written to {}", out.display());
        }
        Command::Gridsearch(args) => {
            let cfg = args.load(None)?;
            let out = args.out_dir(&cfg);
            run_experiment(&cfg, &out, RunScope::GridOnly)?;
            print_report(&out)?;
            eprintln!("results written to {}", out.display());
        }
        Command::Convergence(args) => {
            let cfg = args.load(Some("convex"))?;
            let out = args.out_dir(&cfg);
            let summary = run_convergence(&cfg, &out)?;
            println!(
                "{:<24} {:>6} {:>10} {:>8} {:>14} {:>14} {:>12}",
                "problem", "mu", "alpha·L", "descent", "R(T)", "bound", "gap"
            );
            for r in &summary.results {
                println!(
                    "{:<24} {:>6} {:>10.4} {:>8} {:>14.6e} {:>14.6e} {:>12.3e}",
                    r.problem,
                    r.mu,
                    r.alpha * r.smoothness,
                    if r.descent.holds { "ok" } else { "FAIL" },
                    r.bound.final_regret,
                    r.bound.final_bound,
                    r.comparison.wf_final_gap
                );
            }
            println!(
                "descent {} / bound {}",
                if summary.all_descent { "holds everywhere" } else { "violated" },
                if summary.all_bounds { "holds everywhere" } else { "violated" }
            );
            eprintln!("results written to {}", out.display());
        }
        Command::Report { dir, out } => {
            let report = build_report(&dir)?;
            print!("{}", report.text);
            let out = out.unwrap_or(dir);
            fs::create_dir_all(&out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
            write_long_csv(&out.join("report_long.csv"), &report.long)?;
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Internal => 1,
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
