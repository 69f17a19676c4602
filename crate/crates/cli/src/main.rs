use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use superdecay::runner::{self, DirectionSpec, ExperimentOutput};
use superdecay::{validation, ExperimentConfig};

/// Collective early-time decay of a driven cold atomic cloud.
#[derive(Parser)]
#[command(name = "superdecay", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (configuration, Ω) pair of a config file.
    Run(Common),
    /// Run the config over an Ω grid, ascending.
    SweepOmega {
        #[command(flatten)]
        common: Common,
        /// Smallest Ω/Γ of a log-spaced grid (replaces the config's list).
        #[arg(long, requires_all = ["omega_max", "omega_points"])]
        omega_min: Option<f64>,
        #[arg(long)]
        omega_max: Option<f64>,
        #[arg(long)]
        omega_points: Option<usize>,
        /// Explicit comma-separated Ω/Γ values.
        #[arg(long, value_delimiter = ',', conflicts_with = "omega_min")]
        omegas: Option<Vec<f64>>,
    },
    /// Run the config with detectors at the given polar angles.
    AngularScan {
        #[command(flatten)]
        common: Common,
        /// Comma-separated polar angles in radians.
        #[arg(long, value_delimiter = ',', required = true)]
        thetas: Vec<f64>,
    },
    /// Single-atom and sum-rule oracle checks.
    Validate,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (overrides `max_workers`).
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut config = runner::load_config(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        if let Some(k) = self.workers {
            if k == 0 {
                bail!("--workers must be at least 1");
            }
            config.max_workers = Some(k);
        }
        if config.is_long_running() {
            eprintln!(
                "warning: N = {} exceeds {} atoms; expect a long run",
                config.n_atoms,
                runner::LONG_RUNNING_ATOMS
            );
        }
        Ok(config)
    }
}

fn finish(output: &ExperimentOutput, dir: &Path) -> anyhow::Result<ExitCode> {
    runner::write_results(output, dir).with_context(|| format!("writing {}", dir.display()))?;
    for run in &output.runs {
        if let Err(e) = &run.outcome {
            eprintln!("run config {} (seed {}) Ω = {} failed: {e}", run.config_index, run.seed, run.rabi);
        }
    }
    println!(
        "{} runs, {} failed; results in {}",
        output.runs.len(),
        output.n_failed(),
        dir.display()
    );
    Ok(if output.all_converged() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn validate() -> anyhow::Result<ExitCode> {
    let mut checks = validation::single_atom_checks()?;
    checks.push(validation::sum_rule_check(100, 7)?);
    let mut ok = true;
    for c in &checks {
        ok &= c.passed();
        println!(
            "{} {}: error {:.2e} (tolerance {:.0e})",
            if c.passed() { "PASS" } else { "FAIL" },
            c.name,
            c.error,
            c.tolerance
        );
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run(common) => {
            let config = common.load()?;
            let output = runner::run_experiment(&config)?;
            finish(&output, &config.output_dir)
        }
        Command::SweepOmega {
            common,
            omega_min,
            omega_max,
            omega_points,
            omegas,
        } => {
            let mut config = common.load()?;
            if let (Some(min), Some(max), Some(n)) = (omega_min, omega_max, omega_points) {
                config.rabi_list = runner::log_grid(min, max, n)?;
                config.saturation_list = None;
            } else if let Some(list) = omegas {
                config.rabi_list = list;
                config.saturation_list = None;
            }
            let output = runner::sweep_omega(&config)?;
            finish(&output, &config.output_dir)
        }
        Command::AngularScan { common, thetas } => {
            let config = common.load()?;
            let dirs: Vec<DirectionSpec> = thetas.into_iter().map(DirectionSpec::Theta).collect();
            let output = runner::angular_scan(&config, &dirs)?;
            finish(&output, &config.output_dir)
        }
        Command::Validate => validate(),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
