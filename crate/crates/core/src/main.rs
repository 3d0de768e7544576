use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use platoon::commands::{
    cmd_check_step, cmd_dataset, cmd_infer, cmd_optimize, cmd_simulate, cmd_train, exit_code, Status,
};
use platoon::io::{ExperimentConfig, PotentialChoice};
use platoon::Result;

/// Potential-based platoon control: simulation, parameter tuning and a
/// learned parameter predictor.
#[derive(Debug, Parser)]
#[command(name = "platoon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML experiment config. Applied on top of --preset when both are given.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Built-in preset: scenario1 or scenario2.
    #[arg(long, short)]
    preset: Option<String>,
    /// Top-level seed; every component seed is derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulation and objective horizon (s).
    #[arg(long)]
    horizon: Option<f64>,
    /// Sampling period T (s).
    #[arg(long)]
    step: Option<f64>,
    /// Optimizer evaluation budget.
    #[arg(long)]
    budget: Option<usize>,
    /// Field override `dotted.path=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => ExperimentConfig::preset("scenario1")?,
        };
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(h) = self.horizon {
            cfg = cfg.with_horizon(h);
        }
        if let Some(t) = self.step {
            cfg.sim.period = t;
        }
        if let Some(b) = self.budget {
            cfg.optimizer.budget = b;
        }
        for o in &self.overrides {
            cfg = cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Roll out the closed loop; writes trajectory.csv and three SVG plots.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Use the spec from an optimize or infer report.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Use the prediction of a trained model.
        #[arg(long, conflicts_with = "spec")]
        model: Option<PathBuf>,
    },
    /// Tune (alpha, r, p) for the configured initial condition.
    Optimize {
        #[command(flatten)]
        common: Common,
    },
    /// Generate the (initial condition, tuned parameters) dataset.
    Dataset {
        #[command(flatten)]
        common: Common,
        /// Number of samples.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the parameter predictor on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Predict (alpha, r, p) for the configured initial condition.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Sampling-period certificates at the initial state.
    CheckStep {
        #[command(flatten)]
        common: Common,
        /// Sampling period to certify (s); defaults to the configured period.
        #[arg(long)]
        period: Option<f64>,
    },
    /// Print the resolved configuration as TOML.
    ShowConfig {
        #[command(flatten)]
        common: Common,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Simulate { common, spec, model } => {
            let mut cfg = common.resolve()?;
            if let Some(path) = spec {
                cfg.potential = PotentialChoice::Report { path };
            } else if let Some(model) = model {
                cfg.potential = PotentialChoice::Surrogate { model };
            }
            cfg.validate()?;
            let out = cmd_simulate(&cfg)?;
            match &out.report {
                Some(r) => print_json(r)?,
                None => eprintln!("optimizer found no feasible parameters; see optimize.json"),
            }
            if let Some(exit) = out.report.as_ref().and_then(|r| r.omega_exit) {
                eprintln!("left the admissible set at t = {}: {}", exit.time, exit.violation);
            }
            Ok(out.status)
        }
        Command::Optimize { common } => {
            let (report, status) = cmd_optimize(&common.resolve()?)?;
            print_json(&serde_json::json!({
                "success": report.success,
                "alpha": report.spec.alpha,
                "r": report.spec.hill_start,
                "p": report.spec.sharpness,
                "objective": report.objective,
                "evaluations": report.result.evaluations,
            }))?;
            Ok(status)
        }
        Command::Dataset { common, count } => {
            let mut cfg = common.resolve()?;
            if let Some(c) = count {
                cfg.dataset.count = c;
            }
            let (ds, status) = cmd_dataset(&cfg)?;
            for d in &ds.meta.dropped {
                eprintln!("dropped sample {}: {}", d.index, d.reason);
            }
            println!(
                "{} rows written, {} dropped, {} headway rejections",
                ds.rows.len(),
                ds.meta.dropped.len(),
                ds.meta.rejected_draws
            );
            Ok(status)
        }
        Command::Train { common, dataset } => {
            let (_, report) = cmd_train(&common.resolve()?, dataset.as_deref())?;
            print_json(&report)?;
            Ok(Status::Ok)
        }
        Command::Infer { common, model } => {
            let report = cmd_infer(&common.resolve()?, model.as_deref())?;
            print_json(&serde_json::json!({
                "alpha": report.spec.alpha,
                "r": report.spec.hill_start,
                "p": report.spec.sharpness,
                "max_hill_slope": report.feasibility.max_hill_slope,
                "slope_ok": report.feasibility.slope_ok,
            }))?;
            Ok(Status::Ok)
        }
        Command::CheckStep { common, period } => {
            let cfg = common.resolve()?;
            let report = cmd_check_step(&cfg, period.unwrap_or(cfg.sim.period))?;
            println!("max admissible T (spacing inequality): {:.6} s", report.max_admissible_period);
            for c in &report.certificate.vehicles {
                println!(
                    "vehicle {}: T < {:.6} [{}], F = {:.6} in ({:.3}, {:.3}) [{}]",
                    c.vehicle,
                    c.spacing_bound,
                    if c.spacing_ok { "ok" } else { "fail" },
                    c.force,
                    c.force_interval.0,
                    c.force_interval.1,
                    if c.force_ok { "ok" } else { "fail" },
                );
            }
            match report.violating_vehicle {
                None => println!("T = {} s: certified", report.period),
                Some(i) => println!("T = {} s: not certified (vehicle {i})", report.period),
            }
            Ok(Status::Ok)
        }
        Command::ShowConfig { common } => {
            print!("{}", common.resolve()?.to_toml()?);
            Ok(Status::Ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(status) => ExitCode::from(status.exit_code() as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}

