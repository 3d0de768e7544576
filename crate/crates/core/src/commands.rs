//! Command implementations behind the `platoon` binary. Each writes its
//! artifacts into the configured output directory and reports a [`Status`]
//! alongside the result so partial artifacts survive a failing run.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{
    load_spec_from_report, write_json, write_plots, write_trajectory, CheckStepReport, ExperimentConfig, InferReport,
    OptimizeReport, PotentialChoice, SimulateReport, TrainReport, REPORT_VERSION,
};
use crate::model::{feedback_forces, PlatoonState};
use crate::objective::check_feasible;
use crate::optimizer::{optimize_parameters, OptimizationResult};
use crate::potential::PotentialSpec;
use crate::simulator::{certify_step, simulate, Trajectory};
use crate::surrogate::{
    generate_dataset, gradient_check, predict, slope_violation_share, train, Dataset, MlpModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    SafetyViolation,
    OptimizerFailure,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::SafetyViolation => 2,
            Status::OptimizerFailure => 3,
        }
    }
}

/// 1 for validation and input errors, 2 for admissible-set violations, 3 for
/// training divergence.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::OutsideOmega(_) | Error::SpacingDomain { .. } => 2,
        Error::Diverged { .. } => 3,
        _ => 1,
    }
}

fn prepare(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    Ok(())
}

fn require(path: &Path, artifact: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Format(format!("missing {artifact}: {} not found", path.display())))
    }
}

/// Resolves the configured potential for `state`. For the optimized choice the
/// optimizer result is returned too, and may be unsuccessful.
pub fn resolve_potential(
    cfg: &ExperimentConfig,
    state: &PlatoonState,
) -> Result<(PotentialSpec, Option<OptimizationResult>)> {
    let spec = match &cfg.potential {
        PotentialChoice::Legacy => PotentialSpec::legacy(&cfg.model),
        PotentialChoice::PerformanceSensitive { alpha, r, p } => {
            PotentialSpec::performance_sensitive_checked(&cfg.model, *alpha, *r, *p)?
        }
        PotentialChoice::Optimized => {
            let res = optimize_parameters(state, &cfg.model, &cfg.objective, &cfg.sim, &cfg.optimizer)?;
            return Ok((res.best, Some(res)));
        }
        PotentialChoice::Report { path } => {
            require(path, "spec report")?;
            load_spec_from_report(path)?
        }
        PotentialChoice::Surrogate { model } => {
            require(model, "surrogate model")?;
            predict(&MlpModel::load(model)?, state)?
        }
    };
    Ok((spec, None))
}

fn optimize_report(cfg: &ExperimentConfig, initial: &PlatoonState, result: OptimizationResult) -> OptimizeReport {
    OptimizeReport {
        version: REPORT_VERSION,
        seed: cfg.optimizer.seed,
        initial: initial.clone(),
        objective_spec: cfg.objective,
        success: result.success,
        spec: result.best,
        objective: result.objective,
        result,
    }
}

pub struct SimulateOutcome {
    pub status: Status,
    pub report: Option<SimulateReport>,
    pub trajectory: Option<Trajectory>,
}

/// Writes `trajectory.csv`, its metadata, three plots and `simulate.json`.
/// An optimized potential also writes `optimize.json`; if that optimization
/// fails nothing is simulated.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<SimulateOutcome> {
    prepare(cfg)?;
    let dir = &cfg.output_dir;
    let initial = cfg.initial_state()?;
    let (spec, opt) = resolve_potential(cfg, &initial)?;
    if let Some(res) = opt {
        let success = res.success;
        write_json(&dir.join("optimize.json"), &optimize_report(cfg, &initial, res))?;
        if !success {
            return Ok(SimulateOutcome {
                status: Status::OptimizerFailure,
                report: None,
                trajectory: None,
            });
        }
    }

    let traj = simulate(&initial, &cfg.model, &spec, &cfg.sim)?;
    write_trajectory(dir, &traj, &spec)?;
    write_plots(dir, &traj)?;
    let last = traj.last().expect("a rollout records at least its initial row");
    let report = SimulateReport {
        version: REPORT_VERSION,
        spec,
        completed: traj.completed(),
        omega_exit: traj.omega_exit,
        final_time: last.time,
        final_spacings: last.spacings.clone(),
        final_speeds: last.speeds.clone(),
        max_abs_force: traj.max_abs_force(),
    };
    write_json(&dir.join("simulate.json"), &report)?;
    Ok(SimulateOutcome {
        status: if traj.completed() { Status::Ok } else { Status::SafetyViolation },
        report: Some(report),
        trajectory: Some(traj),
    })
}

/// Writes `optimize.json`, including for an unsuccessful search.
pub fn cmd_optimize(cfg: &ExperimentConfig) -> Result<(OptimizeReport, Status)> {
    prepare(cfg)?;
    let initial = cfg.initial_state()?;
    let res = optimize_parameters(&initial, &cfg.model, &cfg.objective, &cfg.sim, &cfg.optimizer)?;
    let report = optimize_report(cfg, &initial, res);
    write_json(&cfg.output_dir.join("optimize.json"), &report)?;
    let status = if report.success { Status::Ok } else { Status::OptimizerFailure };
    Ok((report, status))
}

/// Writes `dataset.csv` and `dataset.meta.json`.
pub fn cmd_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Status)> {
    prepare(cfg)?;
    let ds = generate_dataset(&cfg.dataset, &cfg.model, &cfg.objective, &cfg.sim, &cfg.optimizer)?;
    ds.save(&cfg.output_dir.join("dataset.csv"))?;
    let status = if ds.rows.is_empty() { Status::OptimizerFailure } else { Status::Ok };
    Ok((ds, status))
}

pub fn default_dataset_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("dataset.csv")
}

pub fn default_model_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("model.json")
}

/// Trains on `dataset` (default `<out>/dataset.csv`) and writes `model.json`
/// and `train.json`.
pub fn cmd_train(cfg: &ExperimentConfig, dataset: Option<&Path>) -> Result<(MlpModel, TrainReport)> {
    prepare(cfg)?;
    let path = dataset.map(Path::to_path_buf).unwrap_or_else(|| default_dataset_path(cfg));
    require(&path, "dataset")?;
    let ds = Dataset::load(&path)?;
    if ds.meta.spec.vehicles != cfg.model.vehicles {
        return Err(Error::Dimension {
            expected: cfg.model.vehicles,
            actual: ds.meta.spec.vehicles,
        });
    }
    let model = train(&ds, &cfg.train)?;
    let meta = model.training.as_ref().expect("training metadata is set by train");
    let probe = ds.rows.first().expect("training requires a nonempty dataset");
    let report = TrainReport {
        version: REPORT_VERSION,
        epochs_run: meta.epochs_run,
        best_epoch: meta.best_epoch,
        train_mse: meta.train_mse,
        val_mse: meta.val_mse,
        test_mse: meta.test_mse,
        test_slope_violation_share: slope_violation_share(&model, &ds, &cfg.objective)?,
        gradient_check: gradient_check(
            &model.network,
            &model.normalize_input(&probe.input),
            &model.normalize_target(&probe.target),
        ),
    };
    model.save(&cfg.output_dir.join("model.json"))?;
    write_json(&cfg.output_dir.join("train.json"), &report)?;
    Ok((model, report))
}

/// Predicts `(alpha, r, p)` for the configured initial condition with the
/// model at `model` (default `<out>/model.json`) and writes `infer.json`.
pub fn cmd_infer(cfg: &ExperimentConfig, model: Option<&Path>) -> Result<InferReport> {
    prepare(cfg)?;
    let path = model.map(Path::to_path_buf).unwrap_or_else(|| default_model_path(cfg));
    require(&path, "surrogate model")?;
    let mlp = MlpModel::load(&path)?;
    let initial = cfg.initial_state()?;
    let spec = predict(&mlp, &initial)?;
    let report = InferReport {
        version: REPORT_VERSION,
        initial,
        spec,
        feasibility: check_feasible(&spec, &cfg.objective)?,
    };
    write_json(&cfg.output_dir.join("infer.json"), &report)?;
    Ok(report)
}

/// Sampling-period certificates at the initial state for period `period`,
/// written to `check_step.json`.
pub fn cmd_check_step(cfg: &ExperimentConfig, period: f64) -> Result<CheckStepReport> {
    prepare(cfg)?;
    if !(period > 0.0 && period.is_finite()) {
        return Err(crate::error::invalid("period", "must be positive"));
    }
    let initial = cfg.initial_state()?;
    initial.check_omega(&cfg.model).map_err(Error::OutsideOmega)?;
    let (spec, _) = resolve_potential(cfg, &initial)?;
    let forces = feedback_forces(&initial, &cfg.model, &spec)?;
    let cert = certify_step(&initial, &forces, period, &cfg.model)?;
    let report = CheckStepReport {
        version: REPORT_VERSION,
        period,
        certified: cert.passes(),
        max_admissible_period: cert.max_admissible_period(),
        violating_vehicle: cert.first_failure().map(|c| c.vehicle),
        certificate: cert,
    };
    write_json(&cfg.output_dir.join("check_step.json"), &report)?;
    Ok(report)
}
