use std::path::Path;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PlatoonState;
use crate::objective::{FeasibilityReport, ObjectiveSpec};
use crate::optimizer::OptimizationResult;
use crate::potential::PotentialSpec;
use crate::simulator::{OmegaExit, SafetyCertificate, Trajectory};

pub const REPORT_VERSION: u32 = 1;

/// Points per plotted series; longer trajectories are decimated.
const PLOT_POINTS: usize = 1500;

/// `t, x_1..x_n, v_1..v_n, s_2..s_n, F_1..F_n, k_1..k_n`.
pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("x_{i}")));
    h.extend((1..=n).map(|i| format!("v_{i}")));
    h.extend((2..=n).map(|i| format!("s_{i}")));
    h.extend((1..=n).map(|i| format!("F_{i}")));
    h.extend((1..=n).map(|i| format!("k_{i}")));
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub version: u32,
    pub rows: usize,
    /// False when the run stopped at an admissible-set exit; the last CSV row
    /// is then the offending state with NaN forces and gains.
    pub completed: bool,
    pub omega_exit: Option<OmegaExit>,
    pub potential: PotentialSpec,
}

/// Writes `trajectory.csv` and `trajectory.meta.json` into `dir`.
pub fn write_trajectory(dir: &Path, traj: &Trajectory, potential: &PotentialSpec) -> Result<()> {
    let n = traj.rows.first().map_or(0, |r| r.positions.len());
    let mut w = csv::Writer::from_path(dir.join("trajectory.csv"))?;
    w.write_record(trajectory_header(n))?;
    for row in &traj.rows {
        let fields = std::iter::once(row.time)
            .chain(row.positions.iter().copied())
            .chain(row.speeds.iter().copied())
            .chain(row.spacings.iter().copied())
            .chain(row.forces.iter().copied())
            .chain(row.gains.iter().copied());
        w.write_record(fields.map(|v| v.to_string()))?;
    }
    w.flush()?;
    write_json(
        &dir.join("trajectory.meta.json"),
        &TrajectoryMeta {
            version: REPORT_VERSION,
            rows: traj.rows.len(),
            completed: traj.completed(),
            omega_exit: traj.omega_exit,
            potential: *potential,
        },
    )
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("plot: {e}"))
}

/// One line per series over time.
fn line_plot(path: &Path, title: &str, y_desc: &str, t: &[f64], series: &[(String, Vec<f64>)]) -> Result<()> {
    let finite = series.iter().flat_map(|(_, ys)| ys.iter()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    let (t0, t1) = (t.first().copied().unwrap_or(0.0), t.last().copied().unwrap_or(1.0).max(1e-9));

    let root = SVGBackend::new(path, (960, 540)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(45)
        .y_label_area_size(70)
        .build_cartesian_2d(t0..t1, (lo - pad)..(hi + pad))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("time (s)")
        .y_desc(y_desc)
        .draw()
        .map_err(plot_err)?;
    for (k, (name, ys)) in series.iter().enumerate() {
        let color = Palette99::pick(k).to_rgba();
        chart
            .draw_series(LineSeries::new(
                t.iter().zip(ys).filter(|(_, y)| y.is_finite()).map(|(&x, &y)| (x, y)),
                color.stroke_width(2),
            ))
            .map_err(plot_err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::UpperRight)
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// `spacings.svg`, `accelerations.svg` and `speeds.svg` in `dir`.
pub fn write_plots(dir: &Path, traj: &Trajectory) -> Result<()> {
    let stride = traj.rows.len().div_ceil(PLOT_POINTS).max(1);
    let mut rows: Vec<_> = traj.rows.iter().step_by(stride).collect();
    if let Some(last) = traj.rows.last() {
        if !std::ptr::eq(*rows.last().unwrap_or(&last), last) {
            rows.push(last);
        }
    }
    let t: Vec<f64> = rows.iter().map(|r| r.time).collect();
    let n = traj.rows.first().map_or(0, |r| r.positions.len());
    let column = |name: &str, i: usize, get: &dyn Fn(&crate::simulator::TrajectoryRow) -> f64| {
        (format!("{name}{i}"), rows.iter().map(|r| get(r)).collect::<Vec<f64>>())
    };
    let spacings: Vec<_> = (2..=n).map(|i| column("s", i, &|r| r.spacings[i - 2])).collect();
    let accel: Vec<_> = (1..=n).map(|i| column("F", i, &|r| r.forces[i - 1])).collect();
    let speeds: Vec<_> = (1..=n).map(|i| column("v", i, &|r| r.speeds[i - 1])).collect();
    line_plot(&dir.join("spacings.svg"), "Inter-vehicle distances", "spacing (m)", &t, &spacings)?;
    line_plot(&dir.join("accelerations.svg"), "Accelerations", "acceleration (m/s^2)", &t, &accel)?;
    line_plot(&dir.join("speeds.svg"), "Speeds", "speed (m/s)", &t, &speeds)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub version: u32,
    pub spec: PotentialSpec,
    pub completed: bool,
    pub omega_exit: Option<OmegaExit>,
    pub final_time: f64,
    pub final_spacings: Vec<f64>,
    pub final_speeds: Vec<f64>,
    pub max_abs_force: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub version: u32,
    pub seed: u64,
    pub initial: PlatoonState,
    pub objective_spec: ObjectiveSpec,
    pub success: bool,
    pub spec: PotentialSpec,
    pub objective: f64,
    pub result: OptimizationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub version: u32,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub test_mse: Option<f64>,
    pub test_slope_violation_share: f64,
    pub gradient_check: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferReport {
    pub version: u32,
    pub initial: PlatoonState,
    pub spec: PotentialSpec,
    pub feasibility: FeasibilityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckStepReport {
    pub version: u32,
    pub period: f64,
    pub certified: bool,
    /// Largest period admitted by the spacing inequality.
    pub max_admissible_period: f64,
    /// 1-based index of the first vehicle failing either inequality.
    pub violating_vehicle: Option<usize>,
    pub certificate: SafetyCertificate,
}

/// Reads the `spec` field of an optimize or infer report.
pub fn load_spec_from_report(path: &Path) -> Result<PotentialSpec> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let spec = value
        .get("spec")
        .ok_or_else(|| Error::Format(format!("{}: no `spec` field", path.display())))?;
    let spec: PotentialSpec = serde_json::from_value(spec.clone())?;
    spec.validate()?;
    Ok(spec)
}
