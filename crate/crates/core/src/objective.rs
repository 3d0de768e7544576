//! Weighted acceleration/spacing cost of a closed-loop rollout and the
//! feasibility test for `(alpha, r, p)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{ModelParams, PlatoonState};
use crate::potential::{BoxCheck, PotentialKind, PotentialSpec};
use crate::simulator::{simulate_observed, OmegaExit, SimConfig, DEFAULT_HORIZON};

/// Objective value reported for rollouts that leave the admissible set.
pub const OMEGA_PENALTY: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    /// Weight of the squared-acceleration integral.
    pub w_accel: f64,
    /// Weight of the spacing integral.
    pub w_spacing: f64,
    /// Cap `z` on `max |V'|` over the hill window.
    pub slope_cap: f64,
    pub t0: f64,
    pub tf: f64,
    /// Acceleration scale (m/s^2) dividing each `F_i` before squaring.
    pub accel_norm: f64,
    /// Spacing scale (m) dividing each `s_i`.
    pub spacing_norm: f64,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        Self::for_model(&ModelParams::default())
    }
}

impl ObjectiveSpec {
    pub fn for_model(params: &ModelParams) -> Self {
        Self {
            w_accel: 0.5,
            w_spacing: 0.5,
            slope_cap: 4.0,
            t0: 0.0,
            tf: DEFAULT_HORIZON,
            accel_norm: 5.0,
            spacing_norm: params.cutoff,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_accel >= 0.0 && self.w_spacing >= 0.0) {
            return Err(invalid("objective.weights", "weights must be nonnegative"));
        }
        if self.w_accel == 0.0 && self.w_spacing == 0.0 {
            return Err(invalid("objective.weights", "weights cannot both be zero"));
        }
        if !(self.slope_cap > 0.0) {
            return Err(invalid("objective.slope_cap", "must be positive"));
        }
        if !(self.tf > self.t0) {
            return Err(invalid("objective.tf", "must exceed t0"));
        }
        if !(self.accel_norm > 0.0 && self.spacing_norm > 0.0) {
            return Err(invalid("objective.norms", "normalization scales must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub value: f64,
    /// Weighted acceleration integral.
    pub accel_term: f64,
    /// Weighted spacing integral.
    pub spacing_term: f64,
    pub omega_exit: Option<OmegaExit>,
}

/// Simulates `[obj.t0, obj.tf]` with the period, stride and integrator from
/// `simcfg` and integrates the cost over the recorded rows with the
/// trapezoidal rule. Under the exact hold the applied `F_i` is the
/// acceleration.
pub fn evaluate_objective(
    initial: &PlatoonState,
    params: &ModelParams,
    spec: &PotentialSpec,
    obj: &ObjectiveSpec,
    simcfg: &SimConfig,
) -> Result<ObjectiveValue> {
    obj.validate()?;
    spec.validate()?;
    let cfg = SimConfig {
        t0: obj.t0,
        tf: obj.tf,
        ..*simcfg
    };
    let start = PlatoonState {
        time: obj.t0,
        ..initial.clone()
    };

    let mut accel = 0.0;
    let mut spacing = 0.0;
    let mut prev: Option<(f64, f64, f64)> = None;
    let exit = simulate_observed(&start, params, spec, &cfg, |row| {
        if row.outside_omega {
            return;
        }
        let a: f64 = row.forces.iter().map(|f| (f / obj.accel_norm).powi(2)).sum();
        let s: f64 = row.positions.windows(2).map(|w| (w[0] - w[1]) / obj.spacing_norm).sum();
        if let Some((t, pa, ps)) = prev {
            let dt = row.time - t;
            accel += 0.5 * dt * (pa + a);
            spacing += 0.5 * dt * (ps + s);
        }
        prev = Some((row.time, a, s));
    })?;

    let accel_term = obj.w_accel * accel;
    let spacing_term = obj.w_spacing * spacing;
    let mut value = accel_term + spacing_term;
    if exit.is_some() {
        value += OMEGA_PENALTY;
    }
    Ok(ObjectiveValue {
        value,
        accel_term,
        spacing_term,
        omega_exit: exit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    #[serde(rename = "box")]
    pub box_check: BoxCheck,
    /// `max |V'|` over `[r, r + 3]`.
    pub max_hill_slope: f64,
    pub max_hill_slope_at: f64,
    pub slope_ok: bool,
}

impl FeasibilityReport {
    pub fn feasible(&self) -> bool {
        self.box_check.passes() && self.slope_ok
    }

    /// Amount by which the hill slope exceeds the cap (zero when satisfied).
    pub fn slope_violation(&self, cap: f64) -> f64 {
        (self.max_hill_slope - cap).max(0.0)
    }
}

/// Box constraints plus the slope cap. A report, never an error, except for
/// the legacy kind which has no tunable parameters.
pub fn check_feasible(spec: &PotentialSpec, obj: &ObjectiveSpec) -> Result<FeasibilityReport> {
    if spec.kind != PotentialKind::PerformanceSensitive {
        return Err(Error::Infeasible("the legacy potential has no tunable parameters".into()));
    }
    let box_check = spec.check_box();
    let (at, value) = if spec.hill_start > spec.min_gap {
        let peak = spec.max_abs_slope_on_hill()?;
        (peak.at, peak.value)
    } else {
        (spec.hill_start, f64::INFINITY)
    };
    Ok(FeasibilityReport {
        box_check,
        max_hill_slope: value,
        max_hill_slope_at: at,
        slope_ok: value <= obj.slope_cap,
    })
}
