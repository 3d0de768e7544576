//! Road and controller constants, platoon states and the decentralized
//! feedback law.
//!
//! Vehicles are indexed from the front: vehicle 1 leads and spacing `s_i` is
//! the gap `x_{i-1} - x_i` for `i = 2..n`. Internally everything is stored in
//! 0-based vectors; `spacings()[j]` is `s_{j+2}`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, OmegaViolation, Result};
use crate::potential::PotentialSpec;

/// Physical and controller constants shared by every vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Minimum allowable inter-vehicle distance `L` (m).
    pub min_gap: f64,
    /// Distance `lambda` beyond which the potential exerts no force (m).
    pub cutoff: f64,
    /// Desired cruising speed `v*` (m/s).
    pub cruise_speed: f64,
    /// Speed limit `v_max` (m/s).
    pub speed_limit: f64,
    /// Smoothing width of the ramp `f`.
    pub epsilon: f64,
    /// Base gain `mu` (1/s).
    pub mu: f64,
    /// Number of vehicles.
    pub vehicles: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            min_gap: 5.0,
            cutoff: 20.0,
            cruise_speed: 30.0,
            speed_limit: 35.0,
            epsilon: 0.2,
            mu: 0.5,
            vehicles: 7,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.min_gap,
            self.cutoff,
            self.cruise_speed,
            self.speed_limit,
            self.epsilon,
            self.mu,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("model", "all constants must be finite"));
        }
        if !(self.min_gap > 0.0 && self.min_gap < self.cutoff) {
            return Err(invalid("model.cutoff", "require 0 < min_gap < cutoff"));
        }
        if !(self.cruise_speed > 0.0 && self.cruise_speed < self.speed_limit) {
            return Err(invalid(
                "model.cruise_speed",
                "require 0 < cruise_speed < speed_limit",
            ));
        }
        if self.epsilon <= 0.0 {
            return Err(invalid("model.epsilon", "must be positive"));
        }
        if self.mu <= 0.0 {
            return Err(invalid("model.mu", "must be positive"));
        }
        if self.vehicles < 2 {
            return Err(invalid("model.vehicles", "need at least two vehicles"));
        }
        Ok(())
    }
}

/// Positions and speeds of the whole platoon at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoonState {
    pub time: f64,
    pub positions: Vec<f64>,
    pub speeds: Vec<f64>,
}

impl PlatoonState {
    pub fn new(time: f64, positions: Vec<f64>, speeds: Vec<f64>) -> Result<Self> {
        if positions.len() != speeds.len() {
            return Err(Error::Dimension {
                expected: positions.len(),
                actual: speeds.len(),
            });
        }
        if positions.len() < 2 {
            return Err(invalid("state", "need at least two vehicles"));
        }
        Ok(Self {
            time,
            positions,
            speeds,
        })
    }

    /// Builds a state from the gaps `s_2..s_n` with the last vehicle at `x = 0`.
    pub fn from_spacings(time: f64, spacings: &[f64], speeds: Vec<f64>) -> Result<Self> {
        if spacings.len() + 1 != speeds.len() {
            return Err(Error::Dimension {
                expected: speeds.len().saturating_sub(1),
                actual: spacings.len(),
            });
        }
        let n = speeds.len();
        let mut positions = vec![0.0; n];
        for j in (0..n - 1).rev() {
            positions[j] = positions[j + 1] + spacings[j];
        }
        Self::new(time, positions, speeds)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Gaps `s_2..s_n`.
    pub fn spacings(&self) -> Vec<f64> {
        self.positions.windows(2).map(|w| w[0] - w[1]).collect()
    }

    /// Membership in the closed admissible set: every gap above `L`, every
    /// speed in `[0, v_max]`.
    pub fn check_omega(&self, params: &ModelParams) -> std::result::Result<(), OmegaViolation> {
        for (j, w) in self.positions.windows(2).enumerate() {
            let s = w[0] - w[1];
            if !(s > params.min_gap) {
                return Err(OmegaViolation::Spacing {
                    index: j + 2,
                    value: s,
                    min_gap: params.min_gap,
                });
            }
        }
        for (j, &v) in self.speeds.iter().enumerate() {
            if !(0.0..=params.speed_limit).contains(&v) {
                return Err(OmegaViolation::Speed {
                    index: j + 1,
                    value: v,
                    limit: params.speed_limit,
                });
            }
        }
        Ok(())
    }

    pub fn in_omega(&self, params: &ModelParams) -> bool {
        self.check_omega(params).is_ok()
    }

    /// Same gaps as [`check_omega`](Self::check_omega) but with open speed
    /// bounds `(0, v_max)`, the form used by the sampling-period certificate.
    pub fn in_open_omega(&self, params: &ModelParams) -> bool {
        self.in_omega(params)
            && self
                .speeds
                .iter()
                .all(|&v| v > 0.0 && v < params.speed_limit)
    }
}

/// Feedback accelerations and the state-dependent gains that produced them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForceVector {
    pub forces: Vec<f64>,
    pub gains: Vec<f64>,
}

impl ForceVector {
    pub fn zeros(n: usize) -> Self {
        Self {
            forces: vec![0.0; n],
            gains: vec![0.0; n],
        }
    }

    pub fn max_abs_force(&self) -> f64 {
        self.forces.iter().fold(0.0_f64, |m, f| m.max(f.abs()))
    }
}

/// The C^1 ramp `f` used inside the gain function.
pub fn f_smooth(x: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", "must be positive"));
    }
    Ok(smooth_ramp(x, epsilon))
}

#[inline]
pub(crate) fn smooth_ramp(x: f64, epsilon: f64) -> f64 {
    if x <= -epsilon {
        0.0
    } else if x < 0.0 {
        (x + epsilon) * (x + epsilon) / (2.0 * epsilon)
    } else {
        (epsilon * epsilon + 2.0 * epsilon * x) / (2.0 * epsilon)
    }
}

/// Nonnegative gain correction `g`.
pub fn g_gain(x: f64, params: &ModelParams) -> f64 {
    let vs = params.cruise_speed;
    let vm = params.speed_limit;
    vm * smooth_ramp(x, params.epsilon) / (vs * (vm - vs)) - x / vs
}

/// Decentralized feedback accelerations for every vehicle.
///
/// Fails with [`Error::OutsideOmega`] naming the violated bound when the state
/// is not admissible.
pub fn feedback_forces(
    state: &PlatoonState,
    params: &ModelParams,
    potential: &PotentialSpec,
) -> Result<ForceVector> {
    state.check_omega(params).map_err(Error::OutsideOmega)?;
    let mut out = ForceVector::zeros(state.len());
    let mut slopes = vec![0.0; state.len() - 1];
    forces_into(&state.positions, &state.speeds, params, potential, &mut slopes, &mut out);
    Ok(out)
}

/// Allocation-free force evaluation. Assumes every gap exceeds `L`; the
/// potential slope is not defined otherwise.
pub(crate) fn forces_into(
    positions: &[f64],
    speeds: &[f64],
    params: &ModelParams,
    potential: &PotentialSpec,
    slopes: &mut [f64],
    out: &mut ForceVector,
) {
    let n = positions.len();
    for j in 0..n - 1 {
        slopes[j] = potential.slope_unchecked(positions[j] - positions[j + 1]);
    }
    for i in 0..n {
        // +V'(s_i) from the gap ahead, -V'(s_{i+1}) from the gap behind.
        let front = if i > 0 { slopes[i - 1] } else { 0.0 };
        let rear = if i + 1 < n { slopes[i] } else { 0.0 };
        let push = front - rear;
        let k = params.mu + g_gain(push, params);
        out.gains[i] = k;
        out.forces[i] = -k * (speeds[i] - params.cruise_speed) + push;
    }
}
