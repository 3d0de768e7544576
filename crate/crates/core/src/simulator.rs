//! Closed-loop rollouts: the exact zero-order-hold discrete model, a
//! continuous-feedback RK4 reference, and per-step sampling-period
//! certificates.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, OmegaViolation, Result};
use crate::model::{forces_into, ForceVector, ModelParams, PlatoonState};
use crate::potential::PotentialSpec;

pub const DEFAULT_PERIOD: f64 = 0.01;
pub const DEFAULT_HORIZON: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Forces held constant over each period, state advanced in closed form.
    ExactZoh,
    /// Classical RK4 with the feedback re-evaluated at every stage.
    ReferenceRk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Sampling period `T` (s).
    pub period: f64,
    pub t0: f64,
    pub tf: f64,
    /// Record every `record_stride`-th step. The final step is always recorded.
    pub record_stride: usize,
    pub integrator: Integrator,
    /// RK4 substeps per period (reference integrator only).
    pub rk4_substeps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            period: DEFAULT_PERIOD,
            t0: 0.0,
            tf: DEFAULT_HORIZON,
            record_stride: 1,
            integrator: Integrator::ExactZoh,
            rk4_substeps: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(invalid("sim.period", "must be positive"));
        }
        if !(self.tf > self.t0) {
            return Err(invalid("sim.tf", "must exceed t0"));
        }
        if self.record_stride == 0 {
            return Err(invalid("sim.record_stride", "must be at least 1"));
        }
        if self.rk4_substeps == 0 {
            return Err(invalid("sim.rk4_substeps", "must be at least 1"));
        }
        Ok(())
    }

    /// Number of sampling periods in the horizon.
    pub fn steps(&self) -> usize {
        (((self.tf - self.t0) / self.period).round() as usize).max(1)
    }
}

/// Borrowed view of one recorded instant, handed to rollout observers.
#[derive(Debug, Clone, Copy)]
pub struct RowView<'a> {
    pub time: f64,
    pub positions: &'a [f64],
    pub speeds: &'a [f64],
    pub forces: &'a [f64],
    pub gains: &'a [f64],
    /// Set on the final row of a rollout that left the admissible set; the
    /// force and gain columns are NaN there.
    pub outside_omega: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub time: f64,
    pub positions: Vec<f64>,
    pub speeds: Vec<f64>,
    pub spacings: Vec<f64>,
    pub forces: Vec<f64>,
    pub gains: Vec<f64>,
    pub outside_omega: bool,
}

impl From<&RowView<'_>> for TrajectoryRow {
    fn from(r: &RowView<'_>) -> Self {
        Self {
            time: r.time,
            positions: r.positions.to_vec(),
            speeds: r.speeds.to_vec(),
            spacings: r.positions.windows(2).map(|w| w[0] - w[1]).collect(),
            forces: r.forces.to_vec(),
            gains: r.gains.to_vec(),
            outside_omega: r.outside_omega,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaExit {
    pub time: f64,
    #[serde(with = "violation_serde")]
    pub violation: OmegaViolation,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub omega_exit: Option<OmegaExit>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&TrajectoryRow> {
        self.rows.last()
    }

    pub fn completed(&self) -> bool {
        self.omega_exit.is_none()
    }

    /// Largest `|F_i|` over all recorded rows with finite forces.
    pub fn max_abs_force(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.forces.iter())
            .filter(|f| f.is_finite())
            .fold(0.0_f64, |m, f| m.max(f.abs()))
    }

    pub fn final_state(&self) -> Option<PlatoonState> {
        self.last().map(|r| PlatoonState {
            time: r.time,
            positions: r.positions.clone(),
            speeds: r.speeds.clone(),
        })
    }
}

/// One exact zero-order-hold step of length `period`.
pub fn step_exact(state: &PlatoonState, forces: &ForceVector, period: f64) -> PlatoonState {
    let mut next = state.clone();
    zoh_in_place(&mut next.positions, &mut next.speeds, &forces.forces, period);
    next.time = state.time + period;
    next
}

#[inline]
fn zoh_in_place(x: &mut [f64], v: &mut [f64], f: &[f64], period: f64) {
    let half_t2 = 0.5 * period * period;
    for i in 0..x.len() {
        x[i] += period * v[i] + half_t2 * f[i];
        v[i] += period * f[i];
    }
}

/// Simulates the closed loop and collects every recorded row.
pub fn simulate(
    initial: &PlatoonState,
    params: &ModelParams,
    potential: &PotentialSpec,
    config: &SimConfig,
) -> Result<Trajectory> {
    let mut rows = Vec::with_capacity(config.steps() / config.record_stride + 2);
    let omega_exit = simulate_observed(initial, params, potential, config, |row| rows.push(TrajectoryRow::from(row)))?;
    Ok(Trajectory { rows, omega_exit })
}

/// Simulates the closed loop, passing each recorded row to `observe` instead
/// of storing it. Returns the admissible-set exit, if any.
pub fn simulate_observed(
    initial: &PlatoonState,
    params: &ModelParams,
    potential: &PotentialSpec,
    config: &SimConfig,
    mut observe: impl FnMut(&RowView<'_>),
) -> Result<Option<OmegaExit>> {
    params.validate()?;
    config.validate()?;
    initial.check_omega(params).map_err(Error::OutsideOmega)?;

    let n = initial.len();
    let steps = config.steps();
    let period = config.period;
    let mut x = initial.positions.clone();
    let mut v = initial.speeds.clone();
    let mut fv = ForceVector::zeros(n);
    let mut slopes = vec![0.0; n - 1];
    let mut rk = Rk4Scratch::new(n);

    let mut time = config.t0;
    for k in 0..=steps {
        forces_into(&x, &v, params, potential, &mut slopes, &mut fv);
        if k % config.record_stride == 0 || k == steps {
            observe(&RowView {
                time,
                positions: &x,
                speeds: &v,
                forces: &fv.forces,
                gains: &fv.gains,
                outside_omega: false,
            });
        }
        if k == steps {
            break;
        }

        let stage_failure = match config.integrator {
            Integrator::ExactZoh => {
                zoh_in_place(&mut x, &mut v, &fv.forces, period);
                None
            }
            Integrator::ReferenceRk4 => rk.advance(&mut x, &mut v, params, potential, period, config.rk4_substeps),
        };
        time = config.t0 + (k + 1) as f64 * period;

        let violation = stage_failure.or_else(|| {
            PlatoonState {
                time,
                positions: x.clone(),
                speeds: v.clone(),
            }
            .check_omega(params)
            .err()
        });
        if let Some(violation) = violation {
            let nan = vec![f64::NAN; n];
            observe(&RowView {
                time,
                positions: &x,
                speeds: &v,
                forces: &nan,
                gains: &nan,
                outside_omega: true,
            });
            return Ok(Some(OmegaExit { time, violation }));
        }
    }
    Ok(None)
}

struct Rk4Scratch {
    x: Vec<f64>,
    v: Vec<f64>,
    kx: [Vec<f64>; 4],
    kv: [Vec<f64>; 4],
    slopes: Vec<f64>,
    fv: ForceVector,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        Self {
            x: vec![0.0; n],
            v: vec![0.0; n],
            kx: std::array::from_fn(|_| vec![0.0; n]),
            kv: std::array::from_fn(|_| vec![0.0; n]),
            slopes: vec![0.0; n - 1],
            fv: ForceVector::zeros(n),
        }
    }

    fn eval(&mut self, stage: usize, params: &ModelParams, potential: &PotentialSpec) -> Option<OmegaViolation> {
        for (j, w) in self.x.windows(2).enumerate() {
            let s = w[0] - w[1];
            if !(s > params.min_gap) {
                return Some(OmegaViolation::Spacing {
                    index: j + 2,
                    value: s,
                    min_gap: params.min_gap,
                });
            }
        }
        forces_into(&self.x, &self.v, params, potential, &mut self.slopes, &mut self.fv);
        self.kx[stage].copy_from_slice(&self.v);
        self.kv[stage].copy_from_slice(&self.fv.forces);
        None
    }

    fn advance(
        &mut self,
        x: &mut [f64],
        v: &mut [f64],
        params: &ModelParams,
        potential: &PotentialSpec,
        period: f64,
        substeps: usize,
    ) -> Option<OmegaViolation> {
        let h = period / substeps as f64;
        const NODES: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
        for _ in 0..substeps {
            for stage in 0..4 {
                let c = NODES[stage];
                for i in 0..x.len() {
                    let (dx, dv) = if stage == 0 {
                        (0.0, 0.0)
                    } else {
                        (self.kx[stage - 1][i], self.kv[stage - 1][i])
                    };
                    self.x[i] = x[i] + c * h * dx;
                    self.v[i] = v[i] + c * h * dv;
                }
                if let Some(bad) = self.eval(stage, params, potential) {
                    x.copy_from_slice(&self.x);
                    v.copy_from_slice(&self.v);
                    return Some(bad);
                }
            }
            for i in 0..x.len() {
                x[i] += h / 6.0 * (self.kx[0][i] + 2.0 * self.kx[1][i] + 2.0 * self.kx[2][i] + self.kx[3][i]);
                v[i] += h / 6.0 * (self.kv[0][i] + 2.0 * self.kv[1][i] + 2.0 * self.kv[2][i] + self.kv[3][i]);
            }
        }
        None
    }
}

/// RK4 integration of the double integrator with forces held at `forces`
/// over one period.
pub fn rk4_held_step(state: &PlatoonState, forces: &ForceVector, period: f64, substeps: usize) -> PlatoonState {
    let h = period / substeps.max(1) as f64;
    let mut next = state.clone();
    for _ in 0..substeps.max(1) {
        for i in 0..next.len() {
            let (x, v, f) = (next.positions[i], next.speeds[i], forces.forces[i]);
            let k1x = v;
            let k2x = v + 0.5 * h * f;
            let k3x = v + 0.5 * h * f;
            let k4x = v + h * f;
            next.positions[i] = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            next.speeds[i] = v + h * f;
        }
    }
    next.time = state.time + period;
    next
}

/// Both sampling-period inequalities for one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleCertificate {
    /// 1-based vehicle index.
    pub vehicle: usize,
    /// Largest period allowed by the spacing inequality (exclusive).
    pub spacing_bound: f64,
    pub spacing_ok: bool,
    pub force: f64,
    /// Open interval `(-v_i / T, (v_max - v_i) / T)`.
    pub force_interval: (f64, f64),
    pub force_ok: bool,
}

impl VehicleCertificate {
    pub fn passes(&self) -> bool {
        self.spacing_ok && self.force_ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyCertificate {
    pub period: f64,
    pub vehicles: Vec<VehicleCertificate>,
}

impl SafetyCertificate {
    pub fn passes(&self) -> bool {
        self.vehicles.iter().all(VehicleCertificate::passes)
    }

    /// Largest period admitted by the spacing inequality across the platoon.
    pub fn max_admissible_period(&self) -> f64 {
        self.vehicles
            .iter()
            .map(|c| c.spacing_bound)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn first_failure(&self) -> Option<&VehicleCertificate> {
        self.vehicles.iter().find(|c| !c.passes())
    }
}

/// Sampling-period certificate for vehicle `vehicle` (1-based).
///
/// The spacing inequality uses `s_i` and `s_{i+1}`; the leader has no `s_1`
/// and the tail no `s_{n+1}`, so the missing term is dropped.
pub fn check_safe_step(
    state: &PlatoonState,
    forces: &ForceVector,
    period: f64,
    params: &ModelParams,
    vehicle: usize,
) -> Result<VehicleCertificate> {
    state.check_omega(params).map_err(Error::OutsideOmega)?;
    let n = state.len();
    if vehicle == 0 || vehicle > n {
        return Err(invalid("vehicle", format!("index {vehicle} outside 1..={n}")));
    }
    if forces.forces.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: forces.forces.len(),
        });
    }
    Ok(vehicle_certificate(state, forces, period, params, vehicle - 1))
}

fn vehicle_certificate(
    state: &PlatoonState,
    forces: &ForceVector,
    period: f64,
    params: &ModelParams,
    i: usize,
) -> VehicleCertificate {
    let n = state.len();
    let gap = |j: usize| state.positions[j - 1] - state.positions[j];
    let mut margin = f64::INFINITY;
    if i > 0 {
        margin = margin.min(gap(i) - params.min_gap);
    }
    if i + 1 < n {
        margin = margin.min(gap(i + 1) - params.min_gap);
    }
    let spacing_bound = margin / params.speed_limit;
    let v = state.speeds[i];
    let f = forces.forces[i];
    let lo = -v / period;
    let hi = (params.speed_limit - v) / period;
    VehicleCertificate {
        vehicle: i + 1,
        spacing_bound,
        spacing_ok: period < spacing_bound,
        force: f,
        force_interval: (lo, hi),
        force_ok: lo < f && f < hi,
    }
}

/// Certificates for every vehicle at once.
pub fn certify_step(
    state: &PlatoonState,
    forces: &ForceVector,
    period: f64,
    params: &ModelParams,
) -> Result<SafetyCertificate> {
    state.check_omega(params).map_err(Error::OutsideOmega)?;
    if forces.forces.len() != state.len() {
        return Err(Error::Dimension {
            expected: state.len(),
            actual: forces.forces.len(),
        });
    }
    Ok(SafetyCertificate {
        period,
        vehicles: (0..state.len())
            .map(|i| vehicle_certificate(state, forces, period, params, i))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifiedHorizon {
    pub certified_steps: usize,
    pub first_failure: Option<SafetyCertificate>,
}

/// Runs the exact discrete model for up to `steps` periods, certifying every
/// vehicle before each step, and stops at the first uncertified step.
///
/// When every vehicle's force inequality holds, every `v_j(T)` lands in
/// `(0, v_max)`, so the neighbour-speed hypothesis is met a posteriori.
pub fn max_certified_horizon(
    initial: &PlatoonState,
    params: &ModelParams,
    potential: &PotentialSpec,
    period: f64,
    steps: usize,
) -> Result<CertifiedHorizon> {
    params.validate()?;
    if !(period > 0.0) {
        return Err(invalid("period", "must be positive"));
    }
    initial.check_omega(params).map_err(Error::OutsideOmega)?;
    let mut state = initial.clone();
    for k in 0..steps {
        let fv = crate::model::feedback_forces(&state, params, potential)?;
        let cert = certify_step(&state, &fv, period, params)?;
        if !cert.passes() {
            return Ok(CertifiedHorizon {
                certified_steps: k,
                first_failure: Some(cert),
            });
        }
        state = step_exact(&state, &fv, period);
        if !state.in_open_omega(params) {
            return Ok(CertifiedHorizon {
                certified_steps: k,
                first_failure: Some(cert),
            });
        }
    }
    Ok(CertifiedHorizon {
        certified_steps: steps,
        first_failure: None,
    })
}

mod violation_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::error::OmegaViolation;

    #[derive(Serialize, Deserialize)]
    #[serde(tag = "bound", rename_all = "snake_case")]
    enum Repr {
        Spacing { index: usize, value: f64, min_gap: f64 },
        Speed { index: usize, value: f64, limit: f64 },
    }

    pub fn serialize<S: Serializer>(v: &OmegaViolation, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            OmegaViolation::Spacing { index, value, min_gap } => Repr::Spacing { index, value, min_gap },
            OmegaViolation::Speed { index, value, limit } => Repr::Speed { index, value, limit },
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<OmegaViolation, D::Error> {
        Ok(match Repr::deserialize(d)? {
            Repr::Spacing { index, value, min_gap } => OmegaViolation::Spacing { index, value, min_gap },
            Repr::Speed { index, value, limit } => OmegaViolation::Speed { index, value, limit },
        })
    }
}
