//! Multi-start downhill-simplex search over `(alpha, r, p)`.
//!
//! The search runs in the unit cube mapped affinely onto the feasibility box.
//! Simplex vertices are projected back into the cube; slope-cap violations
//! are penalized additively during the search and filtered out of the
//! reported answer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{ModelParams, PlatoonState};
use crate::objective::{check_feasible, evaluate_objective, FeasibilityReport, ObjectiveSpec};
use crate::potential::PotentialSpec;
use crate::simulator::SimConfig;

/// Penalty per unit of slope-cap violation.
pub const SLOPE_PENALTY: f64 = 1e3;
/// Minimum evaluations per restart.
pub const MIN_EVALS_PER_RESTART: usize = 20;

const INITIAL_STEP: f64 = 0.15;
const X_TOL: f64 = 1e-4;
const F_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Total objective evaluations across all restarts.
    pub budget: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            budget: 400,
            restarts: 4,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(invalid("optimizer.restarts", "need at least one restart"));
        }
        if self.budget < self.restarts * MIN_EVALS_PER_RESTART {
            return Err(invalid(
                "optimizer.budget",
                format!("need at least {MIN_EVALS_PER_RESTART} evaluations per restart"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    /// Simplex center in `(alpha, r, p)`.
    pub center: [f64; 3],
    pub evaluations: usize,
    /// Best feasible objective of this restart, if any point was feasible.
    pub best_feasible: Option<f64>,
    pub best_penalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    /// True when `best` satisfies the box, the slope cap and stays admissible.
    pub success: bool,
    pub best: PotentialSpec,
    /// Unpenalized objective at `best`.
    pub objective: f64,
    pub feasibility: FeasibilityReport,
    pub evaluations: usize,
    pub history: Vec<RestartRecord>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    u: [f64; 3],
    objective: f64,
    penalized: f64,
    feasible: bool,
}

struct Problem<'a> {
    initial: &'a PlatoonState,
    params: &'a ModelParams,
    obj: &'a ObjectiveSpec,
    simcfg: &'a SimConfig,
    bounds: [(f64, f64); 3],
}

impl Problem<'_> {
    fn spec(&self, u: &[f64; 3]) -> PotentialSpec {
        let [a, r, p] = std::array::from_fn(|j| {
            let (lo, hi) = self.bounds[j];
            lo + u[j].clamp(0.0, 1.0) * (hi - lo)
        });
        PotentialSpec::performance_sensitive(self.params, a, r, p)
    }

    fn evaluate(&self, u: [f64; 3]) -> Result<Candidate> {
        let spec = self.spec(&u);
        let report = check_feasible(&spec, self.obj)?;
        let value = evaluate_objective(self.initial, self.params, &spec, self.obj, self.simcfg)?;
        let penalized = value.value + SLOPE_PENALTY * report.slope_violation(self.obj.slope_cap);
        Ok(Candidate {
            u,
            objective: value.value,
            penalized,
            feasible: report.feasible() && value.omega_exit.is_none(),
        })
    }
}

/// Deterministic restart centers: a Halton sequence in bases 2, 3, 5 with a
/// seeded uniform shift (mod 1).
pub fn restart_centers(count: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>());
    (1..=count)
        .map(|k| {
            let h = [radical_inverse(k, 2), radical_inverse(k, 3), radical_inverse(k, 5)];
            std::array::from_fn(|j| (h[j] + shift[j]).fract())
        })
        .collect()
}

fn radical_inverse(mut k: usize, base: usize) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut x = 0.0;
    while k > 0 {
        x += (k % base) as f64 * inv;
        k /= base;
        inv /= base as f64;
    }
    x
}

/// Multi-start Nelder-Mead over the feasibility box. Deterministic given
/// `cfg.seed`. Returns a result with `success == false` (carrying the best
/// penalized point) when no feasible point was found.
pub fn optimize_parameters(
    initial: &PlatoonState,
    params: &ModelParams,
    obj: &ObjectiveSpec,
    simcfg: &SimConfig,
    cfg: &OptimizerConfig,
) -> Result<OptimizationResult> {
    params.validate()?;
    obj.validate()?;
    simcfg.validate()?;
    cfg.validate()?;
    initial.check_omega(params).map_err(Error::OutsideOmega)?;

    let problem = Problem {
        initial,
        params,
        obj,
        simcfg,
        bounds: PotentialSpec::parameter_bounds(params.min_gap, params.cutoff),
    };
    let centers = restart_centers(cfg.restarts, cfg.seed);
    let base = cfg.budget / cfg.restarts;
    let extra = cfg.budget % cfg.restarts;

    let runs: Vec<Result<RestartRun>> = centers
        .par_iter()
        .enumerate()
        .map(|(k, c)| nelder_mead(&problem, *c, base + usize::from(k < extra)))
        .collect();

    let mut history = Vec::with_capacity(runs.len());
    let mut best_feasible: Option<Candidate> = None;
    let mut best_any: Option<Candidate> = None;
    let mut evaluations = 0;
    for (run, center) in runs.into_iter().zip(&centers) {
        let run = run?;
        evaluations += run.evaluations;
        history.push(RestartRecord {
            center: spec_triplet(&problem.spec(center)),
            evaluations: run.evaluations,
            best_feasible: run.best_feasible.map(|c| c.objective),
            best_penalized: run.best_any.penalized,
        });
        if let Some(c) = run.best_feasible {
            if best_feasible.is_none_or(|b| c.objective < b.objective) {
                best_feasible = Some(c);
            }
        }
        if best_any.is_none_or(|b| run.best_any.penalized < b.penalized) {
            best_any = Some(run.best_any);
        }
    }

    let (chosen, success) = match best_feasible {
        Some(c) => (c, true),
        None => (best_any.expect("at least one evaluation"), false),
    };
    let best = problem.spec(&chosen.u);
    let feasibility = check_feasible(&best, obj)?;
    Ok(OptimizationResult {
        success,
        best,
        objective: chosen.objective,
        feasibility,
        evaluations,
        history,
    })
}

fn spec_triplet(s: &PotentialSpec) -> [f64; 3] {
    [s.alpha, s.hill_start, s.sharpness]
}

struct RestartRun {
    evaluations: usize,
    best_feasible: Option<Candidate>,
    best_any: Candidate,
}

struct Tracker<'a, 'b> {
    problem: &'a Problem<'b>,
    budget: usize,
    used: usize,
    best_feasible: Option<Candidate>,
    best_any: Option<Candidate>,
}

impl Tracker<'_, '_> {
    fn exhausted(&self) -> bool {
        self.used >= self.budget
    }

    fn eval(&mut self, u: [f64; 3]) -> Result<f64> {
        let u = u.map(|x| x.clamp(0.0, 1.0));
        let c = self.problem.evaluate(u)?;
        self.used += 1;
        if c.feasible && self.best_feasible.is_none_or(|b| c.objective < b.objective) {
            self.best_feasible = Some(c);
        }
        if self.best_any.is_none_or(|b| c.penalized < b.penalized) {
            self.best_any = Some(c);
        }
        Ok(c.penalized)
    }
}

fn nelder_mead(problem: &Problem<'_>, center: [f64; 3], budget: usize) -> Result<RestartRun> {
    let mut t = Tracker {
        problem,
        budget,
        used: 0,
        best_feasible: None,
        best_any: None,
    };

    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    let x0 = center;
    simplex.push((x0, t.eval(x0)?));
    for j in 0..3 {
        if t.exhausted() {
            break;
        }
        let mut x = x0;
        x[j] = if x0[j] + INITIAL_STEP <= 1.0 {
            x0[j] + INITIAL_STEP
        } else {
            x0[j] - INITIAL_STEP
        };
        simplex.push((x, t.eval(x)?));
    }

    while simplex.len() == 4 && !t.exhausted() {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[3].1);
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| (0..3).map(|j| (x[j] - simplex[0].0[j]).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter < X_TOL && (worst - best).abs() <= F_TOL * best.abs().max(1.0) {
            break;
        }

        let centroid: [f64; 3] = std::array::from_fn(|j| simplex[..3].iter().map(|(x, _)| x[j]).sum::<f64>() / 3.0);
        let toward = |coef: f64| -> [f64; 3] {
            std::array::from_fn(|j| (centroid[j] + coef * (simplex[3].0[j] - centroid[j])).clamp(0.0, 1.0))
        };

        let xr = toward(-1.0);
        let fr = t.eval(xr)?;
        if fr < simplex[0].1 {
            if t.exhausted() {
                simplex[3] = (xr, fr);
                break;
            }
            let xe = toward(-2.0);
            let fe = t.eval(xe)?;
            simplex[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (xr, fr);
        } else {
            if t.exhausted() {
                break;
            }
            let (xc, fc) = if fr < simplex[3].1 {
                let xc = toward(-0.5);
                (xc, t.eval(xc)?)
            } else {
                let xc = toward(0.5);
                (xc, t.eval(xc)?)
            };
            if fc < simplex[3].1.min(fr) {
                simplex[3] = (xc, fc);
            } else {
                let x_best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    if t.exhausted() {
                        break;
                    }
                    let xs: [f64; 3] = std::array::from_fn(|j| x_best[j] + 0.5 * (v.0[j] - x_best[j]));
                    *v = (xs, t.eval(xs)?);
                }
            }
        }
    }

    Ok(RestartRun {
        evaluations: t.used,
        best_feasible: t.best_feasible,
        best_any: t.best_any.expect("center is always evaluated"),
    })
}
