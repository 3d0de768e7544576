//! Simulation and tuning toolkit for potential-based platoon control on a
//! single-lane road.
//!
//! - [`model`]: constants, platoon states and the decentralized feedback law
//! - [`potential`]: legacy and performance-sensitive spacing potentials
//! - [`simulator`]: exact sampled-data rollouts and sampling-period certificates
//! - [`objective`] / [`optimizer`]: the tuning problem over `(alpha, r, p)`
//! - [`surrogate`]: dataset generation and the neural parameter predictor
//! - [`io`]: configuration, presets, CSV/report/plot emission
//! - [`commands`]: the operations behind the `platoon` binary

pub mod commands;
pub mod error;
pub mod io;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod potential;
pub mod simulator;
pub mod surrogate;

pub use error::{Error, OmegaViolation, Result};
pub use model::{feedback_forces, ForceVector, ModelParams, PlatoonState};
pub use objective::{check_feasible, evaluate_objective, FeasibilityReport, ObjectiveSpec};
pub use optimizer::{optimize_parameters, OptimizationResult, OptimizerConfig};
pub use potential::{PotentialKind, PotentialSpec};
pub use simulator::{simulate, Integrator, SimConfig, Trajectory};
pub use surrogate::{predict, train, DatasetSpec, MlpModel, TrainConfig};
