//! Learned map from an initial condition to tuned potential parameters.

mod dataset;
mod mlp;

pub use dataset::{
    generate_dataset, input_vector, meta_path, Dataset, DatasetMeta, DatasetRow, DatasetSpec, DroppedSample, Split,
};
pub use mlp::{gradient_check, Activations, Layer, Mlp};

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::PlatoonState;
use crate::objective::{check_feasible, ObjectiveSpec};
use crate::potential::{PotentialKind, PotentialSpec};
use dataset::{denormalize_target, normalize_target, stream_rng};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const HIDDEN_LAYERS: [usize; 2] = [32, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMethod {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Stop once validation MSE is at or below this.
    pub target_mse: f64,
    pub batch_size: usize,
    pub method: TrainMethod,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 35e-6,
            max_epochs: 2000,
            patience: 50,
            target_mse: 1e-3,
            batch_size: 32,
            method: TrainMethod::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("train.learning_rate", "must be positive"));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(invalid("train", "max_epochs, patience and batch_size must be positive"));
        }
        if !(self.target_mse > 0.0) {
            return Err(invalid("train.target_mse", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetReached,
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    /// Validation MSE of the retained snapshot after this epoch.
    pub best_val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub config: TrainConfig,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub train_rows: usize,
    pub val_rows: usize,
    pub test_rows: usize,
    /// MSEs of the returned snapshot, normalized units.
    pub train_mse: f64,
    pub val_mse: f64,
    /// `None` when the test partition is empty.
    pub test_mse: Option<f64>,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub format_version: u32,
    pub vehicles: usize,
    pub min_gap: f64,
    pub cutoff: f64,
    /// Network input is `(raw - input_mean) / input_scale`.
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    /// Network output `y` maps to `output_min + y * (output_max - output_min)`.
    pub output_min: [f64; 3],
    pub output_max: [f64; 3],
    pub network: Mlp,
    pub training: Option<TrainingMeta>,
}

impl MlpModel {
    /// Untrained model whose normalization matches `dataset`.
    pub fn for_dataset(dataset: &Dataset, seed: u64) -> Self {
        let spec = &dataset.meta.spec;
        let gaps = spec.vehicles - 1;
        let (s0, s1) = spec.spacing_range;
        let (v0, v1) = spec.speed_range;
        let input_mean = (0..spec.input_len()).map(|j| if j < gaps { s0 } else { v0 }).collect();
        let input_scale = (0..spec.input_len())
            .map(|j| if j < gaps { s1 - s0 } else { v1 - v0 })
            .collect();
        let mut sizes = vec![spec.input_len()];
        sizes.extend(HIDDEN_LAYERS);
        sizes.push(3);
        let mut rng = stream_rng(seed, 0);
        Self {
            format_version: MODEL_FORMAT_VERSION,
            vehicles: spec.vehicles,
            min_gap: dataset.meta.min_gap,
            cutoff: dataset.meta.cutoff,
            input_mean,
            input_scale,
            output_min: dataset.meta.target_bounds.map(|b| b.0),
            output_max: dataset.meta.target_bounds.map(|b| b.1),
            network: Mlp::new(&sizes, &mut rng),
            training: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model format_version {}", self.format_version)));
        }
        let m = 2 * self.vehicles - 1;
        if self.network.input_len() != m || self.input_mean.len() != m || self.input_scale.len() != m {
            return Err(Error::Dimension {
                expected: m,
                actual: self.network.input_len(),
            });
        }
        if self.network.output_len() != 3 {
            return Err(Error::Dimension {
                expected: 3,
                actual: self.network.output_len(),
            });
        }
        let stats_ok = self.input_mean.iter().all(|v| v.is_finite())
            && self.input_scale.iter().all(|v| v.is_finite() && *v > 0.0)
            && (0..3).all(|j| self.output_min[j].is_finite() && self.output_max[j] > self.output_min[j]);
        if !stats_ok {
            return Err(Error::Format("normalization statistics must be finite with positive scale".into()));
        }
        if !self.network.is_finite() {
            return Err(Error::Format("network parameters must be finite".into()));
        }
        Ok(())
    }

    fn output_bounds(&self) -> [(f64, f64); 3] {
        std::array::from_fn(|j| (self.output_min[j], self.output_max[j]))
    }

    pub fn normalize_input(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.input_mean.iter().zip(&self.input_scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn denormalize_input(&self, scaled: &[f64]) -> Vec<f64> {
        scaled
            .iter()
            .zip(self.input_mean.iter().zip(&self.input_scale))
            .map(|(x, (m, s))| m + x * s)
            .collect()
    }

    pub fn normalize_target(&self, raw: &[f64; 3]) -> [f64; 3] {
        normalize_target(raw, &self.output_bounds())
    }

    pub fn denormalize_target(&self, scaled: &[f64; 3]) -> [f64; 3] {
        denormalize_target(scaled, &self.output_bounds())
    }

    /// Raw `(alpha, r, p)` before clamping.
    pub fn raw_output(&self, input: &[f64]) -> Result<[f64; 3]> {
        if input.len() != self.input_mean.len() {
            return Err(Error::Dimension {
                expected: self.input_mean.len(),
                actual: input.len(),
            });
        }
        let y = self.network.forward(&self.normalize_input(input));
        Ok(self.denormalize_target(&[y[0], y[1], y[2]]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        model.validate()?;
        Ok(model)
    }
}

/// Clamped prediction for `state`; always inside the feasibility box.
pub fn predict(model: &MlpModel, state: &PlatoonState) -> Result<PotentialSpec> {
    if state.len() != model.vehicles {
        return Err(Error::Dimension {
            expected: model.vehicles,
            actual: state.len(),
        });
    }
    let [alpha, hill_start, sharpness] = model.raw_output(&input_vector(state))?;
    Ok(PotentialSpec {
        kind: PotentialKind::PerformanceSensitive,
        alpha,
        hill_start,
        sharpness,
        min_gap: model.min_gap,
        cutoff: model.cutoff,
    }
    .clamp_to_box())
}

/// Normalized `(input, target)` pairs for the given rows.
fn normalized(dataset: &Dataset, idx: &[usize]) -> Vec<(Vec<f64>, [f64; 3])> {
    idx.iter()
        .map(|&i| {
            let row = &dataset.rows[i];
            (dataset.normalize_input(&row.input), dataset.normalize_target(&row.target))
        })
        .collect()
}

/// Mean over rows of the per-sample MSE (each averaged over the 3 outputs).
pub fn mse(net: &Mlp, rows: &[(Vec<f64>, [f64; 3])]) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    rows.iter().map(|(x, t)| net.sample_loss(x, t)).sum::<f64>() / rows.len() as f64
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Mlp, grads: &Mlp, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let g = grads.params();
        for (k, w) in net.params_mut().enumerate() {
            self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * g[k];
            self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * g[k] * g[k];
            *w -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mini-batch training on the dataset's train partition with early stopping
/// on the validation partition. Returns the best-validation snapshot. When
/// the validation partition is empty the training MSE stands in for it.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<MlpModel> {
    train_observed(dataset, cfg, |_, _| {})
}

/// [`train`] with a callback after every epoch receiving the record and the
/// current (not snapshot) model.
pub fn train_observed(
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&EpochRecord, &MlpModel),
) -> Result<MlpModel> {
    cfg.validate()?;
    let split = dataset.split();
    if split.train.is_empty() {
        return Err(invalid("dataset", "training partition is empty"));
    }
    let train_rows = normalized(dataset, &split.train);
    let val_rows = normalized(dataset, &split.validation);
    let test_rows = normalized(dataset, &split.test);
    let monitor = if val_rows.is_empty() { &train_rows } else { &val_rows };

    let mut model = MlpModel::for_dataset(dataset, cfg.seed);
    let mut rng = stream_rng(cfg.seed, 1);
    let mut grads = model.network.zeroed_like();
    let mut acts = Activations::default();
    let mut adam = Adam::new(model.network.param_count());
    let mut order: Vec<usize> = (0..train_rows.len()).collect();

    let mut best = (f64::INFINITY, 0usize, model.network.clone());
    let mut history = Vec::with_capacity(cfg.max_epochs.min(4096));
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grads.params_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (x, t) = &train_rows[i];
                model.network.accumulate_gradient(x, t, scale, &mut acts, &mut grads);
            }
            match cfg.method {
                TrainMethod::Adam => adam.step(&mut model.network, &grads, cfg.learning_rate),
                TrainMethod::Sgd => {
                    let g = grads.params();
                    model
                        .network
                        .params_mut()
                        .zip(g)
                        .for_each(|(w, gk)| *w -= cfg.learning_rate * gk);
                }
            }
        }

        let train_mse = mse(&model.network, &train_rows);
        let val_mse = mse(&model.network, monitor);
        if !(train_mse.is_finite() && val_mse.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        if val_mse < best.0 {
            best = (val_mse, epoch, model.network.clone());
        }
        let record = EpochRecord {
            epoch,
            train_mse,
            val_mse,
            best_val_mse: best.0,
        };
        history.push(record);
        observe(&record, &model);

        if best.0 <= cfg.target_mse {
            stop_reason = StopReason::TargetReached;
            break;
        }
        if epoch - best.1 >= cfg.patience {
            stop_reason = StopReason::Patience;
            break;
        }
    }

    let (_, best_epoch, net) = best;
    model.network = net;
    model.training = Some(TrainingMeta {
        config: *cfg,
        epochs_run: history.len(),
        best_epoch,
        stop_reason,
        train_rows: train_rows.len(),
        val_rows: val_rows.len(),
        test_rows: test_rows.len(),
        train_mse: mse(&model.network, &train_rows),
        val_mse: mse(&model.network, monitor),
        test_mse: (!test_rows.is_empty()).then(|| mse(&model.network, &test_rows)),
        history,
    });
    Ok(model)
}

/// Test-partition MSE of `model` on `dataset`.
pub fn test_mse(model: &MlpModel, dataset: &Dataset) -> f64 {
    mse(&model.network, &normalized(dataset, &dataset.split().test))
}

/// Share of test-partition predictions whose hill slope exceeds the cap.
/// Clamping enforces only the box, so this can be nonzero.
pub fn slope_violation_share(model: &MlpModel, dataset: &Dataset, obj: &ObjectiveSpec) -> Result<f64> {
    let test = dataset.split().test;
    if test.is_empty() {
        return Ok(0.0);
    }
    let mut violations = 0;
    for &i in &test {
        let row = &dataset.rows[i];
        let [alpha, hill_start, sharpness] = model.raw_output(&row.input)?;
        let spec = PotentialSpec {
            kind: PotentialKind::PerformanceSensitive,
            alpha,
            hill_start,
            sharpness,
            min_gap: model.min_gap,
            cutoff: model.cutoff,
        }
        .clamp_to_box();
        if !check_feasible(&spec, obj)?.slope_ok {
            violations += 1;
        }
    }
    Ok(violations as f64 / test.len() as f64)
}
