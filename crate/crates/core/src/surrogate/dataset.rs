//! Offline dataset of initial conditions and their optimized potential
//! parameters.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{ModelParams, PlatoonState};
use crate::objective::ObjectiveSpec;
use crate::optimizer::{optimize_parameters, OptimizerConfig};
use crate::potential::PotentialSpec;
use crate::simulator::SimConfig;

/// Upper bound on redraws per sample before the headway constraint is
/// declared unsatisfiable for the given ranges.
const MAX_REDRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub count: usize,
    pub vehicles: usize,
    pub spacing_range: (f64, f64),
    pub speed_range: (f64, f64),
    /// Standstill distance (m).
    pub standstill: f64,
    /// Minimum time headway of the rear vehicle (s).
    pub headway: f64,
    /// Train / validation / test fractions.
    pub split: (f64, f64, f64),
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            count: 6000,
            vehicles: 7,
            spacing_range: (8.0, 12.0),
            speed_range: (27.0, 33.0),
            standstill: 5.0,
            headway: 0.1,
            split: (0.85, 0.075, 0.075),
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(invalid("dataset.count", "must be positive"));
        }
        if self.vehicles < 2 {
            return Err(invalid("dataset.vehicles", "need at least two vehicles"));
        }
        let (s0, s1) = self.spacing_range;
        let (v0, v1) = self.speed_range;
        if !(s0 < s1 && v0 < v1 && v0 >= 0.0) {
            return Err(invalid("dataset.ranges", "ranges must be nonempty and speeds nonnegative"));
        }
        if !(self.standstill >= 0.0 && self.headway >= 0.0) {
            return Err(invalid("dataset.headway", "standstill and headway must be nonnegative"));
        }
        if self.standstill + self.headway * v0 >= s1 {
            return Err(invalid("dataset.headway", "no spacing in range can satisfy the headway constraint"));
        }
        let (a, b, c) = self.split;
        if a <= 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(invalid("dataset.split", "fractions must be nonnegative and sum to 1"));
        }
        Ok(())
    }

    /// Smallest admissible gap behind a vehicle driving at `speed`.
    pub fn min_admissible_spacing(&self, speed: f64) -> f64 {
        self.standstill + self.headway * speed
    }

    pub fn input_len(&self) -> usize {
        2 * self.vehicles - 1
    }

    /// Row counts `(train, validation, test)` for `rows` samples.
    pub fn split_counts(&self, rows: usize) -> (usize, usize, usize) {
        let train = (self.split.0 * rows as f64).round() as usize;
        let val = ((self.split.1 * rows as f64).round() as usize).min(rows - train.min(rows));
        let train = train.min(rows);
        (train, val, rows - train - val)
    }

    /// The `index`-th initial condition: uniform draws redrawn until every
    /// gap exceeds `standstill + headway * v_rear`. Returns the state and the
    /// number of rejected draws.
    pub fn sample_initial(&self, index: u64) -> Result<(PlatoonState, usize)> {
        let mut rng = stream_rng(self.seed, index);
        let n = self.vehicles;
        for rejected in 0..MAX_REDRAWS {
            let speeds: Vec<f64> = (0..n)
                .map(|_| rng.random_range(self.speed_range.0..self.speed_range.1))
                .collect();
            let spacings: Vec<f64> = (0..n - 1)
                .map(|_| rng.random_range(self.spacing_range.0..self.spacing_range.1))
                .collect();
            let admissible = spacings
                .iter()
                .zip(&speeds[1..])
                .all(|(&s, &v_rear)| s > self.min_admissible_spacing(v_rear));
            if admissible {
                return Ok((PlatoonState::from_spacings(0.0, &spacings, speeds)?, rejected));
            }
        }
        Err(invalid("dataset.headway", "rejection sampling did not find an admissible draw"))
    }
}

/// Independent generator for stream `index` under `seed`.
pub(crate) fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Network input for a platoon state: gaps `s_2..s_n` followed by speeds.
pub fn input_vector(state: &PlatoonState) -> Vec<f64> {
    let mut x = state.spacings();
    x.extend_from_slice(&state.speeds);
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    /// Raw gaps then raw speeds.
    pub input: Vec<f64>,
    /// Raw `(alpha, r, p)`.
    pub target: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedSample {
    pub index: u64,
    pub reason: String,
}

/// Sidecar metadata: everything needed to de-normalize the CSV rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub spec: DatasetSpec,
    pub min_gap: f64,
    pub cutoff: f64,
    /// Per-coordinate target bounds used for min-max scaling.
    pub target_bounds: [(f64, f64); 3],
    pub rejected_draws: usize,
    pub dropped: Vec<DroppedSample>,
    pub optimizer_budget: usize,
    pub optimizer_restarts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub rows: Vec<DatasetRow>,
}

/// Indices into [`Dataset::rows`] for each partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn input_len(&self) -> usize {
        self.meta.spec.input_len()
    }

    /// Seeded shuffle into train / validation / test partitions.
    pub fn split(&self) -> Split {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        let mut rng = stream_rng(self.meta.spec.seed, u64::MAX);
        // Fisher-Yates
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let (tr, va, _) = self.meta.spec.split_counts(idx.len());
        let test = idx.split_off(tr + va);
        let validation = idx.split_off(tr);
        Split {
            train: idx,
            validation,
            test,
        }
    }

    /// Scales a raw input into `[0, 1]` by the sampling ranges.
    pub fn normalize_input(&self, raw: &[f64]) -> Vec<f64> {
        let (s0, s1) = self.meta.spec.spacing_range;
        let (v0, v1) = self.meta.spec.speed_range;
        let gaps = self.meta.spec.vehicles - 1;
        raw.iter()
            .enumerate()
            .map(|(j, &x)| if j < gaps { (x - s0) / (s1 - s0) } else { (x - v0) / (v1 - v0) })
            .collect()
    }

    pub fn denormalize_input(&self, scaled: &[f64]) -> Vec<f64> {
        let (s0, s1) = self.meta.spec.spacing_range;
        let (v0, v1) = self.meta.spec.speed_range;
        let gaps = self.meta.spec.vehicles - 1;
        scaled
            .iter()
            .enumerate()
            .map(|(j, &x)| if j < gaps { s0 + x * (s1 - s0) } else { v0 + x * (v1 - v0) })
            .collect()
    }

    pub fn normalize_target(&self, raw: &[f64; 3]) -> [f64; 3] {
        normalize_target(raw, &self.meta.target_bounds)
    }

    pub fn denormalize_target(&self, scaled: &[f64; 3]) -> [f64; 3] {
        denormalize_target(scaled, &self.meta.target_bounds)
    }
}

impl Dataset {
    /// CSV header: `s_2..s_n, v_1..v_n, alpha, r, p`.
    pub fn csv_header(vehicles: usize) -> Vec<String> {
        let mut h: Vec<String> = (2..=vehicles).map(|i| format!("s_{i}")).collect();
        h.extend((1..=vehicles).map(|i| format!("v_{i}")));
        h.extend(["alpha", "r", "p"].map(String::from));
        h
    }

    /// Writes normalized rows to `csv_path` and the metadata next to it as
    /// `<stem>.meta.json`.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(csv_path)?;
        w.write_record(Self::csv_header(self.meta.spec.vehicles))?;
        for row in &self.rows {
            let mut rec: Vec<String> = self.normalize_input(&row.input).iter().map(f64::to_string).collect();
            rec.extend(self.normalize_target(&row.target).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        std::fs::write(meta_path(csv_path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(meta_path(csv_path))?)?;
        if meta.format_version != 1 {
            return Err(Error::Format(format!("unsupported dataset format_version {}", meta.format_version)));
        }
        let mut rdr = csv::Reader::from_path(csv_path)?;
        let expected = Self::csv_header(meta.spec.vehicles);
        if rdr.headers()?.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::Format(format!("{}: unexpected dataset header", csv_path.display())));
        }
        let mut ds = Dataset { meta, rows: Vec::new() };
        let m = ds.input_len();
        for rec in rdr.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Format(format!("{}: {e}", csv_path.display())))?;
            if vals.len() != m + 3 {
                return Err(Error::Dimension { expected: m + 3, actual: vals.len() });
            }
            let input = ds.denormalize_input(&vals[..m]);
            let target = ds.denormalize_target(&[vals[m], vals[m + 1], vals[m + 2]]);
            ds.rows.push(DatasetRow { input, target });
        }
        Ok(ds)
    }
}

/// `dir/name.csv` -> `dir/name.meta.json`.
pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

pub(crate) fn normalize_target(raw: &[f64; 3], bounds: &[(f64, f64); 3]) -> [f64; 3] {
    std::array::from_fn(|j| (raw[j] - bounds[j].0) / (bounds[j].1 - bounds[j].0))
}

pub(crate) fn denormalize_target(scaled: &[f64; 3], bounds: &[(f64, f64); 3]) -> [f64; 3] {
    std::array::from_fn(|j| bounds[j].0 + scaled[j] * (bounds[j].1 - bounds[j].0))
}

/// Samples `dspec.count` admissible initial conditions and solves the tuning
/// problem for each. Samples whose optimization fails are dropped and listed
/// in the metadata. Deterministic given `dspec.seed`.
pub fn generate_dataset(
    dspec: &DatasetSpec,
    params: &ModelParams,
    obj: &ObjectiveSpec,
    simcfg: &SimConfig,
    optimizer: &OptimizerConfig,
) -> Result<Dataset> {
    dspec.validate()?;
    params.validate()?;
    optimizer.validate()?;
    if params.vehicles != dspec.vehicles {
        return Err(Error::Dimension {
            expected: params.vehicles,
            actual: dspec.vehicles,
        });
    }

    let outcomes: Vec<Result<(usize, std::result::Result<DatasetRow, String>)>> = (0..dspec.count as u64)
        .into_par_iter()
        .map(|k| {
            let (state, rejected) = dspec.sample_initial(k)?;
            // Same restart centers for every sample, so the label is a function of the input.
            let row = match optimize_parameters(&state, params, obj, simcfg, optimizer) {
                Ok(res) if res.success => Ok(DatasetRow {
                    input: input_vector(&state),
                    target: [res.best.alpha, res.best.hill_start, res.best.sharpness],
                }),
                Ok(_) => Err("no feasible parameters found".to_string()),
                Err(e) => Err(e.to_string()),
            };
            Ok((rejected, row))
        })
        .collect();

    let mut rows = Vec::with_capacity(dspec.count);
    let mut dropped = Vec::new();
    let mut rejected_draws = 0;
    for (k, outcome) in outcomes.into_iter().enumerate() {
        let (rejected, row) = outcome?;
        rejected_draws += rejected;
        match row {
            Ok(r) => rows.push(r),
            Err(reason) => dropped.push(DroppedSample { index: k as u64, reason }),
        }
    }

    Ok(Dataset {
        meta: DatasetMeta {
            format_version: 1,
            spec: *dspec,
            min_gap: params.min_gap,
            cutoff: params.cutoff,
            target_bounds: PotentialSpec::parameter_bounds(params.min_gap, params.cutoff),
            rejected_draws,
            dropped,
            optimizer_budget: optimizer.budget,
            optimizer_restarts: optimizer.restarts,
        },
        rows,
    })
}
