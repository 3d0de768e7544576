//! Acceptance suite. Each test prints one `criterion N [PASS|FAIL]` line;
//! run with `-- --nocapture` to see them.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use platoon::commands::{cmd_infer, cmd_optimize, cmd_simulate};
use platoon::io::{ExperimentConfig, InitialCondition, PotentialChoice};
use platoon::potential::{ALPHA_MAX, ALPHA_MIN, SHARPNESS_MAX, SHARPNESS_MIN};
use platoon::simulator::{max_certified_horizon, step_exact};
use platoon::surrogate::{generate_dataset, gradient_check, train, Dataset, DatasetSpec, MlpModel, TrainConfig};
use platoon::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDED_CONDITIONS: u64 = 20;

fn verdict(n: u32, title: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n} [{tag}] {title}: {detail}");
    assert!(pass, "criterion {n} failed: {detail}");
}

fn preset(name: &str) -> ExperimentConfig {
    ExperimentConfig::preset(name).unwrap()
}

fn final_row(traj: &Trajectory) -> &platoon::simulator::TrajectoryRow {
    traj.last().unwrap()
}

#[test]
fn criterion_1_scenario1_spacings_converge_to_cutoff() {
    let cfg = preset("scenario1");
    let spec = PotentialSpec::legacy(&cfg.model);
    let (mut lo, mut hi, mut dv, mut slowest) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, Duration::ZERO);
    for k in 0..SEEDED_CONDITIONS {
        let st = cfg.sampled_initial(k).unwrap();
        let t = Instant::now();
        let traj = simulate(&st, &cfg.model, &spec, &cfg.sim).unwrap();
        slowest = slowest.max(t.elapsed());
        assert!(traj.completed());
        let last = final_row(&traj);
        for &s in &last.spacings {
            lo = lo.min(s);
            hi = hi.max(s);
        }
        for &v in &last.speeds {
            dv = dv.max((v - cfg.model.cruise_speed).abs());
        }
    }
    let pass = lo >= 19.0 && hi <= 21.0 && dv < 0.1 && slowest < Duration::from_secs(10);
    verdict(
        1,
        "scenario 1 spacings in [19, 21], speeds within 0.1 of v*",
        pass,
        format!(
            "{SEEDED_CONDITIONS} conditions, final spacings in [{lo:.3}, {hi:.3}], max |v - v*| = {dv:.2e}, slowest rollout {slowest:?}"
        ),
    );
}

#[test]
fn criterion_2_scenario2_spacings_near_12_with_smaller_forces() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("scenario2");
    cfg.output_dir = dir.path().to_path_buf();
    let (report, _) = cmd_optimize(&cfg).unwrap();
    let st = cfg.initial_state().unwrap();
    let new = simulate(&st, &cfg.model, &report.spec, &cfg.sim).unwrap();
    let old = simulate(&st, &cfg.model, &PotentialSpec::legacy(&cfg.model), &cfg.sim).unwrap();
    let spacings = &final_row(&new).spacings;
    let (lo, hi) = spacings
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    let (f_new, f_old) = (new.max_abs_force(), old.max_abs_force());
    let pass = report.success && new.completed() && lo >= 11.0 && hi <= 13.0 && f_new < f_old;
    verdict(
        2,
        "scenario 2 spacings in [11, 13], max |F| below scenario 1",
        pass,
        format!(
            "spec (alpha {:.4}, r {:.3}, p {:.3}), final spacings in [{lo:.3}, {hi:.3}], max |F| {f_new:.3} vs {f_old:.3}",
            report.spec.alpha, report.spec.hill_start, report.spec.sharpness
        ),
    );
}

#[test]
fn criterion_3_certified_steps_keep_state_admissible() {
    let p = ModelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let obj = ObjectiveSpec::default();
    let mut violations = 0usize;
    let mut smallest_period = f64::INFINITY;
    for k in 0..100 {
        let spacings: Vec<f64> = (0..6).map(|_| rng.random_range(8.0..12.0)).collect();
        let speeds: Vec<f64> = (0..7).map(|_| rng.random_range(27.0..33.0)).collect();
        let st = PlatoonState::from_spacings(0.0, &spacings, speeds).unwrap();
        let spec = if k % 2 == 0 {
            PotentialSpec::legacy(&p)
        } else {
            let s = PotentialSpec::performance_sensitive(
                &p,
                rng.random_range(ALPHA_MIN..0.01),
                rng.random_range(7.0..12.0),
                rng.random_range(SHARPNESS_MIN..6.0),
            );
            if !check_feasible(&s, &obj).unwrap().feasible() {
                PotentialSpec::performance_sensitive(&p, 0.005, 10.0, 4.0)
            } else {
                s
            }
        };
        let mut period: f64 = 0.01;
        let steps = loop {
            let steps = (60.0 / period).round() as usize;
            if max_certified_horizon(&st, &p, &spec, period, steps).unwrap().certified_steps == steps {
                break steps;
            }
            period /= 2.0;
            assert!(period > 1e-6, "no certifiable period for condition {k}");
        };
        smallest_period = smallest_period.min(period);
        let sim = SimConfig {
            period,
            tf: period * steps as f64,
            ..Default::default()
        };
        let traj = simulate(&st, &p, &spec, &sim).unwrap();
        for row in &traj.rows {
            violations += row.spacings.iter().filter(|&&s| s <= p.min_gap).count();
            violations += row.speeds.iter().filter(|&&v| v <= 0.0 || v >= p.speed_limit).count();
        }
    }
    verdict(
        3,
        "certified rollouts never violate s > L, 0 < v < v_max",
        violations == 0,
        format!("100 conditions, {violations} violations, smallest certified T = {smallest_period}"),
    );
}

#[test]
fn criterion_4_exact_step_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let x = rng.random_range(-1e3..1e3);
        let v = rng.random_range(0.0..35.0);
        let f = rng.random_range(-100.0..100.0);
        let t = rng.random_range(1e-4..1.0);
        let st = PlatoonState::new(0.0, vec![x + 10.0, x], vec![v, v]).unwrap();
        let fv = ForceVector {
            forces: vec![f, f],
            gains: vec![0.5, 0.5],
        };
        let next = step_exact(&st, &fv, t);
        let x_ref = x + v * t + f * t * t / 2.0;
        let v_ref = v + f * t;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rel(next.positions[1], x_ref)).max(rel(next.speeds[1], v_ref));
    }
    verdict(
        4,
        "exact step vs constant-acceleration solution",
        worst <= 1e-12,
        format!("10^4 random steps, max relative error {worst:.2e}"),
    );
}

#[test]
fn criterion_5_potential_derivatives_and_smoothness() {
    let p = ModelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut fd_failures = 0;
    for _ in 0..1000 {
        let spec = PotentialSpec::performance_sensitive(
            &p,
            rng.random_range(ALPHA_MIN..=ALPHA_MAX),
            rng.random_range(p.min_gap + 1e-3..=p.cutoff - 3.0),
            rng.random_range(SHARPNESS_MIN..=SHARPNESS_MAX),
        );
        let s = rng.random_range(p.min_gap + 0.01..p.cutoff + 5.0);
        let h = 1e-6 * (s - p.min_gap).min(1.0);
        let fd1 = (spec.value(s + h).unwrap() - spec.value(s - h).unwrap()) / (2.0 * h);
        let fd2 = (spec.slope(s + h).unwrap() - spec.slope(s - h).unwrap()) / (2.0 * h);
        let (d1, d2) = (spec.slope(s).unwrap(), spec.curvature(s).unwrap());
        if (fd1 - d1).abs() > 1e-5f64.max(1e-4 * d1.abs()) || (fd2 - d2).abs() > 1e-5f64.max(1e-4 * d2.abs()) {
            fd_failures += 1;
        }
    }

    let continuous = |spec: &PotentialSpec, at: f64| {
        let d = 1e-9;
        let fs: [&dyn Fn(f64) -> f64; 3] = [
            &|x| spec.value(x).unwrap(),
            &|x| spec.slope(x).unwrap(),
            &|x| spec.curvature(x).unwrap(),
        ];
        fs.iter().all(|f| {
            let (a, b) = (f(at - d), f(at + d));
            (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0)
        })
    };
    let mut c2_failures = Vec::new();
    for sharp in [3.0, 4.0, 6.0, 9.0] {
        let spec = PotentialSpec::performance_sensitive(&p, 0.01, 10.0, sharp);
        for at in [10.0, 13.0, p.cutoff] {
            if !continuous(&spec, at) {
                c2_failures.push(format!("p={sharp} at {at}"));
            }
        }
    }
    let p2_breaks = !continuous(&PotentialSpec::performance_sensitive(&p, 0.01, 10.0, 2.0), 10.0);
    verdict(
        5,
        "finite-difference derivatives, C2 junctions for p in {3,4,6,9}, not for p = 2",
        fd_failures == 0 && c2_failures.is_empty() && p2_breaks,
        format!("{fd_failures}/1000 derivative mismatches, C2 failures {c2_failures:?}, p = 2 breaks at r: {p2_breaks}"),
    );
}

#[test]
fn criterion_6_presets_reach_equilibrium() {
    let mut details = Vec::new();
    let mut pass = true;
    for name in ["scenario1", "scenario2"] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = preset(name);
        cfg.output_dir = dir.path().to_path_buf();
        let out = cmd_simulate(&cfg).unwrap();
        let report = out.report.expect("preset simulation runs");
        let slope = report
            .final_spacings
            .iter()
            .map(|&s| report.spec.slope(s).unwrap().abs())
            .fold(0.0, f64::max);
        let dv = report
            .final_speeds
            .iter()
            .map(|v| (v - cfg.model.cruise_speed).abs())
            .fold(0.0, f64::max);
        pass &= report.completed && slope < 0.01 && dv < 0.1;
        details.push(format!("{name}: max |V'| {slope:.2e}, max |v - v*| {dv:.2e}"));
    }
    verdict(6, "convergence at t = 60 s", pass, details.join("; "));
}

#[test]
fn criterion_7_optimizer_beats_default_and_is_feasible() {
    let cfg = preset("scenario2");
    let default = PotentialSpec::performance_sensitive(&cfg.model, 0.05, 9.0, 4.0);
    let mut worse = 0;
    let mut infeasible = 0;
    let mut slowest = Duration::ZERO;
    let mut gaps = Vec::new();
    for k in 0..SEEDED_CONDITIONS {
        let st = cfg.sampled_initial(k).unwrap();
        let t = Instant::now();
        let res = optimize_parameters(&st, &cfg.model, &cfg.objective, &cfg.sim, &cfg.optimizer).unwrap();
        slowest = slowest.max(t.elapsed());
        let base = evaluate_objective(&st, &cfg.model, &default, &cfg.objective, &cfg.sim).unwrap().value;
        if res.objective > base {
            worse += 1;
        }
        if !res.success || !check_feasible(&res.best, &cfg.objective).unwrap().feasible() {
            infeasible += 1;
        }
        gaps.push(base - res.objective);
    }
    let min_gain = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    verdict(
        7,
        "optimized objective <= default-spec objective, optimum feasible",
        worse == 0 && infeasible == 0 && slowest <= Duration::from_secs(120),
        format!(
            "{SEEDED_CONDITIONS} conditions, {worse} worse than default, {infeasible} infeasible, smallest improvement {min_gain:.3}, slowest {slowest:?}"
        ),
    );
}

struct Surrogate {
    dataset: Dataset,
    model: MlpModel,
}

/// The desk-scale dataset (600 samples, 200-evaluation budget) and the model
/// trained on it with the default training config. Built once.
fn surrogate() -> &'static Surrogate {
    static CELL: OnceLock<Surrogate> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = preset("scenario2");
        let dspec = DatasetSpec {
            count: 600,
            ..cfg.dataset
        };
        let opt = OptimizerConfig {
            budget: 200,
            ..cfg.optimizer
        };
        let dataset = generate_dataset(&dspec, &cfg.model, &cfg.objective, &cfg.sim, &opt).unwrap();
        let model = train(&dataset, &cfg.train).unwrap();
        Surrogate { dataset, model }
    })
}

#[test]
fn criterion_8_surrogate_fits_and_gradients_check() {
    let s = surrogate();
    let cfg = preset("scenario2");
    let split = s.dataset.split();
    let meta = s.model.training.as_ref().unwrap();
    let test_mse = meta.test_mse.unwrap();

    let probe = &s.dataset.rows[split.train[0]];
    let x = s.dataset.normalize_input(&probe.input);
    let t = s.dataset.normalize_target(&probe.target);
    let at_init = gradient_check(&MlpModel::for_dataset(&s.dataset, cfg.train.seed).network, &x, &t);
    let ten = TrainConfig {
        max_epochs: 10,
        patience: 10,
        ..cfg.train
    };
    let after_ten = gradient_check(&train(&s.dataset, &ten).unwrap().network, &x, &t);

    // Test MSE of always predicting the mean training target.
    let mut mean = [0.0; 3];
    for &i in &split.train {
        let t = s.dataset.normalize_target(&s.dataset.rows[i].target);
        for j in 0..3 {
            mean[j] += t[j] / split.train.len() as f64;
        }
    }
    let baseline = split
        .test
        .iter()
        .map(|&i| {
            let t = s.dataset.normalize_target(&s.dataset.rows[i].target);
            (0..3).map(|j| (t[j] - mean[j]).powi(2)).sum::<f64>() / 3.0
        })
        .sum::<f64>()
        / split.test.len() as f64;

    let counts = (split.train.len(), split.validation.len(), split.test.len());
    let pass = counts.0 + counts.1 + counts.2 == 600 - s.dataset.meta.dropped.len()
        && test_mse <= 0.005
        && at_init < 1e-5
        && after_ten < 1e-5;
    verdict(
        8,
        "surrogate test MSE <= 0.005, gradient check < 1e-5",
        pass,
        format!(
            "{} rows ({} dropped), split {counts:?}, {} epochs (best {}), test MSE {test_mse:.5} (mean predictor {baseline:.5}), gradient check {at_init:.2e} at init / {after_ten:.2e} after 10 epochs",
            s.dataset.rows.len(),
            s.dataset.meta.dropped.len(),
            meta.epochs_run,
            meta.best_epoch,
        ),
    );
}

#[test]
fn criterion_9_inferred_specs_roll_out_safely() {
    let s = surrogate();
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("model.json");
    s.model.save(&model_path).unwrap();

    let (mut exits, mut lo, mut hi) = (0, f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..SEEDED_CONDITIONS {
        let mut cfg = preset("scenario2");
        cfg.output_dir = dir.path().join(format!("run{k}"));
        cfg.initial = InitialCondition::Sampled { index: k };
        let inferred = cmd_infer(&cfg, Some(&model_path)).unwrap();
        assert!(inferred.spec.check_box().passes());
        cfg.potential = PotentialChoice::Report {
            path: cfg.output_dir.join("infer.json"),
        };
        let out = cmd_simulate(&cfg).unwrap();
        let report = out.report.unwrap();
        if !report.completed {
            exits += 1;
        }
        for &g in &report.final_spacings {
            lo = lo.min(g);
            hi = hi.max(g);
        }
    }
    verdict(
        9,
        "infer then simulate: no admissible-set exits, final spacings in [8, 20]",
        exits == 0 && lo >= 8.0 && hi <= 20.0,
        format!("{SEEDED_CONDITIONS} conditions, {exits} exits, final spacings in [{lo:.3}, {hi:.3}]"),
    );
}
