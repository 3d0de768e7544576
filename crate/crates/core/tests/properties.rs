use platoon::objective::OMEGA_PENALTY;
use platoon::potential::{ALPHA_MAX, ALPHA_MIN, HILL_WIDTH, SHARPNESS_MAX, SHARPNESS_MIN};
use platoon::simulator::{max_certified_horizon, step_exact};
use platoon::*;
use proptest::prelude::*;

fn params() -> ModelParams {
    ModelParams::default()
}

fn spec(a: f64, r: f64, p: f64) -> PotentialSpec {
    PotentialSpec::performance_sensitive(&params(), a, r, p)
}

/// Central difference with a step scaled to the distance from the pole.
fn central(f: impl Fn(f64) -> f64, s: f64, l: f64) -> f64 {
    let h = 1e-6 * (s - l).min(1.0);
    (f(s + h) - f(s - h)) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn slope_matches_finite_difference(
        s in 5.01f64..25.0,
        a in ALPHA_MIN..=ALPHA_MAX,
        r in 5.001f64..=17.0,
        p in SHARPNESS_MIN..=SHARPNESS_MAX,
    ) {
        let v = spec(a, r, p);
        let fd = central(|x| v.value(x).unwrap(), s, 5.0);
        let an = v.slope(s).unwrap();
        prop_assert!((fd - an).abs() <= 1e-5f64.max(1e-4 * an.abs()), "s={s} fd={fd} an={an}");
    }

    #[test]
    fn curvature_matches_finite_difference(
        s in 5.01f64..25.0,
        a in ALPHA_MIN..=ALPHA_MAX,
        r in 5.001f64..=17.0,
        p in SHARPNESS_MIN..=SHARPNESS_MAX,
    ) {
        let v = spec(a, r, p);
        let fd = central(|x| v.slope(x).unwrap(), s, 5.0);
        let an = v.curvature(s).unwrap();
        prop_assert!((fd - an).abs() <= 1e-5f64.max(1e-4 * an.abs()), "s={s} fd={fd} an={an}");
    }

    #[test]
    fn base_scales_linearly_in_alpha(
        s in 5.01f64..25.0,
        a in ALPHA_MIN..=0.05,
        r in 5.001f64..=17.0,
        p in SHARPNESS_MIN..=SHARPNESS_MAX,
    ) {
        prop_assume!(s < r || s >= r + HILL_WIDTH);
        let one = spec(a, r, p).value(s).unwrap();
        let two = spec(2.0 * a, r, p).value(s).unwrap();
        prop_assert!((two - 2.0 * one).abs() <= 1e-14 * one.abs().max(1e-300));
    }

    #[test]
    fn junctions_are_c2_for_admissible_sharpness(
        a in ALPHA_MIN..=ALPHA_MAX,
        r in 6.0f64..=16.5,
        p in SHARPNESS_MIN..=SHARPNESS_MAX,
    ) {
        let v = spec(a, r, p);
        for at in [r, r + HILL_WIDTH, 20.0] {
            let (ok, what) = junction_continuous(&v, at);
            prop_assert!(ok, "p={p} at s={at}: {what}");
        }
    }

    #[test]
    fn gain_never_lowers_k_below_mu(x in -200.0f64..200.0) {
        prop_assert!(platoon::model::g_gain(x, &params()) >= 0.0);
    }
}

/// One-sided limits of value, slope and curvature at `at` agree within 1e-6
/// (relative above magnitude 1).
fn junction_continuous(v: &PotentialSpec, at: f64) -> (bool, String) {
    const D: f64 = 1e-9;
    let fs: [(&str, &dyn Fn(f64) -> f64); 3] = [
        ("value", &|x| v.value(x).unwrap()),
        ("slope", &|x| v.slope(x).unwrap()),
        ("curvature", &|x| v.curvature(x).unwrap()),
    ];
    for (name, f) in fs {
        let (lo, hi) = (f(at - D), f(at + D));
        if (lo - hi).abs() > 1e-6 * lo.abs().max(hi.abs()).max(1.0) {
            return (false, format!("{name}: {lo} vs {hi}"));
        }
    }
    (true, String::new())
}

#[test]
fn junction_checks_at_named_sharpness() {
    for p in [3.0, 4.0, 6.0, 9.0] {
        for r in [7.0, 10.0, 12.0] {
            let v = spec(0.01, r, p);
            for at in [r, r + HILL_WIDTH, 20.0] {
                let (ok, what) = junction_continuous(&v, at);
                assert!(ok, "p={p} r={r} at {at}: {what}");
            }
        }
    }
    let (ok, what) = junction_continuous(&spec(0.01, 10.0, 2.0), 10.0);
    assert!(!ok, "p = 2 must break curvature continuity at r");
    assert!(what.starts_with("curvature"), "{what}");
}

#[test]
fn potential_blows_up_at_the_minimum_gap() {
    // V ~ alpha (lambda - L)^3 / (s - L) near the pole, so a 1e6 ratio needs
    // s - L = 1e-6 against s - L = 1.
    for (a, r, p) in [(0.001, 6.0, 3.0), (0.01, 9.0, 4.0), (0.1, 17.0, 9.0), (0.001, 12.0, 6.0)] {
        let v = spec(a, r, p);
        let near = v.value(5.0 + 1e-6).unwrap();
        let far = v.value(6.0).unwrap();
        assert!(near > 1e6 * far, "a={a} r={r}: {near} vs {far}");
        assert!(v.value(5.0 + 1e-4).unwrap() > 1e4 * far);
    }
}

fn random_state(rng: &mut impl rand::Rng, n: usize) -> PlatoonState {
    let spacings: Vec<f64> = (0..n - 1).map(|_| rng.random_range(8.0..12.0)).collect();
    let speeds: Vec<f64> = (0..n).map(|_| rng.random_range(27.0..33.0)).collect();
    PlatoonState::from_spacings(0.0, &spacings, speeds).unwrap()
}

#[test]
fn exact_step_is_constant_acceleration_motion() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10_000 {
        let st = random_state(&mut rng, 3);
        let f: Vec<f64> = (0..3).map(|_| rng.random_range(-50.0..50.0)).collect();
        let t = rng.random_range(1e-4..0.5);
        let fv = ForceVector {
            forces: f.clone(),
            gains: vec![0.5; 3],
        };
        let next = step_exact(&st, &fv, t);
        for i in 0..3 {
            let x = st.positions[i] + t * (st.speeds[i] + 0.5 * f[i] * t);
            let v = st.speeds[i] + f[i] * t;
            assert!((next.positions[i] - x).abs() <= 1e-12 * x.abs().max(1.0));
            assert!((next.speeds[i] - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }
}

#[test]
fn objective_is_insensitive_to_record_stride() {
    let cfg = platoon::io::ExperimentConfig::preset("scenario2").unwrap();
    let st = cfg.initial_state().unwrap();
    let v = spec(0.01, 10.0, 4.0);
    let coarse = SimConfig { record_stride: 2, ..cfg.sim };
    let a = evaluate_objective(&st, &cfg.model, &v, &cfg.objective, &cfg.sim).unwrap().value;
    let b = evaluate_objective(&st, &cfg.model, &v, &cfg.objective, &coarse).unwrap().value;
    assert!(((a - b) / a).abs() < 1e-3, "{a} vs {b}");
}

#[test]
fn optimizer_is_deterministic_and_budget_monotone() {
    let cfg = platoon::io::ExperimentConfig::preset("scenario2").unwrap();
    for k in 0..3 {
        let st = cfg.sampled_initial(k).unwrap();
        let run = |budget| {
            let oc = OptimizerConfig { budget, ..cfg.optimizer };
            optimize_parameters(&st, &cfg.model, &cfg.objective, &cfg.sim, &oc).unwrap()
        };
        let small = run(100);
        assert_eq!(small, run(100));
        let big = run(200);
        assert!(big.objective <= small.objective, "{} > {}", big.objective, small.objective);
        for r in [&small, &big] {
            assert!(r.success && r.feasibility.slope_ok && r.objective < OMEGA_PENALTY);
        }
    }
}

#[test]
fn certified_rollouts_stay_strictly_admissible() {
    use rand::SeedableRng;
    let p = params();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let obj = ObjectiveSpec::default();
    let mut checked = 0;
    for k in 0..100 {
        let st = random_state(&mut rng, 7);
        let v = if k % 2 == 0 {
            PotentialSpec::legacy(&p)
        } else {
            let v = spec(0.005, 8.0 + (k % 5) as f64, 4.0);
            assert!(check_feasible(&v, &obj).unwrap().feasible());
            v
        };
        let (period, steps) = certifiable_period(&st, &p, &v, 60.0);
        let cfg = SimConfig {
            period,
            tf: period * steps as f64,
            ..Default::default()
        };
        let traj = simulate(&st, &p, &v, &cfg).unwrap();
        assert!(traj.completed());
        for row in &traj.rows {
            assert!(row.spacings.iter().all(|&s| s > p.min_gap));
            assert!(row.speeds.iter().all(|&x| x > 0.0 && x < p.speed_limit));
        }
        checked += 1;
    }
    assert_eq!(checked, 100);
}

/// Largest `0.01 / 2^k` certified at every step over `horizon`.
fn certifiable_period(st: &PlatoonState, p: &ModelParams, v: &PotentialSpec, horizon: f64) -> (f64, usize) {
    let mut t = 0.01;
    for _ in 0..12 {
        let steps = (horizon / t).round() as usize;
        let h = max_certified_horizon(st, p, v, t, steps).unwrap();
        if h.certified_steps == steps {
            return (t, steps);
        }
        t /= 2.0;
    }
    panic!("no certifiable period found");
}

#[test]
fn zoh_and_rk4_agree_at_fine_period() {
    let cfg = platoon::io::ExperimentConfig::preset("scenario2").unwrap();
    let st = cfg.initial_state().unwrap();
    let v = spec(0.001, 9.0, 5.0);
    let zoh = SimConfig {
        period: 1e-3,
        record_stride: 60_000,
        ..cfg.sim
    };
    let rk4 = SimConfig {
        integrator: Integrator::ReferenceRk4,
        rk4_substeps: 10,
        ..zoh
    };
    let a = simulate(&st, &cfg.model, &v, &zoh).unwrap().final_state().unwrap();
    let b = simulate(&st, &cfg.model, &v, &rk4).unwrap().final_state().unwrap();
    for i in 0..7 {
        assert!((a.positions[i] - b.positions[i]).abs() < 1e-3, "x_{}: {} vs {}", i + 1, a.positions[i], b.positions[i]);
        assert!((a.speeds[i] - b.speeds[i]).abs() < 1e-3);
    }
}
