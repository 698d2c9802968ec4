use maxsub::bsde::{
    admissibility_drift, certainty_equivalent_oracle, certainty_equivalent_value, solve_backward,
    solve_linear_dual_rep, subsolution_residual, SolverConfig,
};
use maxsub::duality::ModelPair;
use maxsub::generators::{make_ce_generator, transform_g_expectation};
use maxsub::market::{simulate_wealth, MarketParams, Strategy, WealthPath};
use maxsub::stats::mean_and_se;
use maxsub::stochastic::gen_brownian;
use maxsub::{Generator, PathBatch, ProcessPath, RegressionBasis, StateSelector, TimeGrid, Utility};
use proptest::prelude::*;

const MU: f64 = 0.05;
const SIGMA: f64 = 0.2;

fn setup(steps: usize, count: usize, seed: u64, fraction: f64) -> (PathBatch, WealthPath) {
    let market = MarketParams::single(MU, SIGMA, 1.0).unwrap();
    let paths = gen_brownian(TimeGrid::new(1.0, steps).unwrap(), count, 1, seed).unwrap();
    let wealth = simulate_wealth(&Strategy::ConstantFraction(vec![fraction]), &market, &paths).unwrap();
    (paths, wealth)
}

fn log_mean(f: f64) -> f64 {
    f * MU - 0.5 * f * f * SIGMA * SIGMA
}

#[test]
fn zero_generator_constant_terminal() {
    let (paths, wealth) = setup(20, 5000, 1, 1.0);
    let h = vec![2.5; 5000];
    let sol = solve_backward(&Generator::zero(), &h, &wealth, &paths, &SolverConfig::default()).unwrap();
    for m in (0..5000).step_by(97) {
        for i in 0..=20 {
            assert!((sol.y.scalar(m, i) - 2.5).abs() <= 1e-10);
            if i < 20 {
                assert!(sol.z.at(m, i)[0].abs() <= 1e-10);
            }
        }
    }
    assert_eq!(sol.y.scalar(0, 20), 2.5);
}

#[test]
fn brownian_terminal_has_unit_control() {
    let (paths, wealth) = setup(50, 100_000, 2, 1.0);
    let h = paths.terminal(0);
    let config = SolverConfig {
        basis: RegressionBasis::polynomial(4).with_state(StateSelector::Brownian(0)),
        ..SolverConfig::default()
    };
    let sol = solve_backward(&Generator::zero(), &h, &wealth, &paths, &config).unwrap();
    let (_, se) = mean_and_se(&h);
    assert!(sol.y0.abs() < 3.0 * se.max(sol.y0_std_error));
    // dY = -Z dW here, so W_T = int (-Z) dW gives Z = -1
    let mut total = 0.0;
    for m in 0..100_000 {
        for i in 0..50 {
            total += (sol.z.at(m, i)[0] + 1.0).abs();
        }
    }
    assert!(total / 5e6 <= 0.05);
}

#[test]
fn log_certainty_equivalent_bsde() {
    let (paths, wealth) = setup(50, 50_000, 3, 1.0);
    let g = make_ce_generator(Utility::Log).unwrap();
    let sol = solve_backward(&g, &wealth.terminal(), &wealth, &paths, &SolverConfig::default()).unwrap();
    let exact = log_mean(1.0).exp();
    assert!((sol.y0 - exact).abs() / exact <= 0.01, "{}", sol.y0);
    assert_eq!(sol.floor_hits, 0);
}

#[test]
fn explicit_step_leaving_the_domain_is_redone() {
    // a degree-4 fit with few paths and a leveraged strategy overshoots on one node
    let (paths, wealth) = setup(10, 1000, 42, 3.0);
    let g = make_ce_generator(Utility::Log).unwrap();
    let sol = solve_backward(&g, &wealth.terminal(), &wealth, &paths, &SolverConfig::default()).unwrap();
    assert!(sol.floor_hits >= 1);
    for m in 0..1000 {
        for i in 0..=10 {
            let y = sol.y.scalar(m, i);
            assert!(y.is_finite() && y >= SolverConfig::default().y_floor);
            assert!(sol.z.at(m, i)[0].is_finite());
        }
    }
    let exact = log_mean(3.0).exp();
    assert!((sol.y0 - exact).abs() / exact <= 0.03, "{}", sol.y0);
}

#[test]
fn oracle_of_constant_is_constant() {
    let (paths, wealth) = setup(10, 1000, 4, 1.0);
    for u in [Utility::Log, Utility::Power { r: 0.3 }, Utility::Exponential { r: 2.0 }] {
        let ce = certainty_equivalent_oracle(&u, &vec![1.7; 1000], &wealth, &paths, &RegressionBasis::default())
            .unwrap();
        for m in (0..1000).step_by(37) {
            for i in 0..=10 {
                assert!((ce.y.scalar(m, i) - 1.7).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn oracle_log_and_power_moments() {
    let (paths, wealth) = setup(10, 100_000, 5, 1.5);
    let h = wealth.terminal();
    let m = log_mean(1.5);
    let s2 = (1.5 * SIGMA) * (1.5 * SIGMA);
    let ce = certainty_equivalent_oracle(&Utility::Log, &h, &wealth, &paths, &RegressionBasis::default()).unwrap();
    assert!((ce.y0 - m.exp()).abs() < 3.0 * ce.y0_std_error);
    assert_eq!(ce.y.terminal(), h);
    // (E[H^r])^{1/r} = exp(m + r s^2 / 2) for log H ~ N(m, s^2)
    let r = 0.2;
    let (y0, se) = certainty_equivalent_value(&Utility::Power { r }, &h).unwrap();
    let oracle = (m + 0.5 * r * s2).exp();
    assert!((y0 - oracle).abs() < 3.0 * se, "{y0} {oracle} {se}");
}

#[test]
fn oracle_rejects_outside_domain() {
    let (paths, wealth) = setup(4, 10, 6, 1.0);
    let mut h = vec![1.0; 10];
    h[3] = -0.5;
    assert!(certainty_equivalent_oracle(&Utility::Log, &h, &wealth, &paths, &RegressionBasis::default()).is_err());
}

#[test]
fn dual_rep_reference_model_is_sample_mean() {
    let (paths, wealth) = setup(10, 2000, 7, 1.0);
    let h = wealth.terminal();
    let model = ModelPair::zero(&paths);
    let gstar = ProcessPath::constant(2000, 11, vec![0.0]);
    let (v, _) = solve_linear_dual_rep(&model, &gstar, &h, &paths).unwrap();
    assert!((v - mean_and_se(&h).0).abs() < 1e-12);
}

#[test]
fn dual_rep_deterministic_discount() {
    let (paths, wealth) = setup(25, 2000, 8, 1.0);
    let h = wealth.terminal();
    let (b, c) = (0.3, 0.07);
    let model = ModelPair::constant(&paths, b, vec![0.0]).unwrap();
    let gstar = ProcessPath::constant(2000, 26, vec![c]);
    let (v, _) = solve_linear_dual_rep(&model, &gstar, &h, &paths).unwrap();
    let oracle = (-b).exp() * mean_and_se(&h).0 + c * (1.0 - (-b).exp()) / b;
    assert!((v - oracle).abs() < 1e-12, "{v} {oracle}");
}

#[test]
fn dual_rep_rejects_infinite_penalty() {
    let (paths, wealth) = setup(5, 100, 9, 1.0);
    let gstar = ProcessPath::constant(100, 6, vec![f64::INFINITY]);
    let r = solve_linear_dual_rep(&ModelPair::zero(&paths), &gstar, &wealth.terminal(), &paths);
    assert!(matches!(r, Err(maxsub::Error::InfeasibleModel(_))));
}

#[test]
fn dual_rep_overflow_direction() {
    let (paths, wealth) = setup(5, 100, 9, 1.0);
    let gstar = ProcessPath::constant(100, 6, vec![0.0]);
    let model = ModelPair::constant(&paths, -1e6, vec![0.0]).unwrap();
    let (v, se) = solve_linear_dual_rep(&model, &gstar, &wealth.terminal(), &paths).unwrap();
    assert_eq!(v, f64::INFINITY);
    assert!(se.is_nan());
    let neg: Vec<f64> = wealth.terminal().iter().map(|x| -x).collect();
    let r = solve_linear_dual_rep(&model, &gstar, &neg, &paths);
    assert!(matches!(r, Err(maxsub::Error::NumericOverflow(_))));
}

#[test]
fn trivial_triple_is_subsolution() {
    let (paths, wealth) = setup(20, 1000, 10, 1.0);
    let h: Vec<f64> = wealth.terminal().iter().map(|x| x.max(1.0)).collect();
    let y = ProcessPath::constant(1000, 21, vec![1.0]);
    let z = ProcessPath::constant(1000, 21, vec![0.0]);
    let g = make_ce_generator(Utility::Log).unwrap();
    let res = subsolution_residual(&y, &z, &g, &h, &paths, 1).unwrap();
    assert_eq!(res.worst(), 0.0);
    let top = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let y = ProcessPath::constant(1000, 21, vec![top + 1.0]);
    let res = subsolution_residual(&y, &z, &g, &h, &paths, 1).unwrap();
    let bottom = h.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!((res.terminal - (top + 1.0 - bottom)).abs() < 1e-12);
    let flat = vec![1.3; 1000];
    let y = ProcessPath::constant(1000, 21, vec![2.3]);
    let res = subsolution_residual(&y, &z, &g, &flat, &paths, 1).unwrap();
    assert!((res.terminal - 1.0).abs() < 1e-12);
}

#[test]
fn solver_output_nearly_subsolution() {
    let steps = 50;
    let (paths, wealth) = setup(steps, 20_000, 11, 1.0);
    let g = make_ce_generator(Utility::Log).unwrap();
    let h = wealth.terminal();
    let sol = solve_backward(&g, &h, &wealth, &paths, &SolverConfig::default()).unwrap();
    let res = subsolution_residual(&sol.y, &sol.z, &g, &h, &paths, 5).unwrap();
    assert_eq!(res.terminal, 0.0);
    let mut lipschitz: f64 = 1.0;
    for m in (0..20_000).step_by(7) {
        for i in 0..steps {
            let (y, z) = (sol.y.scalar(m, i), sol.z.at(m, i)[0]);
            lipschitz = lipschitz.max(z.abs() / y + 0.5 * z * z / (y * y));
        }
    }
    let dt = 1.0 / steps as f64;
    assert!(res.dynamics <= 5.0 * dt * lipschitz, "{}", res.dynamics);
}

#[test]
fn ce_generators_have_zero_drift() {
    let (paths, wealth) = setup(20, 10_000, 12, 1.0);
    for u in [Utility::Log, Utility::Power { r: 0.4 }, Utility::Exponential { r: 1.0 }] {
        let g = make_ce_generator(u).unwrap();
        let sol = solve_backward(&g, &wealth.terminal(), &wealth, &paths, &SolverConfig::default()).unwrap();
        let d = admissibility_drift(&u, &g, &sol);
        assert!(d.max_abs <= 1e-12, "{u:?}: {}", d.max_abs);
    }
}

#[test]
fn norm_margin_generator_is_admissible() {
    let (paths, wealth) = setup(20, 10_000, 13, 1.0);
    let u = Utility::Exponential { r: 1.0 };
    let g = transform_g_expectation(Generator::norm(1.0).unwrap(), u).unwrap();
    let sol = solve_backward(&g, &wealth.terminal(), &wealth, &paths, &SolverConfig::default()).unwrap();
    let d = admissibility_drift(&u, &g, &sol);
    assert!(d.min >= -1e-12);
    assert_eq!(d.violation_fraction, 0.0);

    let zero = solve_backward(&Generator::zero(), &wealth.terminal(), &wealth, &paths, &SolverConfig::default())
        .unwrap();
    let d = admissibility_drift(&Utility::Log, &Generator::zero(), &zero);
    assert!(d.min < 0.0 && d.violation_fraction > 0.0);
}

#[test]
fn comparison_and_stability_in_endowment() {
    let (paths, wealth) = setup(20, 20_000, 14, 1.0);
    let g = make_ce_generator(Utility::Log).unwrap();
    let x = wealth.terminal();
    let cfg = SolverConfig::default();
    let mut last = f64::INFINITY;
    for n in [1.0, 2.0, 4.0, 8.0] {
        let h: Vec<f64> = x.iter().map(|v| v + 1.0 / n).collect();
        let sol = solve_backward(&g, &h, &wealth, &paths, &cfg).unwrap();
        assert!(sol.y0 <= last + 3.0 * sol.y0_std_error);
        last = sol.y0;
    }
    let base = solve_backward(&g, &x, &wealth, &paths, &cfg).unwrap();
    assert!(base.y0 <= last + 3.0 * base.y0_std_error);
}

#[test]
fn solution_exports() {
    let (paths, wealth) = setup(5, 200, 15, 1.0);
    let sol = solve_backward(&Generator::zero(), &wealth.terminal(), &wealth, &paths, &SolverConfig::default())
        .unwrap();
    let dir = std::env::temp_dir().join(format!("maxsub-bsde-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    sol.write_json(&dir.join("s.json")).unwrap();
    sol.write_csv(&dir.join("s.csv")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("s.json")).unwrap()).unwrap();
    assert!(json.get("y0").is_some());
    let csv = std::fs::read_to_string(dir.join("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    std::fs::remove_dir_all(&dir).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn log_certainty_equivalent_is_concave(
        a in prop::collection::vec(0.1f64..5.0, 16),
        b in prop::collection::vec(0.1f64..5.0, 16),
        lambda in 0.0f64..1.0,
    ) {
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
        let ce = |h: &[f64]| certainty_equivalent_value(&Utility::Log, h).unwrap().0;
        prop_assert!(ce(&mix) >= lambda * ce(&a) + (1.0 - lambda) * ce(&b) - 1e-12);
    }

    #[test]
    fn certainty_equivalent_is_monotone(
        a in prop::collection::vec(0.1f64..5.0, 16),
        bump in prop::collection::vec(0.0f64..1.0, 16),
        r in 0.05f64..0.95,
    ) {
        let up: Vec<f64> = a.iter().zip(&bump).map(|(x, e)| x + e).collect();
        let u = Utility::Power { r };
        prop_assert!(certainty_equivalent_value(&u, &up).unwrap().0 >= certainty_equivalent_value(&u, &a).unwrap().0 - 1e-12);
    }
}
