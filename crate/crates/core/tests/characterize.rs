use maxsub::bsde::{solve_backward, SolverConfig};
use maxsub::characterize::{foc_residual, max_principle_residual, solve_adjoint, solve_adjoint_with_terminal};
use maxsub::duality::{subgradient_model, ModelPair};
use maxsub::generators::make_ce_generator;
use maxsub::market::{simulate_wealth, to_fraction_process, MarketParams, Strategy, WealthPath};
use maxsub::stochastic::gen_brownian;
use maxsub::{Error, Generator, PathBatch, ProcessPath, RegressionBasis, TimeGrid, Utility};

const MU: f64 = 0.05;
const SIGMA: f64 = 0.2;
const THETA: f64 = MU / SIGMA;

fn market() -> MarketParams {
    MarketParams::single(MU, SIGMA, 1.0).unwrap()
}

fn setup(steps: usize, count: usize, seed: u64, strategy: &Strategy) -> (PathBatch, WealthPath) {
    let paths = gen_brownian(TimeGrid::new(1.0, steps).unwrap(), count, 1, seed).unwrap();
    let wealth = simulate_wealth(strategy, &market(), &paths).unwrap();
    (paths, wealth)
}

#[test]
fn idle_strategy_and_reference_model() {
    let s = Strategy::zero(1);
    let (paths, wealth) = setup(20, 2000, 1, &s);
    let frac = to_fraction_process(&s, &wealth).unwrap();
    let model = ModelPair::zero(&paths);
    let adj = solve_adjoint(&model, &frac, &market(), &wealth, &paths, &RegressionBasis::default()).unwrap();
    for m in (0..2000).step_by(13) {
        for i in 0..=20 {
            assert!((adj.p.scalar(m, i) - 1.0).abs() <= 1e-8);
            assert!(adj.k.at(m, i)[0].abs() <= 1e-8);
        }
    }
    assert_eq!(adj.positive_fraction(), 1.0);
}

#[test]
fn worst_case_drift_makes_adjoint_deterministic() {
    let s = Strategy::ConstantFraction(vec![1.25]);
    let (paths, wealth) = setup(100, 20_000, 2, &s);
    let frac = to_fraction_process(&s, &wealth).unwrap();
    let beta = 0.1;
    let model = ModelPair::constant(&paths, beta, vec![-THETA]).unwrap();
    let adj = solve_adjoint(&model, &frac, &market(), &wealth, &paths, &RegressionBasis::default()).unwrap();
    let terminal = (-beta).exp();
    for m in (0..20_000).step_by(101) {
        assert_eq!(adj.p.scalar(m, 100), terminal);
        for i in 0..100 {
            assert!((adj.p.scalar(m, i) - terminal).abs() <= 1e-3);
            assert!(adj.k.at(m, i)[0].abs() <= 1e-3);
        }
    }
    let res = max_principle_residual(&adj, market().theta(), &model).unwrap();
    assert!(res.l2 <= 1e-3 && res.max <= 1e-3);
}

#[test]
fn residual_arithmetic() {
    let s = Strategy::zero(1);
    let (paths, wealth) = setup(10, 500, 3, &s);
    let frac = to_fraction_process(&s, &wealth).unwrap();
    let model = ModelPair::zero(&paths);
    let adj = solve_adjoint(&model, &frac, &market(), &wealth, &paths, &RegressionBasis::default()).unwrap();
    let res = max_principle_residual(&adj, &[0.25], &model).unwrap();
    assert!((res.l2 - 0.25).abs() < 1e-8 && (res.max - 0.25).abs() < 1e-8);
    assert_eq!(res.nodes, 500 * 10);
}

#[test]
fn adjoint_is_linear_in_terminal_value() {
    let s = Strategy::ConstantFraction(vec![1.0]);
    let (paths, wealth) = setup(20, 5000, 4, &s);
    let frac = to_fraction_process(&s, &wealth).unwrap();
    let model = ModelPair::constant(&paths, 0.0, vec![-0.1]).unwrap();
    let basis = RegressionBasis::default();
    let terminal: Vec<f64> = wealth.terminal().iter().map(|x| x.sqrt()).collect();
    let scaled: Vec<f64> = terminal.iter().map(|v| 3.0 * v).collect();
    let a = solve_adjoint_with_terminal(&model, &frac, &market(), &wealth, &paths, &basis, &terminal).unwrap();
    let b = solve_adjoint_with_terminal(&model, &frac, &market(), &wealth, &paths, &basis, &scaled).unwrap();
    for m in (0..5000).step_by(17) {
        for i in 0..=20 {
            let (p, q) = (a.p.scalar(m, i), b.p.scalar(m, i));
            assert!((q - 3.0 * p).abs() <= 1e-8 * q.abs());
            let (k, l) = (a.k.at(m, i)[0], b.k.at(m, i)[0]);
            assert!((l - 3.0 * k).abs() <= 1e-8 * l.abs().max(1e-8));
        }
    }
}

#[test]
fn saddle_adjoint_is_positive() {
    let s = Strategy::ConstantFraction(vec![1.25]);
    let (paths, wealth) = setup(50, 20_000, 5, &s);
    let g = make_ce_generator(Utility::Log).unwrap();
    let sol = solve_backward(&g, &wealth.terminal(), &wealth, &paths, &SolverConfig::default()).unwrap();
    let model = subgradient_model(&sol, &g).unwrap();
    let frac = to_fraction_process(&s, &wealth).unwrap();
    let adj = solve_adjoint(&model, &frac, &market(), &wealth, &paths, &RegressionBasis::default()).unwrap();
    assert!(adj.positive_fraction() >= 0.999);
    let res = max_principle_residual(&adj, market().theta(), &model).unwrap();
    assert!(res.l2 < 0.01, "{}", res.l2);
}

#[test]
fn foc_gaps() {
    let s = Strategy::ConstantFraction(vec![1.25]);
    let (paths, wealth) = setup(20, 10_000, 6, &s);
    let g = make_ce_generator(Utility::Log).unwrap();
    let sol = solve_backward(&g, &wealth.terminal(), &wealth, &paths, &SolverConfig::default()).unwrap();
    let model = subgradient_model(&sol, &g).unwrap();
    let at_saddle = foc_residual(&g, &model, &sol).unwrap();
    assert!(at_saddle.max_abs <= 1e-9, "{}", at_saddle.max_abs);

    // q = Z / Y is negative here, so q + 0.1 stays feasible and the gap is 0.1 Z < 0
    let perturbed = model.shifted(0.0, &[0.1]).unwrap();
    let off = foc_residual(&g, &perturbed, &sol).unwrap();
    assert!(off.negative_fraction > 0.0 && off.mean < 0.0);

    let infeasible = model.shifted(0.5, &[0.0]).unwrap();
    assert!(matches!(foc_residual(&g, &infeasible, &sol), Err(Error::InfeasibleModel(_))));
}

#[test]
fn foc_gap_vanishes_without_control() {
    let s = Strategy::zero(1);
    let (paths, wealth) = setup(10, 1000, 7, &s);
    let g = make_ce_generator(Utility::Log).unwrap();
    let sol = solve_backward(&g, &vec![1.5; 1000], &wealth, &paths, &SolverConfig::default()).unwrap();
    let stats = foc_residual(&g, &ModelPair::zero(&paths), &sol).unwrap();
    assert!(stats.max_abs <= 1e-12);
    let zero = solve_backward(&Generator::zero(), &vec![1.5; 1000], &wealth, &paths, &SolverConfig::default())
        .unwrap();
    assert!(foc_residual(&Generator::zero(), &ModelPair::zero(&paths), &zero).unwrap().max_abs <= 1e-12);
    let bad = ProcessPath::constant(1000, 11, vec![1.0]);
    let r = solve_adjoint_with_terminal(
        &ModelPair::zero(&paths),
        &to_fraction_process(&s, &wealth).unwrap(),
        &market(),
        &wealth,
        &paths,
        &RegressionBasis::default(),
        &bad.terminal()[..10],
    );
    assert!(r.is_err());
}
