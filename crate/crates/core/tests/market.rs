use maxsub::market::{simulate_wealth, to_fraction_process, FeedbackTable, MarketParams, Strategy};
use maxsub::stats::mean_and_se;
use maxsub::stochastic::{gen_brownian, girsanov_weight};
use maxsub::{Error, ProcessPath, TimeGrid};
use proptest::prelude::*;

fn setup(steps: usize, paths: usize, seed: u64) -> (MarketParams, maxsub::PathBatch) {
    let market = MarketParams::single(0.05, 0.2, 1.0).unwrap();
    let b = gen_brownian(TimeGrid::new(1.0, steps).unwrap(), paths, 1, seed).unwrap();
    (market, b)
}

#[test]
fn theta_reproduces_drift() {
    let m = MarketParams::new(vec![0.05, 0.08], vec![vec![0.2, 0.0, 0.1], vec![0.05, 0.3, 0.0]], 2.0).unwrap();
    let theta = m.theta();
    let s = m.sigma();
    for i in 0..2 {
        let got: f64 = (0..3).map(|j| s[(i, j)] * theta[j]).sum();
        assert!((got - m.mu()[i]).abs() < 1e-14);
    }
    assert!(m.condition_number() >= 1.0);
}

#[test]
fn bad_markets_rejected() {
    assert!(MarketParams::single(0.05, 0.2, 0.0).is_err());
    assert!(MarketParams::new(vec![0.1, 0.1], vec![vec![0.2], vec![0.3]], 1.0).is_err());
    assert!(MarketParams::new(vec![0.1, 0.1], vec![vec![0.2, 0.1], vec![0.4, 0.2]], 1.0).is_err());
}

#[test]
fn null_strategy_keeps_capital() {
    let (market, b) = setup(10, 100, 1);
    let w = simulate_wealth(&Strategy::zero(1), &market, &b).unwrap();
    for m in 0..100 {
        for i in 0..11 {
            assert_eq!(w.at(m, i), 1.0);
        }
    }
}

#[test]
fn unit_fraction_tracks_stock() {
    let (market, b) = setup(50, 1000, 2);
    let w = simulate_wealth(&Strategy::ConstantFraction(vec![1.0]), &market, &b).unwrap();
    for (m, x) in w.terminal().iter().enumerate() {
        let stock = ((0.05 - 0.02) + 0.2 * b.w(m, 50)[0]).exp();
        assert!((x - stock).abs() < 1e-12 * stock);
    }
}

#[test]
fn log_wealth_mean_matches_lognormal() {
    let (market, b) = setup(20, 100_000, 3);
    for f in [0.5, 1.25, 2.0] {
        let w = simulate_wealth(&Strategy::ConstantFraction(vec![f]), &market, &b).unwrap();
        let logs: Vec<f64> = w.terminal().iter().map(|x| x.ln()).collect();
        let (m, se) = mean_and_se(&logs);
        let oracle = f * 0.05 - f * f * 0.02;
        assert!((m - oracle).abs() < 3.0 * se, "f {f}: {m} vs {oracle}");
    }
}

#[test]
fn dimension_mismatch_rejected() {
    let (market, b) = setup(5, 10, 1);
    let r = simulate_wealth(&Strategy::ConstantFraction(vec![1.0, 1.0]), &market, &b);
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
}

#[test]
fn amount_strategy_stays_nonnegative_and_round_trips() {
    let (market, b) = setup(50, 2000, 4);
    let s = Strategy::ConstantAmount(vec![3.0]);
    let w = simulate_wealth(&s, &market, &b).unwrap();
    assert!(w.min() >= 0.0);
    assert!(w.absorbed_paths > 0);
    let frac = to_fraction_process(&s, &w).unwrap();
    assert!(frac.absorbed_nodes > 0);
    for m in 0..2000 {
        for i in 0..51 {
            let x = w.at(m, i);
            let f = frac.fractions.scalar(m, i);
            if x > 0.0 {
                assert!((f - 3.0 / x).abs() <= 1e-12 * f.abs());
            } else {
                assert_eq!(f, 0.0);
            }
        }
    }
    let again = simulate_wealth(&Strategy::FractionProcess(frac), &market, &b).unwrap();
    for m in 0..2000 {
        for i in 0..51 {
            let (x, y) = (w.at(m, i), again.at(m, i));
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}

#[test]
fn fraction_round_trip_is_identity() {
    let (market, b) = setup(10, 50, 5);
    let s = Strategy::ConstantFraction(vec![0.7]);
    let w = simulate_wealth(&s, &market, &b).unwrap();
    let f = to_fraction_process(&s, &w).unwrap();
    assert_eq!(f.fractions.constant_value(), Some(&[0.7][..]));
    let zero = to_fraction_process(&Strategy::zero(1), &simulate_wealth(&Strategy::zero(1), &market, &b).unwrap())
        .unwrap();
    assert!((0..50).all(|m| zero.fractions.scalar(m, 3) == 0.0));
}

#[test]
fn feedback_table_interpolates_linearly() {
    let t = FeedbackTable {
        times: vec![0.0, 0.5],
        wealth: vec![1.0, 2.0],
        amounts: vec![vec![0.0], vec![1.0], vec![2.0], vec![4.0]],
    };
    let mut out = [0.0];
    t.amount(0.1, 1.5, &mut out);
    assert!((out[0] - 0.5).abs() < 1e-15);
    t.amount(0.7, 1.25, &mut out);
    assert!((out[0] - 2.5).abs() < 1e-15);
    t.amount(0.7, 10.0, &mut out);
    assert_eq!(out[0], 4.0);
}

#[test]
fn wealth_is_q_supermartingale() {
    let (market, b) = setup(20, 50_000, 6);
    let q = ProcessPath::constant(50_000, 21, market.theta().iter().map(|v| -v).collect());
    let weight = girsanov_weight(&q, &b).unwrap().terminal();
    for s in [Strategy::ConstantFraction(vec![1.5]), Strategy::ConstantAmount(vec![2.0])] {
        let w = simulate_wealth(&s, &market, &b).unwrap();
        let vals: Vec<f64> = w.terminal().iter().zip(&weight).map(|(x, z)| x * z).collect();
        let (m, se) = mean_and_se(&vals);
        assert!(m <= 1.0 + 3.0 * se, "{m} {se}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn amount_and_fraction_parameterizations_agree(a in 0.1f64..2.0, seed in 0u64..500) {
        let (market, b) = setup(8, 32, seed);
        let s = Strategy::ConstantAmount(vec![a]);
        let w = simulate_wealth(&s, &market, &b).unwrap();
        let f = to_fraction_process(&s, &w).unwrap();
        let again = simulate_wealth(&Strategy::FractionProcess(f), &market, &b).unwrap();
        prop_assert!(w.wealth.max_abs_diff(&again.wealth) <= 1e-12);
        prop_assert!(w.min() >= 0.0);
    }
}
