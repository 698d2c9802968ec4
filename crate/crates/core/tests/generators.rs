use maxsub::generators::{
    conjugate, conjugate_numeric, fenchel_young_gap, make_ce_generator, subgradient, transform_g_expectation,
    verify_conditions, ConjugateSearch, ConditionFlags, SampleGrid,
};
use maxsub::{ConjugateValue, Generator, GeneratorSpec, Utility};
use proptest::prelude::*;

fn ce_log() -> Generator {
    make_ce_generator(Utility::Log).unwrap()
}

#[test]
fn log_generator_matches_closed_form() {
    let g = ce_log();
    for (y, z) in [(1.0, 0.3), (0.5, -2.0), (4.0, 1.0)] {
        assert!((g.eval(y, &[z]) - z * z / (2.0 * y)).abs() < 1e-15);
    }
}

#[test]
fn power_and_exponential_generators() {
    let r = 0.3;
    let g = make_ce_generator(Utility::Power { r }).unwrap();
    // -u''/(2u') = (1 - r) / (2y)
    assert!((g.eval(2.0, &[0.5]) - (1.0 - r) * 0.25 / 4.0).abs() < 1e-14);
    let g = make_ce_generator(Utility::Exponential { r: 1.5 }).unwrap();
    assert!((g.eval(-3.0, &[2.0]) - 1.5 * 4.0 / 2.0).abs() < 1e-14);
}

#[test]
fn log_conjugate_is_an_indicator() {
    let g = ce_log();
    let s = ConjugateSearch::default();
    assert_eq!(conjugate(&g, -0.5, &[1.0], &s).value(), 0.0);
    assert!(!conjugate(&g, -0.4, &[1.0], &s).is_finite());
    let numeric = conjugate_numeric(&g, -0.6, &[1.0], &s);
    assert!(numeric.value().abs() < 1e-6);
    assert!(!conjugate_numeric(&g, -0.4, &[1.0], &s).is_finite());
}

#[test]
fn subgradient_of_log_generator() {
    let g = ce_log();
    let (beta, q) = subgradient(&g, 2.0, &[0.5]).unwrap();
    assert!((beta + 0.25 * 0.25 / 2.0).abs() < 1e-15);
    assert!((q[0] - 0.25).abs() < 1e-15);
    assert!(fenchel_young_gap(&g, 2.0, &[0.5], beta, &q).unwrap().abs() < 1e-12);
}

#[test]
fn g_expectation_of_zero_is_certainty_equivalent() {
    for u in [Utility::Log, Utility::Power { r: 0.5 }, Utility::Exponential { r: 0.7 }] {
        let t = transform_g_expectation(Generator::zero(), u).unwrap();
        let ce = make_ce_generator(u).unwrap();
        for (y, z) in [(0.5, 0.1), (1.5, -1.0), (3.0, 2.0)] {
            assert!((t.eval(y, &[z]) - ce.eval(y, &[z])).abs() < 1e-12);
        }
    }
}

#[test]
fn g_expectation_ito_identity() {
    // Y = u(C) solves dY = base(Y, Z) dt - Z dW with Z = u'(C) Z^C; the drift of
    // u(C) from dC = g dt - Z^C dW is u' g + u''|Z^C|^2 / 2
    let u = Utility::Exponential { r: 1.0 };
    let base = Generator::norm(1.0).unwrap();
    let g = transform_g_expectation(base.clone(), u).unwrap();
    for (c, zc) in [(0.4, 0.3), (1.0, -0.8), (2.5, 1.2)] {
        let drift = u.du(c) * g.eval(c, &[zc]) + 0.5 * u.d2u(c) * zc * zc;
        let expected = base.eval(u.u(c), &[u.du(c) * zc]);
        assert!((drift - expected).abs() < 1e-12);
        // closed form |z| + r |z|^2 / 2
        assert!((g.eval(c, &[zc]) - (zc.abs() + 0.5 * zc * zc)).abs() < 1e-12);
    }
}

#[test]
fn log_conditions_table() {
    let report = verify_conditions(&ce_log(), &SampleGrid::default());
    let f = report.flags();
    assert!(f.conv && f.nor && f.pos && f.lsc);
    assert!(report.qg.blows_up_near_zero);
    assert!(!report.qg.passed);
}

#[test]
fn negative_generator_fails_positivity() {
    let g = Generator::custom("minus-norm", false, ConditionFlags::default(), |_, z| -z[0].abs());
    let report = verify_conditions(&g, &SampleGrid::default());
    assert!(!report.pos.passed);
    assert!(report.nor.passed);
}

#[test]
fn spec_round_trip() {
    let text = r#"{"kind":"g-expectation","utility":{"kind":"exponential","r":1.0},"base":{"kind":"norm","params":{"coef":1.0}}}"#;
    let spec: GeneratorSpec = serde_json::from_str(text).unwrap();
    let g = spec.build().unwrap();
    assert!((g.eval(1.0, &[2.0]) - 4.0).abs() < 1e-12);
    let again: GeneratorSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
    assert_eq!(again, spec);
    assert!(serde_json::from_str::<GeneratorSpec>(r#"{"kind":"zero","bogus":1}"#).is_err());
    assert!(GeneratorSpec::new("nonsense").build().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fenchel_young_inequality(
        y in 0.05f64..10.0, z in -5.0f64..5.0, q in -3.0f64..3.0, slack in 0.0f64..2.0,
    ) {
        let g = ce_log();
        let beta = -q * q / 2.0 - slack;
        let gstar = conjugate(&g, beta, &[q], &ConjugateSearch::default()).value();
        prop_assert!(beta * y + q * z - g.eval(y, &[z]) <= gstar + 1e-12);
        prop_assert!(fenchel_young_gap(&g, y, &[z], beta, &[q]).unwrap() <= 1e-12);
    }

    #[test]
    fn normalized_generators_have_nonnegative_conjugate(
        beta in -2.0f64..2.0, q in -2.0f64..2.0, which in 0usize..3,
    ) {
        let g = match which {
            0 => ce_log(),
            1 => Generator::quadratic(0.5).unwrap(),
            _ => Generator::norm(1.0).unwrap(),
        };
        match conjugate(&g, beta, &[q], &ConjugateSearch::default()) {
            ConjugateValue::Finite { value, .. } => prop_assert!(value >= -1e-12),
            ConjugateValue::Infinite => {}
        }
    }

    #[test]
    fn conjugate_reverses_order(beta in -1.0f64..0.0, q in -2.0f64..2.0, c in 0.1f64..2.0) {
        // coef c <= coef c + 1 pointwise, so the conjugates are ordered the other way
        let s = ConjugateSearch::default();
        for (small, large) in [
            (Generator::quadratic(c).unwrap(), Generator::quadratic(c + 1.0).unwrap()),
            (Generator::relative_quadratic(c).unwrap(), Generator::relative_quadratic(c + 1.0).unwrap()),
        ] {
            for b in [beta, 0.0] {
                let lo = conjugate(&large, b, &[q], &s).value();
                prop_assert!(conjugate(&small, b, &[q], &s).value() >= lo - 1e-12);
            }
        }
    }

    #[test]
    fn subgradient_closes_fenchel_young(y in 0.1f64..10.0, z in -5.0f64..5.0, r in 0.05f64..0.95) {
        for g in [ce_log(), make_ce_generator(Utility::Power { r }).unwrap()] {
            let (beta, q) = subgradient(&g, y, &[z]).unwrap();
            let gap = fenchel_young_gap(&g, y, &[z], beta, &q).unwrap();
            prop_assert!(gap.abs() < 1e-9 * (1.0 + g.eval(y, &[z]).abs()));
        }
    }
}
