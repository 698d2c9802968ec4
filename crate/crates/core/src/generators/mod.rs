//! BSDE generators `g(y, z)`, their convex conjugates and subgradients.
//!
//! Generators are time-homogeneous and defined for `y` in the half-line
//! `y >= 0` (or all of `R` when they do not depend on `y`). Generators with
//! a `1/y` factor are extended to `y = 0` by `g(0, 0) = 0` and
//! `g(0, z) = +inf` for `z != 0`.

mod conditions;
mod conjugate;
mod spec;
mod utility;

use std::fmt;
use std::sync::Arc;

pub use conditions::{verify_conditions, ConditionCheck, ConditionReport, QgReport, SampleGrid};
pub use conjugate::{conjugate, conjugate_numeric, ConjugateSearch, ConjugateValue};
pub use spec::{GeneratorSpec, UtilitySpec};
pub use utility::Utility;

use crate::error::{Error, Result};

/// Closure-backed generator without analytic conjugate or subgradient.
#[derive(Clone)]
pub struct CustomGenerator {
    pub name: String,
    pub eval: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
    /// Whether the closure is only meaningful for `y > 0`.
    pub positive_levels: bool,
}

impl fmt::Debug for CustomGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomGenerator").field("name", &self.name).finish()
    }
}

#[derive(Debug, Clone)]
pub enum GeneratorKind {
    /// `g = 0`.
    Zero,
    /// `g(y, z) = -u''(y) |z|^2 / (2 u'(y))`.
    CertaintyEquivalent(Utility),
    /// `g(y, z) = base(u(y), z u'(y)) / u'(y) - u''(y) |z|^2 / (2 u'(y))`.
    GExpectation { base: Box<Generator>, utility: Utility },
    /// `g(y, z) = coef |z|^2 / 2`.
    Quadratic { coef: f64 },
    /// `g(y, z) = coef |z|`.
    Norm { coef: f64 },
    /// `g(y, z) = coef |z|^2 / (2 y)`; `coef = 1` is the log certainty equivalent.
    RelativeQuadratic { coef: f64 },
    Custom(CustomGenerator),
}

/// Structural conditions a generator may satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct ConditionFlags {
    pub conv: bool,
    pub lsc: bool,
    pub nor: bool,
    pub pos: bool,
    pub adm: bool,
    pub qg: bool,
}

impl ConditionFlags {
    const STANDARD: ConditionFlags = ConditionFlags {
        conv: true,
        lsc: true,
        nor: true,
        pos: true,
        adm: true,
        qg: true,
    };
}

#[derive(Debug, Clone)]
pub struct Generator {
    kind: GeneratorKind,
    claimed: ConditionFlags,
}

fn norm_sq(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}

fn norm(z: &[f64]) -> f64 {
    norm_sq(z).sqrt()
}

impl Generator {
    pub fn zero() -> Self {
        Generator {
            kind: GeneratorKind::Zero,
            claimed: ConditionFlags {
                adm: false,
                ..ConditionFlags::STANDARD
            },
        }
    }

    pub fn quadratic(coef: f64) -> Result<Self> {
        check_coef(coef)?;
        Ok(Generator {
            kind: GeneratorKind::Quadratic { coef },
            claimed: ConditionFlags::STANDARD,
        })
    }

    pub fn norm(coef: f64) -> Result<Self> {
        check_coef(coef)?;
        Ok(Generator {
            kind: GeneratorKind::Norm { coef },
            claimed: ConditionFlags {
                adm: false,
                ..ConditionFlags::STANDARD
            },
        })
    }

    pub fn relative_quadratic(coef: f64) -> Result<Self> {
        check_coef(coef)?;
        Ok(Generator {
            kind: GeneratorKind::RelativeQuadratic { coef },
            claimed: ConditionFlags::STANDARD,
        })
    }

    pub fn custom(
        name: impl Into<String>,
        positive_levels: bool,
        claimed: ConditionFlags,
        eval: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Generator {
            kind: GeneratorKind::Custom(CustomGenerator {
                name: name.into(),
                eval: Arc::new(eval),
                positive_levels,
            }),
            claimed,
        }
    }

    pub fn kind(&self) -> &GeneratorKind {
        &self.kind
    }

    pub fn claimed(&self) -> ConditionFlags {
        self.claimed
    }

    pub fn name(&self) -> String {
        match &self.kind {
            GeneratorKind::Zero => "zero".into(),
            GeneratorKind::CertaintyEquivalent(u) => format!("certainty-equivalent({})", u.name()),
            GeneratorKind::GExpectation { base, utility } => {
                format!("g-expectation({}, {})", base.name(), utility.name())
            }
            GeneratorKind::Quadratic { coef } => format!("quadratic({coef})"),
            GeneratorKind::Norm { coef } => format!("norm({coef})"),
            GeneratorKind::RelativeQuadratic { coef } => format!("relative-quadratic({coef})"),
            GeneratorKind::Custom(c) => format!("custom({})", c.name),
        }
    }

    /// Utility the generator was derived from, if any.
    pub fn utility(&self) -> Option<Utility> {
        match &self.kind {
            GeneratorKind::CertaintyEquivalent(u) => Some(*u),
            GeneratorKind::GExpectation { utility, .. } => Some(*utility),
            GeneratorKind::RelativeQuadratic { coef } if *coef == 1.0 => Some(Utility::Log),
            _ => None,
        }
    }

    /// Whether the generator is a certainty equivalent of `utility`, so that
    /// its value operator is `u^{-1}(E[u(.)])`.
    pub fn is_certainty_equivalent_of(&self, utility: &Utility) -> bool {
        match &self.kind {
            GeneratorKind::CertaintyEquivalent(u) => u == utility,
            GeneratorKind::RelativeQuadratic { coef } => match utility {
                Utility::Log => *coef == 1.0,
                Utility::Power { r } => (*coef - (1.0 - r)).abs() < 1e-15,
                Utility::Exponential { .. } => false,
            },
            GeneratorKind::Quadratic { coef } => {
                matches!(utility, Utility::Exponential { r } if (coef - r).abs() < 1e-15)
            }
            GeneratorKind::GExpectation { base, utility: u } => {
                u == utility && matches!(base.kind, GeneratorKind::Zero)
            }
            _ => false,
        }
    }

    /// Whether `g` is only finite for `y > 0` (a `1/y` type generator).
    pub fn requires_positive_level(&self) -> bool {
        match &self.kind {
            GeneratorKind::Zero | GeneratorKind::Quadratic { .. } | GeneratorKind::Norm { .. } => false,
            GeneratorKind::RelativeQuadratic { .. } => true,
            GeneratorKind::CertaintyEquivalent(u) => u.requires_positive(),
            GeneratorKind::GExpectation { base, utility } => {
                utility.requires_positive() || base.requires_positive_level()
            }
            GeneratorKind::Custom(c) => c.positive_levels,
        }
    }

    /// `g(y, z)`, possibly `+inf` outside the domain.
    pub fn eval(&self, y: f64, z: &[f64]) -> f64 {
        match &self.kind {
            GeneratorKind::Zero => 0.0,
            GeneratorKind::Quadratic { coef } => 0.5 * coef * norm_sq(z),
            GeneratorKind::Norm { coef } => coef * norm(z),
            GeneratorKind::RelativeQuadratic { coef } => {
                relative_quadratic(y, norm_sq(z), 0.5 * coef / y)
            }
            GeneratorKind::CertaintyEquivalent(u) => {
                if u.requires_positive() {
                    relative_quadratic(y, norm_sq(z), u.half_risk_aversion(y))
                } else {
                    u.half_risk_aversion(y) * norm_sq(z)
                }
            }
            GeneratorKind::GExpectation { base, utility } => {
                let zsq = norm_sq(z);
                if utility.requires_positive() && y <= 0.0 {
                    return if y == 0.0 && zsq == 0.0 { 0.0 } else { f64::INFINITY };
                }
                let du = utility.du(y);
                let scaled: Vec<f64> = z.iter().map(|v| v * du).collect();
                base.eval(utility.u(y), &scaled) / du + utility.half_risk_aversion(y) * zsq
            }
            GeneratorKind::Custom(c) => (c.eval)(y, z),
        }
    }

    /// Closed-form subgradient `(beta, q)` at `(y, z)` when the generator family has one.
    fn analytic_subgradient(&self, y: f64, z: &[f64]) -> Option<(f64, Vec<f64>)> {
        let zsq = norm_sq(z);
        match &self.kind {
            GeneratorKind::Zero => Some((0.0, vec![0.0; z.len()])),
            GeneratorKind::Quadratic { coef } => Some((0.0, z.iter().map(|v| coef * v).collect())),
            GeneratorKind::Norm { coef } => {
                let n = zsq.sqrt();
                if n == 0.0 {
                    Some((0.0, vec![0.0; z.len()]))
                } else {
                    Some((0.0, z.iter().map(|v| coef * v / n).collect()))
                }
            }
            GeneratorKind::RelativeQuadratic { coef } => {
                Some((-0.5 * coef * zsq / (y * y), z.iter().map(|v| coef * v / y).collect()))
            }
            GeneratorKind::CertaintyEquivalent(u) => {
                let k = u.half_risk_aversion(y);
                let dk = u.half_risk_aversion_dy(y);
                Some((dk * zsq, z.iter().map(|v| 2.0 * k * v).collect()))
            }
            GeneratorKind::GExpectation { base, utility } => match (&base.kind, utility) {
                (GeneratorKind::Zero, u) => Generator {
                    kind: GeneratorKind::CertaintyEquivalent(*u),
                    claimed: self.claimed,
                }
                .analytic_subgradient(y, z),
                (GeneratorKind::Norm { coef }, Utility::Exponential { r }) => {
                    let n = zsq.sqrt();
                    let q = z
                        .iter()
                        .map(|v| if n == 0.0 { 0.0 } else { coef * v / n } + r * v)
                        .collect();
                    Some((0.0, q))
                }
                _ => None,
            },
            GeneratorKind::Custom(_) => None,
        }
    }
}

fn relative_quadratic(y: f64, zsq: f64, factor: f64) -> f64 {
    if y > 0.0 {
        factor * zsq
    } else if y == 0.0 && zsq == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn check_coef(coef: f64) -> Result<()> {
    if !(coef >= 0.0 && coef.is_finite()) {
        return Err(Error::invalid(format!("generator coefficient must be >= 0, got {coef}")));
    }
    Ok(())
}

/// Certainty-equivalent generator `-u''(y)|z|^2 / (2 u'(y))`, whose BSDE
/// solution is `u^{-1}(E[u(H) | F_t])`.
pub fn make_ce_generator(utility: Utility) -> Result<Generator> {
    utility.validate()?;
    for k in 1..=64 {
        let y = 0.05 * k as f64;
        if !(utility.du(y) > 0.0) {
            return Err(Error::invalid(format!("u' vanishes at {y}")));
        }
    }
    Ok(Generator {
        kind: GeneratorKind::CertaintyEquivalent(utility),
        claimed: ConditionFlags::STANDARD,
    })
}

/// Minimum of `u'` accepted by [`transform_g_expectation`] on its check range.
pub const MIN_MARGINAL_UTILITY: f64 = 1e-8;

/// Generator of `u^{-1}(Y)` when `Y` solves the BSDE with generator `base`
/// and terminal value `u(H)`.
pub fn transform_g_expectation(base: Generator, utility: Utility) -> Result<Generator> {
    transform_g_expectation_on(base, utility, (0.1, 10.0))
}

/// As [`transform_g_expectation`], checking `u' >= MIN_MARGINAL_UTILITY` on `range`.
pub fn transform_g_expectation_on(base: Generator, utility: Utility, range: (f64, f64)) -> Result<Generator> {
    utility.validate()?;
    let (lo, hi) = range;
    for k in 0..=64 {
        let y = lo + (hi - lo) * k as f64 / 64.0;
        let du = utility.du(y);
        if !(du >= MIN_MARGINAL_UTILITY) {
            return Err(Error::invalid(format!(
                "u'({y}) = {du:e} is not bounded away from zero"
            )));
        }
    }
    let b = base.claimed;
    let claimed = ConditionFlags {
        conv: b.conv,
        lsc: b.lsc,
        nor: b.nor,
        pos: b.pos,
        adm: b.pos,
        qg: b.qg,
    };
    Ok(Generator {
        kind: GeneratorKind::GExpectation {
            base: Box::new(base),
            utility,
        },
        claimed,
    })
}

/// A subgradient `(beta, q)` of `g` at `(y, z)`, i.e. `g(y', z') >= g(y, z) +
/// beta (y' - y) + q.(z' - z)`.
///
/// Uses the closed form of the generator family when available and central
/// finite differences otherwise; a mismatch between one-sided differences is
/// reported as [`Error::NonSmooth`].
pub fn subgradient(g: &Generator, y: f64, z: &[f64]) -> Result<(f64, Vec<f64>)> {
    let z_norm = norm(z);
    if !(y > 0.0) && g.requires_positive_level() {
        return Err(Error::invalid(format!("subgradient needs y > 0, got {y}")));
    }
    if let Some(sg) = g.analytic_subgradient(y, z) {
        return Ok(sg);
    }
    if z_norm == 0.0 && g.claimed.nor && g.claimed.pos {
        return Ok((0.0, vec![0.0; z.len()]));
    }
    let f0 = g.eval(y, z);
    if !f0.is_finite() {
        return Err(Error::DomainViolation { y, z_norm });
    }
    let mut point = vec![y];
    point.extend_from_slice(z);
    let eval = |p: &[f64]| g.eval(p[0], &p[1..]);
    let mut grad = vec![0.0; point.len()];
    for k in 0..point.len() {
        let h = 1e-6 * point[k].abs().max(1.0);
        let mut up = point.clone();
        up[k] += h;
        let mut dn = point.clone();
        dn[k] -= h;
        let fu = eval(&up);
        let fd = eval(&dn);
        let fwd = (fu - f0) / h;
        let bwd = (f0 - fd) / h;
        let central = 0.5 * (fwd + bwd);
        if !(fwd.is_finite() && bwd.is_finite()) || (fwd - bwd).abs() > 1e-3 * (1.0 + central.abs()) {
            return Err(Error::NonSmooth { y, z_norm });
        }
        grad[k] = central;
    }
    Ok((grad[0], grad[1..].to_vec()))
}

/// `beta y + q.z - g(y, z) - g*(beta, q)`, nonpositive by the Fenchel-Young
/// inequality and zero exactly when `(beta, q)` is a subgradient at `(y, z)`.
pub fn fenchel_young_gap(g: &Generator, y: f64, z: &[f64], beta: f64, q: &[f64]) -> Result<f64> {
    let conj = conjugate(g, beta, q, &ConjugateSearch::default());
    let gstar = match conj {
        ConjugateValue::Finite { value, .. } => value,
        ConjugateValue::Infinite => return Err(Error::InfiniteConjugate { beta }),
    };
    let inner: f64 = q.iter().zip(z).map(|(a, b)| a * b).sum();
    Ok(beta * y + inner - g.eval(y, z) - gstar)
}
