use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Concave, strictly increasing utility on the positive half-line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Utility {
    Log,
    /// `u(x) = x^r`, `0 < r < 1`.
    Power { r: f64 },
    /// `u(x) = -exp(-r x)`, `r > 0`.
    Exponential { r: f64 },
}

impl Utility {
    pub fn power(r: f64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::invalid(format!("power utility needs 0 < r < 1, got {r}")));
        }
        Ok(Utility::Power { r })
    }

    pub fn exponential(r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::invalid(format!("exponential utility needs r > 0, got {r}")));
        }
        Ok(Utility::Exponential { r })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Utility::Log => Ok(()),
            Utility::Power { r } => Utility::power(r).map(|_| ()),
            Utility::Exponential { r } => Utility::exponential(r).map(|_| ()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Utility::Log => "log",
            Utility::Power { .. } => "power",
            Utility::Exponential { .. } => "exponential",
        }
    }

    pub fn u(&self, x: f64) -> f64 {
        match *self {
            Utility::Log => x.ln(),
            Utility::Power { r } => x.powf(r),
            Utility::Exponential { r } => -(-r * x).exp(),
        }
    }

    pub fn du(&self, x: f64) -> f64 {
        match *self {
            Utility::Log => 1.0 / x,
            Utility::Power { r } => r * x.powf(r - 1.0),
            Utility::Exponential { r } => r * (-r * x).exp(),
        }
    }

    pub fn d2u(&self, x: f64) -> f64 {
        match *self {
            Utility::Log => -1.0 / (x * x),
            Utility::Power { r } => r * (r - 1.0) * x.powf(r - 2.0),
            Utility::Exponential { r } => -r * r * (-r * x).exp(),
        }
    }

    pub fn inverse(&self, v: f64) -> f64 {
        match *self {
            Utility::Log => v.exp(),
            Utility::Power { r } => v.max(0.0).powf(1.0 / r),
            Utility::Exponential { r } => -(-v).ln() / r,
        }
    }

    /// Clamps a value into the range of `u` so that [`Utility::inverse`] is defined.
    pub fn clamp_to_range(&self, v: f64) -> f64 {
        match self {
            Utility::Log => v,
            Utility::Power { .. } => v.max(0.0),
            Utility::Exponential { .. } => v.min(-f64::MIN_POSITIVE),
        }
    }

    /// Smallest admissible argument (`u` is defined on `x > 0` for log and power).
    pub fn requires_positive(&self) -> bool {
        !matches!(self, Utility::Exponential { .. })
    }

    /// `-u''(y) / (2 u'(y))`, the coefficient of `|z|^2` in the certainty-equivalent generator.
    pub fn half_risk_aversion(&self, y: f64) -> f64 {
        match *self {
            Utility::Log => 0.5 / y,
            Utility::Power { r } => 0.5 * (1.0 - r) / y,
            Utility::Exponential { r } => 0.5 * r,
        }
    }

    /// Derivative of [`Utility::half_risk_aversion`] in `y`.
    pub fn half_risk_aversion_dy(&self, y: f64) -> f64 {
        match *self {
            Utility::Log => -0.5 / (y * y),
            Utility::Power { r } => -0.5 * (1.0 - r) / (y * y),
            Utility::Exponential { .. } => 0.0,
        }
    }

    /// Growth condition `|u(x)|^{p^2} <= C(1 + x)` for the power family: `r p^2 < 1`.
    pub fn compatible_with_muckenhoupt(&self, p: f64) -> bool {
        match *self {
            Utility::Power { r } => r * p * p < 1.0,
            _ => true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trips() {
        let utils = [Utility::Log, Utility::power(0.3).unwrap(), Utility::exponential(2.0).unwrap()];
        for u in utils {
            for k in 1..50 {
                let x = 0.05 * k as f64;
                let back = u.inverse(u.u(x));
                assert!((back - x).abs() <= 1e-12 * x.max(1.0), "{u:?} at {x}");
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let utils = [Utility::Log, Utility::power(0.3).unwrap(), Utility::exponential(2.0).unwrap()];
        let h = 1e-5;
        for u in utils {
            for x in [0.3, 1.0, 2.5] {
                let fd1 = (u.u(x + h) - u.u(x - h)) / (2.0 * h);
                let fd2 = (u.du(x + h) - u.du(x - h)) / (2.0 * h);
                assert!((fd1 - u.du(x)).abs() < 1e-7 * u.du(x).abs().max(1.0));
                assert!((fd2 - u.d2u(x)).abs() < 1e-6 * u.d2u(x).abs().max(1.0));
                assert!(u.du(x) > 0.0 && u.d2u(x) < 0.0);
                let ra = -0.5 * u.d2u(x) / u.du(x);
                assert!((ra - u.half_risk_aversion(x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(Utility::power(1.0).is_err());
        assert!(Utility::power(0.0).is_err());
        assert!(Utility::exponential(-1.0).is_err());
        assert!(Utility::power(0.2).unwrap().compatible_with_muckenhoupt(2.0));
        assert!(!Utility::power(0.3).unwrap().compatible_with_muckenhoupt(2.0));
    }
}
