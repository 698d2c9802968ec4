use serde::{Deserialize, Serialize};

use super::{Generator, GeneratorKind, Utility};
use crate::optim::nelder_mead;

/// Value of `g*(beta, q) = sup_{y >= 0, z} beta y + q.z - g(y, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConjugateValue {
    Finite {
        value: f64,
        /// A maximizing `(y, z)` when one is known.
        argmax: Option<(f64, Vec<f64>)>,
    },
    Infinite,
}

impl ConjugateValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, ConjugateValue::Finite { .. })
    }

    /// The value, `+inf` when the conjugate is infinite.
    pub fn value(&self) -> f64 {
        match self {
            ConjugateValue::Finite { value, .. } => *value,
            ConjugateValue::Infinite => f64::INFINITY,
        }
    }

    fn finite(value: f64, y: f64, z: Vec<f64>) -> Self {
        ConjugateValue::Finite {
            value,
            argmax: Some((y, z)),
        }
    }
}

/// Search box and resolution for the numeric conjugate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateSearch {
    pub y_min: f64,
    pub y_max: f64,
    pub z_max: f64,
    /// Grid points per axis.
    pub density: usize,
    /// Relative tolerance for the feasibility boundary of analytic conjugates.
    pub boundary_tol: f64,
}

impl Default for ConjugateSearch {
    fn default() -> Self {
        ConjugateSearch {
            y_min: 1e-12,
            y_max: 1e4,
            z_max: 1e4,
            density: 64,
            boundary_tol: 1e-12,
        }
    }
}

fn norm_sq(q: &[f64]) -> f64 {
    q.iter().map(|v| v * v).sum()
}

fn zero_conjugate(beta: f64, q: &[f64], tol: f64) -> ConjugateValue {
    if beta <= tol && norm_sq(q) == 0.0 {
        ConjugateValue::finite(0.0, 0.0, vec![0.0; q.len()])
    } else {
        ConjugateValue::Infinite
    }
}

fn quadratic_conjugate(coef: f64, beta: f64, q: &[f64], tol: f64) -> ConjugateValue {
    if coef == 0.0 {
        return zero_conjugate(beta, q, tol);
    }
    if beta > tol {
        return ConjugateValue::Infinite;
    }
    ConjugateValue::finite(
        norm_sq(q) / (2.0 * coef),
        0.0,
        q.iter().map(|v| v / coef).collect(),
    )
}

fn relative_quadratic_conjugate(coef: f64, beta: f64, q: &[f64], tol: f64) -> ConjugateValue {
    if coef == 0.0 {
        return zero_conjugate(beta, q, tol);
    }
    let slope = beta + norm_sq(q) / (2.0 * coef);
    let scale = beta.abs() + norm_sq(q) / (2.0 * coef);
    if slope <= tol * scale.max(1.0) {
        ConjugateValue::finite(0.0, 0.0, vec![0.0; q.len()])
    } else {
        ConjugateValue::Infinite
    }
}

fn analytic(g: &Generator, beta: f64, q: &[f64], tol: f64) -> Option<ConjugateValue> {
    let v = match g.kind() {
        GeneratorKind::Zero => zero_conjugate(beta, q, tol),
        GeneratorKind::Quadratic { coef } => quadratic_conjugate(*coef, beta, q, tol),
        GeneratorKind::Norm { coef } => {
            if beta <= tol && norm_sq(q).sqrt() <= coef * (1.0 + tol) {
                ConjugateValue::finite(0.0, 0.0, vec![0.0; q.len()])
            } else {
                ConjugateValue::Infinite
            }
        }
        GeneratorKind::RelativeQuadratic { coef } => relative_quadratic_conjugate(*coef, beta, q, tol),
        GeneratorKind::CertaintyEquivalent(u) => ce_conjugate(u, beta, q, tol),
        GeneratorKind::GExpectation { base, utility } => match (base.kind(), utility) {
            (GeneratorKind::Zero, u) => ce_conjugate(u, beta, q, tol),
            (GeneratorKind::Norm { coef }, Utility::Exponential { r }) => {
                if beta > tol {
                    ConjugateValue::Infinite
                } else {
                    let n = norm_sq(q).sqrt();
                    let excess = (n - coef).max(0.0);
                    let z = if n > 0.0 {
                        q.iter().map(|v| v / n * excess / r).collect()
                    } else {
                        vec![0.0; q.len()]
                    };
                    ConjugateValue::finite(excess * excess / (2.0 * r), 0.0, z)
                }
            }
            _ => return None,
        },
        GeneratorKind::Custom(_) => return None,
    };
    Some(v)
}

fn ce_conjugate(u: &Utility, beta: f64, q: &[f64], tol: f64) -> ConjugateValue {
    match *u {
        Utility::Log => relative_quadratic_conjugate(1.0, beta, q, tol),
        Utility::Power { r } => relative_quadratic_conjugate(1.0 - r, beta, q, tol),
        Utility::Exponential { r } => quadratic_conjugate(r, beta, q, tol),
    }
}

/// Convex conjugate of `g` over `y >= 0`, using the closed form of the
/// generator family when known and [`conjugate_numeric`] otherwise.
pub fn conjugate(g: &Generator, beta: f64, q: &[f64], search: &ConjugateSearch) -> ConjugateValue {
    analytic(g, beta, q, search.boundary_tol).unwrap_or_else(|| conjugate_numeric(g, beta, q, search))
}

fn geomspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(move |k| (a + (b - a) * k as f64 / (n.max(2) - 1) as f64).exp())
}

fn boxed_sup(g: &Generator, beta: f64, q: &[f64], search: &ConjugateSearch, scale: f64) -> (f64, f64, Vec<f64>) {
    let d = q.len();
    let y_max = search.y_max * scale;
    let z_max = search.z_max * scale;
    let objective = |y: f64, z: &[f64]| -> f64 {
        let gv = g.eval(y, z);
        if gv.is_nan() || gv == f64::INFINITY {
            return f64::NEG_INFINITY;
        }
        beta * y + q.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() - gv
    };

    let ys: Vec<f64> = std::iter::once(0.0)
        .chain(geomspace(search.y_min, y_max, search.density))
        .collect();
    let per_axis_half = {
        let budget = (search.density * search.density) as f64;
        let per_axis = budget.powf(1.0 / d.max(1) as f64).floor() as usize;
        (per_axis / 2).clamp(2, search.density)
    };
    let axis: Vec<f64> = {
        let mags: Vec<f64> = geomspace(z_max * 1e-8, z_max, per_axis_half).collect();
        std::iter::once(0.0)
            .chain(mags.iter().map(|m| -m))
            .chain(mags.iter().copied())
            .collect()
    };
    let total_z = axis.len().pow(d as u32);

    let mut best = (f64::NEG_INFINITY, 0.0, vec![0.0; d]);
    let mut z = vec![0.0; d];
    for &y in &ys {
        for mut idx in 0..total_z {
            for zk in z.iter_mut() {
                *zk = axis[idx % axis.len()];
                idx /= axis.len();
            }
            let v = objective(y, &z);
            if v > best.0 {
                best = (v, y, z.clone());
            }
        }
    }
    if !best.0.is_finite() {
        return best;
    }

    let mut x0 = vec![best.1];
    x0.extend_from_slice(&best.2);
    let mut lower = vec![0.0];
    lower.extend(std::iter::repeat(-z_max).take(d));
    let mut upper = vec![y_max];
    upper.extend(std::iter::repeat(z_max).take(d));
    let step: Vec<f64> = x0.iter().map(|v| 0.1 * v.abs().max(1e-3)).collect();
    let refined = nelder_mead(
        |x| -objective(x[0], &x[1..]),
        &x0,
        &step,
        &lower,
        &upper,
        400 * (d + 1),
        1e-14,
    );
    if -refined.value > best.0 {
        best = (-refined.value, refined.x[0], refined.x[1..].to_vec());
    }
    best
}

/// Numeric conjugate: brute-force supremum over a log-spaced `(y, z)` grid in
/// the search box, refined by Nelder-Mead. The conjugate is declared infinite
/// when doubling the box raises the supremum by more than 1% (plus `1e-8`).
pub fn conjugate_numeric(g: &Generator, beta: f64, q: &[f64], search: &ConjugateSearch) -> ConjugateValue {
    let (v1, y1, z1) = boxed_sup(g, beta, q, search, 1.0);
    if !v1.is_finite() {
        return ConjugateValue::Infinite;
    }
    let (v2, _, _) = boxed_sup(g, beta, q, search, 2.0);
    if v2 - v1 > 0.01 * v1.abs() + 1e-8 {
        return ConjugateValue::Infinite;
    }
    ConjugateValue::finite(v1, y1, z1)
}
