use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ConditionFlags, Generator, Utility};

/// Sample box for [`verify_conditions`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub y_min: f64,
    pub y_max: f64,
    /// Bound on each coordinate of `z`.
    pub z_max: f64,
    pub dim: usize,
    /// Points per axis.
    pub density: usize,
    /// Utility for the admissibility check; taken from the generator when absent.
    pub utility: Option<Utility>,
    /// Lower levels `eta` for the quadratic-growth constants.
    pub qg_levels: Vec<f64>,
}

impl Default for SampleGrid {
    fn default() -> Self {
        SampleGrid {
            y_min: 0.1,
            y_max: 10.0,
            z_max: 5.0,
            dim: 1,
            density: 64,
            utility: None,
            qg_levels: vec![1.0, 1e-1, 1e-2, 1e-3, 1e-4],
        }
    }
}

impl SampleGrid {
    fn ys_from(&self, lo: f64) -> Vec<f64> {
        let n = self.density.max(2);
        let (a, b) = (lo.ln(), self.y_max.ln());
        (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
    }

    fn zs(&self) -> Vec<Vec<f64>> {
        let d = self.dim.max(1);
        let per_axis = ((self.density as f64).powf(1.0 / d as f64).round() as usize).max(3) | 1;
        let axis: Vec<f64> = (0..per_axis)
            .map(|k| -self.z_max + 2.0 * self.z_max * k as f64 / (per_axis - 1) as f64)
            .collect();
        let total = per_axis.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                (0..d)
                    .map(|_| {
                        let v = axis[idx % per_axis];
                        idx /= per_axis;
                        v
                    })
                    .collect()
            })
            .collect()
    }

    fn points(&self) -> Vec<(f64, Vec<f64>)> {
        let zs = self.zs();
        let mut out = Vec::new();
        for y in self.ys_from(self.y_min) {
            for z in &zs {
                out.push((y, z.clone()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstPoint {
    pub y: f64,
    pub z: Vec<f64>,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub passed: bool,
    /// False when the check could not be run (e.g. no utility for the admissibility test).
    pub applicable: bool,
    /// Largest absolute residual of the tested relation over the sample.
    pub max_residual: f64,
    pub worst: Option<WorstPoint>,
}

impl ConditionCheck {
    fn new() -> Self {
        ConditionCheck {
            passed: true,
            applicable: true,
            max_residual: 0.0,
            worst: None,
        }
    }

    fn not_applicable() -> Self {
        ConditionCheck {
            passed: false,
            applicable: false,
            max_residual: f64::NAN,
            worst: None,
        }
    }

    /// Records `residual`; violations are positive values above `tol`.
    fn record(&mut self, y: f64, z: &[f64], residual: f64, violation: f64, tol: f64) {
        self.max_residual = self.max_residual.max(residual.abs());
        if violation > tol || violation.is_nan() {
            self.passed = false;
            let worse = self.worst.as_ref().map_or(true, |w| violation > w.violation || violation.is_nan());
            if worse {
                self.worst = Some(WorstPoint {
                    y,
                    z: z.to_vec(),
                    violation,
                });
            }
        }
    }
}

/// Constants `C(eta) = sup g / (1 + y + |z|^2)` over `y in [eta, y_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QgReport {
    pub levels: Vec<f64>,
    pub constants: Vec<f64>,
    /// Constant on the sample box itself.
    pub box_constant: f64,
    /// The constants grow by at least a factor 5 across the levels.
    pub blows_up_near_zero: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub generator: String,
    pub conv: ConditionCheck,
    pub lsc: ConditionCheck,
    pub nor: ConditionCheck,
    pub pos: ConditionCheck,
    pub adm: ConditionCheck,
    pub qg: QgReport,
}

impl ConditionReport {
    pub fn flags(&self) -> ConditionFlags {
        ConditionFlags {
            conv: self.conv.passed,
            lsc: self.lsc.passed,
            nor: self.nor.passed,
            pos: self.pos.passed,
            adm: self.adm.passed,
            qg: self.qg.passed,
        }
    }
}

fn tol_for(v: f64) -> f64 {
    1e-12 * (1.0 + v.abs())
}

/// Sampled check of the structural generator conditions on `grid`.
///
/// Convexity is tested at midpoints of random pairs of sample points, lower
/// semicontinuity by comparing each point against shrinking neighbourhoods,
/// and admissibility as `u'(y) g(y, z) + u''(y) |z|^2 / 2 >= 0`.
pub fn verify_conditions(g: &Generator, grid: &SampleGrid) -> ConditionReport {
    let points = grid.points();
    let values: Vec<f64> = points.iter().map(|(y, z)| g.eval(*y, z)).collect();

    let mut pos = ConditionCheck::new();
    for ((y, z), v) in points.iter().zip(&values) {
        pos.record(*y, z, v.min(0.0), -v, tol_for(*v));
    }

    let mut nor = ConditionCheck::new();
    let origin = vec![0.0; grid.dim.max(1)];
    for y in grid.ys_from(grid.y_min) {
        let v = g.eval(y, &origin);
        nor.record(y, &origin, v, v.abs(), 1e-12);
    }

    let mut conv = ConditionCheck::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x636f6e76);
    let pairs = (points.len() * 4).min(40_000);
    for _ in 0..pairs {
        let a = rng.random_range(0..points.len());
        let b = rng.random_range(0..points.len());
        let (va, vb) = (values[a], values[b]);
        if !(va.is_finite() && vb.is_finite()) {
            continue;
        }
        let (ya, za) = &points[a];
        let (yb, zb) = &points[b];
        let ym = 0.5 * (ya + yb);
        let zm: Vec<f64> = za.iter().zip(zb).map(|(p, q)| 0.5 * (p + q)).collect();
        let chord = 0.5 * (va + vb);
        let vm = g.eval(ym, &zm);
        conv.record(ym, &zm, vm - chord, vm - chord, 1e-10 * (1.0 + chord.abs()));
    }

    let mut lsc = ConditionCheck::new();
    for ((y, z), v) in points.iter().zip(&values) {
        if !v.is_finite() {
            continue;
        }
        let h = 1e-7 * (1.0 + y.abs());
        let mut neighbour_min = f64::INFINITY;
        for k in 0..=z.len() {
            for s in [-1.0, 1.0] {
                let (mut yy, mut zz) = (*y, z.clone());
                if k == 0 {
                    yy += s * h;
                } else {
                    zz[k - 1] += s * h;
                }
                neighbour_min = neighbour_min.min(g.eval(yy, &zz));
            }
        }
        let jump = v - neighbour_min;
        lsc.record(*y, z, jump.max(0.0), jump, 1e-5 * (1.0 + v.abs()));
    }

    let adm = match grid.utility.or_else(|| g.utility()) {
        None => ConditionCheck::not_applicable(),
        Some(u) => {
            let mut adm = ConditionCheck::new();
            for ((y, z), v) in points.iter().zip(&values) {
                if *y <= 0.0 && u.requires_positive() {
                    continue;
                }
                let zsq: f64 = z.iter().map(|t| t * t).sum();
                let lhs = u.du(*y) * v + 0.5 * u.d2u(*y) * zsq;
                let scale = (u.du(*y) * v).abs() + (0.5 * u.d2u(*y) * zsq).abs();
                adm.record(*y, z, lhs, -lhs, 1e-12 * (1.0 + scale));
            }
            adm
        }
    };

    let zs = grid.zs();
    let qg_constant = |lo: f64| -> f64 {
        let mut c: f64 = 0.0;
        for y in grid.ys_from(lo) {
            for z in &zs {
                let zsq: f64 = z.iter().map(|t| t * t).sum();
                let ratio = g.eval(y, z) / (1.0 + y.abs() + zsq);
                if ratio.is_nan() {
                    return f64::INFINITY;
                }
                c = c.max(ratio);
            }
        }
        c
    };
    let mut levels = grid.qg_levels.clone();
    levels.sort_by(|a, b| b.total_cmp(a));
    let constants: Vec<f64> = levels.iter().map(|&eta| qg_constant(eta)).collect();
    let box_constant = qg_constant(grid.y_min);
    let blows_up = match (constants.first(), constants.last()) {
        (Some(&first), Some(&last)) => last > 5.0 * first.max(1e-12) || !last.is_finite(),
        _ => false,
    };
    let qg = QgReport {
        passed: box_constant.is_finite() && !blows_up,
        levels,
        constants,
        box_constant,
        blows_up_near_zero: blows_up,
    };

    ConditionReport {
        generator: g.name(),
        conv,
        lsc,
        nor,
        pos,
        adm,
        qg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::make_ce_generator;

    #[test]
    fn log_ce_passes_structural_checks() {
        let g = make_ce_generator(Utility::Log).unwrap();
        let report = verify_conditions(&g, &SampleGrid::default());
        assert!(report.conv.passed && report.nor.passed && report.pos.passed && report.lsc.passed);
        assert!(report.adm.passed);
        assert!(report.adm.max_residual <= 1e-12);
        assert!(report.qg.blows_up_near_zero && !report.qg.passed);
        assert!(report.qg.constants.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn negative_norm_fails_positivity() {
        let g = Generator::custom("neg-norm", false, ConditionFlags::default(), |_, z| -z[0].abs());
        let report = verify_conditions(&g, &SampleGrid::default());
        assert!(!report.pos.passed);
        assert!(report.pos.worst.unwrap().z[0] != 0.0);
        assert!(report.nor.passed);
        assert!(!report.conv.passed);
    }

    #[test]
    fn quadratic_has_quadratic_growth() {
        let g = Generator::quadratic(1.0).unwrap();
        let report = verify_conditions(&g, &SampleGrid::default());
        assert!(report.qg.passed);
        assert!(!report.adm.applicable);
    }

    #[test]
    fn zero_generator_is_not_admissible_for_log() {
        let grid = SampleGrid {
            utility: Some(Utility::Log),
            ..Default::default()
        };
        let report = verify_conditions(&Generator::zero(), &grid);
        assert!(!report.adm.passed);
    }
}
