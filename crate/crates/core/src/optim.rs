//! Small derivative-free minimizers: box grids and Nelder-Mead with clamping.

/// Points of a regular grid on the box `[lower, upper]` with `per_axis` points per axis.
pub(crate) fn box_grid(lower: &[f64], upper: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let dim = lower.len();
    let per_axis = per_axis.max(1);
    let axis = |k: usize, i: usize| -> f64 {
        if per_axis == 1 || upper[k] == lower[k] {
            0.5 * (lower[k] + upper[k])
        } else {
            lower[k] + (upper[k] - lower[k]) * i as f64 / (per_axis - 1) as f64
        }
    };
    let total = per_axis.pow(dim as u32);
    let mut out = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut p = Vec::with_capacity(dim);
        for k in 0..dim {
            p.push(axis(k, idx % per_axis));
            idx /= per_axis;
        }
        out.push(p);
    }
    out
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
}

fn clamp(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Nelder-Mead minimization with iterates clamped into `[lower, upper]`.
pub(crate) fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    lower: &[f64],
    upper: &[f64],
    max_iter: usize,
    tol: f64,
) -> Minimum {
    let n = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    clamp(&mut start, lower, upper);
    simplex.push(start.clone());
    for k in 0..n {
        let mut p = start.clone();
        p[k] += step[k];
        if p[k] > upper[k] {
            p[k] = start[k] - step[k];
        }
        clamp(&mut p, lower, upper);
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(p)).collect();

    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = (values[n] - values[0]).abs();
        let size = simplex[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if (values[0].is_finite() && spread <= tol * (1.0 + values[0].abs())) && size <= tol.sqrt() * 1e-2 {
            break;
        }
        if size == 0.0 {
            break;
        }

        let mut centroid = vec![0.0; n];
        for p in &simplex[..n] {
            for k in 0..n {
                centroid[k] += p[k] / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = (0..n).map(|k| centroid[k] + t * (simplex[n][k] - centroid[k])).collect();
            clamp(&mut p, lower, upper);
            p
        };

        let reflected = along(-1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = along(-0.5);
            let v = eval(&c);
            (c, v)
        } else {
            let c = along(0.5);
            let v = eval(&c);
            (c, v)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            let mut p: Vec<f64> = (0..n).map(|k| best[k] + 0.5 * (simplex[i][k] - best[k])).collect();
            clamp(&mut p, lower, upper);
            values[i] = eval(&p);
            simplex[i] = p;
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_shifted_quadratic() {
        let m = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 0.5).powi(2),
            &[0.0, 0.0],
            &[0.5, 0.5],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            2000,
            1e-14,
        );
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] + 0.5).abs() < 1e-5);
    }

    #[test]
    fn respects_bounds() {
        let m = nelder_mead(|x| -x[0], &[0.0], &[0.1], &[-1.0], &[2.0], 500, 1e-12);
        assert!((m.x[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn grid_covers_box() {
        let g = box_grid(&[0.0, 1.0], &[1.0, 2.0], 3);
        assert_eq!(g.len(), 9);
        assert!(g.contains(&vec![0.5, 2.0]));
    }
}
