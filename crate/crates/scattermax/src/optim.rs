//! Deterministic Nelder–Mead simplex minimization with box bounds.
//!
//! Bounds are enforced by clamping candidate points onto the box before
//! evaluation, which keeps the simplex moving along active constraints.

/// Box bounds for one axis of the search space.
#[derive(Debug, Clone, Copy)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub fn new(lo: f64, hi: f64) -> Self {
        Bound { lo, hi }
    }

    fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Minimize `f` starting from `x0`, clamped to `bounds`.
///
/// `max_evals` caps objective calls; `tol` stops when both the simplex value
/// spread and its diameter fall below it (relative to scale).
pub fn nelder_mead<F>(
    f: F,
    x0: &[f64],
    bounds: &[Bound],
    max_evals: usize,
    tol: f64,
) -> NelderMeadResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    debug_assert_eq!(bounds.len(), n);
    let clamp = |x: &[f64]| -> Vec<f64> {
        x.iter().zip(bounds).map(|(v, b)| b.clamp(*v)).collect()
    };
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| -> f64 {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    // Initial simplex: x0 plus a 5%-of-range step per axis.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let p0 = clamp(x0);
    let v0 = eval(&p0);
    simplex.push((p0.clone(), v0));
    for i in 0..n {
        let mut p = p0.clone();
        let range = bounds[i].hi - bounds[i].lo;
        let step = if range.is_finite() && range > 0.0 {
            0.05 * range
        } else {
            0.1 * p[i].abs().max(1.0)
        };
        p[i] = bounds[i].clamp(p[i] + step);
        if p[i] == p0[i] {
            p[i] = bounds[i].clamp(p0[i] - step);
        }
        let v = eval(&p);
        simplex.push((p, v));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    while evals.get() < max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = (worst - best).abs();
        let diameter: f64 = (0..n)
            .map(|i| {
                let lo = simplex.iter().map(|(p, _)| p[i]).fold(f64::INFINITY, f64::min);
                let hi = simplex.iter().map(|(p, _)| p[i]).fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            })
            .fold(0.0, f64::max);
        if spread <= tol * (1.0 + best.abs()) && diameter <= tol {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|i| simplex[..n].iter().map(|(p, _)| p[i]).sum::<f64>() / n as f64)
            .collect();
        let reflect: Vec<f64> = clamp(
            &(0..n)
                .map(|i| centroid[i] + alpha * (centroid[i] - simplex[n].0[i]))
                .collect::<Vec<f64>>(),
        );
        let fr = eval(&reflect);

        if fr < simplex[0].1 {
            let expand: Vec<f64> = clamp(
                &(0..n)
                    .map(|i| centroid[i] + gamma * (reflect[i] - centroid[i]))
                    .collect::<Vec<f64>>(),
            );
            let fe = eval(&expand);
            simplex[n] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflect, fr);
        } else {
            let contract: Vec<f64> = clamp(
                &(0..n)
                    .map(|i| centroid[i] + rho * (simplex[n].0[i] - centroid[i]))
                    .collect::<Vec<f64>>(),
            );
            let fc = eval(&contract);
            if fc < simplex[n].1 {
                simplex[n] = (contract, fc);
            } else {
                // Shrink toward the best vertex.
                let best_p = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let p: Vec<f64> = entry
                        .0
                        .iter()
                        .zip(&best_p)
                        .map(|(x, b)| b + sigma * (x - b))
                        .collect();
                    let p = clamp(&p);
                    let v = eval(&p);
                    *entry = (p, v);
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    NelderMeadResult {
        point: simplex[0].0.clone(),
        value: simplex[0].1,
        evaluations: evals.get(),
    }
}
