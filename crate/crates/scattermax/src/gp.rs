//! Exact Gaussian-process regression on unbounded data: Matérn 5/2 kernel,
//! constant mean, marginal-likelihood hyperparameter fitting, posterior
//! prediction.
//!
//! The forward model is deterministic, so there is no observation-noise
//! hyperparameter; an escalating diagonal jitter is the only regularizer.
//! Inputs are fitted in raw units with one length scale per axis, which is
//! equivalent to normalizing coordinates up to reparameterization.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column_norms_sq_of_product, dot, KernelFactor};
use crate::optim::{nelder_mead, Bound};
use crate::seeds::SeedSpace;

/// Hyperparameters of the constant-mean Matérn 5/2 GP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GPHyperparams {
    /// Prior mean, in (transformed) output units.
    pub mu0: f64,
    /// Prior variance; also the kernel prefactor so that `k(p, p) = sigma0_sq`.
    pub sigma0_sq: f64,
    /// Per-axis length scales in design-space units.
    pub length_scales: Vec<f64>,
}

impl GPHyperparams {
    pub fn new(mu0: f64, sigma0_sq: f64, length_scales: Vec<f64>) -> Result<Self> {
        if !mu0.is_finite() || !sigma0_sq.is_finite() || sigma0_sq <= 0.0 {
            return Err(Error::FitFailure(format!(
                "invalid hyperparameters: mu0={mu0}, sigma0_sq={sigma0_sq}"
            )));
        }
        if length_scales.is_empty() || length_scales.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(Error::FitFailure(format!(
                "invalid length scales: {length_scales:?}"
            )));
        }
        Ok(GPHyperparams {
            mu0,
            sigma0_sq,
            length_scales,
        })
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }
}

/// Matérn 5/2 covariance between two points:
/// `sigma0_sq * (1 + sqrt(5) r + 5/3 r^2) * exp(-sqrt(5) r)` with
/// `r^2 = sum(((p_i - p'_i) / l_i)^2)`.
pub fn matern52(p: &[f64], p_prime: &[f64], hyper: &GPHyperparams) -> Result<f64> {
    if p.len() != hyper.dim() || p_prime.len() != hyper.dim() {
        return Err(Error::DimensionMismatch {
            expected: hyper.dim(),
            actual: p.len().max(p_prime.len()),
        });
    }
    if p.iter().chain(p_prime).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: "matern52 input".into(),
        });
    }
    Ok(matern52_from_r_sq(r_squared(p, p_prime, &hyper.length_scales), hyper.sigma0_sq))
}

#[inline]
fn r_squared(p: &[f64], q: &[f64], ls: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        let d = (p[i] - q[i]) / ls[i];
        s += d * d;
    }
    s
}

#[inline]
fn matern52_from_r_sq(r_sq: f64, sigma0_sq: f64) -> f64 {
    let r = r_sq.sqrt();
    let sqrt5_r = 5f64.sqrt() * r;
    sigma0_sq * (1.0 + sqrt5_r + (5.0 / 3.0) * r_sq) * (-sqrt5_r).exp()
}

/// Posterior prediction at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    /// Clamped to `[0, sigma0_sq]`.
    pub variance: f64,
}

/// A fitted GP: hyperparameters, training data, and the factorized kernel
/// matrix with precomputed `K^{-1}(Y - mu0 1)`.
#[derive(Debug)]
pub struct GPModel {
    hyper: GPHyperparams,
    train_points: Vec<Vec<f64>>,
    train_values: Vec<f64>,
    factor: KernelFactor,
    alpha: DVector<f64>,
    best_lml: f64,
    l_inv: OnceLock<DMatrix<f64>>,
}

/// Knobs of the marginal-likelihood fit.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Multi-start count for the local optimizer.
    pub restarts: usize,
    /// Seed for the restart draws.
    pub seed: u64,
    /// Objective-evaluation budget per restart.
    pub max_evals: usize,
    /// Optimize hyperparameters on an evenly strided subsample of this size,
    /// then condition on the full data. Keeps the fit tractable for large M.
    pub hyper_subsample: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 8,
            seed: 0,
            max_evals: 400,
            hyper_subsample: None,
        }
    }
}

impl GPModel {
    /// Fit hyperparameters by maximizing the marginal likelihood with
    /// `restarts` multi-started local searches, then condition on the data.
    pub fn fit(
        train_points: &[Vec<f64>],
        train_values: &[f64],
        restarts: usize,
        seed: u64,
    ) -> Result<GPModel> {
        Self::fit_with(
            train_points,
            train_values,
            &FitOptions {
                restarts,
                seed,
                ..FitOptions::default()
            },
        )
    }

    pub fn fit_with(
        train_points: &[Vec<f64>],
        train_values: &[f64],
        opts: &FitOptions,
    ) -> Result<GPModel> {
        let m = train_points.len();
        if m < 2 {
            return Err(Error::FitFailure(format!("need at least 2 training points, got {m}")));
        }
        if train_values.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: train_values.len(),
            });
        }
        let dim = train_points[0].len();
        if dim == 0 || train_points.iter().any(|p| p.len() != dim) {
            return Err(Error::FitFailure("inconsistent training point dimensions".into()));
        }
        if train_points.iter().flatten().any(|x| !x.is_finite())
            || train_values.iter().any(|y| !y.is_finite())
        {
            return Err(Error::NonFinite {
                context: "GP training data".into(),
            });
        }

        // Subsample (evenly strided) for the hyperparameter search only.
        let sub_idx: Vec<usize> = match opts.hyper_subsample {
            Some(k) if k >= 2 && k < m => (0..k).map(|i| i * m / k).collect(),
            _ => (0..m).collect(),
        };
        let sub_points: Vec<Vec<f64>> = sub_idx.iter().map(|&i| train_points[i].clone()).collect();
        let sub_values: Vec<f64> = sub_idx.iter().map(|&i| train_values[i]).collect();

        let best = optimize_hyperparams(&sub_points, &sub_values, opts)?;
        Self::condition(train_points.to_vec(), train_values.to_vec(), best)
    }

    /// Condition the GP on data with fixed hyperparameters.
    pub fn condition(
        train_points: Vec<Vec<f64>>,
        train_values: Vec<f64>,
        hyper: GPHyperparams,
    ) -> Result<GPModel> {
        let factor = KernelFactor::factorize(
            &kernel_matrix(&train_points, &hyper),
            hyper.sigma0_sq,
        )?;
        let residual = DVector::from_iterator(
            train_values.len(),
            train_values.iter().map(|y| y - hyper.mu0),
        );
        let alpha = factor.solve_vec(&residual);
        let best_lml = lml_from_parts(&factor, &residual, &alpha);
        Ok(GPModel {
            hyper,
            train_points,
            train_values,
            factor,
            alpha,
            best_lml,
            l_inv: OnceLock::new(),
        })
    }

    pub fn hyper(&self) -> &GPHyperparams {
        &self.hyper
    }

    pub fn dim(&self) -> usize {
        self.hyper.dim()
    }

    pub fn len(&self) -> usize {
        self.train_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_points.is_empty()
    }

    pub fn train_points(&self) -> &[Vec<f64>] {
        &self.train_points
    }

    pub fn train_values(&self) -> &[f64] {
        &self.train_values
    }

    /// Log marginal likelihood of the training data under the fitted
    /// hyperparameters.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.best_lml
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter()
    }

    fn l_inv(&self) -> &DMatrix<f64> {
        self.l_inv.get_or_init(|| self.factor.l_inverse())
    }

    fn kernel_column(&self, p: &[f64]) -> Vec<f64> {
        self.train_points
            .iter()
            .map(|q| matern52_from_r_sq(r_squared(p, q, &self.hyper.length_scales), self.hyper.sigma0_sq))
            .collect()
    }

    /// Posterior mean and variance at one point.
    pub fn predict(&self, p_star: &[f64]) -> Result<Prediction> {
        Ok(self.predict_batch(std::slice::from_ref(&p_star.to_vec()))?[0])
    }

    /// Posterior mean and variance at many points; element-wise identical to
    /// [`GPModel::predict`] bit for bit.
    pub fn predict_batch(&self, points: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        for p in points {
            if p.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    actual: p.len(),
                });
            }
        }
        let columns: Vec<Vec<f64>> = if points.len() >= 64 {
            points.par_iter().map(|p| self.kernel_column(p)).collect()
        } else {
            points.iter().map(|p| self.kernel_column(p)).collect()
        };
        let norms = column_norms_sq_of_product(self.l_inv(), &columns);
        Ok(columns
            .iter()
            .zip(norms)
            .map(|(k_star, norm_sq)| {
                let mean = self.hyper.mu0 + dot(k_star, self.alpha.as_slice());
                let variance = (self.hyper.sigma0_sq - norm_sq).clamp(0.0, self.hyper.sigma0_sq);
                Prediction { mean, variance }
            })
            .collect())
    }

    pub fn to_document(&self) -> GpDocument {
        GpDocument {
            hyper: self.hyper.clone(),
            train_points: self.train_points.clone(),
            train_values: self.train_values.clone(),
        }
    }

    pub fn from_document(doc: GpDocument) -> Result<GPModel> {
        Self::condition(doc.train_points, doc.train_values, doc.hyper)
    }
}

/// Serialized form of a GP: hyperparameters and training data only; the
/// factorization is rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpDocument {
    pub hyper: GPHyperparams,
    pub train_points: Vec<Vec<f64>>,
    pub train_values: Vec<f64>,
}

/// Log marginal likelihood of `values` under `hyper`, via the factorization.
pub fn log_marginal_likelihood(
    points: &[Vec<f64>],
    values: &[f64],
    hyper: &GPHyperparams,
) -> Result<f64> {
    let factor = KernelFactor::factorize(&kernel_matrix(points, hyper), hyper.sigma0_sq)?;
    let residual = DVector::from_iterator(values.len(), values.iter().map(|y| y - hyper.mu0));
    let alpha = factor.solve_vec(&residual);
    Ok(lml_from_parts(&factor, &residual, &alpha))
}

fn lml_from_parts(factor: &KernelFactor, residual: &DVector<f64>, alpha: &DVector<f64>) -> f64 {
    let m = residual.len() as f64;
    -0.5 * residual.dot(alpha) - 0.5 * factor.log_det() - 0.5 * m * (2.0 * std::f64::consts::PI).ln()
}

fn kernel_matrix(points: &[Vec<f64>], hyper: &GPHyperparams) -> DMatrix<f64> {
    let m = points.len();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        k[(i, i)] = hyper.sigma0_sq;
        for j in (i + 1)..m {
            let v = matern52_from_r_sq(
                r_squared(&points[i], &points[j], &hyper.length_scales),
                hyper.sigma0_sq,
            );
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

struct SearchSpace {
    mu_range: (f64, f64),
    log_var_range: (f64, f64),
    log_ls_ranges: Vec<(f64, f64)>,
}

impl SearchSpace {
    fn from_data(points: &[Vec<f64>], values: &[f64]) -> SearchSpace {
        let dim = points[0].len();
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let var = values.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / m;
        // Guard degenerate (constant) data.
        let var = var.max(1e-12 * (1.0 + mean * mean));
        let sd = var.sqrt();
        let log_ls_ranges = (0..dim)
            .map(|i| {
                let lo = points.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
                let hi = points.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max);
                let span = (hi - lo).max(1e-9);
                ((1e-3 * span).ln(), (10.0 * span).ln())
            })
            .collect();
        SearchSpace {
            mu_range: (mean - 10.0 * sd, mean + 10.0 * sd),
            log_var_range: ((1e-6 * var).ln(), (1e6 * var).ln()),
            log_ls_ranges,
        }
    }

    fn bounds(&self) -> Vec<Bound> {
        let mut b = vec![
            Bound::new(self.mu_range.0, self.mu_range.1),
            Bound::new(self.log_var_range.0, self.log_var_range.1),
        ];
        b.extend(self.log_ls_ranges.iter().map(|(lo, hi)| Bound::new(*lo, *hi)));
        b
    }

    fn decode(&self, theta: &[f64], dim: usize) -> Result<GPHyperparams> {
        GPHyperparams::new(
            theta[0],
            theta[1].exp(),
            theta[2..2 + dim].iter().map(|t| t.exp()).collect(),
        )
    }
}

fn optimize_hyperparams(
    points: &[Vec<f64>],
    values: &[f64],
    opts: &FitOptions,
) -> Result<GPHyperparams> {
    let dim = points[0].len();
    let space = SearchSpace::from_data(points, values);
    let bounds = space.bounds();

    let objective = |theta: &[f64]| -> f64 {
        match space.decode(theta, dim) {
            Ok(hyper) => match log_marginal_likelihood(points, values, &hyper) {
                Ok(lml) if lml.is_finite() => -lml,
                _ => f64::INFINITY,
            },
            Err(_) => f64::INFINITY,
        }
    };

    // First start: data-driven heuristic; remaining starts: seeded uniforms.
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = (values.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / m)
        .max(1e-12 * (1.0 + mean * mean));
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(opts.restarts.max(1));
    let mut heuristic = vec![mean, var.ln()];
    heuristic.extend(
        space
            .log_ls_ranges
            .iter()
            .map(|(lo, hi)| (0.25f64.ln() + hi).max(*lo).min(*hi)),
    );
    starts.push(heuristic);
    let mut rng = SeedSpace::new(opts.seed).stream("gp-fit-restarts");
    for _ in 1..opts.restarts.max(1) {
        starts.push(
            bounds
                .iter()
                .map(|b| rng.random_range(b.lo..=b.hi))
                .collect(),
        );
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in &starts {
        let r = nelder_mead(objective, start, &bounds, opts.max_evals, 1e-8);
        if r.value.is_finite() && best.as_ref().is_none_or(|(v, _)| r.value < *v) {
            best = Some((r.value, r.point));
        }
    }
    let (_, theta) = best.ok_or_else(|| {
        Error::FitFailure(format!(
            "all {} restarts failed factorization (M={}, dim={dim})",
            opts.restarts,
            values.len()
        ))
    })?;
    space.decode(&theta, dim)
}
