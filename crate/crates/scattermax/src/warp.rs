//! Bounded-output GP wrapper.
//!
//! Observations bounded below (e.g. positive figures of merit) are mapped to
//! an unbounded co-domain with a piecewise transform before GP training and
//! predictions are mapped back. The inverse transform `g^{-1}` is an
//! exponential segment near the bound matched C¹ to a slope-one affine
//! segment above the cutoff; because it is strictly increasing, quantiles map
//! exactly: the q-quantile of `g^{-1}(N)` is `g^{-1}` of the q-quantile of
//! `N`. Predictions in the bounded domain are therefore reported as the
//! transformed median plus symmetric-quantile deviations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{FitOptions, GPModel, GpDocument};
use crate::optim::{nelder_mead, Bound};
use crate::seeds::SeedSpace;

/// Parameters of the piecewise transform. `a_lower`, `b_linear` and
/// `y_tilde_cutoff` are derived from the two control parameters
/// (`y_lower_cutoff`, `b_lower`) by the C¹ matching conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpParams {
    /// Lower bound of the data domain (0 for positive data).
    pub y_lower: f64,
    /// Below this value the exponential segment applies.
    pub y_lower_cutoff: f64,
    /// Position parameter of the exponential segment.
    pub b_lower: f64,
    /// Exponential rate, `1 / (y_lower_cutoff - y_lower)`.
    pub a_lower: f64,
    /// Affine slope, fixed to 1.
    pub m_linear: f64,
    /// Affine offset, `y_lower_cutoff - y_tilde_cutoff`.
    pub b_linear: f64,
    /// Co-domain matching point.
    pub y_tilde_cutoff: f64,
}

/// Derive the full transform from its control parameters. The exponential
/// segment `y_lower + exp(a (y~ - b))` meets the affine segment
/// `y~ + b_linear` with equal value and unit slope at the cutoff.
pub fn derive_warp(y_lower: f64, y_lower_cutoff: f64, b_lower: f64) -> Result<WarpParams> {
    let span = y_lower_cutoff - y_lower;
    if !(span.is_finite() && span > 0.0) || !b_lower.is_finite() {
        return Err(Error::InvalidCutoff(format!(
            "need y_lower_cutoff > y_lower, got cutoff {y_lower_cutoff}, bound {y_lower}"
        )));
    }
    let a_lower = 1.0 / span;
    let y_tilde_cutoff = b_lower + span * span.ln();
    let b_linear = y_lower_cutoff - y_tilde_cutoff;
    Ok(WarpParams {
        y_lower,
        y_lower_cutoff,
        b_lower,
        a_lower,
        m_linear: 1.0,
        b_linear,
        y_tilde_cutoff,
    })
}

impl WarpParams {
    /// Map from the unbounded co-domain to the bounded domain. Defined on all
    /// of R; output is always above `y_lower`.
    pub fn g_inverse(&self, y_tilde: f64) -> f64 {
        if y_tilde < self.y_tilde_cutoff {
            self.y_lower + (self.a_lower * (y_tilde - self.b_lower)).exp()
        } else {
            self.m_linear * y_tilde + self.b_linear
        }
    }

    /// Map from the bounded domain to the unbounded co-domain; exact inverse
    /// of [`WarpParams::g_inverse`]. Errors for `y <= y_lower`.
    pub fn g_forward(&self, y: f64) -> Result<f64> {
        if y.is_nan() || y <= self.y_lower {
            return Err(Error::OutOfDomain(format!(
                "g is defined for y > {}, got {y}",
                self.y_lower
            )));
        }
        Ok(if y < self.y_lower_cutoff {
            self.b_lower + (y - self.y_lower).ln() / self.a_lower
        } else {
            (y - self.b_linear) / self.m_linear
        })
    }

    /// Derivative of the forward transform `g` at `y`; the log of this is the
    /// Jacobian term of the warped-GP likelihood.
    pub fn g_forward_derivative(&self, y: f64) -> Result<f64> {
        if y.is_nan() || y <= self.y_lower {
            return Err(Error::OutOfDomain(format!(
                "g' is defined for y > {}, got {y}",
                self.y_lower
            )));
        }
        Ok(if y < self.y_lower_cutoff {
            1.0 / (self.a_lower * (y - self.y_lower))
        } else {
            1.0
        })
    }
}

/// Which space the variance proxy handed to the robust estimator lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceSpace {
    /// Symmetric-quantile proxy in the bounded domain.
    #[default]
    Bounded,
    /// Raw GP variance in the transformed domain.
    Transformed,
}

/// Bounded-domain prediction at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundedPrediction {
    /// `g^{-1}` of the GP mean; the predictive median in the bounded domain.
    pub median: f64,
    /// `median - g^{-1}(mean - sd)`.
    pub sigma_minus: f64,
    /// `g^{-1}(mean + sd) - median`.
    pub sigma_plus: f64,
    /// `((g^{-1}(mean + sd) - g^{-1}(mean - sd)) / 2)^2`.
    pub variance_proxy: f64,
}

/// A GP trained on transformed data together with the learned transform.
#[derive(Debug)]
pub struct WarpedGPModel {
    gp: GPModel,
    warp: WarpParams,
    /// Set when degenerate (constant) data forced an affine-only transform.
    affine_fallback: bool,
}

/// Knobs of the joint warp + GP hyperparameter fit.
#[derive(Debug, Clone)]
pub struct WarpFitOptions {
    /// Lower bound of the data domain.
    pub y_lower: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Objective-evaluation budget per restart.
    pub max_evals: usize,
    /// See [`FitOptions::hyper_subsample`].
    pub hyper_subsample: Option<usize>,
}

impl Default for WarpFitOptions {
    fn default() -> Self {
        WarpFitOptions {
            y_lower: 0.0,
            restarts: 8,
            seed: 0,
            max_evals: 600,
            hyper_subsample: None,
        }
    }
}

/// Jointly fit the transform control parameters and the GP hyperparameters
/// by maximizing the transformed-data marginal likelihood plus the
/// log-Jacobian correction `sum_m log g'(y_m)`.
pub fn fit_warped(
    train_points: &[Vec<f64>],
    train_values: &[f64],
    restarts: usize,
    seed: u64,
) -> Result<WarpedGPModel> {
    fit_warped_with(
        train_points,
        train_values,
        &WarpFitOptions {
            restarts,
            seed,
            ..WarpFitOptions::default()
        },
    )
}

pub fn fit_warped_with(
    train_points: &[Vec<f64>],
    train_values: &[f64],
    opts: &WarpFitOptions,
) -> Result<WarpedGPModel> {
    let m = train_values.len();
    if m < 2 {
        return Err(Error::FitFailure(format!("need at least 2 training points, got {m}")));
    }
    if train_points.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: train_points.len(),
        });
    }
    let y_lower = opts.y_lower;
    let y_min = train_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let y_max = train_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if y_min.is_nan() || y_min <= y_lower {
        return Err(Error::OutOfDomain(format!(
            "all training values must exceed the bound {y_lower}; min is {y_min}"
        )));
    }

    // Degenerate data: no spread to inform the transform. Put the cutoff
    // below the data so the transform is affine there and flag it.
    if y_max - y_min <= 1e-12 * (1.0 + y_max.abs()) {
        let warp = derive_warp(y_lower, y_lower + 0.5 * (y_min - y_lower), 0.0)?;
        let transformed = transform_all(&warp, train_values)?;
        let gp = GPModel::fit_with(
            train_points,
            &transformed,
            &FitOptions {
                restarts: opts.restarts,
                seed: opts.seed,
                max_evals: opts.max_evals,
                hyper_subsample: opts.hyper_subsample,
            },
        )?;
        return Ok(WarpedGPModel {
            gp,
            warp,
            affine_fallback: true,
        });
    }

    // Subsample for the joint hyperparameter search (final conditioning uses
    // all points).
    let sub_idx: Vec<usize> = match opts.hyper_subsample {
        Some(k) if k >= 2 && k < m => (0..k).map(|i| i * m / k).collect(),
        _ => (0..m).collect(),
    };
    let sub_points: Vec<Vec<f64>> = sub_idx.iter().map(|&i| train_points[i].clone()).collect();
    let sub_values: Vec<f64> = sub_idx.iter().map(|&i| train_values[i]).collect();
    let dim = sub_points[0].len();

    // Search ranges. Cutoff span in log space over
    // [0.5 (min - y_lower), P90 - y_lower]; b over the data's g-space span
    // plus a margin.
    let mut sorted = sub_values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p90 = sorted[((sorted.len() - 1) as f64 * 0.9).round() as usize];
    let span_lo = 0.5 * (y_min - y_lower);
    let span_hi = (p90 - y_lower).max(span_lo * (1.0 + 1e-9));
    let ref_warp = derive_warp(y_lower, y_lower + (span_lo * span_hi).sqrt(), 0.0)?;
    let g_lo = ref_warp.g_forward(y_min)?;
    let g_hi = ref_warp.g_forward(y_max)?;
    let g_span = (g_hi - g_lo).abs().max(1.0);
    let b_range = g_span + 10.0;

    // theta = [ln span, b, mu0, ln sigma0^2, ln l_1..l_N], with GP ranges from
    // the reference transform widened to cover the transform family.
    let ref_transformed = transform_all(&ref_warp, &sub_values)?;
    let t_mean = ref_transformed.iter().sum::<f64>() / m.min(ref_transformed.len()) as f64;
    let t_var = {
        let n = ref_transformed.len() as f64;
        let mu = ref_transformed.iter().sum::<f64>() / n;
        (ref_transformed.iter().map(|y| (y - mu).powi(2)).sum::<f64>() / n)
            .max(1e-12 * (1.0 + mu * mu))
    };
    let t_sd = t_var.sqrt();
    let spans: Vec<f64> = (0..dim)
        .map(|i| {
            let lo = sub_points.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
            let hi = sub_points.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max);
            (hi - lo).max(1e-9)
        })
        .collect();

    let mut bounds = vec![
        Bound::new(span_lo.ln(), span_hi.ln()),
        Bound::new(-b_range, b_range),
        Bound::new(t_mean - 20.0 * t_sd - b_range, t_mean + 20.0 * t_sd + b_range),
        Bound::new((1e-8 * t_var).ln(), (1e8 * t_var).ln()),
    ];
    bounds.extend(spans.iter().map(|s| Bound::new((1e-3 * s).ln(), (10.0 * s).ln())));

    let objective = |theta: &[f64]| -> f64 {
        let warp = match derive_warp(y_lower, y_lower + theta[0].exp(), theta[1]) {
            Ok(w) => w,
            Err(_) => return f64::INFINITY,
        };
        let transformed = match transform_all(&warp, &sub_values) {
            Ok(t) => t,
            Err(_) => return f64::INFINITY,
        };
        let hyper = match crate::gp::GPHyperparams::new(
            theta[2],
            theta[3].exp(),
            theta[4..4 + dim].iter().map(|t| t.exp()).collect(),
        ) {
            Ok(h) => h,
            Err(_) => return f64::INFINITY,
        };
        let lml = match crate::gp::log_marginal_likelihood(&sub_points, &transformed, &hyper) {
            Ok(l) if l.is_finite() => l,
            _ => return f64::INFINITY,
        };
        let jacobian: f64 = sub_values
            .iter()
            .map(|y| warp.g_forward_derivative(*y).unwrap_or(f64::NAN).ln())
            .sum();
        if !jacobian.is_finite() {
            return f64::INFINITY;
        }
        -(lml + jacobian)
    };

    // Heuristic start: cutoff at the median span, b = 0, GP hypers from the
    // reference transform.
    let mut starts: Vec<Vec<f64>> = Vec::new();
    let p50 = sorted[(sorted.len() - 1) / 2];
    let mut start = vec![
        ((p50 - y_lower).max(span_lo).min(span_hi)).ln(),
        0.0,
        t_mean,
        t_var.ln(),
    ];
    start.extend(spans.iter().map(|s| (0.25 * s).ln()));
    starts.push(start);
    let mut rng = SeedSpace::new(opts.seed).stream("warp-fit-restarts");
    for _ in 1..opts.restarts.max(1) {
        starts.push(bounds.iter().map(|b| rng.random_range(b.lo..=b.hi)).collect());
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in &starts {
        let r = nelder_mead(objective, s, &bounds, opts.max_evals, 1e-8);
        if r.value.is_finite() && best.as_ref().is_none_or(|(v, _)| r.value < *v) {
            best = Some((r.value, r.point));
        }
    }
    let (_, theta) = best.ok_or_else(|| {
        Error::FitFailure("warp fit: all restarts failed factorization".into())
    })?;

    let warp = derive_warp(y_lower, y_lower + theta[0].exp(), theta[1])?;
    let transformed = transform_all(&warp, train_values)?;
    let hyper = crate::gp::GPHyperparams::new(
        theta[2],
        theta[3].exp(),
        theta[4..4 + dim].iter().map(|t| t.exp()).collect(),
    )?;
    let gp = GPModel::condition(train_points.to_vec(), transformed, hyper)?;
    Ok(WarpedGPModel {
        gp,
        warp,
        affine_fallback: false,
    })
}

fn transform_all(warp: &WarpParams, values: &[f64]) -> Result<Vec<f64>> {
    values.iter().map(|y| warp.g_forward(*y)).collect()
}

impl WarpedGPModel {
    pub fn gp(&self) -> &GPModel {
        &self.gp
    }

    pub fn warp(&self) -> &WarpParams {
        &self.warp
    }

    /// The lower bound of the output domain.
    pub fn bound(&self) -> f64 {
        self.warp.y_lower
    }

    pub fn affine_fallback(&self) -> bool {
        self.affine_fallback
    }

    pub fn dim(&self) -> usize {
        self.gp.dim()
    }

    /// Bounded-domain prediction: transformed median and symmetric-quantile
    /// deviations.
    pub fn predict_bounded(&self, p_star: &[f64]) -> Result<BoundedPrediction> {
        Ok(self.predict_bounded_batch(std::slice::from_ref(&p_star.to_vec()))?[0])
    }

    pub fn predict_bounded_batch(&self, points: &[Vec<f64>]) -> Result<Vec<BoundedPrediction>> {
        let preds = self.gp.predict_batch(points)?;
        Ok(preds
            .iter()
            .map(|p| {
                let sd = p.variance.sqrt();
                let median = self.warp.g_inverse(p.mean);
                let lo = self.warp.g_inverse(p.mean - sd);
                let hi = self.warp.g_inverse(p.mean + sd);
                let half = 0.5 * (hi - lo);
                BoundedPrediction {
                    median,
                    sigma_minus: median - lo,
                    sigma_plus: hi - median,
                    variance_proxy: half * half,
                }
            })
            .collect())
    }

    /// Median and variance proxy used by the robust estimator, in the
    /// requested space.
    pub fn predict_for_estimator(
        &self,
        points: &[Vec<f64>],
        space: VarianceSpace,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        match space {
            VarianceSpace::Bounded => {
                let preds = self.predict_bounded_batch(points)?;
                Ok((
                    preds.iter().map(|p| p.median).collect(),
                    preds.iter().map(|p| p.variance_proxy).collect(),
                ))
            }
            VarianceSpace::Transformed => {
                let preds = self.gp.predict_batch(points)?;
                Ok((
                    preds.iter().map(|p| self.warp.g_inverse(p.mean)).collect(),
                    preds.iter().map(|p| p.variance).collect(),
                ))
            }
        }
    }

    pub fn to_document(&self) -> WarpedGpDocument {
        WarpedGpDocument {
            gp: self.gp.to_document(),
            warp: self.warp.clone(),
            affine_fallback: self.affine_fallback,
        }
    }

    pub fn from_document(doc: WarpedGpDocument) -> Result<WarpedGPModel> {
        Ok(WarpedGPModel {
            gp: GPModel::from_document(doc.gp)?,
            warp: doc.warp,
            affine_fallback: doc.affine_fallback,
        })
    }

    /// Raw-unit span of each training axis; used for sanity checks by
    /// downstream stages.
    pub fn train_axis_span(&self, axis: usize) -> f64 {
        let pts = self.gp.train_points();
        let lo = pts.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

/// Serialized form of a warped GP.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WarpedGpDocument {
    pub gp: GpDocument,
    pub warp: WarpParams,
    pub affine_fallback: bool,
}
