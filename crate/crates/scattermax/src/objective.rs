//! Pluggable forward-model interface standing in for the expensive solver,
//! a registry of synthetic bounded test objectives, and brute-force oracles.
//!
//! Every built-in objective is deterministic, non-negative on its default
//! domain, and cheap, so campaign behavior can be tested hermetically. Real
//! deployments implement [`ObjectiveModel`] over a solver client or use the
//! external-command adapter.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{BoxDomain, ParameterVector};
use crate::error::{Error, Result};
use crate::mc::{percentile, sample_mvn, ManufacturingDistribution};

/// A deterministic forward model mapping design parameters to a figure of
/// merit bounded below.
pub trait ObjectiveModel: Sync + Send {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn default_domain(&self) -> BoxDomain;
    /// Lower bound of the output domain (0 for all built-ins).
    fn lower_bound(&self) -> f64 {
        0.0
    }
    fn eval(&self, p: &[f64]) -> Result<f64>;
}

/// A broad plateau plus a much narrower, taller ridge: the synthetic analog
/// of a fragile resonance sitting on top of a robust background optimum.
/// The ridge maximum beats the plateau pointwise but collapses under
/// parameter scatter wider than the ridge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgePlateauSpec {
    pub plateau_center: ParameterVector,
    pub plateau_width: f64,
    pub plateau_height: f64,
    pub ridge_center: ParameterVector,
    pub ridge_widths: Vec<f64>,
    pub ridge_height: f64,
}

impl RidgePlateauSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.plateau_center.len();
        if n == 0 || self.ridge_center.len() != n || self.ridge_widths.len() != n {
            return Err(Error::Config(format!(
                "ridge/plateau dimensions disagree: {} vs {} vs {}",
                n,
                self.ridge_center.len(),
                self.ridge_widths.len()
            )));
        }
        let positive = |w: f64| w.is_finite() && w > 0.0;
        if !positive(self.plateau_width) || !self.ridge_widths.iter().all(|w| positive(*w)) {
            return Err(Error::Config("all widths must be positive".into()));
        }
        if !(self.ridge_height.is_finite() && self.ridge_height > self.plateau_height) {
            return Err(Error::Config(format!(
                "ridge height {} must exceed plateau height {}",
                self.ridge_height, self.plateau_height
            )));
        }
        Ok(())
    }
}

/// `plateau_height * exp(-||p - c_p||^2 / (2 w_p^2))
///  + ridge_height * exp(-sum_i (p_i - c_r_i)^2 / (2 w_r_i^2))`.
pub fn eval_ridge_plateau(spec: &RidgePlateauSpec, p: &[f64]) -> Result<f64> {
    let n = spec.plateau_center.len();
    if p.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: p.len(),
        });
    }
    let mut plateau_exp = 0.0;
    let mut ridge_exp = 0.0;
    for (i, x) in p.iter().enumerate() {
        let dp = x - spec.plateau_center[i];
        plateau_exp += dp * dp;
        let dr = x - spec.ridge_center[i];
        ridge_exp += dr * dr / (2.0 * spec.ridge_widths[i] * spec.ridge_widths[i]);
    }
    plateau_exp /= 2.0 * spec.plateau_width * spec.plateau_width;
    Ok(spec.plateau_height * (-plateau_exp).exp() + spec.ridge_height * (-ridge_exp).exp())
}

/// Ridge-plateau objective bound to a domain.
#[derive(Debug, Clone)]
pub struct RidgePlateauModel {
    name: String,
    spec: RidgePlateauSpec,
    domain: BoxDomain,
}

impl RidgePlateauModel {
    pub fn new(name: impl Into<String>, spec: RidgePlateauSpec, domain: BoxDomain) -> Result<Self> {
        spec.validate()?;
        domain.check_dim(spec.plateau_center.len())?;
        Ok(RidgePlateauModel {
            name: name.into(),
            spec,
            domain,
        })
    }

    pub fn spec(&self) -> &RidgePlateauSpec {
        &self.spec
    }
}

impl ObjectiveModel for RidgePlateauModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.spec.plateau_center.len()
    }

    fn default_domain(&self) -> BoxDomain {
        self.domain.clone()
    }

    fn eval(&self, p: &[f64]) -> Result<f64> {
        eval_ridge_plateau(&self.spec, p)
    }
}

/// A smooth positive two-bump objective for surrogate accuracy tests.
/// `ripple > 0` superimposes a fine-scale oscillation (still positive, still
/// smooth) that keeps a dense GP honest about its predictive uncertainty.
#[derive(Debug, Clone)]
pub struct SmoothBumpsModel {
    name: &'static str,
    domain: BoxDomain,
    ripple: f64,
}

impl ObjectiveModel for SmoothBumpsModel {
    fn name(&self) -> &str {
        self.name
    }

    fn dim(&self) -> usize {
        2
    }

    fn default_domain(&self) -> BoxDomain {
        self.domain.clone()
    }

    fn eval(&self, p: &[f64]) -> Result<f64> {
        if p.len() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                actual: p.len(),
            });
        }
        let (x, y) = (p[0], p[1]);
        let a = 3.0 * (-((x - 0.3).powi(2) + (y - 0.6).powi(2)) / 0.32).exp();
        let b = 1.5 * (-((x + 0.5).powi(2) + (y + 0.4).powi(2)) / 0.5).exp();
        let r = self.ripple * (1.0 + (80.0 * x).sin() * (87.0 * y).sin());
        Ok(a + b + r + 0.2)
    }
}

/// The frozen 4-D campaign fixture: wide domain, broad plateau, narrow ridge
/// whose peak dwarfs the plateau but dies under 16.8-unit scatter. The ridge
/// sits next to a low-index Sobol point of the wide domain, so every
/// training campaign of at least 32 samples catches a strong ridge value.
pub fn ridge_plateau_4d() -> RidgePlateauModel {
    let spec = RidgePlateauSpec {
        plateau_center: vec![420.0, 300.0, 380.0, 250.0],
        plateau_width: 70.0,
        plateau_height: 5.0,
        ridge_center: vec![145.0, 145.0, 320.0, 560.0],
        ridge_widths: vec![7.0, 7.0, 150.0, 150.0],
        ridge_height: 50.0,
    };
    let domain = BoxDomain::new(
        vec![56.0; 4],
        vec![616.0; 4],
        vec!["d1".into(), "d2".into(), "d3".into(), "d4".into()],
    )
    .unwrap();
    RidgePlateauModel::new("ridge-plateau-4d", spec, domain).unwrap()
}

/// 2-D reference instance used by unit tests and oracles. The ridge sits
/// next to Sobol point #3 of the default domain, so any Sobol training set
/// of at least four points catches a near-peak value.
pub fn ridge_plateau_2d() -> RidgePlateauModel {
    let spec = RidgePlateauSpec {
        plateau_center: vec![0.5, -0.3],
        plateau_width: 1.0,
        plateau_height: 1.0,
        ridge_center: vec![-1.01, 1.01],
        ridge_widths: vec![0.05, 0.05],
        ridge_height: 10.0,
    };
    let domain = BoxDomain::cube(-2.0, 2.0, 2).unwrap();
    RidgePlateauModel::new("ridge-plateau-2d", spec, domain).unwrap()
}

/// Control fixture with a single broad optimum (no ridge to speak of: the
/// "ridge" is co-located and broad, so naive and robust optima coincide).
pub fn plateau_4d() -> RidgePlateauModel {
    let spec = RidgePlateauSpec {
        plateau_center: vec![336.0; 4],
        plateau_width: 90.0,
        plateau_height: 4.0,
        ridge_center: vec![336.0; 4],
        ridge_widths: vec![80.0; 4],
        ridge_height: 5.0,
    };
    let domain = BoxDomain::new(
        vec![56.0; 4],
        vec![616.0; 4],
        vec!["d1".into(), "d2".into(), "d3".into(), "d4".into()],
    )
    .unwrap();
    RidgePlateauModel::new("plateau-4d", spec, domain).unwrap()
}

pub fn smooth_2d() -> SmoothBumpsModel {
    SmoothBumpsModel {
        name: "smooth-2d",
        domain: BoxDomain::cube(-1.0, 1.0, 2).unwrap(),
        ripple: 0.0,
    }
}

/// The smooth two-bump objective with a fine ripple on top.
pub fn rippled_2d() -> SmoothBumpsModel {
    SmoothBumpsModel {
        name: "rippled-2d",
        domain: BoxDomain::cube(-1.0, 1.0, 2).unwrap(),
        ripple: 0.15,
    }
}

/// Look up a built-in objective by name.
pub fn builtin(name: &str) -> Option<Arc<dyn ObjectiveModel>> {
    match name {
        "ridge-plateau-4d" => Some(Arc::new(ridge_plateau_4d())),
        "ridge-plateau-2d" => Some(Arc::new(ridge_plateau_2d())),
        "plateau-4d" => Some(Arc::new(plateau_4d())),
        "smooth-2d" => Some(Arc::new(smooth_2d())),
        "rippled-2d" => Some(Arc::new(rippled_2d())),
        _ => None,
    }
}

pub fn builtin_names() -> Vec<&'static str> {
    vec![
        "ridge-plateau-4d",
        "ridge-plateau-2d",
        "plateau-4d",
        "smooth-2d",
        "rippled-2d",
    ]
}

/// Evaluate the model at every point, in input order. Individual failures
/// are masked as `None`, not fatal.
pub fn evaluate_batch(
    model: &dyn ObjectiveModel,
    points: &[ParameterVector],
    parallelism: usize,
) -> Vec<Option<f64>> {
    let eval_one = |p: &ParameterVector| match model.eval(p) {
        Ok(v) if v.is_finite() => Some(v),
        _ => None,
    };
    if parallelism > 1 {
        points.par_iter().map(eval_one).collect()
    } else {
        points.iter().map(eval_one).collect()
    }
}

/// Ground-truth oracle: the direct Monte Carlo median of true-model outputs
/// under the manufacturing distribution.
pub fn brute_force_robust_median<R: Rng>(
    model: &dyn ObjectiveModel,
    dist: &ManufacturingDistribution,
    count: usize,
    rng: &mut R,
) -> Result<f64> {
    let points = sample_mvn(dist, count, rng);
    let values = evaluate_batch(model, &points, 2);
    let ok: Vec<f64> = values.into_iter().flatten().collect();
    if ok.len() * 2 < count {
        return Err(Error::TooManyFailures {
            failed: count - ok.len(),
            total: count,
        });
    }
    percentile(&ok, 50.0)
}
