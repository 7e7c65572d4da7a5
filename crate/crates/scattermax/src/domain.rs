//! Points and axis-aligned boxes in the design space.
//!
//! Units (nm, µm, ...) are metadata carried by the axis labels; the numerics
//! are unit-agnostic throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the N-dimensional design space.
pub type ParameterVector = Vec<f64>;

/// An axis-aligned box `[lower_i, upper_i]` per axis, with one label per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    labels: Vec<String>,
}

impl BoxDomain {
    /// Build a labelled box. Requires `lower[i] < upper[i]` and at least one axis.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidDomain("domain must have at least one axis".into()));
        }
        if lower.len() != upper.len() || lower.len() != labels.len() {
            return Err(Error::InvalidDomain(format!(
                "mismatched axis counts: lower {}, upper {}, labels {}",
                lower.len(),
                upper.len(),
                labels.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidDomain(format!("axis {i}: non-finite bound")));
            }
            if lo >= hi {
                return Err(Error::InvalidDomain(format!(
                    "axis {i} ({}): lower {lo} must be < upper {hi}",
                    labels[i]
                )));
            }
        }
        Ok(BoxDomain { lower, upper, labels })
    }

    /// Build a box with generated labels `p0, p1, ...`.
    pub fn unlabeled(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let labels = (0..lower.len()).map(|i| format!("p{i}")).collect();
        Self::new(lower, upper, labels)
    }

    /// A hypercube `[lo, hi]^dim`.
    pub fn cube(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        Self::unlabeled(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, axis: usize) -> &str {
        &self.labels[axis]
    }

    /// Edge length of the given axis.
    pub fn span(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }

    /// Midpoint of the box.
    pub fn center(&self) -> ParameterVector {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + 0.5 * (hi - lo))
            .collect()
    }

    /// Clamp a point onto the box.
    pub fn clip_point(&self, point: &[f64]) -> ParameterVector {
        point
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (lo, hi))| x.clamp(*lo, *hi))
            .collect()
    }

    /// Intersect with another box of the same dimension. Errors if the
    /// intersection is empty on some axis.
    pub fn clip_to(&self, outer: &BoxDomain) -> Result<BoxDomain> {
        self.check_dim(outer.dim())?;
        let lower: Vec<f64> = self
            .lower
            .iter()
            .zip(&outer.lower)
            .map(|(a, b)| a.max(*b))
            .collect();
        let upper: Vec<f64> = self
            .upper
            .iter()
            .zip(&outer.upper)
            .map(|(a, b)| a.min(*b))
            .collect();
        BoxDomain::new(lower, upper, self.labels.clone())
    }

    /// Map a point into unit-cube coordinates of this box.
    pub fn normalize(&self, point: &[f64]) -> ParameterVector {
        point
            .iter()
            .enumerate()
            .map(|(i, x)| (x - self.lower[i]) / self.span(i))
            .collect()
    }

    /// Euclidean distance between two points in the unit-cube coordinates of
    /// this box.
    pub fn normalized_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(i, (x, y))| {
                let d = (x - y) / self.span(i);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: dim,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inverted_bounds() {
        assert!(BoxDomain::unlabeled(vec![1.0], vec![1.0]).is_err());
        assert!(BoxDomain::unlabeled(vec![2.0], vec![1.0]).is_err());
        assert!(BoxDomain::unlabeled(vec![], vec![]).is_err());
    }

    #[test]
    fn contains_and_clip() {
        let d = BoxDomain::cube(0.0, 2.0, 2).unwrap();
        assert!(d.contains(&[0.0, 2.0]));
        assert!(!d.contains(&[0.0, 2.1]));
        assert_eq!(d.clip_point(&[-1.0, 3.0]), vec![0.0, 2.0]);
    }

    #[test]
    fn normalized_distance_uses_span() {
        let d = BoxDomain::unlabeled(vec![0.0, 0.0], vec![10.0, 1.0]).unwrap();
        let r = d.normalized_distance(&[0.0, 0.0], &[10.0, 1.0]);
        assert!((r - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn clip_to_intersects() {
        let inner = BoxDomain::cube(-1.0, 5.0, 1).unwrap();
        let outer = BoxDomain::cube(0.0, 4.0, 1).unwrap();
        let c = inner.clip_to(&outer).unwrap();
        assert_eq!(c.lower(), &[0.0]);
        assert_eq!(c.upper(), &[4.0]);
    }
}
