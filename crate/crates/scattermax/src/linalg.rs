//! Dense linear algebra kernels for the GP layer.
//!
//! The batch-variance path uses a hand-rolled blocked multiply whose
//! per-column summation order is a fixed function of the matrix height only.
//! This makes a batched prediction bit-identical to the same points predicted
//! one at a time, which the prediction contract relies on.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of `K + jitter * I`.
#[derive(Debug, Clone)]
pub struct KernelFactor {
    l: DMatrix<f64>,
    jitter: f64,
}

impl KernelFactor {
    /// Factorize with escalating diagonal jitter `1e-10 * scale` up to
    /// `1e-4 * scale`.
    pub fn factorize(kernel: &DMatrix<f64>, scale: f64) -> Result<Self> {
        let n = kernel.nrows();
        let mut rel = 1e-10;
        while rel <= 1e-4 * (1.0 + 1e-12) {
            let jitter = rel * scale;
            let mut k = kernel.clone();
            for i in 0..n {
                k[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(k) {
                return Ok(KernelFactor {
                    l: chol.unpack(),
                    jitter,
                });
            }
            rel *= 10.0;
        }
        Err(Error::NotPositiveDefinite { size: n })
    }

    pub fn size(&self) -> usize {
        self.l.nrows()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Solve `(L L^T) x = b`.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.l.solve_lower_triangular_mut(&mut x);
        self.l.tr_solve_lower_triangular_mut(&mut x);
        x
    }

    /// `log det (K + jitter I) = 2 sum_i log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.size()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    /// Explicit `L^{-1}`, computed column-wise by forward substitution.
    pub fn l_inverse(&self) -> DMatrix<f64> {
        let n = self.size();
        let data = self.l.as_slice(); // column-major
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
        (0..n)
            .into_par_iter()
            .map(|j| {
                let mut x = vec![0.0; n];
                x[j] = 1.0;
                for k in j..n {
                    let xk = x[k] / data[k * n + k];
                    x[k] = xk;
                    if xk != 0.0 {
                        let col_k = &data[k * n..(k + 1) * n];
                        for i in (k + 1)..n {
                            x[i] -= col_k[i] * xk;
                        }
                    }
                }
                x
            })
            .collect_into_vec(&mut cols);
        DMatrix::from_fn(n, n, |i, j| cols[j][i])
    }
}

/// Number of right-hand-side columns processed together by
/// [`column_norms_sq_of_product`]. Grouping amortizes the traversal of `a`;
/// the per-column summation order stays independent of the group.
const GROUP: usize = 8;

/// For each column `b_j` of `b` (given column-major as `cols`), compute
/// `||a * b_j||^2`.
///
/// The accumulation order over `k` is ascending for every output element
/// regardless of how many columns are present, so results are bit-identical
/// between batched and one-at-a-time calls.
pub fn column_norms_sq_of_product(a: &DMatrix<f64>, cols: &[Vec<f64>]) -> Vec<f64> {
    let n = a.nrows();
    let m = a.ncols();
    let a_data = a.as_slice(); // column-major: a[(i, k)] = a_data[k * n + i]
    let mut out = vec![0.0; cols.len()];
    let groups: Vec<(usize, &[Vec<f64>])> = cols
        .chunks(GROUP)
        .enumerate()
        .map(|(gi, chunk)| (gi * GROUP, chunk))
        .collect();
    let results: Vec<(usize, Vec<f64>)> = groups
        .into_par_iter()
        .map(|(offset, chunk)| {
            let g = chunk.len();
            // v holds the g product columns, each contiguous.
            let mut v = vec![0.0f64; g * n];
            for k in 0..m {
                let a_col = &a_data[k * n..(k + 1) * n];
                for (t, b_col) in chunk.iter().enumerate() {
                    let c = b_col[k];
                    if c != 0.0 {
                        let vt = &mut v[t * n..(t + 1) * n];
                        for i in 0..n {
                            vt[i] += a_col[i] * c;
                        }
                    }
                }
            }
            let norms = (0..g)
                .map(|t| {
                    let vt = &v[t * n..(t + 1) * n];
                    let mut s = 0.0;
                    for &x in vt {
                        s += x * x;
                    }
                    s
                })
                .collect();
            (offset, norms)
        })
        .collect();
    for (offset, norms) in results {
        out[offset..offset + norms.len()].copy_from_slice(&norms);
    }
    out
}

/// Plain dot product with a fixed left-to-right summation order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> DMatrix<f64> {
        // A = B B^T + n I with a fixed pseudo-random B.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let b = DMatrix::from_fn(n, n, |_, _| next());
        &b * b.transpose() + DMatrix::identity(n, n) * n as f64
    }

    #[test]
    fn factorization_reproduces_matrix() {
        let k = spd(24);
        let f = KernelFactor::factorize(&k, 1.0).unwrap();
        let rebuilt = f.l() * f.l().transpose();
        let rel = (&rebuilt - &k).norm() / k.norm();
        assert!(rel < 1e-8, "relative Frobenius error {rel}");
    }

    #[test]
    fn solve_inverts() {
        let k = spd(16);
        let f = KernelFactor::factorize(&k, 1.0).unwrap();
        let b = DVector::from_fn(16, |i, _| (i as f64).sin());
        let x = f.solve_vec(&b);
        let r = (&k * &x - &b).norm() / b.norm();
        assert!(r < 1e-8);
    }

    #[test]
    fn log_det_matches_dense() {
        let k = spd(12);
        let f = KernelFactor::factorize(&k, 1.0).unwrap();
        // Oracle: log det via LU determinant on the jittered matrix.
        let mut kj = k.clone();
        for i in 0..12 {
            kj[(i, i)] += f.jitter();
        }
        let det = kj.lu().determinant();
        assert!((f.log_det() - det.ln()).abs() < 1e-8);
    }

    #[test]
    fn l_inverse_is_inverse() {
        let k = spd(20);
        let f = KernelFactor::factorize(&k, 1.0).unwrap();
        let linv = f.l_inverse();
        let eye = &linv * f.l();
        let err = (&eye - DMatrix::<f64>::identity(20, 20)).norm();
        assert!(err < 1e-9, "||L^-1 L - I|| = {err}");
    }

    #[test]
    fn grouped_norms_match_reference_and_single_calls() {
        let a = spd(33);
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let cols: Vec<Vec<f64>> = (0..29).map(|_| (0..33).map(|_| next()).collect()).collect();
        let batched = column_norms_sq_of_product(&a, &cols);
        for (j, col) in cols.iter().enumerate() {
            // Bitwise equality against a one-column call.
            let single = column_norms_sq_of_product(&a, std::slice::from_ref(col));
            assert_eq!(batched[j], single[0], "column {j} differs from single call");
            // Close to the nalgebra reference.
            let v = &a * DVector::from_column_slice(col);
            assert!((batched[j] - v.norm_squared()).abs() < 1e-9 * v.norm_squared().max(1.0));
        }
    }
}
