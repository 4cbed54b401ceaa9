//! Cyclic Jacobi eigensolver for dense symmetric matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAX_SWEEPS: usize = 100;
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;
pub const SYMMETRY_TOL: f64 = 1e-10;
pub const CLAMP_TOL: f64 = 1e-10;

/// Ascending eigenvalues with eigenvectors stored as matching columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl SpectralDecomposition {
    /// `U Λ Uᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.eigenvalues.len();
        let mut scaled = self.eigenvectors.clone();
        for i in 0..n {
            for j in 0..n {
                scaled[(i, j)] *= self.eigenvalues[j];
            }
        }
        scaled.matmul(&self.eigenvectors.transpose())
    }

    /// `‖UᵀU − I‖_max`.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.eigenvalues.len();
        let gram = self.eigenvectors.transpose().matmul(&self.eigenvectors);
        gram.max_abs_diff(&Matrix::identity(n))
    }
}

fn max_off_diagonal(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut off: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            off = off.max(a[(i, j)].abs());
        }
    }
    off
}

/// Eigendecomposition by fixed-order cyclic Jacobi sweeps.
///
/// Converges when the largest off-diagonal magnitude drops below
/// `1e-12 · max(1, ‖L‖_max)`; otherwise fails after 100 sweeps. Eigenvalues
/// within `1e-10` outside `[0, 2]` are snapped to the boundary.
pub fn eigendecompose(l: &Matrix) -> Result<SpectralDecomposition> {
    if l.rows() != l.cols() {
        return Err(Error::contract(format!(
            "eigendecompose needs a square matrix, got {}x{}",
            l.rows(),
            l.cols()
        )));
    }
    if !l.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::contract(
            "eigendecompose input is not symmetric within 1e-10",
        ));
    }
    let n = l.rows();
    let mut a = l.clone();
    // Exact symmetry keeps the rotations consistent.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let scale = a.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = OFF_DIAGONAL_TOL * scale;
    let mut v = Matrix::identity(n);

    let mut converged = n <= 1;
    for _ in 0..MAX_SWEEPS {
        if max_off_diagonal(&a) < tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
    }
    if !converged {
        let residual = max_off_diagonal(&a);
        if residual >= tol {
            return Err(Error::Numeric {
                message: format!("Jacobi did not converge in {MAX_SWEEPS} sweeps"),
                residual,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| clamp_spectrum(a[(i, i)])).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            eigenvectors[(row, col)] = v[(row, src)];
        }
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn clamp_spectrum(lambda: f64) -> f64 {
    if (-CLAMP_TOL..0.0).contains(&lambda) {
        0.0
    } else if lambda > 2.0 && lambda <= 2.0 + CLAMP_TOL {
        2.0
    } else {
        lambda
    }
}

/// Applies the Jacobi rotation zeroing `a[p][q]`, accumulating into `v`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    let apq = a[(p, q)];
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a[(k, p)] = new_kp;
        a[(p, k)] = new_kp;
        a[(k, q)] = new_kq;
        a[(q, k)] = new_kq;
    }
    a[(p, p)] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
    a[(q, q)] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_input_is_sorted() {
        let m = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]);
        let d = eigendecompose(&m).unwrap();
        assert_eq!(d.eigenvalues, vec![1.0, 3.0]);
        assert!(d.reconstruct().max_abs_diff(&m) < 1e-14);
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]);
        assert!(matches!(eigendecompose(&m), Err(Error::Contract(_))));
    }

    #[test]
    fn general_symmetric_matrix() {
        let m = Matrix::from_rows(&[
            vec![4.0, 1.0, -2.0, 2.0],
            vec![1.0, 2.0, 0.0, 1.0],
            vec![-2.0, 0.0, 3.0, -2.0],
            vec![2.0, 1.0, -2.0, -1.0],
        ]);
        let d = eigendecompose(&m).unwrap();
        assert!(d.reconstruct().max_abs_diff(&m) < 1e-12);
        assert!(d.orthonormality_error() < 1e-12);
        assert!(d.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        let trace: f64 = d.eigenvalues.iter().sum();
        assert!((trace - 8.0).abs() < 1e-12);
    }

    #[test]
    fn clamping_window() {
        assert_eq!(clamp_spectrum(-1e-16), 0.0);
        assert_eq!(clamp_spectrum(2.0 + 1e-12), 2.0);
        assert_eq!(clamp_spectrum(-1e-6), -1e-6);
    }
}
