//! Dense symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Plenty for the kernel sizes this crate sees (a few hundred rows): simple,
//! numerically robust, and it delivers the full orthonormal eigenbasis the
//! mode projections need. Convergence is declared when the off-diagonal
//! Frobenius mass drops below `1e-12 * ||A||_F`.

use ndarray::Array2;

#[derive(Debug, Clone)]
pub struct JacobiResult {
    /// Eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
    /// Matching orthonormal eigenvectors as columns.
    pub vectors: Array2<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cyclic Jacobi on a symmetric matrix. `max_sweeps` bounds the work; 50 is
/// far beyond what a few hundred rows ever need (typically < 12).
pub fn jacobi_eigen(a: &Array2<f64>, max_sweeps: usize) -> JacobiResult {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "jacobi needs a square matrix");
    let mut m = a.clone();
    let mut v = Array2::eye(n);
    let norm = frobenius(&m);
    let tol = 1e-12 * norm;

    let mut sweeps = 0;
    let mut converged = norm == 0.0 || off_diagonal_norm(&m) <= tol;
    while !converged && sweeps < max_sweeps {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                // Rotation angle zeroing m[p][q]: standard stable formulas.
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        converged = off_diagonal_norm(&m) <= tol;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[(row, col)] = v[(row, src)];
        }
    }

    JacobiResult {
        eigenvalues,
        vectors,
        sweeps,
        converged,
    }
}
