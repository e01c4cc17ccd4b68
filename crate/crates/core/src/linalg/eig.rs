//! Symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Slow (O(n³) per sweep) but accurate to rounding; this is the ground truth
//! the iterative inverse square roots are checked against.

use crate::error::{Error, Result};
use crate::linalg::{matmul_nt, Matrix};

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// Eigenvalues in ascending order with matching eigenvector columns.
#[derive(Clone, Debug)]
pub struct SymEig {
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector of `values[i]`.
    pub vectors: Matrix,
}

impl SymEig {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let s = f(self.values[j]);
            for i in 0..n {
                let v = scaled.get(i, j) * s;
                scaled.set(i, j, v);
            }
        }
        matmul_nt(&scaled, &self.vectors).expect("square factors")
    }

    pub fn reconstruct(&self) -> Matrix {
        self.map_values(|l| l)
    }
}

/// Eigendecomposition of a symmetric matrix.
///
/// Sweeps until the off-diagonal Frobenius mass drops below `1e-12 ‖A‖_F`.
pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    if !a.is_square() {
        return Err(Error::contract(format!(
            "sym_eig needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_symmetric(1e-12) {
        return Err(Error::contract("sym_eig input is not symmetric"));
    }
    if !a.all_finite() {
        return Err(Error::Numerical {
            step: 0,
            reason: "non-finite input to sym_eig".into(),
        });
    }
    let n = a.rows();
    let mut m = a.clone();
    m.symmetrize_in_place();
    // Rows of `vt` are eigenvectors, so rotations only touch contiguous rows.
    let mut vt = Matrix::identity(n);
    let threshold = OFF_DIAGONAL_TOL * a.frobenius_norm();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&m) <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut m, &mut vt, p, q);
            }
        }
    }
    if !converged && off_diagonal_norm(&m) > threshold {
        return Err(Error::Numerical {
            step: MAX_SWEEPS,
            reason: "Jacobi sweeps did not converge".into(),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(i, i).total_cmp(&m.get(j, j)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let vectors = Matrix::from_fn(n, n, |row, col| vt.get(order[col], row));
    Ok(SymEig { values, vectors })
}

fn off_diagonal_norm(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for (j, v) in m.row(i).iter().enumerate() {
            if i != j {
                acc += v * v;
            }
        }
    }
    acc.sqrt()
}

/// Annihilate `m[p][q]` with one rotation, keeping `m` symmetric.
fn rotate(m: &mut Matrix, vt: &mut Matrix, p: usize, q: usize) {
    let apq = m.get(p, q);
    if apq == 0.0 {
        return;
    }
    let app = m.get(p, p);
    let aqq = m.get(q, q);
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let n = m.rows();

    {
        let data = m.as_mut_slice();
        for k in 0..n {
            if k == p || k == q {
                continue;
            }
            let akp = data[p * n + k];
            let akq = data[q * n + k];
            let new_p = c * akp - s * akq;
            let new_q = s * akp + c * akq;
            data[p * n + k] = new_p;
            data[q * n + k] = new_q;
            data[k * n + p] = new_p;
            data[k * n + q] = new_q;
        }
        data[p * n + p] = app - t * apq;
        data[q * n + q] = aqq + t * apq;
        data[p * n + q] = 0.0;
        data[q * n + p] = 0.0;
    }

    let data = vt.as_mut_slice();
    for k in 0..n {
        let vp = data[p * n + k];
        let vq = data[q * n + k];
        data[p * n + k] = c * vp - s * vq;
        data[q * n + k] = s * vp + c * vq;
    }
}
