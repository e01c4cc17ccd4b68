//! Least-squares harnesses: normal-equation solutions and the one-step
//! gradient-descent check on whitened features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_tn, sym_eig, Matrix};
use crate::whitening::{coupled_newton_schulz, inverse_sqrt_oracle};

/// Eigenvalues below this fraction of the largest count as zero.
const SINGULAR_RATIO: f64 = 1e-12;

/// `1/(2N) ‖X w - y‖²` (Frobenius over all targets).
pub fn l2_objective(x: &Matrix, w: &Matrix, y: &Matrix) -> Result<f64> {
    let r = matmul(x, w)?.sub(y)?;
    let n = x.rows() as f64;
    Ok(r.as_slice().iter().map(|v| v * v).sum::<f64>() / (2.0 * n))
}

/// One full-batch gradient step: `w - α (1/N) Xᵀ(X w - y)`.
pub fn gd_step_l2(x: &Matrix, w: &Matrix, y: &Matrix, alpha: f64) -> Result<Matrix> {
    let r = matmul(x, w)?.sub(y)?;
    let g = matmul_tn(x, &r)?;
    w.sub(&g.scaled(alpha / x.rows() as f64))
}

#[derive(Clone, Debug)]
pub struct ClosedForm {
    pub w: Matrix,
    /// Ridge added to `(1/N) XᵀX`; zero when the system was solved as is.
    pub ridge: f64,
}

/// `w = (XᵀX)⁻¹ Xᵀ y` through the eigendecomposition of `(1/N) XᵀX`.
///
/// A singular Gram matrix is an error unless `ridge` is given, in which case
/// `(1/N) XᵀX + ridge·I` is inverted instead.
pub fn closed_form_l2(x: &Matrix, y: &Matrix, ridge: Option<f64>) -> Result<ClosedForm> {
    if x.rows() != y.rows() {
        return Err(Error::shape(format!(
            "{} samples but {} targets",
            x.rows(),
            y.rows()
        )));
    }
    let n = x.rows() as f64;
    let gram = matmul_tn(x, x)?.scaled(1.0 / n);
    let rhs = matmul_tn(x, y)?.scaled(1.0 / n);
    let eig = sym_eig(&gram)?;
    let largest = eig.values.last().copied().unwrap_or(0.0);
    let smallest = eig.values.first().copied().unwrap_or(0.0);
    let singular = smallest <= SINGULAR_RATIO * largest.max(f64::MIN_POSITIVE);
    let used = match (singular, ridge) {
        (false, _) => 0.0,
        (true, Some(r)) if r > 0.0 => r,
        (true, _) => {
            return Err(Error::Numerical {
                step: 0,
                reason: format!(
                    "normal equations are singular (eigenvalues {smallest:e} .. {largest:e})"
                ),
            })
        }
    };
    let inv = eig.map_values(|l| 1.0 / (l.max(0.0) + used));
    Ok(ClosedForm {
        w: matmul(&inv, &rhs)?,
        ridge: used,
    })
}

/// How features are whitened before the one-step check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Whitener {
    Raw,
    Oracle { eps: f64 },
    NewtonSchulz { eps: f64, iters: usize },
}

/// `(X - μ) D` with `D ≈ (Cov + ε I)^{-1/2}`; `μ = 0` and `Cov = (1/N) XᵀX`
/// when uncentered.
pub fn whiten_features(x: &Matrix, whitener: Whitener, centered: bool) -> Result<Matrix> {
    let xc = if centered {
        center_columns(x)
    } else {
        x.clone()
    };
    let cov = || -> Result<Matrix> { Ok(matmul_tn(&xc, &xc)?.scaled(1.0 / x.rows() as f64)) };
    let d = match whitener {
        Whitener::Raw => return Ok(xc),
        Whitener::Oracle { eps } => inverse_sqrt_oracle(&cov()?, eps)?,
        Whitener::NewtonSchulz { eps, iters } => coupled_newton_schulz(&cov()?, eps, iters)?,
    };
    matmul(&xc, &d)
}

fn center_columns(x: &Matrix) -> Matrix {
    let n = x.rows() as f64;
    let mut mean = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n;
        }
    }
    Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) - mean[j])
}

/// `[X, 1]`: the design with an intercept column.
pub fn with_intercept(x: &Matrix) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols() + 1, |i, j| {
        if j < x.cols() {
            x.get(i, j)
        } else {
            1.0
        }
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OneStepReport {
    pub one_step_loss: f64,
    pub optimal_loss: f64,
    /// `(one_step - optimal) / optimal`.
    pub relative_gap: f64,
    /// Ridge the closed form needed (0 when the raw system was regular).
    pub ridge: f64,
}

impl OneStepReport {
    pub fn ridged(&self) -> bool {
        self.ridge > 0.0
    }
}

/// Loss after one gradient step at `α = 1` from `w = 0` on whitened features.
///
/// With `centered` the model carries an intercept and the whitened design is
/// `[(X - μ) D, 1]`.
pub fn one_step_l2_loss(x: &Matrix, y: &Matrix, whitener: Whitener, centered: bool) -> Result<f64> {
    let mut xw = whiten_features(x, whitener, centered)?;
    if centered {
        xw = with_intercept(&xw);
    }
    let w0 = Matrix::zeros(xw.cols(), y.cols());
    let w1 = gd_step_l2(&xw, &w0, y, 1.0)?;
    l2_objective(&xw, &w1, y)
}

/// Closed-form optimum over the raw design (`[X, 1]` when `centered`),
/// returned as `(loss, ridge used)`.
pub fn optimal_l2_loss(
    x: &Matrix,
    y: &Matrix,
    centered: bool,
    ridge: Option<f64>,
) -> Result<(f64, f64)> {
    let raw = if centered {
        with_intercept(x)
    } else {
        x.clone()
    };
    let best = closed_form_l2(&raw, y, ridge)?;
    Ok((l2_objective(&raw, &best.w, y)?, best.ridge))
}

impl OneStepReport {
    pub fn new(one_step_loss: f64, optimal_loss: f64, ridge: f64) -> Self {
        OneStepReport {
            one_step_loss,
            optimal_loss,
            relative_gap: (one_step_loss - optimal_loss) / optimal_loss.max(f64::MIN_POSITIVE),
            ridge,
        }
    }
}

/// [`one_step_l2_loss`] compared with [`optimal_l2_loss`].
pub fn one_step_convergence_check(
    x: &Matrix,
    y: &Matrix,
    whitener: Whitener,
    centered: bool,
    ridge: Option<f64>,
) -> Result<OneStepReport> {
    let one_step = one_step_l2_loss(x, y, whitener, centered)?;
    let (optimal, ridge) = optimal_l2_loss(x, y, centered, ridge)?;
    Ok(OneStepReport::new(one_step, optimal, ridge))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SeededRng;

    #[test]
    fn identity_design_returns_targets() {
        let x = Matrix::identity(4);
        let y = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]]);
        let w = closed_form_l2(&x, &y, None).unwrap().w;
        assert!(w.max_abs_diff(&y) < 1e-12);
    }

    #[test]
    fn whitened_design_solution_is_scaled_correlation() {
        // (1/N) XᵀX = I for the scaled first columns of a 4x4 Hadamard matrix
        let x = Matrix::from_rows(&[[1.0, 1.0], [1.0, -1.0], [1.0, 1.0], [1.0, -1.0]]);
        let y = Matrix::from_rows(&[[0.5], [2.0], [-1.0], [3.0]]);
        let w = closed_form_l2(&x, &y, None).unwrap().w;
        let want = matmul_tn(&x, &y).unwrap().scaled(0.25);
        assert!(w.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn solution_is_stationary() {
        let mut rng = SeededRng::new(3);
        let x = rng.gaussian_matrix(100, 5);
        let y = rng.gaussian_matrix(100, 1);
        let w = closed_form_l2(&x, &y, None).unwrap().w;
        let r = matmul(&x, &w).unwrap().sub(&y).unwrap();
        let g = matmul_tn(&x, &r).unwrap();
        assert!(g.frobenius_norm() < 1e-8, "{}", g.frobenius_norm());
    }

    #[test]
    fn singular_design_needs_a_ridge() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]);
        let y = Matrix::from_rows(&[[1.0], [2.0], [3.0]]);
        assert!(closed_form_l2(&x, &y, None).unwrap_err().is_numerical());
        let cf = closed_form_l2(&x, &y, Some(1e-6)).unwrap();
        assert_eq!(cf.ridge, 1e-6);
        let loss = l2_objective(&x, &cf.w, &y).unwrap();
        assert!(loss < 1e-10, "{loss}");
    }

    #[test]
    fn exact_whitening_converges_in_one_step() {
        let x = Matrix::from_rows(&[[1.0, 1.0], [1.0, -1.0], [1.0, 1.0], [1.0, -1.0]]);
        let y = Matrix::from_rows(&[[0.5], [2.0], [-1.0], [3.0]]);
        let r = one_step_convergence_check(&x, &y, Whitener::Raw, false, None).unwrap();
        assert!(r.relative_gap.abs() < 1e-14, "{r:?}");
    }

    #[test]
    fn raw_correlated_features_do_not_converge_in_one_step() {
        let mut rng = SeededRng::new(4);
        let base = rng.gaussian_matrix(500, 6);
        let x = Matrix::from_fn(500, 6, |i, j| base.get(i, j) + 3.0 * base.get(i, 0) + 1.0);
        let y = rng.gaussian_matrix(500, 2);
        let raw = one_step_convergence_check(&x, &y, Whitener::Raw, false, None).unwrap();
        assert!(raw.relative_gap > 0.5);
        let white =
            one_step_convergence_check(&x, &y, Whitener::Oracle { eps: 0.0 }, false, None).unwrap();
        assert!(white.relative_gap.abs() < 1e-10);
    }

    #[test]
    fn gd_recursion_matches_update_formula() {
        let mut rng = SeededRng::new(5);
        let x = rng.gaussian_matrix(20, 3);
        let y = rng.gaussian_matrix(20, 1);
        let w = rng.gaussian_matrix(3, 1);
        let next = gd_step_l2(&x, &w, &y, 0.1).unwrap();
        let xtx = matmul_tn(&x, &x).unwrap();
        let xty = matmul_tn(&x, &y).unwrap();
        let want = w
            .sub(
                &matmul(&xtx, &w)
                    .unwrap()
                    .sub(&xty)
                    .unwrap()
                    .scaled(0.1 / 20.0),
            )
            .unwrap();
        assert!(next.max_abs_diff(&want) < 1e-14);
    }
}
