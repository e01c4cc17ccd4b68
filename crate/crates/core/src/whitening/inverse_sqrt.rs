//! Approximate inverse square roots `(Cov + εI)^{-1/2}`.

use crate::error::{Error, Result};
use crate::linalg::{gemm, matmul, sym_eig, Matrix};

/// Output of the coupled iteration together with its last-step residual.
#[derive(Clone, Debug)]
pub struct InverseSqrt {
    pub d: Matrix,
    /// `‖Z_k Y_k - I‖_F` after the final step. Cheap convergence diagnostic.
    pub residual: f64,
}

/// Output of the uncoupled iteration.
#[derive(Clone, Debug)]
pub struct VanillaTrace {
    /// Last finite iterate, rescaled to approximate `(Cov + εI)^{-1/2}`.
    pub d: Matrix,
    /// `‖X_k X_k Â - I‖_F` for `k = 1..`; shorter than `iters` on overflow.
    pub residuals: Vec<f64>,
    /// Step at which the iterate stopped being finite, if it did.
    pub overflow_at: Option<usize>,
}

fn ridged(cov: &Matrix, eps: f64) -> Result<(Matrix, f64)> {
    if !cov.is_square() {
        return Err(Error::contract(format!(
            "covariance must be square, got {}x{}",
            cov.rows(),
            cov.cols()
        )));
    }
    if eps < 0.0 {
        return Err(Error::contract(format!("eps must be >= 0, got {eps}")));
    }
    let mut a = cov.clone();
    a.add_identity_in_place(eps);
    let tr = a.trace();
    if !(tr.is_finite() && tr > 0.0) {
        return Err(Error::Numerical {
            step: 0,
            reason: format!("trace of ridged covariance is {tr}"),
        });
    }
    a.scale_in_place(1.0 / tr);
    Ok((a, tr))
}

/// Coupled Newton–Schulz: `Y → Â^{1/2}`, `Z → Â^{-1/2}` with `Â = A / tr(A)`.
pub fn coupled_newton_schulz(cov: &Matrix, eps: f64, iters: usize) -> Result<Matrix> {
    Ok(coupled_newton_schulz_diag(cov, eps, iters)?.d)
}

pub fn coupled_newton_schulz_diag(cov: &Matrix, eps: f64, iters: usize) -> Result<InverseSqrt> {
    let mut residual = 0.0;
    let (d, _) = coupled_run(cov, eps, iters, |_, _, r| {
        residual = r;
        Ok(())
    })?;
    Ok(InverseSqrt { d, residual })
}

/// Per-iteration residuals `‖Z_k Z_k Â - I‖_F`, `k = 1..=iters`, plus the final `D`.
pub fn coupled_residual_trace(cov: &Matrix, eps: f64, iters: usize) -> Result<(Matrix, Vec<f64>)> {
    let (a_hat, _) = ridged(cov, eps)?;
    let mut trace = Vec::with_capacity(iters);
    let (d, _) = coupled_run(cov, eps, iters, |_, z, _| {
        let zz = matmul(z, z)?;
        trace.push(matmul(&zz, &a_hat)?.distance_from_identity());
        Ok(())
    })?;
    Ok((d, trace))
}

/// Runs the coupled iteration, calling `observe(step, Z_k, ‖Z_{k-1}Y_{k-1} - I‖)`
/// after each step. Returns `D` (rescaled, symmetrized) and `Y` (unscaled).
fn coupled_run(
    cov: &Matrix,
    eps: f64,
    iters: usize,
    mut observe: impl FnMut(usize, &Matrix, f64) -> Result<()>,
) -> Result<(Matrix, Matrix)> {
    let (a_hat, tr) = ridged(cov, eps)?;
    let n = a_hat.rows();
    let mut y = a_hat;
    let mut z = Matrix::identity(n);
    let mut t = Matrix::zeros(n, n);
    let mut scratch = Matrix::zeros(n, n);
    for step in 1..=iters {
        // t = (3I - Z Y) / 2
        gemm(-0.5, z.view(), y.view(), 0.0, &mut t)?;
        t.add_identity_in_place(1.5);
        // Z Y - I = -2 (t - I)
        let residual = 2.0 * t.distance_from_identity();
        gemm(1.0, y.view(), t.view(), 0.0, &mut scratch)?;
        std::mem::swap(&mut y, &mut scratch);
        gemm(1.0, t.view(), z.view(), 0.0, &mut scratch)?;
        std::mem::swap(&mut z, &mut scratch);
        y.symmetrize_in_place();
        z.symmetrize_in_place();
        if !(y.all_finite() && z.all_finite()) {
            return Err(Error::Numerical {
                step,
                reason: "coupled Newton–Schulz iterate became non-finite".into(),
            });
        }
        observe(step, &z, residual)?;
    }
    z.scale_in_place(1.0 / tr.sqrt());
    z.symmetrize_in_place();
    Ok((z, y))
}

/// Uncoupled iteration `X_{k+1} = ½ X_k (3I - Â X_k²)` from `X_0 = I`.
///
/// Mathematically equivalent to the coupled form but unstable in floating
/// point once `Â` is poorly conditioned.
pub fn vanilla_newton_schulz(cov: &Matrix, eps: f64, iters: usize) -> Result<VanillaTrace> {
    let (a_hat, tr) = ridged(cov, eps)?;
    let n = a_hat.rows();
    let mut x = Matrix::identity(n);
    let mut residuals = Vec::with_capacity(iters);
    let mut overflow_at = None;
    let mut xx = Matrix::zeros(n, n);
    let mut t = Matrix::zeros(n, n);
    for step in 1..=iters {
        gemm(1.0, x.view(), x.view(), 0.0, &mut xx)?;
        // t = (3I - Â X²) / 2
        gemm(-0.5, a_hat.view(), xx.view(), 0.0, &mut t)?;
        t.add_identity_in_place(1.5);
        let next = matmul(&x, &t)?;
        let r = if next.all_finite() {
            gemm(1.0, next.view(), next.view(), 0.0, &mut xx)?;
            matmul(&xx, &a_hat)?.distance_from_identity()
        } else {
            f64::INFINITY
        };
        if !r.is_finite() {
            residuals.push(f64::INFINITY);
            overflow_at = Some(step);
            break;
        }
        residuals.push(r);
        x = next;
    }
    x.scale_in_place(1.0 / tr.sqrt());
    x.symmetrize_in_place();
    Ok(VanillaTrace {
        d: x,
        residuals,
        overflow_at,
    })
}

/// `V diag((λ + ε)^{-1/2}) Vᵀ` from a full eigendecomposition.
pub fn inverse_sqrt_oracle(cov: &Matrix, eps: f64) -> Result<Matrix> {
    power_oracle(cov, eps, -0.5)
}

/// `V diag((λ + ε)^{1/2}) Vᵀ`.
pub fn sqrt_oracle(cov: &Matrix, eps: f64) -> Result<Matrix> {
    power_oracle(cov, eps, 0.5)
}

fn power_oracle(cov: &Matrix, eps: f64, p: f64) -> Result<Matrix> {
    let mut sym = cov.clone();
    sym.symmetrize_in_place();
    let e = sym_eig(&sym)?;
    // eigenvalues of a PSD matrix can come out at -1e-17; treat those as zero
    let floor = 1e-14 * e.values.last().copied().unwrap_or(0.0).abs();
    let smallest = e.values.first().copied().unwrap_or(1.0);
    if p < 0.0 && smallest.max(0.0) + eps <= floor {
        return Err(Error::Numerical {
            step: 0,
            reason: format!("matrix is singular (smallest eigenvalue {smallest:e})"),
        });
    }
    let mut d = e.map_values(|l| (l.max(0.0) + eps).powf(p));
    d.symmetrize_in_place();
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SeededRng;

    fn rel(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm()
    }

    #[test]
    fn identity_is_a_fixed_point() {
        // trace prescaling keeps I fixed only in one dimension; larger
        // identities start at I/n and converge back
        for iters in [1, 5, 30] {
            let d = coupled_newton_schulz(&Matrix::identity(1), 0.0, iters).unwrap();
            assert!(d.distance_from_identity() < 1e-15);
        }
        let d = coupled_newton_schulz(&Matrix::identity(6), 0.0, 30).unwrap();
        assert!(d.distance_from_identity() < 1e-12);
        let v = vanilla_newton_schulz(&Matrix::identity(1), 0.0, 10).unwrap();
        assert!(v.residuals.iter().all(|&r| r == 0.0));
        let v = vanilla_newton_schulz(&Matrix::identity(6), 0.0, 30).unwrap();
        assert!(*v.residuals.last().unwrap() < 1e-12);
    }

    #[test]
    fn diagonal_two_by_two() {
        let cov = Matrix::from_diag(&[2.0, 8.0]);
        let want = Matrix::from_diag(&[1.0 / 2f64.sqrt(), 1.0 / 8f64.sqrt()]);
        let d = coupled_newton_schulz(&cov, 0.0, 30).unwrap();
        assert!(d.max_abs_diff(&want) < 1e-6);
        assert!(d.is_symmetric(1e-9));
        let v = vanilla_newton_schulz(&cov, 0.0, 30).unwrap();
        assert!(v.d.max_abs_diff(&want) < 1e-6);
        assert!(inverse_sqrt_oracle(&cov, 0.0).unwrap().max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn oracle_examples() {
        let d = inverse_sqrt_oracle(&Matrix::from_diag(&[4.0]), 0.0).unwrap();
        assert!((d.get(0, 0) - 0.5).abs() < 1e-15);
        let d = inverse_sqrt_oracle(&Matrix::zeros(3, 3), 1.0).unwrap();
        assert!(d.distance_from_identity() < 1e-15);
        assert!(inverse_sqrt_oracle(&Matrix::zeros(3, 3), 0.0).is_err());

        let mut rng = SeededRng::new(21);
        let a = rng.random_spd(64, 0.1);
        let d = inverse_sqrt_oracle(&a, 0.0).unwrap();
        let dad = matmul(&matmul(&d, &a).unwrap(), &d).unwrap();
        assert!(dad.distance_from_identity() < 1e-8);
        let s = sqrt_oracle(&a, 0.0).unwrap();
        assert!(rel(&matmul(&s, &s).unwrap(), &a) < 1e-12);
    }

    #[test]
    fn coupled_matches_oracle_on_moderate_condition() {
        let mut rng = SeededRng::new(22);
        for n in [5, 27, 64] {
            let a = rng.random_spd(n, 1e-3);
            let d = coupled_newton_schulz(&a, 1e-5, 20).unwrap();
            let o = inverse_sqrt_oracle(&a, 1e-5).unwrap();
            assert!(rel(&d, &o) < 1e-4, "n={n}: {}", rel(&d, &o));
        }
    }

    #[test]
    fn step_residual_agrees_with_definition() {
        let mut rng = SeededRng::new(23);
        let a = rng.random_spd(12, 0.5);
        let out = coupled_newton_schulz_diag(&a, 0.0, 12).unwrap();
        assert!(out.residual < 1e-10);
        let (_, trace) = coupled_residual_trace(&a, 0.0, 12).unwrap();
        assert_eq!(trace.len(), 12);
        assert!(trace[11] < 1e-9);
    }

    #[test]
    fn non_finite_input_reports_step() {
        let mut a = Matrix::identity(3);
        a.set(0, 1, f64::NAN);
        a.set(1, 0, f64::NAN);
        match coupled_newton_schulz(&a, 0.0, 3) {
            Err(Error::Numerical { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn zero_trace_is_rejected() {
        assert!(matches!(
            coupled_newton_schulz(&Matrix::zeros(2, 2), 0.0, 3),
            Err(Error::Numerical { step: 0, .. })
        ));
    }
}
