use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef, Matrix};
use crate::patches::PatchMatrix;

/// Column means and covariance of a sample.
#[derive(Clone, Debug)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    pub samples: usize,
}

/// Covariance of a patch matrix on the `sample_stride` grid of output positions.
///
/// Centered: `(1/N)(X - μ)ᵀ(X - μ)`; uncentered: `(1/N) XᵀX`. `μ` is always
/// the column mean of the sampled rows.
pub fn covariance(x: &PatchMatrix, sample_stride: usize, centered: bool) -> Result<Moments> {
    let rows = x.sampled_rows(sample_stride);
    let sampled = gather_rows(x.matrix.view(), &rows);
    moments(sampled.view(), centered)
}

/// Copy the selected rows of a (possibly strided) view into a dense matrix.
pub fn gather_rows(x: MatRef<'_>, rows: &[usize]) -> Matrix {
    let cols = x.cols();
    let mut out = Matrix::zeros(rows.len(), cols);
    for (i, &r) in rows.iter().enumerate() {
        let dst = out.row_mut(i);
        for (j, v) in dst.iter_mut().enumerate() {
            *v = x.get(r, j);
        }
    }
    out
}

/// Moments of every row of `x`.
pub fn moments(x: MatRef<'_>, centered: bool) -> Result<Moments> {
    let n = x.rows();
    let f = x.cols();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "covariance needs at least 2 sampled rows, got {n}"
        )));
    }
    let mut mean = vec![0.0; f];
    for i in 0..n {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += x.get(i, j);
        }
    }
    let inv_n = 1.0 / n as f64;
    mean.iter_mut().for_each(|m| *m *= inv_n);

    let mut cov = Matrix::zeros(f, f);
    if centered {
        let mut xc = Matrix::zeros(n, f);
        for i in 0..n {
            for (j, v) in xc.row_mut(i).iter_mut().enumerate() {
                *v = x.get(i, j) - mean[j];
            }
        }
        gemm(inv_n, xc.view().t(), xc.view(), 0.0, &mut cov)?;
    } else {
        gemm(inv_n, x.t(), x, 0.0, &mut cov)?;
    }
    cov.symmetrize_in_place();
    Ok(Moments {
        mean,
        cov,
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{SeededRng, Tensor};
    use crate::patches::{im2col, PatchSpec};

    fn patch_matrix_of(m: Matrix) -> PatchMatrix {
        PatchMatrix {
            batch: m.rows(),
            channels: m.cols(),
            kernel: 1,
            out_h: 1,
            out_w: 1,
            matrix: m,
        }
    }

    #[test]
    fn identical_rows_have_zero_covariance() {
        let row = [0.5, -1.0, 2.0];
        let m = Matrix::from_rows(&[row, row, row, row]);
        let mo = covariance(&patch_matrix_of(m), 1, true).unwrap();
        assert_eq!(mo.mean, row.to_vec());
        assert!(mo.cov.frobenius_norm() < 1e-15);
    }

    #[test]
    fn scaled_orthonormal_columns_give_identity() {
        // Hadamard columns are orthogonal with squared norm N
        let h = Matrix::from_rows(&[
            [1.0, 1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0, -1.0],
            [1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, -1.0, 1.0],
        ]);
        let mo = covariance(&patch_matrix_of(h), 1, false).unwrap();
        assert!(mo.cov.distance_from_identity() < 1e-15);
    }

    #[test]
    fn too_few_rows() {
        let m = Matrix::from_rows(&[[1.0, 2.0]]);
        assert!(matches!(
            covariance(&patch_matrix_of(m), 1, true),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn strided_subsample_tracks_full_covariance() {
        let mut rng = SeededRng::new(11);
        // smooth the noise so that columns are correlated like natural patches
        let raw = rng.gaussian_tensor(&[4, 3, 66, 66]);
        let mut x = Tensor::zeros(&[4, 3, 64, 64]);
        for p in 0..12 {
            for y in 0..64 {
                for xx in 0..64 {
                    let mut acc = 0.0;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            acc += raw.data()[(p * 66 + y + dy) * 66 + xx + dx];
                        }
                    }
                    x.data_mut()[(p * 64 + y) * 64 + xx] = acc / 9.0;
                }
            }
        }
        let pm = im2col(&x, &PatchSpec::same(3)).unwrap();
        assert!(pm.rows() >= 10_000);
        let full = covariance(&pm, 1, true).unwrap();
        let sub = covariance(&pm, 2, true).unwrap();
        let gap = sub.cov.sub(&full.cov).unwrap().frobenius_norm() / full.cov.frobenius_norm();
        assert!(gap < 0.1, "relative gap {gap}");
        assert_eq!(sub.samples, 4 * 32 * 32);
    }

    #[test]
    fn centered_matches_definition() {
        let mut rng = SeededRng::new(12);
        let m = rng.gaussian_matrix(50, 4);
        let mo = moments(m.view(), true).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let direct: f64 = (0..50)
                    .map(|i| (m.get(i, a) - mo.mean[a]) * (m.get(i, b) - mo.mean[b]))
                    .sum::<f64>()
                    / 50.0;
                assert!((direct - mo.cov.get(a, b)).abs() < 1e-13);
            }
        }
    }
}
