use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{SeededRng, Tensor};

/// A kernel-estimation problem: recover `true_kernel` from `x_clean` and
/// `y_blurred = x_clean ⋆ true_kernel + noise` (valid region only).
#[derive(Clone, Debug)]
pub struct BlurProblem {
    pub true_kernel: Tensor,
    /// `[N, 1, H, W]`.
    pub x_clean: Tensor,
    /// `[N, 1, H - k + 1, W - k + 1]`.
    pub y_blurred: Tensor,
    pub noise_sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlurSpec {
    pub k: usize,
    pub sigma_kernel: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Normalized `k x k` Gaussian; `sigma == 0` gives the centered delta.
pub fn gaussian_kernel(k: usize, sigma: f64) -> Result<Tensor> {
    if k.is_multiple_of(2) {
        return Err(Error::contract(format!("blur kernel size {k} must be odd")));
    }
    let mid = (k / 2) as f64;
    let mut data = vec![0.0; k * k];
    if sigma <= 0.0 {
        data[k * k / 2] = 1.0;
    } else {
        for y in 0..k {
            for x in 0..k {
                let r2 = (y as f64 - mid).powi(2) + (x as f64 - mid).powi(2);
                data[y * k + x] = (-r2 / (2.0 * sigma * sigma)).exp();
            }
        }
        let total: f64 = data.iter().sum();
        data.iter_mut().for_each(|v| *v /= total);
    }
    Tensor::new(vec![k, k], data)
}

/// Valid-region correlation of every channel plane of `x` with a `k x k` kernel.
pub fn correlate_valid(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let k = kernel.shape()[0];
    if h < k || w < k {
        return Err(Error::shape(format!(
            "image {h}x{w} smaller than kernel {k}"
        )));
    }
    let (oh, ow) = (h - k + 1, w - k + 1);
    let kd = kernel.data();
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let src = x.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..k {
                    let row = &plane[(oy + ky) * w + ox..(oy + ky) * w + ox + k];
                    for (kx, v) in row.iter().enumerate() {
                        acc += kd[ky * k + kx] * v;
                    }
                }
                dst[(p * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Ok(out)
}

/// Blur single-channel images `[N, 1, H, W]` with a seeded Gaussian problem.
pub fn make_blur_problem(images: &Tensor, spec: &BlurSpec) -> Result<BlurProblem> {
    let (_, c, _, _) = images.dims4()?;
    if c != 1 {
        return Err(Error::shape(format!(
            "blur problem expects one channel, got {c}"
        )));
    }
    let true_kernel = gaussian_kernel(spec.k, spec.sigma_kernel)?;
    let mut y = correlate_valid(images, &true_kernel)?;
    if spec.noise_sigma > 0.0 {
        let mut rng = SeededRng::new(spec.seed);
        for v in y.data_mut() {
            *v += spec.noise_sigma * rng.gaussian();
        }
    }
    Ok(BlurProblem {
        true_kernel,
        x_clean: images.clone(),
        y_blurred: y,
        noise_sigma: spec.noise_sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_images() -> Tensor {
        let mut rng = SeededRng::new(61);
        rng.uniform_tensor(&[2, 1, 9, 9], 0.0, 1.0)
    }

    #[test]
    fn analytic_three_by_three() {
        let k = gaussian_kernel(3, 1.0).unwrap();
        let (e0, e1, e2) = (1.0, (-0.5f64).exp(), (-1.0f64).exp());
        let total = e0 + 4.0 * e1 + 4.0 * e2;
        let want = [e2, e1, e2, e1, e0, e1, e2, e1, e2].map(|v| v / total);
        for (a, b) in k.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(gaussian_kernel(4, 1.0).is_err());
    }

    #[test]
    fn vanishing_sigma_is_identity_on_interior() {
        let x = ramp_images();
        let spec = BlurSpec {
            k: 3,
            sigma_kernel: 1e-3,
            noise_sigma: 0.0,
            seed: 1,
        };
        let p = make_blur_problem(&x, &spec).unwrap();
        assert_eq!(p.y_blurred.shape(), &[2, 1, 7, 7]);
        for n in 0..2 {
            for y in 0..7 {
                for xx in 0..7 {
                    let got = p.y_blurred.data()[(n * 7 + y) * 7 + xx];
                    let want = x.data()[(n * 9 + y + 1) * 9 + xx + 1];
                    assert!((got - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let x = ramp_images();
        let spec = BlurSpec {
            k: 5,
            sigma_kernel: 1.5,
            noise_sigma: 0.05,
            seed: 9,
        };
        let a = make_blur_problem(&x, &spec).unwrap();
        let b = make_blur_problem(&x, &spec).unwrap();
        assert_eq!(a.y_blurred, b.y_blurred);
        let c = make_blur_problem(&x, &BlurSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.y_blurred, c.y_blurred);
    }
}
