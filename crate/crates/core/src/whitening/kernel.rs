use crate::error::{Error, Result};
use crate::linalg::{Matrix, Tensor};

/// Deconvolution kernels `[C, C, k, k]`: entry `[o]` is the row of `D` at
/// (channel `o`, center pixel), i.e. `D · vec(δ_o)` for a centered delta.
pub fn extract_deconv_kernel(d: &Matrix, k: usize, channels: usize) -> Result<Tensor> {
    if k.is_multiple_of(2) {
        return Err(Error::contract(format!(
            "kernel size {k} has no center pixel"
        )));
    }
    let f = channels * k * k;
    if d.rows() != f || d.cols() != f {
        return Err(Error::contract(format!(
            "deconvolution matrix is {}x{}, expected {f}x{f} for {channels} channels and k={k}",
            d.rows(),
            d.cols()
        )));
    }
    let center = (k / 2) * k + k / 2;
    let mut out = Vec::with_capacity(channels * f);
    for o in 0..channels {
        out.extend_from_slice(d.row(o * k * k + center));
    }
    Tensor::new(vec![channels, channels, k, k], out)
}

/// Per-channel center value against the mean of its surround.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterSurround {
    pub center: Vec<f64>,
    pub ring_mean: Vec<f64>,
}

impl CenterSurround {
    /// True when center and surround have strictly opposite signs in every channel.
    pub fn opposed(&self) -> bool {
        self.center
            .iter()
            .zip(&self.ring_mean)
            .all(|(c, r)| c * r < 0.0)
    }
}

/// For each channel `c`, compare `kernel[c, c]` at the center with the mean of
/// the pixels at Chebyshev distance `1..=radius` from it.
pub fn center_surround(kernel: &Tensor, radius: usize) -> Result<CenterSurround> {
    let (co, ci, kh, kw) = kernel.dims4()?;
    if co != ci || kh != kw || kh % 2 == 0 {
        return Err(Error::shape(format!(
            "expected [C, C, k, k] with odd k, got {:?}",
            kernel.shape()
        )));
    }
    let k = kh;
    let mid = k / 2;
    if radius == 0 || radius > mid {
        return Err(Error::contract(format!(
            "ring radius {radius} outside 1..={mid}"
        )));
    }
    let mut center = Vec::with_capacity(co);
    let mut ring_mean = Vec::with_capacity(co);
    for c in 0..co {
        let base = (c * ci + c) * k * k;
        let plane = &kernel.data()[base..base + k * k];
        center.push(plane[mid * k + mid]);
        let (mut sum, mut count) = (0.0, 0usize);
        for y in 0..k {
            for x in 0..k {
                let dist = y.abs_diff(mid).max(x.abs_diff(mid));
                if (1..=radius).contains(&dist) {
                    sum += plane[y * k + x];
                    count += 1;
                }
            }
        }
        ring_mean.push(sum / count as f64);
    }
    Ok(CenterSurround { center, ring_mean })
}
