//! Patch matrices: im2col, its adjoint col2im, and channel-group partitioning.
//!
//! Layout of a [`PatchMatrix`]:
//! - rows are batch-major, then a row-major scan of output positions:
//!   `row = (n * out_h + oy) * out_w + ox`;
//! - columns are channel-major, each channel contributing `k * k` pixel columns:
//!   `col = (c * k + ky) * k + kx`.
//!
//! Channel groups of width `B` therefore occupy contiguous column ranges.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{MatRef, Matrix, Tensor};

/// Sliding-window geometry of a square kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PatchSpec {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let spec = PatchSpec {
            kernel,
            stride,
            padding,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Stride 1 with `padding = k / 2` ("same" geometry for odd `k`).
    pub fn same(kernel: usize) -> Self {
        PatchSpec {
            kernel,
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::contract(format!(
                "kernel and stride must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Output extent along one axis; errors unless the windows tile exactly.
    pub fn output_extent(&self, input: usize) -> Result<usize> {
        self.validate()?;
        let padded = input + 2 * self.padding;
        if padded < self.kernel {
            return Err(Error::shape(format!(
                "kernel {} larger than padded input {padded}",
                self.kernel
            )));
        }
        let span = padded - self.kernel;
        if !span.is_multiple_of(self.stride) {
            return Err(Error::shape(format!(
                "(H + 2p - k) = {span} not divisible by stride {}",
                self.stride
            )));
        }
        Ok(span / self.stride + 1)
    }

    pub fn area(&self) -> usize {
        self.kernel * self.kernel
    }
}

/// The im2col data matrix of a batch of feature maps.
#[derive(Clone, Debug)]
pub struct PatchMatrix {
    pub matrix: Matrix,
    pub batch: usize,
    pub channels: usize,
    pub kernel: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// A block of consecutive input channels and the patch columns it owns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelGroup {
    pub channels: Range<usize>,
    pub columns: Range<usize>,
}

impl ChannelGroup {
    pub fn width(&self) -> usize {
        self.columns.len()
    }
}

impl PatchMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }

    pub fn groups(&self, block_size: usize) -> Result<Vec<ChannelGroup>> {
        partition_groups(self.channels, self.kernel, block_size)
    }

    /// Column view of one group; no copy.
    pub fn group_view(&self, group: &ChannelGroup) -> MatRef<'_> {
        self.matrix.columns(group.columns.clone())
    }

    /// Rows whose output position lies on the `sample_stride` grid in both axes.
    /// The batch axis is never subsampled.
    pub fn sampled_rows(&self, sample_stride: usize) -> Vec<usize> {
        let s = sample_stride.max(1);
        let mut rows = Vec::new();
        for n in 0..self.batch {
            for oy in (0..self.out_h).step_by(s) {
                for ox in (0..self.out_w).step_by(s) {
                    rows.push((n * self.out_h + oy) * self.out_w + ox);
                }
            }
        }
        rows
    }
}

/// Split `channels` into blocks of `block_size` (clamped to `channels`); the
/// last block takes the remainder when the division is not exact.
pub fn partition_groups(
    channels: usize,
    kernel: usize,
    block_size: usize,
) -> Result<Vec<ChannelGroup>> {
    if block_size == 0 {
        return Err(Error::contract("block size must be >= 1"));
    }
    let block = block_size.min(channels.max(1));
    let area = kernel * kernel;
    let mut groups = Vec::new();
    let mut start = 0;
    while start < channels {
        let end = (start + block).min(channels);
        groups.push(ChannelGroup {
            channels: start..end,
            columns: start * area..end * area,
        });
        start = end;
    }
    Ok(groups)
}

/// Unroll sliding windows of `x` (NCHW) into a patch matrix, zero padded.
pub fn im2col(x: &Tensor, spec: &PatchSpec) -> Result<PatchMatrix> {
    im2col_sampled(x, spec, 1)
}

/// Like [`im2col`] but only emits rows on the `sample_stride` output grid.
///
/// `im2col_sampled(x, spec, s).matrix` equals the rows
/// `im2col(x, spec).sampled_rows(s)` of the full matrix, in order, and the
/// returned geometry describes the sampled grid.
pub fn im2col_sampled(x: &Tensor, spec: &PatchSpec, sample_stride: usize) -> Result<PatchMatrix> {
    let (n, c, h, w) = x.dims4()?;
    let out_h = spec.output_extent(h)?;
    let out_w = spec.output_extent(w)?;
    let s = sample_stride.max(1);
    let rows_h = out_h.div_ceil(s);
    let rows_w = out_w.div_ceil(s);
    let k = spec.kernel;
    let cols = c * k * k;
    let mut m = Matrix::zeros(n * rows_h * rows_w, cols);
    let src = x.data();
    let pad = spec.padding as isize;

    let dst = m.as_mut_slice();
    let mut row = 0;
    for b in 0..n {
        for oy in (0..out_h).step_by(s) {
            for ox in (0..out_w).step_by(s) {
                let out = &mut dst[row * cols..(row + 1) * cols];
                let y0 = (oy * spec.stride) as isize - pad;
                let x0 = (ox * spec.stride) as isize - pad;
                for ch in 0..c {
                    let plane = &src[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                    for ky in 0..k {
                        let iy = y0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let line = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let base = (ch * k + ky) * k;
                        for kx in 0..k {
                            let ix = x0 + kx as isize;
                            if ix >= 0 && ix < w as isize {
                                out[base + kx] = line[ix as usize];
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
    Ok(PatchMatrix {
        matrix: m,
        batch: n,
        channels: c,
        kernel: k,
        out_h: rows_h,
        out_w: rows_w,
    })
}

/// Adjoint of [`im2col`]: scatter-add patch rows back into an NCHW tensor.
pub fn col2im(g: &Matrix, spec: &PatchSpec, input_shape: [usize; 4]) -> Result<Tensor> {
    let [n, c, h, w] = input_shape;
    let out_h = spec.output_extent(h)?;
    let out_w = spec.output_extent(w)?;
    let k = spec.kernel;
    let cols = c * k * k;
    if g.rows() != n * out_h * out_w || g.cols() != cols {
        return Err(Error::shape(format!(
            "col2im expects {}x{cols}, got {}x{}",
            n * out_h * out_w,
            g.rows(),
            g.cols()
        )));
    }
    let mut x = Tensor::zeros(&input_shape);
    let dst = x.data_mut();
    let src = g.as_slice();
    let pad = spec.padding as isize;
    let mut row = 0;
    for b in 0..n {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let patch = &src[row * cols..(row + 1) * cols];
                let y0 = (oy * spec.stride) as isize - pad;
                let x0 = (ox * spec.stride) as isize - pad;
                for ch in 0..c {
                    let plane = &mut dst[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                    for ky in 0..k {
                        let iy = y0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (ch * k + ky) * k;
                        for kx in 0..k {
                            let ix = x0 + kx as isize;
                            if ix >= 0 && ix < w as isize {
                                plane[iy as usize * w + ix as usize] += patch[base + kx];
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
    Ok(x)
}

/// Rearrange an `(N·H·W) x C` row matrix (im2col row order) into NCHW.
pub fn rows_to_nchw(m: &Matrix, n: usize, h: usize, w: usize) -> Result<Tensor> {
    let c = m.cols();
    if m.rows() != n * h * w {
        return Err(Error::shape(format!(
            "{} rows cannot form {n}x{h}x{w} maps",
            m.rows()
        )));
    }
    let mut out = Tensor::zeros(&[n, c, h, w]);
    let dst = out.data_mut();
    let src = m.as_slice();
    let hw = h * w;
    for b in 0..n {
        for p in 0..hw {
            let r = &src[(b * hw + p) * c..(b * hw + p + 1) * c];
            for (ch, &v) in r.iter().enumerate() {
                dst[(b * c + ch) * hw + p] = v;
            }
        }
    }
    Ok(out)
}

/// Inverse of [`rows_to_nchw`].
pub fn nchw_to_rows(t: &Tensor) -> Result<Matrix> {
    let (n, c, h, w) = t.dims4()?;
    let hw = h * w;
    let mut m = Matrix::zeros(n * hw, c);
    let dst = m.as_mut_slice();
    let src = t.data();
    for b in 0..n {
        for ch in 0..c {
            let plane = &src[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            for (p, &v) in plane.iter().enumerate() {
                dst[(b * hw + p) * c + ch] = v;
            }
        }
    }
    Ok(m)
}
