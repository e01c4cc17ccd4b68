//! Wall-clock breakdown of one deconvolution layer: patch extraction on the
//! sampling grid, group covariances, inverse square roots, and the
//! convolution itself.

use std::time::Instant;

use netdeconv::layers::{Conv2d, Layer, Mode};
use netdeconv::linalg::{SeededRng, Tensor};
use netdeconv::patches::{im2col_sampled, PatchSpec};
use netdeconv::whitening::{coupled_newton_schulz, moments};
use netdeconv::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::context::{num, Context, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub h: usize,
    pub w: usize,
    pub ch_in: usize,
    pub ch_out: usize,
    pub groups: usize,
    pub k: usize,
    /// Sampling stride of the covariance grid.
    pub stride: usize,
}

const fn shape(
    h: usize,
    ch_in: usize,
    ch_out: usize,
    groups: usize,
    k: usize,
    stride: usize,
) -> LayerShape {
    LayerShape {
        h,
        w: h,
        ch_in,
        ch_out,
        groups,
        k,
        stride,
    }
}

/// The measured grid, row for row.
pub const GRID: [LayerShape; 22] = [
    shape(256, 3, 64, 1, 3, 3),
    shape(128, 64, 128, 1, 3, 3),
    shape(64, 128, 256, 2, 3, 3),
    shape(32, 256, 512, 4, 3, 3),
    shape(16, 512, 512, 8, 3, 3),
    shape(128, 64, 128, 64, 3, 3),
    shape(64, 128, 256, 128, 3, 3),
    shape(32, 256, 512, 256, 3, 3),
    shape(16, 512, 512, 512, 3, 3),
    shape(128, 64, 128, 32, 3, 3),
    shape(64, 128, 256, 32, 3, 3),
    shape(32, 256, 512, 32, 3, 3),
    shape(16, 512, 512, 32, 3, 3),
    shape(256, 3, 64, 1, 3, 5),
    shape(128, 64, 128, 1, 3, 5),
    shape(256, 3, 64, 1, 7, 3),
    shape(256, 3, 64, 1, 7, 5),
    shape(256, 3, 64, 1, 7, 7),
    shape(256, 3, 64, 1, 11, 3),
    shape(256, 3, 64, 1, 11, 5),
    shape(256, 3, 64, 1, 11, 7),
    shape(256, 3, 64, 1, 11, 11),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingConfig {
    /// Images per measured batch.
    pub batch_size: usize,
    /// Each component takes the fastest of this many repetitions.
    pub reps: usize,
    pub eps: f64,
    pub ns_iters: usize,
    pub rows: Vec<LayerShape>,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            batch_size: 8,
            reps: 2,
            eps: 1e-5,
            ns_iters: 5,
            rows: GRID.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timing {
    pub shape: LayerShape,
    pub im2col: f64,
    pub cov: f64,
    pub inv: f64,
    pub conv: f64,
}

impl Timing {
    pub fn overhead(&self) -> f64 {
        self.im2col + self.cov + self.inv
    }
}

fn seconds<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let out = f()?;
    Ok((out, t.elapsed().as_secs_f64()))
}

pub fn time_layer(s: &LayerShape, cfg: &TimingConfig, centered: bool, seed: u64) -> Result<Timing> {
    if s.groups == 0 || !s.ch_in.is_multiple_of(s.groups) {
        return Err(Error::Contract(format!(
            "{} input channels do not split into {} groups",
            s.ch_in, s.groups
        )));
    }
    let mut rng = SeededRng::new(seed);
    let x = rng.uniform_tensor(&[cfg.batch_size, s.ch_in, s.h, s.w], 0.0, 1.0);
    let patch = PatchSpec::same(s.k);
    let mut conv = Conv2d::new(s.ch_in, s.ch_out, patch, &mut rng)?;
    let images: Vec<Tensor> = (0..cfg.batch_size)
        .map(|i| x.slice_batch(i, 1))
        .collect::<Result<_>>()?;
    let mut best = Timing {
        shape: *s,
        im2col: f64::INFINITY,
        cov: f64::INFINITY,
        inv: f64::INFINITY,
        conv: f64::INFINITY,
    };
    for _ in 0..cfg.reps.max(1) {
        let (pm, t_im2col) = seconds(|| im2col_sampled(&x, &patch, s.stride))?;
        let groups = pm.groups(s.ch_in / s.groups)?;
        let (covs, t_cov) = seconds(|| {
            groups
                .iter()
                .map(|g| Ok(moments(pm.group_view(g), centered)?.cov))
                .collect::<Result<Vec<_>>>()
        })?;
        let (_, t_inv) = seconds(|| {
            covs.iter()
                .map(|c| coupled_newton_schulz(c, cfg.eps, cfg.ns_iters))
                .collect::<Result<Vec<_>>>()
        })?;
        drop(pm);
        // one image at a time keeps the full patch matrix of the large rows in memory budget
        let (_, t_conv) = seconds(|| {
            for img in &images {
                conv.forward(img, Mode::Eval)?;
            }
            Ok(())
        })?;
        best.im2col = best.im2col.min(t_im2col);
        best.cov = best.cov.min(t_cov);
        best.inv = best.inv.min(t_inv);
        best.conv = best.conv.min(t_conv);
    }
    Ok(best)
}

pub fn cmd_timing(ctx: &Context, cfg: &TimingConfig) -> Result<Vec<Timing>> {
    ctx.prepare()?;
    ctx.write_manifest("timing", cfg)?;
    let mut table = Table::new(&[
        "h",
        "w",
        "ch_in",
        "ch_out",
        "groups",
        "k",
        "stride",
        "batch",
        "im2col_s",
        "cov_s",
        "inv_s",
        "conv_s",
        "overhead_over_conv",
    ]);
    let mut out = Vec::new();
    for s in &cfg.rows {
        let t = time_layer(s, cfg, ctx.centered, ctx.seed)?;
        table.push(vec![
            s.h.to_string(),
            s.w.to_string(),
            s.ch_in.to_string(),
            s.ch_out.to_string(),
            s.groups.to_string(),
            s.k.to_string(),
            s.stride.to_string(),
            cfg.batch_size.to_string(),
            num(t.im2col),
            num(t.cov),
            num(t.inv),
            num(t.conv),
            num(t.overhead() / t.conv),
        ]);
        out.push(t);
    }
    ctx.write_table("timing.csv", &table)?;
    Ok(out)
}
