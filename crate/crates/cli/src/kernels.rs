//! Deconvolution kernels of natural images and the sparsity of deconvolved
//! signals.

use netdeconv::data::{load_cifar10_dir, netpbm, sample_patch_batch, Split};
use netdeconv::linalg::{matmul, Matrix, Tensor};
use netdeconv::patches::{im2col_sampled, PatchSpec};
use netdeconv::whitening::{
    center_surround, coupled_newton_schulz, extract_deconv_kernel, inverse_sqrt_oracle, moments,
    sparsity_stats, CenterSurround, Moments, SparsityStats,
};
use netdeconv::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::context::{num, write_file, Context, Table};

/// How the inverse square root is formed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Solver {
    Oracle,
    NewtonSchulz { iters: usize },
}

impl Solver {
    pub fn inverse_sqrt(self, cov: &Matrix, eps: f64) -> Result<Matrix> {
        match self {
            Solver::Oracle => inverse_sqrt_oracle(cov, eps),
            Solver::NewtonSchulz { iters } => coupled_newton_schulz(cov, eps, iters),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelVizConfig {
    pub images: usize,
    pub k: usize,
    pub sample_stride: usize,
    pub eps: f64,
    pub solver: Solver,
    /// Surround ring used by the sign test, in pixels from the center.
    pub ring_radius: usize,
}

impl Default for KernelVizConfig {
    fn default() -> Self {
        KernelVizConfig {
            images: 1024,
            k: 15,
            sample_stride: 3,
            eps: 1e-5,
            solver: Solver::Oracle,
            ring_radius: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparsityConfig {
    pub images: usize,
    pub k: usize,
    pub sample_stride: usize,
    pub eps: f64,
    pub solver: Solver,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        SparsityConfig {
            images: 1024,
            k: 3,
            sample_stride: 3,
            eps: 1e-5,
            solver: Solver::NewtonSchulz { iters: 15 },
        }
    }
}

#[derive(Clone, Debug)]
pub struct KernelReport {
    /// `[C, C, k, k]`.
    pub kernel: Tensor,
    pub surround: CenterSurround,
}

/// Valid `k x k` patches on the `stride` grid and their moments.
pub fn patch_moments(
    images: &Tensor,
    k: usize,
    stride: usize,
    centered: bool,
) -> Result<(Matrix, Moments)> {
    let pm = im2col_sampled(images, &PatchSpec::new(k, 1, 0)?, stride)?;
    let m = moments(pm.matrix.view(), centered)?;
    Ok((pm.matrix, m))
}

fn cifar_sample(ctx: &Context, count: usize) -> Result<Tensor> {
    let dir = ctx.dataset_dir("cifar-10-batches-bin")?;
    let train = load_cifar10_dir(&dir, Split::Train, 1)?;
    if count > train.len() {
        return Err(Error::InsufficientData(format!(
            "asked for {count} images, dataset has {}",
            train.len()
        )));
    }
    sample_patch_batch(&train, count, ctx.seed)
}

/// Kernel planes `[c, c]` of a `[C, C, k, k]` tensor, one per channel.
pub fn diagonal_planes(kernel: &Tensor) -> Result<Vec<Vec<f64>>> {
    let (c, _, k, _) = kernel.dims4()?;
    Ok((0..c)
        .map(|ch| {
            let base = (ch * c + ch) * k * k;
            kernel.data()[base..base + k * k].to_vec()
        })
        .collect())
}

pub fn cmd_kernel_viz(ctx: &Context, cfg: &KernelVizConfig) -> Result<KernelReport> {
    ctx.prepare()?;
    ctx.write_manifest("kernel-viz", cfg)?;
    let images = cifar_sample(ctx, cfg.images)?;
    let channels = images.shape()[1];
    let (_, m) = patch_moments(&images, cfg.k, cfg.sample_stride, ctx.centered)?;
    let d = cfg.solver.inverse_sqrt(&m.cov, cfg.eps)?;
    let kernel = extract_deconv_kernel(&d, cfg.k, channels)?;
    let surround = center_surround(&kernel, cfg.ring_radius)?;

    for (c, plane) in diagonal_planes(&kernel)?.iter().enumerate() {
        write_file(
            &ctx.path(&format!("kernel_c{c}.pgm")),
            &netpbm::encode_pgm(plane, cfg.k, cfg.k)?,
        )?;
    }
    let mut raw = Table::new(&["out_channel", "in_channel", "y", "x", "value"]);
    let k = cfg.k;
    for o in 0..channels {
        for i in 0..channels {
            for y in 0..k {
                for x in 0..k {
                    let v = kernel.data()[((o * channels + i) * k + y) * k + x];
                    raw.push(vec![
                        o.to_string(),
                        i.to_string(),
                        y.to_string(),
                        x.to_string(),
                        num(v),
                    ]);
                }
            }
        }
    }
    ctx.write_table("kernel.csv", &raw)?;
    let mut report = Table::new(&["channel", "center", "ring_mean", "opposed"]);
    for c in 0..channels {
        let (a, b) = (surround.center[c], surround.ring_mean[c]);
        report.push(vec![
            c.to_string(),
            num(a),
            num(b),
            (a * b < 0.0).to_string(),
        ]);
    }
    ctx.write_table("center_surround.csv", &report)?;
    Ok(KernelReport { kernel, surround })
}

/// Histograms and kurtosis of patch values before and after whitening.
pub fn cmd_sparsity(ctx: &Context, cfg: &SparsityConfig) -> Result<SparsityStats> {
    ctx.prepare()?;
    ctx.write_manifest("sparsity", cfg)?;
    let images = cifar_sample(ctx, cfg.images)?;
    let stats = deconvolved_sparsity(&images, cfg, ctx.centered)?;
    let mut t = Table::new(&[
        "bin",
        "count_before",
        "count_after",
        "log_density_before",
        "log_density_after",
    ]);
    for b in 0..stats.hist_before.len() {
        t.push(vec![
            b.to_string(),
            stats.hist_before[b].to_string(),
            stats.hist_after[b].to_string(),
            num(stats.log_density_before[b]),
            num(stats.log_density_after[b]),
        ]);
    }
    ctx.write_table("histogram.csv", &t)?;
    let mut k = Table::new(&["signal", "excess_kurtosis"]);
    k.push(vec!["before".into(), num(stats.kurtosis_before)]);
    k.push(vec!["after".into(), num(stats.kurtosis_after)]);
    ctx.write_table("kurtosis.csv", &k)?;
    Ok(stats)
}

pub fn deconvolved_sparsity(
    images: &Tensor,
    cfg: &SparsityConfig,
    centered: bool,
) -> Result<SparsityStats> {
    let (x, m) = patch_moments(images, cfg.k, cfg.sample_stride, centered)?;
    let d = cfg.solver.inverse_sqrt(&m.cov, cfg.eps)?;
    let mu = if centered {
        m.mean
    } else {
        vec![0.0; x.cols()]
    };
    let xc = Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) - mu[j]);
    let white = matmul(&xc, &d)?;
    sparsity_stats(x.as_slice(), white.as_slice())
}
