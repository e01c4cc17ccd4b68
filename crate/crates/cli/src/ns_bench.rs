//! Coupled against uncoupled Newton–Schulz on a 27 x 27 natural-image
//! patch covariance (3 x 3 windows, 3 channels).

use std::path::PathBuf;

use netdeconv::data::{parse_netpbm, read_netpbm};
use netdeconv::linalg::{sym_eig, Matrix, Tensor};
use netdeconv::whitening::{
    coupled_newton_schulz, coupled_residual_trace, inverse_sqrt_oracle, vanilla_newton_schulz,
};
use netdeconv::Result;
use serde::{Deserialize, Serialize};

use crate::context::{num, Context, Table};
use crate::kernels::patch_moments;

/// The bundled 128 x 128 RGB test image.
pub const ASTRONAUT_PPM: &[u8] = include_bytes!("../../core/assets/astronaut_128.ppm");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NsBenchConfig {
    pub eps: f64,
    pub iters: usize,
    /// Step at which both iterations are compared with the eigen oracle.
    pub oracle_step: usize,
    /// Ridge for the oracle comparison, as a fraction of the largest eigenvalue.
    pub oracle_ridge: f64,
    /// PPM/PGM image; the bundled one when unset.
    pub image: Option<PathBuf>,
}

impl Default for NsBenchConfig {
    fn default() -> Self {
        NsBenchConfig {
            eps: 1e-5,
            iters: 1000,
            oracle_step: 20,
            oracle_ridge: 0.01,
            image: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NsBenchReport {
    pub coupled: Vec<f64>,
    /// Ends early (last entry infinite) when the iterate overflowed.
    pub vanilla: Vec<f64>,
    pub vanilla_overflow_at: Option<usize>,
    pub oracle_eps: f64,
    pub coupled_oracle_error: f64,
    pub vanilla_oracle_error: f64,
}

/// `(min, 1-based step)` over finite entries.
pub fn minimum(trace: &[f64]) -> (f64, usize) {
    trace
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .fold(
            (f64::INFINITY, 0),
            |(m, s), (i, &v)| if v < m { (v, i + 1) } else { (m, s) },
        )
}

impl NsBenchReport {
    /// Once the residual first comes within `factor` of its minimum, it
    /// stays there to the end.
    pub fn coupled_bounded(&self, factor: f64) -> bool {
        let (min, _) = minimum(&self.coupled);
        let bound = factor * min;
        match self.coupled.iter().position(|&r| r <= bound) {
            Some(start) => self.coupled[start..].iter().all(|&r| r <= bound),
            None => false,
        }
    }

    pub fn coupled_worst_after_min(&self) -> f64 {
        let (_, step) = minimum(&self.coupled);
        self.coupled[step.saturating_sub(1)..]
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    /// First step past the minimum at which the vanilla residual exceeds
    /// `factor` times that minimum (overflow counts as exceeding).
    pub fn vanilla_blowup_step(&self, factor: f64) -> Option<usize> {
        let (min, step) = minimum(&self.vanilla);
        self.vanilla[step..]
            .iter()
            .position(|&r| !r.is_finite() || r > factor * min)
            .map(|i| step + i + 1)
    }
}

/// `[1, C, H, W]` from a PPM/PGM file or the bundled image.
pub fn load_image(path: Option<&PathBuf>) -> Result<Tensor> {
    let t = match path {
        Some(p) => read_netpbm(p)?,
        None => parse_netpbm(ASTRONAUT_PPM)?,
    };
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    t.reshape(&shape)
}

pub fn stability_covariance(image: &Tensor, centered: bool) -> Result<Matrix> {
    Ok(patch_moments(image, 3, 1, centered)?.1.cov)
}

pub fn run_ns_bench(cov: &Matrix, cfg: &NsBenchConfig) -> Result<NsBenchReport> {
    let (_, coupled) = coupled_residual_trace(cov, cfg.eps, cfg.iters)?;
    let vanilla = vanilla_newton_schulz(cov, cfg.eps, cfg.iters)?;
    let lmax = sym_eig(cov)?.values.last().copied().unwrap_or(0.0);
    let oracle_eps = cfg.oracle_ridge * lmax;
    let oracle = inverse_sqrt_oracle(cov, oracle_eps)?;
    let rel = |d: &Matrix| -> Result<f64> {
        Ok(d.sub(&oracle)?.frobenius_norm() / oracle.frobenius_norm())
    };
    let c = coupled_newton_schulz(cov, oracle_eps, cfg.oracle_step)?;
    let v = vanilla_newton_schulz(cov, oracle_eps, cfg.oracle_step)?;
    let vanilla_oracle_error = if v.overflow_at.is_some() {
        f64::INFINITY
    } else {
        rel(&v.d)?
    };
    Ok(NsBenchReport {
        coupled,
        vanilla: vanilla.residuals,
        vanilla_overflow_at: vanilla.overflow_at,
        oracle_eps,
        coupled_oracle_error: rel(&c)?,
        vanilla_oracle_error,
    })
}

pub fn cmd_ns_bench(ctx: &Context, cfg: &NsBenchConfig) -> Result<NsBenchReport> {
    ctx.prepare()?;
    ctx.write_manifest("ns-bench", cfg)?;
    let image = load_image(cfg.image.as_ref())?;
    let cov = stability_covariance(&image, ctx.centered)?;
    let report = run_ns_bench(&cov, cfg)?;

    let mut t = Table::new(&["step", "coupled_residual", "vanilla_residual"]);
    for (i, c) in report.coupled.iter().enumerate() {
        let v = report.vanilla.get(i).copied().unwrap_or(f64::INFINITY);
        t.push(vec![(i + 1).to_string(), num(*c), num(v)]);
    }
    ctx.write_table("residuals.csv", &t)?;

    let (cmin, cstep) = minimum(&report.coupled);
    let (vmin, vstep) = minimum(&report.vanilla);
    let mut s = Table::new(&["metric", "value"]);
    let mut put = |k: &str, v: String| s.push(vec![k.into(), v]);
    put("coupled_min", num(cmin));
    put("coupled_min_step", cstep.to_string());
    put(
        "coupled_worst_after_min",
        num(report.coupled_worst_after_min()),
    );
    put(
        "coupled_final",
        num(report.coupled.last().copied().unwrap_or(f64::NAN)),
    );
    put(
        "coupled_bounded_2x",
        report.coupled_bounded(2.0).to_string(),
    );
    put("vanilla_min", num(vmin));
    put("vanilla_min_step", vstep.to_string());
    put(
        "vanilla_blowup_step_1e3",
        report
            .vanilla_blowup_step(1e3)
            .map_or_else(String::new, |s| s.to_string()),
    );
    put(
        "vanilla_overflow_step",
        report
            .vanilla_overflow_at
            .map_or_else(String::new, |s| s.to_string()),
    );
    put("oracle_eps", num(report.oracle_eps));
    put("coupled_oracle_error", num(report.coupled_oracle_error));
    put("vanilla_oracle_error", num(report.vanilla_oracle_error));
    ctx.write_table("summary.csv", &s)?;
    Ok(report)
}
