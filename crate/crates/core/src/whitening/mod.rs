//! Grouped covariance estimation and inverse square roots.

mod covariance;
mod inverse_sqrt;
mod kernel;
mod sparsity;

pub use covariance::{covariance, gather_rows, moments, Moments};
pub use inverse_sqrt::{
    coupled_newton_schulz, coupled_newton_schulz_diag, coupled_residual_trace, inverse_sqrt_oracle,
    sqrt_oracle, vanilla_newton_schulz, InverseSqrt, VanillaTrace,
};
pub use kernel::{center_surround, extract_deconv_kernel, CenterSurround};
pub use sparsity::{excess_kurtosis, sparsity_stats, SparsityStats, HISTOGRAM_BINS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Hyperparameters of one whitening site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WhiteningConfig {
    pub eps: f64,
    pub ns_iters: usize,
    pub sample_stride: usize,
    pub block_size: usize,
    pub freeze_after: Option<u64>,
    pub momentum: f64,
    pub centered: bool,
}

impl Default for WhiteningConfig {
    fn default() -> Self {
        WhiteningConfig {
            eps: 1e-5,
            ns_iters: 5,
            sample_stride: 3,
            block_size: 64,
            freeze_after: None,
            momentum: 0.1,
            centered: true,
        }
    }
}

impl WhiteningConfig {
    /// Settings for the layer that sees raw pixels: more iterations, frozen
    /// after 200 steps.
    pub fn input_layer() -> Self {
        WhiteningConfig {
            ns_iters: 15,
            freeze_after: Some(200),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::contract(format!(
                "eps must be >= 0, got {}",
                self.eps
            )));
        }
        if self.ns_iters == 0 {
            return Err(Error::contract("ns_iters must be >= 1"));
        }
        if self.sample_stride == 0 {
            return Err(Error::contract("sample_stride must be >= 1"));
        }
        if self.block_size == 0 {
            return Err(Error::contract("block_size must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::contract(format!(
                "momentum must lie in [0, 1], got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Mean and deconvolution matrix of one channel group, live and averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct WhiteningState {
    pub mu: Vec<f64>,
    pub d: Matrix,
    pub running_mu: Vec<f64>,
    pub running_d: Matrix,
    pub step: u64,
    pub frozen: bool,
}

impl WhiteningState {
    /// Zero mean and identity whitening, so an untrained layer passes data through.
    pub fn new(features: usize) -> Self {
        WhiteningState {
            mu: vec![0.0; features],
            d: Matrix::identity(features),
            running_mu: vec![0.0; features],
            running_d: Matrix::identity(features),
            step: 0,
            frozen: false,
        }
    }

    pub fn features(&self) -> usize {
        self.mu.len()
    }

    /// Record a batch estimate: `running ← (1 - m) running + m current`.
    ///
    /// When `freeze_after` is reached the live values are replaced by the
    /// running averages and the state stops changing. Frozen states ignore
    /// further updates.
    pub fn update_running(
        &mut self,
        mu: Vec<f64>,
        d: Matrix,
        momentum: f64,
        freeze_after: Option<u64>,
    ) -> Result<()> {
        if self.frozen {
            return Ok(());
        }
        let f = self.features();
        if mu.len() != f || d.rows() != f || d.cols() != f {
            return Err(Error::shape(format!(
                "whitening update has {} means and {}x{} matrix, state has {f} features",
                mu.len(),
                d.rows(),
                d.cols()
            )));
        }
        for (r, &m) in self.running_mu.iter_mut().zip(&mu) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        self.running_d.scale_in_place(1.0 - momentum);
        self.running_d.axpy_in_place(momentum, &d)?;
        self.mu = mu;
        self.d = d;
        self.step += 1;
        if freeze_after.is_some_and(|n| self.step >= n) {
            self.mu = self.running_mu.clone();
            self.d = self.running_d.clone();
            self.frozen = true;
        }
        Ok(())
    }
}
