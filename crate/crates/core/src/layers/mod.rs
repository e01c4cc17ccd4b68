//! Layers with hand-written reverse-mode gradients.
//!
//! Every layer caches what its backward pass needs during `forward`, in both
//! modes, so gradients can be taken through an eval-mode (fixed statistics)
//! forward as well.

mod activation;
mod batchnorm;
mod conv;
mod deconv;
pub mod gradcheck;
pub mod loss;
mod models;
mod network;

pub use activation::{Flatten, GlobalAvgPool, MaxPool2d, Relu, Sigmoid};
pub use batchnorm::BatchNorm;
pub use conv::{Conv2d, Linear};
pub use deconv::Deconv;
pub use models::{mlp, vgg_like, Activation, DeconvPlan, Norm, VggItem};
pub use network::Network;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{MatRef, Matrix, SeededRng, Tensor};
use crate::patches::PatchSpec;
use crate::whitening::WhiteningConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// A learnable tensor and its gradient slot (always the same shape).
#[derive(Clone, Debug)]
pub struct Param {
    pub name: &'static str,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: &'static str, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { name, value, grad }
    }

    /// View a `[rows, cols]` parameter as a matrix.
    pub(crate) fn matrix(&self) -> MatRef<'_> {
        let s = self.value.shape();
        MatRef::from_slice(self.value.data(), s[0], s[1]).expect("2-D parameter")
    }
}

/// Serializable description of a layer, enough to rebuild it (parameters and
/// statistics travel separately).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        c_in: usize,
        c_out: usize,
        patch: PatchSpec,
    },
    Linear {
        inputs: usize,
        outputs: usize,
    },
    Deconv {
        c_in: usize,
        c_out: usize,
        patch: PatchSpec,
        /// Operates on `[N, F]` features instead of NCHW maps.
        flat: bool,
        whitening: WhiteningConfig,
    },
    BatchNorm {
        channels: usize,
        eps: f64,
        momentum: f64,
    },
    Relu,
    Sigmoid,
    MaxPool {
        size: usize,
    },
    GlobalAvgPool,
    Flatten,
}

impl LayerSpec {
    /// Fresh layer with parameters drawn from `rng`.
    pub fn build(&self, rng: &mut SeededRng) -> Result<Box<dyn Layer>> {
        Ok(match self {
            LayerSpec::Conv { c_in, c_out, patch } => {
                Box::new(Conv2d::new(*c_in, *c_out, *patch, rng)?)
            }
            LayerSpec::Linear { inputs, outputs } => Box::new(Linear::new(*inputs, *outputs, rng)),
            LayerSpec::Deconv {
                c_in,
                c_out,
                patch,
                flat,
                whitening,
            } => {
                if *flat {
                    Box::new(Deconv::linear(*c_in, *c_out, whitening.clone(), rng)?)
                } else {
                    Box::new(Deconv::conv(*c_in, *c_out, *patch, whitening.clone(), rng)?)
                }
            }
            LayerSpec::BatchNorm {
                channels,
                eps,
                momentum,
            } => Box::new(BatchNorm::with_settings(*channels, *eps, *momentum)),
            LayerSpec::Relu => Box::new(Relu::default()),
            LayerSpec::Sigmoid => Box::new(Sigmoid::default()),
            LayerSpec::MaxPool { size } => Box::new(MaxPool2d::new(*size)?),
            LayerSpec::GlobalAvgPool => Box::new(GlobalAvgPool::default()),
            LayerSpec::Flatten => Box::new(Flatten::default()),
        })
    }
}

pub trait Layer: Send {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor>;

    /// Gradient w.r.t. the input of the last forward; parameter gradients are
    /// written (not accumulated) into the gradient slots.
    fn backward(&mut self, grad: &Tensor) -> Result<Tensor>;

    fn spec(&self) -> LayerSpec;

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    /// Named tensors making up the full state (parameters first, then statistics).
    fn state(&self) -> Vec<(String, Tensor)> {
        self.params()
            .into_iter()
            .map(|p| (p.name.to_string(), p.value.clone()))
            .collect()
    }

    /// Restore from tensors in the order produced by [`Layer::state`].
    fn load_state(&mut self, tensors: &[Tensor]) -> Result<()> {
        let mut params = self.params_mut();
        if tensors.len() != params.len() {
            return Err(Error::shape(format!(
                "layer expects {} state tensors, got {}",
                params.len(),
                tensors.len()
            )));
        }
        for (p, t) in params.iter_mut().zip(tensors) {
            if p.value.shape() != t.shape() {
                return Err(Error::shape(format!(
                    "parameter {} has shape {:?}, checkpoint has {:?}",
                    p.name,
                    p.value.shape(),
                    t.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    /// Convergence diagnostic of the last training forward, if the layer has one.
    fn diagnostic(&self) -> Option<f64> {
        None
    }

    fn as_deconv(&self) -> Option<&Deconv> {
        None
    }

    fn as_deconv_mut(&mut self) -> Option<&mut Deconv> {
        None
    }
}

/// He-style uniform init: `U(-√(6/fan_in), √(6/fan_in))`.
pub(crate) fn he_uniform(rows: usize, fan_in: usize, rng: &mut SeededRng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    rng.uniform_tensor(&[rows, fan_in], -bound, bound)
}

/// `y = x wᵀ + b` for `x: N x F`, `w: C x F`.
pub(crate) fn affine(x: MatRef<'_>, w: MatRef<'_>, b: &[f64]) -> Result<Matrix> {
    let mut y = Matrix::zeros(x.rows(), w.rows());
    crate::linalg::gemm(1.0, x, w.t(), 0.0, &mut y)?;
    for i in 0..y.rows() {
        for (v, bb) in y.row_mut(i).iter_mut().zip(b) {
            *v += bb;
        }
    }
    Ok(y)
}

pub(crate) fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut s = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (a, v) in s.iter_mut().zip(m.row(i)) {
            *a += v;
        }
    }
    s
}

pub(crate) fn missing_cache(layer: &str) -> Error {
    Error::State(format!(
        "{layer} backward called without a preceding forward"
    ))
}
