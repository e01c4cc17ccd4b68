//! Network deconvolution.
//!
//! Layers remove pixel-wise and channel-wise correlation from their input by
//! whitening the im2col patch matrix with an approximate inverse square root
//! of its covariance, computed per channel group by coupled Newton-Schulz
//! iterations. Around that core sit the patch algebra, a reverse-mode layer
//! zoo with a batch-norm baseline, an SGD trainer with the closed-form
//! regression harnesses, and loaders for the IDX and CIFAR-10 formats.

pub mod data;
pub mod error;
pub mod layers;
pub mod linalg;
pub mod ndcv;
pub mod patches;
pub mod trainer;
pub mod whitening;

pub use error::{Error, Result};
