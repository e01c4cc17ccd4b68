//! Settings per batch size for deconvolution training: smaller batches use a
//! smaller learning rate, a larger ridge and fewer Newton–Schulz iterations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSizePreset {
    pub name: &'static str,
    pub batch_size: usize,
    pub lr: f64,
    pub eps: f64,
    pub ns_iters: usize,
    /// Accuracy reported for the original full-scale run, for reference only.
    pub reported_accuracy: f64,
}

pub const BATCH_SIZE_PRESETS: [BatchSizePreset; 6] = [
    BatchSizePreset {
        name: "bs2",
        batch_size: 2,
        lr: 0.001,
        eps: 0.01,
        ns_iters: 2,
        reported_accuracy: 0.8912,
    },
    BatchSizePreset {
        name: "bs8",
        batch_size: 8,
        lr: 0.01,
        eps: 0.01,
        ns_iters: 2,
        reported_accuracy: 0.9126,
    },
    BatchSizePreset {
        name: "bs32",
        batch_size: 32,
        lr: 0.01,
        eps: 1e-5,
        ns_iters: 5,
        reported_accuracy: 0.9118,
    },
    BatchSizePreset {
        name: "bs128",
        batch_size: 128,
        lr: 0.1,
        eps: 1e-5,
        ns_iters: 5,
        reported_accuracy: 0.9156,
    },
    BatchSizePreset {
        name: "bs512",
        batch_size: 512,
        lr: 0.5,
        eps: 1e-5,
        ns_iters: 5,
        reported_accuracy: 0.9166,
    },
    BatchSizePreset {
        name: "bs2048",
        batch_size: 2048,
        lr: 1.0,
        eps: 1e-5,
        ns_iters: 5,
        reported_accuracy: 0.9064,
    },
];

pub fn batch_size_preset(name_or_size: &str) -> Result<BatchSizePreset> {
    BATCH_SIZE_PRESETS
        .iter()
        .find(|p| p.name == name_or_size || p.batch_size.to_string() == name_or_size)
        .copied()
        .ok_or_else(|| Error::contract(format!("no batch-size preset {name_or_size:?}")))
}
