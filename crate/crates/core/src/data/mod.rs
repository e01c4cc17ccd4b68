//! Dataset containers and loaders. Pixels are scaled to `[0, 1]` and are not
//! otherwise normalized.

mod blur;
pub mod cifar;
pub mod idx;
pub mod netpbm;

pub use blur::{correlate_valid, gaussian_kernel, make_blur_problem, BlurProblem, BlurSpec};
pub use cifar::{parse_cifar10, read_cifar10};
pub use idx::{encode_idx_images, encode_idx_labels, read_idx_images, read_idx_labels};
pub use netpbm::{encode_pgm, parse_netpbm, read_netpbm, write_pgm};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{SeededRng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Images `[N, C, H, W]` with one label per image.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<u8>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<u8>, classes: usize, split: Split) -> Result<Self> {
        let (n, _, _, _) = images.dims4()?;
        if n != labels.len() {
            return Err(Error::shape(format!(
                "{n} images but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)` of one image.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            images: self.images.gather_batch(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: self.split,
        })
    }

    /// `count` distinct images chosen by a seeded shuffle, in shuffled order.
    pub fn subset(&self, count: usize, seed: u64) -> Result<Dataset> {
        self.select(&sample_indices(self.len(), count, seed)?)
    }

    /// The first `count` images in file order.
    pub fn head(&self, count: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..count.min(self.len())).collect();
        self.select(&idx)
    }
}

fn sample_indices(n: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > n {
        return Err(Error::contract(format!(
            "cannot draw {count} distinct images from {n}"
        )));
    }
    let mut idx = SeededRng::new(seed).permutation(n);
    idx.truncate(count);
    Ok(idx)
}

/// Uniformly sampled images (no replacement) stacked as `[count, C, H, W]`.
pub fn sample_patch_batch(dataset: &Dataset, count: usize, seed: u64) -> Result<Tensor> {
    dataset
        .images
        .gather_batch(&sample_indices(dataset.len(), count, seed)?)
}

/// Mirror each image left-right with probability 1/2.
pub fn random_hflip(images: &mut Tensor, rng: &mut SeededRng) -> Result<()> {
    let (n, c, h, w) = images.dims4()?;
    let stride = c * h * w;
    for i in 0..n {
        if rng.below(2) == 1 {
            for row in images.data_mut()[i * stride..(i + 1) * stride].chunks_exact_mut(w) {
                row.reverse();
            }
        }
    }
    Ok(())
}

/// IDX image and label files as a 10-class dataset.
pub fn load_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    split: Split,
) -> Result<Dataset> {
    Dataset::new(
        read_idx_images(images)?,
        read_idx_labels(labels)?,
        10,
        split,
    )
}

/// MNIST-layout directory (`train-images-idx3-ubyte`, `t10k-labels-idx1-ubyte`, ...).
pub fn load_mnist_dir(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let dir = dir.as_ref();
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_idx(
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
        split,
    )
}

/// Concatenate CIFAR-10 binary batch files.
pub fn load_cifar10<P: AsRef<Path>>(paths: &[P], split: Split) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let (t, l) = read_cifar10(p)?;
        data.extend_from_slice(t.data());
        labels.extend(l);
    }
    let n = labels.len();
    let images = Tensor::new(vec![n, 3, cifar::SIDE, cifar::SIDE], data)?;
    Dataset::new(images, labels, cifar::CLASSES, split)
}

/// `data_batch_1..=train_batches` or `test_batch` from a CIFAR-10 binary directory.
pub fn load_cifar10_dir(
    dir: impl AsRef<Path>,
    split: Split,
    train_batches: usize,
) -> Result<Dataset> {
    let dir = dir.as_ref();
    let paths: Vec<_> = match split {
        Split::Train => (1..=train_batches.clamp(1, 5))
            .map(|i| dir.join(format!("data_batch_{i}.bin")))
            .collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    load_cifar10(&paths, split)
}
