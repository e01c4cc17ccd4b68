use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{matmul_tn, Matrix, Tensor};

/// Deterministic random stream. The same seed always yields the same draws.
#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derive an independent stream, e.g. one per layer or per worker.
    pub fn fork(&mut self) -> SeededRng {
        SeededRng::new(self.inner.random())
    }

    pub fn gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64], mean: f64, std: f64) {
        for v in out {
            *v = mean + std * self.gaussian();
        }
    }

    pub fn fill_uniform(&mut self, out: &mut [f64], lo: f64, hi: f64) {
        for v in out {
            *v = self.uniform(lo, hi);
        }
    }

    pub fn gaussian_tensor(&mut self, shape: &[usize]) -> Tensor {
        let mut t = Tensor::zeros(shape);
        self.fill_gaussian(t.data_mut(), 0.0, 1.0);
        t
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        self.fill_uniform(t.data_mut(), lo, hi);
        t
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        self.fill_gaussian(m.as_mut_slice(), 0.0, 1.0);
        m
    }

    /// `GᵀG / n + shift·I` for a Gaussian `2n x n` factor `G`.
    pub fn random_spd(&mut self, n: usize, shift: f64) -> Matrix {
        let g = self.gaussian_matrix(2 * n, n);
        let mut a = matmul_tn(&g, &g).expect("square product");
        a.scale_in_place(1.0 / n as f64);
        a.add_identity_in_place(shift);
        a.symmetrize_in_place();
        a
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// A uniformly random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}
