use crate::error::{Error, Result};
use crate::layers::{missing_cache, Layer, LayerSpec, Mode, Param};
use crate::linalg::Tensor;

/// Per-channel standardization with learnable scale and shift, on `[N, C]`
/// or `[N, C, H, W]` inputs.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    cache: Option<Cache>,
}

#[derive(Clone, Debug)]
struct Cache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm::with_settings(channels, 1e-5, 0.1)
    }

    pub fn with_settings(channels: usize, eps: f64, momentum: f64) -> Self {
        BatchNorm {
            channels,
            eps,
            momentum,
            gamma: Param::new("gamma", Tensor::full(&[channels], 1.0)),
            beta: Param::new("beta", Tensor::zeros(&[channels])),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            cache: None,
        }
    }

    /// `(N, C, spatial)` of an input.
    fn layout(&self, x: &Tensor) -> Result<(usize, usize)> {
        let s = x.shape();
        if s.len() < 2 || s[1] != self.channels {
            return Err(Error::shape(format!(
                "batch norm over {} channels got input {s:?}",
                self.channels
            )));
        }
        Ok((s[0], s[2..].iter().product()))
    }
}

impl Layer for BatchNorm {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, hw) = self.layout(x)?;
        let c = self.channels;
        let count = (n * hw) as f64;
        let data = x.data();
        let at = |b: usize, ch: usize| (b * c + ch) * hw;

        let (mean, var) = if mode == Mode::Train {
            if n < 2 {
                return Err(Error::InsufficientData(
                    "batch norm needs at least 2 samples in train mode".into(),
                ));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut s = 0.0;
                for b in 0..n {
                    s += data[at(b, ch)..at(b, ch) + hw].iter().sum::<f64>();
                }
                let m = s / count;
                let mut v = 0.0;
                for b in 0..n {
                    v += data[at(b, ch)..at(b, ch) + hw]
                        .iter()
                        .map(|x| (x - m) * (x - m))
                        .sum::<f64>();
                }
                mean[ch] = m;
                var[ch] = v / count;
            }
            let unbiased = count / (count - 1.0);
            for ch in 0..c {
                self.running_mean[ch] =
                    (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean[ch];
                self.running_var[ch] = (1.0 - self.momentum) * self.running_var[ch]
                    + self.momentum * var[ch] * unbiased;
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut x_hat = x.clone();
        let mut y = x.clone();
        let (g, bt) = (self.gamma.value.data(), self.beta.value.data());
        for b in 0..n {
            for ch in 0..c {
                let r = at(b, ch)..at(b, ch) + hw;
                for (xh, yv) in x_hat.data_mut()[r.clone()]
                    .iter_mut()
                    .zip(&mut y.data_mut()[r])
                {
                    *xh = (*xh - mean[ch]) * inv_std[ch];
                    *yv = g[ch] * *xh + bt[ch];
                }
            }
        }
        self.cache = Some(Cache {
            x_hat,
            inv_std,
            mode,
        });
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| missing_cache("batch norm"))?;
        if grad.shape() != cache.x_hat.shape() {
            return Err(Error::shape(
                "batch norm gradient does not match the last forward",
            ));
        }
        let (n, hw) = self.layout(grad)?;
        let c = self.channels;
        let count = (n * hw) as f64;
        let at = |b: usize, ch: usize| (b * c + ch) * hw;
        let (gd, xh) = (grad.data(), cache.x_hat.data());

        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                for i in at(b, ch)..at(b, ch) + hw {
                    dgamma[ch] += gd[i] * xh[i];
                    dbeta[ch] += gd[i];
                }
            }
        }
        let gamma = self.gamma.value.data();
        let mut dx = Tensor::zeros(grad.shape());
        let out = dx.data_mut();
        for b in 0..n {
            for ch in 0..c {
                let k = gamma[ch] * cache.inv_std[ch];
                for i in at(b, ch)..at(b, ch) + hw {
                    out[i] = match cache.mode {
                        // statistics depend on the batch
                        Mode::Train => k * (gd[i] - dbeta[ch] / count - xh[i] * dgamma[ch] / count),
                        Mode::Eval => k * gd[i],
                    };
                }
            }
        }
        self.gamma.grad = Tensor::new(vec![c], dgamma)?;
        self.beta.grad = Tensor::new(vec![c], dbeta)?;
        Ok(dx)
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::BatchNorm {
            channels: self.channels,
            eps: self.eps,
            momentum: self.momentum,
        }
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn state(&self) -> Vec<(String, Tensor)> {
        let c = self.channels;
        vec![
            ("gamma".into(), self.gamma.value.clone()),
            ("beta".into(), self.beta.value.clone()),
            (
                "running_mean".into(),
                Tensor::new(vec![c], self.running_mean.clone()).unwrap(),
            ),
            (
                "running_var".into(),
                Tensor::new(vec![c], self.running_var.clone()).unwrap(),
            ),
        ]
    }

    fn load_state(&mut self, tensors: &[Tensor]) -> Result<()> {
        let c = self.channels;
        if tensors.len() != 4 || tensors.iter().any(|t| t.len() != c) {
            return Err(Error::shape(format!(
                "batch norm over {c} channels expects 4 tensors of length {c}"
            )));
        }
        self.gamma.value = tensors[0].clone().reshape(&[c])?;
        self.beta.value = tensors[1].clone().reshape(&[c])?;
        self.running_mean = tensors[2].data().to_vec();
        self.running_var = tensors[3].data().to_vec();
        Ok(())
    }
}
