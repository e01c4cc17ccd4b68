use crate::error::{Error, Result};
use crate::layers::{missing_cache, Layer, LayerSpec, Mode};
use crate::linalg::Tensor;

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Layer for Relu {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        Ok(x.map(|v| v.max(0.0)))
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mask = self.mask.as_ref().ok_or_else(|| missing_cache("relu"))?;
        if mask.len() != grad.len() {
            return Err(Error::shape(
                "relu gradient does not match the last forward",
            ));
        }
        let mut g = grad.clone();
        for (v, &m) in g.data_mut().iter_mut().zip(mask) {
            if !m {
                *v = 0.0;
            }
        }
        Ok(g)
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Relu
    }
}

#[derive(Clone, Debug, Default)]
pub struct Sigmoid {
    out: Option<Tensor>,
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Layer for Sigmoid {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let y = x.map(sigmoid);
        self.out = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let y = self.out.as_ref().ok_or_else(|| missing_cache("sigmoid"))?;
        if y.shape() != grad.shape() {
            return Err(Error::shape(
                "sigmoid gradient does not match the last forward",
            ));
        }
        let mut g = grad.clone();
        for (v, s) in g.data_mut().iter_mut().zip(y.data()) {
            *v *= s * (1.0 - s);
        }
        Ok(g)
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Sigmoid
    }
}

/// Non-overlapping `size x size` max pooling; spatial dims must divide evenly.
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    pub size: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::contract("pool size must be >= 1"));
        }
        Ok(MaxPool2d { size, cache: None })
    }
}

impl Layer for MaxPool2d {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let s = self.size;
        if h % s != 0 || w % s != 0 {
            return Err(Error::shape(format!(
                "{h}x{w} maps not divisible by pool {s}"
            )));
        }
        let (oh, ow) = (h / s, w / s);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = vec![0usize; n * c * oh * ow];
        let src = x.data();
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * s * w + ox * s;
                    for dy in 0..s {
                        for dx in 0..s {
                            let i = base + (oy * s + dy) * w + ox * s + dx;
                            if src[i] > src[best] {
                                best = i;
                            }
                        }
                    }
                    let o = (p * oh + oy) * ow + ox;
                    out.data_mut()[o] = src[best];
                    argmax[o] = best;
                }
            }
        }
        self.cache = Some((argmax, x.shape().to_vec()));
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (argmax, shape) = self
            .cache
            .as_ref()
            .ok_or_else(|| missing_cache("max pool"))?;
        if grad.len() != argmax.len() {
            return Err(Error::shape(
                "max pool gradient does not match the last forward",
            ));
        }
        let mut gx = Tensor::zeros(shape);
        for (&i, g) in argmax.iter().zip(grad.data()) {
            gx.data_mut()[i] += g;
        }
        Ok(gx)
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::MaxPool { size: self.size }
    }
}

/// `[N, C, H, W] -> [N, C]` spatial mean.
#[derive(Clone, Debug, Default)]
pub struct GlobalAvgPool {
    shape: Option<Vec<usize>>,
}

impl Layer for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let hw = h * w;
        let data = x
            .data()
            .chunks_exact(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        self.shape = Some(x.shape().to_vec());
        Tensor::new(vec![n, c], data)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let shape = self
            .shape
            .as_ref()
            .ok_or_else(|| missing_cache("average pool"))?;
        let hw = shape[2] * shape[3];
        if grad.len() != shape[0] * shape[1] {
            return Err(Error::shape(
                "average pool gradient does not match the last forward",
            ));
        }
        let mut gx = Vec::with_capacity(grad.len() * hw);
        for &g in grad.data() {
            gx.extend(std::iter::repeat_n(g / hw as f64, hw));
        }
        Tensor::new(shape.clone(), gx)
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::GlobalAvgPool
    }
}

/// `[N, ...] -> [N, rest]`.
#[derive(Clone, Debug, Default)]
pub struct Flatten {
    shape: Option<Vec<usize>>,
}

impl Layer for Flatten {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        self.shape = Some(x.shape().to_vec());
        Ok(Tensor::from_matrix(x.clone().into_batch_matrix()?))
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let shape = self
            .shape
            .as_ref()
            .ok_or_else(|| missing_cache("flatten"))?;
        grad.clone().reshape(shape)
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Flatten
    }
}
