use crate::error::{Error, Result};
use crate::layers::{
    affine, column_sums, he_uniform, missing_cache, Layer, LayerSpec, Mode, Param,
};
use crate::linalg::{gemm, Matrix, SeededRng, Tensor};
use crate::patches::{col2im, im2col, nchw_to_rows, rows_to_nchw, PatchSpec};

/// Convolution as `im2col(x) · Wᵀ + b`, weights `[C_out, C_in·k·k]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub c_in: usize,
    pub c_out: usize,
    pub patch: PatchSpec,
    pub weight: Param,
    pub bias: Param,
    cache: Option<(Matrix, [usize; 4])>,
}

impl Conv2d {
    pub fn new(c_in: usize, c_out: usize, patch: PatchSpec, rng: &mut SeededRng) -> Result<Self> {
        patch.validate()?;
        let fan_in = c_in * patch.area();
        Ok(Conv2d {
            c_in,
            c_out,
            weight: Param::new("weight", he_uniform(c_out, fan_in, rng)),
            bias: Param::new("bias", Tensor::zeros(&[c_out])),
            patch,
            cache: None,
        })
    }

    pub fn from_parts(patch: PatchSpec, weight: Tensor, bias: Tensor) -> Result<Self> {
        let s = weight.shape().to_vec();
        if s.len() != 2 || !s[1].is_multiple_of(patch.area()) || bias.len() != s[0] {
            return Err(Error::shape(format!(
                "conv weight {s:?} / bias {:?} do not fit kernel {}",
                bias.shape(),
                patch.kernel
            )));
        }
        Ok(Conv2d {
            c_in: s[1] / patch.area(),
            c_out: s[0],
            patch,
            weight: Param::new("weight", weight),
            bias: Param::new("bias", bias),
            cache: None,
        })
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.c_in {
            return Err(Error::shape(format!(
                "conv expects {} channels, got {c}",
                self.c_in
            )));
        }
        let pm = im2col(x, &self.patch)?;
        let y = affine(
            pm.matrix.view(),
            self.weight.matrix(),
            self.bias.value.data(),
        )?;
        let out = rows_to_nchw(&y, n, pm.out_h, pm.out_w)?;
        self.cache = Some((pm.matrix, [n, c, h, w]));
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (x, shape) = self.cache.as_ref().ok_or_else(|| missing_cache("conv"))?;
        let g = nchw_to_rows(grad)?;
        if g.rows() != x.rows() || g.cols() != self.c_out {
            return Err(Error::shape(
                "conv gradient does not match the last forward",
            ));
        }
        let mut gw = Matrix::zeros(self.c_out, x.cols());
        gemm(1.0, g.view().t(), x.view(), 0.0, &mut gw)?;
        self.weight.grad = Tensor::from_matrix(gw);
        self.bias.grad = Tensor::new(vec![self.c_out], column_sums(&g))?;
        let mut gx = Matrix::zeros(x.rows(), x.cols());
        gemm(1.0, g.view(), self.weight.matrix(), 0.0, &mut gx)?;
        col2im(&gx, &self.patch, *shape)
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Conv {
            c_in: self.c_in,
            c_out: self.c_out,
            patch: self.patch,
        }
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Fully connected layer on `[N, F]` inputs, weights `[out, F]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Param,
    pub bias: Param,
    cache: Option<Matrix>,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Self {
        Linear {
            inputs,
            outputs,
            weight: Param::new("weight", he_uniform(outputs, inputs, rng)),
            bias: Param::new("bias", Tensor::zeros(&[outputs])),
            cache: None,
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        let s = weight.shape().to_vec();
        if s.len() != 2 || bias.len() != s[0] {
            return Err(Error::shape(format!(
                "linear weight {s:?} / bias {:?} mismatch",
                bias.shape()
            )));
        }
        Ok(Linear {
            inputs: s[1],
            outputs: s[0],
            weight: Param::new("weight", weight),
            bias: Param::new("bias", bias),
            cache: None,
        })
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let x = x.clone().into_batch_matrix()?;
        if x.cols() != self.inputs {
            return Err(Error::shape(format!(
                "linear expects {} features, got {}",
                self.inputs,
                x.cols()
            )));
        }
        let y = affine(x.view(), self.weight.matrix(), self.bias.value.data())?;
        self.cache = Some(x);
        Ok(Tensor::from_matrix(y))
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache("linear"))?;
        let g = grad.clone().into_batch_matrix()?;
        if g.rows() != x.rows() || g.cols() != self.outputs {
            return Err(Error::shape(
                "linear gradient does not match the last forward",
            ));
        }
        let mut gw = Matrix::zeros(self.outputs, self.inputs);
        gemm(1.0, g.view().t(), x.view(), 0.0, &mut gw)?;
        self.weight.grad = Tensor::from_matrix(gw);
        self.bias.grad = Tensor::new(vec![self.outputs], column_sums(&g))?;
        let mut gx = Matrix::zeros(x.rows(), self.inputs);
        gemm(1.0, g.view(), self.weight.matrix(), 0.0, &mut gx)?;
        Ok(Tensor::from_matrix(gx))
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Linear {
            inputs: self.inputs,
            outputs: self.outputs,
        }
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
