//! Deconvolution layer: whiten the patch matrix per channel group, then apply
//! the conv/linear weights.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::layers::{
    affine, column_sums, he_uniform, missing_cache, Conv2d, Layer, LayerSpec, Linear, Mode, Param,
};
use crate::linalg::{gemm, MatRef, Matrix, SeededRng, Tensor};
use crate::patches::{
    col2im, im2col, nchw_to_rows, partition_groups, rows_to_nchw, ChannelGroup, PatchMatrix,
    PatchSpec,
};
use crate::whitening::{
    coupled_newton_schulz_diag, gather_rows, moments, WhiteningConfig, WhiteningState,
};

/// `y = (X - μ) · D · wᵀ + b` with block-diagonal `D` (one block per channel
/// group). `D` is treated as a constant in the backward pass.
///
/// The product is evaluated as `X · (W D)ᵀ + (b - μ D Wᵀ)`, which costs the
/// same as a plain convolution once `W D` is formed.
#[derive(Clone, Debug)]
pub struct Deconv {
    pub c_in: usize,
    pub c_out: usize,
    pub patch: PatchSpec,
    pub flat: bool,
    pub config: WhiteningConfig,
    pub weight: Param,
    pub bias: Param,
    groups: Vec<ChannelGroup>,
    states: Vec<WhiteningState>,
    residuals: Vec<f64>,
    mode: Mode,
    cache: Option<Cache>,
}

#[derive(Clone, Debug)]
struct Cache {
    x: PatchMatrix,
    input_shape: Vec<usize>,
    /// Means used by the last forward, concatenated over groups.
    mu: Vec<f64>,
    ds: Vec<Matrix>,
    w_eff: Matrix,
}

impl Deconv {
    pub fn conv(
        c_in: usize,
        c_out: usize,
        patch: PatchSpec,
        config: WhiteningConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        patch.validate()?;
        config.validate()?;
        let groups = partition_groups(c_in, patch.kernel, config.block_size)?;
        let fan_in = c_in * patch.area();
        Ok(Deconv {
            c_in,
            c_out,
            flat: false,
            states: groups
                .iter()
                .map(|g| WhiteningState::new(g.width()))
                .collect(),
            groups,
            weight: Param::new("weight", he_uniform(c_out, fan_in, rng)),
            bias: Param::new("bias", Tensor::zeros(&[c_out])),
            patch,
            config,
            residuals: Vec::new(),
            mode: Mode::Train,
            cache: None,
        })
    }

    /// Deconvolution in front of a fully connected layer on `[N, F]` inputs.
    pub fn linear(
        inputs: usize,
        outputs: usize,
        config: WhiteningConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut d = Deconv::conv(inputs, outputs, PatchSpec::same(1), config, rng)?;
        d.flat = true;
        Ok(d)
    }

    pub fn features(&self) -> usize {
        self.c_in * self.patch.area()
    }

    pub fn groups(&self) -> &[ChannelGroup] {
        &self.groups
    }

    pub fn states(&self) -> &[WhiteningState] {
        &self.states
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_frozen(&self) -> bool {
        self.states.iter().all(|s| s.frozen)
    }

    /// `‖Z Y - I‖_F` of the last Newton–Schulz step, per group.
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Replace the whitening settings. The block size fixes the group layout,
    /// so it cannot change once the layer exists.
    pub fn set_config(&mut self, config: WhiteningConfig) -> Result<()> {
        config.validate()?;
        if config.block_size != self.config.block_size {
            return Err(Error::contract(format!(
                "block size is fixed at {} for this layer",
                self.config.block_size
            )));
        }
        self.config = config;
        Ok(())
    }

    /// Install fixed statistics (live and running) and freeze the layer.
    pub fn set_statistics(&mut self, mus: Vec<Vec<f64>>, ds: Vec<Matrix>) -> Result<()> {
        if mus.len() != self.groups.len() || ds.len() != self.groups.len() {
            return Err(Error::shape(format!(
                "layer has {} groups, got {} means and {} matrices",
                self.groups.len(),
                mus.len(),
                ds.len()
            )));
        }
        for ((s, mu), d) in self.states.iter_mut().zip(mus).zip(ds) {
            let f = s.features();
            if mu.len() != f || d.rows() != f || d.cols() != f {
                return Err(Error::shape("statistics do not match group width"));
            }
            s.running_mu = mu.clone();
            s.running_d = d.clone();
            s.mu = mu;
            s.d = d;
            s.frozen = true;
        }
        Ok(())
    }

    fn to_nchw(&self, x: &Tensor) -> Result<Tensor> {
        if self.flat {
            let m = x.clone().into_batch_matrix()?;
            let (n, f) = (m.rows(), m.cols());
            Tensor::from_matrix(m).reshape(&[n, f, 1, 1])
        } else {
            Ok(x.clone())
        }
    }

    fn input_patches(&self, x: &Tensor) -> Result<PatchMatrix> {
        let x4 = self.to_nchw(x)?;
        let (_, c, _, _) = x4.dims4()?;
        if c != self.c_in {
            return Err(Error::shape(format!(
                "deconv expects {} input channels, got {c}",
                self.c_in
            )));
        }
        im2col(&x4, &self.patch)
    }

    fn output(&self, y: &Matrix, pm: &PatchMatrix) -> Result<Tensor> {
        let t = rows_to_nchw(y, pm.batch, pm.out_h, pm.out_w)?;
        if self.flat {
            t.reshape(&[pm.batch, self.c_out])
        } else {
            Ok(t)
        }
    }

    /// Per-group `(μ, D, residual)` estimated from one batch.
    fn batch_statistics(&self, pm: &PatchMatrix) -> Result<Vec<(Vec<f64>, Matrix, f64)>> {
        let rows = pm.sampled_rows(self.config.sample_stride);
        let sampled = gather_rows(pm.matrix.view(), &rows);
        let cfg = &self.config;
        self.groups
            .par_iter()
            .map(|g| {
                let m = moments(sampled.columns(g.columns.clone()), cfg.centered)?;
                let ns = coupled_newton_schulz_diag(&m.cov, cfg.eps, cfg.ns_iters)?;
                let mu = if cfg.centered {
                    m.mean
                } else {
                    vec![0.0; g.width()]
                };
                Ok((mu, ns.d, ns.residual))
            })
            .collect()
    }

    /// Statistics for this forward: fresh batch estimates while training and
    /// unfrozen, running averages in eval mode, frozen values otherwise.
    fn select_statistics(
        &mut self,
        pm: &PatchMatrix,
        mode: Mode,
    ) -> Result<(Vec<f64>, Vec<Matrix>)> {
        if mode == Mode::Train && !self.is_frozen() {
            let fresh = self.batch_statistics(pm)?;
            self.residuals = fresh.iter().map(|f| f.2).collect();
            for (state, (mu, d, _)) in self.states.iter_mut().zip(fresh) {
                state.update_running(mu, d, self.config.momentum, self.config.freeze_after)?;
            }
        }
        let use_running = mode == Mode::Eval;
        let mut mu = Vec::with_capacity(self.features());
        let mut ds = Vec::with_capacity(self.groups.len());
        for s in &self.states {
            if use_running {
                mu.extend_from_slice(&s.running_mu);
                ds.push(s.running_d.clone());
            } else {
                mu.extend_from_slice(&s.mu);
                ds.push(s.d.clone());
            }
        }
        Ok((mu, ds))
    }

    /// `W_eff = W · blockdiag(D)` and `b_eff = b - W_eff μ`.
    fn effective(&self, mu: &[f64], ds: &[Matrix]) -> Result<(Matrix, Vec<f64>)> {
        let w = self.weight.matrix();
        let mut w_eff = Matrix::zeros(self.c_out, self.features());
        for (g, d) in self.groups.iter().zip(ds) {
            let mut block = Matrix::zeros(self.c_out, g.width());
            gemm(1.0, w.columns(g.columns.clone()), d.view(), 0.0, &mut block)?;
            for o in 0..self.c_out {
                w_eff.row_mut(o)[g.columns.clone()].copy_from_slice(block.row(o));
            }
        }
        let b_eff = (0..self.c_out)
            .map(|o| {
                let dot: f64 = w_eff.row(o).iter().zip(mu).map(|(a, m)| a * m).sum();
                self.bias.value.data()[o] - dot
            })
            .collect();
        Ok((w_eff, b_eff))
    }

    /// Effective weights of the plain layer that reproduces this layer's
    /// eval-mode forward.
    pub fn fold_implicit(&self) -> Result<(Matrix, Vec<f64>)> {
        if self.mode == Mode::Train && !self.is_frozen() {
            return Err(Error::contract(
                "fold_implicit needs a frozen layer or eval mode",
            ));
        }
        let mut mu = Vec::with_capacity(self.features());
        let mut ds = Vec::new();
        for s in &self.states {
            mu.extend_from_slice(&s.running_mu);
            ds.push(s.running_d.clone());
        }
        self.effective(&mu, &ds)
    }

    /// A plain conv (or linear) layer carrying the folded weights.
    pub fn to_plain(&self) -> Result<Box<dyn Layer>> {
        let (w, b) = self.fold_implicit()?;
        let w = Tensor::from_matrix(w);
        let b = Tensor::new(vec![self.c_out], b)?;
        Ok(if self.flat {
            Box::new(Linear::from_parts(w, b)?)
        } else {
            Box::new(Conv2d::from_parts(self.patch, w, b)?)
        })
    }

    /// `(X - μ) · blockdiag(D)` with the running statistics, formed explicitly.
    pub fn whitened_patches(&self, x: &Tensor) -> Result<(Matrix, PatchMatrix)> {
        let pm = self.input_patches(x)?;
        let mus: Vec<&[f64]> = self.states.iter().map(|s| &s.running_mu[..]).collect();
        let ds: Vec<&Matrix> = self.states.iter().map(|s| &s.running_d).collect();
        let xw = whiten(pm.matrix.view(), &self.groups, &mus, &ds)?;
        Ok((xw, pm))
    }

    /// Eval-mode forward through the explicitly whitened patch matrix.
    pub fn forward_explicit(&self, x: &Tensor) -> Result<Tensor> {
        let (xw, pm) = self.whitened_patches(x)?;
        let y = affine(xw.view(), self.weight.matrix(), self.bias.value.data())?;
        self.output(&y, &pm)
    }

    /// Covariance of the whitened sampled rows of the last forward's input,
    /// using the statistics that forward applied. One matrix per group.
    pub fn whitened_sample_covariances(&self) -> Result<Vec<Matrix>> {
        let c = self.cache.as_ref().ok_or_else(|| missing_cache("deconv"))?;
        let rows = c.x.sampled_rows(self.config.sample_stride);
        let sampled = gather_rows(c.x.matrix.view(), &rows);
        let mut mus = Vec::new();
        for g in &self.groups {
            mus.push(&c.mu[g.columns.clone()]);
        }
        let ds: Vec<&Matrix> = c.ds.iter().collect();
        let xw = whiten(sampled.view(), &self.groups, &mus, &ds)?;
        let n = xw.rows() as f64;
        self.groups
            .iter()
            .map(|g| {
                let v = xw.columns(g.columns.clone());
                let mut cov = Matrix::zeros(g.width(), g.width());
                gemm(1.0 / n, v.t(), v, 0.0, &mut cov)?;
                Ok(cov)
            })
            .collect()
    }
}

fn whiten(
    x: MatRef<'_>,
    groups: &[ChannelGroup],
    mus: &[&[f64]],
    ds: &[&Matrix],
) -> Result<Matrix> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for ((g, mu), d) in groups.iter().zip(mus).zip(ds) {
        let v = x.columns(g.columns.clone());
        let centered = Matrix::from_fn(x.rows(), g.width(), |i, j| v.get(i, j) - mu[j]);
        let mut block = Matrix::zeros(x.rows(), g.width());
        gemm(1.0, centered.view(), d.view(), 0.0, &mut block)?;
        for i in 0..x.rows() {
            out.row_mut(i)[g.columns.clone()].copy_from_slice(block.row(i));
        }
    }
    Ok(out)
}

impl Layer for Deconv {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.mode = mode;
        let pm = self.input_patches(x)?;
        let (mu, ds) = self.select_statistics(&pm, mode)?;
        let (w_eff, b_eff) = self.effective(&mu, &ds)?;
        let y = affine(pm.matrix.view(), w_eff.view(), &b_eff)?;
        let out = self.output(&y, &pm)?;
        self.cache = Some(Cache {
            x: pm,
            input_shape: x.shape().to_vec(),
            mu,
            ds,
            w_eff,
        });
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let c = self.cache.as_ref().ok_or_else(|| missing_cache("deconv"))?;
        let g = if self.flat {
            grad.clone().into_batch_matrix()?
        } else {
            nchw_to_rows(grad)?
        };
        if g.rows() != c.x.rows() || g.cols() != self.c_out {
            return Err(Error::shape(
                "deconv gradient does not match the last forward",
            ));
        }
        // ∂L/∂W_g = (gᵀ (X_g - μ_g)) D_g
        let sums = column_sums(&g);
        let mut raw = Matrix::zeros(self.c_out, self.features());
        gemm(1.0, g.view().t(), c.x.matrix.view(), 0.0, &mut raw)?;
        for o in 0..self.c_out {
            for (v, m) in raw.row_mut(o).iter_mut().zip(&c.mu) {
                *v -= sums[o] * m;
            }
        }
        let mut gw = Matrix::zeros(self.c_out, self.features());
        for (grp, d) in self.groups.iter().zip(&c.ds) {
            let mut block = Matrix::zeros(self.c_out, grp.width());
            gemm(
                1.0,
                raw.columns(grp.columns.clone()),
                d.view(),
                0.0,
                &mut block,
            )?;
            for o in 0..self.c_out {
                gw.row_mut(o)[grp.columns.clone()].copy_from_slice(block.row(o));
            }
        }
        self.weight.grad = Tensor::from_matrix(gw);
        self.bias.grad = Tensor::new(vec![self.c_out], sums)?;

        let mut gx = Matrix::zeros(c.x.rows(), self.features());
        gemm(1.0, g.view(), c.w_eff.view(), 0.0, &mut gx)?;
        if self.flat {
            Tensor::from_matrix(gx).reshape(&c.input_shape)
        } else {
            let s = &c.input_shape;
            col2im(&gx, &self.patch, [s[0], s[1], s[2], s[3]])
        }
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Deconv {
            c_in: self.c_in,
            c_out: self.c_out,
            patch: self.patch,
            flat: self.flat,
            whitening: self.config.clone(),
        }
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn state(&self) -> Vec<(String, Tensor)> {
        let row = |v: &[f64]| Tensor::new(vec![1, v.len()], v.to_vec()).unwrap();
        let mut out = vec![
            ("weight".to_string(), self.weight.value.clone()),
            ("bias".to_string(), self.bias.value.clone()),
        ];
        for (i, s) in self.states.iter().enumerate() {
            out.push((format!("group{i}.mu"), row(&s.mu)));
            out.push((format!("group{i}.d"), Tensor::from_matrix(s.d.clone())));
            out.push((format!("group{i}.running_mu"), row(&s.running_mu)));
            out.push((
                format!("group{i}.running_d"),
                Tensor::from_matrix(s.running_d.clone()),
            ));
            out.push((
                format!("group{i}.counters"),
                row(&[s.step as f64, if s.frozen { 1.0 } else { 0.0 }]),
            ));
        }
        out
    }

    fn load_state(&mut self, tensors: &[Tensor]) -> Result<()> {
        let want = 2 + 5 * self.states.len();
        if tensors.len() != want {
            return Err(Error::shape(format!(
                "deconv layer expects {want} state tensors, got {}",
                tensors.len()
            )));
        }
        if tensors[0].shape() != self.weight.value.shape()
            || tensors[1].shape() != self.bias.value.shape()
        {
            return Err(Error::shape(
                "deconv parameter shapes differ from checkpoint",
            ));
        }
        self.weight.value = tensors[0].clone();
        self.bias.value = tensors[1].clone();
        for (i, s) in self.states.iter_mut().enumerate() {
            let t = &tensors[2 + 5 * i..7 + 5 * i];
            let f = s.features();
            let square = |t: &Tensor| -> Result<Matrix> {
                let m = t.clone().into_matrix()?;
                if m.rows() != f || m.cols() != f {
                    return Err(Error::shape(
                        "whitening matrix size differs from checkpoint",
                    ));
                }
                Ok(m)
            };
            if t[0].len() != f || t[2].len() != f || t[4].len() != 2 {
                return Err(Error::shape("whitening statistics differ from checkpoint"));
            }
            s.mu = t[0].data().to_vec();
            s.d = square(&t[1])?;
            s.running_mu = t[2].data().to_vec();
            s.running_d = square(&t[3])?;
            s.step = t[4].data()[0] as u64;
            s.frozen = t[4].data()[1] != 0.0;
        }
        Ok(())
    }

    fn diagnostic(&self) -> Option<f64> {
        Some(self.residuals.iter().copied().fold(0.0, f64::max))
    }

    fn as_deconv(&self) -> Option<&Deconv> {
        Some(self)
    }

    fn as_deconv_mut(&mut self) -> Option<&mut Deconv> {
        Some(self)
    }
}
