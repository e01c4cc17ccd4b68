//! Kernel estimation: recover a Gaussian blur from clean and blurred images
//! by gradient descent, with and without whitening the patch matrix.

use netdeconv::data::{make_blur_problem, BlurProblem, BlurSpec};
use netdeconv::linalg::{matmul, matmul_tn, sym_eig, Matrix, SeededRng, Tensor};
use netdeconv::patches::{im2col, PatchSpec};
use netdeconv::trainer::{closed_form_l2, gd_step_l2};
use netdeconv::Result;
use serde::{Deserialize, Serialize};

use crate::context::{num, Context, Table};
use crate::kernels::Solver;
use crate::ns_bench::load_image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlurConfig {
    /// Grayscale crops taken from the bundled test image.
    pub crops: usize,
    pub crop_size: usize,
    pub k: usize,
    pub sigma_kernel: f64,
    pub noise_sigma: f64,
    pub max_iters: usize,
    /// Relative kernel error that counts as recovered.
    pub tol: f64,
    pub solver: Solver,
    pub eps: f64,
}

impl Default for BlurConfig {
    fn default() -> Self {
        BlurConfig {
            crops: 16,
            crop_size: 32,
            k: 5,
            sigma_kernel: 1.0,
            noise_sigma: 0.0,
            max_iters: 200,
            tol: 1e-3,
            solver: Solver::Oracle,
            eps: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlurReport {
    /// Relative kernel error after each iteration, starting from `w = 0`.
    pub raw_errors: Vec<f64>,
    pub whitened_errors: Vec<f64>,
    /// `2 / (λmax + λmin)`, the fastest constant rate for the raw problem.
    pub raw_lr: f64,
    pub closed_form_error: f64,
}

impl BlurReport {
    pub fn iters_to(errors: &[f64], tol: f64) -> Option<usize> {
        errors.iter().position(|&e| e <= tol).map(|i| i + 1)
    }
}

/// `[n, 1, s, s]` grayscale crops at seeded positions.
pub fn gray_crops(image: &Tensor, count: usize, size: usize, seed: u64) -> Result<Tensor> {
    let (_, c, h, w) = image.dims4()?;
    let mut rng = SeededRng::new(seed);
    let mut data = Vec::with_capacity(count * size * size);
    for _ in 0..count {
        let y0 = rng.below(h - size + 1);
        let x0 = rng.below(w - size + 1);
        for y in 0..size {
            for x in 0..size {
                let v: f64 = (0..c)
                    .map(|ch| image.data()[(ch * h + y0 + y) * w + x0 + x])
                    .sum();
                data.push(v / c as f64);
            }
        }
    }
    Tensor::new(vec![count, 1, size, size], data)
}

/// Patch design `X` (valid windows) and targets `y` as a column.
pub fn blur_design(p: &BlurProblem) -> Result<(Matrix, Matrix)> {
    let k = p.true_kernel.shape()[0];
    let x = im2col(&p.x_clean, &PatchSpec::new(k, 1, 0)?)?.matrix;
    let y = Matrix::from_vec(p.y_blurred.len(), 1, p.y_blurred.data().to_vec())?;
    Ok((x, y))
}

fn relative_error(w: &Matrix, truth: &[f64]) -> f64 {
    let num: f64 = w
        .as_slice()
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

pub fn run_blur(p: &BlurProblem, cfg: &BlurConfig) -> Result<BlurReport> {
    let (x, y) = blur_design(p)?;
    let truth = p.true_kernel.data();
    let n = x.rows() as f64;
    let gram = matmul_tn(&x, &x)?.scaled(1.0 / n);
    let eig = sym_eig(&gram)?;
    let (lmin, lmax) = (eig.values[0], *eig.values.last().unwrap_or(&0.0));
    let raw_lr = 2.0 / (lmax + lmin);

    let mut w = Matrix::zeros(x.cols(), 1);
    let mut raw_errors = Vec::with_capacity(cfg.max_iters);
    for _ in 0..cfg.max_iters {
        w = gd_step_l2(&x, &w, &y, raw_lr)?;
        raw_errors.push(relative_error(&w, truth));
    }

    // uncentered whitening keeps the model bias-free: kernel = D w̃
    let d = cfg.solver.inverse_sqrt(&gram, cfg.eps)?;
    let xw = matmul(&x, &d)?;
    let mut wt = Matrix::zeros(x.cols(), 1);
    let mut whitened_errors = Vec::with_capacity(cfg.max_iters);
    for _ in 0..cfg.max_iters {
        wt = gd_step_l2(&xw, &wt, &y, 1.0)?;
        whitened_errors.push(relative_error(&matmul(&d, &wt)?, truth));
    }

    let closed = closed_form_l2(&x, &y, None)?;
    Ok(BlurReport {
        raw_errors,
        whitened_errors,
        raw_lr,
        closed_form_error: relative_error(&closed.w, truth),
    })
}

pub fn blur_problem(cfg: &BlurConfig, seed: u64) -> Result<BlurProblem> {
    let crops = gray_crops(&load_image(None)?, cfg.crops, cfg.crop_size, seed)?;
    make_blur_problem(
        &crops,
        &BlurSpec {
            k: cfg.k,
            sigma_kernel: cfg.sigma_kernel,
            noise_sigma: cfg.noise_sigma,
            seed,
        },
    )
}

pub fn cmd_blur(ctx: &Context, cfg: &BlurConfig) -> Result<BlurReport> {
    ctx.prepare()?;
    ctx.write_manifest("blur", cfg)?;
    let report = run_blur(&blur_problem(cfg, ctx.seed)?, cfg)?;
    let mut t = Table::new(&["iter", "raw_rel_error", "whitened_rel_error"]);
    for i in 0..report.raw_errors.len() {
        t.push(vec![
            (i + 1).to_string(),
            num(report.raw_errors[i]),
            num(report.whitened_errors[i]),
        ]);
    }
    ctx.write_table("errors.csv", &t)?;
    let opt = |v: Option<usize>| v.map_or_else(String::new, |v| v.to_string());
    let mut s = Table::new(&["metric", "value"]);
    s.push(vec!["raw_lr".into(), num(report.raw_lr)]);
    s.push(vec![
        "raw_iters_to_tol".into(),
        opt(BlurReport::iters_to(&report.raw_errors, cfg.tol)),
    ]);
    s.push(vec![
        "whitened_iters_to_tol".into(),
        opt(BlurReport::iters_to(&report.whitened_errors, cfg.tol)),
    ]);
    s.push(vec![
        "closed_form_rel_error".into(),
        num(report.closed_form_error),
    ]);
    ctx.write_table("summary.csv", &s)?;
    Ok(report)
}
