//! One-layer linear and logistic regression on Fashion-MNIST: plain SGD at
//! several rates, batch norm, and deconvolution at the unit step.

use netdeconv::data::{load_mnist_dir, Dataset, Split};
use netdeconv::layers::{BatchNorm, Deconv, Flatten, Layer, Linear, Network};
use netdeconv::linalg::{Matrix, SeededRng};
use netdeconv::trainer::{optimal_l2_loss, Objective, RecordRow, TrainConfig};
use netdeconv::whitening::WhiteningConfig;
use netdeconv::Result;
use serde::{Deserialize, Serialize};

use crate::context::{num, Context, Table};
use crate::training::{train_one, Method, RunSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressConfig {
    /// Training images used (the first `n` of the file); all when unset.
    pub n_train: Option<usize>,
    pub batch_size: usize,
    pub steps: usize,
    pub plain_lrs: Vec<f64>,
    pub batchnorm_lr: f64,
    pub deconv_lr: f64,
    pub objectives: Vec<Objective>,
    pub whitening: WhiteningConfig,
    /// Ridge for the closed form when the raw design is singular.
    pub ridge: f64,
    /// Log elapsed time in the records (breaks byte-identical reruns).
    pub wall_clock: bool,
}

impl Default for RegressConfig {
    fn default() -> Self {
        RegressConfig {
            n_train: Some(10_000),
            batch_size: 128,
            steps: 50,
            plain_lrs: vec![0.02, 0.05, 0.1, 1.0],
            batchnorm_lr: 0.1,
            deconv_lr: 1.0,
            objectives: vec![Objective::L2, Objective::Logistic],
            // one group over all 784 inputs: block-diagonal whitening leaves
            // cross-block correlation, which the unit step does not tolerate
            whitening: WhiteningConfig {
                block_size: 784,
                sample_stride: 1,
                ..WhiteningConfig::default()
            },
            ridge: 1e-10,
            wall_clock: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressRow {
    pub objective: Objective,
    pub method: Method,
    pub lr: f64,
    pub divergent: bool,
    pub first_loss: f64,
    /// Mini-batch loss measured after five updates.
    pub loss_after_5: f64,
    pub final_loss: f64,
    /// Closed-form optimum of the full-data L2 objective, if applicable.
    pub optimal_loss: Option<f64>,
}

impl RegressRow {
    pub fn gap_after_5(&self) -> Option<f64> {
        self.optimal_loss.map(|o| (self.loss_after_5 - o) / o)
    }
}

fn objective_name(o: Objective) -> &'static str {
    match o {
        Objective::L2 => "l2",
        Objective::Logistic => "logistic",
        Objective::SoftmaxXent => "softmax_xent",
    }
}

fn model(
    method: Method,
    features: usize,
    classes: usize,
    w: &WhiteningConfig,
    seed: u64,
) -> Result<Network> {
    let mut rng = SeededRng::new(seed);
    let layers: Vec<Box<dyn Layer>> = match method {
        Method::Plain => vec![Box::new(Linear::new(features, classes, &mut rng))],
        Method::Batchnorm => vec![
            Box::new(Flatten::default()),
            Box::new(BatchNorm::new(features)),
            Box::new(Linear::new(features, classes, &mut rng)),
        ],
        Method::Deconv => vec![Box::new(Deconv::linear(
            features,
            classes,
            w.clone(),
            &mut rng,
        )?)],
    };
    Ok(Network::new(layers))
}

/// Flattened images and one-hot targets.
pub fn design(data: &Dataset) -> (Matrix, Matrix) {
    let f = data.images.len() / data.len().max(1);
    let x = Matrix::from_fn(data.len(), f, |i, j| data.images.data()[i * f + j]);
    let y = Matrix::from_fn(data.len(), data.classes, |i, j| {
        if data.labels[i] as usize == j {
            1.0
        } else {
            0.0
        }
    });
    (x, y)
}

pub fn cmd_regress(ctx: &Context, cfg: &RegressConfig) -> Result<Vec<RegressRow>> {
    ctx.prepare()?;
    ctx.write_manifest("regress", cfg)?;
    let dir = ctx.dataset_dir("fashion-mnist")?;
    let mut train = load_mnist_dir(&dir, Split::Train)?;
    if let Some(n) = cfg.n_train {
        train = train.head(n)?;
    }
    let features = train.images.len() / train.len();
    let whitening = WhiteningConfig {
        centered: ctx.centered,
        ..cfg.whitening.clone()
    };

    let mut optimum = None;
    if cfg.objectives.contains(&Objective::L2) {
        let (x, y) = design(&train);
        optimum = Some(optimal_l2_loss(&x, &y, true, Some(cfg.ridge))?.0);
    }

    let mut rows = Vec::new();
    for &objective in &cfg.objectives {
        let mut runs: Vec<(Method, f64)> = cfg
            .plain_lrs
            .iter()
            .map(|&lr| (Method::Plain, lr))
            .collect();
        runs.push((Method::Batchnorm, cfg.batchnorm_lr));
        runs.push((Method::Deconv, cfg.deconv_lr));
        for (method, lr) in runs {
            let spec = RunSpec {
                label: format!("{}_{}_lr{lr}", objective_name(objective), method.label()),
                method,
                seed: ctx.seed,
                train: TrainConfig {
                    lr,
                    weight_decay: 0.0,
                    batch_size: cfg.batch_size,
                    epochs: cfg.steps,
                    max_steps: Some(cfg.steps),
                    seed: ctx.seed,
                    objective,
                    wall_clock: cfg.wall_clock,
                    ..TrainConfig::default()
                },
                plan: Default::default(),
            };
            let mut net = model(method, features, train.classes, &whitening, ctx.seed)?;
            let row = match train_one(ctx, &spec, &mut net, &train, None) {
                Ok(record) => {
                    let losses: Vec<&RecordRow> = record.split(Split::Train).collect();
                    let at = |i: usize| losses.get(i).map_or(f64::NAN, |r| r.loss);
                    let first = at(0);
                    let last = losses.last().map_or(f64::NAN, |r| r.loss);
                    RegressRow {
                        objective,
                        method,
                        lr,
                        divergent: !(last.is_finite() && last <= 10.0 * first),
                        first_loss: first,
                        loss_after_5: at(5),
                        final_loss: last,
                        optimal_loss: None,
                    }
                }
                Err(e) if e.is_numerical() => RegressRow {
                    objective,
                    method,
                    lr,
                    divergent: true,
                    first_loss: f64::NAN,
                    loss_after_5: f64::NAN,
                    final_loss: f64::INFINITY,
                    optimal_loss: None,
                },
                Err(e) => return Err(e),
            };
            rows.push(RegressRow {
                optimal_loss: if objective == Objective::L2 {
                    optimum
                } else {
                    None
                },
                ..row
            });
        }
    }

    let mut t = Table::new(&[
        "objective",
        "method",
        "lr",
        "divergent",
        "first_loss",
        "loss_after_5",
        "final_loss",
        "optimal_loss",
        "gap_after_5",
    ]);
    for r in &rows {
        let opt = |v: Option<f64>| v.map_or_else(String::new, num);
        t.push(vec![
            objective_name(r.objective).into(),
            r.method.label().into(),
            num(r.lr),
            r.divergent.to_string(),
            num(r.first_loss),
            num(r.loss_after_5),
            num(r.final_loss),
            opt(r.optimal_loss),
            opt(r.gap_after_5()),
        ]);
    }
    ctx.write_table("summary.csv", &t)?;
    Ok(rows)
}
