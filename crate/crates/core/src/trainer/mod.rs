//! SGD training loop, closed-form regression solvers and settings presets.

mod optim;
pub mod presets;
mod record;
mod regression;

pub use optim::{sgd_step, Schedule, Sgd};
pub use record::{csv_header, RecordRow, RunRecord, BASE_COLUMNS};
pub use regression::{
    closed_form_l2, gd_step_l2, l2_objective, one_step_convergence_check, one_step_l2_loss,
    optimal_l2_loss, whiten_features, with_intercept, ClosedForm, OneStepReport, Whitener,
};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{random_hflip, Dataset, Split};
use crate::error::{Error, Result};
use crate::layers::loss::{accuracy, l2_loss, logistic_loss, one_hot, softmax_xent};
use crate::layers::{Mode, Network};
use crate::linalg::{SeededRng, Tensor};
use crate::whitening::WhiteningConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    SoftmaxXent,
    /// Squared error against one-hot targets.
    L2,
    /// Per-class logistic loss against one-hot targets.
    Logistic,
}

impl Objective {
    /// Loss value, gradient and accuracy for a batch of network outputs.
    pub fn evaluate(
        self,
        out: &Tensor,
        labels: &[u8],
        classes: usize,
    ) -> Result<(f64, Tensor, f64)> {
        let (loss, grad) = match self {
            Objective::SoftmaxXent => softmax_xent(out, labels)?,
            Objective::L2 => l2_loss(out, &one_hot(labels, classes))?,
            Objective::Logistic => logistic_loss(out, &one_hot(labels, classes))?,
        };
        Ok((loss, grad, accuracy(out, labels)?))
    }
}

/// Replacement whitening settings for the `layer`-th deconvolution layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhiteningOverride {
    pub layer: usize,
    pub config: WhiteningConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: Schedule,
    pub seed: u64,
    /// Heavy-ball momentum; off unless set.
    pub momentum: Option<f64>,
    pub objective: Objective,
    /// Stop after this many steps even mid-epoch.
    pub max_steps: Option<usize>,
    /// Also evaluate before the first step and every this many steps.
    pub eval_every: Option<usize>,
    pub hflip: bool,
    /// Record elapsed time; when off `wall_ms` is 0 and records are
    /// byte-reproducible.
    pub wall_clock: bool,
    pub whitening_overrides: Vec<WhiteningOverride>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            weight_decay: 0.001,
            batch_size: 128,
            epochs: 1,
            schedule: Schedule::Constant,
            seed: 0,
            momentum: None,
            objective: Objective::SoftmaxXent,
            max_steps: None,
            eval_every: None,
            hflip: false,
            wall_clock: true,
            whitening_overrides: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::contract(format!(
                "learning rate must be >= 0, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be >= 1"));
        }
        Ok(())
    }

    /// Steps the run will take on `n` training examples.
    pub fn total_steps(&self, n: usize) -> usize {
        let per_epoch = n / self.batch_size;
        let total = per_epoch * self.epochs;
        self.max_steps.map_or(total, |m| m.min(total))
    }
}

const EVAL_BATCH: usize = 500;

/// Mean loss and accuracy in eval mode.
pub fn evaluate(net: &mut Network, data: &Dataset, objective: Objective) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut hits = 0.0;
    let mut start = 0;
    while start < data.len() {
        let count = EVAL_BATCH.min(data.len() - start);
        let x = data.images.slice_batch(start, count)?;
        let out = net.forward(&x, Mode::Eval)?;
        let (l, _, a) =
            objective.evaluate(&out, &data.labels[start..start + count], data.classes)?;
        loss += l * count as f64;
        hits += a * count as f64;
        start += count;
    }
    let n = data.len().max(1) as f64;
    Ok((loss / n, hits / n))
}

/// Train `net` with mini-batch SGD. Incomplete final batches are dropped.
pub fn fit(
    net: &mut Network,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<RunRecord> {
    fit_logged(net, train, test, cfg, None, None)
}

/// [`fit`] streaming every row to `csv` (flushed per row). On a non-finite
/// loss the network is checkpointed to `snapshot` when given, and the run
/// aborts with a numerical error.
pub fn fit_logged(
    net: &mut Network,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    mut csv: Option<&mut dyn Write>,
    snapshot: Option<&Path>,
) -> Result<RunRecord> {
    cfg.validate()?;
    {
        let mut deconvs = net.deconv_layers_mut();
        for o in &cfg.whitening_overrides {
            let layer = deconvs.get_mut(o.layer).ok_or_else(|| {
                Error::contract(format!("no deconvolution layer {} to override", o.layer))
            })?;
            layer.set_config(o.config.clone())?;
        }
    }
    let diag_columns = net.deconv_layers().len();
    let mut record = RunRecord::new(diag_columns);
    let io_err = |e: std::io::Error| Error::io("<run record>", e);
    if let Some(w) = csv.as_mut() {
        writeln!(w, "{}", csv_header(diag_columns)).map_err(io_err)?;
        w.flush().map_err(io_err)?;
    }
    let emit =
        |record: &mut RunRecord, row: RecordRow, csv: &mut Option<&mut dyn Write>| -> Result<()> {
            if let Some(w) = csv.as_mut() {
                writeln!(w, "{}", row.csv_line(diag_columns)).map_err(io_err)?;
                w.flush().map_err(io_err)?;
            }
            record.rows.push(row);
            Ok(())
        };

    let clock = Instant::now();
    let elapsed = || {
        if cfg.wall_clock {
            clock.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    };
    let eval_row = |net: &mut Network, step: usize, epoch: usize| -> Result<Option<RecordRow>> {
        let Some(test) = test else { return Ok(None) };
        let (loss, acc) = evaluate(net, test, cfg.objective)?;
        Ok(Some(RecordRow {
            step,
            epoch,
            split: Split::Test,
            loss,
            acc,
            wall_ms: elapsed(),
            layer_diag: Vec::new(),
        }))
    };

    let total = cfg.total_steps(train.len());
    let mut rng = SeededRng::new(cfg.seed);
    let mut opt = Sgd::new(cfg.weight_decay, cfg.momentum)?;
    let mut step = 0;
    let mut last_eval = None;
    if cfg.eval_every.is_some() {
        if let Some(row) = eval_row(net, 0, 0)? {
            emit(&mut record, row, &mut csv)?;
            last_eval = Some(0);
        }
    }
    let mut epoch = 0;
    while epoch < cfg.epochs && step < total {
        epoch += 1;
        let order = rng.permutation(train.len());
        for batch in order.chunks_exact(cfg.batch_size) {
            if step >= total {
                break;
            }
            let mut x = train.images.gather_batch(batch)?;
            if cfg.hflip {
                random_hflip(&mut x, &mut rng)?;
            }
            let labels: Vec<u8> = batch.iter().map(|&i| train.labels[i]).collect();
            let out = net.forward(&x, Mode::Train)?;
            let (loss, grad, acc) = cfg.objective.evaluate(&out, &labels, train.classes)?;
            if !loss.is_finite() {
                let mut reason = format!("loss became {loss} in epoch {epoch}");
                if let Some(path) = snapshot {
                    net.save(path)?;
                    reason.push_str(&format!("; network saved to {}", path.display()));
                }
                return Err(Error::Numerical {
                    step: step + 1,
                    reason,
                });
            }
            net.backward(&grad)?;
            opt.step(net.params_mut(), cfg.schedule.rate(cfg.lr, step, total));
            step += 1;
            let row = RecordRow {
                step,
                epoch,
                split: Split::Train,
                loss,
                acc,
                wall_ms: elapsed(),
                layer_diag: net.diagnostics(),
            };
            emit(&mut record, row, &mut csv)?;
            if cfg.eval_every.is_some_and(|k| step % k == 0) {
                if let Some(row) = eval_row(net, step, epoch)? {
                    emit(&mut record, row, &mut csv)?;
                    last_eval = Some(step);
                }
            }
        }
        if last_eval != Some(step) {
            if let Some(row) = eval_row(net, step, epoch)? {
                emit(&mut record, row, &mut csv)?;
                last_eval = Some(step);
            }
        }
    }
    Ok(record)
}
