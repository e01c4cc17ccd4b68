//! Training studies: batch norm against deconvolution on the MLP and the
//! small CNN, and the batch-size and weight-decay sweeps built on them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::process::Command;

use netdeconv::data::{load_cifar10_dir, load_mnist_dir, Dataset, Split};
use netdeconv::layers::{mlp, vgg_like, DeconvPlan, Network, Norm, VggItem};
use netdeconv::linalg::SeededRng;
use netdeconv::trainer::presets::batch_size_preset;
use netdeconv::trainer::{fit_logged, RunRecord, TrainConfig};
use netdeconv::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::context::{io_error, num, read_file, Context, Table, DESK_SCALE_NOTE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Plain,
    Batchnorm,
    Deconv,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Plain => "plain",
            Method::Batchnorm => "batchnorm",
            Method::Deconv => "deconv",
        }
    }

    fn norm(self, plan: &DeconvPlan) -> Norm {
        match self {
            Method::Plain => Norm::Plain,
            Method::Batchnorm => Norm::BatchNorm,
            Method::Deconv => Norm::Deconv(plan.clone()),
        }
    }
}

/// One training run of a study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub label: String,
    pub method: Method,
    pub seed: u64,
    pub train: TrainConfig,
    pub plan: DeconvPlan,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub spec: RunSpec,
    pub record: RunRecord,
}

impl RunOutcome {
    /// Test accuracy at the end of epoch `epoch` (1-based).
    pub fn test_acc_at_epoch(&self, epoch: usize) -> Option<f64> {
        self.record
            .split(Split::Test)
            .filter(|r| r.epoch == epoch)
            .last()
            .map(|r| r.acc)
    }

    pub fn final_test_acc(&self) -> Option<f64> {
        self.record.last(Split::Test).map(|r| r.acc)
    }
}

/// MNIST, three sigmoid hidden layers of 128.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub train: TrainConfig,
    pub plan: DeconvPlan,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![128, 128, 128],
            seeds: vec![1, 2, 3],
            methods: vec![Method::Batchnorm, Method::Deconv],
            train: TrainConfig {
                lr: 0.3,
                wall_clock: false,
                ..TrainConfig::default()
            },
            plan: DeconvPlan {
                input: Default::default(),
                hidden: Default::default(),
                fc_block_size: 64,
            },
            n_train: None,
            n_test: None,
        }
    }
}

/// CIFAR-10 subset, VGG-style convolutions at desk-scale widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub layers: Vec<VggItem>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub train: TrainConfig,
    pub plan: DeconvPlan,
    pub n_train: usize,
    pub n_test: usize,
    /// Seed of the subset draw, shared by every run.
    pub subset_seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        use VggItem::{Conv, Pool};
        CnnConfig {
            layers: vec![Conv(16), Pool, Conv(32), Pool, Conv(64), Conv(64), Pool],
            seeds: vec![1, 2, 3],
            methods: vec![Method::Batchnorm, Method::Deconv],
            train: TrainConfig {
                wall_clock: false,
                ..TrainConfig::default()
            },
            plan: DeconvPlan::default().map(|c| c.sample_stride = 1),
            n_train: 10_000,
            n_test: 2_000,
            subset_seed: 0,
        }
    }
}

/// Deconvolution CNN runs with the per-batch-size settings presets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchSizeConfig {
    pub presets: Vec<String>,
    pub cnn: CnnConfig,
}

impl Default for BatchSizeConfig {
    fn default() -> Self {
        BatchSizeConfig {
            presets: ["bs32", "bs128", "bs512"].map(String::from).to_vec(),
            cnn: CnnConfig {
                seeds: vec![1],
                methods: vec![Method::Deconv],
                ..CnnConfig::default()
            },
        }
    }
}

/// Batch norm and deconvolution CNN runs across weight-decay strengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecayConfig {
    pub weight_decays: Vec<f64>,
    pub cnn: CnnConfig,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig {
            weight_decays: vec![1e-4, 1e-3, 1e-2],
            cnn: CnnConfig {
                seeds: vec![1],
                ..CnnConfig::default()
            },
        }
    }
}

fn centered_plan(plan: &DeconvPlan, ctx: &Context) -> DeconvPlan {
    let centered = ctx.centered;
    plan.clone().map(|c| c.centered = centered)
}

fn grid(
    seeds: &[u64],
    methods: &[Method],
    train: &TrainConfig,
    plan: &DeconvPlan,
    ctx: &Context,
) -> Vec<RunSpec> {
    let mut runs = Vec::new();
    for &seed in seeds {
        for &method in methods {
            runs.push(RunSpec {
                label: format!("{}_seed{seed}", method.label()),
                method,
                seed,
                train: TrainConfig {
                    seed,
                    ..train.clone()
                },
                plan: centered_plan(plan, ctx),
            });
        }
    }
    runs
}

/// Training and test sets as configured.
pub fn mnist_data(ctx: &Context, cfg: &MlpConfig) -> Result<(Dataset, Dataset)> {
    let dir = ctx.dataset_dir("mnist")?;
    let mut train = load_mnist_dir(&dir, Split::Train)?;
    let mut test = load_mnist_dir(&dir, Split::Test)?;
    if let Some(n) = cfg.n_train {
        train = train.head(n)?;
    }
    if let Some(n) = cfg.n_test {
        test = test.head(n)?;
    }
    Ok((train, test))
}

/// The seeded training and test subsets shared by every CNN run.
pub fn cifar_data(ctx: &Context, cfg: &CnnConfig) -> Result<(Dataset, Dataset)> {
    let dir = ctx.dataset_dir("cifar-10-batches-bin")?;
    let batches = cfg.n_train.div_ceil(10_000).max(1);
    let train =
        load_cifar10_dir(&dir, Split::Train, batches)?.subset(cfg.n_train, cfg.subset_seed)?;
    let test = load_cifar10_dir(&dir, Split::Test, 1)?.subset(cfg.n_test, cfg.subset_seed)?;
    Ok((train, test))
}

pub fn mlp_runs(ctx: &Context, cfg: &MlpConfig) -> Vec<RunSpec> {
    grid(&cfg.seeds, &cfg.methods, &cfg.train, &cfg.plan, ctx)
}

pub fn cnn_runs(ctx: &Context, cfg: &CnnConfig) -> Vec<RunSpec> {
    grid(&cfg.seeds, &cfg.methods, &cfg.train, &cfg.plan, ctx)
}

pub fn batchsize_runs(ctx: &Context, cfg: &BatchSizeConfig) -> Result<Vec<RunSpec>> {
    let mut runs = Vec::new();
    for name in &cfg.presets {
        let p = batch_size_preset(name)?;
        let train = TrainConfig {
            batch_size: p.batch_size,
            lr: p.lr,
            ..cfg.cnn.train.clone()
        };
        let plan = cfg.cnn.plan.clone().map(|c| {
            c.eps = p.eps;
            c.ns_iters = p.ns_iters;
        });
        for mut r in grid(&cfg.cnn.seeds, &cfg.cnn.methods, &train, &plan, ctx) {
            r.label = format!("{}_{}", p.name, r.label);
            runs.push(r);
        }
    }
    Ok(runs)
}

pub fn decay_runs(ctx: &Context, cfg: &DecayConfig) -> Vec<RunSpec> {
    let mut runs = Vec::new();
    for &wd in &cfg.weight_decays {
        let train = TrainConfig {
            weight_decay: wd,
            ..cfg.cnn.train.clone()
        };
        for mut r in grid(&cfg.cnn.seeds, &cfg.cnn.methods, &train, &cfg.cnn.plan, ctx) {
            r.label = format!("wd{wd}_{}", r.label);
            runs.push(r);
        }
    }
    runs
}

pub fn build_mlp(cfg: &MlpConfig, run: &RunSpec, inputs: usize, classes: usize) -> Result<Network> {
    mlp(
        inputs,
        &cfg.hidden,
        classes,
        &run.method.norm(&run.plan),
        &mut SeededRng::new(run.seed),
    )
}

pub fn build_cnn(
    cfg: &CnnConfig,
    run: &RunSpec,
    channels: usize,
    classes: usize,
) -> Result<Network> {
    vgg_like(
        channels,
        &cfg.layers,
        classes,
        &run.method.norm(&run.plan),
        &mut SeededRng::new(run.seed),
    )
}

pub fn cmd_mlp(ctx: &Context, cfg: &MlpConfig) -> Result<Vec<RunOutcome>> {
    ctx.prepare()?;
    ctx.write_manifest("mlp", cfg)?;
    let (train, test) = mnist_data(ctx, cfg)?;
    let (c, h, w) = train.image_dims();
    let runs = mlp_runs(ctx, cfg);
    let outcomes = execute(ctx, &runs, &train, &test, |r| {
        build_mlp(cfg, r, c * h * w, train.classes)
    })?;
    finish(ctx, outcomes)
}

pub fn cmd_cnn(ctx: &Context, cfg: &CnnConfig) -> Result<Vec<RunOutcome>> {
    ctx.prepare()?;
    ctx.write_manifest("cnn", cfg)?;
    let (train, test) = cifar_data(ctx, cfg)?;
    let runs = cnn_runs(ctx, cfg);
    let outcomes = execute(ctx, &runs, &train, &test, |r| {
        build_cnn(cfg, r, 3, train.classes)
    })?;
    finish(ctx, outcomes)
}

pub fn cmd_batchsize(ctx: &Context, cfg: &BatchSizeConfig) -> Result<Vec<RunOutcome>> {
    ctx.prepare()?;
    ctx.write_manifest("batchsize", cfg)?;
    let (train, test) = cifar_data(ctx, &cfg.cnn)?;
    let runs = batchsize_runs(ctx, cfg)?;
    let outcomes = execute(ctx, &runs, &train, &test, |r| {
        build_cnn(&cfg.cnn, r, 3, train.classes)
    })?;
    finish(ctx, outcomes)
}

pub fn cmd_decay(ctx: &Context, cfg: &DecayConfig) -> Result<Vec<RunOutcome>> {
    ctx.prepare()?;
    ctx.write_manifest("decay", cfg)?;
    let (train, test) = cifar_data(ctx, &cfg.cnn)?;
    let runs = decay_runs(ctx, cfg);
    let outcomes = execute(ctx, &runs, &train, &test, |r| {
        build_cnn(&cfg.cnn, r, 3, train.classes)
    })?;
    finish(ctx, outcomes)
}

fn record_path(ctx: &Context, run: &RunSpec) -> std::path::PathBuf {
    ctx.out.join("runs").join(&run.label).join("record.csv")
}

/// Train one run, streaming its record to `runs/<label>/record.csv`.
pub fn train_one(
    ctx: &Context,
    run: &RunSpec,
    net: &mut Network,
    train: &Dataset,
    test: Option<&Dataset>,
) -> Result<RunRecord> {
    let path = record_path(ctx, run);
    let dir = path.parent().expect("record path has a parent");
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let file = File::create(&path).map_err(|e| io_error(&path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{DESK_SCALE_NOTE}").map_err(|e| io_error(&path, e))?;
    let snapshot = dir.join("diverged");
    let record = fit_logged(net, train, test, &run.train, Some(&mut w), Some(&snapshot))?;
    w.flush().map_err(|e| io_error(&path, e))?;
    ctx.check_record(&path, &record)?;
    Ok(record)
}

/// Run every entry in process, or fan them out to `--jobs` worker processes
/// with one output directory each.
fn execute(
    ctx: &Context,
    runs: &[RunSpec],
    train: &Dataset,
    test: &Dataset,
    build: impl Fn(&RunSpec) -> Result<Network>,
) -> Result<Vec<RunOutcome>> {
    if let Some(i) = ctx.run_index {
        let run = runs.get(i).ok_or_else(|| {
            Error::Contract(format!("run index {i} out of range ({} runs)", runs.len()))
        })?;
        let record = train_one(ctx, run, &mut build(run)?, train, Some(test))?;
        return Ok(vec![RunOutcome {
            spec: run.clone(),
            record,
        }]);
    }
    match &ctx.worker_command {
        Some(cmd) if ctx.jobs > 1 => {
            spawn_workers(cmd, runs.len(), ctx.jobs)?;
            runs.iter()
                .map(|run| {
                    let record = RunRecord::parse_csv(&read_file(&record_path(ctx, run))?)?;
                    Ok(RunOutcome {
                        spec: run.clone(),
                        record,
                    })
                })
                .collect()
        }
        _ => runs
            .iter()
            .map(|run| {
                let record = train_one(ctx, run, &mut build(run)?, train, Some(test))?;
                Ok(RunOutcome {
                    spec: run.clone(),
                    record,
                })
            })
            .collect(),
    }
}

fn spawn_workers(cmd: &[std::ffi::OsString], count: usize, jobs: usize) -> Result<()> {
    let mut next = 0;
    let mut running = Vec::new();
    let mut failure = None;
    while next < count || !running.is_empty() {
        while next < count && running.len() < jobs {
            let child = Command::new(&cmd[0])
                .args(&cmd[1..])
                .arg("--run-index")
                .arg(next.to_string())
                .spawn()
                .map_err(|e| io_error(std::path::Path::new(&cmd[0]), e))?;
            running.push((next, child));
            next += 1;
        }
        let (i, mut child) = running.remove(0);
        let status = child
            .wait()
            .map_err(|e| io_error(std::path::Path::new(&cmd[0]), e))?;
        if !status.success() && failure.is_none() {
            failure = Some(match status.code() {
                Some(3) => Error::Numerical {
                    step: 0,
                    reason: format!("worker for run {i} hit a numerical failure"),
                },
                code => Error::Contract(format!("worker for run {i} exited with {code:?}")),
            });
        }
    }
    failure.map_or(Ok(()), Err)
}

fn finish(ctx: &Context, outcomes: Vec<RunOutcome>) -> Result<Vec<RunOutcome>> {
    if ctx.run_index.is_none() {
        ctx.write_table("summary.csv", &summary_table(&outcomes))?;
    }
    Ok(outcomes)
}

pub fn summary_table(outcomes: &[RunOutcome]) -> Table {
    let mut t = Table::new(&[
        "label",
        "method",
        "seed",
        "batch_size",
        "lr",
        "weight_decay",
        "steps",
        "final_train_loss",
        "epoch1_test_acc",
        "final_test_loss",
        "final_test_acc",
    ]);
    for o in outcomes {
        let last_train = o.record.last(Split::Train);
        let last_test = o.record.last(Split::Test);
        let opt = |v: Option<f64>| v.map_or_else(String::new, num);
        t.push(vec![
            o.spec.label.clone(),
            o.spec.method.label().to_string(),
            o.spec.seed.to_string(),
            o.spec.train.batch_size.to_string(),
            num(o.spec.train.lr),
            num(o.spec.train.weight_decay),
            last_train.map_or(0, |r| r.step).to_string(),
            opt(last_train.map(|r| r.loss)),
            opt(o.test_acc_at_epoch(1)),
            opt(last_test.map(|r| r.loss)),
            opt(last_test.map(|r| r.acc)),
        ]);
    }
    t
}
