use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use netdeconv::Result;
use serde::de::DeserializeOwned;

use netdeconv_cli::blur::{cmd_blur, BlurConfig};
use netdeconv_cli::context::{load_config, Context};
use netdeconv_cli::kernels::{cmd_kernel_viz, cmd_sparsity, KernelVizConfig, SparsityConfig};
use netdeconv_cli::ns_bench::{cmd_ns_bench, NsBenchConfig};
use netdeconv_cli::regress::{cmd_regress, RegressConfig};
use netdeconv_cli::timing::{cmd_timing, TimingConfig};
use netdeconv_cli::training::{
    cmd_batchsize, cmd_cnn, cmd_decay, cmd_mlp, BatchSizeConfig, CnnConfig, DecayConfig, MlpConfig,
};

/// Network deconvolution experiments.
///
/// Every command writes manifest.json and CSV tables into --out. A manifest
/// can be passed back through --config to repeat a run.
#[derive(Parser)]
#[command(name = "netdeconv", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Linear and logistic regression on Fashion-MNIST
    Regress(Common),
    /// Three-layer sigmoid MLP on MNIST, batch norm against deconvolution
    Mlp(Common),
    /// Small VGG-style network on a CIFAR-10 subset
    Cnn(Common),
    /// Deconvolution kernels of CIFAR-10 patches
    KernelViz(Common),
    /// Coupled against uncoupled Newton-Schulz residuals
    NsBench(Common),
    /// Value histograms and kurtosis before and after deconvolution
    Sparsity(Common),
    /// Per-component cost of one deconvolution layer
    Timing(Common),
    /// Blur kernel recovery by plain and whitened gradient descent
    Blur(Common),
    /// Deconvolution CNN at several batch-size presets
    Batchsize(Common),
    /// CNN runs across weight-decay strengths
    Decay(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Directory holding mnist/, fashion-mnist/ and cifar-10-batches-bin/
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    /// Output directory (defaults to out/<command>)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed; replaces the seed list of multi-seed experiments
    #[arg(long)]
    seed: Option<u64>,
    /// JSON config, either bare or a manifest.json from an earlier run
    #[arg(long)]
    config: Option<PathBuf>,
    /// Whiten without subtracting the mean
    #[arg(long)]
    uncentered: bool,
    /// Train runs in this many worker processes
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Re-read every written file and verify it round-trips
    #[arg(long)]
    self_check: bool,
    #[arg(long, hide = true)]
    run_index: Option<usize>,
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Regress(_) => "regress",
            Cmd::Mlp(_) => "mlp",
            Cmd::Cnn(_) => "cnn",
            Cmd::KernelViz(_) => "kernel-viz",
            Cmd::NsBench(_) => "ns-bench",
            Cmd::Sparsity(_) => "sparsity",
            Cmd::Timing(_) => "timing",
            Cmd::Blur(_) => "blur",
            Cmd::Batchsize(_) => "batchsize",
            Cmd::Decay(_) => "decay",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Cmd::Regress(c)
            | Cmd::Mlp(c)
            | Cmd::Cnn(c)
            | Cmd::KernelViz(c)
            | Cmd::NsBench(c)
            | Cmd::Sparsity(c)
            | Cmd::Timing(c)
            | Cmd::Blur(c)
            | Cmd::Batchsize(c)
            | Cmd::Decay(c) => c,
        }
    }
}

/// Workers re-run the same command line with `--run-index` appended, so it
/// must not already carry one. The output directory is pinned so a relative
/// default resolves the same way in every worker.
fn worker_command(out: &Path) -> Vec<OsString> {
    let mut args: Vec<OsString> = std::env::args_os().collect();
    if let Ok(exe) = std::env::current_exe() {
        args[0] = exe.into();
    }
    let mut kept = Vec::with_capacity(args.len() + 2);
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--run-index" || a == "--out" {
            it.next();
        } else if !(a.to_string_lossy().starts_with("--run-index=")
            || a.to_string_lossy().starts_with("--out="))
        {
            kept.push(a);
        }
    }
    kept.push("--out".into());
    kept.push(out.as_os_str().to_owned());
    kept
}

fn context(cmd: &Cmd, seed: u64) -> Context {
    let c = cmd.common();
    let out = c
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(cmd.name()));
    let mut ctx = Context::new(&c.data_dir, &out);
    ctx.seed = seed;
    ctx.centered = !c.uncentered;
    ctx.self_check = c.self_check;
    ctx.jobs = c.jobs.max(1);
    ctx.run_index = c.run_index;
    if ctx.jobs > 1 && c.run_index.is_none() {
        ctx.worker_command = Some(worker_command(&out));
    }
    ctx
}

/// Config and context, with manifest settings filling in flags left unset.
fn setup<C: DeserializeOwned + Default>(cmd: &Cmd) -> Result<(C, Context)> {
    let c = cmd.common();
    let loaded = load_config::<C>(c.config.as_deref())?;
    let seed = c
        .seed
        .or(loaded.manifest.as_ref().map(|m| m.seed))
        .unwrap_or(1);
    let mut ctx = context(cmd, seed);
    if let Some(m) = &loaded.manifest {
        if !c.uncentered {
            ctx.centered = m.centered;
        }
    }
    Ok((loaded.config, ctx))
}

fn run(cmd: &Cmd) -> Result<()> {
    let seed_list = cmd.common().seed.map(|s| vec![s]);
    match cmd {
        Cmd::Regress(_) => {
            let (cfg, ctx) = setup::<RegressConfig>(cmd)?;
            cmd_regress(&ctx, &cfg).map(drop)
        }
        Cmd::Mlp(_) => {
            let (mut cfg, ctx) = setup::<MlpConfig>(cmd)?;
            if let Some(s) = seed_list {
                cfg.seeds = s;
            }
            cmd_mlp(&ctx, &cfg).map(drop)
        }
        Cmd::Cnn(_) => {
            let (mut cfg, ctx) = setup::<CnnConfig>(cmd)?;
            if let Some(s) = seed_list {
                cfg.seeds = s;
            }
            cmd_cnn(&ctx, &cfg).map(drop)
        }
        Cmd::KernelViz(_) => {
            let (cfg, ctx) = setup::<KernelVizConfig>(cmd)?;
            cmd_kernel_viz(&ctx, &cfg).map(drop)
        }
        Cmd::NsBench(_) => {
            let (cfg, ctx) = setup::<NsBenchConfig>(cmd)?;
            cmd_ns_bench(&ctx, &cfg).map(drop)
        }
        Cmd::Sparsity(_) => {
            let (cfg, ctx) = setup::<SparsityConfig>(cmd)?;
            cmd_sparsity(&ctx, &cfg).map(drop)
        }
        Cmd::Timing(_) => {
            let (cfg, ctx) = setup::<TimingConfig>(cmd)?;
            cmd_timing(&ctx, &cfg).map(drop)
        }
        Cmd::Blur(_) => {
            let (cfg, ctx) = setup::<BlurConfig>(cmd)?;
            cmd_blur(&ctx, &cfg).map(drop)
        }
        Cmd::Batchsize(_) => {
            let (mut cfg, ctx) = setup::<BatchSizeConfig>(cmd)?;
            if let Some(s) = seed_list {
                cfg.cnn.seeds = s;
            }
            cmd_batchsize(&ctx, &cfg).map(drop)
        }
        Cmd::Decay(_) => {
            let (mut cfg, ctx) = setup::<DecayConfig>(cmd)?;
            if let Some(s) = seed_list {
                cfg.cnn.seeds = s;
            }
            cmd_decay(&ctx, &cfg).map(drop)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("NETDECONV_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
    {
        // only fails if a pool already exists, which cannot happen this early
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
