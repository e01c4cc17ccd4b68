use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use netdeconv::data::netpbm::{encode_pgm, parse_netpbm};
use netdeconv::linalg::Matrix;
use netdeconv::trainer::Objective;
use netdeconv::whitening::{coupled_residual_trace, extract_deconv_kernel, vanilla_newton_schulz};
use netdeconv_cli::blur::{blur_problem, run_blur, BlurConfig, BlurReport};
use netdeconv_cli::context::{load_config, Context, Table};
use netdeconv_cli::kernels::{diagonal_planes, Solver};
use netdeconv_cli::ns_bench::{load_image, run_ns_bench, stability_covariance, NsBenchConfig};
use netdeconv_cli::regress::{cmd_regress, RegressConfig};
use netdeconv_cli::timing::{cmd_timing, LayerShape, TimingConfig, GRID};
use netdeconv_cli::training::{cmd_mlp, Method, MlpConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_netdeconv"))
}

fn data_dir() -> PathBuf {
    std::env::var_os("NETDECONV_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn have(dataset: &str) -> bool {
    let ok = data_dir().join(dataset).is_dir();
    if !ok {
        eprintln!("{dataset} not under {}; skipping", data_dir().display());
    }
    ok
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn whitened_gd_recovers_blur_kernel_in_few_steps() {
    let cfg = BlurConfig::default();
    let r = run_blur(&blur_problem(&cfg, 1).unwrap(), &cfg).unwrap();
    let white = BlurReport::iters_to(&r.whitened_errors, cfg.tol).expect("whitened GD converges");
    assert!(white <= 5, "{white}");
    // raw GD at its fastest constant rate
    match BlurReport::iters_to(&r.raw_errors, cfg.tol) {
        Some(raw) => assert!(raw >= 50, "{raw}"),
        None => assert!(r.raw_errors.len() >= 50),
    }
}

#[test]
fn noise_free_blur_is_identifiable_in_closed_form() {
    let cfg = BlurConfig::default();
    let r = run_blur(&blur_problem(&cfg, 2).unwrap(), &cfg).unwrap();
    assert!(r.closed_form_error < 1e-6, "{}", r.closed_form_error);
}

#[test]
fn newton_schulz_bench_examples() {
    let cov = stability_covariance(&load_image(None).unwrap(), true).unwrap();
    let r = run_ns_bench(&cov, &NsBenchConfig::default()).unwrap();
    assert_eq!(r.coupled.len(), 1000);
    assert!(r.coupled[999] < 2.0 * r.coupled[0]);
    assert!(r.vanilla_blowup_step(1e3).is_some_and(|s| s < 100));

    // on the ridged input of the oracle comparison
    let (_, coupled) = coupled_residual_trace(&cov, r.oracle_eps, 15).unwrap();
    let vanilla = vanilla_newton_schulz(&cov, r.oracle_eps, 15)
        .unwrap()
        .residuals;
    assert!(coupled[14] < 1e-3, "coupled at 15: {:e}", coupled[14]);
    assert!(vanilla[14] < 1e-3, "vanilla at 15: {:e}", vanilla[14]);
}

#[test]
fn identity_covariance_gives_delta_kernel_image() {
    let (k, c) = (3, 2);
    let d = Solver::Oracle
        .inverse_sqrt(&Matrix::identity(c * k * k), 0.0)
        .unwrap();
    let kernel = extract_deconv_kernel(&d, k, c).unwrap();
    let mut golden = b"P5\n3 3\n255\n".to_vec();
    golden.extend_from_slice(&[0, 0, 0, 0, 255, 0, 0, 0, 0]);
    for plane in diagonal_planes(&kernel).unwrap() {
        let bytes = encode_pgm(&plane, k, k).unwrap();
        assert_eq!(bytes, golden);
        let back = parse_netpbm(&bytes).unwrap();
        assert_eq!(back.shape(), &[1, 3, 3]);
        assert_eq!(back.data(), plane.as_slice());
    }
    // off-diagonal channel pairs are zero
    let off = &kernel.data()[k * k..2 * k * k];
    assert!(off.iter().all(|&v| v == 0.0));
}

#[test]
fn timing_csv_schema_and_grid() {
    assert_eq!(GRID.len(), 22);
    assert_eq!(
        GRID[0],
        LayerShape {
            h: 256,
            w: 256,
            ch_in: 3,
            ch_out: 64,
            groups: 1,
            k: 3,
            stride: 3
        }
    );
    let out = tempfile::tempdir().unwrap();
    let ctx = Context::new(data_dir(), out.path());
    let small = |h, ch_in, groups| LayerShape {
        h,
        w: h,
        ch_in,
        ch_out: 8,
        groups,
        k: 3,
        stride: 3,
    };
    let cfg = TimingConfig {
        batch_size: 2,
        reps: 1,
        rows: vec![small(16, 3, 1), small(8, 8, 2)],
        ..TimingConfig::default()
    };
    let rows = cmd_timing(&ctx, &cfg).unwrap();
    assert_eq!(rows.len(), 2);
    let t = Table::parse(&read(&ctx.path("timing.csv"))).unwrap();
    let want = [
        "h",
        "w",
        "ch_in",
        "ch_out",
        "groups",
        "k",
        "stride",
        "batch",
        "im2col_s",
        "cov_s",
        "inv_s",
        "conv_s",
        "overhead_over_conv",
    ];
    assert_eq!(t.columns, want);
    assert_eq!(t.rows.len(), 2);
    for r in 0..2 {
        assert!(t.f64_at(r, "conv_s").unwrap() > 0.0);
        assert!(t.f64_at(r, "overhead_over_conv").unwrap().is_finite());
    }

    let bad = TimingConfig {
        rows: vec![small(8, 3, 2)],
        ..cfg
    };
    assert!(cmd_timing(&ctx, &bad).is_err());
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let out = tempfile::tempdir().unwrap();
    let (a, b) = (out.path().join("a"), out.path().join("b"));
    for cmd in ["blur", "ns-bench"] {
        let status = bin()
            .args([cmd, "--seed", "7", "--self-check", "--out"])
            .arg(a.join(cmd))
            .status()
            .unwrap();
        assert!(status.success(), "{cmd}");
        let status = bin()
            .args([cmd, "--config"])
            .arg(a.join(cmd).join("manifest.json"))
            .arg("--out")
            .arg(b.join(cmd))
            .status()
            .unwrap();
        assert!(status.success(), "{cmd} rerun");
        let mut csvs = 0;
        for entry in fs::read_dir(a.join(cmd)).unwrap() {
            let p = entry.unwrap().path();
            if p.extension().is_some_and(|e| e == "csv") {
                csvs += 1;
                assert_eq!(
                    read(&p),
                    read(&b.join(cmd).join(p.file_name().unwrap())),
                    "{}",
                    p.display()
                );
            }
        }
        assert!(csvs >= 2);
        let first = read(&a.join(cmd).join("manifest.json"));
        let again = read(&b.join(cmd).join("manifest.json"));
        assert!(first.contains("\"seed\": 7") && again.contains("\"seed\": 7"));
    }
    let loaded = load_config::<BlurConfig>(Some(&a.join("blur").join("manifest.json"))).unwrap();
    assert_eq!(loaded.config, BlurConfig::default());
    assert_eq!(loaded.manifest.unwrap().name, "blur");
}

#[test]
fn csv_outputs_carry_the_desk_scale_note() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["blur", "--out"])
        .arg(out.path())
        .status()
        .unwrap();
    assert!(status.success());
    let text = read(&out.path().join("summary.csv"));
    assert!(text.starts_with("# desk-scale run"));
    let t = Table::parse(&text).unwrap();
    assert_eq!(t.columns, ["metric", "value"]);
}

#[test]
fn exit_codes_for_bad_input() {
    let out = tempfile::tempdir().unwrap();
    let missing = bin()
        .args(["mlp", "--data-dir", "/definitely/not/here", "--out"])
        .arg(out.path())
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("fetch_data.sh"));

    let cfg = out.path().join("bad.json");
    fs::write(&cfg, "{ not json").unwrap();
    let bad = bin()
        .args(["blur", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));

    let unknown = bin().args(["blur", "--no-such-flag"]).output().unwrap();
    assert_eq!(unknown.status.code(), Some(2));
}

fn small_mlp() -> MlpConfig {
    MlpConfig {
        hidden: vec![32, 32, 32],
        methods: vec![Method::Deconv],
        n_train: Some(1024),
        n_test: Some(256),
        ..MlpConfig::default()
    }
}

#[test]
fn seeds_give_distinct_deterministic_records() {
    if !have("mnist") {
        return;
    }
    let out = tempfile::tempdir().unwrap();
    let cfg = small_mlp();
    let mut ctx = Context::new(data_dir(), out.path().join("a"));
    let first = cmd_mlp(&ctx, &cfg).unwrap();
    ctx.out = out.path().join("b");
    let second = cmd_mlp(&ctx, &cfg).unwrap();
    assert_eq!(first.len(), 3);
    let csv = |dir: &str, label: &str| {
        read(
            &out.path()
                .join(dir)
                .join("runs")
                .join(label)
                .join("record.csv"),
        )
    };
    let labels: Vec<&str> = first.iter().map(|o| o.spec.label.as_str()).collect();
    for l in &labels {
        assert_eq!(csv("a", l), csv("b", l), "{l}");
    }
    assert_ne!(csv("a", labels[0]), csv("a", labels[1]));
    assert_ne!(csv("a", labels[1]), csv("a", labels[2]));
    assert_eq!(
        first.iter().map(|o| o.final_test_acc()).collect::<Vec<_>>(),
        second
            .iter()
            .map(|o| o.final_test_acc())
            .collect::<Vec<_>>()
    );
}

#[test]
fn worker_processes_match_in_process_runs() {
    if !have("mnist") {
        return;
    }
    let out = tempfile::tempdir().unwrap();
    let cfg_path = out.path().join("mlp.json");
    fs::write(&cfg_path, serde_json::to_string(&small_mlp()).unwrap()).unwrap();
    let run = |dir: &str, jobs: &str| {
        let status = bin()
            .args(["mlp", "--self-check", "--jobs", jobs, "--data-dir"])
            .arg(data_dir())
            .arg("--config")
            .arg(&cfg_path)
            .arg("--out")
            .arg(out.path().join(dir))
            .status()
            .unwrap();
        assert!(status.success(), "jobs {jobs}");
        read(&out.path().join(dir).join("summary.csv"))
    };
    assert_eq!(run("serial", "1"), run("parallel", "3"));
}

fn regression_rows(cfg: &RegressConfig, out: &Path) -> Vec<netdeconv_cli::regress::RegressRow> {
    let mut ctx = Context::new(data_dir(), out);
    ctx.self_check = true;
    let rows = cmd_regress(&ctx, cfg).unwrap();
    let t = Table::parse(&read(&ctx.path("summary.csv"))).unwrap();
    assert_eq!(t.rows.len(), rows.len());
    rows
}

#[test]
fn regression_flags_plain_sgd_at_unit_rate_divergent() {
    if !have("fashion-mnist") {
        return;
    }
    let out = tempfile::tempdir().unwrap();
    let cfg = RegressConfig {
        plain_lrs: vec![1.0],
        ..RegressConfig::default()
    };
    let rows = regression_rows(&cfg, out.path());
    let plain: Vec<_> = rows.iter().filter(|r| r.method == Method::Plain).collect();
    assert_eq!(plain.len(), 2);
    for r in &plain {
        if r.objective == Objective::L2 {
            assert!(r.divergent, "{r:?}");
        }
    }
    for label in ["l2_plain_lr1", "l2_deconv_lr1", "logistic_batchnorm_lr0.1"] {
        assert!(
            out.path()
                .join("runs")
                .join(label)
                .join("record.csv")
                .is_file(),
            "{label}"
        );
    }
}

#[test]
fn regression_deconv_reaches_the_optimum_in_five_steps() {
    if !have("fashion-mnist") {
        return;
    }
    let out = tempfile::tempdir().unwrap();
    let cfg = RegressConfig {
        objectives: vec![Objective::L2],
        plain_lrs: vec![],
        ..RegressConfig::default()
    };
    let rows = regression_rows(&cfg, out.path());
    let deconv = rows.iter().find(|r| r.method == Method::Deconv).unwrap();
    assert!(!deconv.divergent);
    let gap = deconv.gap_after_5().unwrap();
    assert!(gap < 0.05, "deconv gap after 5 steps {gap}");
}
