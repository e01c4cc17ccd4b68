use netdeconv::layers::gradcheck::{check_layer, check_loss, DEFAULT_STEP};
use netdeconv::layers::loss::{l2_loss, logistic_loss, softmax_xent};
use netdeconv::layers::{
    mlp, vgg_like, BatchNorm, Conv2d, Deconv, DeconvPlan, Flatten, GlobalAvgPool, Layer, Linear,
    MaxPool2d, Mode, Network, Norm, Relu, Sigmoid, VggItem,
};
use netdeconv::linalg::{sym_eig, Matrix, SeededRng, Tensor};
use netdeconv::patches::{im2col, PatchSpec};
use netdeconv::whitening::{inverse_sqrt_oracle, WhiteningConfig};

const TOL: f64 = 1e-5;

fn input(seed: u64, shape: &[usize]) -> Tensor {
    SeededRng::new(seed).gaussian_tensor(shape)
}

fn assert_grad(layer: &mut dyn Layer, x: &Tensor, mode: Mode, what: &str) {
    let r = check_layer(layer, x, mode, DEFAULT_STEP, 99).unwrap();
    assert!(r.worst() < TOL, "{what}: {r:?}");
}

/// Deconv layer with non-trivial frozen statistics from a few training batches.
fn frozen_deconv(c_in: usize, c_out: usize, k: usize, block: usize, seed: u64) -> Deconv {
    let cfg = WhiteningConfig {
        block_size: block,
        sample_stride: 1,
        freeze_after: Some(3),
        ..WhiteningConfig::default()
    };
    let mut rng = SeededRng::new(seed);
    let mut d = Deconv::conv(c_in, c_out, PatchSpec::same(k), cfg, &mut rng).unwrap();
    for s in 0..3 {
        d.forward(&input(seed + 10 + s, &[4, c_in, 6, 6]), Mode::Train)
            .unwrap();
    }
    assert!(d.is_frozen());
    d
}

#[test]
fn conv_gradients() {
    let mut rng = SeededRng::new(1);
    let mut c = Conv2d::new(3, 4, PatchSpec::same(3), &mut rng).unwrap();
    c.bias.value = rng.gaussian_tensor(&[4]);
    assert_grad(&mut c, &input(2, &[2, 3, 6, 6]), Mode::Train, "conv same");
    let mut c = Conv2d::new(2, 3, PatchSpec::new(3, 2, 0).unwrap(), &mut rng).unwrap();
    assert_grad(
        &mut c,
        &input(3, &[2, 2, 7, 7]),
        Mode::Train,
        "conv strided",
    );
}

#[test]
fn linear_gradients_and_matmul_oracle() {
    let mut rng = SeededRng::new(4);
    let mut l = Linear::new(5, 3, &mut rng);
    l.bias.value = rng.gaussian_tensor(&[3]);
    let x = input(5, &[4, 5]);
    assert_grad(&mut l, &x, Mode::Train, "linear");

    let y = l.forward(&x, Mode::Eval).unwrap();
    for n in 0..4 {
        for o in 0..3 {
            let mut want = l.bias.value.data()[o];
            for f in 0..5 {
                want += x.data()[n * 5 + f] * l.weight.value.data()[o * 5 + f];
            }
            assert!((y.data()[n * 3 + o] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn deconv_gradients_with_fixed_statistics() {
    let x = input(6, &[2, 3, 6, 6]);
    let mut d = frozen_deconv(3, 4, 3, 64, 7);
    assert_grad(&mut d, &x, Mode::Train, "deconv frozen");
    assert_grad(&mut d, &x, Mode::Eval, "deconv eval");

    // two groups (remainder rule), block 2 of 3 channels
    let mut d = frozen_deconv(3, 2, 3, 2, 8);
    assert_eq!(d.groups().len(), 2);
    assert_grad(&mut d, &x, Mode::Eval, "deconv grouped");

    let cfg = WhiteningConfig {
        freeze_after: Some(1),
        ..WhiteningConfig::default()
    };
    let mut rng = SeededRng::new(9);
    let mut f = Deconv::linear(6, 3, cfg, &mut rng).unwrap();
    f.forward(&input(10, &[32, 6]), Mode::Train).unwrap();
    assert_grad(&mut f, &input(11, &[4, 6]), Mode::Train, "deconv flat");
}

#[test]
fn batchnorm_gradients() {
    let mut rng = SeededRng::new(12);
    let mut bn = BatchNorm::new(3);
    bn.gamma.value = rng.uniform_tensor(&[3], 0.5, 1.5);
    bn.beta.value = rng.gaussian_tensor(&[3]);
    assert_grad(
        &mut bn,
        &input(13, &[4, 3, 3, 3]),
        Mode::Train,
        "bn train 4d",
    );
    assert_grad(&mut bn, &input(14, &[6, 3]), Mode::Train, "bn train 2d");
    bn.forward(&input(15, &[6, 3]), Mode::Train).unwrap();
    assert_grad(&mut bn, &input(16, &[6, 3]), Mode::Eval, "bn eval");
}

#[test]
fn activation_and_pool_gradients() {
    let x = input(17, &[2, 2, 4, 4]);
    assert_grad(&mut Relu::default(), &x, Mode::Train, "relu");
    assert_grad(&mut Sigmoid::default(), &x, Mode::Train, "sigmoid");
    assert_grad(&mut MaxPool2d::new(2).unwrap(), &x, Mode::Train, "maxpool");
    assert_grad(&mut GlobalAvgPool::default(), &x, Mode::Train, "gap");
    assert_grad(&mut Flatten::default(), &x, Mode::Train, "flatten");
}

#[test]
fn loss_gradients() {
    let z = input(18, &[5, 4]);
    let labels = [0u8, 3, 1, 1, 2];
    let t = SeededRng::new(19).uniform_tensor(&[5, 4], 0.0, 1.0);
    assert!(check_loss(|p| softmax_xent(p, &labels), &z, DEFAULT_STEP).unwrap() < TOL);
    assert!(check_loss(|p| l2_loss(p, &t), &z, DEFAULT_STEP).unwrap() < TOL);
    assert!(check_loss(|p| logistic_loss(p, &t), &z, DEFAULT_STEP).unwrap() < TOL);
}

#[test]
fn zero_upstream_gradient_gives_zero_gradients() {
    let mut d = frozen_deconv(3, 4, 3, 64, 20);
    let x = input(21, &[2, 3, 6, 6]);
    let y = d.forward(&x, Mode::Eval).unwrap();
    let gx = d.backward(&Tensor::zeros(y.shape())).unwrap();
    assert!(gx.data().iter().all(|&v| v == 0.0));
    assert!(d.weight.grad.data().iter().all(|&v| v == 0.0));
    assert!(d.bias.grad.data().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_without_forward_is_a_state_error() {
    let mut d = frozen_deconv(3, 4, 3, 64, 22);
    let mut fresh = Deconv::conv(
        3,
        4,
        PatchSpec::same(3),
        WhiteningConfig::default(),
        &mut SeededRng::new(0),
    )
    .unwrap();
    assert!(matches!(
        fresh.backward(&Tensor::zeros(&[2, 4, 6, 6])),
        Err(netdeconv::Error::State(_))
    ));
    // and d still works
    let y = d.forward(&input(23, &[2, 3, 6, 6]), Mode::Eval).unwrap();
    d.backward(&y).unwrap();
}

#[test]
fn identity_statistics_reduce_to_plain_conv() {
    let mut rng = SeededRng::new(24);
    let mut d = Deconv::conv(
        3,
        4,
        PatchSpec::same(3),
        WhiteningConfig::default(),
        &mut rng,
    )
    .unwrap();
    d.bias.value = rng.gaussian_tensor(&[4]);
    d.set_statistics(vec![vec![0.0; 27]], vec![Matrix::identity(27)])
        .unwrap();
    let mut c = Conv2d::from_parts(
        PatchSpec::same(3),
        d.weight.value.clone(),
        d.bias.value.clone(),
    )
    .unwrap();

    let (w, b) = d.fold_implicit().unwrap();
    assert_eq!(w.as_slice(), d.weight.value.data());
    assert_eq!(b, d.bias.value.data());

    let x = input(25, &[2, 3, 6, 6]);
    let yd = d.forward(&x, Mode::Train).unwrap();
    let yc = c.forward(&x, Mode::Train).unwrap();
    assert!(yd.max_abs_diff(&yc) < 1e-12);
    let g = input(26, yd.shape());
    let gd = d.backward(&g).unwrap();
    let gc = c.backward(&g).unwrap();
    assert!(gd.max_abs_diff(&gc) < 1e-12);
    assert!(d.weight.grad.max_abs_diff(&c.weight.grad) < 1e-12);
    assert!(d.bias.grad.max_abs_diff(&c.bias.grad) < 1e-12);
}

/// Rows of a Sylvester Hadamard matrix: centered, with (1/N) XᵀX = I.
fn hadamard(n: usize) -> Matrix {
    let mut h = Matrix::from_rows(&[[1.0]]);
    while h.rows() < n {
        let m = h.rows();
        h = Matrix::from_fn(2 * m, 2 * m, |i, j| {
            let s = if i >= m && j >= m { -1.0 } else { 1.0 };
            s * h.get(i % m, j % m)
        });
    }
    h
}

#[test]
fn exactly_white_input_matches_plain_layer_on_centered_data() {
    // columns 1..8 of a 64-point Hadamard basis: zero mean, identity covariance
    let h = hadamard(64);
    let x = Matrix::from_fn(64, 7, |i, j| h.get(i, j + 1) + 0.25 * (j as f64));
    let cfg = WhiteningConfig {
        eps: 0.0,
        ns_iters: 40,
        sample_stride: 1,
        ..WhiteningConfig::default()
    };
    let mut rng = SeededRng::new(27);
    let mut d = Deconv::linear(7, 3, cfg, &mut rng).unwrap();
    let xt = Tensor::from_matrix(x.clone());
    let y = d.forward(&xt, Mode::Train).unwrap();

    let centered = Tensor::from_matrix(Matrix::from_fn(64, 7, |i, j| h.get(i, j + 1)));
    let mut plain = Linear::from_parts(d.weight.value.clone(), d.bias.value.clone()).unwrap();
    let want = plain.forward(&centered, Mode::Eval).unwrap();
    assert!(y.max_abs_diff(&want) < 1e-10, "{}", y.max_abs_diff(&want));
}

#[test]
fn unit_kernel_single_channel_groups_match_batchnorm() {
    let c = 4;
    let mut rng = SeededRng::new(28);
    let gamma = rng.uniform_tensor(&[c], 0.5, 2.0);
    let beta = rng.gaussian_tensor(&[c]);
    let mut x = input(29, &[8, c, 5, 5]);
    // give channels different scales and offsets
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        let ch = (i / 25) % c;
        *v = *v * (ch as f64 + 0.5) + ch as f64;
    }

    let mut bn = BatchNorm::new(c);
    bn.gamma.value = gamma.clone();
    bn.beta.value = beta.clone();
    let yb = bn.forward(&x, Mode::Train).unwrap();

    let cfg = WhiteningConfig {
        eps: bn.eps,
        block_size: 1,
        sample_stride: 1,
        ..WhiteningConfig::default()
    };
    let mut d = Deconv::conv(c, c, PatchSpec::same(1), cfg, &mut rng).unwrap();
    let mut w = Tensor::zeros(&[c, c]);
    for i in 0..c {
        w.data_mut()[i * c + i] = gamma.data()[i];
    }
    d.weight.value = w;
    d.bias.value = beta;
    let yd = d.forward(&x, Mode::Train).unwrap();
    assert!(yd.max_abs_diff(&yb) < 1e-6, "{}", yd.max_abs_diff(&yb));
}

#[test]
fn whitened_cache_covariance_is_near_identity() {
    let cfg = WhiteningConfig {
        ns_iters: 15,
        sample_stride: 1,
        ..WhiteningConfig::default()
    };
    let mut rng = SeededRng::new(30);
    let mut d = Deconv::conv(2, 3, PatchSpec::same(3), cfg, &mut rng).unwrap();
    // spatially correlated input: box-blurred noise
    let noise = input(31, &[16, 2, 10, 10]);
    let mut x = noise.clone();
    for p in 0..32 {
        for i in 0..10 {
            for j in 0..10 {
                let at = |a: usize, b: usize| noise.data()[p * 100 + a.min(9) * 10 + b.min(9)];
                x.data_mut()[p * 100 + i * 10 + j] = at(i, j) + at(i + 1, j) + at(i, j + 1);
            }
        }
    }
    d.forward(&x, Mode::Train).unwrap();
    for cov in d.whitened_sample_covariances().unwrap() {
        let f = cov.rows();
        let mut off = 0.0;
        for i in 0..f {
            assert!(
                (0.9..=1.1).contains(&cov.get(i, i)),
                "diag {}",
                cov.get(i, i)
            );
            for j in 0..f {
                if i != j {
                    off += cov.get(i, j).abs();
                }
            }
        }
        assert!(off / ((f * (f - 1)) as f64) < 1e-2);
    }
}

#[test]
fn folded_layer_matches_explicit_path() {
    let d = frozen_deconv(3, 5, 3, 2, 32);
    let mut plain = d.to_plain().unwrap();
    for s in 0..100 {
        let x = input(1000 + s, &[1, 3, 6, 6]);
        let folded = plain.forward(&x, Mode::Eval).unwrap();
        let explicit = d.forward_explicit(&x).unwrap();
        assert!(folded.max_abs_diff(&explicit) < 1e-10);
    }
}

#[test]
fn folding_requires_fixed_statistics() {
    let mut rng = SeededRng::new(33);
    let mut d = Deconv::conv(
        3,
        4,
        PatchSpec::same(3),
        WhiteningConfig::default(),
        &mut rng,
    )
    .unwrap();
    d.forward(&input(34, &[2, 3, 6, 6]), Mode::Train).unwrap();
    assert!(matches!(
        d.fold_implicit(),
        Err(netdeconv::Error::Contract(_))
    ));
    d.set_mode(Mode::Eval);
    assert!(d.fold_implicit().is_ok());
}

#[test]
fn eval_forward_is_bit_identical() {
    let mut d = frozen_deconv(3, 4, 3, 64, 35);
    let x = input(36, &[2, 3, 6, 6]);
    let a = d.forward(&x, Mode::Eval).unwrap();
    let b = d.forward(&x, Mode::Eval).unwrap();
    assert_eq!(a.data(), b.data());

    let mut bn = BatchNorm::new(3);
    bn.forward(&x, Mode::Train).unwrap();
    let a = bn.forward(&x, Mode::Eval).unwrap();
    let b = bn.forward(&x, Mode::Eval).unwrap();
    assert_eq!(a.data(), b.data());
}

fn invert_spd(a: &Matrix) -> Matrix {
    sym_eig(a).unwrap().map_values(|l| 1.0 / l)
}

#[test]
fn whitened_step_equals_corrected_raw_step() {
    let (n, f, k) = (200, 12, 3);
    let mut rng = SeededRng::new(37);
    let mix = rng.gaussian_matrix(f, f);
    let raw = rng.gaussian_matrix(n, f);
    let x = netdeconv::linalg::matmul(&raw, &mix).unwrap();
    let target = rng.gaussian_matrix(n, k);
    let cov = netdeconv::linalg::matmul_tn(&x, &x)
        .unwrap()
        .scaled(1.0 / n as f64);
    let dmat = inverse_sqrt_oracle(&cov, 0.0).unwrap();

    let cfg = WhiteningConfig {
        centered: false,
        ..WhiteningConfig::default()
    };
    let mut layer = Deconv::linear(f, k, cfg, &mut rng).unwrap();
    layer
        .set_statistics(vec![vec![0.0; f]], vec![dmat])
        .unwrap();
    let (w1, _) = layer.fold_implicit().unwrap();

    let xt = Tensor::from_matrix(x.clone());
    let y = layer.forward(&xt, Mode::Train).unwrap();
    let (_, g) = l2_loss(&y, &Tensor::from_matrix(target)).unwrap();
    layer.backward(&g).unwrap();
    let alpha = 0.3;
    let step: Vec<f64> = layer.weight.grad.data().iter().map(|v| alpha * v).collect();
    for (w, s) in layer.weight.value.data_mut().iter_mut().zip(step) {
        *w -= s;
    }
    let (w1_new, _) = layer.fold_implicit().unwrap();

    // W₁ ← W₁ - α (Cov⁻¹ Xᵀ G)ᵀ with weights stored [K, F]
    let g = g.into_matrix().unwrap();
    let xtg = netdeconv::linalg::matmul_tn(&x, &g).unwrap();
    let corr = netdeconv::linalg::matmul(&invert_spd(&cov), &xtg).unwrap();
    let want = w1.sub(&corr.transpose().scaled(alpha)).unwrap();
    let rel = w1_new.sub(&want).unwrap().frobenius_norm() / want.frobenius_norm();
    assert!(rel < 1e-8, "{rel}");
}

#[test]
fn network_gradients_through_stack() {
    let plan = DeconvPlan::default().map(|c| {
        c.freeze_after = Some(1);
        c.sample_stride = 1;
    });
    let mut rng = SeededRng::new(38);
    let mut net = vgg_like(
        2,
        &[VggItem::Conv(3), VggItem::Pool],
        3,
        &Norm::Deconv(plan),
        &mut rng,
    )
    .unwrap();
    net.forward(&input(39, &[8, 2, 4, 4]), Mode::Train).unwrap();
    let x = input(40, &[2, 2, 4, 4]);
    let y = net.forward(&x, Mode::Eval).unwrap();
    let r = SeededRng::new(41).gaussian_tensor(y.shape());
    let gx = net.backward(&r).unwrap();
    let h = DEFAULT_STEP;
    let mut numeric = vec![0.0; x.len()];
    let mut xp = x.clone();
    for i in 0..x.len() {
        let v = xp.data()[i];
        xp.data_mut()[i] = v + h;
        let up = net.forward(&xp, Mode::Eval).unwrap().dot(&r);
        xp.data_mut()[i] = v - h;
        let down = net.forward(&xp, Mode::Eval).unwrap().dot(&r);
        xp.data_mut()[i] = v;
        numeric[i] = (up - down) / (2.0 * h);
    }
    let err = netdeconv::layers::gradcheck::relative_error(&numeric, gx.data());
    assert!(err < TOL, "{err}");
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SeededRng::new(42);
    for norm in [
        Norm::Plain,
        Norm::BatchNorm,
        Norm::Deconv(DeconvPlan::default()),
    ] {
        let mut net = mlp(6, &[5, 4], 3, &norm, &mut rng).unwrap();
        net.forward(&input(43, &[16, 6]), Mode::Train).unwrap();
        let stem = dir.path().join(norm.label());
        net.save(&stem).unwrap();
        let mut back = Network::load(&stem).unwrap();
        assert_eq!(back.specs(), net.specs());
        let x = input(44, &[3, 6]);
        let a = net.forward(&x, Mode::Eval).unwrap();
        let b = back.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn layer_errors_carry_the_layer_index() {
    let mut rng = SeededRng::new(45);
    let mut net = mlp(6, &[5], 3, &Norm::Plain, &mut rng).unwrap();
    let err = net.forward(&input(46, &[2, 7]), Mode::Eval).unwrap_err();
    assert!(
        matches!(err, netdeconv::Error::Layer { layer: 0, .. }),
        "{err}"
    );
}

#[test]
fn model_builders_wire_expected_layers() {
    let mut rng = SeededRng::new(47);
    let net = mlp(
        784,
        &[128, 128, 128],
        10,
        &Norm::Deconv(DeconvPlan::default()),
        &mut rng,
    )
    .unwrap();
    let deconvs = net.deconv_layers();
    assert_eq!(deconvs.len(), 4);
    let widths: Vec<usize> = deconvs[0].groups().iter().map(|g| g.width()).collect();
    assert_eq!(widths, vec![512, 272]);
    assert_eq!(deconvs[0].config.ns_iters, 15);
    assert_eq!(deconvs[1].config.ns_iters, 5);

    let bn = mlp(784, &[128, 128, 128], 10, &Norm::BatchNorm, &mut rng).unwrap();
    assert_eq!(bn.len(), 3 * 3 + 1);

    let items = [VggItem::Conv(8), VggItem::Pool, VggItem::Conv(16)];
    let cnn = vgg_like(
        3,
        &items,
        10,
        &Norm::Deconv(DeconvPlan::default()),
        &mut rng,
    )
    .unwrap();
    assert_eq!(cnn.deconv_layers().len(), 3);
    let plain = vgg_like(3, &items, 10, &Norm::BatchNorm, &mut rng).unwrap();
    assert!(plain.deconv_layers().is_empty());
}

#[test]
fn im2col_first_column_block_is_the_shifted_image() {
    // sanity link between the layer's patch view and the raw image
    let x = input(48, &[1, 1, 4, 4]);
    let pm = im2col(&x, &PatchSpec::same(3)).unwrap();
    // center tap of each row is the pixel itself
    for r in 0..16 {
        assert_eq!(pm.matrix.get(r, 4), x.data()[r]);
    }
}
