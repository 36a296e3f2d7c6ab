use htmd::diff::{
    grad_check, BatchNormSpec, Conv1dSpec, Graph, LstmVars, NormMode, Padding, RunningStats,
    Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn t64(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn assert_grad_ok(name: &str, op: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var, htmd::diff::DiffError> + Copy, shapes: &[Vec<usize>], tol: f64) {
    for seed in SEEDS {
        let report = grad_check(name, op, shapes, seed).unwrap();
        assert!(
            report.max_rel_error <= tol,
            "{name} seed {seed}: max rel error {}",
            report.max_rel_error
        );
        assert!(report.checked > 0);
    }
}

#[test]
fn conv1d_delta_kernel_is_identity() {
    let mut g = Graph::new();
    let x = g.input(t64(&[1, 1, 5], &[1., 2., 3., 4., 5.]));
    let w = g.input(t64(&[1, 1, 3], &[0., 1., 0.]));
    let spec = Conv1dSpec {
        padding: Padding::Same,
        ..Default::default()
    };
    let y = g.conv1d(x, w, None, spec).unwrap();
    assert_eq!(g.value(y).data(), &[1., 2., 3., 4., 5.]);
}

#[test]
fn conv1d_dilated_matches_direct_sum() {
    let mut g = Graph::new();
    let x = g.input(t64(&[1, 1, 5], &[1., 2., 3., 4., 5.]));
    let w = g.input(t64(&[1, 1, 3], &[1., 0., 1.]));
    let spec = Conv1dSpec {
        dilation: 2,
        ..Default::default()
    };
    let y = g.conv1d(x, w, None, spec).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 1]);
    assert_eq!(g.value(y).data(), &[6.0]);
}

/// Direct-summation oracle for grouped / strided / dilated / padded conv.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, dil: usize, groups: usize, pad_left: usize, t_out: usize) -> Vec<f64> {
    let (b_n, c_in, t_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, cin_g, k_n) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let cout_g = c_out / groups;
    let mut y = vec![0.0; b_n * c_out * t_out];
    for b in 0..b_n {
        for o in 0..c_out {
            let grp = o / cout_g;
            for t in 0..t_out {
                let mut acc = 0.0;
                for ci in 0..cin_g {
                    for k in 0..k_n {
                        let idx = (t * stride + k * dil) as isize - pad_left as isize;
                        if idx >= 0 && (idx as usize) < t_in {
                            let c = grp * cin_g + ci;
                            acc += w.data()[(o * cin_g + ci) * k_n + k] * x.data()[(b * c_in + c) * t_in + idx as usize];
                        }
                    }
                }
                y[(b * c_out + o) * t_out + t] = acc;
            }
        }
    }
    y
}

#[test]
fn conv1d_matches_direct_summation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &(c_in, c_out, k, stride, dil, groups, same) in &[
        (2, 3, 4, 1, 1, 1, false),
        (4, 4, 3, 1, 2, 4, true),
        (4, 6, 3, 2, 1, 2, false),
        (3, 5, 5, 1, 3, 1, true),
        (1, 4, 16, 8, 1, 1, false),
    ] {
        let x = random(&[2, c_in, 37], &mut rng);
        let w = random(&[c_out, c_in / groups, k], &mut rng);
        let spec = Conv1dSpec {
            stride,
            dilation: dil,
            groups,
            padding: if same { Padding::Same } else { Padding::Valid },
        };
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let wv = g.input(w.clone());
        let y = g.conv1d(xv, wv, None, spec).unwrap();
        let t_out = g.shape(y)[2];
        let pad_left = if same { dil * (k - 1) / 2 } else { 0 };
        let expect = conv_oracle(&x, &w, stride, dil, groups, pad_left, t_out);
        for (a, e) in g.value(y).data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}

#[test]
fn depthwise_conv_has_no_cross_channel_leakage() {
    let mut g = Graph::new();
    // Channel 1 is zero; depthwise output on channel 1 must stay zero.
    let x = g.input(t64(&[1, 2, 4], &[1., 2., 3., 4., 0., 0., 0., 0.]));
    let w = g.input(t64(&[2, 1, 3], &[1., 1., 1., 5., 5., 5.]));
    let spec = Conv1dSpec {
        groups: 2,
        padding: Padding::Same,
        ..Default::default()
    };
    let y = g.conv1d(x, w, None, spec).unwrap();
    assert_eq!(g.value(y).data(), &[3., 6., 9., 7., 0., 0., 0., 0.]);
}

#[test]
fn conv1d_rejects_bad_arguments() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(&[1, 3, 8]));
    let w = g.input(Tensor::zeros(&[2, 2, 3]));
    assert!(g.conv1d(x, w, None, Conv1dSpec::default()).is_err());
    let w2 = g.input(Tensor::zeros(&[2, 3, 3]));
    let zero_stride = Conv1dSpec {
        stride: 0,
        ..Default::default()
    };
    assert!(g.conv1d(x, w2, None, zero_stride).is_err());
    let w_long = g.input(Tensor::zeros(&[2, 3, 9]));
    assert!(g.conv1d(x, w_long, None, Conv1dSpec::default()).is_err());
}

#[test]
fn conv_transpose_shapes_and_identity() {
    let mut g = Graph::new();
    let x = g.input(t64(&[1, 1, 3], &[1., -2., 3.]));
    let w = g.input(t64(&[1, 1, 1], &[1.]));
    let y = g.conv_transpose1d(x, w, None, 1).unwrap();
    assert_eq!(g.value(y).data(), &[1., -2., 3.]);

    let x = g.input(Tensor::zeros(&[1, 4, 2047]));
    let w = g.input(Tensor::zeros(&[4, 1, 16]));
    let y = g.conv_transpose1d(x, w, None, 8).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 16384]);
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for &(c_in, c_out, k, stride, t_b) in &[(3, 2, 4, 2, 9), (1, 5, 16, 8, 12), (2, 2, 3, 1, 10)] {
        let t_a = (t_b - 1) * stride + k;
        let a = random(&[2, c_in, t_a], &mut rng);
        let b = random(&[2, c_out, t_b], &mut rng);
        let w = random(&[c_out, c_in, k], &mut rng);
        let mut g = Graph::new();
        let av = g.input(a.clone());
        let bv = g.input(b.clone());
        let wv = g.input(w);
        let spec = Conv1dSpec {
            stride,
            ..Default::default()
        };
        let ca = g.conv1d(av, wv, None, spec).unwrap();
        assert_eq!(g.shape(ca), b.shape());
        let tb = g.conv_transpose1d(bv, wv, None, stride).unwrap();
        assert_eq!(g.shape(tb), a.shape());
        let lhs: f64 = g.value(ca).data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.data().iter().zip(g.value(tb).data()).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}

#[test]
fn batch_norm_examples() {
    let mut g = Graph::new();
    let x = g.input(t64(&[1, 1, 4], &[0.5, -1., 2., 3.]));
    let gamma = g.input(t64(&[1], &[1.]));
    let beta = g.input(t64(&[1], &[0.]));
    let mut stats = RunningStats {
        name: "bn".into(),
        mean: vec![0.0],
        var: vec![1.0],
    };
    let y = g.batch_norm(x, gamma, beta, &mut stats, BatchNormSpec::new(NormMode::Eval)).unwrap();
    for (a, b) in g.value(y).data().iter().zip(&[0.5, -1., 2., 3.]) {
        assert!((a - b / (1.0f64 + 1e-5).sqrt()).abs() < 1e-12);
    }

    let c = g.input(Tensor::full(&[2, 1, 5], 3.0));
    let y = g.batch_norm(c, gamma, beta, &mut stats, BatchNormSpec::new(NormMode::Train)).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = g.input(random(&[3, 2, 50], &mut rng).map(|v| 4.0 * v + 1.5));
    let gamma2 = g.input(t64(&[2], &[1., 1.]));
    let beta2 = g.input(t64(&[2], &[0., 0.]));
    let mut stats2 = RunningStats {
        name: "bn2".into(),
        mean: vec![0.0; 2],
        var: vec![1.0; 2],
    };
    let spec = BatchNormSpec {
        mode: NormMode::Train,
        momentum: 0.1,
        eps: 0.0,
    };
    let y = g.batch_norm(x, gamma2, beta2, &mut stats2, spec).unwrap();
    let yd = g.value(y).data();
    for c in 0..2 {
        let vals: Vec<f64> = (0..3).flat_map(|b| yd[(b * 2 + c) * 50..(b * 2 + c + 1) * 50].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);
    }
    assert!(stats2.mean.iter().all(|m| *m != 0.0));
}

#[test]
fn activation_examples() {
    let mut g = Graph::new();
    let x = g.input(t64(&[3], &[-1., 0., 2.]));
    let lr = g.leaky_relu(x, 0.3);
    assert_eq!(g.value(lr).data(), &[-0.3, 0., 2.]);
    let z = g.input(t64(&[1], &[0.]));
    let s = g.sigmoid(z);
    let t = g.tanh(z);
    assert_eq!(g.value(s).data(), &[0.5]);
    assert_eq!(g.value(t).data(), &[0.0]);
}

#[test]
fn sampling_examples() {
    let mut g = Graph::new();
    let x = g.input(t64(&[1, 1, 4], &[1., 2., 3., 4.]));
    let d = g.decimate(x).unwrap();
    assert_eq!(g.value(d).data(), &[1., 3.]);
    let u_in = g.input(t64(&[1, 1, 2], &[0., 2.]));
    let u = g.upsample_linear(u_in).unwrap();
    assert_eq!(g.value(u).data(), &[0., 1., 2., 2.]);
    let c = g.input(Tensor::full(&[1, 2, 8], 0.7));
    let cd = g.decimate(c).unwrap();
    let cu = g.upsample_linear(cd).unwrap();
    assert_eq!(g.value(cu), g.value(c));
    let short = g.input(Tensor::zeros(&[1, 1, 1]));
    assert!(g.decimate(short).is_err());
    let empty = g.input(Tensor::zeros(&[1, 1, 0]));
    assert!(g.upsample_linear(empty).is_err());
}

#[test]
fn structural_examples() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::zeros(&[1, 2, 4]));
    let b = g.input(Tensor::zeros(&[1, 3, 4]));
    let c = g.concat(&[a, b], 1).unwrap();
    assert_eq!(g.shape(c), &[1, 5, 4]);
    let bad = g.input(Tensor::zeros(&[1, 3, 5]));
    assert!(g.concat(&[a, bad], 1).is_err());

    let x = g.input(t64(&[2, 2], &[1., 2., 3., 4.]));
    let ones = g.input(Tensor::full(&[2, 2], 1.0));
    let m = g.mul(x, ones).unwrap();
    assert_eq!(g.value(m).data(), g.value(x).data());
    let w = g.input(t64(&[2, 2], &[1., 0., 0., 1.]));
    let zb = g.input(Tensor::zeros(&[2]));
    let d = g.dense(x, w, Some(zb)).unwrap();
    assert_eq!(g.value(d).data(), g.value(x).data());
}

#[test]
fn lstm_zero_weights_give_zero_output() {
    let mut g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = g.input(random(&[2, 5, 3], &mut rng));
    let h = 4;
    let vars = LstmVars {
        w_ih: g.input(Tensor::zeros(&[4 * h, 3])),
        w_hh: g.input(Tensor::zeros(&[4 * h, h])),
        bias: g.input(Tensor::zeros(&[4 * h])),
    };
    let y = g.bilstm(x, vars, vars).unwrap();
    assert_eq!(g.shape(y), &[2, 5, 8]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn lstm_single_step_directions_agree_when_tied() {
    let mut g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = g.input(random(&[1, 1, 3], &mut rng));
    let vars = LstmVars {
        w_ih: g.input(random(&[8, 3], &mut rng)),
        w_hh: g.input(random(&[8, 2], &mut rng)),
        bias: g.input(random(&[8], &mut rng)),
    };
    let y = g.bilstm(x, vars, vars).unwrap();
    let d = g.value(y).data();
    assert_eq!(&d[..2], &d[2..]);
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar-loop LSTM, used as an unrolled-recurrence oracle.
fn lstm_oracle(x: &[Vec<f64>], w_ih: &Tensor<f64>, w_hh: &Tensor<f64>, b: &Tensor<f64>, h_n: usize, reverse: bool) -> Vec<Vec<f64>> {
    let f_n = x[0].len();
    let mut h = vec![0.0; h_n];
    let mut c = vec![0.0; h_n];
    let mut out = vec![vec![0.0; h_n]; x.len()];
    let order: Vec<usize> = if reverse { (0..x.len()).rev().collect() } else { (0..x.len()).collect() };
    for t in order {
        let mut z = vec![0.0; 4 * h_n];
        for (r, zr) in z.iter_mut().enumerate() {
            *zr = b.data()[r];
            for f in 0..f_n {
                *zr += w_ih.data()[r * f_n + f] * x[t][f];
            }
            for j in 0..h_n {
                *zr += w_hh.data()[r * h_n + j] * h[j];
            }
        }
        for j in 0..h_n {
            let i = sig(z[j]);
            let f = sig(z[h_n + j]);
            let gc = z[2 * h_n + j].tanh();
            let o = sig(z[3 * h_n + j]);
            c[j] = f * c[j] + i * gc;
            h[j] = o * c[j].tanh();
        }
        out[t] = h.clone();
    }
    out
}

#[test]
fn bilstm_matches_unrolled_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (f_n, h_n) = (3, 2);
    let xs = random(&[1, 2, f_n], &mut rng);
    let mk = |rng: &mut ChaCha8Rng| (random(&[4 * h_n, f_n], rng), random(&[4 * h_n, h_n], rng), random(&[4 * h_n], rng));
    let (fi, fh, fb) = mk(&mut rng);
    let (bi, bh, bb) = mk(&mut rng);
    let mut g = Graph::new();
    let x = g.input(xs.clone());
    let fwd = LstmVars {
        w_ih: g.input(fi.clone()),
        w_hh: g.input(fh.clone()),
        bias: g.input(fb.clone()),
    };
    let bwd = LstmVars {
        w_ih: g.input(bi.clone()),
        w_hh: g.input(bh.clone()),
        bias: g.input(bb.clone()),
    };
    let y = g.bilstm(x, fwd, bwd).unwrap();
    let seq: Vec<Vec<f64>> = xs.data().chunks(f_n).map(|r| r.to_vec()).collect();
    let of = lstm_oracle(&seq, &fi, &fh, &fb, h_n, false);
    let ob = lstm_oracle(&seq, &bi, &bh, &bb, h_n, true);
    let yd = g.value(y).data();
    for t in 0..2 {
        for j in 0..h_n {
            assert!((yd[t * 2 * h_n + j] - of[t][j]).abs() < 1e-10);
            assert!((yd[t * 2 * h_n + h_n + j] - ob[t][j]).abs() < 1e-10);
        }
    }
}

#[test]
fn losses() {
    let mut g = Graph::new();
    let y = g.input(t64(&[2], &[0., 0.]));
    let p = g.input(t64(&[2], &[1., 1.]));
    let mse = g.mse(y, p).unwrap();
    let mae = g.mae(y, p).unwrap();
    assert_eq!(g.value(mse).data(), &[1.0]);
    assert_eq!(g.value(mae).data(), &[1.0]);
    let a = g.input(t64(&[1], &[0.]));
    let b = g.input(t64(&[1], &[2.]));
    let mse = g.mse(a, b).unwrap();
    let mae = g.mae(a, b).unwrap();
    assert_eq!(g.value(mse).data(), &[4.0]);
    assert_eq!(g.value(mae).data(), &[2.0]);
    let same = g.mse(b, b).unwrap();
    assert_eq!(g.value(same).data(), &[0.0]);
}

#[test]
fn sigmoid_and_tanh_ranges() {
    let mut g = Graph::new();
    let x = g.input(t64(&[6], &[-800., -30., -1e-3, 1e-3, 30., 800.]));
    let s = g.sigmoid(x);
    let t = g.tanh(x);
    assert!(g.value(s).data().iter().all(|v| (0.0..=1.0).contains(v) && v.is_finite()));
    assert!(g.value(t).data().iter().all(|v| (-1.0..=1.0).contains(v)));
}

// ------------------------------------------------------------ grad checks

/// A linear map has no truncation error under central differences; what is
/// left is f64 roundoff of the objective divided by the 1e-5 step (about
/// 2e-11 absolute), so entries with gradients near 1e-2 sit around 1e-9.
#[test]
fn grad_check_dense_is_exact_up_to_roundoff() {
    for seed in SEEDS {
        let r = grad_check("dense", |g, v| g.dense(v[0], v[1], Some(v[2])), &[vec![3, 4], vec![5, 4], vec![5]], seed).unwrap();
        assert!(r.max_rel_error <= 1e-8, "{}", r.max_rel_error);
    }
}

#[test]
fn grad_check_conv_family() {
    let same = Conv1dSpec {
        padding: Padding::Same,
        ..Default::default()
    };
    assert_grad_ok("conv1d", move |g, v| g.conv1d(v[0], v[1], Some(v[2]), same), &[vec![2, 3, 11], vec![4, 3, 3], vec![4]], 1e-4);
    let strided = Conv1dSpec {
        stride: 2,
        dilation: 2,
        ..Default::default()
    };
    assert_grad_ok("conv1d_strided", move |g, v| g.conv1d(v[0], v[1], None, strided), &[vec![2, 2, 13], vec![3, 2, 3]], 1e-4);
    let depthwise = Conv1dSpec {
        groups: 4,
        dilation: 2,
        padding: Padding::Same,
        ..Default::default()
    };
    assert_grad_ok("conv1d_depthwise", move |g, v| g.conv1d(v[0], v[1], Some(v[2]), depthwise), &[vec![2, 4, 9], vec![4, 1, 3], vec![4]], 1e-4);
    assert_grad_ok("conv1d_pointwise", |g, v| g.conv1d(v[0], v[1], Some(v[2]), Conv1dSpec::default()), &[vec![2, 3, 7], vec![5, 3, 1], vec![5]], 1e-4);
    assert_grad_ok("conv_transpose1d", |g, v| g.conv_transpose1d(v[0], v[1], Some(v[2]), 3), &[vec![2, 3, 5], vec![3, 2, 6], vec![2]], 1e-4);
}

#[test]
fn grad_check_batch_norm() {
    for mode in [NormMode::Train, NormMode::Eval] {
        assert_grad_ok(
            "batch_norm",
            move |g, v| {
                let mut stats = RunningStats {
                    name: "bn".into(),
                    mean: vec![0.1, -0.2, 0.3],
                    var: vec![1.5, 0.7, 2.0],
                };
                g.batch_norm(v[0], v[1], v[2], &mut stats, BatchNormSpec::new(mode))
            },
            &[vec![2, 3, 6], vec![3], vec![3]],
            1e-4,
        );
    }
}

#[test]
fn grad_check_elementwise() {
    assert_grad_ok("leaky_relu", |g, v| Ok(g.leaky_relu(v[0], 0.3)), &[vec![2, 3, 5]], 1e-4);
    assert_grad_ok("sigmoid", |g, v| Ok(g.sigmoid(v[0])), &[vec![2, 3, 5]], 1e-4);
    assert_grad_ok("tanh", |g, v| Ok(g.tanh(v[0])), &[vec![2, 3, 5]], 1e-4);
    assert_grad_ok("mul", |g, v| g.mul(v[0], v[1]), &[vec![3, 4], vec![3, 4]], 1e-4);
    assert_grad_ok("add", |g, v| g.add(v[0], v[1]), &[vec![3, 4], vec![3, 4]], 1e-4);
    assert_grad_ok("sub", |g, v| g.sub(v[0], v[1]), &[vec![3, 4], vec![3, 4]], 1e-4);
    assert_grad_ok("scale", |g, v| Ok(g.scale(v[0], -2.5)), &[vec![3, 4]], 1e-4);
    assert_grad_ok("mse", |g, v| g.mse(v[0], v[1]), &[vec![2, 1, 6], vec![2, 1, 6]], 1e-4);
    assert_grad_ok("mae", |g, v| g.mae(v[0], v[1]), &[vec![2, 1, 6], vec![2, 1, 6]], 1e-4);
}

#[test]
fn grad_check_structural() {
    assert_grad_ok("decimate", |g, v| g.decimate(v[0]), &[vec![2, 3, 8]], 1e-4);
    assert_grad_ok("upsample_linear", |g, v| g.upsample_linear(v[0]), &[vec![2, 3, 5]], 1e-4);
    assert_grad_ok("concat", |g, v| g.concat(&[v[0], v[1]], 1), &[vec![2, 2, 4], vec![2, 3, 4]], 1e-4);
    assert_grad_ok("concat_last", |g, v| g.concat(&[v[0], v[1]], 2), &[vec![2, 2, 4], vec![2, 2, 3]], 1e-4);
    assert_grad_ok("transpose12", |g, v| g.transpose12(v[0]), &[vec![2, 3, 4]], 1e-4);
}

#[test]
fn grad_check_bilstm() {
    assert_grad_ok(
        "bilstm",
        |g, v| {
            let fwd = LstmVars {
                w_ih: v[1],
                w_hh: v[2],
                bias: v[3],
            };
            let bwd = LstmVars {
                w_ih: v[4],
                w_hh: v[5],
                bias: v[6],
            };
            g.bilstm(v[0], fwd, bwd)
        },
        &[vec![2, 5, 3], vec![12, 3], vec![12, 3], vec![12], vec![12, 3], vec![12, 3], vec![12]],
        1e-4,
    );
}

#[test]
fn backward_requires_scalar_output() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::zeros(&[3]));
    let y = g.tanh(x);
    assert!(g.backward(y).is_err());
}

#[test]
fn shared_parameter_gradients_accumulate() {
    // y = sum((w * x) + (w * x)) => dy/dw = 2x
    let mut g = Graph::new();
    let x = g.input(t64(&[2], &[1.5, -2.0]));
    let w = g.leaf(t64(&[2], &[0.3, 0.4]));
    let a = g.mul(w, x).unwrap();
    let b = g.mul(w, x).unwrap();
    let s = g.add(a, b).unwrap();
    let zero = g.input(Tensor::zeros(&[2]));
    // mean(|s - 0|) with positive/negative entries
    let l = g.mae(s, zero).unwrap();
    g.backward(l).unwrap();
    let gw = g.grad(w).unwrap().data();
    assert!((gw[0] - 0.5 * 2.0 * 1.5).abs() < 1e-12);
    assert!((gw[1] - 0.5 * 2.0 * 2.0 * -1.0 * -1.0).abs() < 1e-12);
}
