use htmd::denoiser::{skip_shapes, Bottleneck, Denoiser, DenoiserConfig};
use htmd::diff::{check_gradients_with, FiniteDiff, Graph, NormMode, ParamStore, Probe, Stencil, Tensor};
use htmd::masker::{receptive_field, Masker, MaskerConfig};
use htmd::model::{param_count, Model, ModelConfig, ModelError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small_masker() -> MaskerConfig {
    MaskerConfig {
        n_filters: 8,
        bottleneck: 4,
        conv_channels: 6,
        skip_channels: 5,
        blocks_per_repeat: 2,
        ..MaskerConfig::htmd()
    }
}

fn small_denoiser() -> DenoiserConfig {
    DenoiserConfig {
        depth: 3,
        growth: 3,
        bottleneck: Bottleneck::Recurrent { layers: 2, hidden: 4 },
        ..DenoiserConfig::htmd()
    }
}

fn random(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn encoder_frame_counts() {
    let cfg = MaskerConfig::htmd();
    assert_eq!(cfg.frames(16384), Some(2047));
    assert_eq!(cfg.frames(16), Some(1));
    assert_eq!(cfg.frames(15), None);

    let mut store = ParamStore::<f64>::new();
    let m = Masker::new(small_masker(), "m", &mut store, &mut rng(0)).unwrap();
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[1, 1, 16]));
    let lat = m.encode(&mut g, &store, x).unwrap();
    assert_eq!(g.shape(lat.tensor), &[1, 8, 1]);
    assert!(g.value(lat.tensor).data().iter().all(|&v| v == 0.0));

    let short = g.input(Tensor::zeros(&[1, 1, 10]));
    assert!(matches!(m.encode(&mut g, &store, short), Err(ModelError::Shape(_))));
}

#[test]
fn receptive_field_examples() {
    assert_eq!(receptive_field(&MaskerConfig::htmd()), 16384);
    assert_eq!(receptive_field(&MaskerConfig::conv_tasnet()), 24544);
    let single = MaskerConfig {
        blocks_per_repeat: 1,
        repeats: 1,
        ..MaskerConfig::htmd()
    };
    assert_eq!(receptive_field(&single), 32);
}

#[test]
fn masker_config_validation() {
    let bad = MaskerConfig {
        stride: 5,
        ..MaskerConfig::htmd()
    };
    assert!(bad.validate().is_err());
    let zero = MaskerConfig {
        repeats: 0,
        ..MaskerConfig::htmd()
    };
    assert!(zero.validate().is_err());
}

#[test]
fn mask_is_open_interval_and_masked_latent_shrinks() {
    let mut r = rng(3);
    let mut store = ParamStore::<f64>::new();
    let m = Masker::new(small_masker(), "m", &mut store, &mut r).unwrap();
    let mut g = Graph::new();
    let x = g.input(random(&[2, 1, 128], &mut r));
    let tr = m.mask_and_decode(&mut g, &mut store, x, NormMode::Train).unwrap();
    assert!(g.value(tr.mask).data().iter().all(|&v| v > 0.0 && v < 1.0));
    let lat = g.value(tr.latent.tensor).data();
    let masked = g.value(tr.masked.tensor).data();
    assert!(lat.iter().zip(masked).all(|(a, b)| b.abs() <= a.abs()));
    assert_eq!(g.shape(tr.estimate), &[2, 1, 128]);
    assert!(g.value(tr.estimate).all_finite());
}

#[test]
fn zero_skip_weights_give_constant_mask() {
    let mut r = rng(4);
    let mut store = ParamStore::<f64>::new();
    let m = Masker::new(small_masker(), "m", &mut store, &mut r).unwrap();
    let w = m.mask_output_weight();
    store.get_mut(w).value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    let b = m.mask_output_bias().unwrap();
    let bias: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
    store.get_mut(b).value.data_mut().copy_from_slice(&bias);
    let mut g = Graph::new();
    let x = g.input(random(&[1, 1, 64], &mut r));
    let tr = m.mask_and_decode(&mut g, &mut store, x, NormMode::Train).unwrap();
    let mask = g.value(tr.mask);
    let frames = mask.shape()[2];
    for c in 0..8 {
        let expect = 1.0 / (1.0 + (-bias[c]).exp());
        for t in 0..frames {
            assert!((mask.data()[c * frames + t] - expect).abs() < 1e-15);
        }
    }
}

#[test]
fn apply_mask_examples() {
    let mut store = ParamStore::<f64>::new();
    let m = Masker::new(small_masker(), "m", &mut store, &mut rng(5)).unwrap();
    let mut g = Graph::new();
    let x = g.input(random(&[1, 1, 40], &mut rng(6)));
    let lat = m.encode(&mut g, &store, x).unwrap();
    let shape = g.shape(lat.tensor).to_vec();
    for (fill, factor) in [(1.0, 1.0), (0.0, 0.0), (0.5, 0.5)] {
        let mask = g.input(Tensor::full(&shape, fill));
        let out = m.apply_mask(&mut g, &lat, mask).unwrap();
        for (a, b) in g.value(lat.tensor).data().iter().zip(g.value(out.tensor).data()) {
            assert_eq!(*b, a * factor);
        }
    }
    let wrong = g.input(Tensor::full(&[1, 8, 2], 1.0));
    assert!(m.apply_mask(&mut g, &lat, wrong).is_err());
}

#[test]
fn decoder_shapes_and_zero_map() {
    let mut store = ParamStore::<f64>::new();
    let m = Masker::new(MaskerConfig::htmd(), "m", &mut store, &mut rng(7)).unwrap();
    let mut g = Graph::new();
    let lat = htmd::masker::LatentFrames {
        tensor: g.input(Tensor::zeros(&[1, 512, 2047])),
        frame_stride: 8,
        frame_len: 16,
    };
    let y = m.decode(&mut g, &store, &lat).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 16384]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

/// <decode(z), x> == <z, encode*(x)> when the decoder shares the encoder's
/// weights: transposed convolution is the adjoint of the strided encoder.
#[test]
fn decoder_is_adjoint_of_encoder_with_shared_weights() {
    let mut r = rng(8);
    let mut store = ParamStore::<f64>::new();
    let m = Masker::new(small_masker(), "m", &mut store, &mut r).unwrap();
    let enc = store.id("m.encoder.weight").unwrap();
    let dec = store.id("m.decoder.weight").unwrap();
    let w = store.get(enc).value.data().to_vec();
    store.get_mut(dec).value.data_mut().copy_from_slice(&w);
    let t = 64;
    let xv = random(&[1, 1, t], &mut r);
    let mut g = Graph::new();
    let x = g.input(xv.clone());
    let lat = m.encode(&mut g, &store, x).unwrap();
    let zv = random(g.shape(lat.tensor), &mut r);
    let z = htmd::masker::LatentFrames {
        tensor: g.input(zv.clone()),
        ..lat
    };
    let y = m.decode(&mut g, &store, &z).unwrap();
    let lhs: f64 = g.value(lat.tensor).data().iter().zip(zv.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = g.value(y).data().iter().zip(xv.data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
}

#[test]
fn unit_mask_pipeline_is_linear() {
    let mut r = rng(9);
    let mut store = ParamStore::<f64>::new();
    let m = Masker::new(small_masker(), "m", &mut store, &mut r).unwrap();
    let run = |x: &Tensor<f64>, store: &ParamStore<f64>| {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let lat = m.encode(&mut g, store, xv).unwrap();
        let ones = g.input(Tensor::full(g.shape(lat.tensor), 1.0));
        let masked = m.apply_mask(&mut g, &lat, ones).unwrap();
        let y = m.decode(&mut g, store, &masked).unwrap();
        g.value(y).data().to_vec()
    };
    let a = random(&[1, 1, 96], &mut r);
    let b = random(&[1, 1, 96], &mut r);
    let combo = Tensor::new(
        vec![1, 1, 96],
        a.data().iter().zip(b.data()).map(|(x, y)| 2.0 * x - 0.7 * y).collect(),
    )
    .unwrap();
    let (ya, yb, yc) = (run(&a, &store), run(&b, &store), run(&combo, &store));
    for i in 0..96 {
        assert!((yc[i] - (2.0 * ya[i] - 0.7 * yb[i])).abs() < 1e-5);
    }
}

#[test]
fn skip_shape_examples() {
    let cfg = DenoiserConfig::htmd();
    let s = skip_shapes(&cfg, 16384).unwrap();
    assert_eq!(s[0], (1, 16384, 12));
    assert_eq!(s[2].2, 36);
    assert_eq!(s[11], (12, 8, 144));
    let wun = skip_shapes(&DenoiserConfig::wave_u_net(), 16384).unwrap();
    assert_eq!(wun[11], (12, 8, 288));
    assert!(skip_shapes(&cfg, 16383).is_err());
}

#[test]
fn denoiser_output_range_and_length() {
    let mut r = rng(10);
    for cfg in [small_denoiser(), DenoiserConfig {
        bottleneck: Bottleneck::Convolutional { kernel: 3 },
        ..small_denoiser()
    }] {
        let mut store = ParamStore::<f64>::new();
        let d = Denoiser::new(cfg, "d", &mut store, &mut r).unwrap();
        let mut g = Graph::new();
        let big = random(&[2, 1, 32], &mut r).map(|v| 4.0 * v);
        let x = g.input(big);
        let y = d.denoise(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y), &[2, 1, 32]);
        assert!(g.value(y).data().iter().all(|&v| v > -1.0 && v < 1.0));
        let odd = g.input(Tensor::zeros(&[1, 1, 33]));
        assert!(matches!(d.denoise(&mut g, &store, odd), Err(ModelError::Shape(_))));
    }
}

#[test]
fn default_denoiser_bottleneck_length() {
    let cfg = DenoiserConfig::htmd();
    assert_eq!(16384 >> cfg.depth, 4);
}

#[test]
fn composite_forward_on_zeros() {
    let mut model = Model::<f64>::new(ModelConfig::tiny_htmd(), &mut rng(11)).unwrap();
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[1, 1, 256]));
    let out = model.forward(&mut g, x, NormMode::Eval).unwrap();
    let mid = g.value(out.mid.unwrap());
    assert!(mid.data().iter().all(|&v| v == 0.0));
    let fin = g.value(out.final_est);
    assert_eq!(fin.shape(), &[1, 1, 256]);
    assert!(fin.all_finite());
    assert!(model.forward(&mut g, x, NormMode::Eval).is_ok());
    let bad = g.input(Tensor::zeros(&[1, 1, 264]));
    assert!(model.forward(&mut g, bad, NormMode::Eval).is_err());
}

#[test]
fn default_models_map_16384_to_16384() {
    let mut model = Model::<f32>::new(ModelConfig::htmd(), &mut rng(12)).unwrap();
    let x = Tensor::new(
        vec![1, 1, 16384],
        (0..16384).map(|i| (i as f32 * 0.01).sin() * 0.5).collect(),
    )
    .unwrap();
    let (fin, mid) = model.infer(x).unwrap();
    assert_eq!(fin.shape(), &[1, 1, 16384]);
    assert_eq!(mid.unwrap().shape(), &[1, 1, 16384]);
    assert!(fin.all_finite());
}

#[test]
fn parameter_footprints() {
    let within = |n: usize, target: f64| (n as f64 - target).abs() <= 0.1 * target;
    let h = param_count(&ModelConfig::htmd()).unwrap();
    let c = param_count(&ModelConfig::conv_tasnet()).unwrap();
    let w = param_count(&ModelConfig::wave_u_net()).unwrap();
    assert!(within(h, 4.5e6), "htmd {h}");
    assert!(within(c, 5.5e6), "convtasnet {c}");
    assert!(within(w, 10.3e6), "waveunet {w}");
}

#[test]
fn every_parameter_receives_gradient() {
    let mut r = rng(13);
    let mut model = Model::<f64>::new(ModelConfig::tiny_htmd(), &mut r).unwrap();
    let mut g = Graph::new();
    let x = g.input(random(&[2, 1, 256], &mut r));
    let y = g.input(random(&[2, 1, 256], &mut r));
    let out = model.forward(&mut g, x, NormMode::Train).unwrap();
    let l1 = g.mse(out.final_est, y).unwrap();
    let l2 = g.mse(out.mid.unwrap(), y).unwrap();
    let loss = g.add(l1, l2).unwrap();
    g.backward(loss).unwrap();
    model.store.zero_grads();
    g.accumulate_param_grads(&mut model.store);
    for p in model.store.params() {
        let norm: f64 = p.grad.sum_squares();
        assert!(norm > 0.0, "{} has zero gradient", p.name);
    }
}

/// End-to-end finite-difference check of the tiny composite network with
/// respect to every parameter tensor. Perturbed passes keep the reference
/// point's leaky-relu branches so the fourth-order stencil can use a step
/// large enough to stay clear of f64 rounding in the loss.
#[test]
fn tiny_htmd_end_to_end_grad_check() {
    let fd = FiniteDiff {
        step: 2e-3,
        stencil: Stencil::FivePoint,
    };
    for seed in 0..5u64 {
        let mut r = rng(100 + seed);
        let model = Model::<f64>::new(ModelConfig::tiny_htmd(), &mut r).unwrap();
        let x = random(&[2, 1, 256], &mut r);
        let target = random(&[2, 1, 256], &mut r);
        let inputs: Vec<Tensor<f64>> = model.store.params().iter().map(|p| p.value.clone()).collect();
        let report = check_gradients_with("htmd_forward", inputs, seed, Some(3), fd, |ps, frozen| {
            let mut m = model.clone();
            for (p, v) in m.store.params_mut().iter_mut().zip(ps) {
                p.value = v.clone();
            }
            let mut g = match frozen {
                Some(bits) => Graph::with_frozen_kinks(bits.to_vec()),
                None => Graph::new(),
            };
            let xv = g.input(x.clone());
            let yv = g.input(target.clone());
            let out = m.forward(&mut g, xv, NormMode::Train)?;
            let l1 = g.mse(out.final_est, yv)?;
            let l2 = g.mse(out.mid.unwrap(), yv)?;
            let loss = g.add(l1, l2)?;
            g.backward(loss)?;
            m.store.zero_grads();
            g.accumulate_param_grads(&mut m.store);
            Ok::<_, ModelError>(Probe {
                value: g.value(loss).data()[0],
                grads: m.store.params().iter().map(|p| p.grad.clone()).collect(),
                pattern: g.kink_pattern(),
            })
        })
        .unwrap();
        assert!(report.checked >= 3 * model.store.params().len() / 2);
        assert!(report.max_rel_error <= 1e-4, "seed {seed}: {}", report.max_rel_error);
    }
}

#[test]
fn frozen_kinks_reproduce_reference_values() {
    let mut r = rng(14);
    let mut model = Model::<f64>::new(ModelConfig::tiny_htmd(), &mut r).unwrap();
    let x = random(&[1, 1, 256], &mut r);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let out = model.forward(&mut g, xv, NormMode::Eval).unwrap();
    let reference = g.value(out.final_est).clone();
    let mut f = Graph::with_frozen_kinks(g.kink_pattern());
    let xv = f.input(x);
    let out = model.forward(&mut f, xv, NormMode::Eval).unwrap();
    assert_eq!(f.value(out.final_est), &reference);
}
