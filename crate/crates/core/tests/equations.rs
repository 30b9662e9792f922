mod common;

use candle_core::{DType, Tensor};
use common::*;
use patchcanvas_core::discriminator::replicate_text;
use patchcanvas_core::generator::{kl_to_standard_normal, softmax_pool};
use patchcanvas_core::vse::{ImageEncoder, SentenceEncoder, PAD};
use patchcanvas_core::{Discriminator, DiscriminatorConfig, Error, GeneratorConfig, Image, ParamStore, TokenSequence};

fn encoder(seed: u64) -> (ParamStore, SentenceEncoder) {
    let mut store = ParamStore::new(DType::F64, seed);
    let enc = SentenceEncoder::new(&mut store, "text", 10, 5, 4).unwrap();
    (store, enc)
}

fn seq(indices: &[usize]) -> TokenSequence {
    TokenSequence {
        indices: indices.to_vec(),
        raw_tokens: indices.iter().map(|i| format!("w{i}")).collect(),
    }
}

#[test]
fn singleton_sentence_is_its_state() {
    let (_, enc) = encoder(1);
    let out = enc.encode_sequence(&randn(1, "g", &[1, 5])).unwrap();
    assert_eq!(host(&out.attention), vec![1.0]);
    assert_eq!(host(&out.sentence), host(&out.per_token));
}

#[test]
fn constant_score_pools_to_mean() {
    let (store, enc) = encoder(2);
    store.fill_zero("text.score").unwrap();
    let n = 4;
    let out = enc.encode_sequence(&randn(2, "g", &[n, 5])).unwrap();
    for a in host(&out.attention) {
        assert!((a - 0.25).abs() < 1e-12);
    }
    let rows = host(&out.per_token);
    let mean: Vec<f64> = (0..4).map(|k| (0..n).map(|i| rows[i * 4 + k]).sum::<f64>() / n as f64).collect();
    assert!(max_abs_diff(&host(&out.sentence), &mean) < 1e-12);
}

#[test]
fn sentence_reconstructs_from_attention() {
    for seed in 0..5 {
        let (store, enc) = encoder(seed);
        randomize(&store, "text.score.weight", 1.0, seed);
        let out = enc.encode_sequence(&randn(seed, "g", &[3, 5])).unwrap();
        let alpha = host(&out.attention);
        let rows = host(&out.per_token);
        assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(alpha.iter().all(|&a| a >= 0.0));
        let mut pooled = [0.0; 4];
        for (i, a) in alpha.iter().enumerate() {
            for (k, p) in pooled.iter_mut().enumerate() {
                *p += a * rows[i * 4 + k];
            }
        }
        assert!(max_abs_diff(&host(&out.sentence), &pooled) < 1e-5);
    }
}

#[test]
fn reversing_tokens_changes_sentence() {
    let (_, enc) = encoder(3);
    let s = seq(&[2, 5, 7]);
    let a = enc.encode_batch(&[&s]).unwrap().sentence;
    let b = enc.encode_batch(&[&s.reversed()]).unwrap().sentence;
    assert!(max_abs_diff(&host(&a), &host(&b)) > 1e-6);
}

#[test]
fn padded_batch_matches_single_encodings() {
    let (_, enc) = encoder(4);
    let short = seq(&[3]);
    let long = seq(&[4, 6, 8]);
    let batch = enc.encode_batch(&[&short, &long]).unwrap();
    for (row, s) in [&short, &long].into_iter().enumerate() {
        let single = enc.encode_batch(&[s]).unwrap();
        let got = host(&batch.sentence.get(row).unwrap());
        assert!(max_abs_diff(&got, &host(&single.sentence)) < 1e-12);
    }
}

#[test]
fn embedding_lookup() {
    let (_, enc) = encoder(5);
    assert!(host(&enc.embed_tokens(&seq(&[PAD])).unwrap()).iter().all(|&v| v == 0.0));

    let twice = enc.embed_tokens(&seq(&[2, 2])).unwrap();
    assert_eq!(host(&twice.get(0).unwrap()), host(&twice.get(1).unwrap()));

    let table = host(enc.table());
    let idx = [7, 1, 9, 3, 3, 0];
    let got = host(&enc.embed_tokens(&seq(&idx)).unwrap());
    let mut expected = Vec::new();
    for &i in &idx {
        expected.extend_from_slice(&table[i * 5..(i + 1) * 5]);
    }
    assert_eq!(got, expected);

    assert!(matches!(
        enc.embed_tokens(&seq(&[1, 10])),
        Err(Error::IndexOutOfRange { index: 10, size: 10 })
    ));
}

#[test]
fn image_encoder_contract() {
    let mut store = ParamStore::new(DType::F64, 6);
    let enc = ImageEncoder::new(&mut store, "img", 16, 4, 6).unwrap();
    let img = Image::filled(16, 16, [0.3, -0.2, 0.9]);
    let a = enc.encode_image(&img, DType::F64).unwrap();
    assert_eq!(a.dims(), &[6]);
    assert_eq!(host(&a), host(&enc.encode_image(&img, DType::F64).unwrap()));
    assert!(matches!(
        enc.encode_image(&Image::filled(8, 8, [0.0; 3]), DType::F64),
        Err(Error::ShapeMismatch { .. })
    ));

    store.fill_zero("img").unwrap();
    let zero = enc.encode_image(&Image::filled(16, 16, [0.0; 3]), DType::F64).unwrap();
    assert!(host(&zero).iter().all(|&v| v == 0.0));
}

#[test]
fn kl_closed_form() {
    let kl = kl_to_standard_normal(&t64(&[1.0], &[1, 1]), &t64(&[0.0], &[1, 1])).unwrap();
    assert_eq!(host(&kl), vec![0.5]);

    let mu = randn(7, "mu", &[3, 5]);
    let ls = (randn(7, "ls", &[3, 5]) * 0.5).unwrap();
    let got = host(&kl_to_standard_normal(&mu, &ls).unwrap());
    let (m, l) = (host(&mu), host(&ls));
    for row in 0..3 {
        let expected: f64 = (0..5)
            .map(|k| {
                let (m, l) = (m[row * 5 + k], l[row * 5 + k]);
                0.5 * (m * m + (2.0 * l).exp() - 2.0 * l - 1.0)
            })
            .sum();
        assert!((got[row] - expected).abs() < 1e-6);
        assert!(got[row] >= 0.0);
    }
}

#[test]
fn zero_heads_give_prior_condition() {
    let cfg = small_generator_config();
    let (store, g) = generator(8, &cfg, 4);
    store.fill_zero("generator.ca_").unwrap();
    let s = randn(8, "s", &[2, 4]);
    let eps = randn(8, "eps", &[2, 3]);
    let cond = g.condition_augment(&s, &eps).unwrap();
    assert_eq!(host(&cond.kl), vec![0.0, 0.0]);
    assert_eq!(host(&cond.sample), host(&eps));

    randomize(&store, "generator.ca_mu.weight", 1.0, 8);
    randomize(&store, "generator.ca_log_sigma.weight", 0.3, 8);
    let cond = g.condition_augment(&s, &eps).unwrap();
    let (mu, ls, e) = (host(&cond.mu), host(&cond.log_sigma), host(&eps));
    let c: Vec<f64> = (0..6).map(|i| mu[i] + ls[i].exp() * e[i]).collect();
    assert!(max_abs_diff(&host(&cond.sample), &c) < 1e-12);
}

#[test]
fn initial_state() {
    let cfg = small_generator_config();
    let (store, g) = generator(9, &cfg, 4);
    let c = randn(9, "c", &[2, 3]);
    let z = randn(9, "z", &[2, 3]);
    let h0 = g.init_hidden(&c, &z).unwrap();
    assert_eq!(h0.dims(), &[2, 4]);
    assert_eq!(host(&h0), host(&g.init_hidden(&c, &z).unwrap()));
    assert!(matches!(g.init_hidden(&c, &randn(9, "z", &[2, 5])), Err(Error::ShapeMismatch { .. })));

    store.fill_zero("generator.init").unwrap();
    assert!(host(&g.init_hidden(&c, &z).unwrap()).iter().all(|&v| v == 0.0));
}

#[test]
fn softmax_attention_closed_forms() {
    let e = randn(10, "e", &[1, 2, 3]);
    let mask = t64(&[1.0, 1.0], &[1, 2]);
    let (beta, e_bar) = softmax_pool(&t64(&[0.0, 3f64.ln()], &[1, 2]), &e, &mask).unwrap();
    let b = host(&beta);
    assert!((b[0] - 0.25).abs() < 1e-12 && (b[1] - 0.75).abs() < 1e-12);
    let ev = host(&e);
    let expected: Vec<f64> = (0..3).map(|k| 0.25 * ev[k] + 0.75 * ev[3 + k]).collect();
    assert!(max_abs_diff(&host(&e_bar), &expected) < 1e-12);

    let (beta, e_bar) = softmax_pool(&t64(&[1.7, 1.7], &[1, 2]), &e, &mask).unwrap();
    assert!(host(&beta).iter().all(|&v| (v - 0.5).abs() < 1e-12));
    let mean: Vec<f64> = (0..3).map(|k| 0.5 * (ev[k] + ev[3 + k])).collect();
    assert!(max_abs_diff(&host(&e_bar), &mean) < 1e-12);

    let empty = Tensor::zeros((1, 0), DType::F64, &candle_core::Device::Cpu).unwrap();
    let e0 = Tensor::zeros((1, 0, 3), DType::F64, &candle_core::Device::Cpu).unwrap();
    assert!(matches!(softmax_pool(&empty, &e0, &empty), Err(Error::EmptySequence)));
}

#[test]
fn attention_matches_weighted_sum_loop() {
    let cfg = small_generator_config();
    let (_, g) = generator(11, &cfg, 4);
    let n = 5;
    let c = randn(11, "c", &[1, 3]);
    let z = randn(11, "z", &[1, 3]);
    let h = randn(11, "h", &[1, 4]);
    let e = randn(11, "e", &[1, n, 4]);
    let mask = Tensor::ones((1, n), DType::F64, &candle_core::Device::Cpu).unwrap();
    let (beta, e_bar) = g.attend(&c, &z, &h, &e, &mask).unwrap();

    let scores = host(&g.attention_scores(&c, &z, &h, &e).unwrap());
    let top = scores.iter().cloned().fold(f64::MIN, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    let expected_beta: Vec<f64> = exps.iter().map(|x| x / total).collect();
    assert!(max_abs_diff(&host(&beta), &expected_beta) < 1e-12);
    assert!((host(&beta).iter().sum::<f64>() - 1.0).abs() < 1e-6);

    let ev = host(&e);
    let mut pooled = [0.0; 4];
    for j in 0..n {
        for (k, p) in pooled.iter_mut().enumerate() {
            *p += expected_beta[j] * ev[j * 4 + k];
        }
    }
    assert!(max_abs_diff(&host(&e_bar), &pooled) < 1e-6);
}

/// GRU update written out from the stored weights: returns (next, candidate).
fn gru_oracle(store: &ParamStore, name: &str, x: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let get = |n: &str| host(store.var(&format!("{name}.{n}")).unwrap().as_tensor());
    let (wi, bi, wh, bh) = (get("input.weight"), get("input.bias"), get("hidden.weight"), get("hidden.bias"));
    let affine = |w: &[f64], b: &[f64], v: &[f64], row: usize| -> f64 {
        b[row] + v.iter().enumerate().map(|(k, vk)| w[row * v.len() + k] * vk).sum::<f64>()
    };
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let d = h.len();
    let mut next = Vec::with_capacity(d);
    let mut cand = Vec::with_capacity(d);
    for j in 0..d {
        let r = sig(affine(&wi, &bi, x, j) + affine(&wh, &bh, h, j));
        let u = sig(affine(&wi, &bi, x, d + j) + affine(&wh, &bh, h, d + j));
        let n = (affine(&wi, &bi, x, 2 * d + j) + r * affine(&wh, &bh, h, 2 * d + j)).tanh();
        next.push((1.0 - u) * h[j] + u * n);
        cand.push(n);
    }
    (next, cand)
}

#[test]
fn recurrent_step_gates() {
    let cfg = small_generator_config();
    let (store, g) = generator(12, &cfg, 4);
    let h = randn(12, "h", &[1, 4]);
    let x = randn(12, "x", &[1, 4]);
    let (hv, xv) = (host(&h), host(&x));

    let (next, _) = gru_oracle(&store, "generator.cell", &xv, &hv);
    assert!(max_abs_diff(&host(&g.step(&h, &x).unwrap()), &next) < 1e-6);

    let bias = "generator.cell.input.bias";
    let force = |value: f64| {
        let mut b = host(store.var(bias).unwrap().as_tensor());
        b[4..8].fill(value);
        set_param(&store, bias, b);
    };
    force(-1e4);
    assert_eq!(host(&g.step(&h, &x).unwrap()), hv);
    force(1e4);
    let (_, cand) = gru_oracle(&store, "generator.cell", &xv, &hv);
    assert!(max_abs_diff(&host(&g.step(&h, &x).unwrap()), &cand) < 1e-12);

    assert!(matches!(g.step(&h, &randn(12, "x", &[1, 5])), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn patch_ranges() {
    let cfg = small_generator_config();
    let (_, g) = generator(13, &cfg, 4);
    for (i, scale) in [0.1, 1.0, 10.0, 1e3].into_iter().enumerate() {
        let h = (randn(13 + i as u64, "h", &[3, 4]) * scale).unwrap();
        let (delta, gamma) = g.emit_patch(&h).unwrap();
        assert_eq!(delta.dims(), &[3, 3, 8, 8]);
        assert_eq!(gamma.dims(), &[3, 1]);
        assert!(host(&delta).iter().all(|v| (-1.0..=1.0).contains(v)));
        // Far out the sigmoid rounds to 0 or 1 in floating point.
        let open = scale <= 10.0;
        assert!(host(&gamma).iter().all(|&v| if open { v > 0.0 && v < 1.0 } else { (0.0..=1.0).contains(&v) }));
    }
}

struct PaintInputs {
    e: Tensor,
    mask: Tensor,
    s: Tensor,
    z: Tensor,
    eps: Tensor,
}

/// Two captions of three tokens; the second is padded after two.
fn paint_inputs(seed: u64) -> PaintInputs {
    PaintInputs {
        e: randn(seed, "e", &[2, 3, 4]),
        mask: t64(&[1.0, 1.0, 1.0, 1.0, 1.0, 0.0], &[2, 3]),
        s: randn(seed, "s", &[2, 4]),
        z: randn(seed, "z", &[2, 3]),
        eps: randn(seed, "eps", &[2, 3]),
    }
}

#[test]
fn canvas_is_gated_sum_of_patches() {
    for t in [1, 2, 4] {
        let cfg = GeneratorConfig {
            timesteps: t,
            ..small_generator_config()
        };
        let (store, g) = generator(20 + t as u64, &cfg, 4);
        randomize(&store, "generator.ca_mu.weight", 0.5, 1);
        let x = paint_inputs(t as u64);
        let out = g.paint_with_eps(&x.e, &x.mask, &x.s, &x.z, &x.eps).unwrap();
        assert_eq!(out.trace.len(), t);

        let mut canvas = vec![0.0; 2 * 3 * 64];
        for step in &out.trace {
            let gamma = host(&step.gamma);
            let delta = host(&step.delta);
            for (i, c) in canvas.iter_mut().enumerate() {
                *c += gamma[i / (3 * 64)] * delta[i];
            }
            let beta = host(&step.beta);
            for row in beta.chunks(3) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
            assert_eq!(beta[5], 0.0);
            assert!(gamma.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert!(max_abs_diff(&host(&out.canvas), &canvas) < 1e-5, "t = {t}");
        let clamped: Vec<f64> = canvas.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        assert!(max_abs_diff(&host(&out.image), &clamped) < 1e-5);
    }
}

#[test]
fn closed_gate_leaves_canvas_empty() {
    let cfg = GeneratorConfig {
        timesteps: 3,
        ..small_generator_config()
    };
    let (store, g) = generator(30, &cfg, 4);
    store.fill_zero("generator.head_gamma.weight").unwrap();
    set_param(&store, "generator.head_gamma.bias", vec![-1e4]);
    let x = paint_inputs(30);
    let out = g.paint_with_eps(&x.e, &x.mask, &x.s, &x.z, &x.eps).unwrap();
    assert!(host(&out.canvas).iter().all(|&v| v == 0.0));
}

#[test]
fn noise_changes_image_and_paint_is_deterministic() {
    let cfg = small_generator_config();
    let (_, g) = generator(31, &cfg, 4);
    let (_, g2) = generator(31, &cfg, 4);
    let x = paint_inputs(31);
    let a = g.paint_with_eps(&x.e, &x.mask, &x.s, &x.z, &x.eps).unwrap();
    let b = g2.paint_with_eps(&x.e, &x.mask, &x.s, &x.z, &x.eps).unwrap();
    for (sa, sb) in a.trace.iter().zip(&b.trace) {
        assert_eq!(host(&sa.beta), host(&sb.beta));
        assert_eq!(host(&sa.gamma), host(&sb.gamma));
        assert_eq!(host(&sa.delta), host(&sb.delta));
        assert_eq!(host(&sa.hidden), host(&sb.hidden));
    }
    let other_z = randn(99, "z", &[2, 3]);
    let c = g.paint_with_eps(&x.e, &x.mask, &x.s, &other_z, &x.eps).unwrap();
    assert!(max_abs_diff(&host(&a.image), &host(&c.image)) > 1e-6);
}

fn discriminator(seed: u64) -> Discriminator {
    let mut store = ParamStore::new(DType::F64, seed);
    Discriminator::new(&mut store, "d", &DiscriminatorConfig { channels: 4 }, 16, 5).unwrap()
}

#[test]
fn text_replication() {
    let rep = replicate_text(&t64(&[1.0, 2.0], &[1, 2]), (2, 2)).unwrap();
    assert_eq!(rep.dims(), &[1, 2, 2, 2]);
    assert_eq!(host(&rep), vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);

    for (b, d, h, w) in [(1, 1, 1, 1), (2, 3, 4, 5), (3, 7, 2, 6), (1, 16, 4, 4)] {
        let h_f = randn((b * d * h * w) as u64, "h", &[b, d]);
        let rep = replicate_text(&h_f, (h, w)).unwrap();
        assert_eq!(rep.dims(), &[b, d, h, w]);
        let v = host(&rep);
        let src = host(&h_f);
        for (i, chunk) in v.chunks(h * w).enumerate() {
            assert!(chunk.iter().all(|&x| x == src[i]));
        }
    }
}

#[test]
fn discriminator_probability_range() {
    let d = discriminator(40);
    for (i, scale) in [0.0, 1.0, 1e3].into_iter().enumerate() {
        let img = (randn(i as u64, "img", &[3, 3, 16, 16]) * scale).unwrap();
        let h_f = (randn(i as u64, "hf", &[3, 5]) * scale).unwrap();
        let p = host(&d.forward(&img, &h_f).unwrap().probability);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0 && v.is_finite()));
    }
    let img = randn(41, "img", &[2, 3, 16, 16]);
    let h_f = randn(41, "hf", &[2, 5]);
    let a = d.forward(&img, &h_f).unwrap();
    let b = d.forward(&img, &h_f).unwrap();
    assert_eq!(host(&a.probability), host(&b.probability));
    assert_eq!(a.features.dims(), &[2, 8, 4, 4]);
    assert!(matches!(
        d.forward(&randn(41, "img", &[2, 3, 8, 8]), &h_f),
        Err(Error::ShapeMismatch { .. })
    ));
}
