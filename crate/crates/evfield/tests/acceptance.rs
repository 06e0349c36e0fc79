//! End-to-end acceptance suite. Each test covers one release criterion and
//! prints a single pass line on success (visible with `--nocapture`).
//!
//! The pretraining fixtures (five seeds of the smoke run, the ablation arm,
//! and the multimodal arm) are shared across criteria through `OnceLock`s
//! that hold plain numbers, so the heavy work runs once per binary.

use std::collections::BTreeMap;
use std::process::Command;
use std::sync::OnceLock;

use evfield::encoder::{self, ConvLayerConfig, EncoderConfig, EncoderParams};
use evfield::eval::{
    auroc_binary, average_precision, embed_fields, extract_embedding, ndcg, retrieval,
    split_fields, EmbeddingSet, ProbeConfig,
};
use evfield::gradcheck::{central_diff, max_rel_error};
use evfield::losses::{info_nce, kl_agreement, total_loss, LossParts, LossWeights};
use evfield::projections::{self, apply, warp_grid, ProjectionSpec, Transform};
use evfield::rng::stream;
use evfield::segmentation::{sample_segmentation, uniform_segmentation, SegSamplerConfig};
use evfield::synthgen::{generate_corpus, Corpus, EmissionKernel, SyntheticCorpusConfig, Waveform};
use evfield::tensor::Tensor;
use evfield::trainer::{heldout_cons, train_in_memory, Model, TrainConfig};
use num_complex::Complex64;
use rand::Rng;

const SEEDS: [u64; 5] = [11, 12, 13, 14, 15];

fn pass(criterion: u32, name: &str) {
    println!("criterion {criterion:02} ({name}): PASS");
}

// ------------------------------------------------------------- fixtures

fn smoke_corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| generate_corpus(&SyntheticCorpusConfig::default()).unwrap())
}

fn smoke_encoder() -> EncoderConfig {
    EncoderConfig {
        input_channels: 1,
        stem: vec![
            ConvLayerConfig { out_channels: 8, kernel: 7, stride: 4 },
            ConvLayerConfig { out_channels: 16, kernel: 5, stride: 2 },
        ],
        model_dim: 16,
        ..Default::default()
    }
}

fn smoke_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        total_steps: 500,
        warmup_steps: 50,
        seed,
        encoder: smoke_encoder(),
        ..Default::default()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn macro_accuracy(probe: &evfield::eval::Probe, set: &EmbeddingSet, num_classes: usize) -> f64 {
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (z, &label) in set.embeddings.iter().zip(&set.labels) {
        totals[label] += 1;
        if probe.predict(z) == label {
            hits[label] += 1;
        }
    }
    let mut acc = 0.0;
    let mut present = 0;
    for (h, t) in hits.iter().zip(&totals) {
        if *t > 0 {
            acc += *h as f64 / *t as f64;
            present += 1;
        }
    }
    acc / present as f64
}

/// Two fresh segmentations of each probe recording; mean cosine between
/// their embeddings measures cross-segmentation stability of `model`.
fn stability(model: &Model, corpus: &Corpus, cfg: &TrainConfig, fields: &[usize]) -> f64 {
    let mut acc = 0.0;
    for (i, &f) in fields.iter().enumerate() {
        let x = &corpus.recordings[f];
        let frames = x.len / cfg.encoder.downsample();
        let mut rng = stream(905, "stability", i as u64);
        let s1 = sample_segmentation(frames, &cfg.seg, &mut rng, None).unwrap();
        let s2 = sample_segmentation(frames, &cfg.seg, &mut rng, None).unwrap();
        let z1 = encoder::encode(x, &s1, &model.encoders[0]).unwrap();
        let z2 = encoder::encode(x, &s2, &model.encoders[0]).unwrap();
        acc += cosine(z1.z.data(), z2.z.data());
    }
    acc / fields.len() as f64
}

struct SeedStats {
    cons_init: f64,
    cons_final: f64,
    probe_acc: f64,
    map: f64,
    stab_init: f64,
    stab_final: f64,
}

/// Probe accuracy and retrieval MAP of a trained model on the held-out
/// fields, plus the embedding sets for reuse.
fn evaluate_model(model: &Model, corpus: &Corpus, cfg: &TrainConfig, seed: u64) -> (f64, f64) {
    let (train_fields, test_fields) = split_fields(corpus, 0.8);
    let tr = embed_fields(model, corpus, &train_fields, &cfg.seg, 4, seed ^ 0xe1).unwrap();
    let te = embed_fields(model, corpus, &test_fields, &cfg.seg, 4, seed ^ 0xe2).unwrap();
    let (probe, _) = evfield::eval::train_probe(&tr, &ProbeConfig::default()).unwrap();
    let acc = macro_accuracy(&probe, &te, 4);
    let map = retrieval(&te, &tr).unwrap().map;
    (acc, map)
}

fn smoke_stats() -> &'static Vec<SeedStats> {
    static STATS: OnceLock<Vec<SeedStats>> = OnceLock::new();
    STATS.get_or_init(|| {
        let corpus = smoke_corpus();
        let (_, test_fields) = split_fields(corpus, 0.8);
        let probe_fields: Vec<usize> = test_fields.iter().copied().take(16).collect();
        SEEDS
            .iter()
            .map(|&seed| {
                let cfg = smoke_cfg(seed);
                let init = Model::init(&cfg, 1).unwrap();
                let cons_init = heldout_cons(&init, corpus, &cfg, 0).unwrap();
                let stab_init = stability(&init, corpus, &cfg, &probe_fields);
                let model = train_in_memory(corpus, &cfg).unwrap();
                let cons_final = heldout_cons(&model, corpus, &cfg, 0).unwrap();
                let stab_final = stability(&model, corpus, &cfg, &probe_fields);
                let (probe_acc, map) = evaluate_model(&model, corpus, &cfg, seed);
                SeedStats { cons_init, cons_final, probe_acc, map, stab_init, stab_final }
            })
            .collect()
    })
}

fn ablation_accs() -> &'static Vec<f64> {
    static ACCS: OnceLock<Vec<f64>> = OnceLock::new();
    ACCS.get_or_init(|| {
        let corpus = smoke_corpus();
        SEEDS
            .iter()
            .map(|&seed| {
                let cfg = TrainConfig { fixed_uniform_segmentation: true, ..smoke_cfg(seed) };
                let model = train_in_memory(corpus, &cfg).unwrap();
                evaluate_model(&model, corpus, &cfg, seed).0
            })
            .collect()
    })
}

/// Paired vs mismatched cross-modal cosine means per seed.
fn multimodal_gaps() -> &'static Vec<(f64, f64)> {
    static GAPS: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    GAPS.get_or_init(|| {
        let gen = SyntheticCorpusConfig {
            num_recordings: 128,
            len: 256,
            modalities: vec![EmissionKernel::Gabor, EmissionKernel::GaborDerivative],
            ..Default::default()
        };
        let corpus = generate_corpus(&gen).unwrap();
        let (_, test_fields) = split_fields(&corpus, 0.8);
        SEEDS
            .iter()
            .map(|&seed| {
                let cfg = TrainConfig {
                    batch_size: 16,
                    total_steps: 300,
                    warmup_steps: 30,
                    seed,
                    multimodal: true,
                    encoder: smoke_encoder(),
                    ..Default::default()
                };
                let model = train_in_memory(&corpus, &cfg).unwrap();
                let embed = |f: usize, m: usize| {
                    let x = &corpus.recordings[f * 2 + m];
                    let mut rng = stream(seed, "mm-embed", (f * 2 + m) as u64);
                    extract_embedding(x, &model.encoders[m], &cfg.seg, 4, &mut rng).unwrap().0
                };
                let z0: Vec<Vec<f64>> = test_fields.iter().map(|&f| embed(f, 0)).collect();
                let z1: Vec<Vec<f64>> = test_fields.iter().map(|&f| embed(f, 1)).collect();
                let n = z0.len();
                let paired: f64 =
                    (0..n).map(|i| cosine(&z0[i], &z1[i])).sum::<f64>() / n as f64;
                let mismatched: f64 =
                    (0..n).map(|i| cosine(&z0[i], &z1[(i + 1) % n])).sum::<f64>() / n as f64;
                (paired, mismatched)
            })
            .collect()
    })
}

// --------------------------------------------- criterion 1: gradients

/// Finite-difference check of a scalar built from tensor inputs. The scalar
/// is a fixed-coefficient contraction of the op output so every output
/// element influences it asymmetrically.
fn check_op<F>(name: &str, build: F, inputs: &[(Vec<f64>, Vec<usize>)], tol: f64)
where
    F: Fn(&[Tensor]) -> Tensor,
{
    let scalarize = |out: &Tensor| -> Tensor {
        let coeffs: Vec<f64> = (0..out.numel()).map(|i| 0.3 + 0.11 * i as f64).collect();
        let c = Tensor::from_vec(coeffs, out.shape()).unwrap();
        out.mul(&c).unwrap().sum(None, false).unwrap()
    };
    let params: Vec<Tensor> = inputs
        .iter()
        .map(|(d, s)| Tensor::param(d.clone(), s).unwrap())
        .collect();
    let loss = scalarize(&build(&params));
    loss.backward().unwrap();
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad_or_zeros()).collect();
    let blocks: Vec<Vec<f64>> = inputs.iter().map(|(d, _)| d.clone()).collect();
    let numeric = central_diff(
        |vals: &[Vec<f64>]| {
            let ps: Vec<Tensor> = vals
                .iter()
                .zip(inputs)
                .map(|(v, (_, s))| Tensor::from_vec(v.clone(), s).unwrap())
                .collect();
            scalarize(&build(&ps)).item()
        },
        &blocks,
        1e-5,
    );
    let err = max_rel_error(&analytic, &numeric);
    assert!(err < tol, "{name}: max relative gradient error {err:.3e} >= {tol:e}");
}

fn grid(n: usize, scale: f64, offset: f64) -> Vec<f64> {
    (0..n).map(|i| offset + scale * ((i as f64 * 0.7321).sin() + 0.1 * i as f64)).collect()
}

#[test]
fn criterion_01_gradient_fidelity() {
    let a6 = (grid(6, 0.8, 0.1), vec![2, 3]);
    let b6 = (grid(6, 0.6, 0.4), vec![2, 3]);
    let pos6 = (grid(6, 0.3, 1.5), vec![2, 3]);
    let m23 = (grid(6, 0.8, 0.1), vec![2, 3]);
    let m34 = (grid(12, 0.5, -0.2), vec![3, 4]);
    let tol = 1e-5;

    check_op("add", |p| p[0].add(&p[1]).unwrap(), &[a6.clone(), b6.clone()], tol);
    check_op("sub", |p| p[0].sub(&p[1]).unwrap(), &[a6.clone(), b6.clone()], tol);
    check_op("mul", |p| p[0].mul(&p[1]).unwrap(), &[a6.clone(), b6.clone()], tol);
    check_op("div", |p| p[0].div(&p[1]).unwrap(), &[a6.clone(), pos6.clone()], tol);
    check_op("matmul", |p| p[0].matmul(&p[1]).unwrap(), &[m23.clone(), m34.clone()], tol);
    check_op(
        "conv1d",
        |p| p[0].conv1d(&p[1], 2, 1).unwrap(),
        &[(grid(16, 0.7, 0.0), vec![2, 8]), (grid(18, 0.4, 0.1), vec![3, 2, 3])],
        tol,
    );
    check_op("softmax", |p| p[0].softmax(1).unwrap(), &[a6.clone()], tol);
    check_op("sum_all", |p| p[0].sum(None, false).unwrap(), &[a6.clone()], tol);
    check_op("sum_axis0", |p| p[0].sum(Some(0), false).unwrap(), &[a6.clone()], tol);
    check_op("mean_axis1", |p| p[0].mean(Some(1), true).unwrap(), &[a6.clone()], tol);
    check_op("var", |p| p[0].var(Some(1), false).unwrap(), &[a6.clone()], tol);
    check_op("exp", |p| p[0].exp(), &[a6.clone()], tol);
    check_op("log", |p| p[0].log().unwrap(), &[pos6.clone()], tol);
    check_op("sqrt", |p| p[0].sqrt().unwrap(), &[pos6.clone()], tol);
    check_op("relu", |p| p[0].relu(), &[pos6.clone()], tol);
    check_op("gelu", |p| p[0].gelu(), &[a6.clone()], tol);
    check_op("sigmoid", |p| p[0].sigmoid(), &[a6.clone()], tol);
    check_op("tanh", |p| p[0].tanh(), &[a6.clone()], tol);
    check_op("abs", |p| p[0].abs(), &[pos6.clone()], tol);
    check_op("neg", |p| p[0].neg(), &[a6.clone()], tol);
    check_op("scale", |p| p[0].scale(1.7), &[a6.clone()], tol);
    check_op("add_scalar", |p| p[0].add_scalar(-0.3), &[a6.clone()], tol);
    check_op("l2_normalize", |p| p[0].l2_normalize(1).unwrap(), &[a6.clone()], tol);
    check_op("transpose", |p| p[0].transpose(), &[m34.clone()], tol);
    check_op("reshape", |p| p[0].reshape(&[3, 2]).unwrap(), &[a6.clone()], tol);
    check_op("slice_rows", |p| p[0].slice_rows(1, 3), &[m34.clone()], tol);
    check_op(
        "stack_rows",
        |p| {
            let rows: Vec<Tensor> = (0..2).map(|i| p[0].slice_rows(i, i + 1)).collect();
            Tensor::stack_rows(&rows)
        },
        &[m23.clone()],
        tol,
    );
    check_op(
        "bucket_bias",
        |p| p[0].bucket_bias(&p[1], &[0, 2, 1, 3, 0, 1]),
        &[a6.clone(), (grid(4, 0.5, 0.0), vec![4])],
        tol,
    );
    check_op(
        "masked_fill",
        |p| p[0].masked_fill(&[false, true, false, false, true, false], -5.0),
        &[a6.clone()],
        tol,
    );

    // Full composite: encoder + contrastive + boundary terms at C=1, T=64,
    // d=8, M=3, batch of two recordings with two segmentations each.
    let cfg = EncoderConfig::tiny();
    let params = EncoderParams::init(&cfg, &mut stream(41, "acc-grad", 0)).unwrap();
    let names = params.names();
    let shapes: Vec<Vec<usize>> = names.iter().map(|n| params.get(n).shape().to_vec()).collect();
    let blocks: Vec<Vec<f64>> = names.iter().map(|n| params.get(n).data().to_vec()).collect();
    let waves: Vec<Waveform> = (0..2)
        .map(|i| Waveform {
            channels: 1,
            len: 64,
            sample_rate: 64.0,
            data: grid(64, 0.9, 0.05 * i as f64),
            subject_id: i as u32,
            modality_id: 0,
            label: None,
        })
        .collect();
    let frames = 64 / cfg.downsample();
    let segs = [
        uniform_segmentation(frames, 3),
        evfield::segmentation::Segmentation::new(frames, vec![2, 5]).unwrap(),
    ];
    let composite = |p: &EncoderParams| -> Tensor {
        let mut z1 = Vec::new();
        let mut z2 = Vec::new();
        let mut boundaries = Vec::new();
        for x in &waves {
            let o1 = encoder::encode(x, &segs[0], p).unwrap();
            let o2 = encoder::encode(x, &segs[1], p).unwrap();
            boundaries.push((o1.boundary.clone(), o2.boundary.clone()));
            z1.push(o1.z);
            z2.push(o2.z);
        }
        let z1 = Tensor::stack_rows(&z1);
        let z2 = Tensor::stack_rows(&z2);
        let cons = info_nce(&z1, &z2, 0.1, &[false; 4]).unwrap();
        let (p1, p2) = &boundaries[0];
        let parts = LossParts {
            cons,
            sparsity: Some(evfield::losses::sparsity_term(p1).unwrap()),
            smoothness: Some(evfield::losses::smoothness_term(p1).unwrap()),
            kl: Some(kl_agreement(p1, p2).unwrap()),
            modal_cons: Vec::new(),
            align: None,
        };
        total_loss(&parts, &LossWeights::default()).unwrap()
    };
    let loss = composite(&params);
    loss.backward().unwrap();
    let analytic: Vec<Vec<f64>> = names.iter().map(|n| params.get(n).grad_or_zeros()).collect();
    let rebuilt = |vals: &[Vec<f64>]| -> EncoderParams {
        let mut p = EncoderParams::init(&cfg, &mut stream(41, "acc-grad", 0)).unwrap();
        let map: BTreeMap<String, Tensor> = names
            .iter()
            .zip(vals)
            .zip(&shapes)
            .map(|((n, v), s)| (n.clone(), Tensor::param(v.clone(), s).unwrap()))
            .collect();
        p.replace_all(map).unwrap();
        p
    };
    let numeric = central_diff(|vals| composite(&rebuilt(vals)).item(), &blocks, 1e-5);
    let err = max_rel_error(&analytic, &numeric);
    assert!(err < 1e-4, "composite gradient error {err:.3e} >= 1e-4");

    pass(1, "gradient fidelity");
}

// ------------------------------------------- criterion 2: closed forms

#[test]
fn criterion_02_closed_form_losses() {
    // Two orthonormal anchor rows matched with themselves at tau = 1:
    // per direction -ln(e / (e + 1)) = ln(1 + e^-1).
    let eye = Tensor::from_vec(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
    let loss = info_nce(&eye, &eye, 1.0, &[false; 4]).unwrap().item();
    let expect = (1.0 + (-1.0f64).exp()).ln();
    assert!((expect - 0.31326).abs() < 1e-5, "hand value sanity");
    assert!((loss - expect).abs() < 1e-6, "info_nce hand case: {loss} vs {expect}");

    // All-identical embeddings: uniform similarities give exactly ln B.
    for b in [2usize, 4, 8] {
        let row: Vec<f64> = {
            let mut v = vec![0.5f64; 4];
            let n = (4f64 * 0.25).sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            v
        };
        let data: Vec<f64> = row.iter().cycle().take(4 * b).copied().collect();
        let z = Tensor::from_vec(data, &[b, 4]).unwrap();
        let loss = info_nce(&z, &z, 0.7, &vec![false; b * b]).unwrap().item();
        assert!(
            (loss - (b as f64).ln()).abs() < 1e-9,
            "identical embeddings at B={b}: {loss} vs ln B"
        );
    }

    // Bernoulli KL(0.5 || 0.25) per frame.
    let p1 = Tensor::from_vec(vec![0.5; 6], &[6]).unwrap();
    let p2 = Tensor::from_vec(vec![0.25; 6], &[6]).unwrap();
    let kl = kl_agreement(&p1, &p2).unwrap().item();
    assert!((kl - 0.14384).abs() < 1e-5, "KL hand case: {kl}");
    let exact = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
    assert!((kl - exact).abs() < 1e-6);

    pass(2, "closed-form losses");
}

// --------------------------------------- criterion 3: signal processing

#[test]
fn criterion_03_signal_processing() {
    // FFT round trip and Parseval on a random length-1024 signal.
    let mut rng = stream(300, "acc-sig", 0);
    let x: Vec<f64> = (0..1024).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    projections::fft_in_place(&mut buf, false).unwrap();
    let spec = buf.clone();
    projections::fft_in_place(&mut buf, true).unwrap();
    let round_trip = x
        .iter()
        .zip(&buf)
        .map(|(a, b)| (a - b.re).abs().max(b.im.abs()))
        .fold(0.0f64, f64::max);
    assert!(round_trip < 1e-9, "round trip error {round_trip:.3e}");
    let time_energy: f64 = x.iter().map(|v| v * v).sum();
    let freq_energy: f64 = spec.iter().map(|c| c.norm_sqr()).sum::<f64>() / 1024.0;
    assert!((time_energy - freq_energy).abs() < 1e-9, "Parseval");

    let wave = Waveform {
        channels: 1,
        len: 1024,
        sample_rate: 64.0,
        data: x.clone(),
        subject_id: 0,
        modality_id: 0,
        label: None,
    };

    // Identity projection is bitwise equal.
    let out = apply(&ProjectionSpec::identity(), &wave).unwrap();
    assert_eq!(out.data, wave.data, "identity not bitwise equal");

    // Full-band filter passes everything.
    let full = ProjectionSpec {
        transforms: vec![Transform::SubbandFilter { f_lo: 0.0, f_hi: 32.0 }],
        seed: 5,
    };
    let out = apply(&full, &wave).unwrap();
    let max_err = out
        .data
        .iter()
        .zip(&wave.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_err < 1e-9, "full-band error {max_err:.3e}");

    // Amplitude scale is an exact scalar multiply.
    let scale = ProjectionSpec {
        transforms: vec![Transform::AmplitudeScale { factor: 2.0 }],
        seed: 5,
    };
    let out = apply(&scale, &wave).unwrap();
    for (a, b) in out.data.iter().zip(&wave.data) {
        assert_eq!(*a, 2.0 * b, "scale not exact");
    }

    // Warp grids stay strictly increasing over 10,000 seeds.
    for s in 0..10_000u64 {
        let mut rng = stream(301, "acc-warp", s);
        let g = warp_grid(256, 6, 0.05, &mut rng);
        for w in g.windows(2) {
            assert!(w[1] > w[0], "warp grid not increasing at seed {s}");
        }
    }

    pass(3, "signal-processing exactness");
}

// ------------------------------------------- criterion 4: smoke training

#[test]
fn criterion_04_training_smoke() {
    let ln_b = (32f64).ln();
    for (seed, s) in SEEDS.iter().zip(smoke_stats()) {
        assert!(
            s.cons_final < ln_b,
            "seed {seed}: final held-out consistency {:.4} >= ln 32",
            s.cons_final
        );
        assert!(
            s.cons_final < s.cons_init,
            "seed {seed}: no improvement over init ({:.4} vs {:.4})",
            s.cons_final,
            s.cons_init
        );
    }
    pass(4, "training smoke test");
}

// -------------------------------------- criterion 5: probe + retrieval

/// Mean MAP of random unit embeddings with the real label layout.
fn random_map_baseline(trials: u64) -> f64 {
    let corpus = smoke_corpus();
    let (train_fields, test_fields) = split_fields(corpus, 0.8);
    fn random_set(corpus: &Corpus, fields: &[usize], rng: &mut impl Rng) -> EmbeddingSet {
        let embeddings: Vec<Vec<f64>> = fields
            .iter()
            .map(|_| {
                let mut v: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= n);
                v
            })
            .collect();
        EmbeddingSet {
            embeddings,
            ids: fields.to_vec(),
            labels: fields.iter().map(|&f| corpus.recordings[f].label.unwrap()).collect(),
            subjects: fields.iter().map(|&f| corpus.recordings[f].subject_id).collect(),
        }
    }
    let mut acc = 0.0;
    for t in 0..trials {
        let mut rng = stream(500, "map-baseline", t);
        let gallery = random_set(corpus, &train_fields, &mut rng);
        let queries = random_set(corpus, &test_fields, &mut rng);
        acc += retrieval(&queries, &gallery).unwrap().map;
    }
    acc / trials as f64
}

#[test]
fn criterion_05_representation_quality() {
    let baseline = random_map_baseline(20);
    for (seed, s) in SEEDS.iter().zip(smoke_stats()) {
        assert!(
            s.probe_acc >= 0.5,
            "seed {seed}: macro accuracy {:.3} below 2x chance",
            s.probe_acc
        );
        assert!(
            s.map >= baseline + 0.15,
            "seed {seed}: MAP {:.3} not 0.15 above random baseline {:.3}",
            s.map,
            baseline
        );
    }
    pass(5, "representation quality");
}

// ----------------------------------- criterion 6: segmentation ablation

#[test]
fn criterion_06_segmentation_effect() {
    let full: f64 =
        smoke_stats().iter().map(|s| s.probe_acc).sum::<f64>() / SEEDS.len() as f64;
    let ablated: f64 = ablation_accs().iter().sum::<f64>() / SEEDS.len() as f64;
    assert!(
        full >= ablated,
        "full model mean accuracy {full:.3} below fixed-segmentation ablation {ablated:.3}"
    );
    pass(6, "segmentation-consistency effect");
}

// -------------------------------------------- criterion 7: stability

#[test]
fn criterion_07_cross_segmentation_stability() {
    for (seed, s) in SEEDS.iter().zip(smoke_stats()) {
        assert!(
            s.stab_final > s.stab_init,
            "seed {seed}: stability {:.4} not above init {:.4}",
            s.stab_final,
            s.stab_init
        );
    }
    pass(7, "cross-segmentation stability");
}

// -------------------------------------------- criterion 8: multimodal

#[test]
fn criterion_08_multimodal_alignment() {
    for (seed, (paired, mismatched)) in SEEDS.iter().zip(multimodal_gaps()) {
        assert!(
            paired - mismatched >= 0.1,
            "seed {seed}: paired {paired:.3} vs mismatched {mismatched:.3} gap below 0.1"
        );
    }
    pass(8, "multimodal alignment");
}

// ------------------------------------ criterion 9: determinism & persistence

#[test]
fn criterion_09_determinism_persistence() {
    let gen = SyntheticCorpusConfig {
        num_recordings: 16,
        len: 128,
        num_subjects: 8,
        ..Default::default()
    };
    let corpus = generate_corpus(&gen).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        total_steps: 20,
        warmup_steps: 4,
        checkpoint_interval: 10,
        encoder: EncoderConfig::tiny(),
        seg: SegSamplerConfig { m_min: 2, m_max: 4, ..Default::default() },
        ..Default::default()
    };

    // Identical runs produce identical metrics logs and checkpoints.
    let dir = tempfile::tempdir().unwrap();
    let a = evfield::trainer::pretrain(&corpus, &cfg, &dir.path().join("a")).unwrap();
    let b = evfield::trainer::pretrain(&corpus, &cfg, &dir.path().join("b")).unwrap();
    assert_eq!(
        std::fs::read(&a.metrics_path).unwrap(),
        std::fs::read(&b.metrics_path).unwrap(),
        "metrics logs differ between identical runs"
    );
    let final_a = std::fs::read(&a.final_checkpoint).unwrap();
    assert_eq!(final_a, std::fs::read(&b.final_checkpoint).unwrap());

    // Resuming from the midpoint reproduces the uninterrupted tail.
    let resumed = evfield::trainer::resume(
        &corpus,
        &dir.path().join("a").join("ck-000010.evck"),
        &dir.path().join("resumed"),
    )
    .unwrap();
    assert_eq!(
        final_a,
        std::fs::read(&resumed.final_checkpoint).unwrap(),
        "resumed run does not match the uninterrupted one"
    );

    // Container and checkpoint round trips are byte-identical.
    let c_bytes = evfield::container::container_bytes(&corpus.recordings, false).unwrap();
    let c_path = dir.path().join("rt.evfd");
    std::fs::write(&c_path, &c_bytes).unwrap();
    let (back, _) = evfield::container::read_container(&c_path).unwrap();
    assert_eq!(
        c_bytes,
        evfield::container::container_bytes(&back, false).unwrap(),
        "container round trip not byte-identical"
    );
    let ck = evfield::checkpoint::load(&a.final_checkpoint).unwrap();
    assert_eq!(
        final_a,
        evfield::checkpoint::checkpoint_bytes(&ck).unwrap(),
        "checkpoint round trip not byte-identical"
    );

    // A corrupted checksum makes the CLI exit with code 3.
    let mut corrupted = final_a.clone();
    let mid = corrupted.len() / 2;
    corrupted[mid] ^= 0x40;
    let bad_path = dir.path().join("bad.evck");
    std::fs::write(&bad_path, &corrupted).unwrap();
    let data_dir = dir.path().join("data");
    evfield::container::write_corpus(&data_dir, &corpus).unwrap();
    let cfg_path = dir.path().join("exp.toml");
    std::fs::write(&cfg_path, "[generator]\n[train]\n[probe]\n[eval]\n").unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_evfield"))
        .args([
            "encode",
            "--checkpoint",
            bad_path.to_str().unwrap(),
            "--data",
            data_dir.to_str().unwrap(),
            "--out",
            dir.path().join("emb.json").to_str().unwrap(),
            "--config",
            cfg_path.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3), "corrupted checkpoint exit code");

    pass(9, "determinism and persistence");
}

// ---------------------------------------- criterion 10: metric oracles

fn oracle_auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut acc = 0.0;
    for p in &pos {
        for n in &neg {
            acc += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(acc / (pos.len() * neg.len()) as f64)
}

fn oracle_ap(rel: &[bool]) -> Option<f64> {
    let total = rel.iter().filter(|&&r| r).count();
    if total == 0 {
        return None;
    }
    let mut hits = 0;
    let mut acc = 0.0;
    for (k, &r) in rel.iter().enumerate() {
        if r {
            hits += 1;
            acc += hits as f64 / (k + 1) as f64;
        }
    }
    Some(acc / total as f64)
}

fn oracle_ndcg(rel: &[bool]) -> Option<f64> {
    let total = rel.iter().filter(|&&r| r).count();
    if total == 0 {
        return None;
    }
    let dcg: f64 = rel
        .iter()
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..total).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    Some(dcg / idcg)
}

#[test]
fn criterion_10_metric_oracles() {
    let mut rng = stream(1000, "acc-metrics", 0);
    for case in 0..50 {
        let n = rng.gen_range(2..=20);
        // Quantized scores force ties through the midrank path.
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..8) as f64) / 8.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let got = auroc_binary(&scores, &labels);
        let want = oracle_auroc(&scores, &labels);
        match (got, want) {
            (None, None) => {}
            (Some(g), Some(w)) => {
                assert!((g - w).abs() < 1e-9, "case {case}: AUROC {g} vs oracle {w}")
            }
            other => panic!("case {case}: AUROC disagreement {other:?}"),
        }

        let rel: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        match (average_precision(&rel), oracle_ap(&rel)) {
            (None, None) => {}
            (Some(g), Some(w)) => {
                assert!((g - w).abs() < 1e-9, "case {case}: AP {g} vs oracle {w}")
            }
            other => panic!("case {case}: AP disagreement {other:?}"),
        }
        match (ndcg(&rel), oracle_ndcg(&rel)) {
            (None, None) => {}
            (Some(g), Some(w)) => {
                assert!((g - w).abs() < 1e-9, "case {case}: NDCG {g} vs oracle {w}")
            }
            other => panic!("case {case}: NDCG disagreement {other:?}"),
        }
    }
    pass(10, "metric correctness");
}
