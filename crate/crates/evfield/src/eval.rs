//! Evaluation: embedding extraction, linear-probe classification, retrieval
//! metrics, robustness sweeps, boundary alignment, and the ablation harness.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{self, EncoderParams};
use crate::projections::{apply, ProjectionSpec, Transform};
use crate::rng::stream;
use crate::segmentation::{sample_segmentation, SegSamplerConfig};
use crate::synthgen::{Corpus, Waveform};
use crate::tensor::Tensor;
use crate::trainer::{modalities_of, train_in_memory, Model, TrainConfig};
use crate::{Error, Result};

/// A set of unit-norm embeddings with their provenance.
#[derive(Clone, Debug)]
pub struct EmbeddingSet {
    /// N rows of d values each.
    pub embeddings: Vec<Vec<f64>>,
    /// Event-field indices in the source corpus.
    pub ids: Vec<usize>,
    pub labels: Vec<usize>,
    pub subjects: Vec<u32>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

fn renormalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Average the embeddings of `s_n` sampled segmentations, re-normalize, and
/// report the mean per-dimension variance across the samples.
pub fn extract_embedding(
    x: &Waveform,
    params: &EncoderParams,
    seg_cfg: &SegSamplerConfig,
    s_n: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, f64)> {
    if s_n == 0 {
        return Err(Error::Invalid("need at least one segmentation sample".into()));
    }
    let num_frames = x.len / params.config.downsample();
    let mut zs: Vec<Vec<f64>> = Vec::with_capacity(s_n);
    for _ in 0..s_n {
        let seg = sample_segmentation(num_frames, seg_cfg, rng, None)?;
        let out = encoder::encode(x, &seg, params)?;
        zs.push(out.z.data().to_vec());
    }
    let d = zs[0].len();
    let mut mean = vec![0.0; d];
    for z in &zs {
        for (m, v) in mean.iter_mut().zip(z) {
            *m += v / s_n as f64;
        }
    }
    let mut variance = 0.0;
    for k in 0..d {
        let var = zs.iter().map(|z| (z[k] - mean[k]).powi(2)).sum::<f64>() / s_n as f64;
        variance += var / d as f64;
    }
    renormalize(&mut mean);
    Ok((mean, variance))
}

/// Split event-field indices into train/test chunks by position.
pub fn split_fields(corpus: &Corpus, train_frac: f64) -> (Vec<usize>, Vec<usize>) {
    let n_fields = corpus.recordings.len() / modalities_of(corpus);
    let cut = ((n_fields as f64) * train_frac).round() as usize;
    ((0..cut).collect(), (cut..n_fields).collect())
}

/// Embed the given event fields; multimodal corpora average the per-modality
/// embeddings into one shared representation before re-normalizing.
pub fn embed_fields(
    model: &Model,
    corpus: &Corpus,
    fields: &[usize],
    seg_cfg: &SegSamplerConfig,
    s_n: usize,
    seed: u64,
) -> Result<EmbeddingSet> {
    let n_mod = modalities_of(corpus).min(model.encoders.len());
    let mut set = EmbeddingSet {
        embeddings: Vec::with_capacity(fields.len()),
        ids: fields.to_vec(),
        labels: Vec::with_capacity(fields.len()),
        subjects: Vec::with_capacity(fields.len()),
    };
    let data_mod = modalities_of(corpus);
    for &f in fields {
        let mut acc: Option<Vec<f64>> = None;
        let mut var_sum = 0.0;
        for m in 0..n_mod {
            let x = &corpus.recordings[f * data_mod + m];
            let mut rng = stream(seed, "embed", (f * n_mod + m) as u64);
            let (z, var) = extract_embedding(x, &model.encoders[m], seg_cfg, s_n, &mut rng)?;
            var_sum += var;
            acc = Some(match acc {
                None => z,
                Some(mut a) => {
                    for (ai, zi) in a.iter_mut().zip(&z) {
                        *ai += zi;
                    }
                    a
                }
            });
        }
        let _ = var_sum;
        let mut z = acc.unwrap();
        renormalize(&mut z);
        let rec = &corpus.recordings[f * data_mod];
        set.embeddings.push(z);
        set.labels.push(rec.label.ok_or_else(|| {
            Error::Invalid(format!("recording {} has no label; sidecar missing?", f * data_mod))
        })?);
        set.subjects.push(rec.subject_id);
    }
    Ok(set)
}

// ---------------------------------------------------------------- metrics

/// Binary AUROC via the rank statistic with midrank tie handling. Returns
/// None when either class is absent.
pub fn auroc_binary(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // midranks over ties
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..scores.len()).filter(|&k| labels[k]).map(|k| ranks[k]).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

/// One-vs-rest macro AUROC over classes present with both positives and
/// negatives.
pub fn macro_auroc(probs: &[Vec<f64>], labels: &[usize], num_classes: usize) -> f64 {
    let mut acc = 0.0;
    let mut n = 0;
    for k in 0..num_classes {
        let scores: Vec<f64> = probs.iter().map(|p| p[k]).collect();
        let bin: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        if let Some(a) = auroc_binary(&scores, &bin) {
            acc += a;
            n += 1;
        }
    }
    if n == 0 {
        0.5
    } else {
        acc / n as f64
    }
}

/// Macro F1 over classes present in the labels.
pub fn macro_f1(preds: &[usize], labels: &[usize], num_classes: usize) -> f64 {
    let mut acc = 0.0;
    let mut n = 0;
    for k in 0..num_classes {
        if !labels.contains(&k) {
            continue;
        }
        let tp = preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| **p == k && **l == k)
            .count();
        let fp = preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| **p == k && **l != k)
            .count();
        let fne = preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| **p != k && **l == k)
            .count();
        let denom = 2 * tp + fp + fne;
        acc += if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        };
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

/// Average precision of one ranked relevance list; None without relevant items.
pub fn average_precision(ranked_rel: &[bool]) -> Option<f64> {
    let total: usize = ranked_rel.iter().filter(|&&r| r).count();
    if total == 0 {
        return None;
    }
    let mut hits = 0;
    let mut acc = 0.0;
    for (i, &rel) in ranked_rel.iter().enumerate() {
        if rel {
            hits += 1;
            acc += hits as f64 / (i + 1) as f64;
        }
    }
    Some(acc / total as f64)
}

/// Binary-gain NDCG of one ranked relevance list; None without relevant items.
pub fn ndcg(ranked_rel: &[bool]) -> Option<f64> {
    let total: usize = ranked_rel.iter().filter(|&&r| r).count();
    if total == 0 {
        return None;
    }
    let dcg: f64 = ranked_rel
        .iter()
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..total).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    Some(dcg / idcg)
}

/// Retrieval report: MAP, NDCG, and queries excluded for lacking any
/// relevant gallery item.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub map: f64,
    pub ndcg: f64,
    pub queries: usize,
    pub excluded: usize,
}

fn ranked_relevance(query: &[f64], label: usize, gallery: &EmbeddingSet) -> Vec<bool> {
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    let sims: Vec<f64> = gallery
        .embeddings
        .iter()
        .map(|g| g.iter().zip(query).map(|(a, b)| a * b).sum())
        .collect();
    order.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap().then(a.cmp(&b)));
    order.into_iter().map(|i| gallery.labels[i] == label).collect()
}

/// Rank the gallery by cosine similarity for every query; relevance is a
/// shared label.
pub fn retrieval(queries: &EmbeddingSet, gallery: &EmbeddingSet) -> Result<RetrievalReport> {
    if gallery.is_empty() {
        return Err(Error::Invalid("empty gallery".into()));
    }
    let mut map_acc = 0.0;
    let mut ndcg_acc = 0.0;
    let mut used = 0;
    let mut excluded = 0;
    for (q, &label) in queries.embeddings.iter().zip(&queries.labels) {
        let rel = ranked_relevance(q, label, gallery);
        match (average_precision(&rel), ndcg(&rel)) {
            (Some(ap), Some(nd)) => {
                map_acc += ap;
                ndcg_acc += nd;
                used += 1;
            }
            _ => excluded += 1,
        }
    }
    if used == 0 {
        return Err(Error::Invalid("no query had a relevant gallery item".into()));
    }
    Ok(RetrievalReport {
        map: map_acc / used as f64,
        ndcg: ndcg_acc / used as f64,
        queries: used,
        excluded,
    })
}

// ------------------------------------------------------------------ probe

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub init_lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            max_iters: 10_000,
            tol: 1e-6,
            init_lr: 1.0,
        }
    }
}

/// A trained multinomial logistic-regression head.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Probe {
    pub dim: usize,
    pub num_classes: usize,
    /// d x K, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Probe {
    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        let k = self.num_classes;
        let mut logits = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            for j in 0..k {
                logits[j] += xi * self.weights[i * k + j];
            }
        }
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        for v in e.iter_mut() {
            *v /= z;
        }
        e
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let p = self.probs(x);
        (0..p.len())
            .max_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap())
            .unwrap()
    }
}

fn ce_loss(set: &EmbeddingSet, k: usize, w: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let n = set.len();
    let d = set.embeddings[0].len();
    let x = Tensor::from_vec(set.embeddings.concat(), &[n, d])?;
    let wt = Tensor::param(w.to_vec(), &[d, k])?;
    let bt = Tensor::param(b.to_vec(), &[k])?;
    let logits = x.matmul(&wt)?.add(&bt)?;
    let maxes: Vec<f64> = (0..n)
        .map(|i| {
            logits.data()[i * k..(i + 1) * k]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let m = Tensor::from_vec(maxes, &[n, 1])?;
    let lse = logits.sub(&m)?.exp().sum(Some(1), true)?.log()?.add(&m)?;
    let onehot: Vec<f64> = (0..n * k)
        .map(|idx| if set.labels[idx / k] == idx % k { 1.0 } else { 0.0 })
        .collect();
    let pos = logits
        .mul(&Tensor::from_vec(onehot, &[n, k])?)?
        .sum(Some(1), true)?;
    let loss = lse.sub(&pos)?.mean(None, false)?;
    loss.backward()?;
    Ok((loss.item(), wt.grad_or_zeros(), bt.grad_or_zeros()))
}

/// Full-batch gradient descent with backtracking; the returned trace is
/// monotone nonincreasing.
pub fn train_probe(train: &EmbeddingSet, cfg: &ProbeConfig) -> Result<(Probe, Vec<f64>)> {
    if train.is_empty() {
        return Err(Error::Invalid("empty probe training set".into()));
    }
    let k = train.labels.iter().max().unwrap() + 1;
    let classes: std::collections::BTreeSet<usize> = train.labels.iter().cloned().collect();
    if classes.len() < 2 {
        return Err(Error::Invalid("probe needs at least 2 classes in train".into()));
    }
    let d = train.embeddings[0].len();
    let mut w = vec![0.0; d * k];
    let mut b = vec![0.0; k];
    let mut lr = cfg.init_lr;
    let (mut loss, mut gw, mut gb) = ce_loss(train, k, &w, &b)?;
    let mut trace = vec![loss];
    for _ in 0..cfg.max_iters {
        let mut accepted = false;
        for _ in 0..40 {
            let wn: Vec<f64> = w.iter().zip(&gw).map(|(x, g)| x - lr * g).collect();
            let bn: Vec<f64> = b.iter().zip(&gb).map(|(x, g)| x - lr * g).collect();
            let (ln, gwn, gbn) = ce_loss(train, k, &wn, &bn)?;
            if ln <= loss {
                let delta = loss - ln;
                w = wn;
                b = bn;
                gw = gwn;
                gb = gbn;
                loss = ln;
                trace.push(loss);
                lr *= 1.1;
                accepted = true;
                if delta < cfg.tol {
                    return Ok((
                        Probe {
                            dim: d,
                            num_classes: k,
                            weights: w,
                            bias: b,
                        },
                        trace,
                    ));
                }
                break;
            }
            lr *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((
        Probe {
            dim: d,
            num_classes: k,
            weights: w,
            bias: b,
        },
        trace,
    ))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeReport {
    pub auroc: f64,
    pub f1: f64,
}

pub fn evaluate_probe(probe: &Probe, test: &EmbeddingSet) -> Result<ProbeReport> {
    let classes: std::collections::BTreeSet<usize> = test.labels.iter().cloned().collect();
    if classes.len() < 2 {
        return Err(Error::Invalid("probe needs at least 2 classes in test".into()));
    }
    let probs: Vec<Vec<f64>> = test.embeddings.iter().map(|e| probe.probs(e)).collect();
    let preds: Vec<usize> = test.embeddings.iter().map(|e| probe.predict(e)).collect();
    Ok(ProbeReport {
        auroc: macro_auroc(&probs, &test.labels, probe.num_classes),
        f1: macro_f1(&preds, &test.labels, probe.num_classes),
    })
}

pub fn linear_probe(
    train: &EmbeddingSet,
    test: &EmbeddingSet,
    cfg: &ProbeConfig,
) -> Result<(Probe, ProbeReport)> {
    let (probe, _) = train_probe(train, cfg)?;
    let report = evaluate_probe(&probe, test)?;
    Ok((probe, report))
}

// ------------------------------------------------------------- robustness

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Perturbation {
    pub name: String,
    pub transform: Transform,
}

/// The standard three-perturbation suite at one severity in [0, 1].
pub fn standard_suite(severity: f64, len: usize) -> Vec<Perturbation> {
    vec![
        Perturbation {
            name: "noise".into(),
            transform: Transform::NoiseInject {
                sigma: 0.5 * severity,
            },
        },
        Perturbation {
            name: "time_warp".into(),
            transform: Transform::TimeWarp {
                num_knots: 6,
                max_disp: 0.05 * severity,
            },
        },
        Perturbation {
            name: "freq_mask".into(),
            transform: Transform::FreqDropout {
                num_bands: if severity > 0.0 { 2 } else { 0 },
                band_len: ((len as f64 / 16.0) * severity).round() as usize,
            },
        },
    ]
}

/// Re-embed perturbed test fields and re-score the frozen probe; one AUROC
/// per perturbation.
#[allow(clippy::too_many_arguments)]
pub fn robustness_eval(
    model: &Model,
    corpus: &Corpus,
    test_fields: &[usize],
    probe: &Probe,
    suite: &[Perturbation],
    seg_cfg: &SegSamplerConfig,
    s_n: usize,
    seed: u64,
) -> Result<Vec<(String, ProbeReport)>> {
    let mut out = Vec::with_capacity(suite.len());
    for (pi, pert) in suite.iter().enumerate() {
        let mut perturbed = corpus_clone_shell(corpus);
        for (ri, rec) in corpus.recordings.iter().enumerate() {
            let spec = ProjectionSpec {
                transforms: vec![pert.transform.clone()],
                seed: stream(seed, "robust", (pi * corpus.recordings.len() + ri) as u64).gen(),
            };
            perturbed.recordings.push(apply(&spec, rec)?);
        }
        let set = embed_fields(model, &perturbed, test_fields, seg_cfg, s_n, seed)?;
        out.push((pert.name.clone(), evaluate_probe(probe, &set)?));
    }
    Ok(out)
}

fn corpus_clone_shell(corpus: &Corpus) -> Corpus {
    Corpus {
        recordings: Vec::with_capacity(corpus.recordings.len()),
        sidecar: corpus.sidecar.clone(),
        multimodal: corpus.multimodal,
    }
}

// ------------------------------------------------------- boundary alignment

/// Indices of local maxima strictly above `threshold`.
pub fn boundary_peaks(p: &[f64], threshold: f64) -> Vec<usize> {
    (0..p.len())
        .filter(|&i| {
            p[i] > threshold
                && (i == 0 || p[i] >= p[i - 1])
                && (i + 1 == p.len() || p[i] > p[i + 1])
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryReport {
    /// Mean frame distance from true onsets to the nearest predicted peak.
    pub score: f64,
    /// The same score for uniformly random boundary sets (1000 draws).
    pub baseline: f64,
    /// Recordings that produced no peaks at all (scored worst-case F).
    pub flagged: usize,
    pub recordings: usize,
}

fn onset_distance(onsets: &[usize], peaks: &[usize], worst: f64) -> f64 {
    if peaks.is_empty() {
        return worst;
    }
    onsets
        .iter()
        .map(|&o| {
            peaks
                .iter()
                .map(|&p| (p as f64 - o as f64).abs())
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / onsets.len() as f64
}

/// Compare predicted boundary peaks against ground-truth event onsets.
pub fn boundary_alignment(
    params: &EncoderParams,
    corpus: &Corpus,
    threshold: f64,
    seed: u64,
) -> Result<BoundaryReport> {
    let d_factor = params.config.downsample();
    let mut score_acc = 0.0;
    let mut base_acc = 0.0;
    let mut used = 0;
    let mut flagged = 0;
    for rec in &corpus.sidecar {
        if rec.events.is_empty() || rec.modality_id != 0 {
            continue;
        }
        let x = &corpus.recordings[rec.recording];
        let f = x.len / d_factor;
        let features = encoder::extract_local_features(x, params)?;
        let p = encoder::predict_boundaries(&features, params)?;
        let peaks = boundary_peaks(p.data(), threshold);
        let onsets: Vec<usize> = rec
            .events
            .iter()
            .map(|e| {
                (((e.tau * x.sample_rate) / d_factor as f64).round() as usize).min(f - 1)
            })
            .collect();
        if peaks.is_empty() {
            flagged += 1;
        }
        score_acc += onset_distance(&onsets, &peaks, f as f64);

        // Monte Carlo baseline with the same number of random boundaries
        let n_peaks = peaks.len().max(1);
        let mut rng = stream(seed, "bnd-base", rec.recording as u64);
        let mut base = 0.0;
        const DRAWS: usize = 1000;
        for _ in 0..DRAWS {
            let rand_peaks: Vec<usize> = (0..n_peaks).map(|_| rng.gen_range(0..f)).collect();
            base += onset_distance(&onsets, &rand_peaks, f as f64);
        }
        base_acc += base / DRAWS as f64;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Invalid("no labeled events in corpus".into()));
    }
    Ok(BoundaryReport {
        score: score_acc / used as f64,
        baseline: base_acc / used as f64,
        flagged,
        recordings: used,
    })
}

// --------------------------------------------------------------- ablation

/// The four standard variants, differing from the base config only in the
/// ablated component.
pub fn ablation_variants(base: &TrainConfig) -> Vec<(&'static str, TrainConfig)> {
    let mut no_seg = base.clone();
    no_seg.fixed_uniform_segmentation = true;
    let mut no_proj = base.clone();
    no_proj.projections = crate::projections::ProjectionFamilyConfig::disabled();
    let mut no_interact = base.clone();
    no_interact.encoder.use_interaction = false;
    vec![
        ("full", base.clone()),
        ("w/o seg", no_seg),
        ("w/o proj", no_proj),
        ("w/o interact", no_interact),
    ]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

/// Train every variant over the given seeds and report probe AUROC
/// mean +/- std per variant.
pub fn ablate(
    corpus: &Corpus,
    base: &TrainConfig,
    seeds: &[u64],
    probe_cfg: &ProbeConfig,
    s_n: usize,
) -> Result<Vec<AblationRow>> {
    let (train_fields, test_fields) = split_fields(corpus, 0.8);
    let mut rows = Vec::new();
    for (name, cfg) in ablation_variants(base) {
        let mut values = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut run = cfg.clone();
            run.seed = seed;
            let model = train_in_memory(corpus, &run)?;
            let tr = embed_fields(&model, corpus, &train_fields, &run.seg, s_n, seed)?;
            let te = embed_fields(&model, corpus, &test_fields, &run.seg, s_n, seed)?;
            let (_, report) = linear_probe(&tr, &te, probe_cfg)?;
            values.push(report.auroc);
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64)
            .sqrt();
        rows.push(AblationRow {
            name: name.to_string(),
            mean,
            std,
            values,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::synthgen::{generate_corpus, SyntheticCorpusConfig};

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let mut v = v;
        renormalize(&mut v);
        v
    }

    fn toy_set(embeddings: Vec<Vec<f64>>, labels: Vec<usize>) -> EmbeddingSet {
        let n = embeddings.len();
        EmbeddingSet {
            embeddings: embeddings.into_iter().map(unit).collect(),
            ids: (0..n).collect(),
            labels,
            subjects: vec![0; n],
        }
    }

    #[test]
    fn auroc_hand_cases() {
        assert_eq!(
            auroc_binary(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]),
            Some(1.0)
        );
        assert_eq!(
            auroc_binary(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]),
            Some(0.0)
        );
        assert_eq!(
            auroc_binary(&[0.5, 0.5, 0.5, 0.5], &[true, true, false, false]),
            Some(0.5)
        );
        assert_eq!(auroc_binary(&[0.5, 0.6], &[true, true]), None);
    }

    #[test]
    fn auroc_matches_pair_counting_oracle() {
        let mut rng = stream(1, "auroc", 0);
        for _ in 0..50 {
            let n = rng.gen_range(4..20);
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..10) as f64) / 10.0).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            let Some(fast) = auroc_binary(&scores, &labels) else {
                continue;
            };
            // definitional: P(score_pos > score_neg) + 0.5 P(tie)
            let mut wins = 0.0;
            let mut pairs = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if labels[i] && !labels[j] {
                        pairs += 1.0;
                        if scores[i] > scores[j] {
                            wins += 1.0;
                        } else if scores[i] == scores[j] {
                            wins += 0.5;
                        }
                    }
                }
            }
            assert!((fast - wins / pairs).abs() < 1e-9);
        }
    }

    #[test]
    fn ap_and_ndcg_hand_cases() {
        assert_eq!(average_precision(&[true, true, false]), Some(1.0));
        assert_eq!(ndcg(&[true, true, false]), Some(1.0));
        // single relevant item at rank 2 of 2
        assert_eq!(average_precision(&[false, true]), Some(0.5));
        assert_eq!(average_precision(&[false, false]), None);
        let n = ndcg(&[false, true]).unwrap();
        assert!((n - (1.0 / 3.0f64.log2())).abs() < 1e-12);
    }

    #[test]
    fn retrieval_perfect_and_ranked() {
        let gallery = toy_set(
            vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0], vec![0.1, 0.9]],
            vec![0, 0, 1, 1],
        );
        let queries = toy_set(vec![vec![1.0, 0.05], vec![0.05, 1.0]], vec![0, 1]);
        let r = retrieval(&queries, &gallery).unwrap();
        assert!((r.map - 1.0).abs() < 1e-12);
        assert!((r.ndcg - 1.0).abs() < 1e-12);
        assert_eq!(r.excluded, 0);
    }

    #[test]
    fn retrieval_excludes_queries_without_relevant_items() {
        let gallery = toy_set(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 0]);
        let queries = toy_set(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 3]);
        let r = retrieval(&queries, &gallery).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.queries, 1);
    }

    #[test]
    fn probe_separable_is_perfect() {
        let mut rng = stream(2, "sep", 0);
        let mut emb = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let class = i % 2;
            let base: [f64; 3] = if class == 0 { [1.0, 0.0, 0.2] } else { [0.0, 1.0, -0.2] };
            emb.push(vec![
                base[0] + rng.gen_range(-0.05..0.05),
                base[1] + rng.gen_range(-0.05..0.05),
                base[2] + rng.gen_range(-0.05..0.05),
            ]);
            labels.push(class);
        }
        let set = toy_set(emb, labels);
        let (probe, trace) = train_probe(&set, &ProbeConfig::default()).unwrap();
        // monotone nonincreasing trace
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        let report = evaluate_probe(&probe, &set).unwrap();
        assert!((report.auroc - 1.0).abs() < 1e-9, "{}", report.auroc);
        assert!((report.f1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn probe_shuffled_labels_near_chance() {
        let mut rng = stream(3, "shuf", 0);
        let n = 60;
        let emb: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let cfg = ProbeConfig {
            max_iters: 200,
            ..Default::default()
        };
        let mut mean = 0.0;
        let shuffles = 20;
        for s in 0..shuffles {
            let mut srng = stream(4, "labels", s);
            let labels: Vec<usize> = (0..n).map(|_| srng.gen_range(0..2)).collect();
            let set = toy_set(emb.clone(), labels);
            let (probe, _) = train_probe(&set, &cfg).unwrap();
            // score on a fresh random-labeled copy to avoid train-set optimism
            let mut trng = stream(5, "labels2", s);
            let test_labels: Vec<usize> = (0..n).map(|_| trng.gen_range(0..2)).collect();
            let test = toy_set(emb.clone(), test_labels);
            mean += evaluate_probe(&probe, &test).unwrap().auroc / shuffles as f64;
        }
        assert!((mean - 0.5).abs() < 0.05, "chance-level mean {mean}");
    }

    #[test]
    fn single_class_split_errors() {
        let set = toy_set(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 0]);
        assert!(train_probe(&set, &ProbeConfig::default()).is_err());
    }

    fn small_corpus(seed: u64) -> Corpus {
        generate_corpus(&SyntheticCorpusConfig {
            num_recordings: 12,
            len: 128,
            num_subjects: 4,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn tiny_model(corpus: &Corpus) -> (Model, TrainConfig) {
        let cfg = TrainConfig {
            batch_size: 4,
            total_steps: 2,
            warmup_steps: 1,
            encoder: EncoderConfig::tiny(),
            seg: SegSamplerConfig {
                m_min: 2,
                m_max: 4,
                ..Default::default()
            },
            ..Default::default()
        };
        (train_in_memory(corpus, &cfg).unwrap(), cfg)
    }

    #[test]
    fn extract_single_sample_has_zero_variance() {
        let corpus = small_corpus(6);
        let (model, cfg) = tiny_model(&corpus);
        let mut rng = stream(6, "ex", 0);
        let (z, var) = extract_embedding(
            &corpus.recordings[0],
            &model.encoders[0],
            &cfg.seg,
            1,
            &mut rng,
        )
        .unwrap();
        assert_eq!(var, 0.0);
        let norm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn extract_variance_matches_two_pass_oracle() {
        let corpus = small_corpus(7);
        let (model, cfg) = tiny_model(&corpus);
        let x = &corpus.recordings[1];
        let s_n = 5;
        let (_, var) = extract_embedding(
            x,
            &model.encoders[0],
            &cfg.seg,
            s_n,
            &mut stream(7, "ex", 0),
        )
        .unwrap();
        // identical rng stream replays the same segmentations
        let mut rng = stream(7, "ex", 0);
        let f = x.len / cfg.encoder.downsample();
        let mut zs = Vec::new();
        for _ in 0..s_n {
            let seg = sample_segmentation(f, &cfg.seg, &mut rng, None).unwrap();
            zs.push(encoder::encode(x, &seg, &model.encoders[0]).unwrap().z.data().to_vec());
        }
        let d = zs[0].len();
        let mut expect = 0.0;
        for k in 0..d {
            let mu: f64 = zs.iter().map(|z| z[k]).sum::<f64>() / s_n as f64;
            expect += zs.iter().map(|z| (z[k] - mu).powi(2)).sum::<f64>() / s_n as f64 / d as f64;
        }
        assert!((var - expect).abs() < 1e-12);
        assert!(var >= 0.0);
    }

    #[test]
    fn embed_fields_is_deterministic() {
        let corpus = small_corpus(8);
        let (model, cfg) = tiny_model(&corpus);
        let fields = [0, 1, 2];
        let a = embed_fields(&model, &corpus, &fields, &cfg.seg, 2, 9).unwrap();
        let b = embed_fields(&model, &corpus, &fields, &cfg.seg, 2, 9).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn zero_severity_suite_matches_clean() {
        let corpus = small_corpus(9);
        let (model, cfg) = tiny_model(&corpus);
        let (train_fields, test_fields) = split_fields(&corpus, 0.5);
        let tr = embed_fields(&model, &corpus, &train_fields, &cfg.seg, 1, 1).unwrap();
        let te = embed_fields(&model, &corpus, &test_fields, &cfg.seg, 1, 1).unwrap();
        let cfg_p = ProbeConfig {
            max_iters: 100,
            ..Default::default()
        };
        let (probe, clean) = linear_probe(&tr, &te, &cfg_p).unwrap();
        let suite = standard_suite(0.0, corpus.recordings[0].len);
        let rows = robustness_eval(&model, &corpus, &test_fields, &probe, &suite, &cfg.seg, 1, 1)
            .unwrap();
        assert_eq!(rows.len(), 3);
        for (name, r) in rows {
            assert!(
                (r.auroc - clean.auroc).abs() < 1e-9,
                "{name}: {} vs {}",
                r.auroc,
                clean.auroc
            );
        }
    }

    #[test]
    fn boundary_peaks_and_perfect_alignment() {
        let p = vec![0.1, 0.9, 0.2, 0.3, 0.8, 0.1];
        assert_eq!(boundary_peaks(&p, 0.5), vec![1, 4]);
        assert_eq!(boundary_peaks(&vec![0.2; 6], 0.5), Vec::<usize>::new());
        assert_eq!(onset_distance(&[1, 4], &[1, 4], 6.0), 0.0);
        assert_eq!(onset_distance(&[2], &[], 6.0), 6.0);
    }

    #[test]
    fn boundary_alignment_runs_and_beats_nothing() {
        let corpus = small_corpus(10);
        let (model, _) = tiny_model(&corpus);
        let report = boundary_alignment(&model.encoders[0], &corpus, 0.5, 11).unwrap();
        assert!(report.score >= 0.0);
        assert!(report.baseline > 0.0);
        assert!(report.recordings > 0);
    }

    #[test]
    fn ablation_variants_differ_only_in_ablated_component() {
        let base = TrainConfig::default();
        let variants = ablation_variants(&base);
        let names: Vec<&str> = variants.iter().map(|(n, _)| *n).collect();
        assert_eq!(names, vec!["full", "w/o seg", "w/o proj", "w/o interact"]);
        assert_eq!(variants[0].1, base);
        let mut expect_seg = base.clone();
        expect_seg.fixed_uniform_segmentation = true;
        assert_eq!(variants[1].1, expect_seg);
        let mut expect_proj = base.clone();
        expect_proj.projections = crate::projections::ProjectionFamilyConfig::disabled();
        assert_eq!(variants[2].1, expect_proj);
        let mut expect_int = base.clone();
        expect_int.encoder.use_interaction = false;
        assert_eq!(variants[3].1, expect_int);
    }
}
