//! Pretraining: batch assembly, AdamW with warmup-cosine scheduling and
//! global-norm gradient clipping, the training loop, and checkpointing.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_without_replacement;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::encoder::{self, EncoderConfig, EncoderParams};
use crate::losses::{self, LossParts, LossWeights};
use crate::projections::{sample_projection, ProjectionFamilyConfig};
use crate::rng::stream;
use crate::segmentation::{sample_segmentation, uniform_segmentation, SegSamplerConfig, Segmentation};
use crate::synthgen::{Corpus, Waveform};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub floor_lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub seg: SegSamplerConfig,
    pub projections: ProjectionFamilyConfig,
    pub encoder: EncoderConfig,
    pub multimodal: bool,
    /// Use one fixed uniform segmentation for both views (ablation).
    pub fixed_uniform_segmentation: bool,
    /// Keep same-subject recordings as negatives instead of masking them.
    pub hard_negative_subjects: bool,
    pub log_interval: u64,
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            total_steps: 500,
            warmup_steps: 50,
            peak_lr: 3e-3,
            floor_lr: 1e-5,
            weight_decay: 0.01,
            clip_norm: 1.0,
            seed: 7,
            weights: LossWeights::default(),
            seg: SegSamplerConfig::default(),
            projections: ProjectionFamilyConfig::default(),
            encoder: EncoderConfig::default(),
            multimodal: false,
            fixed_uniform_segmentation: false,
            hard_negative_subjects: false,
            log_interval: 10,
            checkpoint_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::Config("warmup_steps must not exceed total_steps".into()));
        }
        if self.peak_lr <= 0.0 || self.floor_lr <= 0.0 || self.floor_lr > self.peak_lr {
            return Err(Error::Config("need 0 < floor_lr <= peak_lr".into()));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if self.log_interval == 0 || self.checkpoint_interval == 0 {
            return Err(Error::Config("intervals must be positive".into()));
        }
        self.weights.validate()?;
        self.encoder.validate()
    }
}

/// One batch item: for every modality of one latent event field, two
/// (projected view, segmentation) pairs.
pub struct BatchItem {
    pub subject: u32,
    pub views: Vec<(Waveform, Segmentation, Waveform, Segmentation)>,
}

pub struct Batch {
    pub items: Vec<BatchItem>,
    /// Square negative-exclusion mask over items.
    pub mask: Vec<bool>,
}

/// Number of recordings per latent event field in the corpus.
pub fn modalities_of(corpus: &Corpus) -> usize {
    if corpus.multimodal {
        corpus
            .recordings
            .iter()
            .map(|w| w.modality_id as usize + 1)
            .max()
            .unwrap_or(1)
    } else {
        1
    }
}

fn make_views(
    x: &Waveform,
    cfg: &TrainConfig,
    num_frames: usize,
    rng: &mut impl Rng,
) -> Result<(Waveform, Segmentation, Waveform, Segmentation)> {
    let nyquist = x.sample_rate / 2.0;
    let p1 = sample_projection(&cfg.projections, nyquist, rng);
    let p2 = sample_projection(&cfg.projections, nyquist, rng);
    let x1 = crate::projections::apply(&p1, x)?;
    let x2 = crate::projections::apply(&p2, x)?;
    let (s1, s2) = if cfg.fixed_uniform_segmentation {
        let m = (cfg.seg.m_min + cfg.seg.m_max) / 2;
        (
            uniform_segmentation(num_frames, m.max(1)),
            uniform_segmentation(num_frames, m.max(1)),
        )
    } else {
        (
            sample_segmentation(num_frames, &cfg.seg, rng, None)?,
            sample_segmentation(num_frames, &cfg.seg, rng, None)?,
        )
    };
    Ok((x1, s1, x2, s2))
}

/// Assemble a batch from a pool of event-field indices; deterministic in the
/// provided stream index.
pub fn build_batch_from(
    corpus: &Corpus,
    cfg: &TrainConfig,
    pool: &[usize],
    stream_label: &str,
    stream_index: u64,
) -> Result<Batch> {
    let n_mod = modalities_of(corpus);
    let b = cfg.batch_size;
    if b < 2 {
        return Err(Error::Config("batch_size must be >= 2".into()));
    }
    if pool.len() < b {
        return Err(Error::Invalid(format!(
            "pool of {} event fields cannot fill a batch of {b}",
            pool.len()
        )));
    }
    let num_frames = corpus.recordings[0].len / cfg.encoder.downsample();
    let mut pick_rng = stream(cfg.seed, stream_label, stream_index);
    let chosen = sample_without_replacement(&mut pick_rng, pool.len(), b);
    let mut items = Vec::with_capacity(b);
    for (slot, k) in chosen.iter().enumerate() {
        let field = pool[k];
        let mut item_rng = stream(
            cfg.seed,
            &format!("{stream_label}-item"),
            stream_index * 65536 + slot as u64,
        );
        let mut views = Vec::with_capacity(n_mod);
        for m in 0..n_mod {
            let x = &corpus.recordings[field * n_mod + m];
            views.push(make_views(x, cfg, num_frames, &mut item_rng)?);
        }
        items.push(BatchItem {
            subject: corpus.recordings[field * n_mod].subject_id,
            views,
        });
    }
    let subjects: Vec<u32> = items.iter().map(|i| i.subject).collect();
    let mask = if cfg.hard_negative_subjects {
        vec![false; b * b]
    } else {
        losses::same_subject_mask(&subjects)
    };
    Ok(Batch { items, mask })
}

/// Training batch for a step: sampled over all event fields.
pub fn build_batch(corpus: &Corpus, cfg: &TrainConfig, step: u64) -> Result<Batch> {
    let n_fields = corpus.recordings.len() / modalities_of(corpus);
    let pool: Vec<usize> = (0..n_fields).collect();
    build_batch_from(corpus, cfg, &pool, "batch", step)
}

/// Warmup-cosine schedule: linear 0 -> peak over warmup steps, then cosine
/// from peak down to the floor.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::Invalid(format!(
            "step {step} beyond total_steps {}",
            cfg.total_steps
        )));
    }
    if step < cfg.warmup_steps {
        return Ok(cfg.peak_lr * step as f64 / cfg.warmup_steps as f64);
    }
    let decay_len = (cfg.total_steps - cfg.warmup_steps).max(1) as f64;
    let progress = (step - cfg.warmup_steps) as f64 / decay_len;
    Ok(cfg.floor_lr
        + 0.5 * (cfg.peak_lr - cfg.floor_lr) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Scale all gradients so the global l2 norm is at most `clip_norm`;
/// returns the applied scale.
pub fn clip_gradients(grads: &mut BTreeMap<String, Vec<f64>>, clip_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for (name, g) in grads.iter() {
        for &v in g {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient in {name}")));
            }
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm <= clip_norm {
        return Ok(1.0);
    }
    let scale = clip_norm / norm;
    for g in grads.values_mut() {
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    Ok(scale)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One AdamW update with bias correction and decoupled weight decay.
/// Returns replacement tensors for every parameter.
pub fn adamw_step(
    params: &BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<BTreeMap<String, Tensor>> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let mut out = BTreeMap::new();
    for (name, p) in params {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("missing gradient for {name}")))?;
        if g.len() != p.numel() {
            return Err(Error::Invalid(format!("gradient shape mismatch for {name}")));
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let mut data = p.data().to_vec();
        for i in 0..g.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            data[i] -= lr * weight_decay * data[i] + lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
        out.insert(name.clone(), Tensor::param(data, p.shape())?);
    }
    Ok(out)
}

/// One encoder per modality; parameters are namespaced `enc{m}.` in the
/// optimizer and checkpoints.
pub struct Model {
    pub encoders: Vec<EncoderParams>,
}

impl Model {
    pub fn init(cfg: &TrainConfig, n_mod: usize) -> Result<Model> {
        let encoders = (0..n_mod)
            .map(|m| EncoderParams::init(&cfg.encoder, &mut stream(cfg.seed, "init", m as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Model { encoders })
    }

    pub fn named_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (m, enc) in self.encoders.iter().enumerate() {
            for (name, t) in enc.named() {
                out.insert(format!("enc{m}.{name}"), t.clone());
            }
        }
        out
    }

    pub fn set_named_tensors(&mut self, flat: BTreeMap<String, Tensor>) -> Result<()> {
        for (m, enc) in self.encoders.iter_mut().enumerate() {
            let prefix = format!("enc{m}.");
            let mut sub = BTreeMap::new();
            for (name, t) in &flat {
                if let Some(rest) = name.strip_prefix(&prefix) {
                    sub.insert(rest.to_string(), t.clone());
                }
            }
            enc.replace_all(sub)?;
        }
        Ok(())
    }

    pub fn zero_grads(&self) {
        for enc in &self.encoders {
            enc.zero_grads();
        }
    }
}

/// Per-term values for one step, emitted to the metrics log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub lr: f64,
    pub total: f64,
    pub cons: f64,
    pub sparsity: f64,
    pub smoothness: f64,
    pub kl: f64,
    pub modal_cons: f64,
    pub align: f64,
    pub grad_norm: f64,
    pub clip_scale: f64,
}

struct ForwardOut {
    parts: LossParts,
}

/// Forward a batch through the model and assemble the loss terms.
fn forward(model: &Model, batch: &Batch, cfg: &TrainConfig) -> Result<ForwardOut> {
    let n_mod = model.encoders.len();
    let mut cons: Option<Tensor> = None;
    let mut modal_cons = Vec::new();
    let mut first_view_z: Vec<Tensor> = Vec::new(); // per modality [B, d]
    let mut seg_terms: Vec<(Tensor, Tensor, Tensor)> = Vec::new();
    for m in 0..n_mod {
        let enc = &model.encoders[m];
        let mut z1_rows = Vec::new();
        let mut z2_rows = Vec::new();
        let mut sparsities = Vec::new();
        let mut smooths = Vec::new();
        let mut kls = Vec::new();
        for item in &batch.items {
            let (x1, s1, x2, s2) = &item.views[m];
            let o1 = encoder::encode(x1, s1, enc)?;
            let o2 = encoder::encode(x2, s2, enc)?;
            sparsities.push(losses::sparsity_term(&o1.boundary)?);
            sparsities.push(losses::sparsity_term(&o2.boundary)?);
            smooths.push(losses::smoothness_term(&o1.boundary)?);
            smooths.push(losses::smoothness_term(&o2.boundary)?);
            kls.push(losses::kl_agreement(&o1.boundary, &o2.boundary)?);
            z1_rows.push(o1.z);
            z2_rows.push(o2.z);
        }
        let z1 = Tensor::stack_rows(&z1_rows);
        let z2 = Tensor::stack_rows(&z2_rows);
        let nce = losses::info_nce(&z1, &z2, cfg.weights.temperature, &batch.mask)?;
        if m == 0 {
            cons = Some(nce);
        } else {
            modal_cons.push(nce);
        }
        first_view_z.push(z1);
        let avg = |v: Vec<Tensor>| -> Result<Tensor> {
            let n = v.len() as f64;
            let mut acc = v[0].clone();
            for t in &v[1..] {
                acc = acc.add(t)?;
            }
            Ok(acc.scale(1.0 / n))
        };
        seg_terms.push((avg(sparsities)?, avg(smooths)?, avg(kls)?));
    }
    // average segmentation terms over modalities
    let navg = |idx: usize| -> Result<Tensor> {
        let mut acc = match idx {
            0 => seg_terms[0].0.clone(),
            1 => seg_terms[0].1.clone(),
            _ => seg_terms[0].2.clone(),
        };
        for st in &seg_terms[1..] {
            let t = match idx {
                0 => &st.0,
                1 => &st.1,
                _ => &st.2,
            };
            acc = acc.add(t)?;
        }
        Ok(acc.scale(1.0 / seg_terms.len() as f64))
    };
    let align = if n_mod >= 2 {
        Some(losses::multimodal_align(&first_view_z)?)
    } else {
        None
    };
    Ok(ForwardOut {
        parts: LossParts {
            cons: cons.unwrap(),
            sparsity: Some(navg(0)?),
            smoothness: Some(navg(1)?),
            kl: Some(navg(2)?),
            modal_cons,
            align,
        },
    })
}

/// Forward + backward + clip + AdamW on one batch.
pub fn train_step(
    model: &mut Model,
    batch: &Batch,
    cfg: &TrainConfig,
    opt: &mut OptimizerState,
    step: u64,
) -> Result<LossReport> {
    let lr = lr_at(step, cfg)?;
    model.zero_grads();
    let fwd = forward(model, batch, cfg)?;
    let total = losses::total_loss(&fwd.parts, &cfg.weights)?;
    total.backward()?;
    let params = model.named_tensors();
    let mut grads: BTreeMap<String, Vec<f64>> = params
        .iter()
        .map(|(n, t)| (n.clone(), t.grad_or_zeros()))
        .collect();
    let mut sq = 0.0;
    for g in grads.values() {
        for &v in g {
            sq += v * v;
        }
    }
    let grad_norm = sq.sqrt();
    let clip_scale = clip_gradients(&mut grads, cfg.clip_norm)?;
    let updated = adamw_step(&params, &grads, opt, lr, cfg.weight_decay)?;
    model.set_named_tensors(updated)?;
    let scalar = |t: &Option<Tensor>| t.as_ref().map_or(0.0, |t| t.item());
    Ok(LossReport {
        step,
        lr,
        total: total.item(),
        cons: fwd.parts.cons.item(),
        sparsity: scalar(&fwd.parts.sparsity),
        smoothness: scalar(&fwd.parts.smoothness),
        kl: scalar(&fwd.parts.kl),
        modal_cons: fwd.parts.modal_cons.iter().map(|t| t.item()).sum(),
        align: scalar(&fwd.parts.align),
        grad_norm,
        clip_scale,
    })
}

/// Consistency loss on a held-out batch (fresh views from a disjoint
/// stream), forward only. Uses the tail 20% of event fields as the pool.
pub fn heldout_cons(model: &Model, corpus: &Corpus, cfg: &TrainConfig, tag: u64) -> Result<f64> {
    let n_fields = corpus.recordings.len() / modalities_of(corpus);
    let start = n_fields - (n_fields / 5).max(cfg.batch_size.min(n_fields));
    let pool: Vec<usize> = (start..n_fields).collect();
    let batch = build_batch_from(corpus, cfg, &pool, "heldout", tag)?;
    let fwd = forward(model, &batch, cfg)?;
    Ok(fwd.parts.cons.item())
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn save_checkpoint(path: &Path, model: &Model, opt: &OptimizerState, cfg: &TrainConfig, step: u64) -> Result<()> {
    let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)> = model
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, (t.shape().to_vec(), t.data().to_vec())))
        .collect();
    for (n, m) in &opt.m {
        tensors.insert(format!("opt.m.{n}"), (vec![m.len()], m.clone()));
    }
    for (n, v) in &opt.v {
        tensors.insert(format!("opt.v.{n}"), (vec![v.len()], v.clone()));
    }
    let config = serde_json::to_value(cfg)
        .map_err(|e| Error::Invalid(format!("unserializable config: {e}")))?;
    checkpoint::save(
        path,
        &Checkpoint {
            step,
            rng_seed: cfg.seed,
            config,
            tensors,
        },
    )
}

/// Rebuild (config, model, optimizer, step) from a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<(TrainConfig, Model, OptimizerState, u64)> {
    let ck = checkpoint::load(path)?;
    let cfg: TrainConfig = serde_json::from_value(ck.config.clone())
        .map_err(|e| Error::corrupt(path, format!("bad config snapshot: {e}")))?;
    cfg.validate()?;
    let n_mod = (0..)
        .take_while(|m| ck.tensors.keys().any(|k| k.starts_with(&format!("enc{m}."))))
        .count();
    if n_mod == 0 {
        return Err(Error::corrupt(path, "no encoder tensors"));
    }
    let mut model = Model::init(&cfg, n_mod)?;
    let mut flat = BTreeMap::new();
    let mut opt = OptimizerState {
        step: ck.step,
        ..Default::default()
    };
    for (name, (shape, data)) in &ck.tensors {
        if let Some(rest) = name.strip_prefix("opt.m.") {
            opt.m.insert(rest.to_string(), data.clone());
        } else if let Some(rest) = name.strip_prefix("opt.v.") {
            opt.v.insert(rest.to_string(), data.clone());
        } else {
            flat.insert(name.clone(), Tensor::param(data.clone(), shape)?);
        }
    }
    model.set_named_tensors(flat)?;
    Ok((cfg, model, opt, ck.step))
}

pub struct TrainSummary {
    pub final_step: u64,
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub last_report: Option<LossReport>,
}

fn run_loop(
    corpus: &Corpus,
    cfg: &TrainConfig,
    model: &mut Model,
    opt: &mut OptimizerState,
    start_step: u64,
    out_dir: &Path,
) -> Result<TrainSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_path = out_dir.join("metrics.jsonl");
    let mut last = None;
    for step in start_step..cfg.total_steps {
        let batch = build_batch(corpus, cfg, step)?;
        let report = train_step(model, &batch, cfg, opt, step)?;
        if (step + 1) % cfg.log_interval == 0 || step + 1 == cfg.total_steps {
            let line = serde_json::to_string(&report)
                .map_err(|e| Error::Invalid(format!("unserializable report: {e}")))?;
            append_line(&metrics_path, &line)?;
        }
        if (step + 1) % cfg.checkpoint_interval == 0 && step + 1 != cfg.total_steps {
            save_checkpoint(&out_dir.join(format!("ck-{:06}.evck", step + 1)), model, opt, cfg, step + 1)?;
        }
        last = Some(report);
    }
    let final_path = out_dir.join("final.evck");
    save_checkpoint(&final_path, model, opt, cfg, cfg.total_steps)?;
    Ok(TrainSummary {
        final_step: cfg.total_steps,
        final_checkpoint: final_path,
        metrics_path,
        last_report: last,
    })
}

/// Train from scratch without touching disk; used by the ablation harness
/// and tests.
pub fn train_in_memory(corpus: &Corpus, cfg: &TrainConfig) -> Result<Model> {
    cfg.validate()?;
    let n_mod = if cfg.multimodal {
        modalities_of(corpus)
    } else {
        1
    };
    let mut model = Model::init(cfg, n_mod)?;
    let mut opt = OptimizerState::default();
    for step in 0..cfg.total_steps {
        let batch = build_batch(corpus, cfg, step)?;
        train_step(&mut model, &batch, cfg, &mut opt, step)?;
    }
    Ok(model)
}

/// Train from scratch, writing checkpoints and a metrics log into `out_dir`.
pub fn pretrain(corpus: &Corpus, cfg: &TrainConfig, out_dir: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let n_mod = if cfg.multimodal {
        modalities_of(corpus)
    } else {
        1
    };
    if cfg.multimodal && n_mod < 2 {
        return Err(Error::Invalid("multimodal training needs a paired corpus".into()));
    }
    let mut model = Model::init(cfg, n_mod)?;
    let mut opt = OptimizerState::default();
    run_loop(corpus, cfg, &mut model, &mut opt, 0, out_dir)
}

/// Resume a run from a checkpoint; continues bit-exactly in deterministic
/// mode because all per-step randomness derives from (seed, step).
pub fn resume(corpus: &Corpus, ckpt: &Path, out_dir: &Path) -> Result<TrainSummary> {
    let (cfg, mut model, mut opt, step) = load_checkpoint(ckpt)?;
    run_loop(corpus, &cfg, &mut model, &mut opt, step, out_dir)
}
