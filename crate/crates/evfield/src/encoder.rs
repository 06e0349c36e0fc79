//! Hierarchical event encoder.
//!
//! Four stages: a strided conv stem producing frame features, segment
//! pooling (mean or learned-query attention), a kernelized interaction
//! operator over segment embeddings with a relative-distance bucket bias,
//! and a normalized MLP readout. A linear boundary head predicts per-frame
//! boundary probabilities from the same frame features.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::segmentation::Segmentation;
use crate::synthgen::Waveform;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Mean,
    Attention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerConfig {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub input_channels: usize,
    pub stem: Vec<ConvLayerConfig>,
    /// Model and embedding width d; must equal the last stem layer's width.
    pub model_dim: usize,
    pub pooling: PoolMode,
    pub num_buckets: usize,
    /// Skip the interaction operator (ablation).
    pub use_interaction: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_channels: 1,
            stem: vec![
                ConvLayerConfig { out_channels: 16, kernel: 7, stride: 2 },
                ConvLayerConfig { out_channels: 24, kernel: 5, stride: 2 },
                ConvLayerConfig { out_channels: 32, kernel: 5, stride: 2 },
            ],
            model_dim: 32,
            pooling: PoolMode::Mean,
            num_buckets: 16,
            use_interaction: true,
        }
    }
}

impl EncoderConfig {
    /// Downsample factor D: product of stem strides.
    pub fn downsample(&self) -> usize {
        self.stem.iter().map(|l| l.stride).product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem.is_empty() || self.model_dim == 0 || self.input_channels == 0 {
            return Err(Error::Config("empty stem or zero dims".into()));
        }
        if self.stem.last().unwrap().out_channels != self.model_dim {
            return Err(Error::Config(format!(
                "last stem width {} must equal model_dim {}",
                self.stem.last().unwrap().out_channels,
                self.model_dim
            )));
        }
        if self.num_buckets < 2 || self.num_buckets % 2 != 0 {
            return Err(Error::Config("num_buckets must be even and >= 2".into()));
        }
        for l in &self.stem {
            if l.kernel % 2 == 0 || l.stride == 0 {
                return Err(Error::Config("stem kernels must be odd, strides positive".into()));
            }
        }
        Ok(())
    }

    /// A tiny configuration used by gradient checks.
    pub fn tiny() -> Self {
        EncoderConfig {
            input_channels: 1,
            stem: vec![
                ConvLayerConfig { out_channels: 6, kernel: 5, stride: 4 },
                ConvLayerConfig { out_channels: 8, kernel: 3, stride: 2 },
            ],
            model_dim: 8,
            pooling: PoolMode::Attention,
            num_buckets: 8,
            use_interaction: true,
        }
    }
}

/// Named parameter tensors under stable dotted names.
pub struct EncoderParams {
    pub config: EncoderConfig,
    tensors: BTreeMap<String, Tensor>,
}

const LN_EPS: f64 = 1e-5;

impl EncoderParams {
    /// Uniform Glorot-style init, deterministic in the rng.
    pub fn init(config: &EncoderConfig, rng: &mut impl Rng) -> Result<EncoderParams> {
        config.validate()?;
        let mut tensors = BTreeMap::new();
        let mut add = |name: String, t: Tensor| {
            tensors.insert(name, t);
        };
        fn uniform<R: Rng>(rng: &mut R, n: usize, lim: f64) -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-lim..lim)).collect()
        }
        let mut c_in = config.input_channels;
        for (i, l) in config.stem.iter().enumerate() {
            let fan_in = c_in * l.kernel;
            let lim = (6.0 / (fan_in + l.out_channels) as f64).sqrt();
            add(
                format!("stem.{i}.weight"),
                Tensor::param(
                    uniform(rng, l.out_channels * c_in * l.kernel, lim),
                    &[l.out_channels, c_in, l.kernel],
                )?,
            );
            add(format!("stem.{i}.bias"), Tensor::param(vec![0.0; l.out_channels], &[l.out_channels])?);
            add(format!("stem.{i}.ln_gamma"), Tensor::param(vec![1.0; l.out_channels], &[l.out_channels])?);
            add(format!("stem.{i}.ln_beta"), Tensor::param(vec![0.0; l.out_channels], &[l.out_channels])?);
            c_in = l.out_channels;
        }
        let d = config.model_dim;
        let lim = (6.0 / (2 * d) as f64).sqrt();
        if config.pooling == PoolMode::Attention {
            add("pool.query".into(), Tensor::param(uniform(rng, d, lim), &[d])?);
        }
        for name in ["interact.q", "interact.k", "interact.v"] {
            add(name.into(), Tensor::param(uniform(rng, d * d, lim), &[d, d])?);
        }
        add(
            "interact.bias_table".into(),
            Tensor::param(vec![0.0; config.num_buckets], &[config.num_buckets])?,
        );
        add("readout.w1".into(), Tensor::param(uniform(rng, d * d, lim), &[d, d])?);
        add("readout.b1".into(), Tensor::param(vec![0.0; d], &[d])?);
        add("readout.w2".into(), Tensor::param(uniform(rng, d * d, lim), &[d, d])?);
        add("readout.b2".into(), Tensor::param(vec![0.0; d], &[d])?);
        let blim = (6.0 / (d + 1) as f64).sqrt();
        add("boundary.weight".into(), Tensor::param(uniform(rng, d, blim), &[d, 1])?);
        add("boundary.bias".into(), Tensor::param(vec![0.0; 1], &[1])?);
        Ok(EncoderParams {
            config: config.clone(),
            tensors,
        })
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn named(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    /// Replace every tensor's values (e.g. an optimizer step or checkpoint load).
    pub fn replace_all(&mut self, new: BTreeMap<String, Tensor>) -> Result<()> {
        for (name, t) in &self.tensors {
            let n = new
                .get(name)
                .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))?;
            if n.shape() != t.shape() {
                return Err(Error::Invalid(format!(
                    "shape mismatch for {name}: {:?} vs {:?}",
                    n.shape(),
                    t.shape()
                )));
            }
        }
        self.tensors = new;
        Ok(())
    }

    pub fn zero_grads(&self) {
        for t in self.tensors.values() {
            t.zero_grad();
        }
    }
}

/// Pooled segment embeddings plus their spans and temporal centers.
pub struct SegmentEmbeddings {
    /// M x d.
    pub embeddings: Tensor,
    pub spans: Vec<(usize, usize)>,
    /// Frame-unit midpoints.
    pub centers: Vec<f64>,
}

/// Frame features from the conv stem: F x d.
pub fn extract_local_features(x: &Waveform, params: &EncoderParams) -> Result<Tensor> {
    let cfg = &params.config;
    let d_factor = cfg.downsample();
    if x.len % d_factor != 0 {
        return Err(Error::Invalid(format!(
            "length {} not divisible by downsample factor {d_factor}",
            x.len
        )));
    }
    if x.channels != cfg.input_channels {
        return Err(Error::Invalid(format!(
            "waveform has {} channels, encoder expects {}",
            x.channels, cfg.input_channels
        )));
    }
    let mut h = Tensor::from_vec(x.data.clone(), &[x.channels, x.len])?;
    for (i, l) in cfg.stem.iter().enumerate() {
        let w = params.get(&format!("stem.{i}.weight"));
        let b = params.get(&format!("stem.{i}.bias"));
        let pad = l.kernel / 2;
        let conv = h.conv1d(w, l.stride, pad)?; // [out, T']
        // bias over channels, then per-frame layer norm across channels
        let frames = conv.transpose().add(b)?.gelu(); // [T', out]
        let mu = frames.mean(Some(1), true)?;
        let var = frames.var(Some(1), true)?;
        let normed = frames.sub(&mu)?.div(&var.add_scalar(LN_EPS).sqrt()?)?;
        let g = params.get(&format!("stem.{i}.ln_gamma"));
        let beta = params.get(&format!("stem.{i}.ln_beta"));
        let out = normed.mul(g)?.add(beta)?;
        h = if i + 1 == cfg.stem.len() {
            out // final orientation: [F, d]
        } else {
            out.transpose()
        };
    }
    Ok(h)
}

/// Pool frame features into one embedding per segment.
pub fn pool_segments(
    features: &Tensor,
    seg: &Segmentation,
    params: &EncoderParams,
) -> Result<SegmentEmbeddings> {
    let f = features.shape()[0];
    if seg.num_frames != f {
        return Err(Error::Invalid(format!(
            "segmentation has {} frames, features have {f}",
            seg.num_frames
        )));
    }
    let d = features.shape()[1];
    let spans = seg.spans();
    let mut rows = Vec::with_capacity(spans.len());
    for &(s, e) in &spans {
        let chunk = features.slice_rows(s, e); // [L, d]
        let pooled = match params.config.pooling {
            PoolMode::Mean => chunk.mean(Some(0), false)?,
            PoolMode::Attention => {
                let q = params.get("pool.query").reshape(&[d, 1])?;
                let scores = chunk
                    .matmul(&q)? // [L, 1]
                    .scale(1.0 / (d as f64).sqrt())
                    .softmax(0)?;
                scores.transpose().matmul(&chunk)?.reshape(&[d])?
            }
        };
        rows.push(pooled);
    }
    Ok(SegmentEmbeddings {
        embeddings: Tensor::stack_rows(&rows),
        spans,
        centers: seg.centers(),
    })
}

/// Signed log-spaced bucket for a relative frame distance, saturating at
/// `max_distance`. Mirror property: bucket(-delta) reflects bucket(delta).
pub fn distance_bucket(delta: f64, num_buckets: usize, max_distance: f64) -> usize {
    let half = num_buckets / 2;
    let mag = delta.abs();
    let b = if mag < 1.0 || half <= 1 {
        0
    } else {
        let raw = (mag.min(max_distance).ln() / max_distance.max(std::f64::consts::E).ln()
            * (half - 1) as f64)
            .ceil() as usize;
        raw.min(half - 1)
    };
    if delta >= 0.0 {
        half + b
    } else {
        half - 1 - b
    }
}

/// Context-aware segment embeddings: residual kernelized attention with a
/// relative-distance bias on the logits.
pub fn interact(segs: &SegmentEmbeddings, params: &EncoderParams) -> Result<Tensor> {
    let r = &segs.embeddings;
    let m = r.shape()[0];
    let d = r.shape()[1];
    if !params.config.use_interaction {
        return Ok(r.clone());
    }
    let q = r.matmul(params.get("interact.q"))?;
    let k = r.matmul(params.get("interact.k"))?;
    let v = r.matmul(params.get("interact.v"))?;
    let scores = q.matmul(&k.transpose())?.scale(1.0 / (d as f64).sqrt());
    let max_dist = (segs.spans.last().map(|&(_, e)| e).unwrap_or(1) as f64 / 2.0).max(1.0);
    let buckets: Vec<usize> = (0..m * m)
        .map(|idx| {
            let (i, j) = (idx / m, idx % m);
            distance_bucket(
                segs.centers[i] - segs.centers[j],
                params.config.num_buckets,
                max_dist,
            )
        })
        .collect();
    let alpha = scores
        .bucket_bias(params.get("interact.bias_table"), &buckets)
        .softmax(1)?;
    Ok(r.add(&alpha.matmul(&v)?)?)
}

/// Mean over context-aware rows, MLP, l2 normalization. Returns a unit d-vector.
pub fn readout(rhat: &Tensor, params: &EncoderParams) -> Result<Tensor> {
    let d = rhat.shape()[1];
    let pooled = rhat.mean(Some(0), true)?; // [1, d]
    let h = pooled
        .matmul(params.get("readout.w1"))?
        .add(params.get("readout.b1"))?
        .gelu();
    let z = h
        .matmul(params.get("readout.w2"))?
        .add(params.get("readout.b2"))?;
    Ok(z.l2_normalize(1)?.reshape(&[d])?)
}

/// Per-frame boundary probabilities in (0,1): sigmoid of a linear head.
pub fn predict_boundaries(features: &Tensor, params: &EncoderParams) -> Result<Tensor> {
    let f = features.shape()[0];
    let logits = features
        .matmul(params.get("boundary.weight"))?
        .add(params.get("boundary.bias"))?;
    Ok(logits.reshape(&[f])?.sigmoid())
}

/// Full encoder output for one (view, segmentation) pair.
pub struct EncodeOutput {
    /// Unit-norm embedding, shape [d].
    pub z: Tensor,
    pub segments: SegmentEmbeddings,
    /// Per-frame boundary probabilities, shape [F].
    pub boundary: Tensor,
}

/// Compose all four stages; pure in (waveform, segmentation, params).
pub fn encode(x: &Waveform, seg: &Segmentation, params: &EncoderParams) -> Result<EncodeOutput> {
    let features = extract_local_features(x, params)?;
    let segments = pool_segments(&features, seg, params)?;
    let rhat = interact(&segments, params)?;
    let z = readout(&rhat, params)?;
    let boundary = predict_boundaries(&features, params)?;
    Ok(EncodeOutput {
        z,
        segments: SegmentEmbeddings {
            embeddings: rhat,
            spans: segments.spans,
            centers: segments.centers,
        },
        boundary,
    })
}
