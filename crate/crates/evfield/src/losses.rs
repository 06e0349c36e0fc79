//! Training objectives: InfoNCE consistency, boundary regularization,
//! multimodal alignment, and their weighted total.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Temperature and term weights for the total objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub temperature: f64,
    pub lambda_sparse: f64,
    pub lambda_smooth: f64,
    pub lambda_agree: f64,
    pub lambda_align: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            temperature: 0.1,
            lambda_sparse: 0.01,
            lambda_smooth: 0.01,
            lambda_agree: 0.1,
            lambda_align: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        for (name, v) in [
            ("lambda_sparse", self.lambda_sparse),
            ("lambda_smooth", self.lambda_smooth),
            ("lambda_agree", self.lambda_agree),
            ("lambda_align", self.lambda_align),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Negative-exclusion mask: entry (i, j) is true when j must not serve as a
/// negative for anchor i. Diagonal stays false (that pair is the positive).
pub fn same_subject_mask(subjects: &[u32]) -> Vec<bool> {
    let b = subjects.len();
    (0..b * b)
        .map(|idx| {
            let (i, j) = (idx / b, idx % b);
            i != j && subjects[i] == subjects[j]
        })
        .collect()
}

const MASK_FILL: f64 = -1e30;

/// One direction of the contrastive objective: anchors against a candidate
/// bank. Candidate i is anchor i's positive; other unmasked candidates are
/// negatives. The bank may hold extra candidate rows beyond the anchors.
pub fn info_nce_direction(
    anchors: &Tensor,
    candidates: &Tensor,
    tau: f64,
    mask: &[bool],
) -> Result<Tensor> {
    let b = anchors.shape()[0];
    let n = candidates.shape()[0];
    if b < 2 || n < b {
        return Err(Error::Invalid(format!(
            "need >= 2 anchors and a candidate bank covering them (got {b} anchors, {n} candidates)"
        )));
    }
    if anchors.shape()[1] != candidates.shape()[1] || mask.len() != b * n {
        return Err(Error::Invalid("anchor/candidate/mask shape mismatch".into()));
    }
    for i in 0..b {
        if mask[i * n + i] {
            return Err(Error::Invalid(format!("positive pair {i} is masked")));
        }
        if (0..n).all(|j| j == i || mask[i * n + j]) {
            return Err(Error::Invalid(format!("all negatives masked for anchor {i}")));
        }
    }
    let logits = anchors
        .matmul(&candidates.transpose())?
        .scale(1.0 / tau);
    let filled = logits.masked_fill(mask, MASK_FILL);
    // log-sum-exp with a detached per-row max for stability
    let maxes: Vec<f64> = (0..b)
        .map(|i| {
            filled.data()[i * n..(i + 1) * n]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let m = Tensor::from_vec(maxes, &[b, 1])?;
    let lse = filled
        .sub(&m)?
        .exp()
        .sum(Some(1), true)?
        .log()?
        .add(&m)?; // [B, 1]
    let eye: Vec<f64> = (0..b * n)
        .map(|idx| if idx / n == idx % n { 1.0 } else { 0.0 })
        .collect();
    let pos = logits
        .mul(&Tensor::from_vec(eye, &[b, n])?)?
        .sum(Some(1), true)?;
    lse.sub(&pos)?.mean(None, false).map_err(Into::into)
}

/// Symmetrized InfoNCE over two aligned views with a square exclusion mask.
pub fn info_nce(z1: &Tensor, z2: &Tensor, tau: f64, mask: &[bool]) -> Result<Tensor> {
    if tau <= 0.0 {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let b = z1.shape()[0];
    if z2.shape() != z1.shape() || mask.len() != b * b {
        return Err(Error::Invalid("view/mask shape mismatch".into()));
    }
    let mask_t: Vec<bool> = (0..b * b).map(|idx| mask[(idx % b) * b + idx / b]).collect();
    let d1 = info_nce_direction(z1, z2, tau, mask)?;
    let d2 = info_nce_direction(z2, z1, tau, &mask_t)?;
    Ok(d1.add(&d2)?.scale(0.5))
}

/// Expected boundary rate: mean of per-frame probabilities.
pub fn sparsity_term(p: &Tensor) -> Result<Tensor> {
    p.mean(None, false).map_err(Into::into)
}

/// Total variation of the boundary probabilities, normalized by F-1.
pub fn smoothness_term(p: &Tensor) -> Result<Tensor> {
    let f = p.numel();
    if f < 2 {
        return Err(Error::Invalid("smoothness needs at least 2 frames".into()));
    }
    let col = p.reshape(&[f, 1])?;
    let hi = col.slice_rows(1, f);
    let lo = col.slice_rows(0, f - 1);
    Ok(hi
        .sub(&lo)?
        .abs()
        .sum(None, false)?
        .scale(1.0 / (f - 1) as f64))
}

/// Mean per-frame Bernoulli KL divergence KL(p1 || p2); differentiable in
/// both arguments. Inputs must lie strictly inside (0, 1).
pub fn kl_agreement(p1: &Tensor, p2: &Tensor) -> Result<Tensor> {
    if p1.shape() != p2.shape() {
        return Err(Error::Invalid("KL arguments must share a shape".into()));
    }
    let q1 = p1.neg().add_scalar(1.0);
    let q2 = p2.neg().add_scalar(1.0);
    let pos = p1.mul(&p1.div(p2)?.log()?)?;
    let neg = q1.mul(&q1.div(&q2)?.log()?)?;
    pos.add(&neg)?.mean(None, false).map_err(Into::into)
}

/// Mean over samples and unordered modality pairs of (1 - cosine similarity).
/// Rows are assumed unit-norm, so cosine is a plain dot product.
pub fn multimodal_align(zs: &[Tensor]) -> Result<Tensor> {
    if zs.len() < 2 {
        return Err(Error::Invalid("alignment needs at least 2 modalities".into()));
    }
    let mut acc: Option<Tensor> = None;
    let mut pairs = 0usize;
    for a in 0..zs.len() {
        for b in a + 1..zs.len() {
            let cos = zs[a].mul(&zs[b])?.sum(Some(1), false)?; // [B]
            let term = cos.neg().add_scalar(1.0).mean(None, false)?;
            acc = Some(match acc {
                None => term,
                Some(t) => t.add(&term)?,
            });
            pairs += 1;
        }
    }
    Ok(acc.unwrap().scale(1.0 / pairs as f64))
}

/// Individually computed loss terms, composed by [`total_loss`].
pub struct LossParts {
    pub cons: Tensor,
    pub sparsity: Option<Tensor>,
    pub smoothness: Option<Tensor>,
    pub kl: Option<Tensor>,
    /// Per-modality consistency terms (multimodal runs).
    pub modal_cons: Vec<Tensor>,
    pub align: Option<Tensor>,
}

fn check_finite(name: &str, t: &Tensor) -> Result<()> {
    if t.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite loss term: {name}")))
    }
}

/// Weighted total objective.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<Tensor> {
    w.validate()?;
    check_finite("consistency", &parts.cons)?;
    let mut total = parts.cons.clone();
    for (name, term, lambda) in [
        ("sparsity", &parts.sparsity, w.lambda_sparse),
        ("smoothness", &parts.smoothness, w.lambda_smooth),
        ("agreement", &parts.kl, w.lambda_agree),
        ("alignment", &parts.align, w.lambda_align),
    ] {
        if let Some(t) = term {
            check_finite(name, t)?;
            total = total.add(&t.scale(lambda))?;
        }
    }
    for (i, t) in parts.modal_cons.iter().enumerate() {
        check_finite(&format!("modal consistency {i}"), t)?;
        total = total.add(t)?;
    }
    Ok(total)
}
