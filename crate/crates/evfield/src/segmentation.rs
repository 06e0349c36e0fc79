//! Stochastic segmentation of the frame axis.
//!
//! A segmentation is a sorted list of interior boundaries inducing M
//! contiguous segments over [0, F). Sampling is uniform by default, or
//! biased toward frames where the energy gradient is large.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sorted strictly-increasing interior boundaries over [0, F).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub num_frames: usize,
    pub boundaries: Vec<usize>,
}

impl Segmentation {
    pub fn new(num_frames: usize, boundaries: Vec<usize>) -> Result<Segmentation> {
        let mut prev = 0usize;
        for &b in &boundaries {
            if b <= prev || b >= num_frames {
                return Err(Error::Invalid(format!(
                    "boundaries {boundaries:?} invalid for F={num_frames}"
                )));
            }
            prev = b;
        }
        Ok(Segmentation {
            num_frames,
            boundaries,
        })
    }

    pub fn num_segments(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// Half-open [start, end) spans of each segment.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        let mut spans = Vec::with_capacity(self.num_segments());
        let mut start = 0;
        for &b in &self.boundaries {
            spans.push((start, b));
            start = b;
        }
        spans.push((start, self.num_frames));
        spans
    }

    /// Temporal center of each segment in frame units.
    pub fn centers(&self) -> Vec<f64> {
        self.spans()
            .iter()
            .map(|&(s, e)| (s + e) as f64 / 2.0)
            .collect()
    }

    /// Total frame -> segment index map.
    pub fn membership(&self) -> Vec<usize> {
        let mut map = vec![0usize; self.num_frames];
        for (i, (s, e)) in self.spans().into_iter().enumerate() {
            for m in map.iter_mut().take(e).skip(s) {
                *m = i;
            }
        }
        map
    }

    fn min_segment_len(&self) -> usize {
        self.spans().iter().map(|&(s, e)| e - s).min().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegMode {
    UniformRandom,
    SignalEnergyBiased,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegSamplerConfig {
    pub m_min: usize,
    pub m_max: usize,
    pub min_gap: usize,
    pub mode: SegMode,
}

impl Default for SegSamplerConfig {
    fn default() -> Self {
        SegSamplerConfig {
            m_min: 2,
            m_max: 8,
            min_gap: 4,
            mode: SegMode::UniformRandom,
        }
    }
}

impl SegSamplerConfig {
    pub fn validate(&self, num_frames: usize) -> Result<()> {
        if self.m_min < 1 || self.m_min > self.m_max {
            return Err(Error::Config(format!(
                "need 1 <= m_min <= m_max, got [{}, {}]",
                self.m_min, self.m_max
            )));
        }
        if self.m_max * self.min_gap.max(1) > num_frames {
            return Err(Error::Config(format!(
                "infeasible: {} segments x min_gap {} > {} frames",
                self.m_max, self.min_gap, num_frames
            )));
        }
        Ok(())
    }
}

const MAX_REJECTION_ATTEMPTS: usize = 1000;

fn respects_min_gap(boundaries: &[usize], num_frames: usize, min_gap: usize) -> bool {
    let mut prev = 0usize;
    for &b in boundaries {
        if b - prev < min_gap {
            return false;
        }
        prev = b;
    }
    num_frames - prev >= min_gap
}

/// Equally spaced boundaries for M segments, with optional jitter.
pub fn uniform_segmentation(num_frames: usize, m: usize) -> Segmentation {
    let boundaries = (1..m).map(|i| i * num_frames / m).collect();
    Segmentation {
        num_frames,
        boundaries,
    }
}

/// Sample a segmentation: M ~ Uniform{m_min..m_max}, boundaries by
/// rejection sampling until every segment is at least `min_gap` long.
/// Falls back to jittered equal spacing after a bounded attempt count.
pub fn sample_segmentation(
    num_frames: usize,
    cfg: &SegSamplerConfig,
    rng: &mut impl Rng,
    frame_energy: Option<&[f64]>,
) -> Result<Segmentation> {
    cfg.validate(num_frames)?;
    let m = rng.gen_range(cfg.m_min..=cfg.m_max);
    if m == 1 {
        return Ok(Segmentation {
            num_frames,
            boundaries: vec![],
        });
    }
    let min_gap = cfg.min_gap.max(1);
    let weights: Option<Vec<f64>> = match (cfg.mode, frame_energy) {
        (SegMode::SignalEnergyBiased, Some(e)) if e.len() == num_frames => {
            // smoothed magnitude of the energy gradient
            let mut g = vec![0.0; num_frames];
            for i in 1..num_frames {
                g[i] = (e[i] - e[i - 1]).abs();
            }
            let mut sm = vec![0.0; num_frames];
            for i in 0..num_frames {
                let lo = i.saturating_sub(2);
                let hi = (i + 3).min(num_frames);
                sm[i] = g[lo..hi].iter().sum::<f64>() / (hi - lo) as f64 + 1e-9;
            }
            Some(sm)
        }
        _ => None,
    };
    for _ in 0..MAX_REJECTION_ATTEMPTS {
        let mut bs: Vec<usize> = match &weights {
            None => (0..m - 1).map(|_| rng.gen_range(1..num_frames)).collect(),
            Some(w) => {
                let total: f64 = w[1..].iter().sum();
                (0..m - 1)
                    .map(|_| {
                        let mut u = rng.gen_range(0.0..total);
                        for (i, wi) in w.iter().enumerate().skip(1) {
                            u -= wi;
                            if u <= 0.0 {
                                return i;
                            }
                        }
                        num_frames - 1
                    })
                    .collect()
            }
        };
        bs.sort_unstable();
        bs.dedup();
        if bs.len() == m - 1 && respects_min_gap(&bs, num_frames, min_gap) {
            return Ok(Segmentation {
                num_frames,
                boundaries: bs,
            });
        }
    }
    // fallback: equal spacing with a bounded jitter that keeps min_gap
    let base = uniform_segmentation(num_frames, m);
    let slack = (num_frames / m).saturating_sub(min_gap) / 2;
    let boundaries: Vec<usize> = base
        .boundaries
        .iter()
        .map(|&b| {
            if slack == 0 {
                b
            } else {
                let j = rng.gen_range(0..=2 * slack) as isize - slack as isize;
                (b as isize + j).clamp(1, num_frames as isize - 1) as usize
            }
        })
        .collect();
    let seg = Segmentation {
        num_frames,
        boundaries,
    };
    debug_assert!(seg.min_segment_len() >= 1);
    Ok(seg)
}
