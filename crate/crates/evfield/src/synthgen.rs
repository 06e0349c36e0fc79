//! Synthetic corpora from a latent-event generative model.
//!
//! Recordings are superpositions of parametric Gabor-family atoms: each
//! latent event carries a class, carrier frequency, phase, onset, duration,
//! and amplitude. A second modality re-emits the same event list through a
//! derivative-of-Gaussian envelope, giving paired multimodal recordings
//! with shared ground truth. Sidecar records keep events and the dominant
//! class label for evaluation only.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::rng::stream;
use crate::{Error, Result};

/// One latent event: (u, tau, delta, a) with u = (class, carrier Hz, phase).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentEvent {
    pub class_id: usize,
    pub freq_hz: f64,
    pub phase: f64,
    pub tau: f64,
    pub delta: f64,
    pub amplitude: f64,
}

/// Parameter ranges for one event class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventClassSpec {
    pub class_id: usize,
    pub freq_range: (f64, f64),
    pub duration_range: (f64, f64),
    pub amplitude_range: (f64, f64),
}

/// A C x T recording with provenance tags.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub channels: usize,
    pub len: usize,
    pub sample_rate: f64,
    /// Row-major C x T samples.
    pub data: Vec<f64>,
    pub subject_id: u32,
    pub modality_id: u32,
    pub label: Option<usize>,
}

impl Waveform {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }
}

/// Emission kernel family per modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionKernel {
    /// Gaussian-envelope cosine atom.
    Gabor,
    /// Derivative-of-Gaussian envelope over the same event parameters.
    GaborDerivative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCorpusConfig {
    pub num_recordings: usize,
    pub channels: usize,
    /// Samples per recording; must be a power of two.
    pub len: usize,
    pub sample_rate: f64,
    /// Poisson mean of events per recording.
    pub events_mean: f64,
    pub noise_sigma: f64,
    /// Probability that an event takes the recording's dominant class.
    pub dominant_bias: f64,
    pub num_subjects: usize,
    pub classes: Vec<EventClassSpec>,
    pub modalities: Vec<EmissionKernel>,
    pub seed: u64,
}

impl SyntheticCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_recordings == 0 || self.channels == 0 || self.len == 0 {
            return Err(Error::Config("counts must be positive".into()));
        }
        if !self.len.is_power_of_two() {
            return Err(Error::Config(format!(
                "recording length {} is not a power of two",
                self.len
            )));
        }
        if self.classes.is_empty() || self.modalities.is_empty() {
            return Err(Error::Config("need at least one class and one modality".into()));
        }
        if self.num_subjects == 0 {
            return Err(Error::Config("num_subjects must be positive".into()));
        }
        for c in &self.classes {
            if c.freq_range.0 <= 0.0 || c.freq_range.1 < c.freq_range.0 {
                return Err(Error::Config(format!("bad freq range for class {}", c.class_id)));
            }
            if c.duration_range.0 <= 0.0 || c.duration_range.1 < c.duration_range.0 {
                return Err(Error::Config(format!(
                    "bad duration range for class {}",
                    c.class_id
                )));
            }
        }
        Ok(())
    }

    pub fn duration_secs(&self) -> f64 {
        self.len as f64 / self.sample_rate
    }
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        // four classes separated by carrier band
        let classes = (0..4)
            .map(|i| EventClassSpec {
                class_id: i,
                freq_range: (2.0 + 6.0 * i as f64, 5.0 + 6.0 * i as f64),
                duration_range: (0.4, 1.2),
                amplitude_range: (0.6, 1.4),
            })
            .collect();
        SyntheticCorpusConfig {
            num_recordings: 256,
            channels: 1,
            len: 512,
            sample_rate: 64.0,
            events_mean: 6.0,
            noise_sigma: 0.1,
            dominant_bias: 0.75,
            num_subjects: 16,
            classes,
            modalities: vec![EmissionKernel::Gabor],
            seed: 7,
        }
    }
}

/// Draw K ~ Poisson(mean) events; each takes the dominant class with
/// probability `dominant_bias`, otherwise a uniform class.
pub fn sample_events(
    cfg: &SyntheticCorpusConfig,
    dominant_class: usize,
    rng: &mut impl Rng,
) -> Vec<LatentEvent> {
    let k = if cfg.events_mean > 0.0 {
        Poisson::new(cfg.events_mean).expect("positive mean").sample(rng) as usize
    } else {
        0
    };
    let dur = cfg.duration_secs();
    (0..k)
        .map(|_| {
            let class_id = if rng.gen_bool(cfg.dominant_bias.clamp(0.0, 1.0)) {
                dominant_class
            } else {
                rng.gen_range(0..cfg.classes.len())
            };
            let spec = &cfg.classes[class_id];
            LatentEvent {
                class_id,
                freq_hz: rng.gen_range(spec.freq_range.0..=spec.freq_range.1),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
                tau: rng.gen_range(0.0..dur),
                delta: rng.gen_range(spec.duration_range.0..=spec.duration_range.1),
                amplitude: rng.gen_range(spec.amplitude_range.0..=spec.amplitude_range.1),
            }
        })
        .collect()
}

fn atom(kernel: EmissionKernel, ev: &LatentEvent, t: f64) -> f64 {
    // sigma = delta/3 so the nominal duration holds ~99.7% of the envelope
    let sigma = ev.delta / 3.0;
    let dt = t - ev.tau;
    let carrier = (std::f64::consts::TAU * ev.freq_hz * dt + ev.phase).cos();
    match kernel {
        EmissionKernel::Gabor => ev.amplitude * (-dt * dt / (2.0 * sigma * sigma)).exp() * carrier,
        EmissionKernel::GaborDerivative => {
            // derivative-of-Gaussian envelope, peak amplitude normalized to a
            let env = -(dt / sigma) * (0.5 - dt * dt / (2.0 * sigma * sigma)).exp();
            ev.amplitude * env * carrier
        }
    }
}

/// Sum the emission kernel over all events at every sample, plus noise.
pub fn emit_waveform(
    events: &[LatentEvent],
    kernel: EmissionKernel,
    cfg: &SyntheticCorpusConfig,
    subject_id: u32,
    modality_id: u32,
    label: Option<usize>,
    noise_rng: &mut impl Rng,
) -> Waveform {
    let mut data = vec![0.0; cfg.channels * cfg.len];
    for c in 0..cfg.channels {
        for i in 0..cfg.len {
            let t = i as f64 / cfg.sample_rate;
            let mut v = 0.0;
            for ev in events {
                v += atom(kernel, ev, t);
            }
            data[c * cfg.len + i] = v;
        }
    }
    if cfg.noise_sigma > 0.0 {
        let normal = rand_distr::Normal::new(0.0, cfg.noise_sigma).expect("sigma > 0");
        for v in data.iter_mut() {
            *v += normal.sample(noise_rng);
        }
    }
    Waveform {
        channels: cfg.channels,
        len: cfg.len,
        sample_rate: cfg.sample_rate,
        data,
        subject_id,
        modality_id,
        label,
    }
}

/// Ground truth for one recording, written to the sidecar.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SidecarRecord {
    pub recording: usize,
    pub subject_id: u32,
    pub modality_id: u32,
    pub label: usize,
    pub events: Vec<LatentEvent>,
}

/// An in-memory corpus: recordings plus their sidecar ground truth.
pub struct Corpus {
    pub recordings: Vec<Waveform>,
    pub sidecar: Vec<SidecarRecord>,
    pub multimodal: bool,
}

/// Generate the full corpus. Recording i derives its own RNG streams from
/// (seed, i), so generation order cannot change the bytes. In the
/// multimodal case every event list is emitted once per modality and the
/// paired recordings are adjacent.
pub fn generate_corpus(cfg: &SyntheticCorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let n_mod = cfg.modalities.len();
    let mut recordings = Vec::with_capacity(cfg.num_recordings * n_mod);
    let mut sidecar = Vec::with_capacity(cfg.num_recordings * n_mod);
    for i in 0..cfg.num_recordings {
        let mut ev_rng = stream(cfg.seed, "events", i as u64);
        let dominant = ev_rng.gen_range(0..cfg.classes.len());
        let events = sample_events(cfg, dominant, &mut ev_rng);
        let subject = (i % cfg.num_subjects) as u32;
        for (m, &kernel) in cfg.modalities.iter().enumerate() {
            let mut noise_rng = stream(cfg.seed, "noise", (i * n_mod + m) as u64);
            let w = emit_waveform(
                &events,
                kernel,
                cfg,
                subject,
                m as u32,
                Some(dominant),
                &mut noise_rng,
            );
            sidecar.push(SidecarRecord {
                recording: recordings.len(),
                subject_id: subject,
                modality_id: m as u32,
                label: dominant,
                events: events.clone(),
            });
            recordings.push(w);
        }
    }
    Ok(Corpus {
        recordings,
        sidecar,
        multimodal: n_mod > 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_cfg() -> SyntheticCorpusConfig {
        SyntheticCorpusConfig {
            noise_sigma: 0.0,
            len: 256,
            num_recordings: 4,
            ..Default::default()
        }
    }

    #[test]
    fn poisson_mean_zero_gives_empty() {
        let cfg = SyntheticCorpusConfig {
            events_mean: 0.0,
            ..quiet_cfg()
        };
        let mut rng = stream(1, "t", 0);
        assert!(sample_events(&cfg, 0, &mut rng).is_empty());
    }

    #[test]
    fn fixed_seed_reproduces_events() {
        let cfg = quiet_cfg();
        let a = sample_events(&cfg, 1, &mut stream(5, "t", 3));
        let b = sample_events(&cfg, 1, &mut stream(5, "t", 3));
        assert_eq!(a, b);
    }

    #[test]
    fn poisson_mean_matches_monte_carlo() {
        let cfg = quiet_cfg();
        let mut rng = stream(11, "t", 0);
        let n = 10_000;
        let total: usize = (0..n).map(|_| sample_events(&cfg, 0, &mut rng).len()).sum();
        let mean = total as f64 / n as f64;
        // K ~ Poisson(6): sd of the empirical mean is sqrt(6/n)
        let tol = 3.0 * (cfg.events_mean / n as f64).sqrt();
        assert!(
            (mean - cfg.events_mean).abs() < tol,
            "mean {mean} vs {}",
            cfg.events_mean
        );
    }

    #[test]
    fn no_events_no_noise_is_zero() {
        let cfg = quiet_cfg();
        let w = emit_waveform(&[], EmissionKernel::Gabor, &cfg, 0, 0, None, &mut stream(0, "n", 0));
        assert!(w.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_event_peak_equals_amplitude() {
        let cfg = quiet_cfg();
        // tau on the sample grid, zero phase: x(tau) = a
        let ev = LatentEvent {
            class_id: 0,
            freq_hz: 3.0,
            phase: 0.0,
            tau: 1.0,
            delta: 0.5,
            amplitude: 0.8,
        };
        let w = emit_waveform(&[ev], EmissionKernel::Gabor, &cfg, 0, 0, None, &mut stream(0, "n", 0));
        let idx = (1.0 * cfg.sample_rate) as usize;
        assert!((w.data[idx] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn superposition_holds_without_noise() {
        let cfg = quiet_cfg();
        let evs = sample_events(&cfg, 2, &mut stream(9, "t", 0));
        if evs.len() < 2 {
            return;
        }
        let (a, b) = evs.split_at(evs.len() / 2);
        let mut nr = stream(0, "n", 0);
        let wa = emit_waveform(a, EmissionKernel::Gabor, &cfg, 0, 0, None, &mut nr);
        let wb = emit_waveform(b, EmissionKernel::Gabor, &cfg, 0, 0, None, &mut nr);
        let wall = emit_waveform(&evs, EmissionKernel::Gabor, &cfg, 0, 0, None, &mut nr);
        for i in 0..wall.data.len() {
            assert!((wall.data[i] - wa.data[i] - wb.data[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_scales_with_amplitude_squared() {
        let cfg = quiet_cfg();
        let base = LatentEvent {
            class_id: 0,
            freq_hz: 4.0,
            phase: 0.3,
            tau: 2.0,
            delta: 0.6,
            amplitude: 1.0,
        };
        let mut scaled = base.clone();
        scaled.amplitude = 3.0;
        let mut nr = stream(0, "n", 0);
        let e1: f64 = emit_waveform(&[base], EmissionKernel::Gabor, &cfg, 0, 0, None, &mut nr)
            .data
            .iter()
            .map(|v| v * v)
            .sum();
        let e2: f64 = emit_waveform(&[scaled], EmissionKernel::Gabor, &cfg, 0, 0, None, &mut nr)
            .data
            .iter()
            .map(|v| v * v)
            .sum();
        assert!((e2 / e1 - 9.0).abs() < 1e-9);
    }

    #[test]
    fn corpus_is_deterministic() {
        let cfg = quiet_cfg();
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        for (x, y) in a.recordings.iter().zip(&b.recordings) {
            assert_eq!(x.data, y.data);
        }
    }

    #[test]
    fn paired_modalities_share_event_lists() {
        let cfg = SyntheticCorpusConfig {
            modalities: vec![EmissionKernel::Gabor, EmissionKernel::GaborDerivative],
            ..quiet_cfg()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        assert!(corpus.multimodal);
        for pair in corpus.sidecar.chunks(2) {
            assert_eq!(pair[0].events, pair[1].events);
            assert_eq!(pair[0].label, pair[1].label);
        }
    }

    #[test]
    fn dominant_label_histogram_is_uniform() {
        let cfg = SyntheticCorpusConfig {
            num_recordings: 1000,
            len: 64,
            events_mean: 1.0,
            ..quiet_cfg()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let k = cfg.classes.len();
        let mut counts = vec![0usize; k];
        for s in &corpus.sidecar {
            counts[s.label] += 1;
        }
        let n = cfg.num_recordings as f64;
        let p = 1.0 / k as f64;
        let sd = (n * p * (1.0 - p)).sqrt();
        for &c in &counts {
            assert!(
                (c as f64 - n * p).abs() < 3.0 * sd,
                "counts {counts:?} not uniform"
            );
        }
    }
}
