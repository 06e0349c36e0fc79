//! Stochastic time-frequency projections and the FFT behind them.
//!
//! A [`ProjectionSpec`] is a seeded, serializable list of length-preserving
//! transforms; applying one to a waveform is a pure function of (spec,
//! waveform). Transforms are kept in a canonical order (amplitude, warp,
//! frequency-domain, masks, noise) so sampled specs are comparable.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::stream;
use crate::synthgen::Waveform;
use crate::{Error, Result};

/// In-place radix-2 FFT. Unnormalized forward; inverse applies 1/N.
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) -> Result<()> {
    let n = buf.len();
    if !n.is_power_of_two() || n == 0 {
        return Err(Error::Invalid(format!("FFT length {n} is not a power of two")));
    }
    // bit-reversal permutation
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * std::f64::consts::TAU / len as f64;
        let wlen = Complex64::new(ang.cos(), ang.sin());
        for start in (0..n).step_by(len) {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let a = buf[start + k];
                let b = buf[start + k + len / 2] * w;
                buf[start + k] = a + b;
                buf[start + k + len / 2] = a - b;
                w *= wlen;
            }
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
    Ok(())
}

/// Forward DFT of a real power-of-two-length signal.
pub fn dft(x: &[f64]) -> Result<Vec<Complex64>> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(&mut buf, false)?;
    Ok(buf)
}

/// Inverse DFT; returns the (real, imag-residue) pair per sample.
pub fn idft(spec: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut buf = spec.to_vec();
    fft_in_place(&mut buf, true)?;
    Ok(buf)
}

/// One length-preserving transform. Parameters are distribution-level;
/// concrete random draws during `apply` come from the spec seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    AmplitudeScale { factor: f64 },
    TimeWarp { num_knots: usize, max_disp: f64 },
    SubbandFilter { f_lo: f64, f_hi: f64 },
    PhasePerturb { sigma: f64, smooth_len: usize },
    FreqDropout { num_bands: usize, band_len: usize },
    LocalMask { num_spans: usize, span_len: f64 },
    NoiseInject { sigma: f64 },
}

/// A seeded composition of transforms in canonical order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub transforms: Vec<Transform>,
    pub seed: u64,
}

impl ProjectionSpec {
    pub fn identity() -> Self {
        ProjectionSpec {
            transforms: vec![Transform::Identity],
            seed: 0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.transforms.iter().all(|t| matches!(t, Transform::Identity))
    }
}

/// Inclusion probabilities and parameter ranges for [`sample_projection`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionFamilyConfig {
    pub p_amplitude: f64,
    pub amp_range: (f64, f64),
    pub p_warp: f64,
    pub warp_knots: usize,
    pub warp_max_disp: f64,
    pub p_subband: f64,
    /// Minimum passband width as a fraction of Nyquist.
    pub subband_min_width: f64,
    pub p_phase: f64,
    pub phase_sigma_max: f64,
    pub phase_smooth_len: usize,
    pub p_freq_dropout: f64,
    pub dropout_bands: usize,
    pub dropout_band_len: usize,
    pub p_local_mask: f64,
    pub mask_spans: usize,
    pub mask_span_len: f64,
    pub p_noise: f64,
    pub noise_sigma_max: f64,
}

impl Default for ProjectionFamilyConfig {
    fn default() -> Self {
        ProjectionFamilyConfig {
            p_amplitude: 0.5,
            amp_range: (0.7, 1.4),
            p_warp: 0.5,
            warp_knots: 4,
            warp_max_disp: 0.03,
            p_subband: 0.3,
            subband_min_width: 0.5,
            p_phase: 0.5,
            phase_sigma_max: 0.5,
            phase_smooth_len: 5,
            p_freq_dropout: 0.3,
            dropout_bands: 2,
            dropout_band_len: 8,
            p_local_mask: 0.3,
            mask_spans: 2,
            mask_span_len: 0.05,
            p_noise: 0.5,
            noise_sigma_max: 0.1,
        }
    }
}

impl ProjectionFamilyConfig {
    /// Everything off: views equal the input.
    pub fn disabled() -> Self {
        ProjectionFamilyConfig {
            p_amplitude: 0.0,
            p_warp: 0.0,
            p_subband: 0.0,
            p_phase: 0.0,
            p_freq_dropout: 0.0,
            p_local_mask: 0.0,
            p_noise: 0.0,
            ..Default::default()
        }
    }
}

/// Independently include each transform, drawing its parameters.
/// `nyquist` bounds the sub-band filter frequencies.
pub fn sample_projection(
    cfg: &ProjectionFamilyConfig,
    nyquist: f64,
    rng: &mut impl Rng,
) -> ProjectionSpec {
    let mut transforms = Vec::new();
    if rng.gen_bool(cfg.p_amplitude) {
        transforms.push(Transform::AmplitudeScale {
            factor: rng.gen_range(cfg.amp_range.0..=cfg.amp_range.1),
        });
    }
    if rng.gen_bool(cfg.p_warp) {
        transforms.push(Transform::TimeWarp {
            num_knots: cfg.warp_knots,
            max_disp: cfg.warp_max_disp,
        });
    }
    if rng.gen_bool(cfg.p_subband) {
        let width = rng.gen_range(cfg.subband_min_width..=1.0) * nyquist;
        let f_lo = rng.gen_range(0.0..=(nyquist - width));
        transforms.push(Transform::SubbandFilter {
            f_lo,
            f_hi: f_lo + width,
        });
    }
    if rng.gen_bool(cfg.p_phase) {
        transforms.push(Transform::PhasePerturb {
            sigma: rng.gen_range(0.0..=cfg.phase_sigma_max),
            smooth_len: cfg.phase_smooth_len,
        });
    }
    if rng.gen_bool(cfg.p_freq_dropout) {
        transforms.push(Transform::FreqDropout {
            num_bands: cfg.dropout_bands,
            band_len: cfg.dropout_band_len,
        });
    }
    if rng.gen_bool(cfg.p_local_mask) {
        transforms.push(Transform::LocalMask {
            num_spans: cfg.mask_spans,
            span_len: cfg.mask_span_len,
        });
    }
    if rng.gen_bool(cfg.p_noise) {
        transforms.push(Transform::NoiseInject {
            sigma: rng.gen_range(0.0..=cfg.noise_sigma_max),
        });
    }
    if transforms.is_empty() {
        transforms.push(Transform::Identity);
    }
    ProjectionSpec {
        transforms,
        seed: rng.gen(),
    }
}

/// Catmull-Rom interpolation of evenly spaced knot values at fraction `s` in [0,1].
fn cubic_interp(knots: &[f64], s: f64) -> f64 {
    let n = knots.len();
    if n == 1 {
        return knots[0];
    }
    let x = s * (n - 1) as f64;
    let i = (x.floor() as usize).min(n - 2);
    let t = x - i as f64;
    let get = |j: isize| -> f64 { knots[j.clamp(0, n as isize - 1) as usize] };
    let (p0, p1, p2, p3) = (get(i as isize - 1), get(i as isize), get(i as isize + 1), get(i as isize + 2));
    let (t2, t3) = (t * t, t * t * t);
    0.5 * ((2.0 * p1)
        + (-p0 + p2) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3)
}

/// Strictly increasing warped sample grid for a recording of length `len`.
pub fn warp_grid(len: usize, num_knots: usize, max_disp: f64, rng: &mut impl Rng) -> Vec<f64> {
    let amp = max_disp * len as f64;
    // endpoint knots pinned to zero displacement
    let mut knots = vec![0.0; num_knots + 2];
    for k in knots.iter_mut().skip(1).take(num_knots) {
        *k = rng.gen_range(-amp..=amp);
    }
    let mut grid = Vec::with_capacity(len);
    for t in 0..len {
        let s = t as f64 / (len - 1).max(1) as f64;
        grid.push(t as f64 + cubic_interp(&knots, s));
    }
    // clamp to a strictly monotone grid inside [0, len-1]
    grid[0] = 0.0;
    let last = (len - 1) as f64;
    for t in 1..len {
        grid[t] = grid[t].max(grid[t - 1] + 1e-9).min(last);
    }
    let end = grid[len - 1];
    if end < last {
        grid[len - 1] = last;
    }
    for t in (1..len).rev() {
        if grid[t - 1] >= grid[t] {
            grid[t - 1] = grid[t] - 1e-9;
        } else {
            break;
        }
    }
    grid[0] = grid[0].max(0.0);
    grid
}

fn linear_resample(x: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = x.len();
    grid.iter()
        .map(|&u| {
            let i = (u.floor() as usize).min(n - 1);
            let j = (i + 1).min(n - 1);
            let frac = u - i as f64;
            x[i] * (1.0 - frac) + x[j] * frac
        })
        .collect()
}

fn bin_hz(k: usize, n: usize, sample_rate: f64) -> f64 {
    k as f64 * sample_rate / n as f64
}

/// Apply a spec to a waveform. Pure in (spec, x); all inner randomness is
/// derived from the spec seed and the transform index.
pub fn apply(spec: &ProjectionSpec, x: &Waveform) -> Result<Waveform> {
    if !x.len.is_power_of_two() {
        return Err(Error::Invalid(format!(
            "waveform length {} is not a power of two",
            x.len
        )));
    }
    let n = x.len;
    let mut out = x.clone();
    for (ti, tr) in spec.transforms.iter().enumerate() {
        let mut rng = stream(spec.seed, "proj-apply", ti as u64);
        match tr {
            Transform::Identity => {}
            Transform::AmplitudeScale { factor } => {
                for v in out.data.iter_mut() {
                    *v *= factor;
                }
            }
            Transform::TimeWarp { num_knots, max_disp } => {
                // one shared grid for all channels
                let grid = warp_grid(n, *num_knots, *max_disp, &mut rng);
                for c in 0..out.channels {
                    let ch = out.data[c * n..(c + 1) * n].to_vec();
                    out.data[c * n..(c + 1) * n].copy_from_slice(&linear_resample(&ch, &grid));
                }
            }
            Transform::SubbandFilter { f_lo, f_hi } => {
                for c in 0..out.channels {
                    let mut spec_c = dft(&out.data[c * n..(c + 1) * n])?;
                    for k in 0..=n / 2 {
                        let f = bin_hz(k, n, x.sample_rate);
                        if f < *f_lo || f > *f_hi {
                            spec_c[k] = Complex64::new(0.0, 0.0);
                            if k > 0 && k < n / 2 {
                                spec_c[n - k] = Complex64::new(0.0, 0.0);
                            }
                        }
                    }
                    write_real(&mut out.data[c * n..(c + 1) * n], &idft(&spec_c)?);
                }
            }
            Transform::PhasePerturb { sigma, smooth_len } => {
                // one phase field shared across channels
                let half = n / 2;
                let mut theta = vec![0.0; half + 1];
                if *sigma > 0.0 {
                    let normal = Normal::new(0.0, *sigma).expect("sigma > 0");
                    for th in theta.iter_mut().take(half).skip(1) {
                        *th = normal.sample(&mut rng);
                    }
                    theta = moving_average(&theta, (*smooth_len).max(1));
                    theta[0] = 0.0;
                    theta[half] = 0.0;
                }
                for c in 0..out.channels {
                    let mut spec_c = dft(&out.data[c * n..(c + 1) * n])?;
                    for k in 1..half {
                        let rot = Complex64::new(theta[k].cos(), theta[k].sin());
                        spec_c[k] *= rot;
                        spec_c[n - k] *= rot.conj();
                    }
                    write_real(&mut out.data[c * n..(c + 1) * n], &idft(&spec_c)?);
                }
            }
            Transform::FreqDropout { num_bands, band_len } => {
                let half = n / 2;
                let bl = (*band_len).min(half.saturating_sub(1)).max(1);
                let starts: Vec<usize> = (0..*num_bands)
                    .map(|_| rng.gen_range(1..=half.saturating_sub(bl).max(1)))
                    .collect();
                for c in 0..out.channels {
                    let mut spec_c = dft(&out.data[c * n..(c + 1) * n])?;
                    for &s in &starts {
                        for k in s..(s + bl).min(half + 1) {
                            spec_c[k] = Complex64::new(0.0, 0.0);
                            if k > 0 && k < n / 2 {
                                spec_c[n - k] = Complex64::new(0.0, 0.0);
                            }
                        }
                    }
                    write_real(&mut out.data[c * n..(c + 1) * n], &idft(&spec_c)?);
                }
            }
            Transform::LocalMask { num_spans, span_len } => {
                let span = ((span_len * n as f64).round() as usize).clamp(1, n);
                let starts: Vec<usize> = (0..*num_spans)
                    .map(|_| rng.gen_range(0..=n - span))
                    .collect();
                for c in 0..out.channels {
                    for &s in &starts {
                        for v in out.data[c * n + s..c * n + s + span].iter_mut() {
                            *v = 0.0;
                        }
                    }
                }
            }
            Transform::NoiseInject { sigma } => {
                if *sigma > 0.0 {
                    let normal = Normal::new(0.0, *sigma).expect("sigma > 0");
                    for v in out.data.iter_mut() {
                        *v += normal.sample(&mut rng);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn write_real(dst: &mut [f64], src: &[Complex64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        debug_assert!(s.im.abs() < 1e-9, "imaginary residue {}", s.im);
        *d = s.re;
    }
}

fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let lo = i.saturating_sub(w / 2);
        let hi = (i + w / 2 + 1).min(n);
        out[i] = x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
    }
    out
}

/// Two independent views of the same waveform.
pub fn two_views(
    x: &Waveform,
    cfg: &ProjectionFamilyConfig,
    rng: &mut impl Rng,
) -> Result<(Waveform, Waveform)> {
    let nyquist = x.sample_rate / 2.0;
    let s1 = sample_projection(cfg, nyquist, rng);
    let s2 = sample_projection(cfg, nyquist, rng);
    Ok((apply(&s1, x)?, apply(&s2, x)?))
}
