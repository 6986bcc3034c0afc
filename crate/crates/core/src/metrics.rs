//! Evaluation metrics: noise reduction on the separated noise component,
//! STOI, and Welch power spectral density.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::dsp::{self, Waveform};
use crate::error::{Error, Result};
use crate::fft::Fft;
use crate::math::{self, cos, sqrt, PI};

/// Which controller produced a row of results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Controller {
    Fxlms,
    Crn,
    Off,
}

impl Controller {
    pub fn id(self) -> &'static str {
        match self {
            Controller::Fxlms => "fxlms",
            Controller::Crn => "crn",
            Controller::Off => "off",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub noise_label: String,
    pub nr_db: f64,
    pub stoi_clean_vs_processed: Option<f64>,
    pub stoi_clean_vs_noisy: Option<f64>,
    /// Externally computed PESQ, if one was supplied.
    pub pesq_external: Option<f64>,
    pub sample_count: usize,
    pub controller: Controller,
}

impl MetricsReport {
    /// STOI of the processed signal minus STOI of the uncontrolled mixture.
    pub fn stoi_delta(&self) -> Option<f64> {
        Some(self.stoi_clean_vs_processed? - self.stoi_clean_vs_noisy?)
    }
}

/// `10 log10(sum d_noise^2 / sum e_noise^2)` after `burn_in` samples, where
/// `e_noise = e - d_speech`. Returns `+inf` when the residual is exactly
/// zero.
pub fn noise_reduction(d_noise: &[f64], e: &[f64], d_speech: Option<&[f64]>, burn_in: usize) -> Result<f64> {
    if d_noise.len() != e.len() {
        return Err(Error::LengthMismatch(d_noise.len(), e.len()));
    }
    if let Some(s) = d_speech {
        if s.len() != e.len() {
            return Err(Error::LengthMismatch(s.len(), e.len()));
        }
    }
    if e.len() <= burn_in {
        return Err(Error::InsufficientSamples {
            needed: burn_in + 1,
            got: e.len(),
        });
    }
    let disturbance: f64 = d_noise[burn_in..].iter().map(|v| v * v).sum();
    let residual: f64 = match d_speech {
        Some(s) => e[burn_in..]
            .iter()
            .zip(&s[burn_in..])
            .map(|(a, b)| (a - b) * (a - b))
            .sum(),
        None => e[burn_in..].iter().map(|v| v * v).sum(),
    };
    if disturbance <= 0.0 {
        return Err(Error::ZeroEnergy);
    }
    if residual <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(math::db_power(disturbance / residual))
}

/// Power spectral density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub freqs: Vec<f64>,
    /// One-sided density in units^2 / Hz.
    pub density: Vec<f64>,
}

/// Welch's averaged periodogram with a periodic Hann window, one-sided and
/// density-normalized.
pub fn psd_welch(x: &Waveform, seg_len: usize, overlap: f64) -> Result<Psd> {
    if seg_len < 2 {
        return Err(Error::InvalidArgument("segment length must be at least 2".into()));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidArgument("overlap must lie in [0, 1)".into()));
    }
    if x.len() < seg_len {
        return Err(Error::InsufficientSamples {
            needed: seg_len,
            got: x.len(),
        });
    }
    let fs = x.sample_rate() as f64;
    let hop = ((seg_len as f64 * (1.0 - overlap)) as usize).max(1);
    let window = dsp::periodic_hann(seg_len);
    let win_power: f64 = window.iter().map(|w| w * w).sum();
    let plan = Fft::new(seg_len);
    let bins = seg_len / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut segments = 0usize;
    let mut start = 0;
    let mut buf = vec![Complex64::new(0.0, 0.0); seg_len];
    while start + seg_len <= x.len() {
        let seg = &x.samples()[start..start + seg_len];
        let mean = seg.iter().sum::<f64>() / seg_len as f64;
        for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new((s - mean) * w, 0.0);
        }
        plan.forward(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
        segments += 1;
        start += hop;
    }
    let scale = 1.0 / (fs * win_power * segments as f64);
    let density = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let one_sided = if k == 0 || 2 * k == seg_len { 1.0 } else { 2.0 };
            p * scale * one_sided
        })
        .collect();
    let freqs = (0..bins).map(|k| k as f64 * fs / seg_len as f64).collect();
    Ok(Psd { freqs, density })
}

const STOI_FS: u32 = 10_000;
const STOI_FRAME: usize = 256;
const STOI_NFFT: usize = 512;
const STOI_BANDS: usize = 15;
const STOI_MIN_FREQ: f64 = 150.0;
const STOI_SEGMENT: usize = 30;
const STOI_BETA_DB: f64 = -15.0;
const STOI_DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = 2.220_446_049_250_313e-16;

/// Short-time objective intelligibility of `processed` against `clean`.
///
/// Both signals are resampled to 10 kHz, silent frames (40 dB below the
/// loudest clean frame) are dropped, and 384 ms envelopes in 15 third-octave
/// bands are compared by correlation after normalization and clipping at
/// -15 dB SDR. The mean correlation is clamped to `[0, 1]`.
pub fn stoi(clean: &Waveform, processed: &Waveform) -> Result<f64> {
    clean.check_compatible(processed)?;
    if clean.power() <= 0.0 {
        return Err(Error::TooLittleSpeech {
            frames: 0,
            needed: STOI_SEGMENT,
        });
    }
    let x = dsp::resample(clean, STOI_FS)?;
    let y = dsp::resample(processed, STOI_FS)?;
    let (x, y) = remove_silent_frames(x.samples(), y.samples());

    let x_tob = third_octave_envelopes(&x);
    let y_tob = third_octave_envelopes(&y);
    let frames = x_tob.first().map_or(0, |b| b.len());
    if frames < STOI_SEGMENT {
        return Err(Error::TooLittleSpeech {
            frames,
            needed: STOI_SEGMENT,
        });
    }
    let clip = math::powf(10.0, -STOI_BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for m in STOI_SEGMENT..=frames {
        for band in 0..STOI_BANDS {
            let xs = &x_tob[band][m - STOI_SEGMENT..m];
            let ys = &y_tob[band][m - STOI_SEGMENT..m];
            let norm_x = sqrt(xs.iter().map(|v| v * v).sum());
            let norm_y = sqrt(ys.iter().map(|v| v * v).sum());
            let gain = norm_x / (norm_y + EPS);
            let y_prime: Vec<f64> = ys
                .iter()
                .zip(xs)
                .map(|(&yv, &xv)| (yv * gain).min(xv * (1.0 + clip)))
                .collect();
            total += correlation(xs, &y_prime);
            count += 1;
        }
    }
    Ok((total / count as f64).clamp(0.0, 1.0))
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let ca: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let cb: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let na = sqrt(ca.iter().map(|v| v * v).sum::<f64>()) + EPS;
    let nb = sqrt(cb.iter().map(|v| v * v).sum::<f64>()) + EPS;
    ca.iter().zip(&cb).map(|(p, q)| (p / na) * (q / nb)).sum()
}

/// Symmetric Hann without the zero end points (`hanning(n + 2)[1..-1]`).
fn stoi_window(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 0.5 - 0.5 * cos(2.0 * PI * i as f64 / (n + 1) as f64))
        .collect()
}

fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hop = STOI_FRAME / 2;
    let w = stoi_window(STOI_FRAME);
    if x.len() < STOI_FRAME {
        return (Vec::new(), Vec::new());
    }
    let starts: Vec<usize> = (0..=x.len() - STOI_FRAME).step_by(hop).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = x[s..s + STOI_FRAME]
                .iter()
                .zip(&w)
                .map(|(v, wv)| (v * wv) * (v * wv))
                .sum();
            20.0 * math::log10(sqrt(e) + EPS)
        })
        .collect();
    let peak = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| peak - STOI_DYN_RANGE_DB - e < 0.0)
        .map(|(&s, _)| s)
        .collect();
    if kept.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let out_len = (kept.len() - 1) * hop + STOI_FRAME;
    let mut xo = vec![0.0; out_len];
    let mut yo = vec![0.0; out_len];
    for (i, &s) in kept.iter().enumerate() {
        for k in 0..STOI_FRAME {
            xo[i * hop + k] += x[s + k] * w[k];
            yo[i * hop + k] += y[s + k] * w[k];
        }
    }
    (xo, yo)
}

/// Band envelopes `[band][frame]` from a 512-point STFT of 256-sample,
/// 50%-overlapped frames.
fn third_octave_envelopes(x: &[f64]) -> Vec<Vec<f64>> {
    let hop = STOI_FRAME / 2;
    let w = stoi_window(STOI_FRAME);
    let bands = third_octave_bands();
    let plan = Fft::new(STOI_NFFT);
    let mut out = vec![Vec::new(); STOI_BANDS];
    if x.len() <= STOI_FRAME {
        return out;
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); STOI_NFFT];
    let mut start = 0;
    while start < x.len() - STOI_FRAME {
        for b in buf.iter_mut() {
            *b = Complex64::new(0.0, 0.0);
        }
        for k in 0..STOI_FRAME {
            buf[k] = Complex64::new(x[start + k] * w[k], 0.0);
        }
        plan.forward(&mut buf);
        for (band, &(lo, hi)) in bands.iter().enumerate() {
            let e: f64 = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum();
            out[band].push(sqrt(e));
        }
        start += hop;
    }
    out
}

/// Half-open FFT bin ranges of the 15 third-octave bands starting at 150 Hz,
/// edges snapped to the nearest bin.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let bins = STOI_NFFT / 2 + 1;
    let bin_hz = STOI_FS as f64 / STOI_NFFT as f64;
    let nearest = |f: f64| -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for k in 0..bins {
            let d = (k as f64 * bin_hz - f).abs();
            if d < dist {
                dist = d;
                best = k;
            }
        }
        best
    };
    (0..STOI_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = STOI_MIN_FREQ * math::powf(2.0, (2.0 * k - 1.0) / 6.0);
            let hi = STOI_MIN_FREQ * math::powf(2.0, (2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::sin;
    use crate::scenario::{generate_source, NoiseKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn white(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn nr_closed_forms() {
        let d = white(1000, 1);
        assert_eq!(noise_reduction(&d, &d, None, 0).unwrap(), 0.0);
        let half: Vec<f64> = d.iter().map(|v| v / 2.0).collect();
        let nr = noise_reduction(&d, &half, None, 100).unwrap();
        assert!((nr - 10.0 * math::log10(4.0)).abs() < 1e-9);
        assert!((nr - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn nr_ignores_preserved_speech() {
        let d = white(1000, 2);
        let speech: Vec<f64> = white(1000, 3).iter().map(|v| v * 7.0).collect();
        let e: Vec<f64> = d.iter().zip(&speech).map(|(a, s)| a / 2.0 + s).collect();
        let nr = noise_reduction(&d, &e, Some(&speech), 0).unwrap();
        assert!((nr - 10.0 * math::log10(4.0)).abs() < 1e-9);
    }

    #[test]
    fn nr_sign_and_degenerate_cases() {
        let d = white(500, 4);
        let loud: Vec<f64> = d.iter().map(|v| v * 2.0).collect();
        assert!(noise_reduction(&d, &loud, None, 0).unwrap() < 0.0);
        assert_eq!(noise_reduction(&d, &vec![0.0; 500], None, 0).unwrap(), f64::INFINITY);
        assert_eq!(noise_reduction(&vec![0.0; 500], &d, None, 0), Err(Error::ZeroEnergy));
        assert!(noise_reduction(&d, &d, None, 500).is_err());
        assert!(noise_reduction(&d, &d[..10], None, 0).is_err());
    }

    #[test]
    fn welch_white_noise_is_flat_and_integrates_to_variance() {
        let x = Waveform::new(white(16000 * 8, 5), 16000).unwrap();
        let psd = psd_welch(&x, 512, 0.5).unwrap();
        // unit variance spread over 8 kHz of one-sided band
        let expect = 1.0 / 8000.0;
        for (f, p) in psd.freqs.iter().zip(&psd.density) {
            if *f >= 100.0 && *f <= 7000.0 {
                let db = 10.0 * math::log10(p / expect);
                assert!(db.abs() < 2.0, "{f} Hz: {db} dB");
            }
        }
        let df = psd.freqs[1] - psd.freqs[0];
        let integral: f64 = psd.density.iter().sum::<f64>() * df;
        assert!((integral - x.power()).abs() / x.power() < 0.05);
    }

    #[test]
    fn welch_tone_peak() {
        let s: Vec<f64> = (0..16000)
            .map(|n| sin(2.0 * PI * 1000.0 * n as f64 / 16000.0))
            .collect();
        let psd = psd_welch(&Waveform::new(s, 16000).unwrap(), 320, 0.5).unwrap();
        let (kmax, pmax) = psd
            .density
            .iter()
            .enumerate()
            .fold((0, 0.0), |b, (k, &p)| if p > b.1 { (k, p) } else { b });
        assert_eq!(kmax, 20);
        let mut sorted = psd.density.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        assert!(10.0 * math::log10(pmax / median) >= 20.0);
        assert!(psd.density.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn welch_validation() {
        let x = Waveform::zeros(100, 16000);
        assert!(psd_welch(&x, 200, 0.5).is_err());
        assert!(psd_welch(&x, 50, 1.0).is_err());
    }

    fn speech(seed: u64) -> Waveform {
        generate_source(NoiseKind::SpeechLike, 3.0, seed, 16000).unwrap()
    }

    #[test]
    fn stoi_self_and_gain() {
        let s = speech(1);
        assert!(stoi(&s, &s).unwrap() >= 0.99);
        assert!(stoi(&s, &s.scaled(0.5)).unwrap() >= 0.99);
    }

    #[test]
    fn stoi_monotone_in_snr() {
        let s = speech(2);
        let n = Waveform::new(white(s.len(), 9), 16000).unwrap();
        let mut scores = Vec::new();
        for snr in [-10.0, 0.0, 10.0] {
            let (mix, _) = dsp::mix_at_snr(&s, &n, -snr).unwrap();
            scores.push(stoi(&s, &mix).unwrap());
        }
        assert!(scores[0] < 0.7, "{scores:?}");
        assert!(scores[0] < scores[1] && scores[1] < scores[2], "{scores:?}");
        assert!(scores.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn stoi_needs_speech() {
        let s = Waveform::zeros(16000, 16000);
        assert!(matches!(stoi(&s, &s), Err(Error::TooLittleSpeech { .. })));
        let short = speech(3).fitted(2000);
        assert!(matches!(stoi(&short, &short), Err(Error::TooLittleSpeech { .. })));
    }

    #[test]
    fn band_edges() {
        let bands = third_octave_bands();
        assert_eq!(bands.len(), 15);
        // lowest band starts near 150 * 2^(-1/6) = 133.6 Hz -> bin 7 (136.7 Hz)
        assert_eq!(bands[0].0, 7);
        assert!(bands.windows(2).all(|w| w[0].1 <= w[1].0 + 1));
    }
}
