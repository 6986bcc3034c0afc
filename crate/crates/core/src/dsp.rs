//! Time/frequency primitives shared by every other module.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{next_pow2, Fft};
use crate::math::{self, cos, mean_square, sqrt, PI};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_FRAME_LEN: usize = 320;
pub const DEFAULT_HOP: usize = 160;

/// Window-envelope floor used by [`istft`]. Interior samples of a 50%
/// overlapped Hann frame never fall below 0.5, so only the outer half frames
/// are affected.
pub const ENVELOPE_FLOOR: f64 = 1e-2;

/// Mono samples plus their sample rate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("waveform"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate: sample_rate.max(1),
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Whole-signal mean square.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        sqrt(self.power())
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|v| v * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Elementwise sum; lengths and rates must agree.
    pub fn add(&self, other: &Waveform) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            samples: self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect(),
            sample_rate: self.sample_rate,
        })
    }

    pub fn sub(&self, other: &Waveform) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            samples: self.samples.iter().zip(&other.samples).map(|(a, b)| a - b).collect(),
            sample_rate: self.sample_rate,
        })
    }

    /// Truncates or zero-pads to `len` samples.
    pub fn fitted(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub fn check_compatible(&self, other: &Waveform) -> Result<()> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::RateMismatch(self.sample_rate, other.sample_rate));
        }
        if self.len() != other.len() {
            return Err(Error::LengthMismatch(self.len(), other.len()));
        }
        Ok(())
    }

    /// Scales to the requested RMS. Silent input is an error.
    pub fn rms_normalized(&self, target_rms: f64) -> Result<Self> {
        let rms = self.rms();
        if rms <= 0.0 {
            return Err(Error::ZeroPower("cannot RMS-normalize a silent signal"));
        }
        Ok(self.scaled(target_rms / rms))
    }

    /// Scales so the largest absolute sample equals `target_peak`.
    pub fn peak_normalized(&self, target_peak: f64) -> Result<Self> {
        let peak = self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak <= 0.0 {
            return Err(Error::ZeroPower("cannot peak-normalize a silent signal"));
        }
        Ok(self.scaled(target_peak / peak))
    }
}

/// Frame length, hop and analysis/synthesis window.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSpec {
    frame_len: usize,
    hop: usize,
    window: Vec<f64>,
}

impl FrameSpec {
    /// Periodic Hann window of `frame_len` samples.
    pub fn hann(frame_len: usize, hop: usize) -> Result<Self> {
        if frame_len < 2 {
            return Err(Error::InvalidFrameSpec("frame length must be at least 2"));
        }
        if hop == 0 || hop > frame_len {
            return Err(Error::InvalidFrameSpec("hop must satisfy 0 < hop <= frame_len"));
        }
        Ok(Self {
            frame_len,
            hop,
            window: periodic_hann(frame_len),
        })
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Number of full frames that fit in `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            1 + (len - self.frame_len) / self.hop
        }
    }

    /// Length of the overlap-add output for `frames` frames.
    pub fn synthesis_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.frame_len
        }
    }

    /// Summed squared window at every output sample, before flooring.
    pub fn window_envelope(&self, frames: usize) -> Vec<f64> {
        let mut env = vec![0.0; self.synthesis_len(frames)];
        for m in 0..frames {
            let start = m * self.hop;
            for (n, w) in self.window.iter().enumerate() {
                env[start + n] += w * w;
            }
        }
        env
    }
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self::hann(DEFAULT_FRAME_LEN, DEFAULT_HOP).expect("default frame spec is valid")
    }
}

pub fn periodic_hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * cos(2.0 * PI * n as f64 / len as f64))
        .collect()
}

/// Frames x bins complex matrix, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    frames: usize,
    bins: usize,
    data: Vec<Complex64>,
    frame_spec: FrameSpec,
    sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn new(frames: usize, data: Vec<Complex64>, frame_spec: FrameSpec, sample_rate: u32) -> Result<Self> {
        let bins = frame_spec.bins();
        if data.len() != frames * bins {
            return Err(Error::LengthMismatch(data.len(), frames * bins));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram"));
        }
        Ok(Self {
            frames,
            bins,
            data,
            frame_spec,
            sample_rate,
        })
    }

    pub fn zeros(frames: usize, frame_spec: FrameSpec, sample_rate: u32) -> Self {
        let bins = frame_spec.bins();
        Self {
            frames,
            bins,
            data: vec![Complex64::new(0.0, 0.0); frames * bins],
            frame_spec,
            sample_rate,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frame_spec(&self) -> &FrameSpec {
        &self.frame_spec
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn frame(&self, m: usize) -> &[Complex64] {
        &self.data[m * self.bins..(m + 1) * self.bins]
    }

    pub fn get(&self, m: usize, k: usize) -> Complex64 {
        self.data[m * self.bins + k]
    }
}

/// Short-time Fourier transform without centering: frame `m` covers samples
/// `[m*hop, m*hop + frame_len)`.
pub fn stft(wave: &Waveform, spec: &FrameSpec) -> Result<ComplexSpectrogram> {
    let n = spec.frame_len;
    if wave.len() < n {
        return Err(Error::InsufficientSamples {
            needed: n,
            got: wave.len(),
        });
    }
    let frames = spec.frame_count(wave.len());
    let plan = Fft::new(n);
    let bins = spec.bins();
    let mut data = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for m in 0..frames {
        let seg = &wave.samples()[m * spec.hop..m * spec.hop + n];
        for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&spec.window) {
            *b = Complex64::new(s * w, 0.0);
        }
        plan.forward(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(ComplexSpectrogram {
        frames,
        bins,
        data,
        frame_spec: spec.clone(),
        sample_rate: wave.sample_rate(),
    })
}

/// Weighted overlap-add inverse, normalized by the floored window envelope.
/// Returns `(frames - 1) * hop + frame_len` samples.
pub fn istft(spec_in: &ComplexSpectrogram) -> Result<Waveform> {
    let fs = &spec_in.frame_spec;
    if spec_in.bins != fs.bins() {
        return Err(Error::InvalidFrameSpec("bin count does not match frame length"));
    }
    let frames = spec_in.frames;
    if frames == 0 {
        return Ok(Waveform::zeros(0, spec_in.sample_rate));
    }
    let plan = Fft::new(fs.frame_len);
    let mut out = vec![0.0; fs.synthesis_len(frames)];
    for m in 0..frames {
        let frame = plan.inverse_real(spec_in.frame(m));
        let start = m * fs.hop;
        for (n, (&v, &w)) in frame.iter().zip(&fs.window).enumerate() {
            out[start + n] += v * w;
        }
    }
    for (o, e) in out.iter_mut().zip(fs.window_envelope(frames)) {
        *o /= e.max(ENVELOPE_FLOOR);
    }
    Waveform::new(out, spec_in.sample_rate)
}

/// Adjoint of [`istft`] with respect to the spectrogram's real and imaginary
/// parts: given `dL/dy` over the synthesis output, returns `dL/dRe` and
/// `dL/dIm` per bin (frames x bins, row-major). Bins whose imaginary part
/// [`istft`] ignores receive a zero gradient.
pub fn istft_adjoint(grad_out: &[f64], frames: usize, fs: &FrameSpec) -> (Vec<f64>, Vec<f64>) {
    let n = fs.frame_len;
    let bins = fs.bins();
    let env = fs.window_envelope(frames);
    let plan = Fft::new(n);
    let mut g_re = vec![0.0; frames * bins];
    let mut g_im = vec![0.0; frames * bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for m in 0..frames {
        let start = m * fs.hop;
        for t in 0..n {
            let idx = start + t;
            let g = if idx < grad_out.len() { grad_out[idx] } else { 0.0 };
            buf[t] = Complex64::new(g * fs.window[t] / env[idx].max(ENVELOPE_FLOOR), 0.0);
        }
        plan.forward(&mut buf);
        for k in 0..bins {
            let edge = k == 0 || 2 * k == n;
            let c = if edge { 1.0 } else { 2.0 } / n as f64;
            g_re[m * bins + k] = c * buf[k].re;
            g_im[m * bins + k] = if edge { 0.0 } else { c * buf[k].im };
        }
    }
    (g_re, g_im)
}

/// Direct-form causal FIR convolution truncated to `x.len()` samples.
pub fn convolve_direct(x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    check_kernel(h)?;
    let mut out = vec![0.0; x.len()];
    for (n, o) in out.iter_mut().enumerate() {
        let kmax = h.len().min(n + 1);
        let mut acc = 0.0;
        for k in 0..kmax {
            acc += h[k] * x[n - k];
        }
        *o = acc;
    }
    Ok(out)
}

/// FFT-based causal FIR convolution truncated to `x.len()` samples.
pub fn convolve_fft(x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    check_kernel(h)?;
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let size = next_pow2(x.len() + h.len() - 1);
    let plan = Fft::new(size);
    let mut a: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    a.resize(size, Complex64::new(0.0, 0.0));
    let mut b: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(size, Complex64::new(0.0, 0.0));
    plan.forward(&mut a);
    plan.forward(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    plan.inverse(&mut a);
    Ok(a[..x.len()].iter().map(|c| c.re).collect())
}

/// Causal FIR convolution truncated to the input length; picks the direct or
/// FFT route by cost.
pub fn convolve_fir(x: &Waveform, h: &[f64]) -> Result<Waveform> {
    let samples = convolve_samples(x.samples(), h)?;
    Waveform::new(samples, x.sample_rate())
}

pub fn convolve_samples(x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    if h.len() <= 32 || x.len() <= 64 {
        convolve_direct(x, h)
    } else {
        convolve_fft(x, h)
    }
}

/// Adjoint of the truncated convolution: `out[n] = sum_k h[k] g[n + k]`.
pub fn correlate_samples(g: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    check_kernel(h)?;
    if g.is_empty() {
        return Ok(Vec::new());
    }
    let reversed: Vec<f64> = h.iter().rev().copied().collect();
    let mut padded = g.to_vec();
    padded.extend(core::iter::repeat_n(0.0, h.len() - 1));
    let full = convolve_samples(&padded, &reversed)?;
    Ok(full[h.len() - 1..h.len() - 1 + g.len()].to_vec())
}

fn check_kernel(h: &[f64]) -> Result<()> {
    if h.is_empty() {
        return Err(Error::EmptyKernel);
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("filter kernel"));
    }
    Ok(())
}

/// Scales `speech` so that its power sits `snr_db` above the noise power and
/// adds it to `noise`. Returns the mixture and the applied gain.
pub fn mix_at_snr(noise: &Waveform, speech: &Waveform, snr_db: f64) -> Result<(Waveform, f64)> {
    let alpha = snr_gain(noise, speech, snr_db)?;
    let mixture = noise.add(&speech.scaled(alpha))?;
    Ok((mixture, alpha))
}

/// `sqrt(P_noise / P_speech) * 10^(snr_db / 20)`, which puts the scaled
/// speech `snr_db` above the noise.
pub fn snr_gain(noise: &Waveform, speech: &Waveform, snr_db: f64) -> Result<f64> {
    if noise.is_empty() || speech.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    noise.check_compatible(speech)?;
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument("snr must be finite".into()));
    }
    let pn = noise.power();
    let ps = speech.power();
    if pn <= 0.0 {
        return Err(Error::ZeroPower("noise"));
    }
    if ps <= 0.0 {
        return Err(Error::ZeroPower("speech"));
    }
    Ok(sqrt(pn / ps) * math::powf(10.0, snr_db / 20.0))
}

/// Measured `10 log10(P_signal / P_noise)` over the whole signals.
pub fn measured_snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    math::db_power(mean_square(signal) / mean_square(noise))
}

const RESAMPLE_ZERO_CROSSINGS: usize = 32;
const RESAMPLE_KAISER_BETA: f64 = 8.0;
const RESAMPLE_ROLLOFF: f64 = 0.94;

/// Rational windowed-sinc resampler. Output length is
/// `floor(len * target / source)`.
pub fn resample(wave: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument("target rate must be positive".into()));
    }
    let source = wave.sample_rate();
    if source == target_rate {
        return Ok(wave.clone());
    }
    let g = math::gcd(source as u64, target_rate as u64);
    let up = (target_rate as u64 / g) as usize;
    let down = (source as u64 / g) as usize;
    let cutoff = RESAMPLE_ROLLOFF * if up < down { up as f64 / down as f64 } else { 1.0 };
    let half = math::ceil(RESAMPLE_ZERO_CROSSINGS as f64 / cutoff) as isize;
    let taps_per_phase = (2 * half) as usize;

    // phase p covers output times whose fractional input offset is p/up
    let mut table = vec![0.0; up * taps_per_phase];
    for p in 0..up {
        let frac = p as f64 / up as f64;
        let row = &mut table[p * taps_per_phase..(p + 1) * taps_per_phase];
        let mut sum = 0.0;
        for (j, r) in row.iter_mut().enumerate() {
            // tap j multiplies x[base - half + 1 + j]
            let offset = (j as isize - half + 1) as f64 - frac;
            let v = cutoff * math::sinc(cutoff * offset) * kaiser(offset / half as f64, RESAMPLE_KAISER_BETA);
            *r = v;
            sum += v;
        }
        for r in row.iter_mut() {
            *r /= sum;
        }
    }

    let out_len = (wave.len() as u64 * target_rate as u64 / source as u64) as usize;
    let x = wave.samples();
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let num = j * down;
        let base = (num / up) as isize;
        let phase = num % up;
        let row = &table[phase * taps_per_phase..(phase + 1) * taps_per_phase];
        let mut acc = 0.0;
        for (t, &w) in row.iter().enumerate() {
            let idx = base - half + 1 + t as isize;
            if idx >= 0 && (idx as usize) < x.len() {
                acc += w * x[idx as usize];
            }
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}

fn kaiser(t: f64, beta: f64) -> f64 {
    if t.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(beta * sqrt(1.0 - t * t)) / bessel_i0(beta)
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::sin;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn tone(freq: f64, len: usize, rate: u32) -> Waveform {
        let s = (0..len)
            .map(|n| sin(2.0 * PI * freq * n as f64 / rate as f64))
            .collect();
        Waveform::new(s, rate).unwrap()
    }

    fn direct_dft(x: &[f64], k: usize) -> Complex64 {
        let n = x.len();
        x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (t, &v)| {
            let ph = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
            acc + Complex64::new(v * cos(ph), v * sin(ph))
        })
    }

    #[test]
    fn waveform_rejects_non_finite() {
        assert!(Waveform::new(vec![0.0, f64::NAN], 16000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn frame_spec_validation() {
        assert!(FrameSpec::hann(320, 0).is_err());
        assert!(FrameSpec::hann(320, 321).is_err());
        let fs = FrameSpec::default();
        assert_eq!(fs.bins(), 161);
        assert_eq!(fs.frame_count(32000), 199);
        assert_eq!(fs.synthesis_len(199), 32000);
    }

    #[test]
    fn stft_short_input_errors() {
        let w = Waveform::zeros(100, 16000);
        assert!(matches!(
            stft(&w, &FrameSpec::default()),
            Err(Error::InsufficientSamples { needed: 320, got: 100 })
        ));
    }

    #[test]
    fn stft_of_silence_is_zero() {
        let s = stft(&Waveform::zeros(16000, 16000), &FrameSpec::default()).unwrap();
        assert!(s.data().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn stft_tone_peaks_at_bin_twenty() {
        let s = stft(&tone(1000.0, 16000, 16000), &FrameSpec::default()).unwrap();
        for m in 0..s.frames() {
            let (kmax, _) =
                s.frame(m).iter().enumerate().fold(
                    (0, 0.0),
                    |best, (k, c)| if c.norm() > best.1 { (k, c.norm()) } else { best },
                );
            assert_eq!(kmax, 20);
        }
        // frame 3 against a direct DFT of the windowed samples
        let fs = FrameSpec::default();
        let w = tone(1000.0, 16000, 16000);
        let seg: Vec<f64> = w.samples()[480..800]
            .iter()
            .zip(fs.window())
            .map(|(a, b)| a * b)
            .collect();
        for k in [0usize, 19, 20, 21, 160] {
            assert!((s.get(3, k) - direct_dft(&seg, k)).norm() < 1e-9);
        }
    }

    #[test]
    fn stft_of_impulse_is_window_spectrum() {
        let mut x = vec![0.0; 640];
        x[0] = 1.0;
        let fs = FrameSpec::default();
        let s = stft(&Waveform::new(x, 16000).unwrap(), &fs).unwrap();
        let mut delta = vec![0.0; 320];
        delta[0] = fs.window()[0];
        for k in 0..fs.bins() {
            assert!((s.get(0, k) - direct_dft(&delta, k)).norm() < 1e-12);
        }
    }

    #[test]
    fn round_trip_interior() {
        let x = Waveform::new(noise(16000, 1), 16000).unwrap();
        let y = istft(&stft(&x, &FrameSpec::default()).unwrap()).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for n in 160..y.len() - 160 {
            num += (y.samples()[n] - x.samples()[n]).powi(2);
            den += x.samples()[n].powi(2);
        }
        assert!(sqrt(num / den) < 1e-6);
    }

    #[test]
    fn istft_of_zero_frames_is_empty() {
        let s = ComplexSpectrogram::zeros(0, FrameSpec::default(), 16000);
        assert!(istft(&s).unwrap().is_empty());
        let z = ComplexSpectrogram::zeros(5, FrameSpec::default(), 16000);
        assert!(istft(&z).unwrap().samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn istft_adjoint_matches_inner_product() {
        let fs = FrameSpec::hann(16, 8).unwrap();
        let frames = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<Complex64> = (0..frames * fs.bins())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let spec = ComplexSpectrogram::new(frames, data.clone(), fs.clone(), 16000).unwrap();
        let y = istft(&spec).unwrap();
        let g: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = y.samples().iter().zip(&g).map(|(a, b)| a * b).sum();
        let (gr, gi) = istft_adjoint(&g, frames, &fs);
        // istft is linear in (Re, Im) apart from the ignored imaginary edge bins
        let rhs: f64 = data.iter().enumerate().map(|(i, c)| c.re * gr[i] + c.im * gi[i]).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn convolution_identity_and_shift() {
        let x = noise(1000, 2);
        assert_eq!(convolve_direct(&x, &[1.0]).unwrap(), x);
        let mut h = vec![0.0; 94];
        h[93] = 1.0;
        let y = convolve_fft(&x, &h).unwrap();
        assert_eq!(y.len(), x.len());
        for n in 0..93 {
            assert!(y[n].abs() < 1e-12);
        }
        for n in 93..x.len() {
            assert!((y[n] - x[n - 93]).abs() < 1e-12);
        }
        assert_eq!(convolve_direct(&x, &[]), Err(Error::EmptyKernel));
        assert_eq!(convolve_fft(&x, &[]), Err(Error::EmptyKernel));
    }

    #[test]
    fn direct_and_fft_convolution_agree() {
        let x = noise(4096, 5);
        let h = noise(512, 6);
        let a = convolve_direct(&x, &h).unwrap();
        let b = convolve_fft(&x, &h).unwrap();
        let diff = a.iter().zip(&b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn correlation_is_convolution_adjoint() {
        let x = noise(300, 7);
        let g = noise(300, 8);
        let h = noise(40, 9);
        let lhs: f64 = convolve_direct(&x, &h)
            .unwrap()
            .iter()
            .zip(&g)
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = correlate_samples(&g, &h)
            .unwrap()
            .iter()
            .zip(&x)
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn mixing_gains() {
        let a = Waveform::new(vec![1.0, -1.0, 1.0, -1.0], 16000).unwrap();
        let b = Waveform::new(vec![-1.0, 1.0, 1.0, -1.0], 16000).unwrap();
        assert!((mix_at_snr(&a, &b, 0.0).unwrap().1 - 1.0).abs() < 1e-15);
        assert!((mix_at_snr(&a, &b, 20.0).unwrap().1 - 10.0).abs() < 1e-12);
        let silent = Waveform::zeros(4, 16000);
        assert_eq!(mix_at_snr(&a, &silent, 0.0).unwrap_err(), Error::ZeroPower("speech"));
        assert_eq!(mix_at_snr(&silent, &a, 0.0).unwrap_err(), Error::ZeroPower("noise"));
    }

    #[test]
    fn mixed_snr_remeasures_exactly() {
        let n = Waveform::new(noise(8000, 10), 16000).unwrap();
        let s = Waveform::new(noise(8000, 11).iter().map(|v| v * 0.3).collect(), 16000).unwrap();
        for snr in [-5.0, 0.0, 3.7, 10.0] {
            let (_, alpha) = mix_at_snr(&n, &s, snr).unwrap();
            let scaled = s.scaled(alpha);
            assert!((measured_snr_db(scaled.samples(), n.samples()) - snr).abs() < 1e-9);
        }
    }

    #[test]
    fn resample_identity_dc_and_tone() {
        let x = Waveform::new(noise(1000, 12), 16000).unwrap();
        assert_eq!(resample(&x, 16000).unwrap(), x);

        let dc = Waveform::new(vec![0.5; 16000], 16000).unwrap();
        let y = resample(&dc, 10000).unwrap();
        assert_eq!(y.len(), 10000);
        for &v in &y.samples()[200..9800] {
            assert!((v - 0.5).abs() < 1e-3);
        }

        let t = resample(&tone(1000.0, 16000, 16000), 10000).unwrap();
        assert_eq!(t.sample_rate(), 10000);
        // 1000 Hz at 10 kHz with a 500-point DFT lands on bin 50
        let seg = &t.samples()[1000..1500];
        let (kmax, _) = (1..250).fold((0, 0.0), |best, k| {
            let v = direct_dft(seg, k).norm();
            if v > best.1 {
                (k, v)
            } else {
                best
            }
        });
        assert_eq!(kmax, 50);
    }

    #[test]
    fn upsampling_preserves_tone() {
        let t = resample(&tone(440.0, 8000, 8000), 16000).unwrap();
        assert_eq!(t.len(), 16000);
        let expect = tone(440.0, 16000, 16000);
        for n in 500..15500 {
            assert!((t.samples()[n] - expect.samples()[n]).abs() < 2e-3);
        }
    }

    #[test]
    fn normalization() {
        let x = Waveform::new(noise(500, 13), 16000).unwrap();
        assert!((x.rms_normalized(0.1).unwrap().rms() - 0.1).abs() < 1e-12);
        let p = x.peak_normalized(0.9).unwrap();
        assert!((p.samples().iter().fold(0.0f64, |m, v| m.max(v.abs())) - 0.9).abs() < 1e-12);
        assert!(Waveform::zeros(10, 16000).rms_normalized(0.1).is_err());
    }
}
