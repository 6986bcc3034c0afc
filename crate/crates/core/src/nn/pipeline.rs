//! Reference in, anti-noise out: `x -> stft -> crn -> istft -> s * y`.

use alloc::vec::Vec;

use super::crn::{features_to_spectrogram, spectrogram_to_features, CrnParams};
use super::tensor::FeatureMap;
use crate::dsp::{convolve_samples, correlate_samples, istft, istft_adjoint, stft, FrameSpec, Waveform};
use crate::error::{Error, Result};
use crate::scenario::ScenarioSample;

/// Control signal and its image at the error microphone.
#[derive(Debug, Clone, PartialEq)]
pub struct AncOutput {
    pub y: Waveform,
    pub a: Waveform,
}

/// Runs the controller on a whole reference signal. `y` is truncated or
/// zero-padded to `x.len()`.
pub fn anc_apply(params: &CrnParams, x: &Waveform, s_true: &[f64], frame_spec: &FrameSpec) -> Result<AncOutput> {
    let spec = stft(x, frame_spec)?;
    let out = params.forward(&spectrogram_to_features(&spec))?;
    let y = istft(&features_to_spectrogram(&out, frame_spec, x.sample_rate())?)?.fitted(x.len());
    let a = Waveform::new(convolve_samples(y.samples(), s_true)?, x.sample_rate())?;
    Ok(AncOutput { y, a })
}

/// `(1/L) sum (e - d_speech)^2`.
pub fn speech_preserving_loss(e: &[f64], d_speech: &[f64]) -> Result<f64> {
    if e.len() != d_speech.len() {
        return Err(Error::LengthMismatch(e.len(), d_speech.len()));
    }
    if e.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    Ok(e.iter().zip(d_speech).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / e.len() as f64)
}

/// `(1/L) sum (d_noise + a)^2`, the same loss once `e = d_noise + d_speech + a`
/// is substituted.
pub fn residual_noise_loss(d_noise: &[f64], a: &[f64]) -> Result<f64> {
    if d_noise.len() != a.len() {
        return Err(Error::LengthMismatch(d_noise.len(), a.len()));
    }
    if a.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    Ok(d_noise.iter().zip(a).map(|(p, q)| (p + q) * (p + q)).sum::<f64>() / a.len() as f64)
}

/// Forward and backward for one sample through the frozen secondary path.
/// Gradients are added to the parameters' buffers; returns the loss.
pub fn sample_loss_and_grad(params: &mut CrnParams, sample: &ScenarioSample, frame_spec: &FrameSpec) -> Result<f64> {
    let x = &sample.x;
    let len = x.len();
    let spec = stft(x, frame_spec)?;
    let frames = spec.frames();
    let cache = params.forward_cached(&spectrogram_to_features(&spec))?;
    let y = istft(&features_to_spectrogram(cache.output(), frame_spec, x.sample_rate())?)?;
    let y = y.fitted(len);
    let a = convolve_samples(y.samples(), params.s_taps())?;

    let d_noise = sample.d_noise.samples();
    let d_speech = sample.d_speech.samples();
    if d_noise.len() != len || d_speech.len() != len {
        return Err(Error::LengthMismatch(d_noise.len().min(d_speech.len()), len));
    }
    let e: Vec<f64> = (0..len).map(|n| d_noise[n] + d_speech[n] + a[n]).collect();
    let loss = speech_preserving_loss(&e, d_speech)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }

    let scale = 2.0 / len as f64;
    let g_a: Vec<f64> = e.iter().zip(d_speech).map(|(p, q)| scale * (p - q)).collect();
    let g_y = correlate_samples(&g_a, params.s_taps())?;
    let (g_re, g_im) = istft_adjoint(&g_y, frames, frame_spec);
    let bins = spec.bins();
    let mut g_out = FeatureMap::zeros(2, frames, bins);
    for t in 0..frames {
        g_out.row_mut(0, t).copy_from_slice(&g_re[t * bins..(t + 1) * bins]);
        g_out.row_mut(1, t).copy_from_slice(&g_im[t * bins..(t + 1) * bins]);
    }
    params.backward(&cache, &g_out)?;
    Ok(loss)
}

/// Loss without touching gradients.
pub fn sample_loss(params: &CrnParams, sample: &ScenarioSample, frame_spec: &FrameSpec) -> Result<f64> {
    let out = anc_apply(params, &sample.x, params.s_taps(), frame_spec)?;
    residual_noise_loss(sample.d_noise.samples(), out.a.samples())
}
