//! Mono WAV files, 16-bit PCM or 32-bit float.

use std::path::Path;

use anclab_core::dsp::{resample, Waveform};
use hound::{SampleFormat, WavSpec, WavWriter};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

/// Reads a mono file. With `target_rate` set, other rates are resampled.
pub fn read_wav(path: &Path, target_rate: Option<u32>) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path).map_err(|e| LabError::wav(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(LabError::format(
            path,
            format!("expected mono, found {} channels", spec.channels),
        ));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| LabError::wav(path, e))?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| LabError::wav(path, e))?
        }
        (fmt, bits) => {
            return Err(LabError::format(
                path,
                format!("unsupported sample format {fmt:?}/{bits}"),
            ))
        }
    };
    let wave = Waveform::new(samples, spec.sample_rate)?;
    match target_rate {
        Some(rate) if rate != wave.sample_rate() => Ok(resample(&wave, rate)?),
        _ => Ok(wave),
    }
}

pub fn write_wav(path: &Path, wave: &Waveform, format: WavFormat) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => SampleFormat::Int,
            WavFormat::Float32 => SampleFormat::Float,
        },
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| LabError::wav(path, e))?;
    for &s in wave.samples() {
        let r = match format {
            WavFormat::Float32 => w.write_sample(s as f32),
            WavFormat::Pcm16 => w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16),
        };
        r.map_err(|e| LabError::wav(path, e))?;
    }
    w.finalize().map_err(|e| LabError::wav(path, e))
}
