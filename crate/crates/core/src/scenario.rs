//! Training and evaluation sample synthesis.
//!
//! A sample is built from a dry noise source and (for the speech task) a dry
//! speech source: both are RMS-normalized, the speech is scaled once to the
//! requested SNR, the reference is the dry mixture and the error-microphone
//! components are the sources convolved with the primary path.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::{self, Waveform};
use crate::error::{Error, Result};
use crate::math::{self, cos, sin, sqrt, PI};
use crate::room::Rir;

/// RMS every dry source is scaled to before mixing.
pub const SOURCE_RMS: f64 = 0.1;
pub const DEFAULT_DURATION_S: f64 = 2.0;
pub const DEFAULT_TEST_SNR_DB: f64 = 5.0;
pub const DEFAULT_TRAIN_SNR_RANGE_DB: [f64; 2] = [0.0, 10.0];

/// Built-in signal generators standing in for recorded corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoiseKind {
    Engine,
    Babble,
    Factory,
    LowfreqCar,
    JetBroadband,
    SpeechLike,
}

impl NoiseKind {
    /// The five noise benchmarks, in report order.
    pub const BENCHMARK: [NoiseKind; 5] = [
        NoiseKind::Engine,
        NoiseKind::Factory,
        NoiseKind::Babble,
        NoiseKind::LowfreqCar,
        NoiseKind::JetBroadband,
    ];

    pub fn id(self) -> &'static str {
        match self {
            NoiseKind::Engine => "engine",
            NoiseKind::Babble => "babble",
            NoiseKind::Factory => "factory",
            NoiseKind::LowfreqCar => "lowfreq-car",
            NoiseKind::JetBroadband => "jet-broadband",
            NoiseKind::SpeechLike => "speech-like",
        }
    }

    pub fn parse(id: &str) -> Result<Self> {
        Ok(match id {
            "engine" => NoiseKind::Engine,
            "babble" => NoiseKind::Babble,
            "factory" => NoiseKind::Factory,
            "lowfreq-car" => NoiseKind::LowfreqCar,
            "jet-broadband" => NoiseKind::JetBroadband,
            "speech-like" => NoiseKind::SpeechLike,
            other => return Err(Error::UnknownGenerator(other.to_string())),
        })
    }

    fn salt(self) -> u64 {
        match self {
            NoiseKind::Engine => 0x656e_6769_6e65,
            NoiseKind::Babble => 0x6261_6262_6c65,
            NoiseKind::Factory => 0x6661_6374_6f72,
            NoiseKind::LowfreqCar => 0x6361_7200_0000,
            NoiseKind::JetBroadband => 0x6a65_7400_0000,
            NoiseKind::SpeechLike => 0x7370_6565_6368,
        }
    }
}

impl core::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.id())
    }
}

/// Deterministic synthetic source for `(kind, seed)`.
pub fn generate_source(kind: NoiseKind, duration_s: f64, seed: u64, sample_rate: u32) -> Result<Waveform> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::InvalidArgument("duration must be positive".into()));
    }
    if sample_rate == 0 {
        return Err(Error::InvalidArgument("sample rate must be positive".into()));
    }
    let len = math::round(duration_s * sample_rate as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind.salt());
    let fs = sample_rate as f64;
    let samples = match kind {
        NoiseKind::Engine => engine(&mut rng, len, fs),
        NoiseKind::Babble => babble(&mut rng, len, fs),
        NoiseKind::Factory => factory(&mut rng, len, fs),
        NoiseKind::LowfreqCar => lowfreq_car(&mut rng, len, fs),
        NoiseKind::JetBroadband => jet(&mut rng, len, fs),
        NoiseKind::SpeechLike => speech_like(&mut rng, len, fs),
    };
    Waveform::new(samples, sample_rate)
}

/// [`generate_source`] addressed by generator id.
pub fn generate_source_by_id(id: &str, duration_s: f64, seed: u64, sample_rate: u32) -> Result<Waveform> {
    generate_source(NoiseKind::parse(id)?, duration_s, seed, sample_rate)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Direct-form I biquad.
#[derive(Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
}

impl Biquad {
    fn from_coefficients(b: [f64; 3], a: [f64; 3]) -> Self {
        Self {
            b: [b[0] / a[0], b[1] / a[0], b[2] / a[0]],
            a: [a[1] / a[0], a[2] / a[0]],
            x: [0.0; 2],
            y: [0.0; 2],
        }
    }

    /// Constant 0 dB peak-gain band-pass.
    fn bandpass(freq: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * freq / fs;
        let alpha = sin(w0) / (2.0 * q);
        Self::from_coefficients([alpha, 0.0, -alpha], [1.0 + alpha, -2.0 * cos(w0), 1.0 - alpha])
    }

    fn lowpass(freq: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * freq / fs;
        let alpha = sin(w0) / (2.0 * q);
        let c = cos(w0);
        Self::from_coefficients(
            [(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0],
            [1.0 + alpha, -2.0 * c, 1.0 - alpha],
        )
    }

    fn highpass(freq: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * freq / fs;
        let alpha = sin(w0) / (2.0 * q);
        let c = cos(w0);
        Self::from_coefficients(
            [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0],
            [1.0 + alpha, -2.0 * c, 1.0 - alpha],
        )
    }

    fn process(&mut self, v: f64) -> f64 {
        let out = self.b[0] * v + self.b[1] * self.x[0] + self.b[2] * self.x[1]
            - self.a[0] * self.y[0]
            - self.a[1] * self.y[1];
        self.x = [v, self.x[0]];
        self.y = [out, self.y[0]];
        out
    }
}

/// Harmonic stack with a slowly modulated envelope.
fn engine(rng: &mut ChaCha8Rng, len: usize, fs: f64) -> Vec<f64> {
    let f0 = rng.random_range(60.0..120.0);
    let partials = rng.random_range(8..=12usize);
    let harmonics: Vec<(f64, f64, f64)> = (1..=partials)
        .map(|k| {
            let amp = rng.random_range(0.6..1.0) / math::powf(k as f64, 0.8);
            (k as f64 * f0, amp, rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let am_rate = rng.random_range(0.3..1.5);
    let am_phase = rng.random_range(0.0..2.0 * PI);
    let floor = 0.003;
    (0..len)
        .map(|n| {
            let t = n as f64 / fs;
            let env = 1.0 + 0.15 * sin(2.0 * PI * am_rate * t + am_phase);
            let tone: f64 = harmonics.iter().map(|&(f, a, p)| a * sin(2.0 * PI * f * t + p)).sum();
            env * tone + floor * gaussian(rng)
        })
        .collect()
}

/// Glottal-like pulse train at a slowly varying pitch.
fn pulse_train(rng: &mut ChaCha8Rng, len: usize, fs: f64, f0: f64) -> Vec<f64> {
    let vibrato_rate = rng.random_range(3.0..6.0);
    let vibrato_depth = rng.random_range(0.02..0.06);
    let mut phase = rng.random_range(0.0..1.0);
    let mut out = vec![0.0; len];
    for (n, o) in out.iter_mut().enumerate() {
        let t = n as f64 / fs;
        let f = f0 * (1.0 + vibrato_depth * sin(2.0 * PI * vibrato_rate * t));
        phase += f / fs;
        if phase >= 1.0 {
            phase -= 1.0;
            *o = 1.0;
        }
    }
    out
}

/// Sum of band-passed voiced streams, each gated at a syllabic rate.
fn babble(rng: &mut ChaCha8Rng, len: usize, fs: f64) -> Vec<f64> {
    let streams = rng.random_range(6..=8usize);
    let mut out = vec![0.0; len];
    for _ in 0..streams {
        let f0 = rng.random_range(90.0..220.0);
        let pulses = pulse_train(rng, len, fs, f0);
        let syllable_rate = rng.random_range(3.0..6.0);
        let syllable_len = (fs / syllable_rate) as usize;
        let mut start = 0;
        let mut f1 = Biquad::bandpass(rng.random_range(300.0..900.0), 4.0, fs);
        let mut f2 = Biquad::bandpass(rng.random_range(900.0..2500.0), 6.0, fs);
        let gain = rng.random_range(0.6..1.0);
        while start < len {
            let end = (start + syllable_len).min(len);
            let f1_new = Biquad::bandpass(rng.random_range(300.0..900.0), 4.0, fs);
            let f2_new = Biquad::bandpass(rng.random_range(900.0..2500.0), 6.0, fs);
            // keep filter memory across syllables
            f1 = Biquad {
                x: f1.x,
                y: f1.y,
                ..f1_new
            };
            f2 = Biquad {
                x: f2.x,
                y: f2.y,
                ..f2_new
            };
            for n in start..end {
                let phase = (n - start) as f64 / syllable_len as f64;
                let env = sin(PI * phase);
                let v = f1.process(pulses[n]) + 0.6 * f2.process(pulses[n]);
                out[n] += gain * env * env * v;
            }
            start = end;
        }
    }
    out
}

/// Resonant machine-room noise with random impacts.
fn factory(rng: &mut ChaCha8Rng, len: usize, fs: f64) -> Vec<f64> {
    let mut lp = Biquad::lowpass(rng.random_range(800.0..2000.0), 0.707, fs);
    let mut hum = Biquad::bandpass(rng.random_range(200.0..600.0), 8.0, fs);
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            let w = gaussian(rng);
            lp.process(w) + 2.0 * hum.process(w)
        })
        .collect();
    let base_rms = sqrt(out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64);
    let rate = 3.0;
    let mut n = 0usize;
    loop {
        let gap = -math::ln(1.0 - rng.random_range(0.0..1.0)) / rate;
        n += (gap * fs) as usize + 1;
        if n >= len {
            break;
        }
        let tau = rng.random_range(0.02..0.06) * fs;
        let amp = rng.random_range(3.0..6.0) * base_rms;
        let mut ring = Biquad::bandpass(rng.random_range(1500.0..4000.0), 3.0, fs);
        let span = ((5.0 * tau) as usize).min(len - n);
        for k in 0..span {
            let v = amp * math::exp(-(k as f64) / tau) * gaussian(rng);
            out[n + k] += ring.process(v) * 2.0;
        }
    }
    out
}

/// Broadband noise concentrated below 300 Hz.
fn lowfreq_car(rng: &mut ChaCha8Rng, len: usize, fs: f64) -> Vec<f64> {
    let cutoff = rng.random_range(120.0..250.0);
    let mut a = Biquad::lowpass(cutoff, 0.707, fs);
    let mut b = Biquad::lowpass(cutoff, 0.707, fs);
    let mut hp = Biquad::highpass(15.0, 0.707, fs);
    let hum_f = rng.random_range(30.0..50.0);
    (0..len)
        .map(|n| {
            let t = n as f64 / fs;
            let w = gaussian(rng);
            hp.process(b.process(a.process(w))) + 0.02 * sin(2.0 * PI * hum_f * t)
        })
        .collect()
}

/// Wideband noise with a gentle high-frequency tilt and a mid-band hump.
fn jet(rng: &mut ChaCha8Rng, len: usize, fs: f64) -> Vec<f64> {
    let mut lp = Biquad::lowpass(rng.random_range(2500.0..4500.0), 0.6, fs);
    let mut hump = Biquad::bandpass(rng.random_range(1000.0..2000.0), 1.5, fs);
    (0..len)
        .map(|_| {
            let w = gaussian(rng);
            lp.process(w) + 0.5 * hump.process(w)
        })
        .collect()
}

const VOWELS: [(f64, f64, f64); 6] = [
    (730.0, 1090.0, 2440.0),
    (270.0, 2290.0, 3010.0),
    (530.0, 1840.0, 2480.0),
    (570.0, 840.0, 2410.0),
    (300.0, 870.0, 2240.0),
    (660.0, 1720.0, 2410.0),
];

/// Formant-filtered pulse trains grouped into syllables with pauses.
fn speech_like(rng: &mut ChaCha8Rng, len: usize, fs: f64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let base_f0 = rng.random_range(100.0..200.0);
    let mut n = (rng.random_range(0.0..0.1) * fs) as usize;
    while n < len {
        let dur = (rng.random_range(0.12..0.28) * fs) as usize;
        let end = (n + dur).min(len);
        let (f1, f2, f3) = VOWELS[rng.random_range(0..VOWELS.len())];
        let mut r1 = Biquad::bandpass(f1, 5.0, fs);
        let mut r2 = Biquad::bandpass(f2, 8.0, fs);
        let mut r3 = Biquad::bandpass(f3, 10.0, fs);
        let f0_start = base_f0 * rng.random_range(0.9..1.2);
        let mut phase = 0.0;
        for (k, slot) in out.iter_mut().enumerate().take(end).skip(n) {
            let pos = (k - n) as f64 / dur as f64;
            let f0 = f0_start * (1.0 - 0.15 * pos);
            phase += f0 / fs;
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                0.0
            };
            let excitation = pulse + 0.02 * gaussian(rng);
            let v = r1.process(excitation) + 0.5 * r2.process(excitation) + 0.25 * r3.process(excitation);
            let env = sin(PI * pos);
            *slot = env * v;
        }
        let gap = if rng.random_range(0.0..1.0) < 0.3 {
            rng.random_range(0.15..0.45)
        } else {
            rng.random_range(0.02..0.06)
        };
        n = end + (gap * fs) as usize;
    }
    out
}

/// Fraction of non-overlapping frames whose energy is more than
/// `threshold_db` below the loudest frame.
pub fn silence_fraction(x: &[f64], frame: usize, threshold_db: f64) -> f64 {
    let energies: Vec<f64> = x.chunks_exact(frame).map(|c| c.iter().map(|v| v * v).sum()).collect();
    if energies.is_empty() {
        return 0.0;
    }
    let peak = energies.iter().copied().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return 1.0;
    }
    let limit = peak * math::powf(10.0, -threshold_db / 10.0);
    energies.iter().filter(|&&e| e < limit).count() as f64 / energies.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Task {
    PureNoise,
    SpeechPreserve,
}

/// How the reference microphone hears the sources.
#[derive(Debug, Clone, Copy)]
pub enum ReferenceMode<'a> {
    /// The dry mixture, as if the microphone sat on the source.
    Dry,
    /// The mixture convolved with a reference-path response.
    Reverberant(&'a Rir),
}

/// One training/evaluation item.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSample {
    /// Reference signal.
    pub x: Waveform,
    /// Noise at the error microphone.
    pub d_noise: Waveform,
    /// Speech at the error microphone (all zero for the pure-noise task).
    pub d_speech: Waveform,
    /// What the error microphone should hear after control.
    pub target: Waveform,
    pub snr_db: Option<f64>,
    pub noise_label: String,
    pub seed: u64,
    /// Gain applied to the normalized speech source (0 without speech).
    pub speech_gain: f64,
}

impl ScenarioSample {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// `d_noise + d_speech`.
    pub fn disturbance(&self) -> Waveform {
        self.d_noise.add(&self.d_speech).expect("components share a timeline")
    }
}

/// Builds a sample from dry sources. The speech source is scaled once to
/// the requested SNR and that scaled speech is what appears in `x`,
/// `d_speech` and `target`.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_sample(
    noise_src: &Waveform,
    speech_src: Option<&Waveform>,
    snr_db: Option<f64>,
    h_pri: &Rir,
    task: Task,
    seed: u64,
    noise_label: &str,
    reference: ReferenceMode<'_>,
) -> Result<ScenarioSample> {
    match (task, speech_src.is_some(), snr_db.is_some()) {
        (Task::PureNoise, false, false) | (Task::SpeechPreserve, true, true) => {}
        (Task::PureNoise, ..) => return Err(Error::TaskMismatch("pure-noise samples take no speech or snr")),
        (Task::SpeechPreserve, ..) => {
            return Err(Error::TaskMismatch("speech-preserve samples need speech and an snr"))
        }
    }
    if noise_src.sample_rate() != h_pri.sample_rate {
        return Err(Error::RateMismatch(noise_src.sample_rate(), h_pri.sample_rate));
    }
    let noise = noise_src
        .rms_normalized(SOURCE_RMS)
        .map_err(|_| Error::ZeroPower("noise"))?;
    let rate = noise.sample_rate();
    let len = noise.len();

    let (speech, gain) = match (speech_src, snr_db) {
        (Some(s), Some(snr)) => {
            let s = s.rms_normalized(SOURCE_RMS).map_err(|_| Error::ZeroPower("speech"))?;
            let gain = dsp::snr_gain(&noise, &s, snr)?;
            (s.scaled(gain), gain)
        }
        _ => (Waveform::zeros(len, rate), 0.0),
    };

    let mixture = noise.add(&speech)?;
    let x = match reference {
        ReferenceMode::Dry => mixture,
        ReferenceMode::Reverberant(h_ref) => dsp::convolve_fir(&mixture, &h_ref.taps)?,
    };
    let d_noise = dsp::convolve_fir(&noise, &h_pri.taps)?;
    let d_speech = match task {
        Task::PureNoise => Waveform::zeros(len, rate),
        Task::SpeechPreserve => dsp::convolve_fir(&speech, &h_pri.taps)?,
    };
    let target = d_speech.clone();
    Ok(ScenarioSample {
        x,
        d_noise,
        d_speech,
        target,
        snr_db,
        noise_label: noise_label.to_string(),
        seed,
        speech_gain: gain,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn salt(self) -> u64 {
        match self {
            Split::Train => 0x7472_6169_6e00,
            Split::Test => 0x7465_7374_0000,
        }
    }
}

/// Everything needed to plan a dataset.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetConfig {
    pub task: Task,
    pub split: Split,
    /// Noise labels; samples are assigned round-robin in blocks per label.
    pub noise_labels: Vec<String>,
    pub samples_per_label: usize,
    /// Uniform SNR range for the training split.
    pub snr_range_db: [f64; 2],
    /// Fixed SNR for the test split.
    pub test_snr_db: f64,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn new(task: Task, split: Split, noise_labels: Vec<String>, samples_per_label: usize, seed: u64) -> Self {
        Self {
            task,
            split,
            noise_labels,
            samples_per_label,
            snr_range_db: DEFAULT_TRAIN_SNR_RANGE_DB,
            test_snr_db: DEFAULT_TEST_SNR_DB,
            duration_s: DEFAULT_DURATION_S,
            sample_rate: 16_000,
            seed,
        }
    }
}

/// Recipe for one sample; with the room and sources it regenerates the
/// sample bit-exactly.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SampleSpec {
    pub id: String,
    pub noise_label: String,
    pub noise_seed: u64,
    pub speech_seed: Option<u64>,
    pub snr_db: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetManifest {
    pub task: Task,
    pub split: Split,
    pub sample_count: usize,
    /// Set for the training split.
    pub snr_range_db: Option<[f64; 2]>,
    /// Set for the test split of the speech task.
    pub fixed_snr_db: Option<f64>,
    pub room_fingerprint: String,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
    pub samples: Vec<SampleSpec>,
}

pub fn plan_dataset(config: &DatasetConfig, room_fingerprint: u64) -> Result<DatasetManifest> {
    if config.noise_labels.is_empty() {
        return Err(Error::InvalidArgument("at least one noise label is required".into()));
    }
    if !(config.duration_s > 0.0) {
        return Err(Error::InvalidArgument("duration must be positive".into()));
    }
    let [lo, hi] = config.snr_range_db;
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(
            "snr range must be finite with low <= high".into(),
        ));
    }
    let speech = config.task == Task::SpeechPreserve;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ config.split.salt());
    let mut samples = Vec::with_capacity(config.noise_labels.len() * config.samples_per_label);
    for label in &config.noise_labels {
        for _ in 0..config.samples_per_label {
            let noise_seed = rng.next_u64();
            let speech_seed = rng.next_u64();
            let seed = rng.next_u64();
            let draw: f64 = rng.random_range(0.0..1.0);
            let snr_db = match (speech, config.split) {
                (false, _) => None,
                (true, Split::Train) => Some(lo + (hi - lo) * draw),
                (true, Split::Test) => Some(config.test_snr_db),
            };
            samples.push(SampleSpec {
                id: format!("{}-{:05}", split_name(config.split), samples.len()),
                noise_label: label.clone(),
                noise_seed,
                speech_seed: speech.then_some(speech_seed),
                snr_db,
                seed,
            });
        }
    }
    Ok(DatasetManifest {
        task: config.task,
        split: config.split,
        sample_count: samples.len(),
        snr_range_db: (config.split == Split::Train && speech).then_some(config.snr_range_db),
        fixed_snr_db: (config.split == Split::Test && speech).then_some(config.test_snr_db),
        room_fingerprint: format!("{room_fingerprint:016x}"),
        duration_s: config.duration_s,
        sample_rate: config.sample_rate,
        seed: config.seed,
        samples,
    })
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

/// Supplies dry sources for sample materialization.
pub trait SourceProvider {
    fn noise(&self, label: &str, seed: u64, duration_s: f64, sample_rate: u32) -> Result<Waveform>;
    fn speech(&self, seed: u64, duration_s: f64, sample_rate: u32) -> Result<Waveform>;
}

/// Built-in generators: noise labels are generator ids and speech comes from
/// the speech-like generator.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticSources;

impl SourceProvider for SyntheticSources {
    fn noise(&self, label: &str, seed: u64, duration_s: f64, sample_rate: u32) -> Result<Waveform> {
        generate_source_by_id(label, duration_s, seed, sample_rate)
    }

    fn speech(&self, seed: u64, duration_s: f64, sample_rate: u32) -> Result<Waveform> {
        generate_source(NoiseKind::SpeechLike, duration_s, seed, sample_rate)
    }
}

/// Regenerates the sample described by `spec`.
pub fn materialize(
    spec: &SampleSpec,
    manifest: &DatasetManifest,
    h_pri: &Rir,
    sources: &dyn SourceProvider,
    reference: ReferenceMode<'_>,
) -> Result<ScenarioSample> {
    let noise = sources.noise(
        &spec.noise_label,
        spec.noise_seed,
        manifest.duration_s,
        manifest.sample_rate,
    )?;
    let speech = match spec.speech_seed {
        Some(s) => Some(sources.speech(s, manifest.duration_s, manifest.sample_rate)?),
        None => None,
    };
    synthesize_sample(
        &noise,
        speech.as_ref(),
        spec.snr_db,
        h_pri,
        manifest.task,
        spec.seed,
        &spec.noise_label,
        reference,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::measured_snr_db;
    use crate::metrics::psd_welch;
    use crate::room::{simulate_paths, RoomSpec, TransducerLayout};

    fn paths() -> crate::room::PathPair {
        simulate_paths(&RoomSpec::default(), &TransducerLayout::default()).unwrap()
    }

    #[test]
    fn generators_are_deterministic() {
        for kind in [
            NoiseKind::Engine,
            NoiseKind::Babble,
            NoiseKind::Factory,
            NoiseKind::LowfreqCar,
            NoiseKind::JetBroadband,
            NoiseKind::SpeechLike,
        ] {
            let a = generate_source(kind, 0.5, 7, 16000).unwrap();
            let b = generate_source(kind, 0.5, 7, 16000).unwrap();
            assert_eq!(a.len(), 8000);
            assert!(a
                .samples()
                .iter()
                .zip(b.samples())
                .all(|(p, q)| p.to_bits() == q.to_bits()));
            assert!(a.rms() > 0.0, "{kind} is silent");
            let c = generate_source(kind, 0.5, 8, 16000).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn unknown_generator() {
        assert_eq!(
            generate_source_by_id("vacuum", 1.0, 0, 16000).unwrap_err(),
            Error::UnknownGenerator("vacuum".into())
        );
        assert!(generate_source(NoiseKind::Engine, 0.0, 0, 16000).is_err());
    }

    #[test]
    fn engine_has_harmonic_peaks() {
        let x = generate_source(NoiseKind::Engine, 4.0, 7, 16000).unwrap();
        // 4096-point segments give ~3.9 Hz bins, fine enough to resolve 60 Hz spacing
        let psd = psd_welch(&x, 4096, 0.5).unwrap();
        let db: Vec<f64> = psd.density.iter().map(|p| 10.0 * math::log10(p.max(1e-30))).collect();
        // local maxima standing 10 dB over the minimum on both sides
        let mut peaks = Vec::new();
        for k in 2..db.len() - 2 {
            if db[k] >= db[k - 1] && db[k] >= db[k + 1] && psd.freqs[k] > 40.0 && psd.freqs[k] < 2000.0 {
                peaks.push(k);
            }
        }
        let strong: Vec<usize> = peaks
            .iter()
            .copied()
            .filter(|&k| {
                let lo = k.saturating_sub(12);
                let hi = (k + 12).min(db.len() - 1);
                let left = db[lo..k].iter().copied().fold(f64::INFINITY, f64::min);
                let right = db[k + 1..=hi].iter().copied().fold(f64::INFINITY, f64::min);
                db[k] - left >= 10.0 && db[k] - right >= 10.0
            })
            .collect();
        assert!(strong.len() >= 5, "{} strong peaks", strong.len());
        // spacing of consecutive strong peaks is a common fundamental
        let f: Vec<f64> = strong.iter().map(|&k| psd.freqs[k]).collect();
        let f0 = f[0];
        for v in &f {
            let ratio = v / f0;
            assert!((ratio - math::round(ratio)).abs() < 0.1, "{v} vs {f0}");
        }
    }

    #[test]
    fn speech_like_has_pauses() {
        for seed in 0..5 {
            let x = generate_source(NoiseKind::SpeechLike, 2.0, seed, 16000).unwrap();
            let frac = silence_fraction(x.samples(), 320, 30.0);
            assert!((0.1..=0.6).contains(&frac), "seed {seed}: {frac}");
        }
    }

    #[test]
    fn pure_noise_sample() {
        let p = paths();
        let n = generate_source(NoiseKind::Factory, 1.0, 3, 16000).unwrap();
        let s = synthesize_sample(
            &n,
            None,
            None,
            &p.primary,
            Task::PureNoise,
            3,
            "factory",
            ReferenceMode::Dry,
        )
        .unwrap();
        let normalized = n.rms_normalized(SOURCE_RMS).unwrap();
        assert_eq!(s.x, normalized);
        assert!(s.target.samples().iter().all(|&v| v == 0.0));
        assert!(s.d_speech.samples().iter().all(|&v| v == 0.0));
        assert_eq!(s.d_noise.len(), s.x.len());
    }

    #[test]
    fn identity_path_speech_sample() {
        let ident = Rir::identity(16000);
        let n = generate_source(NoiseKind::Babble, 1.0, 1, 16000).unwrap();
        let sp = generate_source(NoiseKind::SpeechLike, 1.0, 2, 16000).unwrap();
        let s = synthesize_sample(
            &n,
            Some(&sp),
            Some(5.0),
            &ident,
            Task::SpeechPreserve,
            9,
            "babble",
            ReferenceMode::Dry,
        )
        .unwrap();
        let scaled = sp.rms_normalized(SOURCE_RMS).unwrap().scaled(s.speech_gain);
        assert_eq!(s.d_speech, scaled);
        assert_eq!(s.target, s.d_speech);
        let noise = n.rms_normalized(SOURCE_RMS).unwrap();
        assert!((measured_snr_db(scaled.samples(), noise.samples()) - 5.0).abs() < 1e-6);
        // the reference carries exactly the same scaled speech
        let x_speech = s.x.sub(&noise).unwrap();
        for (a, b) in x_speech.samples().iter().zip(scaled.samples()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn decomposition_matches_mixture_convolution() {
        let p = paths();
        let n = generate_source(NoiseKind::Engine, 1.0, 4, 16000).unwrap();
        let sp = generate_source(NoiseKind::SpeechLike, 1.0, 5, 16000).unwrap();
        let s = synthesize_sample(
            &n,
            Some(&sp),
            Some(3.0),
            &p.primary,
            Task::SpeechPreserve,
            1,
            "engine",
            ReferenceMode::Dry,
        )
        .unwrap();
        let whole = dsp::convolve_fir(&s.x, &p.primary.taps).unwrap();
        let d = s.disturbance();
        for (a, b) in whole.samples().iter().zip(d.samples()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn task_argument_consistency() {
        let p = paths();
        let n = generate_source(NoiseKind::Engine, 0.5, 4, 16000).unwrap();
        assert!(matches!(
            synthesize_sample(
                &n,
                Some(&n),
                Some(0.0),
                &p.primary,
                Task::PureNoise,
                0,
                "e",
                ReferenceMode::Dry
            ),
            Err(Error::TaskMismatch(_))
        ));
        assert!(matches!(
            synthesize_sample(
                &n,
                None,
                None,
                &p.primary,
                Task::SpeechPreserve,
                0,
                "e",
                ReferenceMode::Dry
            ),
            Err(Error::TaskMismatch(_))
        ));
        let silent = Waveform::zeros(8000, 16000);
        assert_eq!(
            synthesize_sample(
                &n,
                Some(&silent),
                Some(0.0),
                &p.primary,
                Task::SpeechPreserve,
                0,
                "e",
                ReferenceMode::Dry
            )
            .unwrap_err(),
            Error::ZeroPower("speech")
        );
    }

    #[test]
    fn test_manifest_layout() {
        let labels: Vec<String> = NoiseKind::BENCHMARK.iter().map(|k| k.id().to_string()).collect();
        let cfg = DatasetConfig::new(Task::SpeechPreserve, Split::Test, labels, 20, 42);
        let m = plan_dataset(&cfg, 1).unwrap();
        assert_eq!(m.sample_count, 100);
        assert!(m.samples.iter().all(|s| s.snr_db == Some(5.0)));
        assert_eq!(m, plan_dataset(&cfg, 1).unwrap());
    }

    #[test]
    fn train_manifest_snr_range() {
        let cfg = DatasetConfig::new(Task::SpeechPreserve, Split::Train, vec!["engine".into()], 400, 7);
        let m = plan_dataset(&cfg, 1).unwrap();
        let snrs: Vec<f64> = m.samples.iter().map(|s| s.snr_db.unwrap()).collect();
        let lo = snrs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = snrs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo >= 0.0 && hi <= 10.0);
        assert!(hi - lo > 5.0, "draws should spread over the range");
        let seeds: alloc::collections::BTreeSet<u64> = m.samples.iter().map(|s| s.seed).collect();
        assert_eq!(seeds.len(), 400);
    }

    #[test]
    fn materialize_is_reproducible() {
        let p = paths();
        let cfg = DatasetConfig {
            duration_s: 0.5,
            ..DatasetConfig::new(
                Task::SpeechPreserve,
                Split::Train,
                vec!["engine".into(), "babble".into()],
                2,
                3,
            )
        };
        let m = plan_dataset(&cfg, 1).unwrap();
        for spec in &m.samples {
            let a = materialize(spec, &m, &p.primary, &SyntheticSources, ReferenceMode::Dry).unwrap();
            let b = materialize(spec, &m, &p.primary, &SyntheticSources, ReferenceMode::Dry).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 8000);
        }
    }
}
