//! Real recordings as sample sources.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anclab_core::dsp::Waveform;
use anclab_core::scenario::SourceProvider;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use walkdir::WalkDir;

use crate::config::CorpusConfig;
use crate::error::{LabError, Result};
use crate::wav::read_wav;

/// Noise files grouped by the name of their top-level subdirectory, plus an
/// optional pool of speech files. A seed picks a file and an excerpt.
#[derive(Debug, Clone)]
pub struct DirectoryCorpus {
    noise: BTreeMap<String, Vec<PathBuf>>,
    speech: Vec<PathBuf>,
}

fn wav_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    files
}

impl DirectoryCorpus {
    pub fn open(noise_dir: &Path, speech_dir: Option<&Path>) -> Result<Self> {
        let entries = std::fs::read_dir(noise_dir).map_err(|e| LabError::io(noise_dir, e))?;
        let mut noise = BTreeMap::new();
        for entry in entries {
            let entry = entry.map_err(|e| LabError::io(noise_dir, e))?;
            if entry.path().is_dir() {
                let files = wav_files(&entry.path());
                if !files.is_empty() {
                    noise.insert(entry.file_name().to_string_lossy().into_owned(), files);
                }
            }
        }
        if noise.is_empty() {
            return Err(LabError::format(noise_dir, "no <label>/*.wav noise files found"));
        }
        let speech = match speech_dir {
            Some(dir) => {
                let files = wav_files(dir);
                if files.is_empty() {
                    return Err(LabError::format(dir, "no speech files found"));
                }
                files
            }
            None => Vec::new(),
        };
        Ok(Self { noise, speech })
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.noise.keys().map(String::as_str)
    }

    /// Every file of the requested labels must decode as mono audio.
    pub fn check_readable(&self, labels: &[String]) -> Result<()> {
        for label in labels {
            let files = self
                .noise
                .get(label)
                .ok_or_else(|| LabError::Config(format!("corpus has no noise label `{label}`")))?;
            for f in files {
                read_wav(f, None)?;
            }
        }
        for f in &self.speech {
            read_wav(f, None)?;
        }
        Ok(())
    }

    fn excerpt(files: &[PathBuf], seed: u64, duration_s: f64, rate: u32) -> Result<Waveform> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let file = &files[rng.random_range(0..files.len())];
        let wave = read_wav(file, Some(rate))?;
        if wave.is_empty() {
            return Err(LabError::format(file, "empty recording"));
        }
        let need = (duration_s * rate as f64).round() as usize;
        let src = wave.samples();
        let samples: Vec<f64> = if src.len() >= need {
            let start = rng.random_range(0..=src.len() - need);
            src[start..start + need].to_vec()
        } else {
            src.iter().copied().cycle().take(need).collect()
        };
        Ok(Waveform::new(samples, rate)?)
    }
}

fn to_core(e: LabError) -> anclab_core::Error {
    match e {
        LabError::Core(c) => c,
        other => anclab_core::Error::InvalidArgument(other.to_string()),
    }
}

impl SourceProvider for DirectoryCorpus {
    fn noise(&self, label: &str, seed: u64, duration_s: f64, sample_rate: u32) -> anclab_core::Result<Waveform> {
        let files = self
            .noise
            .get(label)
            .ok_or_else(|| anclab_core::Error::UnknownGenerator(label.to_string()))?;
        Self::excerpt(files, seed, duration_s, sample_rate).map_err(to_core)
    }

    fn speech(&self, seed: u64, duration_s: f64, sample_rate: u32) -> anclab_core::Result<Waveform> {
        if self.speech.is_empty() {
            return Err(anclab_core::Error::InvalidArgument("corpus has no speech files".into()));
        }
        Self::excerpt(&self.speech, seed, duration_s, sample_rate).map_err(to_core)
    }
}

/// The provider a config asks for.
pub fn open_sources(corpus: &CorpusConfig) -> Result<Box<dyn SourceProvider>> {
    match corpus {
        CorpusConfig::Synthetic => Ok(Box::new(anclab_core::scenario::SyntheticSources)),
        CorpusConfig::Directory { noise_dir, speech_dir } => {
            Ok(Box::new(DirectoryCorpus::open(noise_dir, speech_dir.as_deref())?))
        }
    }
}
