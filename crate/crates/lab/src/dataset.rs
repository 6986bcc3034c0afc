//! Datasets on disk: `dataset.json` plus one directory per sample holding
//! `x.wav`, `d_noise.wav`, `d_speech.wav` and `sample.json`.

use std::path::{Path, PathBuf};

use anclab_core::dsp::Waveform;
use anclab_core::nn::SampleSource;
use anclab_core::room::simulate_rir;
use anclab_core::scenario::{materialize, plan_dataset, DatasetManifest, ReferenceMode, ScenarioSample, Split, Task};
use serde::{Deserialize, Serialize};

use crate::config::{CorpusConfig, ExperimentConfig};
use crate::corpus::open_sources;
use crate::error::{LabError, Result};
use crate::fingerprint::{expect_match, hash_f64s, sha256_file, sha256_hex};
use crate::io::{read_json, require, write_json};
use crate::rir::LoadedPaths;
use crate::wav::{read_wav, write_wav, WavFormat};

pub const DATASET_FILE: &str = "dataset.json";
const SIDECAR_FILE: &str = "sample.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub config_hash: String,
    pub paths_hash: String,
    pub reverberant_reference: bool,
    pub corpus: CorpusConfig,
    /// Hash over every sample's content hash, in manifest order.
    pub samples_hash: String,
    pub manifest: DatasetManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSidecar {
    pub id: String,
    pub task: Task,
    pub noise_label: String,
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub noise_seed: u64,
    pub speech_seed: Option<u64>,
    pub speech_gain: f64,
    pub sample_rate: u32,
    pub len: usize,
    /// Hash of `x`, `d_noise`, `d_speech` exactly as stored.
    pub content_hash: String,
    pub paths_hash: String,
}

fn stored(w: &Waveform) -> Waveform {
    let s = w.samples().iter().map(|&v| v as f32 as f64).collect();
    Waveform::new(s, w.sample_rate()).expect("finite input stays finite")
}

fn content_hash(x: &Waveform, d_noise: &Waveform, d_speech: &Waveform) -> String {
    hash_f64s(&[x.samples(), d_noise.samples(), d_speech.samples()])
}

/// Plans and materializes one split into `dir`. Returns the record and the
/// dataset fingerprint.
pub fn synthesize(
    cfg: &ExperimentConfig,
    paths: &LoadedPaths,
    split: Split,
    dir: &Path,
) -> Result<(DatasetRecord, String)> {
    let room_fp = u64::from_str_radix(&paths.report.room_fingerprint, 16)
        .map_err(|_| LabError::format(&paths.dir, "bad room fingerprint"))?;
    let manifest = plan_dataset(&cfg.dataset_config(split), room_fp)?;
    let sources = open_sources(&cfg.dataset.corpus)?;
    let h_ref = if cfg.dataset.reverberant_reference {
        Some(simulate_rir(&cfg.room, cfg.layout.noise_src, cfg.layout.ref_mic)?)
    } else {
        None
    };
    let reference = match &h_ref {
        Some(h) => ReferenceMode::Reverberant(h),
        None => ReferenceMode::Dry,
    };
    let mut sample_hashes = String::new();
    for spec in &manifest.samples {
        let s = materialize(spec, &manifest, &paths.paths.primary, sources.as_ref(), reference)?;
        let (x, dn, ds) = (stored(&s.x), stored(&s.d_noise), stored(&s.d_speech));
        let sdir = dir.join("samples").join(&spec.id);
        std::fs::create_dir_all(&sdir).map_err(|e| LabError::io(&sdir, e))?;
        for (name, w) in [("x", &x), ("d_noise", &dn), ("d_speech", &ds)] {
            write_wav(&sdir.join(format!("{name}.wav")), w, WavFormat::Float32)?;
        }
        let sidecar = SampleSidecar {
            id: spec.id.clone(),
            task: manifest.task,
            noise_label: spec.noise_label.clone(),
            snr_db: spec.snr_db,
            seed: spec.seed,
            noise_seed: spec.noise_seed,
            speech_seed: spec.speech_seed,
            speech_gain: s.speech_gain,
            sample_rate: manifest.sample_rate,
            len: x.len(),
            content_hash: content_hash(&x, &dn, &ds),
            paths_hash: paths.report.paths_hash.clone(),
        };
        sample_hashes.push_str(&sidecar.content_hash);
        write_json(&sdir.join(SIDECAR_FILE), &sidecar)?;
    }
    let record = DatasetRecord {
        config_hash: cfg.hash(),
        paths_hash: paths.report.paths_hash.clone(),
        reverberant_reference: cfg.dataset.reverberant_reference,
        corpus: cfg.dataset.corpus.clone(),
        samples_hash: sha256_hex(sample_hashes.as_bytes()),
        manifest,
    };
    let file = dir.join(DATASET_FILE);
    write_json(&file, &record)?;
    Ok((record, sha256_file(&file)?))
}

/// A synthesized split, read lazily one sample at a time.
#[derive(Debug, Clone)]
pub struct DiskDataset {
    pub dir: PathBuf,
    pub record: DatasetRecord,
    /// SHA-256 of `dataset.json`.
    pub fingerprint: String,
}

impl DiskDataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let file = dir.join(DATASET_FILE);
        require(&file, "synth")?;
        Ok(Self {
            dir: dir.to_path_buf(),
            record: read_json(&file)?,
            fingerprint: sha256_file(&file)?,
        })
    }

    pub fn expect_split(&self, split: Split) -> Result<()> {
        if self.record.manifest.split == split {
            Ok(())
        } else {
            Err(LabError::format(&self.dir, format!("expected the {split:?} split")))
        }
    }

    pub fn expect_paths(&self, paths_hash: &str) -> Result<()> {
        expect_match("dataset RIRs", &self.record.paths_hash, paths_hash)
    }

    pub fn len(&self) -> usize {
        self.record.manifest.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load(&self, index: usize) -> Result<(SampleSidecar, ScenarioSample)> {
        let spec = self
            .record
            .manifest
            .samples
            .get(index)
            .ok_or_else(|| LabError::format(&self.dir, format!("sample {index} out of range")))?;
        let sdir = self.dir.join("samples").join(&spec.id);
        let side_path = sdir.join(SIDECAR_FILE);
        require(&side_path, "synth")?;
        let side: SampleSidecar = read_json(&side_path)?;
        if side.id != spec.id {
            return Err(LabError::format(&side_path, format!("sidecar is for {}", side.id)));
        }
        let rate = Some(self.record.manifest.sample_rate);
        let x = read_wav(&sdir.join("x.wav"), rate)?;
        let d_noise = read_wav(&sdir.join("d_noise.wav"), rate)?;
        let d_speech = read_wav(&sdir.join("d_speech.wav"), rate)?;
        expect_match(
            &format!("sample {}", spec.id),
            &side.content_hash,
            &content_hash(&x, &d_noise, &d_speech),
        )?;
        let sample = ScenarioSample {
            target: d_speech.clone(),
            x,
            d_noise,
            d_speech,
            snr_db: side.snr_db,
            noise_label: side.noise_label.clone(),
            seed: side.seed,
            speech_gain: side.speech_gain,
        };
        Ok((side, sample))
    }
}

impl SampleSource for DiskDataset {
    fn len(&self) -> usize {
        DiskDataset::len(self)
    }

    fn task(&self) -> Task {
        self.record.manifest.task
    }

    fn sample(&self, index: usize) -> anclab_core::Result<ScenarioSample> {
        self.load(index).map(|(_, s)| s).map_err(|e| match e {
            LabError::Core(c) => c,
            other => anclab_core::Error::InvalidArgument(other.to_string()),
        })
    }
}
