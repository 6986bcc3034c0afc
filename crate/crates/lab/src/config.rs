//! The experiment config: one JSON document covering every pipeline stage.
//!
//! A config is resolved in layers: a built-in profile, then an optional
//! JSON file merged over it key by key, then `--set section.key=value`
//! overrides, then the `--seed` and `--out` flags.

use std::path::{Path, PathBuf};

use anclab_core::dsp::FrameSpec;
use anclab_core::fxlms::FxlmsConfig;
use anclab_core::nn::{AdamConfig, CrnConfig, Schedule, TrainConfig};
use anclab_core::room::{RoomSpec, TransducerLayout};
use anclab_core::scenario::{DatasetConfig, Split, Task, DEFAULT_TEST_SNR_DB, DEFAULT_TRAIN_SNR_RANGE_DB};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{LabError, Result};
use crate::fingerprint::sha256_hex;

/// The five benchmark noise types, in table order.
pub const BENCHMARK_LABELS: [&str; 5] = ["engine", "factory", "babble", "lowfreq-car", "jet-broadband"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CorpusConfig {
    /// Built-in generators; noise labels are generator ids.
    Synthetic,
    /// `noise_dir/<label>/**.wav` and `speech_dir/**.wav`.
    Directory {
        noise_dir: PathBuf,
        speech_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub task: Task,
    pub train_labels: Vec<String>,
    pub train_per_label: usize,
    pub snr_range_db: [f64; 2],
    pub duration_s: f64,
    pub sample_rate: u32,
    /// Feed `x` through the noise-source-to-reference-mic response instead
    /// of using the dry mixture.
    pub reverberant_reference: bool,
    pub corpus: CorpusConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub noise_labels: Vec<String>,
    pub per_label: usize,
    pub snr_db: f64,
    /// NR burn-in for CRN rows; FxLMS rows use `fxlms.burn_in`.
    pub crn_burn_in: usize,
    /// Optional per-sample PESQ scores computed elsewhere.
    pub pesq_json: Option<PathBuf>,
    /// Also write each sample's residual `e` as a WAV.
    pub save_residuals: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub room: RoomSpec,
    pub layout: TransducerLayout,
    pub dataset: DatasetSection,
    pub crn: CrnConfig,
    pub schedule: Schedule,
    pub adam: AdamConfig,
    pub fxlms: FxlmsConfig,
    pub eval: EvalSection,
}

fn labels() -> Vec<String> {
    BENCHMARK_LABELS.iter().map(|s| s.to_string()).collect()
}

impl ExperimentConfig {
    /// Runs end to end on one CPU core in a few minutes.
    pub fn desk() -> Self {
        Self {
            seed: 7,
            output_dir: PathBuf::from("runs/desk"),
            room: RoomSpec::default(),
            layout: TransducerLayout::default(),
            dataset: DatasetSection {
                task: Task::PureNoise,
                train_labels: labels(),
                train_per_label: 80,
                snr_range_db: DEFAULT_TRAIN_SNR_RANGE_DB,
                duration_s: 2.0,
                sample_rate: 16_000,
                reverberant_reference: false,
                corpus: CorpusConfig::Synthetic,
            },
            crn: CrnConfig::scaled(0.25),
            schedule: Schedule {
                stage1_epochs: 3,
                stage2_epochs: 2,
                lr_scale: 4.0,
                batch_size: 4,
                ..Schedule::default()
            },
            adam: AdamConfig::default(),
            fxlms: FxlmsConfig::default(),
            eval: EvalSection {
                noise_labels: labels(),
                per_label: 20,
                snr_db: DEFAULT_TEST_SNR_DB,
                crn_burn_in: 0,
                pesq_json: None,
                save_residuals: false,
            },
        }
    }

    /// Full-size network, schedule and dataset counts.
    pub fn paper() -> Self {
        let desk = Self::desk();
        Self {
            output_dir: PathBuf::from("runs/paper"),
            dataset: DatasetSection {
                train_per_label: 2000,
                ..desk.dataset
            },
            crn: CrnConfig::default(),
            schedule: Schedule::default(),
            eval: EvalSection {
                per_label: 100,
                ..desk.eval
            },
            ..desk
        }
    }

    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Profile, then file, then `key.path=json` overrides.
    pub fn resolve(profile: Profile, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(Self::profile(profile)).expect("config serializes");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
            let patch: Value = serde_json::from_str(&text).map_err(|e| LabError::json(path, e))?;
            merge(&mut doc, patch);
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LabError::Config(m.to_string()));
        self.room.validate()?;
        self.layout.validate(&self.room)?;
        self.crn.layout()?;
        self.schedule.validate()?;
        self.fxlms.validate()?;
        let d = &self.dataset;
        if d.train_labels.is_empty() || self.eval.noise_labels.is_empty() {
            return bad("train and eval need at least one noise label");
        }
        if d.train_per_label == 0 || self.eval.per_label == 0 {
            return bad("sample counts must be positive");
        }
        if !(d.duration_s > 0.0 && d.duration_s.is_finite()) {
            return bad("dataset.duration_s must be positive");
        }
        if d.sample_rate != self.room.sample_rate {
            return bad("dataset.sample_rate must equal room.sample_rate");
        }
        if !self.eval.snr_db.is_finite() {
            return bad("eval.snr_db must be finite");
        }
        if FrameSpec::default().bins() != self.crn.bins {
            return bad("crn.bins must match the 320-point frame");
        }
        if let CorpusConfig::Directory { speech_dir: None, .. } = &d.corpus {
            if d.task == Task::SpeechPreserve {
                return bad("the speech-preserve task needs corpus.speech_dir");
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON with `output_dir` blanked, so moving a
    /// run does not change its identity.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }

    pub fn dataset_config(&self, split: Split) -> DatasetConfig {
        let d = &self.dataset;
        let (labels, per_label) = match split {
            Split::Train => (d.train_labels.clone(), d.train_per_label),
            Split::Test => (self.eval.noise_labels.clone(), self.eval.per_label),
        };
        DatasetConfig {
            snr_range_db: d.snr_range_db,
            test_snr_db: self.eval.snr_db,
            duration_s: d.duration_s,
            sample_rate: d.sample_rate,
            ..DatasetConfig::new(d.task, split, labels, per_label, self.seed)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = TrainConfig::new(self.crn.clone(), self.schedule.clone(), self.dataset.task, self.seed);
        t.adam = self.adam;
        t
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `a.b.c=<json>`; a value that does not parse as JSON is taken as a string.
fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| LabError::Config(format!("override `{spec}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = doc;
    for key in path.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(key))
            .ok_or_else(|| LabError::Config(format!("unknown config key `{path}`")))?;
    }
    *slot = value;
    Ok(())
}
