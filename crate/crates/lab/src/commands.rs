//! The pipeline stages behind each subcommand.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anclab_core::dsp::Waveform;
use anclab_core::fxlms::fxlms_run;
use anclab_core::metrics::{noise_reduction, stoi, Controller};
use anclab_core::nn::{anc_apply, train, Checkpoint, CrnParams};
use anclab_core::scenario::{ScenarioSample, Split, Task};
use serde::Serialize;

use crate::checkpoint::{self, CheckpointFile};
use crate::config::ExperimentConfig;
use crate::dataset::{synthesize, DiskDataset};
use crate::error::{LabError, Result};
use crate::fingerprint::{expect_match, sha256_file};
use crate::io::{read_json, require, write_json};
use crate::report::{
    aggregate, nr_table, read_eval_csv, write_rows, Aggregate, EvalMeta, EvalRow, InputRef, PesqScores,
};
use crate::rir::{self, LoadedPaths};
use crate::wav::{write_wav, WavFormat};

/// Where each stage reads and writes under the output directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn rir(&self) -> PathBuf {
        self.root.join("rir")
    }
    pub fn data(&self, split: Split) -> PathBuf {
        self.root.join("data").join(match split {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
    pub fn train(&self) -> PathBuf {
        self.root.join("train")
    }
    pub fn final_checkpoint(&self) -> PathBuf {
        self.train().join("final.ckpt")
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn eval_csv(&self, c: Controller) -> PathBuf {
        self.eval().join(format!("{}.csv", c.id()))
    }
    pub fn eval_meta(&self, c: Controller) -> PathBuf {
        self.eval().join(format!("{}.json", c.id()))
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record `runtime_ms` as 0 so CSVs are byte-stable.
    pub deterministic: bool,
}

pub fn run_rir(cfg: &ExperimentConfig) -> Result<rir::RirReport> {
    let layout = RunLayout::new(&cfg.output_dir);
    let r = rir::export(cfg, &layout.rir())?;
    println!(
        "rir: primary delay {:.2} samples, secondary {:.2}, RT60 estimate {:.3} s (configured {:.3})",
        r.primary.direct_delay_samples, r.secondary.direct_delay_samples, r.rt60_estimate_s, r.rt60_configured_s
    );
    Ok(r)
}

pub fn run_synth(cfg: &ExperimentConfig) -> Result<()> {
    let layout = RunLayout::new(&cfg.output_dir);
    let paths = rir::load(cfg, &layout.rir())?;
    if let crate::config::CorpusConfig::Directory { noise_dir, speech_dir } = &cfg.dataset.corpus {
        let corpus = crate::corpus::DirectoryCorpus::open(noise_dir, speech_dir.as_deref())?;
        let mut labels = cfg.dataset.train_labels.clone();
        labels.extend(cfg.eval.noise_labels.iter().cloned());
        corpus.check_readable(&labels)?;
    }
    for split in [Split::Train, Split::Test] {
        let (record, fp) = synthesize(cfg, &paths, split, &layout.data(split))?;
        println!(
            "synth: {:?} split, {} samples, fingerprint {}",
            split,
            record.manifest.sample_count,
            &fp[..16]
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct LossRow {
    epoch: usize,
    stage: u8,
    lr: f64,
    mean_loss: f64,
    steps: usize,
}

#[derive(Debug, Clone, Serialize)]
struct TrainSummary {
    config_hash: String,
    dataset_fingerprint: String,
    paths_hash: String,
    parameter_count: usize,
    epochs: usize,
    best_stage1_epoch: Option<usize>,
    final_loss: f64,
    checkpoint: String,
    checkpoint_sha256: String,
}

fn epoch_file(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch-{epoch:03}.ckpt"))
}

pub fn run_train(cfg: &ExperimentConfig) -> Result<Checkpoint> {
    let layout = RunLayout::new(&cfg.output_dir);
    let paths = rir::load(cfg, &layout.rir())?;
    let data = DiskDataset::open(&layout.data(Split::Train))?;
    data.expect_split(Split::Train)?;
    data.expect_paths(&paths.report.paths_hash)?;
    let dir = layout.train();
    std::fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
    let tc = cfg.train_config();
    let wrap = |ck: &Checkpoint| CheckpointFile {
        checkpoint: ck.clone(),
        paths_hash: paths.report.paths_hash.clone(),
        config_hash: cfg.hash(),
    };
    let started = Instant::now();
    let mut io_error: Option<LabError> = None;
    let mut on_epoch = |ck: &Checkpoint| -> anclab_core::Result<()> {
        let rows: Vec<LossRow> = ck
            .history
            .iter()
            .map(|h| LossRow {
                epoch: h.epoch,
                stage: h.stage,
                lr: h.lr,
                mean_loss: h.mean_loss,
                steps: h.step_losses.len(),
            })
            .collect();
        let saved = checkpoint::save(&epoch_file(&dir, ck.epoch), &wrap(ck))
            .and_then(|_| write_rows(&dir.join("loss.csv"), &rows));
        if let Err(e) = saved {
            io_error = Some(e);
            return Err(anclab_core::Error::InvalidArgument("checkpoint write failed".into()));
        }
        let last = ck.history.last().expect("epoch recorded");
        eprintln!(
            "train: epoch {} stage {} lr {:.2e} loss {:.4e} ({:.0} s)",
            last.epoch,
            last.stage,
            last.lr,
            last.mean_loss,
            started.elapsed().as_secs_f64()
        );
        Ok(())
    };
    let result = train(
        &tc,
        &paths.paths.secondary.taps,
        &data,
        &data.fingerprint,
        &mut on_epoch,
    );
    if let Some(e) = io_error {
        return Err(e);
    }
    let ck = result?;
    let final_path = layout.final_checkpoint();
    checkpoint::save(&final_path, &wrap(&ck))?;
    let summary = TrainSummary {
        config_hash: cfg.hash(),
        dataset_fingerprint: data.fingerprint.clone(),
        paths_hash: paths.report.paths_hash.clone(),
        parameter_count: ck.params.parameter_count(),
        epochs: ck.epoch,
        best_stage1_epoch: ck.best_stage1_epoch,
        final_loss: ck.history.last().map_or(f64::NAN, |h| h.mean_loss),
        checkpoint: "final.ckpt".into(),
        checkpoint_sha256: sha256_file(&final_path)?,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "train: {} parameters, {} epochs, final loss {:.4e}",
        summary.parameter_count, summary.epochs, summary.final_loss
    );
    Ok(ck)
}

/// Error-mic signals shared by both controllers' metrics.
struct Scored {
    nr_db: f64,
    stoi_noisy: Option<f64>,
    stoi_processed: Option<f64>,
}

fn score(sample: &ScenarioSample, task: Task, e: &[f64], burn_in: usize) -> Result<Scored> {
    let d_noise = sample.d_noise.samples();
    let speech = task == Task::SpeechPreserve;
    let nr_db = noise_reduction(d_noise, e, speech.then(|| sample.d_speech.samples()), burn_in)?;
    let (stoi_noisy, stoi_processed) = if speech {
        let processed = Waveform::new(e.to_vec(), sample.x.sample_rate())?;
        (
            Some(stoi(&sample.d_speech, &sample.disturbance())?),
            Some(stoi(&sample.d_speech, &processed)?),
        )
    } else {
        (None, None)
    };
    Ok(Scored {
        nr_db,
        stoi_noisy,
        stoi_processed,
    })
}

fn open_test_set(cfg: &ExperimentConfig, layout: &RunLayout) -> Result<(LoadedPaths, DiskDataset)> {
    let paths = rir::load(cfg, &layout.rir())?;
    let data = DiskDataset::open(&layout.data(Split::Test))?;
    data.expect_split(Split::Test)?;
    data.expect_paths(&paths.report.paths_hash)?;
    Ok((paths, data))
}

fn load_pesq(cfg: &ExperimentConfig) -> Result<Option<PesqScores>> {
    cfg.eval.pesq_json.as_deref().map(PesqScores::load).transpose()
}

/// Runs one controller over the whole test split.
fn evaluate(
    cfg: &ExperimentConfig,
    opts: RunOptions,
    controller: Controller,
    burn_in: usize,
    checkpoint_fingerprint: Option<String>,
    mut run: impl FnMut(&ScenarioSample) -> Result<Vec<f64>>,
) -> Result<Vec<EvalRow>> {
    let layout = RunLayout::new(&cfg.output_dir);
    let (paths, data) = open_test_set(cfg, &layout)?;
    let pesq = load_pesq(cfg)?;
    let task = data.record.manifest.task;
    let residual_dir = layout.eval().join("residuals").join(controller.id());
    let mut rows = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let (side, sample) = data.load(i)?;
        let t0 = Instant::now();
        let e = run(&sample).inspect_err(|err| {
            if err.is_divergence() {
                eprintln!("{}: sample {} diverged", controller.id(), side.id);
            }
        })?;
        let runtime_ms = if opts.deterministic {
            0.0
        } else {
            t0.elapsed().as_secs_f64() * 1e3
        };
        let s = score(&sample, task, &e, burn_in)?;
        if cfg.eval.save_residuals {
            std::fs::create_dir_all(&residual_dir).map_err(|err| LabError::io(&residual_dir, err))?;
            let w = Waveform::new(e, sample.x.sample_rate())?;
            write_wav(&residual_dir.join(format!("{}.wav", side.id)), &w, WavFormat::Float32)?;
        }
        rows.push(EvalRow {
            pesq_external: pesq.as_ref().and_then(|p| p.get(controller, &side.id)),
            sample_id: side.id,
            noise_label: side.noise_label,
            controller,
            snr_db: side.snr_db,
            nr_db: s.nr_db,
            stoi_noisy: s.stoi_noisy,
            stoi_processed: s.stoi_processed,
            runtime_ms,
        });
    }
    let csv_path = layout.eval_csv(controller);
    write_rows(&csv_path, &rows)?;
    let meta = EvalMeta {
        controller,
        task,
        config_hash: cfg.hash(),
        dataset_fingerprint: data.fingerprint.clone(),
        paths_hash: paths.report.paths_hash.clone(),
        checkpoint_fingerprint,
        burn_in,
        rows: rows.len(),
        csv_sha256: sha256_file(&csv_path)?,
    };
    write_json(&layout.eval_meta(controller), &meta)?;
    let mean = rows.iter().map(|r| r.nr_db).sum::<f64>() / rows.len().max(1) as f64;
    println!("{}: {} samples, mean NR {:.2} dB", controller.id(), rows.len(), mean);
    Ok(rows)
}

pub fn run_baseline(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<EvalRow>> {
    let layout = RunLayout::new(&cfg.output_dir);
    let paths = rir::load(cfg, &layout.rir())?;
    let s = paths.paths.secondary.taps;
    evaluate(cfg, opts, Controller::Fxlms, cfg.fxlms.burn_in, None, |sample| {
        let run = fxlms_run(&sample.x, &sample.disturbance(), &cfg.fxlms, &s, &s)?;
        Ok(run.e.into_samples())
    })
}

/// Loads a checkpoint and checks it was trained on this run's secondary
/// path.
pub fn load_checkpoint_for(cfg: &ExperimentConfig, path: &Path) -> Result<CheckpointFile> {
    let layout = RunLayout::new(&cfg.output_dir);
    let paths = rir::load(cfg, &layout.rir())?;
    let ck = checkpoint::load(path)?;
    expect_match("checkpoint RIRs", &ck.paths_hash, &paths.report.paths_hash)?;
    let same = ck.checkpoint.params.s_taps().len() == paths.paths.secondary.taps.len()
        && ck
            .checkpoint
            .params
            .s_taps()
            .iter()
            .zip(&paths.paths.secondary.taps)
            .all(|(a, b)| a.to_bits() == b.to_bits());
    if !same {
        return Err(LabError::Fingerprint {
            what: "checkpoint secondary path".into(),
            expected: paths.report.paths_hash.clone(),
            found: "different taps".into(),
        });
    }
    Ok(ck)
}

pub fn run_eval(cfg: &ExperimentConfig, opts: RunOptions, checkpoint_path: Option<&Path>) -> Result<Vec<EvalRow>> {
    let layout = RunLayout::new(&cfg.output_dir);
    let path = checkpoint_path.map_or_else(|| layout.final_checkpoint(), Path::to_path_buf);
    let ck = load_checkpoint_for(cfg, &path)?;
    let test = DiskDataset::open(&layout.data(Split::Test))?;
    if test.record.manifest.task != ck.checkpoint.config.task {
        return Err(LabError::Config(
            "checkpoint task differs from the test split task".into(),
        ));
    }
    let params: CrnParams = ck.checkpoint.params;
    let frame_spec = ck.checkpoint.config.frame_spec()?;
    let fingerprint = sha256_file(&path)?;
    evaluate(
        cfg,
        opts,
        Controller::Crn,
        cfg.eval.crn_burn_in,
        Some(fingerprint),
        |sample| {
            let out = anc_apply(&params, &sample.x, params.s_taps(), &frame_spec)?;
            let d = sample.disturbance();
            Ok(d.samples().iter().zip(out.a.samples()).map(|(d, a)| d + a).collect())
        },
    )
}

/// Aggregates whichever eval CSVs exist under the run directory.
pub fn run_report(root: &Path) -> Result<Aggregate> {
    let layout = RunLayout::new(root);
    let mut metas = Vec::new();
    for c in [Controller::Fxlms, Controller::Crn] {
        if layout.eval_meta(c).exists() {
            metas.push(read_json::<EvalMeta>(&layout.eval_meta(c))?);
        }
    }
    if metas.is_empty() {
        require(&layout.eval_meta(Controller::Fxlms), "baseline")?;
    }
    let mut rows = Vec::new();
    let mut inputs = Vec::new();
    for m in &metas {
        let csv = layout.eval_csv(m.controller);
        let sha = sha256_file(&csv)?;
        expect_match(&format!("{}", csv.display()), &m.csv_sha256, &sha)?;
        expect_match("eval datasets", &metas[0].dataset_fingerprint, &m.dataset_fingerprint)?;
        rows.extend(read_eval_csv(&csv)?);
        inputs.push(InputRef {
            file: format!("eval/{}.csv", m.controller.id()),
            sha256: sha,
            controller: m.controller,
            config_hash: m.config_hash.clone(),
        });
    }
    let per_noise = aggregate(&rows);
    let agg = Aggregate {
        dataset_fingerprint: metas[0].dataset_fingerprint.clone(),
        task: metas[0].task,
        inputs,
        table: nr_table(&per_noise),
        per_noise,
    };
    let dir = layout.report();
    write_json(&dir.join("aggregate.json"), &agg)?;
    write_rows(&dir.join("per_noise.csv"), &agg.per_noise)?;
    write_rows(&dir.join("eval.csv"), &rows)?;
    for t in &agg.table {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        println!(
            "report: {:<14} fxlms {:>7} dB  crn {:>7} dB",
            t.noise_label,
            f(t.fxlms_nr_db),
            f(t.crn_nr_db)
        );
    }
    Ok(agg)
}

/// Every stage in order.
pub fn run_all(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Aggregate> {
    run_rir(cfg)?;
    run_synth(cfg)?;
    run_train(cfg)?;
    run_baseline(cfg, opts)?;
    run_eval(cfg, opts, None)?;
    run_report(&cfg.output_dir)
}
