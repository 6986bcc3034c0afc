//! Room impulse response export and the validation summary next to it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anclab_core::dsp::Waveform;
use anclab_core::room::{
    absorption_from_rt60, estimate_rt60, room_fingerprint, simulate_paths, simulate_rir_full, PathLabel, PathPair, Rir,
};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::fingerprint::{expect_match, hash_f64s};
use crate::io::{read_json, require, write_json, write_text};
use crate::wav::{write_wav, WavFormat};

pub const REPORT_FILE: &str = "rir_report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub taps: usize,
    /// Source-to-mic distance over the speed of sound, in samples.
    pub geometric_delay_samples: f64,
    /// Sinc-interpolated direct-path peak, searched within two samples of
    /// the geometric delay.
    pub direct_delay_samples: f64,
    pub direct_amplitude: f64,
    /// `1 / (4 pi r)`.
    pub expected_direct_amplitude: f64,
    /// The largest peak overall, which may be a reflection.
    pub max_peak_delay_samples: f64,
    pub max_peak_amplitude: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirReport {
    pub config_hash: String,
    pub room_fingerprint: String,
    /// Hash of the exact primary and secondary taps.
    pub paths_hash: String,
    pub sample_rate: u32,
    pub max_order: usize,
    pub wall_absorption: f64,
    pub absorption_clamped: bool,
    pub rt60_configured_s: f64,
    /// Schroeder estimate from the untruncated primary response.
    pub rt60_estimate_s: f64,
    pub primary: PathSummary,
    pub secondary: PathSummary,
}

fn summarize(rir: &Rir, speed_of_sound: f64) -> PathSummary {
    let geometric = rir.geometric_delay(speed_of_sound);
    let (direct_pos, direct_amp) = rir.interpolated_peak_near(geometric, 2.0);
    let (peak_pos, peak_amp) = rir.interpolated_peak();
    let r = anclab_core::room::distance(&rir.src, &rir.mic);
    PathSummary {
        taps: rir.taps.len(),
        geometric_delay_samples: geometric,
        direct_delay_samples: direct_pos,
        direct_amplitude: direct_amp,
        expected_direct_amplitude: 1.0 / (4.0 * std::f64::consts::PI * r),
        max_peak_delay_samples: peak_pos,
        max_peak_amplitude: peak_amp,
        energy: rir.energy(),
    }
}

pub fn paths_hash(paths: &PathPair) -> String {
    hash_f64s(&[&paths.primary.taps, &paths.secondary.taps])
}

fn taps_csv(taps: &[f64]) -> String {
    let mut s = String::with_capacity(taps.len() * 24);
    for t in taps {
        writeln!(s, "{t}").unwrap();
    }
    s
}

fn read_taps_csv(path: &Path) -> Result<Vec<f64>> {
    require(path, "rir")?;
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| LabError::format(path, format!("line {}: `{l}` is not a number", i + 1)))
        })
        .collect()
}

/// Simulates both paths and writes `h_pri`/`h_sec` as float WAV and CSV plus
/// the report.
pub fn export(cfg: &ExperimentConfig, dir: &Path) -> Result<RirReport> {
    std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let paths = simulate_paths(&cfg.room, &cfg.layout)?;
    let full = simulate_rir_full(&cfg.room, cfg.layout.noise_src, cfg.layout.err_mic)?;
    let absorption = absorption_from_rt60(&cfg.room)?;
    let c = cfg.room.speed_of_sound;
    let report = RirReport {
        config_hash: cfg.hash(),
        room_fingerprint: format!("{:016x}", room_fingerprint(&cfg.room, &cfg.layout)),
        paths_hash: paths_hash(&paths),
        sample_rate: cfg.room.sample_rate,
        max_order: cfg.room.effective_max_order(),
        wall_absorption: absorption.alpha,
        absorption_clamped: absorption.clamped,
        rt60_configured_s: cfg.room.rt60,
        rt60_estimate_s: estimate_rt60(&full)?,
        primary: summarize(&paths.primary, c),
        secondary: summarize(&paths.secondary, c),
    };
    for (name, rir) in [("h_pri", &paths.primary), ("h_sec", &paths.secondary)] {
        let wave = Waveform::new(rir.taps.clone(), rir.sample_rate)?;
        write_wav(&dir.join(format!("{name}.wav")), &wave, WavFormat::Float32)?;
        write_text(&dir.join(format!("{name}.csv")), &taps_csv(&rir.taps))?;
    }
    write_json(&dir.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// Exported paths, read back from the lossless CSVs.
#[derive(Debug, Clone)]
pub struct LoadedPaths {
    pub paths: PathPair,
    pub report: RirReport,
    pub dir: PathBuf,
}

/// Loads the exported paths and checks them against the report and the
/// current room config.
pub fn load(cfg: &ExperimentConfig, dir: &Path) -> Result<LoadedPaths> {
    let report_path = dir.join(REPORT_FILE);
    require(&report_path, "rir")?;
    let report: RirReport = read_json(&report_path)?;
    let rate = report.sample_rate;
    let primary = Rir::from_taps(read_taps_csv(&dir.join("h_pri.csv"))?, rate, PathLabel::Primary)?;
    let secondary = Rir::from_taps(read_taps_csv(&dir.join("h_sec.csv"))?, rate, PathLabel::Secondary)?;
    let paths = PathPair { primary, secondary };
    expect_match("exported RIR taps", &report.paths_hash, &paths_hash(&paths))?;
    let fp = format!("{:016x}", room_fingerprint(&cfg.room, &cfg.layout));
    expect_match("room and layout", &report.room_fingerprint, &fp)?;
    Ok(LoadedPaths {
        paths,
        report,
        dir: dir.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_taps_round_trip_exactly() {
        let taps = [0.1, -1.0 / 3.0, 1e-300, 5e-324, 0.0, -0.0, 123456.789];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, taps_csv(&taps)).unwrap();
        let back = read_taps_csv(&p).unwrap();
        assert_eq!(back.len(), taps.len());
        for (a, b) in taps.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn garbage_tap_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "0.5\nnope\n").unwrap();
        assert!(matches!(read_taps_csv(&p), Err(LabError::Format { .. })));
    }
}
