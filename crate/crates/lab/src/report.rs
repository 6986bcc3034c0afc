//! Eval CSVs, their metadata sidecars, PESQ ingestion and aggregation.

use std::collections::BTreeMap;
use std::path::Path;

use anclab_core::metrics::Controller;
use anclab_core::scenario::Task;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{LabError, Result};
use crate::io::require;

/// One row per (sample, controller).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub sample_id: String,
    pub noise_label: String,
    pub controller: Controller,
    pub snr_db: Option<f64>,
    pub nr_db: f64,
    pub stoi_noisy: Option<f64>,
    pub stoi_processed: Option<f64>,
    pub pesq_external: Option<f64>,
    pub runtime_ms: f64,
}

pub const EVAL_COLUMNS: [&str; 9] = [
    "sample_id",
    "noise_label",
    "controller",
    "snr_db",
    "nr_db",
    "stoi_noisy",
    "stoi_processed",
    "pesq_external",
    "runtime_ms",
];

/// What an eval CSV was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub controller: Controller,
    pub task: Task,
    pub config_hash: String,
    pub dataset_fingerprint: String,
    pub paths_hash: String,
    /// SHA-256 of the checkpoint file, for CRN rows.
    pub checkpoint_fingerprint: Option<String>,
    pub burn_in: usize,
    pub rows: usize,
    pub csv_sha256: String,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| LabError::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| LabError::csv(path, e))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRow>> {
    require(path, "baseline` or `anclab eval")?;
    let mut r = csv::Reader::from_path(path).map_err(|e| LabError::csv(path, e))?;
    let headers = r.headers().map_err(|e| LabError::csv(path, e))?.clone();
    for col in EVAL_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(LabError::format(path, format!("missing column `{col}`")));
        }
    }
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| LabError::csv(path, e))
}

/// Per-sample PESQ scores computed by an external tool. Accepts either
/// `{"<sample_id>": score}` for every controller or
/// `{"<controller>": {"<sample_id>": score}}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PesqScores {
    shared: BTreeMap<String, f64>,
    per_controller: BTreeMap<String, BTreeMap<String, f64>>,
}

impl PesqScores {
    pub fn parse(doc: &Value, path: &Path) -> Result<Self> {
        let bad = || LabError::format(path, "expected {id: score} or {controller: {id: score}}");
        let obj = doc.as_object().ok_or_else(bad)?;
        let mut out = Self::default();
        for (k, v) in obj {
            match v {
                Value::Number(n) => {
                    out.shared.insert(k.clone(), n.as_f64().ok_or_else(bad)?);
                }
                Value::Object(inner) => {
                    let mut m = BTreeMap::new();
                    for (id, s) in inner {
                        m.insert(id.clone(), s.as_f64().ok_or_else(bad)?);
                    }
                    out.per_controller.insert(k.clone(), m);
                }
                _ => return Err(bad()),
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: Value = crate::io::read_json(path)?;
        Self::parse(&doc, path)
    }

    pub fn get(&self, controller: Controller, sample_id: &str) -> Option<f64> {
        self.per_controller
            .get(controller.id())
            .and_then(|m| m.get(sample_id))
            .or_else(|| self.shared.get(sample_id))
            .copied()
    }
}

/// Means over one noise label for one controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSummary {
    pub noise_label: String,
    pub controller: Controller,
    pub samples: usize,
    pub nr_db_mean: f64,
    pub stoi_noisy_mean: Option<f64>,
    pub stoi_processed_mean: Option<f64>,
    /// Processed minus controller-off STOI.
    pub stoi_delta_mean: Option<f64>,
    pub pesq_external_mean: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Groups rows by noise label (first-appearance order) and controller
/// (FxLMS, CRN, off).
pub fn aggregate(rows: &[EvalRow]) -> Vec<NoiseSummary> {
    let mut labels: Vec<&str> = Vec::new();
    for r in rows {
        if !labels.contains(&r.noise_label.as_str()) {
            labels.push(&r.noise_label);
        }
    }
    let mut out = Vec::new();
    for label in labels {
        for c in [Controller::Fxlms, Controller::Crn, Controller::Off] {
            let group: Vec<&EvalRow> = rows
                .iter()
                .filter(|r| r.noise_label == label && r.controller == c)
                .collect();
            if group.is_empty() {
                continue;
            }
            out.push(NoiseSummary {
                noise_label: label.to_string(),
                controller: c,
                samples: group.len(),
                nr_db_mean: group.iter().map(|r| r.nr_db).sum::<f64>() / group.len() as f64,
                stoi_noisy_mean: mean_of(group.iter().map(|r| r.stoi_noisy)),
                stoi_processed_mean: mean_of(group.iter().map(|r| r.stoi_processed)),
                stoi_delta_mean: mean_of(group.iter().map(|r| Some(r.stoi_processed? - r.stoi_noisy?))),
                pesq_external_mean: mean_of(group.iter().map(|r| r.pesq_external)),
            });
        }
    }
    out
}

/// One line of the NR comparison table: a noise type with each controller's
/// mean NR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NrTableRow {
    pub noise_label: String,
    pub fxlms_nr_db: Option<f64>,
    pub crn_nr_db: Option<f64>,
    pub crn_stoi_delta: Option<f64>,
    pub crn_pesq_external: Option<f64>,
}

pub fn nr_table(summaries: &[NoiseSummary]) -> Vec<NrTableRow> {
    let mut out: Vec<NrTableRow> = Vec::new();
    for s in summaries {
        let row = match out.iter_mut().find(|r| r.noise_label == s.noise_label) {
            Some(r) => r,
            None => {
                out.push(NrTableRow {
                    noise_label: s.noise_label.clone(),
                    fxlms_nr_db: None,
                    crn_nr_db: None,
                    crn_stoi_delta: None,
                    crn_pesq_external: None,
                });
                out.last_mut().unwrap()
            }
        };
        match s.controller {
            Controller::Fxlms => row.fxlms_nr_db = Some(s.nr_db_mean),
            Controller::Crn => {
                row.crn_nr_db = Some(s.nr_db_mean);
                row.crn_stoi_delta = s.stoi_delta_mean;
                row.crn_pesq_external = s.pesq_external_mean;
            }
            Controller::Off => {}
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRef {
    pub file: String,
    pub sha256: String,
    pub controller: Controller,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dataset_fingerprint: String,
    pub task: Task,
    pub inputs: Vec<InputRef>,
    pub per_noise: Vec<NoiseSummary>,
    pub table: Vec<NrTableRow>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, label: &str, c: Controller, nr: f64, stoi: Option<(f64, f64)>) -> EvalRow {
        EvalRow {
            sample_id: id.into(),
            noise_label: label.into(),
            controller: c,
            snr_db: stoi.map(|_| 5.0),
            nr_db: nr,
            stoi_noisy: stoi.map(|s| s.0),
            stoi_processed: stoi.map(|s| s.1),
            pesq_external: None,
            runtime_ms: 0.0,
        }
    }

    #[test]
    fn csv_round_trip_and_schema() {
        let rows = vec![
            row("test-00000", "engine", Controller::Fxlms, 12.5, None),
            row("test-00000", "engine", Controller::Crn, 1.0 / 3.0, Some((0.7, 0.75))),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        write_rows(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), EVAL_COLUMNS.join(","));
        assert!(text.contains("test-00000,engine,fxlms,,12.5,,,,0.0"));
        assert_eq!(read_eval_csv(&p).unwrap(), rows);
    }

    #[test]
    fn missing_column_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, "sample_id,noise_label,controller\nx,engine,crn\n").unwrap();
        let err = read_eval_csv(&p).unwrap_err();
        assert!(err.to_string().contains("snr_db"), "{err}");
    }

    #[test]
    fn aggregation_means_by_label_and_controller() {
        let mut rows = Vec::new();
        for (i, label) in ["engine", "babble", "factory", "lowfreq-car", "jet-broadband"]
            .iter()
            .enumerate()
        {
            for k in 0..4 {
                let id = format!("test-{:05}", i * 4 + k);
                rows.push(row(&id, label, Controller::Fxlms, i as f64 + k as f64, None));
                rows.push(row(
                    &id,
                    label,
                    Controller::Crn,
                    2.0 * k as f64,
                    Some((0.5, 0.5 + 0.01 * k as f64)),
                ));
            }
        }
        let s = aggregate(&rows);
        assert_eq!(s.len(), 10);
        assert_eq!(s[0].noise_label, "engine");
        assert_eq!(s[0].controller, Controller::Fxlms);
        assert_eq!(s[0].nr_db_mean, 1.5);
        assert_eq!(s[1].nr_db_mean, 3.0);
        assert_eq!(s[0].stoi_delta_mean, None);
        assert!((s[1].stoi_delta_mean.unwrap() - 0.015).abs() < 1e-15);
        let t = nr_table(&s);
        assert_eq!(t.len(), 5);
        assert_eq!(t[4].noise_label, "jet-broadband");
        assert_eq!(t[4].fxlms_nr_db, Some(5.5));
        assert_eq!(t[4].crn_nr_db, Some(3.0));
    }

    #[test]
    fn pesq_lookup_prefers_the_controller_entry() {
        let doc = serde_json::json!({"test-00001": 2.5, "crn": {"test-00001": 3.25}});
        let p = PesqScores::parse(&doc, Path::new("p.json")).unwrap();
        assert_eq!(p.get(Controller::Crn, "test-00001"), Some(3.25));
        assert_eq!(p.get(Controller::Fxlms, "test-00001"), Some(2.5));
        assert_eq!(p.get(Controller::Fxlms, "test-00002"), None);
        assert!(PesqScores::parse(&serde_json::json!([1, 2]), Path::new("p.json")).is_err());
        assert!(PesqScores::parse(&serde_json::json!({"a": "x"}), Path::new("p.json")).is_err());
    }
}
