//! Files, corpora, checkpoints and the `anclab` command line around
//! `anclab-core`.
//!
//! A run directory holds every stage's artifacts:
//!
//! ```text
//! rir/     h_pri.{wav,csv}  h_sec.{wav,csv}  rir_report.json
//! data/    train/ and test/, each dataset.json + samples/<id>/
//! train/   epoch-NNN.ckpt  final.ckpt  loss.csv  summary.json
//! eval/    fxlms.csv  crn.csv  plus a .json sidecar each
//! report/  aggregate.json  per_noise.csv  eval.csv
//! ```
//!
//! Each artifact records the hash of what it was built from, and each
//! stage refuses inputs whose hashes disagree.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod fingerprint;
pub mod io;
pub mod report;
pub mod rir;
pub mod wav;

pub use config::{ExperimentConfig, Profile};
pub use error::{LabError, Result};
