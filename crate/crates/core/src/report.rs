//! Run summaries and the on-disk artifacts of a run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ConfigEcho;
use crate::error::{Error, Result};
use crate::metrics::ConflictRecord;

pub const REPORT_FILE: &str = "report.json";
pub const CONFLICTS_FILE: &str = "conflicts.csv";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const MASK_FILE: &str = "mask.txt";

pub const CONFLICTS_HEADER: &str = "epoch,iter,stage,task_i,task_j,cosine,conflict";
pub const EPOCHS_HEADER: &str = "epoch,task,loss,p_epoch_raw,p_epoch_masked";

/// Summary of one run, written as a flat JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub config: ConfigEcho,
    pub effective_k: Option<usize>,
    pub mask_selected: usize,
    pub mask_total: usize,
    /// Share of trunk weights left trainable.
    pub trainable_fraction: f64,
    /// Gradient stage behind `p_all` / `p_last_half`: masked under sparse
    /// training, raw otherwise.
    pub headline_stage: String,
    pub p_all: f64,
    pub p_last_half: f64,
    pub p_all_raw: f64,
    pub p_last_half_raw: f64,
    pub p_all_masked: f64,
    pub p_last_half_masked: f64,
    pub final_train_losses: Vec<f64>,
    pub last10_train_losses: Vec<f64>,
    pub final_test_losses: Vec<f64>,
    pub last10_test_losses: Vec<f64>,
    pub stl_test_losses: Option<Vec<f64>>,
    pub delta_m: Option<f64>,
    pub steps: usize,
    pub iterations_per_epoch: usize,
    pub combiner_fallbacks: usize,
    pub combiner_mean_iterations: f64,
    pub combiner_max_residual: Option<f64>,
    pub pcgrad_projections: usize,
    pub wall_time_secs: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Reads `report.json` from a run directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(REPORT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::Artifact {
            path: path.clone(),
            message: e.to_string(),
        })?;
        Self::from_json(&text).map_err(|e| Error::Artifact {
            path,
            message: format!("malformed report: {e}"),
        })
    }

    pub fn mean_test_loss(&self) -> f64 {
        let n = self.final_test_losses.len().max(1) as f64;
        self.final_test_losses.iter().sum::<f64>() / n
    }
}

/// One line of `epochs.csv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub task: usize,
    pub loss: f64,
    pub p_epoch_raw: f64,
    pub p_epoch_masked: f64,
}

/// Locale-independent scientific notation with 9 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn conflicts_csv(records: &[ConflictRecord]) -> String {
    let mut s = String::with_capacity(48 * (records.len() + 1));
    s.push_str(CONFLICTS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.iteration,
            r.stage,
            r.task_i,
            r.task_j,
            fmt_num(r.cosine),
            u8::from(r.conflict)
        );
    }
    s
}

pub fn epochs_csv(rows: &[EpochRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(EPOCHS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.epoch,
            r.task,
            fmt_num(r.loss),
            fmt_num(r.p_epoch_raw),
            fmt_num(r.p_epoch_masked)
        );
    }
    s
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Stage;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_num(66.666_666_666_666_67), "6.66666667e1");
        assert_eq!(fmt_num(-0.5), "-5.00000000e-1");
        assert_eq!(fmt_num(0.0), "0.00000000e0");
    }

    #[test]
    fn conflict_rows() {
        let r = ConflictRecord {
            epoch: 2,
            iteration: 7,
            stage: Stage::Masked,
            task_i: 0,
            task_j: 2,
            cosine: -0.25,
            conflict: true,
        };
        assert_eq!(
            conflicts_csv(&[r]),
            "epoch,iter,stage,task_i,task_j,cosine,conflict\n2,7,masked,0,2,-2.50000000e-1,1\n"
        );
    }
}
