//! Metrics plumbing: typed rows and the CSV files trainers stream into.
//! Rows flush per write so a long run can be tailed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const TRAIN_CSV_HEADER: &str =
    "iter,env_steps,eval_success,policy_loss,value_loss,approx_kl,entropy,clip_frac,lr_actor,lr_critic,wallclock_s";
pub const BC_CSV_HEADER: &str = "step,loss,lr";
pub const SCALING_CSV_HEADER: &str = "size,rep,success_rate,ci_lo,ci_hi";

/// One RL training iteration. `wallclock_s` is informational and excluded
/// from determinism comparisons.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainRow {
    pub iter: u64,
    pub env_steps: u64,
    pub eval_success: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub wallclock_s: f64,
}

impl TrainRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:.3}",
            self.iter,
            self.env_steps,
            self.eval_success,
            self.policy_loss,
            self.value_loss,
            self.approx_kl,
            self.entropy,
            self.clip_frac,
            self.lr_actor,
            self.lr_critic,
            self.wallclock_s
        )
    }

    /// All learning-relevant columns, for rerun-identity checks.
    pub fn deterministic_cols(&self) -> String {
        let full = self.to_csv();
        full.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap_or(full)
    }
}

/// Line-oriented CSV file that writes its header up front and flushes per
/// row.
pub struct CsvFile {
    w: BufWriter<File>,
}

impl CsvFile {
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{header}")?;
        w.flush()?;
        Ok(CsvFile { w })
    }

    pub fn write_row(&mut self, row: &str) -> Result<()> {
        writeln!(self.w, "{row}")?;
        self.w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_row_matches_header_width() {
        let row = TrainRow {
            iter: 1,
            env_steps: 12800,
            eval_success: 0.5,
            policy_loss: -0.01,
            value_loss: 0.2,
            approx_kl: 0.05,
            entropy: 3.1,
            clip_frac: 0.12,
            lr_actor: 3e-4,
            lr_critic: 5e-3,
            wallclock_s: 1.25,
        };
        let cols = row.to_csv().split(',').count();
        assert_eq!(cols, TRAIN_CSV_HEADER.split(',').count());
        assert_eq!(
            row.deterministic_cols().split(',').count(),
            cols - 1,
            "only wallclock is dropped"
        );
    }

    #[test]
    fn csv_file_writes_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut f = CsvFile::create(&path, TRAIN_CSV_HEADER).unwrap();
        f.write_row("1,2,0.5,0,0,0,0,0,0,0,0").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], TRAIN_CSV_HEADER);
    }
}
