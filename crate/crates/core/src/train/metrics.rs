use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

/// One line of the metrics log. `train_acc` is the running accuracy seen
/// during the epoch (dropout on); `train_acc_eval` is the dropout-off
/// re-evaluation when it was requested.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub dev_loss: Option<f64>,
    pub dev_acc: Option<f64>,
    pub train_acc_eval: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,dev_loss,dev_acc,train_acc_eval";

impl EpochRecord {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{:.6},{:.6},{},{},{}",
            self.epoch,
            self.train_loss,
            self.train_acc,
            opt(self.dev_loss),
            opt(self.dev_acc),
            opt(self.train_acc_eval)
        );
        s
    }
}

/// CSV metrics file, flushed after every row.
pub struct MetricsLog {
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{METRICS_HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn append(&mut self, rec: &EpochRecord) -> Result<()> {
        writeln!(self.out, "{}", rec.to_csv())?;
        self.out.flush()?;
        Ok(())
    }
}
