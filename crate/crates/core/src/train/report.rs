//! Training history.

use std::fmt;
use std::io::Write;

use crate::arch::Variant;
use crate::error::Result;

use super::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// No new best validation loss for `patience` epochs.
    EarlyStop,
    /// The epoch cap was reached.
    EpochCap,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::EarlyStop => "early_stop",
            StopReason::EpochCap => "epoch_cap",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based within its stage.
    pub epoch: usize,
    /// Learning rate used during the epoch.
    pub lr: f64,
    /// `(exit, loss)` averaged over the epoch's batches.
    pub train_loss: Vec<(usize, f64)>,
    pub val_loss: Vec<(usize, f64)>,
    /// Quantity driving the schedule: summed exit losses on validation data.
    pub val_objective: f64,
    pub improved: bool,
}

impl EpochRecord {
    pub fn train_objective(&self) -> f64 {
        self.train_loss.iter().map(|(_, l)| l).sum()
    }
}

/// One training stage: the whole run for joint training, one exit for
/// layer-wise training.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    /// Exit trained in this stage; `None` for joint training.
    pub stage: Option<usize>,
    pub epoch_cap: usize,
    pub epochs: Vec<EpochRecord>,
    pub stop: StopReason,
    pub best_epoch: usize,
    pub best_val: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub variant: Variant,
    pub strategy: Strategy,
    pub stages: Vec<StageReport>,
    pub wall_clock_secs: f64,
    pub checkpoint_id: Option<String>,
}

impl TrainReport {
    pub fn epochs_executed(&self) -> usize {
        self.stages.iter().map(|s| s.epochs.len()).sum()
    }

    /// Long-format CSV: one row per (stage, epoch, exit).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "variant",
            "strategy",
            "stage",
            "epoch",
            "lr",
            "exit",
            "train_loss",
            "val_loss",
            "improved",
            "stop_reason",
            "checkpoint_id",
        ])?;
        let ckpt = self.checkpoint_id.clone().unwrap_or_default();
        for s in &self.stages {
            let stage = s.stage.map_or("all".to_string(), |i| i.to_string());
            for e in &s.epochs {
                for ((exit, tl), (_, vl)) in e.train_loss.iter().zip(&e.val_loss) {
                    w.write_record([
                        self.variant.name().to_string(),
                        self.strategy.name().to_string(),
                        stage.clone(),
                        e.epoch.to_string(),
                        format!("{:e}", e.lr),
                        exit.to_string(),
                        format!("{tl:e}"),
                        format!("{vl:e}"),
                        e.improved.to_string(),
                        s.stop.name().to_string(),
                        ckpt.clone(),
                    ])?;
                }
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
