//! Optimizer, schedules and the joint and layer-wise training strategies.

mod data;
mod optim;
mod report;
mod schedule;
mod trainer;

pub use data::{Batch, Dataset, Example};
pub use optim::{adam_step, OptState, BETA1, BETA2, EPSILON};
pub use report::{EpochRecord, StageReport, StopReason, TrainReport};
pub use schedule::{lr_and_stop_update, Plateau, PlateauStep};
pub use trainer::{
    evaluate_losses, stage_epoch_cap, train, train_joint, train_layerwise, NoObserver, StepInfo,
    TrainObserver, TrainOutcome,
};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::loss::LossConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Joint,
    Layerwise,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Joint => "joint",
            Strategy::Layerwise => "layerwise",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Strategy::Joint),
            "layerwise" => Ok(Strategy::Layerwise),
            _ => Err(Error::InvalidArgument(format!(
                "unknown strategy {s:?} (expected joint or layerwise)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Epoch cap for joint and baseline training.
    pub max_epochs: usize,
    /// Layer-wise cap per stage; split-layer stage `i` gets `(i + 1)` times this.
    pub stage_epochs: usize,
    pub patience: usize,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub seed: u64,
    pub clip_seconds: f64,
    pub loss: LossConfig,
}

impl TrainConfig {
    /// Full-scale schedule.
    pub fn full() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 512,
            max_epochs: 400,
            stage_epochs: 50,
            patience: 25,
            lr_decay: 0.9,
            decay_every: 5,
            seed: 0,
            clip_seconds: 4.0,
            loss: LossConfig::default(),
        }
    }

    /// Desk-scale schedule for the tiny profile: small batches of short clips.
    pub fn tiny() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 16,
            clip_seconds: 2.0,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errs.push(format!("lr must be positive, got {}", self.lr));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("stage_epochs", self.stage_epochs),
            ("patience", self.patience),
            ("decay_every", self.decay_every),
        ] {
            if v == 0 {
                errs.push(format!("{name} must be positive"));
            }
        }
        if self.patience <= self.decay_every {
            errs.push(format!(
                "patience ({}) must exceed decay_every ({})",
                self.patience, self.decay_every
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            errs.push(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if !(self.clip_seconds > 0.0 && self.clip_seconds.is_finite()) {
            errs.push(format!("clip_seconds must be positive, got {}", self.clip_seconds));
        }
        if let Err(Error::Config(e)) = self.loss.validate() {
            errs.extend(e);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::full()
    }
}
