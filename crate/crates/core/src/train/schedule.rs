//! Plateau learning-rate decay and early stopping.

/// Outcome of feeding one validation loss to a [`Plateau`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauStep {
    pub improved: bool,
    pub lr: f64,
    pub stop: bool,
}

/// Tracks the best validation loss. Every `decay_every` consecutive epochs
/// without a new best multiply the learning rate by `decay`; `patience`
/// such epochs stop training. The first epoch always sets the best.
#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    lr: f64,
    decay: f64,
    decay_every: usize,
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    epochs: usize,
    stagnant: usize,
}

impl Plateau {
    pub fn new(lr: f64, decay: f64, decay_every: usize, patience: usize) -> Self {
        Self {
            lr,
            decay,
            decay_every,
            patience,
            best: None,
            best_epoch: 0,
            epochs: 0,
            stagnant: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// 1-based epoch of the best loss, 0 before any update.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn stagnant_epochs(&self) -> usize {
        self.stagnant
    }

    pub fn update(&mut self, val_loss: f64) -> PlateauStep {
        self.epochs += 1;
        let improved = self.best.is_none_or(|b| val_loss < b);
        if improved {
            self.best = Some(val_loss);
            self.best_epoch = self.epochs;
            self.stagnant = 0;
        } else {
            self.stagnant += 1;
            if self.stagnant % self.decay_every == 0 {
                self.lr *= self.decay;
            }
        }
        PlateauStep {
            improved,
            lr: self.lr,
            stop: self.stagnant >= self.patience,
        }
    }
}

/// Replays a validation-loss history and returns the resulting learning
/// rate and whether training should have stopped.
pub fn lr_and_stop_update(
    history: &[f64],
    initial_lr: f64,
    decay: f64,
    decay_every: usize,
    patience: usize,
) -> (f64, bool) {
    let mut p = Plateau::new(initial_lr, decay, decay_every, patience);
    let mut stop = false;
    for &l in history {
        stop = p.update(l).stop;
        if stop {
            break;
        }
    }
    (p.lr(), stop)
}
