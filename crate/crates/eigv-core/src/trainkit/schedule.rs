//! Plateau-based learning-rate decay: halve (by default) when validation
//! accuracy stops improving for a fixed number of epochs.

use crate::error::{Error, Result};

/// Tracks the best validation metric seen so far and decays the learning
/// rate after `patience` consecutive non-improving epochs. The stall counter
/// resets on every improvement *and* on every decay, so a struggling run
/// gets `patience` fresh epochs at each new rate. The rate never drops
/// below `floor`.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    patience: usize,
    factor: f64,
    floor: f64,
    best: f64,
    stall: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64, floor: f64) -> Result<Self> {
        if patience == 0 {
            return Err(Error::invalid("plateau_schedule", "patience must be at least 1"));
        }
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::invalid(
                "plateau_schedule",
                format!("decay factor must lie in (0, 1], got {factor}"),
            ));
        }
        if !(floor >= 0.0) || !floor.is_finite() {
            return Err(Error::invalid(
                "plateau_schedule",
                format!("lr floor must be nonnegative and finite, got {floor}"),
            ));
        }
        Ok(PlateauScheduler {
            patience,
            factor,
            floor,
            best: f64::NEG_INFINITY,
            stall: 0,
        })
    }

    /// Feeds one epoch's validation metric (higher is better) and returns
    /// the learning rate to use next.
    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        if metric > self.best {
            self.best = metric;
            self.stall = 0;
            return lr;
        }
        self.stall += 1;
        if self.stall >= self.patience {
            self.stall = 0;
            (lr * self.factor).max(self.floor)
        } else {
            lr
        }
    }

    /// Best metric observed so far.
    pub fn best(&self) -> f64 {
        self.best
    }
}
