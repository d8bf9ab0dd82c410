use serde::{Deserialize, Serialize};

use super::TrainingHistory;

/// Keras ReduceLROnPlateau `min_delta`.
pub const PLATEAU_MIN_DELTA: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// `lr = initial_lr * rate^epoch`, stepped once per epoch.
    ExponentialDecay { rate: f64 },
    /// Multiply by `factor` after `patience` epochs without improvement of the monitored loss.
    ReduceOnPlateau { factor: f64, patience: usize, min_lr: f64 },
}

pub fn exponential_lr(initial_lr: f64, epoch: usize, rate: f64) -> f64 {
    // powf, not powi: powi rounds differently per exponent and optimisation level
    initial_lr * rate.powf(epoch as f64)
}

/// Learning rate for the epoch after the last one in `history`.
///
/// Replays the Keras ReduceLROnPlateau state machine over the monitored
/// losses (validation loss, or training loss when there is no validation
/// set): an epoch improves when `loss < best - 1e-4`; otherwise the wait
/// counter grows, and reaching `patience` triggers a reduction and resets it
/// (unless the rate was already at `min_lr`).
pub fn plateau_lr(history: &TrainingHistory, current_lr: f64, factor: f64, patience: usize, min_lr: f64) -> f64 {
    let records = &history.records;
    let mut best = f64::INFINITY;
    let mut wait = 0usize;
    let mut fire = false;
    for (i, rec) in records.iter().enumerate() {
        let loss = rec.monitored_loss();
        let lr = if i + 1 == records.len() { current_lr } else { rec.learning_rate };
        fire = false;
        if loss < best - PLATEAU_MIN_DELTA {
            best = loss;
            wait = 0;
        } else {
            wait += 1;
            if wait >= patience.max(1) && lr > min_lr {
                fire = true;
                wait = 0;
            }
        }
    }
    if fire {
        (current_lr * factor).max(min_lr)
    } else {
        current_lr
    }
}
