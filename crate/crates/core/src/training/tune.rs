use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train, TrainOptions, TrainingConfig};
use crate::data::{DatasetSplit, SequenceSource};
use crate::error::{Error, IoContext, Result};
use crate::nn::OptimizerKind;
use crate::zoo::{build_model, BuildOptions, ModelFamily, ModelSpec};

/// The three tuned parameters; every combination is tried.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub optimizers: Vec<OptimizerKind>,
    pub initial_lrs: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

impl HyperGrid {
    pub fn len(&self) -> usize {
        self.optimizers.len() * self.initial_lrs.len() * self.batch_sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points applied on top of `base`, optimizer-major.
    pub fn points(&self, base: &TrainingConfig) -> Vec<TrainingConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &optimizer in &self.optimizers {
            for &initial_lr in &self.initial_lrs {
                for &batch_size in &self.batch_sizes {
                    out.push(TrainingConfig {
                        optimizer,
                        initial_lr,
                        batch_size,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            optimizers: vec![OptimizerKind::RmsProp, OptimizerKind::SgdMomentum],
            initial_lrs: vec![1e-2, 1e-3, 1e-4],
            batch_sizes: vec![4, 8, 16],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningRow {
    pub family: ModelFamily,
    pub config: TrainingConfig,
    /// Best validation accuracy over the run's epochs, and the loss/epoch where it occurred.
    pub val_accuracy: Option<f64>,
    pub val_loss: Option<f64>,
    pub epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub rows: Vec<TuningRow>,
    pub best: BTreeMap<ModelFamily, TrainingConfig>,
}

impl TuningResult {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path).at(path)?)?)
    }
}

/// Higher validation accuracy, then lower validation loss, then smaller lr.
fn rank(a: &TuningRow, b: &TuningRow) -> Ordering {
    let key = |r: &TuningRow| (r.val_accuracy.unwrap_or(f64::NEG_INFINITY), r.val_loss.unwrap_or(f64::INFINITY));
    let ((aa, al), (ba, bl)) = (key(a), key(b));
    ba.total_cmp(&aa)
        .then(al.total_cmp(&bl))
        .then(a.config.initial_lr.total_cmp(&b.config.initial_lr))
}

/// Best successful row per family; earlier rows win exact ties.
pub fn select_best(rows: &[TuningRow]) -> BTreeMap<ModelFamily, TrainingConfig> {
    let mut best: BTreeMap<ModelFamily, &TuningRow> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.error.is_none() && r.val_accuracy.is_some()) {
        match best.get(&row.family) {
            Some(cur) if rank(row, cur) != Ordering::Less => {}
            _ => {
                best.insert(row.family, row);
            }
        }
    }
    best.into_iter().map(|(f, r)| (f, r.config.clone())).collect()
}

/// Exhaustive grid search on a split with a validation set. `base` supplies
/// everything the grid does not vary (schedule, epochs, seed, momentum).
/// A grid point that fails is recorded with its error and skipped.
pub fn tune_hyperparameters(
    families: &[ModelFamily],
    grid: &HyperGrid,
    split: &DatasetSplit,
    source: &dyn SequenceSource,
    base: &dyn Fn(ModelFamily) -> TrainingConfig,
    build: &BuildOptions,
    augment: bool,
) -> Result<TuningResult> {
    if grid.is_empty() {
        return Err(Error::Config("hyperparameter grid is empty".into()));
    }
    if families.is_empty() {
        return Err(Error::Config("no model families to tune".into()));
    }
    if split.validation.is_empty() {
        return Err(Error::InvalidInput(format!(
            "tuning needs a validation set; split '{}' has none",
            split.split_name
        )));
    }
    let options = TrainOptions {
        augment,
        run_dir: None,
        ..TrainOptions::default()
    };
    let mut rows = Vec::new();
    for &family in families {
        for config in grid.points(&base(family)) {
            let outcome = build_model(&ModelSpec::new(family), build)
                .and_then(|handle| train(handle, split, source, &config, &options));
            let row = match outcome {
                Ok((_, history)) => {
                    let best = history
                        .records
                        .iter()
                        .filter(|r| r.val_accuracy.is_some())
                        .min_by(|a, b| {
                            b.val_accuracy
                                .unwrap()
                                .total_cmp(&a.val_accuracy.unwrap())
                                .then(a.val_loss.unwrap_or(f64::INFINITY).total_cmp(&b.val_loss.unwrap_or(f64::INFINITY)))
                        });
                    TuningRow {
                        family,
                        val_accuracy: best.and_then(|r| r.val_accuracy),
                        val_loss: best.and_then(|r| r.val_loss),
                        epoch: best.map(|r| r.epoch),
                        config,
                        error: None,
                    }
                }
                Err(e) => {
                    log::warn!("{family} {:?} lr {} batch {}: {e}", config.optimizer, config.initial_lr, config.batch_size);
                    TuningRow {
                        family,
                        config,
                        val_accuracy: None,
                        val_loss: None,
                        epoch: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            rows.push(row);
        }
    }
    let best = select_best(&rows);
    if let Some(f) = families.iter().find(|f| !best.contains_key(f)) {
        return Err(Error::Config(format!("every grid point failed for {f}")));
    }
    Ok(TuningResult { rows, best })
}
