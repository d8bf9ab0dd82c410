//! Mini-batch training with the per-family optimizer and schedule choices.

mod schedule;
mod tune;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augmentation::{augment_sequence, params_for_video};
use crate::data::{DatasetSplit, FrameSequence, SequenceSource, VideoSample, SEQUENCE_SHAPE};
use crate::error::{Error, IoContext, Result};
use crate::nn::{Graph, Optimizer, OptimizerKind, Tensor};
use crate::provenance::Provenance;
use crate::seed::{derive_keyed, derive_seed, rng, SHUFFLE};
use crate::zoo::{ModelFamily, ModelHandle, ModelSpec};

pub use schedule::{exponential_lr, plateau_lr, Schedule, PLATEAU_MIN_DELTA};
pub use tune::{select_best, tune_hyperparameters, HyperGrid, TuningResult, TuningRow};

pub const HISTORY_FILE: &str = "history.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub optimizer: OptimizerKind,
    pub initial_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: Schedule,
    /// SGD only.
    pub momentum: f64,
    pub seed: u64,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad(format!("initial_lr must be > 0, got {}", self.initial_lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        match self.schedule {
            Schedule::ExponentialDecay { rate } if !(rate > 0.0 && rate < 1.0) => {
                bad(format!("decay rate must be in (0, 1), got {rate}"))
            }
            Schedule::ReduceOnPlateau { factor, .. } if !(factor > 0.0 && factor < 1.0) => {
                bad(format!("plateau factor must be in (0, 1), got {factor}"))
            }
            Schedule::ReduceOnPlateau { patience: 0, .. } => bad("plateau patience must be >= 1".into()),
            Schedule::ReduceOnPlateau { min_lr, .. } if !(min_lr >= 0.0) => {
                bad(format!("min_lr must be >= 0, got {min_lr}"))
            }
            _ => Ok(()),
        }
    }

    fn optimizer(&self) -> Optimizer {
        match self.optimizer {
            OptimizerKind::RmsProp => Optimizer::rmsprop(),
            OptimizerKind::SgdMomentum => Optimizer::sgd(self.momentum as f32),
        }
    }
}

/// SGD + plateau for the 3D CNN, RMSProp + plateau for the 2D CNN hybrid,
/// RMSProp + exponential decay (0.8 per epoch) for the fine-tuned backbones.
pub fn default_config(family: ModelFamily) -> TrainingConfig {
    let plateau = Schedule::ReduceOnPlateau {
        factor: 0.5,
        patience: 3,
        min_lr: 1e-6,
    };
    let (optimizer, initial_lr, schedule) = match family {
        ModelFamily::Cnn3d => (OptimizerKind::SgdMomentum, 1e-3, plateau),
        ModelFamily::Cnn2dBilstm => (OptimizerKind::RmsProp, 1e-3, plateau),
        ModelFamily::InceptionV3Bilstm | ModelFamily::MobileNetV2Bilstm => {
            (OptimizerKind::RmsProp, 1e-4, Schedule::ExponentialDecay { rate: 0.8 })
        }
    };
    TrainingConfig {
        optimizer,
        initial_lr,
        batch_size: 8,
        epochs: 30,
        schedule,
        momentum: 0.9,
        seed: 0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    /// Rate used during this epoch.
    pub learning_rate: f64,
    pub seconds: f64,
}

impl EpochRecord {
    /// What the plateau rule watches: validation loss when available.
    pub fn monitored_loss(&self) -> f64 {
        self.val_loss.unwrap_or(self.train_loss)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn learning_rates(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.learning_rate).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr", "seconds"])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.train_accuracy.to_string(),
                opt(r.val_loss),
                opt(r.val_accuracy),
                r.learning_rate.to_string(),
                format!("{:.3}", r.seconds),
            ])?;
        }
        w.flush().at(path)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut records = Vec::new();
        for row in r.records() {
            let row = row?;
            let num = |i: usize| -> Result<f64> {
                row.get(i)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("{}: bad value in column {i}", path.display())))
            };
            let opt = |i: usize| -> Result<Option<f64>> {
                match row.get(i).unwrap_or("") {
                    "" => Ok(None),
                    _ => num(i).map(Some),
                }
            };
            records.push(EpochRecord {
                epoch: num(0)? as usize,
                train_loss: num(1)?,
                train_accuracy: num(2)?,
                val_loss: opt(3)?,
                val_accuracy: opt(4)?,
                learning_rate: num(5)?,
                seconds: num(6)?,
            });
        }
        Ok(Self { records })
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    }
}

/// Which per-epoch checkpoints survive a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retention {
    /// Best by validation accuracy (ties: lower validation loss, then the
    /// earlier epoch) plus the last epoch.
    #[default]
    BestAndLast,
    All,
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub augment: bool,
    /// Where `config.json`, `history.csv` and checkpoints go; nothing is written when `None`.
    pub run_dir: Option<PathBuf>,
    pub retention: Retention,
    /// Evaluate on `split.validation` after each epoch (when it is nonempty).
    pub validate: bool,
    /// Refuse to start when the estimated activation memory exceeds what the OS reports available.
    pub check_memory: bool,
    /// Stop after the first epoch whose training accuracy reaches this value.
    /// Experiment runs leave it unset and always train for the full epoch count.
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            augment: true,
            run_dir: None,
            retention: Retention::BestAndLast,
            validate: true,
            check_memory: true,
            stop_at_train_accuracy: None,
        }
    }
}

/// Echo of everything that determined a run, written as `config.json`.
#[derive(Serialize)]
struct RunManifest<'a> {
    model: &'a ModelSpec,
    training: &'a TrainingConfig,
    split: String,
    augment: bool,
    train_videos: usize,
    validation_videos: usize,
    provenance: Provenance,
}

pub fn checkpoint_dir(run_dir: &Path, epoch: usize) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("epoch_{epoch}"))
}

/// Train on `split.train`, validating on `split.validation`. With
/// `epochs == 0` the model comes back untouched with an empty history.
pub fn train(
    mut handle: ModelHandle,
    split: &DatasetSplit,
    source: &dyn SequenceSource,
    config: &TrainingConfig,
    options: &TrainOptions,
) -> Result<(ModelHandle, TrainingHistory)> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::InvalidInput("split has no training videos".into()));
    }
    let mut history = TrainingHistory::default();
    if config.epochs == 0 {
        return Ok((handle, history));
    }
    let validation: &[VideoSample] = if options.validate { &split.validation } else { &[] };
    if options.check_memory {
        handle.with_graph(|g| check_memory(g, config.batch_size.min(split.train.len())))?;
    }
    if let Some(dir) = &options.run_dir {
        std::fs::create_dir_all(dir).at(dir)?;
        let manifest = RunManifest {
            model: &handle.spec,
            training: config,
            split: split.split_name.to_string(),
            augment: options.augment,
            train_videos: split.train.len(),
            validation_videos: validation.len(),
            provenance: Provenance::new(config.seed, &(&handle.spec, config))?,
        };
        let path = dir.join(CONFIG_FILE);
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).at(&path)?;
    }

    let mut optimizer = config.optimizer();
    let shuffle_seed = derive_seed(config.seed, SHUFFLE);
    let mut lr = config.initial_lr;
    let mut best: Option<(f64, f64, usize)> = None;
    for epoch in 1..=config.epochs {
        if let Schedule::ExponentialDecay { rate } = config.schedule {
            lr = exponential_lr(config.initial_lr, epoch - 1, rate);
        }
        let start = Instant::now();
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        order.shuffle(&mut rng(derive_keyed(shuffle_seed, &format!("epoch{epoch}"))));

        let graph = handle.graph_mut();
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let samples: Vec<&VideoSample> = chunk.iter().map(|&i| &split.train[i]).collect();
            let (x, targets) = load_batch(&samples, source, options.augment.then_some(config.seed))?;
            graph.zero_grads();
            let step = graph.forward_backward(&x, &targets)?;
            if !step.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    loss: step.loss,
                    batch_size_hint: (config.batch_size / 2).max(1),
                });
            }
            optimizer.step(graph, lr as f32);
            loss_sum += step.loss * targets.len() as f64;
            correct += count_correct(&step.probabilities, &targets);
        }
        let n = split.train.len() as f64;
        let (val_loss, val_accuracy) = if validation.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_loss(graph, validation, source, config.batch_size)?;
            (Some(l), Some(a))
        };
        history.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy,
            learning_rate: lr,
            seconds: start.elapsed().as_secs_f64(),
        });
        let rec = history.last().expect("just pushed");
        log::info!(
            "epoch {epoch}/{}: loss {:.4} acc {:.3}{} lr {:.3e}",
            config.epochs,
            rec.train_loss,
            rec.train_accuracy,
            match (rec.val_loss, rec.val_accuracy) {
                (Some(l), Some(a)) => format!(" val_loss {l:.4} val_acc {a:.3}"),
                _ => String::new(),
            },
            lr
        );

        if let Some(dir) = &options.run_dir {
            handle.save_checkpoint(&checkpoint_dir(dir, epoch))?;
            history.write_csv(&dir.join(HISTORY_FILE))?;
            prune_checkpoints(dir, &history, options.retention, &mut best)?;
        }
        if let Schedule::ReduceOnPlateau {
            factor,
            patience,
            min_lr,
        } = config.schedule
        {
            lr = plateau_lr(&history, lr, factor, patience, min_lr);
        }
        if options.stop_at_train_accuracy.is_some_and(|t| history.last().is_some_and(|r| r.train_accuracy >= t)) {
            log::info!("training accuracy target reached after epoch {epoch}");
            break;
        }
    }
    Ok((handle, history))
}

/// Keep the best (by validation accuracy) and the latest checkpoint.
fn prune_checkpoints(
    dir: &Path,
    history: &TrainingHistory,
    retention: Retention,
    best: &mut Option<(f64, f64, usize)>,
) -> Result<()> {
    if retention == Retention::All {
        return Ok(());
    }
    let rec = history.last().expect("nonempty history");
    let previous_best = best.map(|b| b.2);
    if let (Some(acc), Some(loss)) = (rec.val_accuracy, rec.val_loss) {
        let better = match *best {
            None => true,
            Some((ba, bl, _)) => acc > ba || (acc == ba && loss < bl),
        };
        if better {
            *best = Some((acc, loss, rec.epoch));
        }
    }
    let keep = |e: usize| e == rec.epoch || best.is_some_and(|b| b.2 == e);
    let mut stale = vec![rec.epoch.saturating_sub(1)];
    stale.extend(previous_best);
    for e in stale {
        if e > 0 && !keep(e) {
            let path = checkpoint_dir(dir, e);
            if path.exists() {
                std::fs::remove_dir_all(&path).at(&path)?;
            }
        }
    }
    Ok(())
}

/// Stack a batch, augmenting each sequence when `augment_seed` is set.
pub(crate) fn load_batch(
    samples: &[&VideoSample],
    source: &dyn SequenceSource,
    augment_seed: Option<u64>,
) -> Result<(Tensor, Vec<usize>)> {
    let seqs: Vec<Arc<FrameSequence>> = samples
        .par_iter()
        .map(|s| {
            let seq = source.sequence(s)?;
            match augment_seed {
                Some(seed) => Ok(Arc::new(augment_sequence(&seq, &params_for_video(seed, &s.id))?)),
                None => Ok(seq),
            }
        })
        .collect::<Result<_>>()?;
    let views: Vec<&[f32]> = seqs.iter().map(|s| s.frames.as_slice()).collect();
    let x = Tensor::stack(&views, &SEQUENCE_SHAPE)?;
    let targets = seqs.iter().map(|s| s.label.index()).collect();
    Ok((x, targets))
}

fn count_correct(probs: &Tensor, targets: &[usize]) -> usize {
    let c = probs.channels();
    probs
        .data()
        .chunks(c)
        .zip(targets)
        .filter(|(row, &t)| argmax(row) == t)
        .count()
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Inference-mode mean cross-entropy (plus the L2 penalty, as Keras reports it) and accuracy.
pub fn evaluate_loss(
    graph: &mut Graph,
    samples: &[VideoSample],
    source: &dyn SequenceSource,
    batch_size: usize,
) -> Result<(f64, f64)> {
    let (mut loss, mut correct) = (0.0f64, 0usize);
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&VideoSample> = chunk.iter().collect();
        let (x, targets) = load_batch(&refs, source, None)?;
        let probs = graph.predict(&x)?;
        let c = probs.channels();
        for (row, &t) in probs.data().chunks(c).zip(&targets) {
            loss -= (row[t] as f64).clamp(1e-7, 1.0 - 1e-7).ln();
        }
        correct += count_correct(&probs, &targets);
    }
    let n = samples.len() as f64;
    Ok((loss / n + graph.l2_penalty(), correct as f64 / n))
}

/// Rough training footprint: every layer output is kept for backward and
/// gets a gradient of the same size.
pub fn estimate_activation_bytes(graph: &Graph, batch_size: usize) -> u64 {
    let per_sample: usize = graph
        .layers()
        .iter()
        .map(|l| l.output_shape.iter().product::<usize>())
        .sum();
    (per_sample as u64) * batch_size as u64 * 4 * 2
}

fn available_memory_bytes() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = text.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kib: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kib * 1024)
}

fn check_memory(graph: &Graph, batch_size: usize) -> Result<()> {
    let Some(available) = available_memory_bytes() else {
        return Ok(());
    };
    let required = estimate_activation_bytes(graph, batch_size);
    if required <= available {
        return Ok(());
    }
    let per_sample = estimate_activation_bytes(graph, 1).max(1);
    Err(Error::Memory {
        required_mib: required >> 20,
        available_mib: available >> 20,
        batch_size_hint: ((available / per_sample) as usize).max(1),
    })
}
