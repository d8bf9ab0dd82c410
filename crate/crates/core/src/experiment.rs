//! The full grid: every model family trained on every split, evaluated on
//! the shared test set, and the dataset-size uplift summarised.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    load_manifest, load_sequences, split_dataset, DatasetSplit, LabelRule, SequenceSource, SequenceStore, SplitName,
    SplitOptions, TensorCache, VideoSample,
};
use crate::error::{Error, IoContext, Result};
use crate::evaluation::{emit_report, evaluate, EvaluationReport, MetricsFile, METRICS_FILE};
use crate::nn::OptimizerKind;
use crate::plot::grouped_bars_svg;
use crate::provenance::Provenance;
use crate::training::{
    default_config, train, tune_hyperparameters, HyperGrid, Retention, Schedule, TrainOptions, TrainingConfig,
    TuningResult,
};
use crate::zoo::{build_model, load_checkpoint, BuildOptions, ModelFamily, ModelHandle, ModelSpec, WEIGHTS_FILE};

pub const DATA_ROOT_ENV: &str = "VIDBENCH_DATA_ROOT";
pub const SUMMARY_FILE: &str = "ablation_summary.json";
pub const SUMMARY_CHART: &str = "ablation.svg";
pub const OUTCOME_FILE: &str = "experiment.json";
pub const TUNING_FILE: &str = "tuning.json";
pub const SPLITS_DIR: &str = "splits";

/// Per-family changes to the default training configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingOverrides {
    pub optimizer: Option<OptimizerKind>,
    pub initial_lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub schedule: Option<Schedule>,
    pub momentum: Option<f64>,
}

impl TrainingOverrides {
    pub fn apply(&self, mut c: TrainingConfig) -> TrainingConfig {
        c.optimizer = self.optimizer.unwrap_or(c.optimizer);
        c.initial_lr = self.initial_lr.unwrap_or(c.initial_lr);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        c.epochs = self.epochs.unwrap_or(c.epochs);
        c.schedule = self.schedule.unwrap_or(c.schedule);
        c.momentum = self.momentum.unwrap_or(c.momentum);
        c
    }
}

/// Per-family changes to the default model specification.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub trainable_tail_layers: Option<usize>,
    pub recurrent_units: Option<usize>,
    pub dense_units: Option<Vec<usize>>,
    pub dropout_rate: Option<f32>,
    pub l2_strength: Option<f32>,
}

impl ModelOverrides {
    pub fn apply(&self, mut s: ModelSpec) -> ModelSpec {
        s.trainable_tail_layers = self.trainable_tail_layers.unwrap_or(s.trainable_tail_layers);
        s.recurrent_units = self.recurrent_units.unwrap_or(s.recurrent_units);
        s.dense_units = self.dense_units.clone().unwrap_or(s.dense_units);
        s.dropout_rate = self.dropout_rate.unwrap_or(s.dropout_rate);
        s.l2_strength = self.l2_strength.unwrap_or(s.l2_strength);
        s
    }
}

fn all_families() -> Vec<ModelFamily> {
    ModelFamily::ALL.to_vec()
}

fn both_splits() -> Vec<SplitName> {
    vec![SplitName::Fraction, SplitName::Full]
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn yes() -> bool {
    true
}

/// Everything one reproduction needs; loaded from a JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Defaults to `$VIDBENCH_DATA_ROOT`.
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    #[serde(default = "all_families")]
    pub families: Vec<ModelFamily>,
    #[serde(default = "both_splits")]
    pub splits: Vec<SplitName>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_root: PathBuf,
    #[serde(default = "yes")]
    pub cache_enabled: bool,
    /// Defaults to `<output_root>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Keep decoded sequences in RAM (about 1.7 MiB per video).
    #[serde(default)]
    pub keep_in_memory: bool,
    /// Accept datasets smaller than 2000 videos with proportionally scaled splits.
    #[serde(default)]
    pub allow_split_scaling: bool,
    #[serde(default = "yes")]
    pub augment: bool,
    #[serde(default)]
    pub weights_dir: Option<PathBuf>,
    /// Build backbones from random weights when the ImageNet files are missing.
    #[serde(default)]
    pub allow_random_init: bool,
    #[serde(default)]
    pub training: BTreeMap<ModelFamily, TrainingOverrides>,
    #[serde(default)]
    pub models: BTreeMap<ModelFamily, ModelOverrides>,
    /// Start from the best configurations of a tuning run (applied before `training`).
    #[serde(default)]
    pub tuning_results: Option<PathBuf>,
    #[serde(default)]
    pub grid: HyperGrid,
    #[serde(default)]
    pub retention: Retention,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).at(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::Config("no model families selected".into()));
        }
        if self.splits.is_empty() {
            return Err(Error::Config("no splits selected".into()));
        }
        for &f in &self.families {
            self.training_config(f)?.validate()?;
            self.model_spec(f).validate()?;
        }
        Ok(())
    }

    pub fn data_root(&self) -> Result<PathBuf> {
        self.data_root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
            .ok_or_else(|| Error::Config(format!("no dataset root: set data_root, --data-root or {DATA_ROOT_ENV}")))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_root.join("cache"))
    }

    pub fn build_options(&self) -> BuildOptions {
        let mut opts = BuildOptions::new(self.seed);
        if let Some(dir) = &self.weights_dir {
            opts.weights_dir = dir.clone();
        }
        opts.allow_random_init = self.allow_random_init;
        opts
    }

    pub fn model_spec(&self, family: ModelFamily) -> ModelSpec {
        let spec = ModelSpec::new(family);
        match self.models.get(&family) {
            Some(o) => o.apply(spec),
            None => spec,
        }
    }

    /// Default → tuned → overrides, with the experiment seed.
    pub fn training_config(&self, family: ModelFamily) -> Result<TrainingConfig> {
        let mut c = default_config(family);
        if let Some(path) = &self.tuning_results {
            if let Some(best) = TuningResult::load(path)?.best.remove(&family) {
                c = best;
            }
        }
        if let Some(o) = self.training.get(&family) {
            c = o.apply(c);
        }
        c.seed = self.seed;
        Ok(c)
    }

    pub fn split_options(&self) -> SplitOptions {
        SplitOptions {
            allow_scaling: self.allow_split_scaling,
            validation: true,
        }
    }

    pub fn cell_dir(&self, family: ModelFamily, split: SplitName) -> PathBuf {
        self.output_root.join(family.as_str()).join(split.as_str())
    }

    pub fn store(&self) -> SequenceStore {
        SequenceStore::new(self.cache_enabled.then(|| TensorCache::new(self.cache_dir())), self.keep_in_memory)
    }

    pub fn manifest(&self) -> Result<Vec<VideoSample>> {
        load_manifest(&self.data_root()?, &LabelRule::default())
    }

    /// Hashes only what can change results: locations and caching are left out.
    fn provenance(&self, cell: &impl Serialize) -> Result<Provenance> {
        let substance = ExperimentConfig {
            data_root: None,
            output_root: PathBuf::new(),
            cache_enabled: false,
            cache_dir: None,
            keep_in_memory: false,
            weights_dir: None,
            tuning_results: None,
            ..self.clone()
        };
        let training: Vec<TrainingConfig> = self
            .families
            .iter()
            .map(|&f| self.training_config(f))
            .collect::<Result<_>>()?;
        Provenance::new(self.seed, &(substance, training, cell))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub videos: usize,
    pub decoded: usize,
    pub failures: Vec<(String, String)>,
}

/// Decode every video once, filling the tensor cache.
pub fn prepare(config: &ExperimentConfig) -> Result<PrepareSummary> {
    let mut manifest = config.manifest()?;
    let store = config.store();
    let results = load_sequences(&mut manifest, &store);
    let failures: Vec<(String, String)> = manifest
        .iter()
        .zip(&results)
        .filter_map(|(s, r)| r.as_ref().err().map(|e| (s.id.clone(), e.to_string())))
        .collect();
    for (id, e) in &failures {
        log::warn!("{id}: {e}");
    }
    Ok(PrepareSummary {
        videos: manifest.len(),
        decoded: manifest.len() - failures.len(),
        failures,
    })
}

/// Compute the split and save it under `<output_root>/splits/<name>.json`.
pub fn make_split(config: &ExperimentConfig, manifest: &[VideoSample], split: SplitName) -> Result<DatasetSplit> {
    let s = split_dataset(manifest, split, config.seed, config.split_options())?;
    let dir = config.output_root.join(SPLITS_DIR);
    std::fs::create_dir_all(&dir).at(&dir)?;
    s.save(&dir.join(format!("{split}.json")))?;
    Ok(s)
}

/// Grid search on the fraction split; writes `<output_root>/tuning.json`.
pub fn tune(config: &ExperimentConfig, families: &[ModelFamily]) -> Result<TuningResult> {
    let manifest = config.manifest()?;
    let split = make_split(config, &manifest, SplitName::Fraction)?;
    let store = config.store();
    let base = |f: ModelFamily| {
        let mut c = default_config(f);
        if let Some(o) = config.training.get(&f) {
            c = o.apply(c);
        }
        c.seed = config.seed;
        c
    };
    let result = tune_hyperparameters(
        families,
        &config.grid,
        &split,
        &store,
        &base,
        &config.build_options(),
        config.augment,
    )?;
    std::fs::create_dir_all(&config.output_root).at(&config.output_root)?;
    result.save(&config.output_root.join(TUNING_FILE))?;
    Ok(result)
}

/// Train one cell into its run directory.
pub fn train_cell(
    config: &ExperimentConfig,
    split: &DatasetSplit,
    source: &dyn SequenceSource,
    family: ModelFamily,
) -> Result<ModelHandle> {
    let handle = build_model(&config.model_spec(family), &config.build_options())?;
    let options = TrainOptions {
        augment: config.augment,
        run_dir: Some(config.cell_dir(family, split.split_name)),
        retention: config.retention,
        ..TrainOptions::default()
    };
    let (handle, _) = train(handle, split, source, &config.training_config(family)?, &options)?;
    Ok(handle)
}

/// The newest `checkpoints/epoch_<n>` under a run directory.
pub fn latest_checkpoint(run_dir: &Path) -> Result<PathBuf> {
    let dir = run_dir.join(crate::training::CHECKPOINT_DIR);
    let entries = std::fs::read_dir(&dir).at(&dir)?;
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in entries {
        let path = entry.at(&dir)?.path();
        let epoch = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("epoch_"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(e) = epoch {
            if path.join(WEIGHTS_FILE).is_file() && best.as_ref().map_or(true, |b| e > b.0) {
                best = Some((e, path));
            }
        }
    }
    best.map(|b| b.1)
        .ok_or_else(|| Error::InvalidInput(format!("no checkpoints under {}", dir.display())))
}

/// Evaluate a trained model on the test set and write the report into the cell directory.
pub fn evaluate_cell(
    config: &ExperimentConfig,
    split: &DatasetSplit,
    source: &dyn SequenceSource,
    handle: &ModelHandle,
) -> Result<EvaluationReport> {
    let family = handle.spec.family;
    let training = config.training_config(family)?;
    let provenance = config.provenance(&(family, split.split_name))?;
    let report = evaluate(handle, &split.test, split.split_name, source, training.batch_size, provenance)?;
    emit_report(&report, &config.cell_dir(family, split.split_name))?;
    Ok(report)
}

/// Evaluate the newest checkpoint of an existing run.
pub fn evaluate_run(
    config: &ExperimentConfig,
    split: &DatasetSplit,
    source: &dyn SequenceSource,
    family: ModelFamily,
) -> Result<EvaluationReport> {
    let handle = load_checkpoint(&latest_checkpoint(&config.cell_dir(family, split.split_name))?)?;
    if handle.spec.family != family {
        return Err(Error::Spec(format!(
            "checkpoint holds a {} model, expected {family}",
            handle.spec.family
        )));
    }
    evaluate_cell(config, split, source, &handle)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub family: ModelFamily,
    pub split: SplitName,
    pub run_dir: PathBuf,
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub cells: Vec<CellOutcome>,
    /// Present when every family has both splits.
    pub summary: Option<AblationSummary>,
    pub provenance: Provenance,
}

impl ExperimentOutcome {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }
}

fn describe_panic(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Train and evaluate every (family, split) cell. A failing cell is
/// recorded and the rest still run; the outcome lands in `experiment.json`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let manifest = config.manifest()?;
    let store = config.store();
    run_experiment_with(config, &manifest, &store)
}

/// [`run_experiment`] over an already loaded manifest and sequence source.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    manifest: &[VideoSample],
    source: &dyn SequenceSource,
) -> Result<ExperimentOutcome> {
    config.validate()?;
    std::fs::create_dir_all(&config.output_root).at(&config.output_root)?;
    let mut splits = Vec::new();
    for &s in &config.splits {
        splits.push(make_split(config, manifest, s)?);
    }
    if let Some(first) = splits.first() {
        for s in &splits[1..] {
            if s.test != first.test {
                return Err(Error::InvalidInput("splits disagree on the test set".into()));
            }
        }
    }

    let mut cells = Vec::new();
    let mut reports = Vec::new();
    for split in &splits {
        for &family in &config.families {
            log::info!("cell {family} / {}", split.split_name);
            let run = catch_unwind(AssertUnwindSafe(|| {
                let handle = train_cell(config, split, source, family)?;
                evaluate_cell(config, split, source, &handle)
            }));
            let result = run.unwrap_or_else(|p| Err(Error::InvalidInput(format!("cell panicked: {}", describe_panic(p)))));
            let run_dir = config.cell_dir(family, split.split_name);
            match result {
                Ok(report) => {
                    cells.push(CellOutcome {
                        family,
                        split: split.split_name,
                        run_dir,
                        accuracy: Some(report.accuracy),
                        error: None,
                    });
                    reports.push(report.metrics_file());
                }
                Err(e) => {
                    log::error!("cell {family} / {} failed: {e}", split.split_name);
                    cells.push(CellOutcome {
                        family,
                        split: split.split_name,
                        run_dir,
                        accuracy: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
    }

    let both = config.splits.contains(&SplitName::Fraction) && config.splits.contains(&SplitName::Full);
    let summary = if both {
        match ablation_summary(&reports, &config.families) {
            Ok(s) => {
                write_summary(&s, &config.output_root)?;
                Some(s)
            }
            Err(e) => {
                log::warn!("no ablation summary: {e}");
                None
            }
        }
    } else {
        None
    };
    let outcome = ExperimentOutcome {
        cells,
        summary,
        provenance: config.provenance(&"experiment")?,
    };
    let path = config.output_root.join(OUTCOME_FILE);
    std::fs::write(&path, serde_json::to_vec_pretty(&outcome)?).at(&path)?;
    Ok(outcome)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyUplift {
    pub acc_fraction: f64,
    pub acc_full: f64,
    /// `acc_full − acc_fraction`.
    pub uplift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub per_family: BTreeMap<ModelFamily, FamilyUplift>,
    pub mean_uplift: f64,
    pub seed: u64,
    pub provenance: Provenance,
}

/// Per-family accuracy gain from the full over the fraction split, and its mean.
/// `families` lists the cells that must be present (empty: whatever the reports cover).
pub fn ablation_summary(reports: &[MetricsFile], families: &[ModelFamily]) -> Result<AblationSummary> {
    let mut cells: BTreeMap<(ModelFamily, SplitName), &MetricsFile> = BTreeMap::new();
    for r in reports {
        if cells.insert((r.family, r.split), r).is_some() {
            return Err(Error::InvalidInput(format!("two reports for {} / {}", r.family, r.split)));
        }
    }
    let first = reports
        .first()
        .ok_or_else(|| Error::IncompleteGrid("no evaluation reports".into()))?;
    if let Some(r) = reports.iter().find(|r| r.provenance.seed != first.provenance.seed) {
        return Err(Error::InvalidInput(format!(
            "reports come from different seeds ({} and {}); the test sets would differ",
            first.provenance.seed, r.provenance.seed
        )));
    }
    let mut wanted: Vec<ModelFamily> = if families.is_empty() {
        reports.iter().map(|r| r.family).collect()
    } else {
        families.to_vec()
    };
    wanted.sort();
    wanted.dedup();

    let mut per_family = BTreeMap::new();
    for f in wanted {
        let get = |s: SplitName| {
            cells
                .get(&(f, s))
                .map(|r| r.accuracy)
                .ok_or_else(|| Error::IncompleteGrid(format!("{f} / {s}")))
        };
        let (acc_fraction, acc_full) = (get(SplitName::Fraction)?, get(SplitName::Full)?);
        per_family.insert(
            f,
            FamilyUplift {
                acc_fraction,
                acc_full,
                uplift: acc_full - acc_fraction,
            },
        );
    }
    let mean_uplift = per_family.values().map(|u| u.uplift).sum::<f64>() / per_family.len() as f64;
    let seed = first.provenance.seed;
    let provenance = Provenance::new(seed, &reports.iter().map(|r| &r.provenance).collect::<Vec<_>>())?;
    Ok(AblationSummary {
        per_family,
        mean_uplift,
        seed,
        provenance,
    })
}

/// `metrics.json` of every `<root>/<family>/<split>/` cell present.
pub fn collect_reports(root: &Path) -> Result<Vec<MetricsFile>> {
    let mut out = Vec::new();
    for family in ModelFamily::ALL {
        for split in [SplitName::Fraction, SplitName::Full] {
            let path = root.join(family.as_str()).join(split.as_str()).join(METRICS_FILE);
            if path.is_file() {
                out.push(MetricsFile::load(&path)?);
            }
        }
    }
    Ok(out)
}

/// `ablation_summary.json` and the grouped bar chart.
pub fn write_summary(summary: &AblationSummary, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    let path = dir.join(SUMMARY_FILE);
    let mut json = serde_json::to_vec_pretty(summary)?;
    json.push(b'\n');
    std::fs::write(&path, json).at(&path)?;

    let names: Vec<String> = summary.per_family.keys().map(|f| f.to_string()).collect();
    let fraction: Vec<f64> = summary.per_family.values().map(|u| u.acc_fraction).collect();
    let full: Vec<f64> = summary.per_family.values().map(|u| u.acc_full).collect();
    let title = format!("Test accuracy by training set size (mean uplift {:+.4})", summary.mean_uplift);
    let svg = grouped_bars_svg(&title, &names, &[("training-fraction", fraction), ("training-full", full)]);
    let path = dir.join(SUMMARY_CHART);
    std::fs::write(&path, svg).at(&path)
}
