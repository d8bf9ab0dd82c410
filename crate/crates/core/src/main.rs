use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use vidbench::data::SplitName;
use vidbench::experiment::{
    ablation_summary, collect_reports, evaluate_run, make_split, prepare, run_experiment, train_cell, tune,
    write_summary, ExperimentConfig, SPLITS_DIR, SUMMARY_FILE, TUNING_FILE,
};
use vidbench::zoo::ModelFamily;
use vidbench::{Error, Result};

/// Train and benchmark violence-recognition video classifiers (3D CNN,
/// 2D CNN + BiLSTM, InceptionV3 / MobileNetV2 + BiLSTM) on the
/// training-fraction and training-full splits.
///
/// Settings come from built-in defaults, then --config, then the flags below.
#[derive(Parser)]
#[command(name = "vidbench", version, about, long_about)]
struct Cli {
    /// Experiment configuration file (JSON).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Experiment seed; every split, augmentation, initialisation and shuffle derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Dataset root holding Violence/ and NonViolence/ (or manifest.csv).
    #[arg(long, global = true, env = "VIDBENCH_DATA_ROOT", value_name = "DIR")]
    data_root: Option<PathBuf>,

    /// Model family; repeat or comma-separate for several
    /// (cnn3d, cnn2d_bilstm, inceptionv3_bilstm, mobilenetv2_bilstm).
    #[arg(long = "family", global = true, value_delimiter = ',', value_name = "FAMILY")]
    families: Vec<ModelFamily>,

    /// Training split; repeat or comma-separate for both (fraction, full).
    #[arg(long = "split", global = true, value_delimiter = ',', value_name = "SPLIT")]
    splits: Vec<SplitName>,

    /// Output root for splits, run directories and reports [default: runs].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override the number of training epochs for every family.
    #[arg(long, global = true)]
    epochs: Option<usize>,

    /// Directory with the ImageNet backbone weight files (also VIDBENCH_WEIGHTS_DIR).
    #[arg(long, global = true, value_name = "DIR")]
    weights_dir: Option<PathBuf>,

    /// Use random backbone weights when the ImageNet files are missing.
    #[arg(long, global = true)]
    allow_random_init: bool,

    /// Accept datasets under 2000 videos, scaling the split sizes proportionally.
    #[arg(long, global = true)]
    allow_split_scaling: bool,

    /// Train without data augmentation.
    #[arg(long, global = true)]
    no_augment: bool,

    /// Do not read or write the decoded-tensor cache.
    #[arg(long, global = true)]
    no_cache: bool,

    /// More logging (-v debug, -vv trace); RUST_LOG overrides.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode every video once and fill the tensor cache.
    Prepare,
    /// Write the split manifests to <out>/splits/.
    Split,
    /// Grid-search optimizer, learning rate and batch size on the fraction split.
    Tune,
    /// Train the selected families on the selected splits.
    Train,
    /// Evaluate the newest checkpoint of each selected run on the test set.
    Evaluate,
    /// Summarise the fraction → full accuracy uplift from finished runs.
    Ablate,
    /// Print a table of every finished evaluation under --out.
    Report,
    /// Run the whole grid: train and evaluate every cell, then summarise.
    Run,
}

impl Cli {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if let Some(root) = &self.data_root {
            c.data_root = Some(root.clone());
        }
        if !self.families.is_empty() {
            c.families = dedup(self.families.clone());
        }
        if !self.splits.is_empty() {
            c.splits = dedup(self.splits.clone());
        }
        if let Some(out) = &self.out {
            c.output_root = out.clone();
        }
        if let Some(epochs) = self.epochs {
            for f in ModelFamily::ALL {
                c.training.entry(f).or_default().epochs = Some(epochs);
            }
        }
        if let Some(dir) = &self.weights_dir {
            c.weights_dir = Some(dir.clone());
        }
        c.allow_random_init |= self.allow_random_init;
        c.allow_split_scaling |= self.allow_split_scaling;
        c.augment &= !self.no_augment;
        c.cache_enabled &= !self.no_cache;
        c.validate()?;
        Ok(c)
    }

    /// Families the user named, if any (for the summary's completeness check).
    fn explicit_families(&self, c: &ExperimentConfig) -> Vec<ModelFamily> {
        if !self.families.is_empty() || self.config.is_some() {
            c.families.clone()
        } else {
            Vec::new()
        }
    }
}

fn dedup<T: Ord + Clone>(mut v: Vec<T>) -> Vec<T> {
    v.sort();
    v.dedup();
    v
}

fn run(cli: &Cli) -> Result<bool> {
    let config = cli.experiment()?;
    match cli.command {
        Command::Prepare => {
            let s = prepare(&config)?;
            println!("{} of {} videos decoded", s.decoded, s.videos);
            for (id, e) in &s.failures {
                eprintln!("  {id}: {e}");
            }
            Ok(s.failures.is_empty())
        }
        Command::Split => {
            let manifest = config.manifest()?;
            for &name in &config.splits {
                let s = make_split(&config, &manifest, name)?;
                println!(
                    "{name}: {} train, {} validation, {} test{} -> {}",
                    s.train.len(),
                    s.validation.len(),
                    s.test.len(),
                    if s.scaled { " (scaled)" } else { "" },
                    config.output_root.join(SPLITS_DIR).join(format!("{name}.json")).display()
                );
            }
            Ok(true)
        }
        Command::Tune => {
            let result = tune(&config, &config.families)?;
            for (family, c) in &result.best {
                println!(
                    "{family}: {:?}, lr {}, batch {}",
                    c.optimizer, c.initial_lr, c.batch_size
                );
            }
            println!("{} grid points -> {}", result.rows.len(), config.output_root.join(TUNING_FILE).display());
            Ok(result.rows.iter().all(|r| r.error.is_none()))
        }
        Command::Train => {
            let manifest = config.manifest()?;
            let store = config.store();
            for &name in &config.splits {
                let split = make_split(&config, &manifest, name)?;
                for &family in &config.families {
                    train_cell(&config, &split, &store, family)?;
                    println!("{family} / {name} -> {}", config.cell_dir(family, name).display());
                }
            }
            Ok(true)
        }
        Command::Evaluate => {
            let manifest = config.manifest()?;
            let store = config.store();
            for &name in &config.splits {
                let split = make_split(&config, &manifest, name)?;
                for &family in &config.families {
                    let r = evaluate_run(&config, &split, &store, family)?;
                    println!(
                        "{family} / {name}: accuracy {:.4}, F1 {:.4} / {:.4}, {} false positives of {}",
                        r.accuracy,
                        r.f1_class0,
                        r.f1_class1,
                        r.false_positives(),
                        r.n_test()
                    );
                }
            }
            Ok(true)
        }
        Command::Ablate => {
            let reports = collect_reports(&config.output_root)?;
            let summary = ablation_summary(&reports, &cli.explicit_families(&config))?;
            write_summary(&summary, &config.output_root)?;
            for (family, u) in &summary.per_family {
                println!(
                    "{family:<20} fraction {:.4}  full {:.4}  uplift {:+.4}",
                    u.acc_fraction, u.acc_full, u.uplift
                );
            }
            println!(
                "mean uplift {:+.4} -> {}",
                summary.mean_uplift,
                config.output_root.join(SUMMARY_FILE).display()
            );
            Ok(true)
        }
        Command::Report => {
            let reports = collect_reports(&config.output_root)?;
            if reports.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "no metrics.json under {}",
                    config.output_root.display()
                )));
            }
            println!(
                "{:<20} {:<9} {:>8} {:>8} {:>8} {:>5} {:>6}",
                "family", "split", "accuracy", "f1_0", "f1_1", "fp", "n_test"
            );
            for r in &reports {
                println!(
                    "{:<20} {:<9} {:>8.4} {:>8.4} {:>8.4} {:>5} {:>6}",
                    r.family.as_str(),
                    r.split.as_str(),
                    r.accuracy,
                    r.f1.class0,
                    r.f1.class1,
                    r.false_positives,
                    r.n_test
                );
            }
            Ok(true)
        }
        Command::Run => {
            let outcome = run_experiment(&config)?;
            for c in &outcome.cells {
                match (&c.error, c.accuracy) {
                    (None, Some(acc)) => println!("{} / {}: accuracy {acc:.4}", c.family, c.split),
                    (err, _) => println!("{} / {}: FAILED {}", c.family, c.split, err.as_deref().unwrap_or("")),
                }
            }
            if let Some(s) = &outcome.summary {
                println!("mean uplift {:+.4}", s.mean_uplift);
            }
            Ok(outcome.failed() == 0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
