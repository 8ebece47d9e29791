//! `vinet`: generate synthetic corpora, train, score, evaluate, run
//! experiment grids and self-checks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use vinet::data::Normalization;
use vinet::msm::BackboneStyle;
use vinet::synth::MotionFamily;
use vinet::train::{ScoringRule, SplitKind};

use config::{env_seed, usage, ExperimentConfig, Loaded, UsageError, DEFAULT_FOLDS};

#[derive(Parser, Debug)]
#[command(name = "vinet", version, about = "View-invariant movement quality scoring from joint heatmaps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic multi-view corpus into --out.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        /// Corpus seed (same as --dataset-seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model; writes checkpoint.vick and losses.csv.
    Train(RunArgs),
    /// Score videos with a checkpoint; writes predictions.csv.
    Score(RunArgs),
    /// Score videos and compute Spearman's rho; writes eval_report.csv.
    Evaluate(RunArgs),
    /// Train and test every plan of the cross-subject and cross-view
    /// protocols; writes one summary table per action and split.
    Grid(RunArgs),
    /// Run the gradient, oracle, invariance and format self-checks.
    Check {
        /// Directory for check_report.csv and scratch files; a temporary
        /// directory is used and removed when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds of the finite-difference gradient suite.
        #[arg(long, default_value_t = 20)]
        gradient_seeds: u64,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    split: SplitFlags,
    /// Checkpoint to score with.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Grid plans trained at the same time (0: one per core).
    #[arg(long)]
    jobs: Option<usize>,
}

/// Parses a value by its JSON name, so flags accept exactly the names the
/// configuration file does.
fn named<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
struct DataFlags {
    /// Dataset directory written by `generate`; without it the corpus is
    /// rendered on the fly from the dataset settings.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    max_score: Option<usize>,
    #[arg(long)]
    min_frames: Option<usize>,
    #[arg(long)]
    max_frames: Option<usize>,
    /// Heatmap height and width in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Heatmap Gaussian standard deviation in pixels.
    #[arg(long)]
    sigma: Option<f64>,
    /// walk or sit-stand.
    #[arg(long, value_parser = named::<MotionFamily>)]
    family: Option<MotionFamily>,
    #[arg(long)]
    dataset_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// vgg-like, resnext-like or tiny.
    #[arg(long, value_parser = named::<BackboneStyle>)]
    backbone: Option<BackboneStyle>,
    /// Learn the spatial transformer (false: identity warp, frozen).
    #[arg(long, action = ArgAction::Set)]
    stn: Option<bool>,
    /// mean-logits or max-clip-argmax.
    #[arg(long, value_parser = named::<ScoringRule>)]
    scoring: Option<ScoringRule>,
    /// clip or joint.
    #[arg(long, value_parser = named::<Normalization>)]
    normalization: Option<Normalization>,
    /// Add temporal crops to even out the score histogram.
    #[arg(long, action = ArgAction::Set)]
    balance: Option<bool>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SplitName {
    #[value(name = "none")]
    None,
    #[value(name = "cross_subject")]
    CrossSubject,
    #[value(name = "cross_view")]
    CrossView,
}

#[derive(Args, Debug)]
struct SplitFlags {
    #[arg(long, value_enum)]
    split: Option<SplitName>,
    /// Cross-subject fold count.
    #[arg(long)]
    folds: Option<usize>,
    /// Which plan of the split to use (train, score, evaluate).
    #[arg(long)]
    fold: Option<usize>,
    /// Comma-separated training views for cross_view.
    #[arg(long, value_delimiter = ',')]
    train_views: Option<Vec<u32>>,
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// Flag value, else the file's value, else `VINET_SEED`, else the default.
fn resolve_seed(slot: &mut u64, flag: Option<u64>, in_file: bool, env: Option<u64>) {
    match (flag, in_file, env) {
        (Some(s), _, _) => *slot = s,
        (None, false, Some(s)) => *slot = s,
        _ => {}
    }
}

fn apply_data(cfg: &mut ExperimentConfig, f: &DataFlags) {
    let d = &mut cfg.dataset;
    set(&mut d.subjects, f.subjects);
    set(&mut d.views, f.views);
    set(&mut d.repetitions, f.repetitions);
    set(&mut d.max_score, f.max_score);
    set(&mut d.min_frames, f.min_frames);
    set(&mut d.max_frames, f.max_frames);
    set(&mut d.height, f.size);
    set(&mut d.width, f.size);
    set(&mut d.sigma, f.sigma);
    set(&mut d.family, f.family);
    if f.data.is_some() {
        cfg.data_dir = f.data.clone();
    }
}

fn apply_train(cfg: &mut ExperimentConfig, f: &TrainFlags) {
    let t = &mut cfg.train;
    set(&mut t.epochs, f.epochs);
    set(&mut t.lr, f.lr);
    set(&mut t.batch_size, f.batch_size);
    set(&mut t.backbone, f.backbone);
    set(&mut t.stn_enabled, f.stn);
    set(&mut t.scoring, f.scoring);
    set(&mut t.normalization, f.normalization);
    set(&mut t.balance, f.balance);
}

/// The split named by the flags, `Some(None)` for `--split none`, or `None`
/// when the flags leave the configured split alone.
fn flag_split(f: &SplitFlags, current: Option<&SplitKind>) -> anyhow::Result<Option<Option<SplitKind>>> {
    let current_folds = match current {
        Some(SplitKind::CrossSubject { folds }) => *folds,
        _ => DEFAULT_FOLDS,
    };
    let name = match (f.split, &f.train_views, f.folds) {
        (Some(n), _, _) => n,
        (None, Some(_), _) => SplitName::CrossView,
        (None, None, Some(_)) => SplitName::CrossSubject,
        (None, None, None) => return Ok(None),
    };
    match name {
        SplitName::None => {
            if f.train_views.is_some() || f.folds.is_some() {
                return Err(usage("--train-views and --folds need a split"));
            }
            Ok(Some(None))
        }
        SplitName::CrossSubject => {
            if f.train_views.is_some() {
                return Err(usage("--train-views applies to cross_view only"));
            }
            Ok(Some(Some(SplitKind::CrossSubject { folds: f.folds.unwrap_or(current_folds) })))
        }
        SplitName::CrossView => {
            if f.folds.is_some() {
                return Err(usage("--folds applies to cross_subject only"));
            }
            Ok(Some(f.train_views.clone().map(|train_views| SplitKind::CrossView { train_views })))
        }
    }
}

/// Configuration for the run-style subcommands.
/// Also reports whether a grid should run every single-view plan only.
fn resolve(args: &RunArgs, grid: bool) -> anyhow::Result<(Loaded, ExperimentConfig, bool)> {
    let loaded = Loaded::read(args.common.config.as_deref())?;
    let mut cfg = loaded.config.clone();
    apply_data(&mut cfg, &args.data);
    apply_train(&mut cfg, &args.train);
    let env = env_seed()?;
    resolve_seed(&mut cfg.train.seed, args.train.seed, loaded.sets("/train/seed"), env);
    resolve_seed(&mut cfg.dataset.seed, args.data.dataset_seed, loaded.sets("/dataset/seed"), env);
    set(&mut cfg.fold, args.split.fold);
    set(&mut cfg.jobs, args.jobs);
    if args.checkpoint.is_some() {
        cfg.checkpoint = args.checkpoint.clone();
    }
    let mut single_views = false;
    let requested = flag_split(&args.split, if grid { cfg.grid.first() } else { cfg.split.as_ref() })?;
    if grid {
        match (requested, args.split.split) {
            // every single-view plan when no training views are named
            (Some(None), Some(SplitName::CrossView)) => single_views = true,
            (Some(None), _) => return Err(usage("grid needs a split: cross_subject or cross_view")),
            (Some(Some(kind)), _) => cfg.grid = vec![kind],
            (None, _) => {}
        }
        if args.split.fold.is_some() {
            return Err(usage("grid runs every fold; --fold does not apply"));
        }
    } else {
        match (requested, args.split.split) {
            (Some(None), Some(SplitName::CrossView)) => return Err(usage("cross_view needs --train-views")),
            (Some(split), _) => cfg.split = split,
            (None, _) => {}
        }
    }
    cfg.train.validate().map_err(|e| usage(e.to_string()))?;
    Ok((loaded, cfg, single_views))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { common, data, seed } => {
            let loaded = Loaded::read(common.config.as_deref())?;
            let mut cfg = loaded.config.clone();
            apply_data(&mut cfg, &data);
            if cfg.data_dir.is_some() {
                return Err(usage("generate renders a corpus; --data does not apply"));
            }
            if seed.is_some() && data.dataset_seed.is_some() && seed != data.dataset_seed {
                return Err(usage("--seed and --dataset-seed disagree"));
            }
            resolve_seed(&mut cfg.dataset.seed, seed.or(data.dataset_seed), loaded.sets("/dataset/seed"), env_seed()?);
            cfg.dataset.validate().map_err(|e| usage(e.to_string()))?;
            commands::generate(&cfg, &common.out)
        }
        Command::Train(args) => {
            let (loaded, cfg, _) = resolve(&args, false)?;
            commands::train(&loaded, cfg, &args.common.out)
        }
        Command::Score(args) => {
            let (loaded, cfg, _) = resolve(&args, false)?;
            commands::score(&loaded, cfg, &args.common.out)
        }
        Command::Evaluate(args) => {
            let (loaded, cfg, _) = resolve(&args, false)?;
            commands::evaluate(&loaded, cfg, &args.common.out)
        }
        Command::Grid(args) => {
            let (loaded, cfg, single_views) = resolve(&args, true)?;
            commands::grid(&loaded, cfg, single_views, &args.common.out)
        }
        Command::Check { out, gradient_seeds } => commands::check(out.as_deref(), gradient_seeds),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            // causes that the message above already spells out are skipped
            let mut text = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !text.contains(&c) {
                    text = format!("{text}: {c}");
                }
            }
            eprintln!("error: {text}");
            ExitCode::from(1)
        }
    }
}
