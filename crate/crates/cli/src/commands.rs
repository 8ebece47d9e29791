use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use log::info;

use vinet::check::{run_all, CheckOptions};
use vinet::data::{SampleSource, VideoRef};
use vinet::synth::generate_dataset;
use vinet::train::{
    evaluate as evaluate_videos, make_splits, predict_videos, run_grid, train_model, write_grid_csv, SplitKind,
};
use vinet::ViNet;

use crate::config::{settle_action, usage, write_echo, ExperimentConfig, Loaded, Source, DEFAULT_FOLDS};

pub const CHECKPOINT_FILE: &str = "checkpoint.vick";
pub const LOSS_FILE: &str = "losses.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const REPORT_FILE: &str = "eval_report.csv";
pub const CHECK_FILE: &str = "check_report.csv";

fn make_out(out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn open_source(loaded: &Loaded, cfg: &mut ExperimentConfig) -> anyhow::Result<Source> {
    let source = Source::open(cfg)?;
    settle_action(loaded, cfg, &source)?;
    Ok(source)
}

#[derive(Clone, Copy)]
enum Side {
    Train,
    Test,
}

/// Sample indices of one side of the configured split, or every sample.
fn side(cfg: &ExperimentConfig, source: &dyn SampleSource, which: Side) -> anyhow::Result<Vec<usize>> {
    let Some(kind) = &cfg.split else {
        return Ok((0..source.len()).collect());
    };
    let plans = make_splits(source.samples(), kind).map_err(|e| usage(e.to_string()))?;
    let plan = plans
        .get(cfg.fold)
        .ok_or_else(|| usage(format!("fold {} out of range: the split has {} plans", cfg.fold, plans.len())))?;
    plan.check_hygiene(source.samples())?;
    Ok(match which {
        Side::Train => plan.train.clone(),
        Side::Test => plan.test.clone(),
    })
}

pub fn generate(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    make_out(out)?;
    let manifest = generate_dataset(&cfg.dataset, out)?;
    write_echo(out, cfg)?;
    info!("wrote {} samples to {}", manifest.samples.len(), out.display());
    Ok(())
}

pub fn train(loaded: &Loaded, mut cfg: ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let source = open_source(loaded, &mut cfg)?;
    let src = source.get();
    let indices = side(&cfg, src, Side::Train)?;
    make_out(out)?;
    write_echo(out, &cfg)?;
    let (joints, h, w) = src.dims();
    let model = ViNet::build(cfg.train.model_config(joints, h, w), cfg.train.model_seed())?;
    info!("training on {} videos for {} epochs", indices.len(), cfg.train.epochs);
    let outcome = train_model(model, src, &indices, &cfg.train, |_, _| {})?;
    outcome.model.save(&out.join(CHECKPOINT_FILE), outcome.epoch_losses.len())?;

    let path = out.join(LOSS_FILE);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["epoch", "loss"])?;
    for (e, loss) in outcome.epoch_losses.iter().enumerate() {
        w.write_record([(e + 1).to_string(), loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn load_checkpoint(cfg: &ExperimentConfig, src: &dyn SampleSource) -> anyhow::Result<ViNet> {
    let path = cfg.checkpoint.as_ref().ok_or_else(|| usage("--checkpoint is required"))?;
    let (model, _) = ViNet::load(path).with_context(|| format!("loading {}", path.display()))?;
    let v = &model.config.vtdm;
    let (joints, h, w) = src.dims();
    if (v.joints, v.height, v.width) != (joints, h, w) {
        return Err(anyhow!(
            "checkpoint expects {}×{}×{} heatmaps, the data has {joints}×{h}×{w}",
            v.joints,
            v.height,
            v.width
        ));
    }
    if model.config.max_score() != cfg.train.action.max_score {
        return Err(anyhow!(
            "checkpoint scores 0..={}, the data 0..={}",
            model.config.max_score(),
            cfg.train.action.max_score
        ));
    }
    Ok(model)
}

pub fn score(loaded: &Loaded, mut cfg: ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let source = open_source(loaded, &mut cfg)?;
    let src = source.get();
    let model = load_checkpoint(&cfg, src)?;
    let indices = side(&cfg, src, Side::Test)?;
    make_out(out)?;
    write_echo(out, &cfg)?;
    let videos: Vec<VideoRef> = indices.iter().map(|&i| VideoRef::whole(src, i)).collect();
    let scores = predict_videos(&model, src, &videos, cfg.train.scoring, cfg.train.normalization)?;

    let path = out.join(PREDICTIONS_FILE);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    let classes = model.config.scorer.num_classes;
    let mut header: Vec<String> =
        ["sample_id", "subject", "view", "truth", "prediction", "clips"].map(String::from).to_vec();
    header.extend((0..classes).map(|k| format!("mean_{k}")));
    w.write_record(&header)?;
    for (&i, (prediction, dist)) in indices.iter().zip(&scores) {
        let meta = &src.samples()[i];
        let mut record = vec![
            meta.id(),
            meta.subject_id.to_string(),
            meta.view_id.to_string(),
            meta.score.to_string(),
            prediction.to_string(),
        ];
        record.push(dist.clip_logits.len().to_string());
        record.extend(dist.mean.iter().map(f64::to_string));
        w.write_record(&record)?;
    }
    w.flush()?;
    info!("scored {} videos", indices.len());
    Ok(())
}

pub fn evaluate(loaded: &Loaded, mut cfg: ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let source = open_source(loaded, &mut cfg)?;
    let src = source.get();
    let model = load_checkpoint(&cfg, src)?;
    let indices = side(&cfg, src, Side::Test)?;
    make_out(out)?;
    write_echo(out, &cfg)?;
    let echo = serde_json::to_value(&cfg)?;
    let report = evaluate_videos(&model, src, &indices, cfg.train.scoring, cfg.train.normalization, echo)?;
    report.save_csv(&out.join(REPORT_FILE))?;
    if report.constant_predictions {
        log::warn!("every video got the same score");
    }
    println!("spearman_rho {} over {} videos", report.rho, report.rows.len());
    Ok(())
}

/// The cross-subject plans and every single-view cross-view plan.
fn default_grid(src: &dyn SampleSource, single_views: bool) -> Vec<SplitKind> {
    let views: std::collections::BTreeSet<u32> = src.samples().iter().map(|m| m.view_id).collect();
    let mut kinds = if single_views { vec![] } else { vec![SplitKind::CrossSubject { folds: DEFAULT_FOLDS }] };
    kinds.extend(views.into_iter().map(|v| SplitKind::CrossView { train_views: vec![v] }));
    kinds
}

pub fn grid(loaded: &Loaded, mut cfg: ExperimentConfig, single_views: bool, out: &Path) -> anyhow::Result<()> {
    let source = open_source(loaded, &mut cfg)?;
    let src = source.get();
    if single_views || cfg.grid.is_empty() {
        cfg.grid = default_grid(src, single_views);
    }
    if cfg.jobs == 0 {
        cfg.jobs = std::thread::available_parallelism().map_or(1, usize::from);
    }
    let mut plans = Vec::new();
    for kind in &cfg.grid {
        plans.extend(make_splits(src.samples(), kind).map_err(|e| usage(e.to_string()))?);
    }
    make_out(out)?;
    write_echo(out, &cfg)?;
    info!("running {} plans, {} at a time", plans.len(), cfg.jobs);
    let (rows, _) = run_grid(src, &plans, &cfg.train, cfg.jobs)?;

    let mut tables: BTreeMap<(String, String), Vec<_>> = BTreeMap::new();
    for r in rows {
        tables.entry((r.action.clone(), r.split.clone())).or_default().push(r);
    }
    for ((action, split), rows) in &tables {
        let path = out.join(format!("grid_{action}_{split}.csv"));
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_grid_csv(rows, file)?;
        for r in rows {
            println!(
                "{split} train {} fold {} test {}: rho {:.4} ({} videos)",
                r.train_views, r.fold, r.test_view, r.rho, r.videos
            );
        }
    }
    Ok(())
}

pub fn check(out: Option<&Path>, gradient_seeds: u64) -> anyhow::Result<()> {
    let (scratch, temporary): (PathBuf, bool) = match out {
        Some(dir) => (dir.join("scratch"), false),
        None => (std::env::temp_dir().join(format!("vinet-check-{}", std::process::id())), true),
    };
    let mut opts = CheckOptions::new(scratch.clone());
    opts.gradient_seeds = gradient_seeds;
    let results = run_all(&opts);
    if temporary {
        let _ = fs::remove_dir_all(&scratch);
    }
    for r in &results {
        println!("{} {} ({:.1}s): {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.seconds, r.detail);
    }
    if let Some(dir) = out {
        make_out(dir)?;
        let path = dir.join(CHECK_FILE);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        for r in &results {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(anyhow!("{failed} of {} checks failed", results.len()));
    }
    Ok(())
}
