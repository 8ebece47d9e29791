use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SampleSource;
use crate::error::{Result, VinetError};
use crate::model::ViNet;

use super::score::{evaluate, EvalReport};
use super::split::{SplitKind, SplitPlan};
use super::{train, TrainConfig};

/// Result of training and testing on one split plan.
#[derive(Clone, Debug)]
pub struct SplitOutcome {
    pub plan: SplitPlan,
    pub model: ViNet,
    pub epoch_losses: Vec<f64>,
    pub report: EvalReport,
    pub seconds: f64,
}

pub fn run_split(source: &dyn SampleSource, plan: &SplitPlan, config: &TrainConfig) -> Result<SplitOutcome> {
    plan.check_hygiene(source.samples())?;
    let started = Instant::now();
    let outcome = train(source, &plan.train, config)?;
    let echo = serde_json::json!({ "train": config, "split": plan.kind, "fold": plan.fold });
    let report = evaluate(&outcome.model, source, &plan.test, config.scoring, config.normalization, echo)?;
    Ok(SplitOutcome {
        plan: plan.clone(),
        model: outcome.model,
        epoch_losses: outcome.epoch_losses,
        report,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// One line of an experiment summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub action: String,
    pub split: String,
    pub backbone: String,
    pub stn: bool,
    pub train_views: String,
    /// Fold index, or `all` for predictions pooled over folds.
    pub fold: String,
    /// View id, `all` for every test video pooled, `avg` for the mean of
    /// the per-view values.
    pub test_view: String,
    pub rho: f64,
    pub videos: usize,
}

fn join_views(views: &[u32]) -> String {
    views.iter().map(u32::to_string).collect::<Vec<_>>().join("+")
}

/// Trains and evaluates every plan, at most `jobs` at a time, and returns the
/// summary rows. Cross-subject plans give one row per fold plus a pooled
/// row; cross-view plans give one row per test view, a pooled row and the
/// per-view average.
pub fn run_grid(
    source: &dyn SampleSource,
    plans: &[SplitPlan],
    config: &TrainConfig,
    jobs: usize,
) -> Result<(Vec<GridRow>, Vec<SplitOutcome>)> {
    if plans.is_empty() {
        return Err(VinetError::Split("no split plans".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| VinetError::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<SplitOutcome> =
        pool.install(|| plans.par_iter().with_max_len(1).map(|p| run_split(source, p, config)).collect::<Result<_>>())?;

    let backbone = serde_json::to_value(config.backbone)?.as_str().unwrap_or_default().to_string();
    let row = |plan: &SplitPlan, fold: String, test_view: String, rho: f64, videos: usize| GridRow {
        action: config.action.name.clone(),
        split: match plan.kind {
            SplitKind::CrossSubject { .. } => "cross_subject".into(),
            SplitKind::CrossView { .. } => "cross_view".into(),
        },
        backbone: backbone.clone(),
        stn: config.stn_enabled,
        train_views: join_views(&plan.train_views),
        fold,
        test_view,
        rho,
        videos,
    };
    let mut rows = Vec::new();
    for o in &outcomes {
        match o.plan.kind {
            SplitKind::CrossSubject { .. } => {
                rows.push(row(&o.plan, o.plan.fold.to_string(), "all".into(), o.report.rho, o.report.rows.len()));
            }
            SplitKind::CrossView { .. } => {
                let mut per_view = Vec::new();
                for &v in &o.plan.test_views {
                    let r = o.report.for_view(v)?;
                    per_view.push(r.rho);
                    rows.push(row(&o.plan, o.plan.fold.to_string(), v.to_string(), r.rho, r.rows.len()));
                }
                rows.push(row(&o.plan, o.plan.fold.to_string(), "all".into(), o.report.rho, o.report.rows.len()));
                let avg = per_view.iter().sum::<f64>() / per_view.len() as f64;
                rows.push(row(&o.plan, o.plan.fold.to_string(), "avg".into(), avg, o.report.rows.len()));
            }
        }
    }
    let cross_subject: Vec<&SplitOutcome> =
        outcomes.iter().filter(|o| matches!(o.plan.kind, SplitKind::CrossSubject { .. })).collect();
    if cross_subject.len() > 1 {
        let pooled: Vec<_> = cross_subject.iter().flat_map(|o| o.report.rows.clone()).collect();
        let report = EvalReport::from_rows(pooled, serde_json::Value::Null)?;
        rows.push(row(&cross_subject[0].plan, "all".into(), "all".into(), report.rho, report.rows.len()));
    }
    Ok((rows, outcomes))
}

/// Writes grid rows as CSV with a header.
pub fn write_grid_csv(rows: &[GridRow], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| VinetError::Eval(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| VinetError::Eval(format!("csv: {e}")))
}
