//! Split hygiene, scoring invariances and training determinism.

use std::collections::BTreeSet;

use rand::Rng;

use crate::data::{SampleMeta, SampleSource};
use crate::error::{Result, VinetError};
use crate::seed::child_rng;
use crate::synth::{DatasetSpec, SyntheticCorpus};
use crate::train::{make_splits, score_from_logits, train, ScoringRule, SplitKind, SplitPlan, TrainConfig};

const PROTOCOL_SEED: u64 = 0x7072_6f74;
/// Invariance trials whose top two averaged outputs are closer than this are
/// skipped: rounding may legitimately reorder them.
pub const TIE_GAP: f64 = 1e-7;

/// Problems with one plan, checked independently of `SplitPlan::check_hygiene`.
fn plan_problems(plan: &SplitPlan, samples: &[SampleMeta]) -> Vec<String> {
    let mut problems = Vec::new();
    let train: BTreeSet<usize> = plan.train.iter().copied().collect();
    let test: BTreeSet<usize> = plan.test.iter().copied().collect();
    if train.len() != plan.train.len() || test.len() != plan.test.len() {
        problems.push("duplicate index".into());
    }
    if !train.is_disjoint(&test) {
        problems.push("sample on both sides".into());
    }
    if train.is_empty() || test.is_empty() {
        problems.push("empty side".into());
    }
    let subjects = |side: &BTreeSet<usize>| side.iter().map(|&i| samples[i].subject_id).collect::<BTreeSet<_>>();
    let views = |side: &BTreeSet<usize>| side.iter().map(|&i| samples[i].view_id).collect::<BTreeSet<_>>();
    match &plan.kind {
        SplitKind::CrossSubject { .. } => {
            if train.len() + test.len() != samples.len() {
                problems.push("samples left out".into());
            }
            if !subjects(&train).is_disjoint(&subjects(&test)) {
                problems.push("subject on both sides".into());
            }
        }
        SplitKind::CrossView { train_views } => {
            let wanted: BTreeSet<u32> = train_views.iter().copied().collect();
            if views(&train) != wanted {
                problems.push(format!("train views {:?}, wanted {wanted:?}", views(&train)));
            }
            if !views(&test).is_disjoint(&wanted) {
                problems.push("training view in test".into());
            }
            let expected = samples.iter().filter(|m| !wanted.contains(&m.view_id)).count();
            if test.len() != expected {
                problems.push(format!("{} test samples, {expected} outside the training views", test.len()));
            }
        }
    }
    if let Err(e) = plan.check_hygiene(samples) {
        problems.push(format!("hygiene check: {e}"));
    }
    problems
}

/// Every cross-subject fold count from 2 to the number of subjects and
/// every single- and two-view cross-view split of `samples`.
pub fn split_hygiene(samples: &[SampleMeta]) -> Result<(usize, Vec<String>)> {
    let subjects: BTreeSet<u32> = samples.iter().map(|m| m.subject_id).collect();
    let views: Vec<u32> = samples.iter().map(|m| m.view_id).collect::<BTreeSet<_>>().into_iter().collect();
    let mut kinds: Vec<SplitKind> = (2..=subjects.len()).map(|folds| SplitKind::CrossSubject { folds }).collect();
    for (i, &a) in views.iter().enumerate() {
        kinds.push(SplitKind::CrossView { train_views: vec![a] });
        for &b in &views[i + 1..] {
            kinds.push(SplitKind::CrossView { train_views: vec![a, b] });
        }
    }
    let mut checked = 0;
    let mut failures = Vec::new();
    for kind in &kinds {
        for plan in make_splits(samples, kind)? {
            checked += 1;
            for p in plan_problems(&plan, samples) {
                failures.push(format!("{kind:?} fold {}: {p}", plan.fold));
            }
        }
    }
    Ok((checked, failures))
}

/// Counts of invariance trials: run, skipped as near-ties, failed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InvarianceReport {
    pub trials: usize,
    pub skipped: usize,
    pub failures: usize,
}

fn top_gap(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    if v.len() < 2 {
        f64::INFINITY
    } else {
        v[0] - v[1]
    }
}

/// Random clip outputs under a per-clip constant shift and under `a·f + b`
/// with `a > 0`, for both scoring rules.
pub fn score_invariance(trials: usize) -> InvarianceReport {
    let mut report = InvarianceReport::default();
    for t in 0..trials as u64 {
        let r = &mut child_rng(PROTOCOL_SEED, &[t]);
        let (clips, classes) = (r.gen_range(1..9), r.gen_range(2..8));
        let logits: Vec<Vec<f64>> =
            (0..clips).map(|_| (0..classes).map(|_| r.gen_range(-6.0..6.0)).collect()).collect();
        let (a, b) = (r.gen_range(0.05..5.0), r.gen_range(-10.0..10.0));
        let shifted: Vec<Vec<f64>> = logits
            .iter()
            .map(|c| {
                let s = r.gen_range(-10.0..10.0);
                c.iter().map(|v| v + s).collect()
            })
            .collect();
        let affine: Vec<Vec<f64>> = logits.iter().map(|c| c.iter().map(|v| a * v + b).collect()).collect();
        for rule in [ScoringRule::MeanLogits, ScoringRule::MaxClipArgmax] {
            report.trials += 1;
            let Ok((base, dist)) = score_from_logits(logits.clone(), rule) else {
                report.failures += 1;
                continue;
            };
            let close = match rule {
                ScoringRule::MeanLogits => top_gap(&dist.mean) < TIE_GAP,
                ScoringRule::MaxClipArgmax => logits.iter().any(|c| top_gap(c) < TIE_GAP),
            };
            if close {
                report.skipped += 1;
                continue;
            }
            let same = |l: &Vec<Vec<f64>>| score_from_logits(l.clone(), rule).ok().map(|s| s.0) == Some(base);
            if !same(&shifted) || !same(&affine) {
                report.failures += 1;
            }
        }
    }
    report
}

/// Loss curves of two identical training runs on a small corpus, the second
/// one inside a three-thread pool.
pub fn training_determinism(epochs: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let corpus = SyntheticCorpus::new(DatasetSpec {
        subjects: 3,
        views: 2,
        min_frames: 16,
        max_frames: 48,
        height: 16,
        width: 16,
        sigma: 1.0,
        seed: 11,
        ..DatasetSpec::default()
    })?;
    let config = TrainConfig { epochs, seed: 5, ..TrainConfig::default() };
    let train_set: Vec<usize> = (0..corpus.len()).step_by(2).collect();
    let first = train(&corpus, &train_set, &config)?.epoch_losses;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .map_err(|e| VinetError::Config(format!("thread pool: {e}")))?;
    let second = pool.install(|| train(&corpus, &train_set, &config))?.epoch_losses;
    Ok((first, second))
}
