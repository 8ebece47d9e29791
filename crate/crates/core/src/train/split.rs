use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::SampleMeta;
use crate::error::{Result, VinetError};

/// How to partition a dataset into train and test sides.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitKind {
    /// `folds` disjoint subject groups; each plan tests on one group and
    /// trains on the rest, all views on both sides.
    CrossSubject { folds: usize },
    /// Train on `train_views`, test on every other view.
    CrossView { train_views: Vec<u32> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub train_views: Vec<u32>,
    pub test_views: Vec<u32>,
}

impl SplitPlan {
    /// Checks the disjointness guarantees of the plan against the samples
    /// it indexes.
    pub fn check_hygiene(&self, samples: &[SampleMeta]) -> Result<()> {
        let bad = |m: String| Err(VinetError::Split(m));
        let get = |i: usize| samples.get(i).ok_or_else(|| VinetError::Split(format!("sample {i} out of range")));
        let train: BTreeSet<usize> = self.train.iter().copied().collect();
        if train.len() != self.train.len() || self.test.iter().collect::<BTreeSet<_>>().len() != self.test.len() {
            return bad("duplicate sample in split".into());
        }
        if let Some(i) = self.test.iter().find(|i| train.contains(i)) {
            return bad(format!("sample {i} on both sides"));
        }
        match &self.kind {
            SplitKind::CrossSubject { .. } => {
                let subjects =
                    self.train.iter().map(|&i| get(i).map(|s| s.subject_id)).collect::<Result<BTreeSet<_>>>()?;
                for &i in &self.test {
                    let s = get(i)?.subject_id;
                    if subjects.contains(&s) {
                        return bad(format!("subject {s} on both sides"));
                    }
                }
            }
            SplitKind::CrossView { .. } => {
                let views = self.train.iter().map(|&i| get(i).map(|s| s.view_id)).collect::<Result<BTreeSet<_>>>()?;
                for &i in &self.test {
                    let v = get(i)?.view_id;
                    if views.contains(&v) {
                        return bad(format!("view {v} on both sides"));
                    }
                    if !self.test_views.contains(&v) {
                        return bad(format!("test sample {i} has unlisted view {v}"));
                    }
                }
                if views.iter().any(|v| !self.train_views.contains(v)) {
                    return bad("train sample with unlisted view".into());
                }
            }
        }
        Ok(())
    }
}

/// Builds the plans for `kind`. Every plan is hygiene-checked before it is
/// returned.
pub fn make_splits(samples: &[SampleMeta], kind: &SplitKind) -> Result<Vec<SplitPlan>> {
    if samples.is_empty() {
        return Err(VinetError::Split("no samples".into()));
    }
    let views: BTreeSet<u32> = samples.iter().map(|s| s.view_id).collect();
    let plans = match kind {
        SplitKind::CrossSubject { folds } => {
            let subjects: Vec<u32> =
                samples.iter().map(|s| s.subject_id).collect::<BTreeSet<_>>().into_iter().collect();
            if *folds < 2 {
                return Err(VinetError::Split(format!("need at least 2 folds, got {folds}")));
            }
            if subjects.len() < *folds {
                return Err(VinetError::Split(format!("{} subjects cannot fill {folds} folds", subjects.len())));
            }
            (0..*folds)
                .map(|fold| {
                    // round-robin over sorted subject ids
                    let held: BTreeSet<u32> = subjects.iter().skip(fold).step_by(*folds).copied().collect();
                    let (test, train): (Vec<usize>, Vec<usize>) =
                        (0..samples.len()).partition(|&i| held.contains(&samples[i].subject_id));
                    SplitPlan {
                        kind: kind.clone(),
                        fold,
                        train,
                        test,
                        train_views: views.iter().copied().collect(),
                        test_views: views.iter().copied().collect(),
                    }
                })
                .collect::<Vec<_>>()
        }
        SplitKind::CrossView { train_views } => {
            let chosen: BTreeSet<u32> = train_views.iter().copied().collect();
            if chosen.is_empty() || chosen.len() != train_views.len() {
                return Err(VinetError::Split(format!("train views {train_views:?} must be distinct and non-empty")));
            }
            if let Some(v) = chosen.iter().find(|v| !views.contains(v)) {
                return Err(VinetError::Split(format!("view {v} does not occur in the dataset")));
            }
            let test_views: Vec<u32> = views.difference(&chosen).copied().collect();
            if test_views.is_empty() {
                return Err(VinetError::Split("no views left for testing".into()));
            }
            let (train, test): (Vec<usize>, Vec<usize>) =
                (0..samples.len()).partition(|&i| chosen.contains(&samples[i].view_id));
            vec![SplitPlan {
                kind: kind.clone(),
                fold: 0,
                train,
                test,
                train_views: chosen.into_iter().collect(),
                test_views,
            }]
        }
    };
    for p in &plans {
        p.check_hygiene(samples)?;
        if p.train.is_empty() || p.test.is_empty() {
            return Err(VinetError::Split(format!("fold {} has an empty side", p.fold)));
        }
    }
    Ok(plans)
}
