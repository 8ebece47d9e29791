use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Normalization, SampleSource, VideoRef};
use crate::error::{Result, VinetError};
use crate::model::ViNet;
use crate::msm::ScoreDistribution;
use crate::tensor::Tensor;

/// Clips scored per forward pass at evaluation time.
const EVAL_BATCH: usize = 8;

/// How clip outputs combine into one video score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringRule {
    /// Argmax of the clip-averaged raw outputs.
    #[default]
    MeanLogits,
    /// Largest of the per-clip argmax scores.
    MaxClipArgmax,
}

impl std::str::FromStr for ScoringRule {
    type Err = VinetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-logits" | "mean" => Ok(ScoringRule::MeanLogits),
            "max-clip-argmax" | "max" => Ok(ScoringRule::MaxClipArgmax),
            other => Err(VinetError::Config(format!("unknown scoring rule {other:?}"))),
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Averages clip outputs and picks the video score under `rule`.
pub fn score_from_logits(clip_logits: Vec<Vec<f64>>, rule: ScoringRule) -> Result<(usize, ScoreDistribution)> {
    let k = clip_logits.first().map(Vec::len).ok_or(VinetError::SequenceTooShort { frames: 0, clip_len: 1 })?;
    if k == 0 || clip_logits.iter().any(|c| c.len() != k) {
        return Err(VinetError::Eval("clip outputs differ in length".into()));
    }
    let m = clip_logits.len() as f64;
    let mut mean = vec![0.0; k];
    for clip in &clip_logits {
        mean.iter_mut().zip(clip).for_each(|(a, v)| *a += v);
    }
    mean.iter_mut().for_each(|a| *a /= m);
    let score = match rule {
        ScoringRule::MeanLogits => argmax(&mean),
        ScoringRule::MaxClipArgmax => clip_logits.iter().map(|c| argmax(c)).max().expect("non-empty"),
    };
    Ok((score, ScoreDistribution { clip_logits, mean }))
}

/// Raw outputs of every clip of `video`.
pub fn clip_logits(
    model: &mut ViNet,
    source: &dyn SampleSource,
    video: &VideoRef,
    normalization: Normalization,
) -> Result<Vec<Vec<f64>>> {
    let t = model.config.vtdm.clip_len;
    let m = video.clip_count(t);
    if m == 0 {
        return Err(VinetError::SequenceTooShort { frames: video.frames, clip_len: t });
    }
    let mut out = Vec::with_capacity(m);
    for start in (0..m).step_by(EVAL_BATCH) {
        let clips = (start..(start + EVAL_BATCH).min(m))
            .map(|i| video.load_clip(source, i, t, normalization).map(|c| c.data))
            .collect::<Result<Vec<_>>>()?;
        out.extend(model.predict(stack(clips)?)?);
    }
    Ok(out)
}

/// Predicted score of one video and its score distribution.
pub fn video_score(
    model: &mut ViNet,
    source: &dyn SampleSource,
    video: &VideoRef,
    rule: ScoringRule,
    normalization: Normalization,
) -> Result<(usize, ScoreDistribution)> {
    score_from_logits(clip_logits(model, source, video, normalization)?, rule)
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack(items: Vec<Tensor>) -> Result<Tensor> {
    let first = items.first().ok_or_else(|| VinetError::contract("stack", "nothing to stack"))?;
    let shape = first.shape().to_vec();
    if items.iter().any(|t| t.shape() != shape.as_slice()) {
        return Err(VinetError::contract("stack", "shapes differ"));
    }
    let mut full = vec![items.len()];
    full.extend(&shape);
    let mut data = Vec::with_capacity(items.len() * first.numel());
    for t in items {
        data.extend(t.into_data());
    }
    Tensor::new(full, data)
}

/// Ranks starting at 1; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: the Pearson correlation of average ranks.
pub fn evaluate_spearman(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(VinetError::Eval(format!(
            "{} predictions for {} ground-truth values",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.len() < 2 {
        return Err(VinetError::Eval("need at least two values".into()));
    }
    if predictions.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(VinetError::Eval("non-finite value".into()));
    }
    let (rp, rt) = (average_ranks(predictions), average_ranks(truth));
    let n = rp.len() as f64;
    let (mp, mt) = (rp.iter().sum::<f64>() / n, rt.iter().sum::<f64>() / n);
    let (mut cov, mut vp, mut vt) = (0.0, 0.0, 0.0);
    for (a, b) in rp.iter().zip(&rt) {
        cov += (a - mp) * (b - mt);
        vp += (a - mp).powi(2);
        vt += (b - mt).powi(2);
    }
    if vt == 0.0 {
        return Err(VinetError::Eval("ground truth is constant".into()));
    }
    if vp == 0.0 {
        return Err(VinetError::Eval("predictions are constant".into()));
    }
    Ok((cov / (vp * vt).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub sample_id: String,
    pub subject: u32,
    pub view: u32,
    pub truth: usize,
    pub prediction: usize,
}

/// Per-video predictions and their rank correlation with the ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<PredictionRow>,
    /// 0 when every prediction is the same score (see `constant_predictions`).
    pub rho: f64,
    pub constant_predictions: bool,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<PredictionRow>, config: serde_json::Value) -> Result<Self> {
        let pred: Vec<f64> = rows.iter().map(|r| r.prediction as f64).collect();
        let truth: Vec<f64> = rows.iter().map(|r| r.truth as f64).collect();
        let constant = pred.windows(2).all(|w| w[0] == w[1]);
        let rho = if constant {
            log::warn!(
                "all {} predictions are {}; reporting rho = 0",
                pred.len(),
                pred.first().copied().unwrap_or(0.0)
            );
            if truth.windows(2).all(|w| w[0] == w[1]) {
                return Err(VinetError::Eval("ground truth is constant".into()));
            }
            0.0
        } else {
            evaluate_spearman(&pred, &truth)?
        };
        Ok(EvalReport { rows, rho, constant_predictions: constant, config })
    }

    /// Report restricted to rows of one view.
    pub fn for_view(&self, view: u32) -> Result<Self> {
        let rows = self.rows.iter().filter(|r| r.view == view).cloned().collect();
        Self::from_rows(rows, self.config.clone())
    }

    /// One row per video, then a summary row carrying rho in the
    /// prediction column.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| VinetError::Eval(format!("csv: {e}"));
        w.write_record(["sample_id", "subject", "view", "truth", "prediction"]).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.sample_id.clone(),
                r.subject.to_string(),
                r.view.to_string(),
                r.truth.to_string(),
                r.prediction.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.write_record(["spearman_rho", "", "", "", &self.rho.to_string()]).map_err(csv_err)?;
        w.flush().map_err(|e| VinetError::Eval(format!("csv: {e}")))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| VinetError::io(path, e))?;
        self.write_csv(file)
    }
}

/// Scores `videos` in parallel, one model copy per worker; results come back
/// in input order.
pub fn predict_videos(
    model: &ViNet,
    source: &dyn SampleSource,
    videos: &[VideoRef],
    rule: ScoringRule,
    normalization: Normalization,
) -> Result<Vec<(usize, ScoreDistribution)>> {
    videos.par_iter().map_init(|| model.clone(), |m, v| video_score(m, source, v, rule, normalization)).collect()
}

/// Scores every sample in `test` and builds the report.
pub fn evaluate(
    model: &ViNet,
    source: &dyn SampleSource,
    test: &[usize],
    rule: ScoringRule,
    normalization: Normalization,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let videos: Vec<VideoRef> = test.iter().map(|&i| VideoRef::whole(source, i)).collect();
    let scores = predict_videos(model, source, &videos, rule, normalization)?;
    let rows = test
        .iter()
        .zip(scores)
        .map(|(&i, (prediction, _))| {
            let meta = &source.samples()[i];
            PredictionRow {
                sample_id: meta.id(),
                subject: meta.subject_id,
                view: meta.view_id,
                truth: meta.score,
                prediction,
            }
        })
        .collect();
    EvalReport::from_rows(rows, config)
}
