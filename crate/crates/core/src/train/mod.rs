//! Clip-level training, video-level scoring and the evaluation protocol.

mod augment;
mod experiment;
mod score;
mod split;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{ActionConfig, Normalization, SampleSource, VideoRef};
use crate::error::{Result, VinetError};
use crate::model::{ModelConfig, ViNet};
use crate::msm::{BackboneStyle, ScorerConfig};
use crate::seed::{child_rng, child_seed};
use crate::tensor::{sgd_step, BatchNormMode, Graph};
use crate::vtdm::VtdmConfig;

pub use augment::{augment_temporal_crop, balance_plan, balancing_crops, crop_range};
pub use experiment::{run_grid, run_split, write_grid_csv, GridRow, SplitOutcome};
pub use score::{
    argmax, average_ranks, clip_logits, evaluate, evaluate_spearman, predict_videos, score_from_logits, stack,
    video_score, EvalReport, PredictionRow, ScoringRule,
};
pub use split::{make_splits, SplitKind, SplitPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub stn_enabled: bool,
    pub action: ActionConfig,
    pub backbone: BackboneStyle,
    pub descriptor_norm: bool,
    pub normalization: Normalization,
    /// Add temporal crops so every score is as frequent as the most common one.
    pub balance: bool,
    pub scoring: ScoringRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: 0.001,
            batch_size: 5,
            seed: 0,
            stn_enabled: true,
            action: ActionConfig::default(),
            backbone: BackboneStyle::Tiny,
            descriptor_norm: true,
            normalization: Normalization::Clip,
            balance: true,
            scoring: ScoringRule::MeanLogits,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.action.validate()?;
        if self.batch_size == 0 {
            return Err(VinetError::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(VinetError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }

    /// Network configuration for inputs of `joints` heatmaps at `height×width`.
    pub fn model_config(&self, joints: usize, height: usize, width: usize) -> ModelConfig {
        ModelConfig {
            vtdm: VtdmConfig {
                joints,
                clip_len: self.action.clip_len,
                height,
                width,
                stn: self.stn_enabled,
                descriptor_norm: self.descriptor_norm,
            },
            scorer: ScorerConfig::for_style(self.backbone, joints, self.action.max_score),
        }
    }

    pub fn model_seed(&self) -> u64 {
        child_seed(self.seed, &[0])
    }
}

/// Trained model and the mean per-clip loss of every epoch.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ViNet,
    pub epoch_losses: Vec<f64>,
    pub clips_per_epoch: usize,
}

/// Videos seen during training: the originals plus any balancing crops.
pub fn training_videos(source: &dyn SampleSource, train: &[usize], config: &TrainConfig) -> Vec<VideoRef> {
    let mut videos: Vec<VideoRef> = train.iter().map(|&i| VideoRef::whole(source, i)).collect();
    if config.balance {
        videos.extend(balancing_crops(source, train, config.action.clip_len, child_seed(config.seed, &[1])));
    }
    videos
}

/// Trains a freshly built model on the clips of `train`.
pub fn train(source: &dyn SampleSource, train: &[usize], config: &TrainConfig) -> Result<TrainOutcome> {
    let (joints, h, w) = source.dims();
    let model = ViNet::build(config.model_config(joints, h, w), config.model_seed())?;
    train_model(model, source, train, config, |_, _| {})
}

/// Runs the training loop on `model`. Each epoch visits every clip of every
/// training video once in a seeded random order, in batches of
/// `batch_size`; `on_epoch` receives the epoch index and its mean loss.
pub fn train_model(
    mut model: ViNet,
    source: &dyn SampleSource,
    train: &[usize],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(VinetError::Config("training side is empty".into()));
    }
    let t = config.action.clip_len;
    if let Some(&i) = train.iter().find(|&&i| source.samples()[i].score > config.action.max_score) {
        return Err(VinetError::Config(format!(
            "sample {} has score {} above max {}",
            source.samples()[i].path,
            source.samples()[i].score,
            config.action.max_score
        )));
    }
    let videos = training_videos(source, train, config);
    let mut clips: Vec<(usize, usize)> = Vec::new();
    for (vi, v) in videos.iter().enumerate() {
        if v.clip_count(t) == 0 {
            return Err(VinetError::SequenceTooShort { frames: v.frames, clip_len: t });
        }
        clips.extend((0..v.clip_count(t)).map(|m| (vi, m)));
    }

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut order = clips.clone();
        order.shuffle(&mut child_rng(config.seed, &[2, epoch as u64]));
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let data = batch
                .iter()
                .map(|&(vi, m)| videos[vi].load_clip(source, m, t, config.normalization).map(|c| c.data))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = batch.iter().map(|&(vi, _)| source.samples()[videos[vi].sample].score).collect();
            let mut g = Graph::new();
            let logits = model.forward(&mut g, stack(data)?, BatchNormMode::Train)?;
            let loss = g.softmax_cross_entropy(logits, &labels)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(VinetError::Eval(format!("loss diverged in epoch {epoch}")));
            }
            total += value * batch.len() as f64;
            g.backward_into(loss, &mut model.store)?;
            sgd_step(&mut model.store, config.lr)?;
        }
        let mean = total / order.len() as f64;
        log::info!("epoch {epoch}: loss {mean:.5} ({:.1}s)", started.elapsed().as_secs_f64());
        on_epoch(epoch, mean);
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome { model, epoch_losses, clips_per_epoch: clips.len() })
}
