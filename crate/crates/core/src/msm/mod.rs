//! Movement score module: a configurable CNN whose first layer takes one
//! channel per joint and whose last layer has one output per score class.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VinetError};
use crate::init::{fan_in_uniform, he_uniform};
use crate::tensor::{window_out, BatchNormMode, Graph, ParamId, ParamStore, StatsId, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneStyle {
    /// 3×3 stem with BN + ReLU, then conv/BN/ReLU stages each closed by a 2×2 max-pool.
    VggLike,
    /// 7×7 stride-2 stem, 3×3 stride-2 max-pool, ReLU; stages downsample by stride.
    ResnextLike,
    /// Narrow VGG-like stack with a pooled stem, sized for desk-scale training.
    Tiny,
}

impl std::str::FromStr for BackboneStyle {
    type Err = VinetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vgg-like" | "vgg" => Ok(BackboneStyle::VggLike),
            "resnext-like" | "resnext" => Ok(BackboneStyle::ResnextLike),
            "tiny" => Ok(BackboneStyle::Tiny),
            other => Err(VinetError::Config(format!("unknown backbone style {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub width: usize,
    pub depth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerConfig {
    pub style: BackboneStyle,
    /// Number of joints `J`.
    pub input_channels: usize,
    /// `S + 1`.
    pub num_classes: usize,
    pub stem_width: usize,
    pub stages: Vec<StageConfig>,
    /// Channel groups of the stage convolutions (resnext-like only).
    #[serde(default = "one")]
    pub groups: usize,
}

fn one() -> usize {
    1
}

impl ScorerConfig {
    pub fn tiny(joints: usize, max_score: usize) -> Self {
        ScorerConfig {
            style: BackboneStyle::Tiny,
            input_channels: joints,
            num_classes: max_score + 1,
            stem_width: 16,
            stages: vec![StageConfig { width: 32, depth: 1 }, StageConfig { width: 32, depth: 1 }],
            groups: 1,
        }
    }

    pub fn vgg_like(joints: usize, max_score: usize) -> Self {
        ScorerConfig {
            style: BackboneStyle::VggLike,
            input_channels: joints,
            num_classes: max_score + 1,
            stem_width: 64,
            stages: vec![StageConfig { width: 64, depth: 2 }, StageConfig { width: 128, depth: 2 }],
            groups: 1,
        }
    }

    pub fn resnext_like(joints: usize, max_score: usize) -> Self {
        ScorerConfig {
            style: BackboneStyle::ResnextLike,
            input_channels: joints,
            num_classes: max_score + 1,
            stem_width: 64,
            stages: vec![StageConfig { width: 64, depth: 1 }, StageConfig { width: 128, depth: 1 }],
            groups: 1,
        }
    }

    pub fn for_style(style: BackboneStyle, joints: usize, max_score: usize) -> Self {
        match style {
            BackboneStyle::Tiny => Self::tiny(joints, max_score),
            BackboneStyle::VggLike => Self::vgg_like(joints, max_score),
            BackboneStyle::ResnextLike => Self::resnext_like(joints, max_score),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(VinetError::Config(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        if self.input_channels == 0 || self.stem_width == 0 {
            return Err(VinetError::Config("input channels and stem width must be positive".into()));
        }
        if self.stages.iter().any(|s| s.width == 0 || s.depth == 0) {
            return Err(VinetError::Config("stage width and depth must be positive".into()));
        }
        if self.groups == 0 || (self.groups > 1 && self.style != BackboneStyle::ResnextLike) {
            return Err(VinetError::Config("groups > 1 is only available for resnext-like".into()));
        }
        if self.groups > 1 {
            let mut prev = self.stem_width;
            for s in &self.stages {
                if prev % self.groups != 0 || s.width % self.groups != 0 {
                    return Err(VinetError::Config(format!(
                        "stage widths must be divisible by groups={}",
                        self.groups
                    )));
                }
                prev = s.width;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Conv {
        name: String,
        weight: ParamId,
        bias: Option<ParamId>,
        out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        groups: usize,
    },
    BatchNorm {
        gamma: ParamId,
        beta: ParamId,
        stats: StatsId,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
}

/// Output shape (`C, H, W`) after a named layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub layer: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Scorer {
    pub config: ScorerConfig,
    layers: Vec<Layer>,
    head_w: ParamId,
    head_b: ParamId,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    layers: Vec<Layer>,
    channels: usize,
}

impl Builder<'_> {
    fn conv(
        &mut self,
        name: &str,
        out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        bias: bool,
    ) -> Result<()> {
        let cin = self.channels / groups;
        let weight = self.store.add(format!("{name}.weight"), he_uniform(&[out, cin, k, k], cin * k * k, self.rng))?;
        let bias = if bias { Some(self.store.add(format!("{name}.bias"), Tensor::zeros(&[out]))?) } else { None };
        self.layers.push(Layer::Conv { name: name.to_string(), weight, bias, out, kernel: k, stride, pad, groups });
        self.channels = out;
        Ok(())
    }

    fn bn(&mut self, name: &str) -> Result<()> {
        let c = self.channels;
        let gamma = self.store.add(format!("{name}.gamma"), Tensor::ones(&[c]))?;
        let beta = self.store.add(format!("{name}.beta"), Tensor::zeros(&[c]))?;
        let stats = self.store.add_stats(format!("{name}.running"), c)?;
        self.layers.push(Layer::BatchNorm { gamma, beta, stats });
        Ok(())
    }
}

impl Scorer {
    /// Registers all parameters under `msm.` in `store`.
    pub fn new(store: &mut ParamStore, config: ScorerConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut b = Builder { store, rng, layers: Vec::new(), channels: config.input_channels };
        let stem = config.stem_width;
        match config.style {
            BackboneStyle::VggLike | BackboneStyle::Tiny => {
                b.conv("msm.stem.conv", stem, 3, 1, 1, 1, false)?;
                b.bn("msm.stem.bn")?;
                b.layers.push(Layer::Relu);
                if config.style == BackboneStyle::Tiny {
                    b.layers.push(Layer::MaxPool { window: 2, stride: 2 });
                }
                for (i, s) in config.stages.iter().enumerate() {
                    for d in 0..s.depth {
                        b.conv(&format!("msm.stage{i}.conv{d}"), s.width, 3, 1, 1, 1, false)?;
                        b.bn(&format!("msm.stage{i}.bn{d}"))?;
                        b.layers.push(Layer::Relu);
                    }
                    b.layers.push(Layer::MaxPool { window: 2, stride: 2 });
                }
            }
            BackboneStyle::ResnextLike => {
                b.conv("msm.stem.conv", stem, 7, 2, 3, 1, true)?;
                b.layers.push(Layer::MaxPool { window: 3, stride: 2 });
                b.layers.push(Layer::Relu);
                for (i, s) in config.stages.iter().enumerate() {
                    for d in 0..s.depth {
                        let stride = if i > 0 && d == 0 { 2 } else { 1 };
                        let groups = if b.channels % config.groups == 0 { config.groups } else { 1 };
                        b.conv(&format!("msm.stage{i}.conv{d}"), s.width, 3, stride, 1, groups, false)?;
                        b.bn(&format!("msm.stage{i}.bn{d}"))?;
                        b.layers.push(Layer::Relu);
                    }
                }
            }
        }
        let c = b.channels;
        let head_w = b.store.add("msm.head.weight", fan_in_uniform(&[config.num_classes, c], c, b.rng))?;
        let head_b = b.store.add("msm.head.bias", Tensor::zeros(&[config.num_classes]))?;
        Ok(Scorer { config, layers: b.layers, head_w, head_b })
    }

    pub fn first_layer_weight(&self) -> ParamId {
        match &self.layers[0] {
            Layer::Conv { weight, .. } => *weight,
            _ => unreachable!("first layer is always a convolution"),
        }
    }

    /// Output shape after every convolution, pooling and the head, for an
    /// `H×W` input.
    pub fn layer_shapes(&self, height: usize, width: usize) -> Result<Vec<LayerShape>> {
        let mut shape = [self.config.input_channels, height, width];
        let mut out = Vec::new();
        let mut pools = 0;
        for layer in &self.layers {
            match layer {
                Layer::Conv { name, out: c_out, kernel: k, stride, pad, .. } => {
                    if shape[1] + 2 * pad < *k || shape[2] + 2 * pad < *k {
                        return Err(VinetError::Config(format!("input too small at {name}")));
                    }
                    shape = [*c_out, window_out(shape[1], *k, *stride, *pad), window_out(shape[2], *k, *stride, *pad)];
                    out.push(LayerShape { layer: name.clone(), shape: shape.to_vec() });
                }
                Layer::MaxPool { window, stride } => {
                    if shape[1] < *window || shape[2] < *window {
                        return Err(VinetError::Config(format!("input too small at pool{pools}")));
                    }
                    shape = [
                        shape[0],
                        window_out(shape[1], *window, *stride, 0),
                        window_out(shape[2], *window, *stride, 0),
                    ];
                    out.push(LayerShape { layer: format!("pool{pools}"), shape: shape.to_vec() });
                    pools += 1;
                }
                Layer::BatchNorm { .. } | Layer::Relu => {}
            }
        }
        out.push(LayerShape { layer: "gap".into(), shape: vec![shape[0]] });
        out.push(LayerShape { layer: "head".into(), shape: vec![self.config.num_classes] });
        Ok(out)
    }

    /// `descriptors: [B, J, H, W]` -> raw logits `[B, S+1]` (no softmax).
    pub fn forward(&self, g: &mut Graph, store: &mut ParamStore, descriptors: Var, mode: BatchNormMode) -> Result<Var> {
        let shape = g.shape(descriptors).to_vec();
        if shape.len() != 4 || shape[1] != self.config.input_channels {
            return Err(VinetError::contract(
                "msm_forward",
                format!("expected [B, {}, H, W], got {shape:?}", self.config.input_channels),
            ));
        }
        let mut x = descriptors;
        for layer in &self.layers {
            x = match layer {
                Layer::Conv { weight, bias, stride, pad, groups, .. } => {
                    let w = g.param(store, *weight);
                    let b = bias.map(|b| g.param(store, b));
                    g.conv2d_grouped(x, w, b, *stride, *pad, *groups)?
                }
                Layer::BatchNorm { gamma, beta, stats, .. } => {
                    let (gm, bt) = (g.param(store, *gamma), g.param(store, *beta));
                    g.batchnorm2d(x, gm, bt, store.stats_mut(*stats), mode)?
                }
                Layer::Relu => g.relu(x),
                Layer::MaxPool { window, stride } => g.maxpool2d(x, *window, *stride)?,
            };
        }
        let pooled = g.global_avg_pool(x)?;
        let (w, b) = (g.param(store, self.head_w), g.param(store, self.head_b));
        g.linear(pooled, w, b)
    }
}

/// Per-clip logits and their mean over the clips of one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub clip_logits: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

#[cfg(test)]
mod tests;
