//! View-invariant trajectory descriptors.
//!
//! For every joint, the `T` stacked heatmaps of a clip are collapsed into a
//! single map by one shared 3×3 convolution (the trajectory descriptor). A
//! shared localisation network regresses a 2×2 affine matrix from each
//! descriptor, and the descriptor is resampled through that matrix. The
//! resampled maps of all joints are stacked channel-wise.

mod localisation;
mod sampler;

pub use localisation::{loc_feature_side, Localisation, LOC_FILTERS, LOC_HIDDEN, LOC_KERNEL};
pub use sampler::{affine_grid, base_coord, bilinear_sample, AffineParams, SamplingGrid};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VinetError};
use crate::init::he_uniform;
use crate::tensor::{conv2d_forward, BatchNormMode, Graph, ParamId, ParamStore, StatsId, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VtdmConfig {
    pub joints: usize,
    pub clip_len: usize,
    pub height: usize,
    pub width: usize,
    /// Resample descriptors through the learned affine transform. Off gives
    /// the "without STN" ablation: the localisation network is bypassed and
    /// its parameters are frozen.
    pub stn: bool,
    /// Batch norm + ReLU after the temporal aggregation convolution.
    pub descriptor_norm: bool,
}

impl Default for VtdmConfig {
    fn default() -> Self {
        VtdmConfig { joints: 15, clip_len: 16, height: 64, width: 64, stn: true, descriptor_norm: true }
    }
}

/// `Λ = J * Φ`: one joint's `T×H×W` heatmap stack convolved with a
/// `1×T×3×3` filter at stride 1, padding 1. Returns the `H×W` map.
pub fn trajectory_descriptor(joint_heatmaps: &Tensor, phi: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (&[t, ..], &[1, tc, 3, 3]) = (joint_heatmaps.shape(), phi.shape()) else {
        return Err(VinetError::contract(
            "trajectory_descriptor",
            format!("phi must be 1×T×3×3, got {:?}", phi.shape()),
        ));
    };
    if joint_heatmaps.ndim() != 3 || t != tc {
        return Err(VinetError::contract(
            "trajectory_descriptor",
            format!("heatmaps {:?} do not match phi with {tc} channels", joint_heatmaps.shape()),
        ));
    }
    let out = conv2d_forward(joint_heatmaps, phi, bias, 1, 1)?;
    let (h, w) = (out.shape()[1], out.shape()[2]);
    out.reshape(&[h, w])
}

#[derive(Clone, Debug)]
pub struct Vtdm {
    pub config: VtdmConfig,
    phi_w: ParamId,
    phi_b: ParamId,
    norm: Option<(ParamId, ParamId, StatsId)>,
    pub localisation: Localisation,
}

/// Intermediate values of one forward pass, kept for inspection.
pub struct VtdmOutput {
    /// `[B, J, H, W]` stacked descriptors fed to the scorer.
    pub stacked: Var,
    /// `[B·J, 4]` affine parameters, present when the transformer is on.
    pub theta: Option<Var>,
    /// `[B·J, 1, H, W]` descriptors before resampling.
    pub descriptors: Var,
}

impl Vtdm {
    pub fn new(store: &mut ParamStore, config: VtdmConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if config.joints == 0 || config.clip_len == 0 {
            return Err(VinetError::Config("joints and clip length must be positive".into()));
        }
        let t = config.clip_len;
        let phi_w = store.add("vtdm.phi.weight", he_uniform(&[1, t, 3, 3], t * 9, rng))?;
        let phi_b = store.add("vtdm.phi.bias", Tensor::zeros(&[1]))?;
        let norm = if config.descriptor_norm {
            Some((
                store.add("vtdm.bn.gamma", Tensor::ones(&[1]))?,
                store.add("vtdm.bn.beta", Tensor::zeros(&[1]))?,
                store.add_stats("vtdm.bn.running", 1)?,
            ))
        } else {
            None
        };
        let localisation = Localisation::new(store, "vtdm.loc", config.height, config.width, rng)?;
        if !config.stn {
            store.set_trainable("vtdm.loc.", false);
        }
        Ok(Vtdm { config, phi_w, phi_b, norm, localisation })
    }

    pub fn phi_ids(&self) -> (ParamId, ParamId) {
        (self.phi_w, self.phi_b)
    }

    /// `clips: [B·J, T, H, W]` (joint-major within each clip).
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &mut ParamStore,
        clips: Var,
        mode: BatchNormMode,
    ) -> Result<VtdmOutput> {
        let c = &self.config;
        let shape = g.shape(clips).to_vec();
        if shape.len() != 4
            || shape[1] != c.clip_len
            || shape[2] != c.height
            || shape[3] != c.width
            || shape[0] % c.joints != 0
        {
            return Err(VinetError::contract(
                "vtdm_forward",
                format!("expected [B·{}, {}, {}, {}], got {shape:?}", c.joints, c.clip_len, c.height, c.width),
            ));
        }
        let batch = shape[0] / c.joints;
        let (w, b) = (g.param(store, self.phi_w), g.param(store, self.phi_b));
        let mut lam = g.conv2d(clips, w, Some(b), 1, 1)?;
        if let Some((gamma, beta, stats)) = self.norm {
            let (gm, bt) = (g.param(store, gamma), g.param(store, beta));
            lam = g.batchnorm2d(lam, gm, bt, store.stats_mut(stats), mode)?;
            lam = g.relu(lam);
        }
        let descriptors = lam;
        let mut theta = None;
        if c.stn {
            let th = self.localisation.forward(g, store, lam)?;
            let grid = g.affine_grid(th, c.height, c.width)?;
            lam = g.bilinear_sample(lam, grid)?;
            theta = Some(th);
        }
        let stacked = g.reshape(lam, &[batch, c.joints, c.height, c.width])?;
        Ok(VtdmOutput { stacked, theta, descriptors })
    }
}

#[cfg(test)]
mod tests;
