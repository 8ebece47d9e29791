use rand_chacha::ChaCha8Rng;

use super::AffineParams;
use crate::error::{Result, VinetError};
use crate::init::he_uniform;
use crate::tensor::{window_out, Graph, ParamId, ParamStore, Tensor, Var};

pub const LOC_FILTERS: usize = 10;
pub const LOC_KERNEL: usize = 5;
pub const LOC_HIDDEN: usize = 32;

/// Spatial side after `conv5 -> pool2 -> conv5 -> pool2` (valid convolutions).
pub fn loc_feature_side(side: usize) -> Option<usize> {
    let s1 = side.checked_sub(LOC_KERNEL - 1)?;
    if s1 < 2 {
        return None;
    }
    let s2 = window_out(s1, 2, 2, 0).checked_sub(LOC_KERNEL - 1)?;
    if s2 < 2 {
        return None;
    }
    Some(window_out(s2, 2, 2, 0))
}

/// The localisation regressor: conv(5×5, 10) · maxpool 2 · ReLU ·
/// conv(5×5, 10) · maxpool 2 · ReLU · FC(32) · ReLU · FC(4).
#[derive(Clone, Debug)]
pub struct Localisation {
    pub height: usize,
    pub width: usize,
    conv1_w: ParamId,
    conv1_b: ParamId,
    conv2_w: ParamId,
    conv2_b: ParamId,
    fc1_w: ParamId,
    fc1_b: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
}

impl Localisation {
    /// FC input length for an `height×width` descriptor.
    pub fn fc_input_len(height: usize, width: usize) -> Option<usize> {
        Some(LOC_FILTERS * loc_feature_side(height)? * loc_feature_side(width)?)
    }

    /// Registers parameters under `prefix`. The last layer starts at zero
    /// weights and identity bias so the initial transform is the identity.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        height: usize,
        width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fc_in = Self::fc_input_len(height, width).ok_or_else(|| {
            VinetError::Config(format!("descriptor {height}×{width} too small for the localisation network"))
        })?;
        let k2 = LOC_KERNEL * LOC_KERNEL;
        let mut add = |name: &str, t: Tensor| store.add(format!("{prefix}.{name}"), t);
        Ok(Localisation {
            height,
            width,
            conv1_w: add("conv1.weight", he_uniform(&[LOC_FILTERS, 1, LOC_KERNEL, LOC_KERNEL], k2, rng))?,
            conv1_b: add("conv1.bias", Tensor::zeros(&[LOC_FILTERS]))?,
            conv2_w: add(
                "conv2.weight",
                he_uniform(&[LOC_FILTERS, LOC_FILTERS, LOC_KERNEL, LOC_KERNEL], LOC_FILTERS * k2, rng),
            )?,
            conv2_b: add("conv2.bias", Tensor::zeros(&[LOC_FILTERS]))?,
            fc1_w: add("fc1.weight", he_uniform(&[LOC_HIDDEN, fc_in], fc_in, rng))?,
            fc1_b: add("fc1.bias", Tensor::zeros(&[LOC_HIDDEN]))?,
            fc2_w: add("fc2.weight", Tensor::zeros(&[4, LOC_HIDDEN]))?,
            fc2_b: add("fc2.bias", Tensor::from_vec(AffineParams::IDENTITY.0.to_vec()))?,
        })
    }

    pub fn param_ids(&self) -> [ParamId; 8] {
        [self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b, self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b]
    }

    /// `descriptors: [N, 1, H, W]` -> `theta: [N, 4]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, descriptors: Var) -> Result<Var> {
        let shape = g.shape(descriptors).to_vec();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != self.height || shape[3] != self.width {
            return Err(VinetError::contract(
                "localisation_forward",
                format!("expected [N, 1, {}, {}], got {shape:?}", self.height, self.width),
            ));
        }
        let n = shape[0];
        let p = |g: &mut Graph, id| g.param(store, id);

        let (w, b) = (p(g, self.conv1_w), p(g, self.conv1_b));
        let x = g.conv2d(descriptors, w, Some(b), 1, 0)?;
        let x = g.maxpool2d(x, 2, 2)?;
        let x = g.relu(x);

        let (w, b) = (p(g, self.conv2_w), p(g, self.conv2_b));
        let x = g.conv2d(x, w, Some(b), 1, 0)?;
        let x = g.maxpool2d(x, 2, 2)?;
        let x = g.relu(x);

        let flat = g.shape(x)[1..].iter().product::<usize>();
        let x = g.reshape(x, &[n, flat])?;
        let (w, b) = (p(g, self.fc1_w), p(g, self.fc1_b));
        let x = g.linear(x, w, b)?;
        let x = g.relu(x);
        let (w, b) = (p(g, self.fc2_w), p(g, self.fc2_b));
        g.linear(x, w, b)
    }
}
