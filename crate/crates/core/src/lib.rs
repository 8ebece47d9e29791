//! View-invariant movement quality assessment from per-joint heatmap
//! sequences.
//!
//! The pipeline turns each joint's stacked heatmaps into a trajectory
//! descriptor, warps it with a learned affine spatial transformer, stacks the
//! descriptors of all joints and scores them with a small CNN classifier. A
//! video's score is the argmax of its clip outputs averaged over clips.

pub mod check;
pub mod data;
pub mod error;
mod init;
pub mod model;
pub mod msm;
pub mod oracle;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod vtdm;

pub use error::{Result, VinetError};
pub use model::{ModelConfig, ViNet};
pub use tensor::{Graph, ParamStore, Tensor, Var};
