//! The planner network: per-graph GAT extractors, a parallel cross-attention
//! enhancer and a transformer decoder with separate action and object heads.

mod checkpoint;
mod layers;
mod model;
mod params;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderError;
use crate::graph::{Action, GraphError};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{neighbors_from_edges, sinusoidal_positions, GraphSide};
pub use model::{
    decode, enhance, forward, forward_inputs, gat_extract, predict, prepare_inputs, read_output, register_params, trace_forward,
    ForwardOutput,
    Inputs, TracedOutput,
};
pub use params::{param_shapes, ModelParams};

pub const N_ACT: usize = Action::COUNT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub l_gat: usize,
    pub l_enh: usize,
    pub l_encdec: usize,
    pub k_robot: usize,
    /// Width of the transformer feed-forward blocks.
    pub ff_dim: usize,
    /// Hidden width of both prediction heads.
    pub head_hidden: usize,
    pub dropout: f64,
    pub gat_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 4,
            l_gat: 2,
            l_enh: 3,
            l_encdec: 2,
            k_robot: 32,
            ff_dim: 128,
            head_hidden: 64,
            dropout: 0.0,
            gat_slope: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: String| Err(NetworkError::Config(m));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("d={} must be a positive multiple of heads={}", self.d, self.heads));
        }
        if self.l_gat == 0 || self.l_enh == 0 || self.l_encdec == 0 {
            return bad("layer counts must be at least 1".into());
        }
        if self.k_robot == 0 || self.ff_dim == 0 || self.head_hidden == 0 {
            return bad("k_robot, ff_dim and head_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !self.gat_slope.is_finite() {
            return bad("gat_slope must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("model configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("robot graph has {k} nodes but the action head holds at most {cap}")]
    TooManyRobotNodes { k: usize, cap: usize },
    #[error("scene graph has no nodes")]
    EmptyScene,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}
