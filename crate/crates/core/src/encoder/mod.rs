//! Pre-norm transformer encoder with alternating global/local attention,
//! per-kind rotary embedding bases, a gated GELU feed-forward and a masked
//! language modelling head tied to the input embeddings.

pub mod attention;
mod config;
mod container;
mod model;
mod rope;

pub use attention::{local_attention_mask, reset_score_accounting, score_accounting, AttentionMask, AttentionOp, AttentionSpec, ScoreAccounting};
pub use config::{AttentionKind, EncoderConfig};
pub use container::{read_container, write_container};
pub use model::{attention_layer, attention_layer_with_rope, build_model, mlm_loss, EncoderModel, LayerParams, LAYER_PARAM_NAMES};
pub use rope::rope_apply;

use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("sequence length {len} exceeds max_context {max}")]
    ContextTooLong { len: usize, max: usize },
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
