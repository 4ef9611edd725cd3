use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EncoderError;

/// Which attention pattern a layer uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionKind {
    Global,
    Local,
}

fn default_eps() -> f64 {
    1e-5
}

fn default_init_std() -> f64 {
    0.02
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    /// Width of each of the two feed-forward up-projections.
    pub intermediate: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    /// A layer is global when `(index - global_phase) % global_every == 0`.
    pub global_every: usize,
    #[serde(default)]
    pub global_phase: usize,
    /// Total band width of local layers; a token sees `local_window / 2` on each side.
    pub local_window: usize,
    pub rope_theta_global: f64,
    pub rope_theta_local: f64,
    pub mask_rate: f64,
    #[serde(default = "default_eps")]
    pub norm_eps: f64,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 768,
            layers: 22,
            heads: 12,
            intermediate: 1152,
            vocab_size: 50_280,
            max_context: 8192,
            global_every: 3,
            global_phase: 0,
            local_window: 128,
            rope_theta_global: 160_000.0,
            rope_theta_local: 10_000.0,
            mask_rate: 0.30,
            norm_eps: default_eps(),
            init_std: default_init_std(),
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |msg: String| Err(EncoderError::InvalidConfig(msg));
        if self.hidden == 0 || self.layers == 0 || self.heads == 0 || self.intermediate == 0 || self.vocab_size == 0 {
            return bad("hidden, layers, heads, intermediate and vocab_size must be positive".into());
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden {} is not divisible by heads {}", self.hidden, self.heads));
        }
        if !self.head_dim().is_multiple_of(2) {
            return bad(format!("head_dim {} must be even for rotary embeddings", self.head_dim()));
        }
        if self.global_every == 0 {
            return bad("global_every must be at least 1".into());
        }
        if self.local_window == 0 || !self.local_window.is_multiple_of(2) {
            return bad(format!("local_window {} must be positive and even", self.local_window));
        }
        if self.max_context == 0 {
            return bad("max_context must be at least 1".into());
        }
        if !(self.rope_theta_global > 0.0 && self.rope_theta_local > 0.0) {
            return bad("rope thetas must be positive".into());
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad(format!("mask_rate {} must lie in (0, 1)", self.mask_rate));
        }
        if !(self.norm_eps > 0.0) {
            return bad("norm_eps must be positive".into());
        }
        Ok(())
    }

    pub fn layer_kind(&self, layer: usize) -> AttentionKind {
        if layer >= self.global_phase && (layer - self.global_phase).is_multiple_of(self.global_every) {
            AttentionKind::Global
        } else {
            AttentionKind::Local
        }
    }

    pub fn schedule(&self) -> Vec<AttentionKind> {
        (0..self.layers).map(|i| self.layer_kind(i)).collect()
    }

    pub fn rope_theta(&self, kind: AttentionKind) -> f64 {
        match kind {
            AttentionKind::Global => self.rope_theta_global,
            AttentionKind::Local => self.rope_theta_local,
        }
    }

    pub fn from_json(json: &str) -> Result<Self, EncoderError> {
        let cfg: Self = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
