use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::{Eager, Graph, Tape, Tensor};
use crate::transtokenizer::EmbeddingMatrix;

use super::attention::{AttentionOp, AttentionSpec};
use super::container::{read_container, write_container};
use super::{AttentionKind, EncoderConfig, EncoderError};

pub const LAYER_PARAM_NAMES: [&str; 11] = [
    "attn_norm.gain",
    "attn_norm.bias",
    "attn.wq",
    "attn.wk",
    "attn.wv",
    "attn.wo",
    "ffn_norm.gain",
    "ffn_norm.bias",
    "ffn.w_gate",
    "ffn.w_up",
    "ffn.w_down",
];

/// Parameters of one pre-norm transformer block. Projections are stored
/// input-major (`[in, out]`) and carry no bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub attn_norm_gain: Tensor,
    pub attn_norm_bias: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ffn_norm_gain: Tensor,
    pub ffn_norm_bias: Tensor,
    pub w_gate: Tensor,
    pub w_up: Tensor,
    pub w_down: Tensor,
}

impl LayerParams {
    fn init(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let (h, f, std) = (cfg.hidden, cfg.intermediate, cfg.init_std);
        Self {
            attn_norm_gain: Tensor::full(&[h], 1.0),
            attn_norm_bias: Tensor::zeros(&[h]),
            wq: Tensor::randn(&[h, h], std, rng),
            wk: Tensor::randn(&[h, h], std, rng),
            wv: Tensor::randn(&[h, h], std, rng),
            wo: Tensor::randn(&[h, h], std, rng),
            ffn_norm_gain: Tensor::full(&[h], 1.0),
            ffn_norm_bias: Tensor::zeros(&[h]),
            w_gate: Tensor::randn(&[h, f], std, rng),
            w_up: Tensor::randn(&[h, f], std, rng),
            w_down: Tensor::randn(&[f, h], std, rng),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 11] {
        [
            &self.attn_norm_gain,
            &self.attn_norm_bias,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.ffn_norm_gain,
            &self.ffn_norm_bias,
            &self.w_gate,
            &self.w_up,
            &self.w_down,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 11] {
        [
            &mut self.attn_norm_gain,
            &mut self.attn_norm_bias,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.ffn_norm_gain,
            &mut self.ffn_norm_bias,
            &mut self.w_gate,
            &mut self.w_up,
            &mut self.w_down,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    config: EncoderConfig,
    schedule: Vec<AttentionKind>,
    /// Token embeddings, also used (tied) as the output projection.
    embeddings: Tensor,
    layers: Vec<LayerParams>,
    final_norm_gain: Tensor,
    final_norm_bias: Tensor,
}

/// Graph handles for every parameter, mirroring [`EncoderModel`].
struct Bound<V> {
    embeddings: V,
    layers: Vec<[V; 11]>,
    final_gain: V,
    final_bias: V,
}

impl<V: Clone> Bound<V> {
    fn all(&self) -> Vec<V> {
        let mut out = vec![self.embeddings.clone()];
        for l in &self.layers {
            out.extend(l.iter().cloned());
        }
        out.push(self.final_gain.clone());
        out.push(self.final_bias.clone());
        out
    }
}

/// Seeded model construction. Embeddings come from `init_emb` when given,
/// otherwise they are drawn like every other weight.
pub fn build_model(config: &EncoderConfig, init_emb: Option<&EmbeddingMatrix>, seed: u64) -> Result<EncoderModel, EncoderError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_emb = Tensor::randn(&[config.vocab_size, config.hidden], config.init_std, &mut rng);
    let layers = (0..config.layers).map(|_| LayerParams::init(config, &mut rng)).collect();
    let embeddings = match init_emb {
        Some(e) => {
            if e.rows() != config.vocab_size || e.dim() != config.hidden {
                return Err(EncoderError::ShapeMismatch(format!(
                    "initial embeddings are {}x{}, config needs {}x{}",
                    e.rows(),
                    e.dim(),
                    config.vocab_size,
                    config.hidden
                )));
            }
            e.to_tensor()
        }
        None => random_emb,
    };
    Ok(EncoderModel {
        schedule: config.schedule(),
        config: config.clone(),
        embeddings,
        layers,
        final_norm_gain: Tensor::full(&[config.hidden], 1.0),
        final_norm_bias: Tensor::zeros(&[config.hidden]),
    })
}

impl EncoderModel {
    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn schedule(&self) -> &[AttentionKind] {
        &self.schedule
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn layer(&self, i: usize) -> &LayerParams {
        &self.layers[i]
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["embeddings".to_string()];
        for i in 0..self.layers.len() {
            names.extend(LAYER_PARAM_NAMES.iter().map(|n| format!("layers.{i}.{n}")));
        }
        names.push("final_norm.gain".into());
        names.push("final_norm.bias".into());
        names
    }

    /// Parameters in canonical order (the order of [`Self::param_names`]).
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embeddings];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out.push(&self.final_norm_gain);
        out.push(&self.final_norm_bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embeddings];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.push(&mut self.final_norm_gain);
        out.push(&mut self.final_norm_bias);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Copy of this model with every parameter replaced, in canonical order.
    pub fn with_params(&self, params: &[Tensor]) -> Result<Self, EncoderError> {
        let mut out = self.clone();
        let slots = out.params_mut();
        if slots.len() != params.len() {
            return Err(EncoderError::ShapeMismatch(format!("expected {} tensors, got {}", slots.len(), params.len())));
        }
        for (slot, p) in slots.into_iter().zip(params) {
            if slot.shape() != p.shape() {
                return Err(EncoderError::ShapeMismatch(format!("{:?} vs {:?}", slot.shape(), p.shape())));
            }
            *slot = p.clone();
        }
        Ok(out)
    }

    /// Replaces the token embeddings (and hence the tied output projection).
    pub fn set_embeddings(&mut self, emb: &EmbeddingMatrix) -> Result<(), EncoderError> {
        if emb.rows() != self.config.vocab_size || emb.dim() != self.config.hidden {
            return Err(EncoderError::ShapeMismatch(format!(
                "embeddings are {}x{}, model needs {}x{}",
                emb.rows(),
                emb.dim(),
                self.config.vocab_size,
                self.config.hidden
            )));
        }
        self.embeddings = emb.to_tensor();
        Ok(())
    }

    /// Copies every non-embedding parameter from `donor`, which must share
    /// this model's architecture apart from vocabulary size.
    pub fn copy_body_from(&mut self, donor: &EncoderModel) -> Result<(), EncoderError> {
        let (a, b) = (&self.config, &donor.config);
        if (a.hidden, a.layers, a.heads, a.intermediate) != (b.hidden, b.layers, b.heads, b.intermediate) {
            return Err(EncoderError::ShapeMismatch("donor model has a different body shape".into()));
        }
        self.layers = donor.layers.clone();
        self.final_norm_gain = donor.final_norm_gain.clone();
        self.final_norm_bias = donor.final_norm_bias.clone();
        Ok(())
    }

    fn check_ids(&self, ids: &[usize], seq_len: usize) -> Result<(), EncoderError> {
        if seq_len == 0 || ids.is_empty() || !ids.len().is_multiple_of(seq_len) {
            return Err(EncoderError::InvalidInput(format!("{} ids do not form sequences of length {seq_len}", ids.len())));
        }
        if seq_len > self.config.max_context {
            return Err(EncoderError::ContextTooLong { len: seq_len, max: self.config.max_context });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(EncoderError::TokenOutOfRange { id, vocab: self.config.vocab_size });
        }
        Ok(())
    }

    fn bind<'p, G: Graph<'p>>(&'p self, g: &mut G) -> Bound<G::Value> {
        let embeddings = g.param(&self.embeddings);
        let layers = self.layers.iter().map(|l| l.tensors().map(|t| g.param(t))).collect();
        let final_gain = g.param(&self.final_norm_gain);
        let final_bias = g.param(&self.final_norm_bias);
        Bound { embeddings, layers, final_gain, final_bias }
    }

    fn attention_spec(&self, kind: AttentionKind, seq_len: usize, rope: bool) -> AttentionSpec {
        AttentionSpec {
            seq_len,
            heads: self.config.heads,
            rope_theta: rope.then(|| self.config.rope_theta(kind)),
            window: match kind {
                AttentionKind::Global => None,
                AttentionKind::Local => Some(self.config.local_window),
            },
        }
    }

    fn attention_block<'p, G: Graph<'p>>(
        &self,
        g: &mut G,
        x: &G::Value,
        p: &[G::Value; 11],
        spec: AttentionSpec,
    ) -> Result<G::Value, EncoderError> {
        let eps = self.config.norm_eps;
        let h = g.layer_norm(x, &p[0], &p[1], eps)?;
        let q = g.matmul(&h, &p[2])?;
        let k = g.matmul(&h, &p[3])?;
        let v = g.matmul(&h, &p[4])?;
        let a = g.custom(&[&q, &k, &v], Box::new(AttentionOp::new(spec)))?;
        let o = g.matmul(&a, &p[5])?;
        Ok(g.add(x, &o)?)
    }

    fn ffn_block<'p, G: Graph<'p>>(&self, g: &mut G, x: &G::Value, p: &[G::Value; 11]) -> Result<G::Value, EncoderError> {
        let h = g.layer_norm(x, &p[6], &p[7], self.config.norm_eps)?;
        let gate = g.matmul(&h, &p[8])?;
        let gate = g.gelu(&gate);
        let up = g.matmul(&h, &p[9])?;
        let f = g.mul(&gate, &up)?;
        let down = g.matmul(&f, &p[10])?;
        Ok(g.add(x, &down)?)
    }

    /// Final normalized hidden states for `ids` (consecutive length-`seq_len` sequences).
    fn encode<'p, G: Graph<'p>>(
        &'p self,
        g: &mut G,
        bound: &Bound<G::Value>,
        ids: &[usize],
        seq_len: usize,
    ) -> Result<G::Value, EncoderError> {
        self.check_ids(ids, seq_len)?;
        let mut x = g.gather_rows(&bound.embeddings, ids)?;
        for (i, p) in bound.layers.iter().enumerate() {
            let spec = self.attention_spec(self.schedule[i], seq_len, true);
            x = self.attention_block(g, &x, p, spec)?;
            x = self.ffn_block(g, &x, p)?;
        }
        Ok(g.layer_norm(&x, &bound.final_gain, &bound.final_bias, self.config.norm_eps)?)
    }

    /// Vocabulary logits `[len, vocab_size]` for one sequence.
    pub fn forward(&self, ids: &[usize]) -> Result<Tensor, EncoderError> {
        self.forward_batch(ids, ids.len())
    }

    /// Logits for `ids` holding consecutive sequences of length `seq_len`.
    pub fn forward_batch(&self, ids: &[usize], seq_len: usize) -> Result<Tensor, EncoderError> {
        let mut g = Eager;
        let bound = self.bind(&mut g);
        let h = self.encode(&mut g, &bound, ids, seq_len)?;
        Ok(g.matmul_nt(&h, &bound.embeddings)?.into_owned())
    }

    /// Final normalized hidden states `[len, hidden]` for one sequence.
    pub fn hidden_states(&self, ids: &[usize]) -> Result<Tensor, EncoderError> {
        let mut g = Eager;
        let bound = self.bind(&mut g);
        Ok(self.encode(&mut g, &bound, ids, ids.len())?.into_owned())
    }

    /// Mean masked-token cross-entropy without gradients.
    pub fn mlm_loss_batch(&self, ids: &[usize], labels: &[Option<usize>], seq_len: usize) -> Result<f64, EncoderError> {
        let logits = self.forward_batch(ids, seq_len)?;
        mlm_loss(&logits, labels)
    }

    /// Loss and gradients for every parameter, in canonical order.
    pub fn mlm_loss_and_grads(
        &self,
        ids: &[usize],
        labels: &[Option<usize>],
        seq_len: usize,
    ) -> Result<(f64, Vec<Tensor>), EncoderError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let h = self.encode(&mut tape, &bound, ids, seq_len)?;
        let logits = tape.matmul_nt(&h, &bound.embeddings)?;
        let loss = tape.cross_entropy(&logits, labels)?;
        let value = tape.value(&loss).item();
        let mut grads = tape.backward(loss)?;
        let out = bound
            .all()
            .into_iter()
            .zip(self.params())
            .map(|(v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok((value, out))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_bytes_with(&[])
    }

    /// Container bytes with additional named tensors appended after the parameters.
    pub fn to_bytes_with(&self, extra: &[(String, Tensor)]) -> Vec<u8> {
        let names = self.param_names();
        let params = self.params();
        let tensors = names.iter().map(String::as_str).zip(params).chain(extra.iter().map(|(n, t)| (n.as_str(), t)));
        write_container(&self.config.to_json(), tensors)
    }

    /// Parses a container; tensors that are not model parameters are returned alongside.
    pub fn from_bytes_with_extra(bytes: &[u8]) -> Result<(Self, Vec<(String, Tensor)>), EncoderError> {
        let (json, tensors) = read_container(bytes)?;
        let config = EncoderConfig::from_json(&json)?;
        let mut model = build_model(&config, None, 0)?;
        let names = model.param_names();
        let mut by_name: HashMap<String, Tensor> = HashMap::new();
        let mut extra = Vec::new();
        for (n, t) in tensors {
            if names.contains(&n) {
                by_name.insert(n, t);
            } else {
                extra.push((n, t));
            }
        }
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let t = by_name.remove(name).ok_or_else(|| EncoderError::Format(format!("missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(EncoderError::Format(format!("tensor {name} has shape {:?}, expected {:?}", t.shape(), slot.shape())));
            }
            *slot = t;
        }
        Ok((model, extra))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EncoderError> {
        Self::from_bytes_with_extra(bytes).map(|(m, _)| m)
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Mean cross-entropy over positions with a label.
pub fn mlm_loss(logits: &Tensor, labels: &[Option<usize>]) -> Result<f64, EncoderError> {
    let mut g = Eager;
    let l = g.input(logits.clone());
    Ok(g.cross_entropy(&l, labels)?.item())
}

/// One attention sub-block (pre-norm, projections, attention, output
/// projection, residual) on a single sequence `x: [len, hidden]`.
pub fn attention_layer(x: &Tensor, params: &LayerParams, kind: AttentionKind, config: &EncoderConfig) -> Result<Tensor, EncoderError> {
    attention_layer_with_rope(x, params, kind, config, true)
}

/// As [`attention_layer`], with rotary embeddings optionally disabled.
pub fn attention_layer_with_rope(
    x: &Tensor,
    params: &LayerParams,
    kind: AttentionKind,
    config: &EncoderConfig,
    rope: bool,
) -> Result<Tensor, EncoderError> {
    config.validate()?;
    if x.rank() != 2 || x.shape()[1] != config.hidden {
        return Err(EncoderError::ShapeMismatch(format!("hidden states {:?}, hidden {}", x.shape(), config.hidden)));
    }
    let n = x.shape()[0];
    if n > config.max_context {
        return Err(EncoderError::ContextTooLong { len: n, max: config.max_context });
    }
    let holder = EncoderModel {
        config: config.clone(),
        schedule: config.schedule(),
        embeddings: Tensor::zeros(&[0, config.hidden]),
        layers: Vec::new(),
        final_norm_gain: Tensor::zeros(&[0]),
        final_norm_bias: Tensor::zeros(&[0]),
    };
    let mut g = Eager;
    let p = params.tensors().map(|t| g.param(t));
    let xv = g.input(x.clone());
    let spec = holder.attention_spec(kind, n, rope);
    Ok(holder.attention_block(&mut g, &xv, &p, spec)?.into_owned())
}
