//! Masked-language-model pretraining: corruption, AdamW, and the two-stage
//! short-then-long context schedule with bitwise-resumable checkpoints.
//!
//! Every random draw is a pure function of `(seed, stage, step)`, so a run
//! resumed from a checkpoint replays exactly the batches and masks of an
//! uninterrupted run.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderError, EncoderModel};
use crate::numerics::Tensor;
use crate::tokenizer::SpecialIds;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("corpus has {tokens} tokens, fewer than one context of {context}")]
    CorpusTooShort { tokens: usize, context: usize },
    #[error("non-finite loss {loss} at step {step} (stage {stage})")]
    NonFiniteLoss { step: usize, stage: u8, loss: f64 },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Corruption applied to selected positions; fractions sum to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSplit {
    pub mask_token: f64,
    pub random_token: f64,
    pub keep: f64,
}

impl Default for MaskSplit {
    fn default() -> Self {
        Self { mask_token: 0.8, random_token: 0.1, keep: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mask_rate: f64,
    pub split: MaskSplit,
    /// Sequences per optimizer step.
    pub batch_size: usize,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub stage1_context: usize,
    pub stage2_context: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// `None` warms up over the first 10% of all steps.
    pub warmup_steps: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.30,
            split: MaskSplit::default(),
            batch_size: 8,
            stage1_steps: 200,
            stage2_steps: 50,
            stage1_context: 64,
            stage2_context: 256,
            learning_rate: 3e-4,
            weight_decay: 0.01,
            warmup_steps: None,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad(format!("mask_rate {} must lie in (0, 1)", self.mask_rate));
        }
        let s = self.split;
        if [s.mask_token, s.random_token, s.keep].iter().any(|f| !(0.0..=1.0).contains(f))
            || (s.mask_token + s.random_token + s.keep - 1.0).abs() > 1e-9
        {
            return bad(format!("mask split {s:?} must be fractions summing to 1"));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.stage1_context == 0 || self.stage2_context < self.stage1_context {
            return bad(format!(
                "need 0 < stage1_context ({}) <= stage2_context ({})",
                self.stage1_context, self.stage2_context
            ));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning_rate and weight_decay must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("betas must lie in [0, 1) and adam_eps must be positive".into());
        }
        Ok(())
    }

    pub fn warmup(&self) -> usize {
        self.warmup_steps.unwrap_or((self.stage1_steps + self.stage2_steps) / 10)
    }

    /// Learning rate for the 0-based global optimizer step: linear warmup, then constant.
    pub fn lr_at(&self, step: usize) -> f64 {
        let w = self.warmup();
        if step < w {
            self.learning_rate * (step + 1) as f64 / w as f64
        } else {
            self.learning_rate
        }
    }

    pub fn stage(&self, stage: u8) -> StageParams {
        match stage {
            1 => StageParams { stage: 1, context: self.stage1_context, steps: self.stage1_steps },
            _ => StageParams { stage: 2, context: self.stage2_context, steps: self.stage2_steps },
        }
    }

    pub fn mask_config(&self) -> MaskConfig {
        MaskConfig { rate: self.mask_rate, split: self.split }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageParams {
    pub stage: u8,
    pub context: usize,
    /// Total optimizer steps for this stage, counting any already taken.
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskConfig {
    pub rate: f64,
    pub split: MaskSplit,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { rate: 0.30, split: MaskSplit::default() }
    }
}

/// Token ids needed to corrupt a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskVocab {
    pub vocab_size: usize,
    pub specials: SpecialIds,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedBatch {
    pub ids: Vec<usize>,
    /// Original id at selected positions; `None` everywhere else.
    pub labels: Vec<Option<usize>>,
    /// Sequences dropped because every position was a special token.
    pub skipped: usize,
}

impl MaskedBatch {
    pub fn selected(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }
}

/// Corrupts consecutive length-`seq_len` sequences in `ids`.
///
/// Each non-special position is selected independently with probability
/// `rate`; a selected position becomes `[MASK]`, a uniformly drawn
/// non-special token, or stays unchanged according to `split`.
pub fn mask_batch(ids: &[usize], seq_len: usize, cfg: &MaskConfig, vocab: &MaskVocab, seed: u64) -> MaskedBatch {
    assert!(seq_len > 0 && ids.len().is_multiple_of(seq_len), "ids must be whole sequences");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sp = vocab.specials;
    let ordinary: Vec<usize> = (0..vocab.vocab_size).filter(|&i| !sp.contains(i)).collect();
    let mut out = MaskedBatch { ids: Vec::with_capacity(ids.len()), labels: Vec::with_capacity(ids.len()), skipped: 0 };
    for seq in ids.chunks_exact(seq_len) {
        if seq.iter().all(|&t| sp.contains(t)) {
            out.skipped += 1;
            continue;
        }
        for &t in seq {
            // every position consumes the same draws so selection is independent of content
            let select: f64 = rng.gen();
            let how: f64 = rng.gen();
            let pick = rng.gen_range(0..ordinary.len().max(1));
            if sp.contains(t) || select >= cfg.rate {
                out.ids.push(t);
                out.labels.push(None);
                continue;
            }
            let corrupted = if how < cfg.split.mask_token {
                sp.mask
            } else if how < cfg.split.mask_token + cfg.split.random_token && !ordinary.is_empty() {
                ordinary[pick]
            } else {
                t
            };
            out.ids.push(corrupted);
            out.labels.push(Some(t));
        }
    }
    out
}

/// Documents joined with `[SEP]` into one stream, cut into fixed-length chunks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenStream {
    tokens: Vec<usize>,
}

impl TokenStream {
    pub fn from_documents<I: IntoIterator<Item = Vec<usize>>>(docs: I, sep: usize) -> Self {
        let mut tokens = Vec::new();
        for d in docs.into_iter().filter(|d| !d.is_empty()) {
            if !tokens.is_empty() {
                tokens.push(sep);
            }
            tokens.extend(d);
        }
        Self { tokens }
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_chunks(&self, context: usize) -> usize {
        self.tokens.len() / context
    }

    /// Non-overlapping chunk `i` of length `context`; the tail remainder is never used.
    pub fn chunk(&self, context: usize, i: usize) -> &[usize] {
        &self.tokens[i * context..(i + 1) * context]
    }
}

/// Deterministic sub-seed derivation (splitmix64 over the mixed inputs).
pub fn sub_seed(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ a.rotate_left(21) ^ b.rotate_left(42);
    for _ in 0..2 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const TAG_BATCH: u64 = 1;
const TAG_MASK: u64 = 2;

/// Decoupled-weight-decay Adam. Decay applies to matrices only, never to
/// norm gains and biases.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Updates applied so far.
    pub t: usize,
}

impl AdamW {
    pub fn new(params: &[&Tensor], beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { beta1, beta2, eps, weight_decay, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn for_config(params: &[&Tensor], cfg: &TrainConfig) -> Self {
        Self::new(params, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
    }

    /// One update. With `lr == 0` parameters are left untouched bitwise,
    /// while the moments still advance.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let decay = if p.rank() >= 2 { self.weight_decay } else { 0.0 };
            let (pd, gd) = (p.data_mut(), g.data());
            for (((x, &gi), mi), vi) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                if lr != 0.0 {
                    let update = (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps) + decay * *x;
                    *x -= lr * update;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    /// Global 1-based optimizer step.
    pub step: usize,
    pub stage: u8,
    /// Sequence length of the batch.
    pub seq_len: usize,
    pub loss: f64,
}

/// Full training state: parameters, optimizer moments and loss history.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: EncoderModel,
    pub optimizer: AdamW,
    /// Global optimizer steps taken (including skipped batches).
    pub step: usize,
    /// Stage of the most recent step; 0 before any step.
    pub stage: u8,
    /// Steps taken within `stage`.
    pub stage_step: usize,
    pub losses: Vec<LossRecord>,
    pub skipped_sequences: usize,
}

impl Checkpoint {
    pub fn new(model: EncoderModel, cfg: &TrainConfig) -> Self {
        let optimizer = AdamW::for_config(&model.params(), cfg);
        Self { model, optimizer, step: 0, stage: 0, stage_step: 0, losses: Vec::new(), skipped_sequences: 0 }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let names = self.model.param_names();
        let mut extra = Vec::new();
        for (n, m) in names.iter().zip(&self.optimizer.m) {
            extra.push((format!("adam.m.{n}"), m.clone()));
        }
        for (n, v) in names.iter().zip(&self.optimizer.v) {
            extra.push((format!("adam.v.{n}"), v.clone()));
        }
        let o = &self.optimizer;
        let state = vec![
            self.step as f64,
            self.stage as f64,
            self.stage_step as f64,
            self.skipped_sequences as f64,
            o.t as f64,
            o.beta1,
            o.beta2,
            o.eps,
            o.weight_decay,
        ];
        extra.push(("train.state".into(), Tensor::from_vec(state)));
        let mut hist = Vec::with_capacity(self.losses.len() * 4);
        for r in &self.losses {
            hist.extend([r.step as f64, r.stage as f64, r.seq_len as f64, r.loss]);
        }
        let hist = Tensor::new(vec![self.losses.len(), 4], hist).expect("loss history shape");
        extra.push(("train.losses".into(), hist));
        self.model.to_bytes_with(&extra)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let (model, extra) = EncoderModel::from_bytes_with_extra(bytes)?;
        let mut extra: std::collections::HashMap<String, Tensor> = extra.into_iter().collect();
        let mut take = |name: &str| extra.remove(name).ok_or_else(|| TrainError::Checkpoint(format!("missing tensor {name}")));
        let names = model.param_names();
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for (n, p) in names.iter().zip(model.params()) {
            let (mi, vi) = (take(&format!("adam.m.{n}"))?, take(&format!("adam.v.{n}"))?);
            if mi.shape() != p.shape() || vi.shape() != p.shape() {
                return Err(TrainError::Checkpoint(format!("optimizer moments for {n} have the wrong shape")));
            }
            m.push(mi);
            v.push(vi);
        }
        let state = take("train.state")?;
        let s = state.data();
        if s.len() != 9 {
            return Err(TrainError::Checkpoint(format!("train.state has {} values, expected 9", s.len())));
        }
        let hist = take("train.losses")?;
        if hist.rank() != 2 || hist.shape()[1] != 4 {
            return Err(TrainError::Checkpoint(format!("train.losses has shape {:?}", hist.shape())));
        }
        let losses = hist
            .data()
            .chunks_exact(4)
            .map(|r| LossRecord { step: r[0] as usize, stage: r[1] as u8, seq_len: r[2] as usize, loss: r[3] })
            .collect();
        let optimizer = AdamW { beta1: s[5], beta2: s[6], eps: s[7], weight_decay: s[8], m, v, t: s[4] as usize };
        Ok(Self {
            model,
            optimizer,
            step: s[0] as usize,
            stage: s[1] as u8,
            stage_step: s[2] as usize,
            skipped_sequences: s[3] as usize,
            losses,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// `step<TAB>stage<TAB>loss` lines with a header.
    pub fn losses_tsv(&self) -> String {
        let mut out = String::from("step\tstage\tloss\n");
        for r in &self.losses {
            out.push_str(&format!("{}\t{}\t{}\n", r.step, r.stage, r.loss));
        }
        out
    }
}

/// Batch `index` of `stage`: chunk ids drawn uniformly from the stream.
pub fn stage_batch(data: &TokenStream, cfg: &TrainConfig, stage: StageParams, index: usize) -> Result<Vec<usize>, TrainError> {
    let chunks = data.num_chunks(stage.context);
    if chunks == 0 {
        return Err(TrainError::CorpusTooShort { tokens: data.len(), context: stage.context });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, TAG_BATCH, stage.stage as u64, index as u64));
    let mut ids = Vec::with_capacity(cfg.batch_size * stage.context);
    for _ in 0..cfg.batch_size {
        ids.extend_from_slice(data.chunk(stage.context, rng.gen_range(0..chunks)));
    }
    Ok(ids)
}

/// Continues `ckpt` in `stage` until that stage has taken `stage.steps` steps.
///
/// A checkpoint from an earlier stage starts the new stage at its step 0;
/// with zero steps requested it is returned unchanged.
pub fn train_stage(
    mut ckpt: Checkpoint,
    data: &TokenStream,
    cfg: &TrainConfig,
    stage: StageParams,
    vocab: &MaskVocab,
) -> Result<Checkpoint, TrainError> {
    cfg.validate()?;
    let max = ckpt.model.config().max_context;
    if stage.context > max {
        return Err(EncoderError::ContextTooLong { len: stage.context, max }.into());
    }
    if ckpt.stage != stage.stage {
        if stage.steps == 0 {
            return Ok(ckpt);
        }
        ckpt.stage = stage.stage;
        ckpt.stage_step = 0;
    }
    let mask_cfg = cfg.mask_config();
    while ckpt.stage_step < stage.steps {
        let index = ckpt.stage_step;
        let ids = stage_batch(data, cfg, stage, index)?;
        debug_assert_eq!(ids.len(), cfg.batch_size * stage.context);
        let seed = sub_seed(cfg.seed, TAG_MASK, stage.stage as u64, index as u64);
        let batch = mask_batch(&ids, stage.context, &mask_cfg, vocab, seed);
        ckpt.skipped_sequences += batch.skipped;
        let lr = cfg.lr_at(ckpt.step);
        ckpt.step += 1;
        ckpt.stage_step += 1;
        if batch.selected() == 0 {
            log::debug!("stage {} step {}: no masked positions, update skipped", stage.stage, ckpt.step);
            continue;
        }
        let (loss, grads) = ckpt.model.mlm_loss_and_grads(&batch.ids, &batch.labels, stage.context)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { step: ckpt.step, stage: stage.stage, loss });
        }
        ckpt.optimizer.step(ckpt.model.params_mut(), &grads, lr);
        ckpt.losses.push(LossRecord { step: ckpt.step, stage: stage.stage, seq_len: stage.context, loss });
        if ckpt.step.is_multiple_of(50) {
            log::info!("stage {} step {} loss {loss:.4}", stage.stage, ckpt.step);
        }
    }
    Ok(ckpt)
}

/// Stage 1 at `stage1_context`, then stage 2 at `stage2_context` on the same parameters.
pub fn run_two_stage(model: EncoderModel, data: &TokenStream, cfg: &TrainConfig, vocab: &MaskVocab) -> Result<Checkpoint, TrainError> {
    let ckpt = Checkpoint::new(model, cfg);
    let ckpt = train_stage(ckpt, data, cfg, cfg.stage(1), vocab)?;
    train_stage(ckpt, data, cfg, cfg.stage(2), vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{build_model, EncoderConfig};

    fn specials() -> SpecialIds {
        SpecialIds { pad: 0, unk: 1, cls: 2, sep: 3, mask: 4 }
    }

    fn vocab() -> MaskVocab {
        MaskVocab { vocab_size: 24, specials: specials() }
    }

    fn toy_model() -> EncoderModel {
        let cfg = EncoderConfig {
            hidden: 16,
            layers: 2,
            heads: 2,
            intermediate: 24,
            vocab_size: 24,
            max_context: 64,
            local_window: 4,
            ..Default::default()
        };
        build_model(&cfg, None, 11).unwrap()
    }

    fn toy_stream() -> TokenStream {
        let docs = (0..40).map(|d| (0..12).map(|i| 5 + (d * 7 + i * 3) % 19).collect());
        TokenStream::from_documents(docs, 3)
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            stage1_steps: 6,
            stage2_steps: 2,
            stage1_context: 8,
            stage2_context: 32,
            learning_rate: 1e-2,
            ..Default::default()
        }
    }

    #[test]
    fn masking_respects_specials_and_labels() {
        let ids: Vec<usize> = (0..400).map(|i| i % 24).collect();
        let cfg = MaskConfig { rate: 0.5, split: MaskSplit::default() };
        let b = mask_batch(&ids, 20, &cfg, &vocab(), 5);
        for ((orig, new), label) in ids.iter().zip(&b.ids).zip(&b.labels) {
            if specials().contains(*orig) {
                assert_eq!(label, &None);
                assert_eq!(orig, new);
            }
            match label {
                Some(l) => assert_eq!(l, orig),
                None => assert_eq!(orig, new),
            }
        }
        assert_eq!(b, mask_batch(&ids, 20, &cfg, &vocab(), 5));
    }

    #[test]
    fn all_special_sequence_is_skipped() {
        let ids = vec![0, 2, 3, 4, 7, 8, 9, 10];
        let b = mask_batch(&ids, 4, &MaskConfig::default(), &vocab(), 1);
        assert_eq!(b.skipped, 1);
        assert_eq!(b.ids.len(), 4);
    }

    #[test]
    fn config_invariants() {
        assert!(TrainConfig { mask_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { mask_rate: 0.01, ..Default::default() }.validate().is_ok());
        let split = MaskSplit { mask_token: 0.8, random_token: 0.1, keep: 0.2 };
        assert!(TrainConfig { split, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { stage2_context: 32, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn warmup_is_linear_then_constant() {
        let cfg = TrainConfig { warmup_steps: Some(4), learning_rate: 1.0, ..Default::default() };
        let lrs: Vec<f64> = (0..6).map(|s| cfg.lr_at(s)).collect();
        assert_eq!(lrs, vec![0.25, 0.5, 0.75, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_lr_leaves_parameters_bitwise() {
        let model = toy_model();
        let cfg = TrainConfig { learning_rate: 0.0, stage1_steps: 1, ..small_cfg() };
        let out = train_stage(Checkpoint::new(model.clone(), &cfg), &toy_stream(), &cfg, cfg.stage(1), &vocab()).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.losses.len(), 1);
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let cfg = small_cfg();
        let data = toy_stream();
        let full = run_two_stage(toy_model(), &data, &cfg, &vocab()).unwrap();
        let half = train_stage(Checkpoint::new(toy_model(), &cfg), &data, &cfg, StageParams { steps: 3, ..cfg.stage(1) }, &vocab()).unwrap();
        let restored = Checkpoint::from_bytes(&half.to_bytes()).unwrap();
        assert_eq!(restored, half);
        let rest = train_stage(restored, &data, &cfg, cfg.stage(1), &vocab()).unwrap();
        let rest = train_stage(rest, &data, &cfg, cfg.stage(2), &vocab()).unwrap();
        assert_eq!(rest, full);
        assert!(full.losses.iter().filter(|r| r.stage == 2).all(|r| r.seq_len == 32));
    }

    #[test]
    fn empty_stage_two_keeps_stage_one_checkpoint() {
        let cfg = TrainConfig { stage2_steps: 0, ..small_cfg() };
        let data = toy_stream();
        let one = train_stage(Checkpoint::new(toy_model(), &cfg), &data, &cfg, cfg.stage(1), &vocab()).unwrap();
        let both = run_two_stage(toy_model(), &data, &cfg, &vocab()).unwrap();
        assert_eq!(one, both);
    }

    #[test]
    fn short_corpus_is_rejected() {
        let cfg = small_cfg();
        let data = TokenStream::from_documents([vec![5, 6, 7]], 3);
        let err = train_stage(Checkpoint::new(toy_model(), &cfg), &data, &cfg, cfg.stage(1), &vocab()).unwrap_err();
        assert!(matches!(err, TrainError::CorpusTooShort { tokens: 3, context: 8 }));
    }
}
