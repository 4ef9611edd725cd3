//! End-to-end experiments: the initialization ablation and the long-context
//! evaluation. Every stage failure is reported with the stage name.

use std::fmt::Display;

use serde::{Deserialize, Serialize};

use crate::alignment::{extract_counts, train_ibm1, AlignmentTable, ParallelCorpus};
use crate::encoder::{build_model, reset_score_accounting, score_accounting, EncoderConfig, EncoderModel};
use crate::evaluation::{eval_mlm, EvalReport, MlmEvalConfig};
use crate::tokenizer::{train_bpe, BpeTrainer, TokenizerModel};
use crate::training::{run_two_stage, sub_seed, Checkpoint, MaskVocab, TokenStream, TrainConfig};
use crate::transtokenizer::{coverage_report, init_embeddings, CoverageReport, EmbeddingMatrix, FallbackMap, Provenance};
use crate::toy::ToyData;

#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {message}")]
pub struct PipelineError {
    pub stage: String,
    pub message: String,
}

pub trait StageContext<T> {
    fn stage(self, name: &str) -> Result<T, PipelineError>;
}

impl<T, E: Display> StageContext<T> for Result<T, E> {
    fn stage(self, name: &str) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError { stage: name.to_string(), message: e.to_string() })
    }
}

const SEED_SOURCE_MODEL: u64 = 11;
const SEED_TARGET_MODEL: u64 = 12;
const SEED_BACKOFF: u64 = 13;
const SEED_EVAL: u64 = 14;

pub fn mask_vocab(tok: &TokenizerModel) -> MaskVocab {
    MaskVocab { vocab_size: tok.vocab_size(), specials: tok.special_ids() }
}

/// Tokenizes one document per entry and joins them with `[SEP]`.
pub fn token_stream<S: AsRef<str>>(tok: &TokenizerModel, docs: &[S]) -> TokenStream {
    TokenStream::from_documents(docs.iter().map(|d| tok.encode(d.as_ref())), tok.special_ids().sep)
}

/// Splits documents into (train, held-out); the held-out part is the tail.
pub fn split_held_out<S: Clone>(docs: &[S], fraction: f64) -> (Vec<S>, Vec<S>) {
    let held = ((docs.len() as f64 * fraction).round() as usize).clamp(1.min(docs.len()), docs.len().saturating_sub(1).max(1));
    let cut = docs.len() - held.min(docs.len());
    (docs[..cut].to_vec(), docs[cut..].to_vec())
}

/// Fraction of `(target word, source word)` dictionary entries, both single
/// tokens, whose target token's argmax alignment is the source token.
/// Entries that are not single tokens on both sides count as misses.
pub fn dictionary_accuracy(table: &AlignmentTable, dictionary: &[(String, String)], tgt: &TokenizerModel, src: &TokenizerModel) -> f64 {
    if dictionary.is_empty() {
        return 0.0;
    }
    let hits = dictionary
        .iter()
        .filter(|(t, s)| match (tgt.token_id(t), src.token_id(s)) {
            (Some(ti), Some(si)) => table.argmax(ti) == Some(si),
            _ => false,
        })
        .count();
    hits as f64 / dictionary.len() as f64
}

#[derive(Clone, Debug)]
pub struct Transtokenized {
    pub embeddings: EmbeddingMatrix,
    pub counts: AlignmentTable,
    pub log_likelihood: Vec<f64>,
    pub coverage: CoverageReport,
}

/// Alignment, count extraction and embedding initialization.
pub fn transtokenize(
    parallel: &ParallelCorpus,
    tgt: &TokenizerModel,
    src: &TokenizerModel,
    src_emb: &EmbeddingMatrix,
    iterations: usize,
    seed: u64,
) -> Result<Transtokenized, PipelineError> {
    let ibm = train_ibm1(parallel, tgt, src, iterations).stage("align")?;
    let counts = extract_counts(&ibm.table, parallel, tgt, src).stage("align")?;
    let fallback = FallbackMap::default_for(tgt, src);
    let embeddings = init_embeddings(&counts, src_emb, &fallback, tgt, src, seed).stage("transtokenize")?;
    let coverage = coverage_report(&embeddings, Some(tgt));
    Ok(Transtokenized { embeddings, counts, log_likelihood: ibm.log_likelihood, coverage })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    /// Architecture shared by source and target models; `vocab_size` is
    /// replaced by each tokenizer's size.
    pub encoder: EncoderConfig,
    pub source_vocab: usize,
    pub target_vocab: usize,
    pub ibm_iterations: usize,
    /// Source-model pretraining (stage 1 only is typical).
    pub source_train: TrainConfig,
    /// Identical budget for every target variant.
    pub target_train: TrainConfig,
    pub held_out_fraction: f64,
    pub eval_context: usize,
    pub eval_chunks: Option<usize>,
    pub seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        let encoder = EncoderConfig {
            hidden: 64,
            layers: 6,
            heads: 4,
            intermediate: 96,
            vocab_size: 0,
            max_context: 2048,
            local_window: 16,
            ..Default::default()
        };
        let source_train = TrainConfig {
            batch_size: 8,
            stage1_steps: 600,
            stage2_steps: 0,
            stage1_context: 64,
            stage2_context: 64,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let target_train = TrainConfig {
            batch_size: 8,
            stage1_steps: 500,
            stage2_steps: 0,
            stage1_context: 64,
            stage2_context: 64,
            learning_rate: 3e-4,
            ..Default::default()
        };
        Self {
            encoder,
            source_vocab: 4096,
            target_vocab: 4096,
            ibm_iterations: 5,
            source_train,
            target_train,
            held_out_fraction: 0.05,
            eval_context: 64,
            eval_chunks: Some(64),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub loss: f64,
    pub perplexity: f64,
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    /// Transtokenized, embedding re-initialized, fully random, in that order.
    pub rows: Vec<AblationRow>,
    pub reports: Vec<EvalReport>,
    pub source_loss: f64,
    pub dictionary_accuracy: f64,
    pub coverage: CoverageReport,
    pub source_tokenizer: TokenizerModel,
    pub target_tokenizer: TokenizerModel,
    pub checkpoints: Vec<Checkpoint>,
}

impl AblationResult {
    /// `Model Variant<TAB>MLM Loss<TAB>Perplexity` table.
    pub fn table(&self) -> String {
        let mut out = String::from("Model Variant\tMLM Loss\tPerplexity\n");
        for r in &self.rows {
            out.push_str(&format!("{}\t{:.4}\t{:.2}\n", r.variant, r.loss, r.perplexity));
        }
        out
    }
}

pub const VARIANTS: [&str; 3] = ["Transtokenized", "Embedding Re-initialized", "Fully Random Initialization"];

pub fn train_tokenizer<S: AsRef<str>>(docs: &[S], vocab: usize, stage: &str) -> Result<TokenizerModel, PipelineError> {
    Ok(train_bpe(docs.iter().map(|d| d.as_ref()), &BpeTrainer::new(vocab)).stage(stage)?.model)
}

/// Pretrains a source model from scratch on `docs`.
pub fn pretrain_source(
    docs: &[String],
    tok: &TokenizerModel,
    encoder: &EncoderConfig,
    train: &TrainConfig,
    seed: u64,
) -> Result<Checkpoint, PipelineError> {
    let cfg = EncoderConfig { vocab_size: tok.vocab_size(), ..encoder.clone() };
    let model = build_model(&cfg, None, sub_seed(seed, SEED_SOURCE_MODEL, 0, 0)).stage("source-pretrain")?;
    let stream = token_stream(tok, docs);
    run_two_stage(model, &stream, train, &mask_vocab(tok)).stage("source-pretrain")
}

/// Trains three target models that differ only in initialization and
/// evaluates each on held-out target text.
pub fn run_ablation(data: &ToyData, cfg: &AblationConfig) -> Result<AblationResult, PipelineError> {
    let src_tok = train_tokenizer(&data.source_corpus, cfg.source_vocab, "source-tokenizer")?;
    let tgt_tok = train_tokenizer(&data.target_corpus, cfg.target_vocab, "target-tokenizer")?;
    log::info!("tokenizers: source {} tokens, target {} tokens", src_tok.vocab_size(), tgt_tok.vocab_size());

    let source = pretrain_source(&data.source_corpus, &src_tok, &cfg.encoder, &cfg.source_train, cfg.seed)?;
    let source_loss = source.losses.last().map_or(f64::NAN, |r| r.loss);
    log::info!("source model trained, final loss {source_loss:.4}");

    let src_emb = EmbeddingMatrix::from_tensor(source.model.embeddings(), Provenance::RandomBackoff).stage("transtokenize")?;
    let tt = transtokenize(&data.parallel, &tgt_tok, &src_tok, &src_emb, cfg.ibm_iterations, sub_seed(cfg.seed, SEED_BACKOFF, 0, 0))?;
    let accuracy = dictionary_accuracy(&tt.counts, &data.dictionary, &tgt_tok, &src_tok);

    let (train_docs, held_docs) = split_held_out(&data.target_corpus, cfg.held_out_fraction);
    let train_stream = token_stream(&tgt_tok, &train_docs);
    let held_stream = token_stream(&tgt_tok, &held_docs);
    let vocab = mask_vocab(&tgt_tok);
    let tgt_cfg = EncoderConfig { vocab_size: tgt_tok.vocab_size(), ..cfg.encoder.clone() };
    let model_seed = sub_seed(cfg.seed, SEED_TARGET_MODEL, 0, 0);

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut checkpoints = Vec::new();
    for (i, name) in VARIANTS.iter().enumerate() {
        let stage = format!("train-{}", ["transtokenized", "reinit", "random"][i]);
        let model = match i {
            0 => {
                let mut m = build_model(&tgt_cfg, Some(&tt.embeddings), model_seed).stage(&stage)?;
                m.copy_body_from(&source.model).stage(&stage)?;
                m
            }
            1 => {
                let mut m = build_model(&tgt_cfg, None, model_seed).stage(&stage)?;
                m.copy_body_from(&source.model).stage(&stage)?;
                m
            }
            _ => build_model(&tgt_cfg, None, model_seed).stage(&stage)?,
        };
        let ckpt = run_two_stage(model, &train_stream, &cfg.target_train, &vocab).stage(&stage)?;
        let eval_cfg = MlmEvalConfig { max_chunks: cfg.eval_chunks, ..MlmEvalConfig::new(cfg.eval_context, sub_seed(cfg.seed, SEED_EVAL, 0, 0)) };
        let ev = eval_mlm(&ckpt.model, &held_stream, &vocab, &eval_cfg).stage("eval-mlm")?;
        log::info!("{name}: held-out loss {:.4}", ev.loss);
        let mut report = ev.report(cfg.eval_context, cfg.seed);
        report.task = format!("mlm:{name}");
        reports.push(report);
        rows.push(AblationRow { variant: name.to_string(), loss: ev.loss, perplexity: ev.perplexity });
        checkpoints.push(ckpt);
    }
    Ok(AblationResult {
        rows,
        reports,
        source_loss,
        dictionary_accuracy: accuracy,
        coverage: tt.coverage,
        source_tokenizer: src_tok,
        target_tokenizer: tgt_tok,
        checkpoints,
    })
}

/// Peak local/global score allocation of one forward pass at `seq_len`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AllocationPoint {
    pub seq_len: usize,
    pub local_scores: usize,
    pub global_scores: usize,
}

/// Largest over smallest per-token local allocation; 1 for exactly linear growth.
pub fn allocation_linearity(points: &[AllocationPoint]) -> f64 {
    let per_token: Vec<f64> = points.iter().map(|p| p.local_scores as f64 / p.seq_len as f64).collect();
    let max = per_token.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = per_token.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

/// Runs one forward pass per length on a synthetic sequence and records
/// the peak score buffers.
pub fn measure_allocation(model: &EncoderModel, lengths: &[usize]) -> Result<Vec<AllocationPoint>, PipelineError> {
    let v = model.config().vocab_size;
    lengths
        .iter()
        .map(|&n| {
            let ids: Vec<usize> = (0..n).map(|i| 5 + (i * 7919) % (v.max(6) - 5)).map(|i| i.min(v - 1)).collect();
            reset_score_accounting();
            model.hidden_states(&ids).stage("allocation")?;
            let acc = score_accounting();
            Ok(AllocationPoint { seq_len: n, local_scores: acc.local_peak, global_scores: acc.global_peak })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct LongContextResult {
    /// Short then long context MLM reports.
    pub reports: Vec<EvalReport>,
    pub allocation: Vec<AllocationPoint>,
    pub linearity: f64,
}

impl LongContextResult {
    /// `Context Length<TAB>MLM Loss<TAB>Perplexity` followed by the allocation table.
    pub fn table(&self) -> String {
        let mut out = String::from("Context Length\tMLM Loss\tPerplexity\n");
        for r in &self.reports {
            out.push_str(&format!(
                "{} tokens\t{:.4}\t{:.2}\n",
                r.context_len.unwrap_or(0),
                r.metric("loss").unwrap_or(f64::NAN),
                r.metric("perplexity").unwrap_or(f64::NAN)
            ));
        }
        out.push_str("\nSeq Len\tLocal Scores\tGlobal Scores\n");
        for p in &self.allocation {
            out.push_str(&format!("{}\t{}\t{}\n", p.seq_len, p.local_scores, p.global_scores));
        }
        out
    }
}

/// MLM at a short and a long context plus allocation accounting.
#[allow(clippy::too_many_arguments)]
pub fn run_longcontext(
    model: &EncoderModel,
    held_out: &TokenStream,
    vocab: &MaskVocab,
    short: usize,
    long: usize,
    eval_chunks: Option<usize>,
    allocation_lengths: &[usize],
    seed: u64,
) -> Result<LongContextResult, PipelineError> {
    let max = model.config().max_context;
    if let Some(&n) = [short, long].iter().chain(allocation_lengths).find(|&&n| n > max) {
        return Err(PipelineError { stage: "longcontext".into(), message: format!("context {n} exceeds max_context {max}") });
    }
    let mut reports = Vec::new();
    for ctx in [short, long] {
        let cfg = MlmEvalConfig { max_chunks: eval_chunks, batch_size: 1, ..MlmEvalConfig::new(ctx, seed) };
        let ev = eval_mlm(model, held_out, vocab, &cfg).stage("eval-mlm")?;
        reports.push(ev.report(ctx, seed));
    }
    let allocation = measure_allocation(model, allocation_lengths)?;
    let linearity = allocation_linearity(&allocation);
    Ok(LongContextResult { reports, allocation, linearity })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_errors_name_the_stage() {
        let r: Result<(), String> = Err("boom".into());
        let e = r.stage("align").unwrap_err();
        assert_eq!(e.to_string(), "stage align failed: boom");
    }

    #[test]
    fn held_out_split_keeps_both_sides_non_empty() {
        let docs: Vec<u32> = (0..10).collect();
        let (a, b) = split_held_out(&docs, 0.05);
        assert_eq!((a.len(), b.len()), (9, 1));
        let (a, b) = split_held_out(&docs, 0.3);
        assert_eq!((a.len(), b.len()), (7, 3));
    }

    #[test]
    fn linearity_of_exact_band_is_one() {
        let pts: Vec<AllocationPoint> =
            [256, 512, 1024].iter().map(|&n| AllocationPoint { seq_len: n, local_scores: 4 * n * 17, global_scores: 4 * n * n }).collect();
        assert_eq!(allocation_linearity(&pts), 1.0);
    }
}
