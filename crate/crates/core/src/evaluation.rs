//! Metrics and evaluation protocols: MLM loss and perplexity, dense
//! retrieval, sentence classification and entity-level NER.
//!
//! Downstream heads are a single affine projection trained with AdamW on
//! frozen encoder features.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderError, EncoderModel};
use crate::numerics::{cosine, Graph, NumericsError, Tape, Tensor};
use crate::tokenizer::TokenizerModel;
use crate::training::{mask_batch, sub_seed, AdamW, MaskConfig, MaskVocab, TokenStream};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("evaluation corpus is empty")]
    EmptyCorpus,
    #[error("text {0:?} produced no tokens")]
    EmptyText(String),
    #[error("query {0} has no relevant document")]
    NoRelevant(String),
    #[error("unknown id {0}")]
    UnknownId(String),
    #[error("label {0:?} was not seen during training")]
    UnseenLabel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub context_len: Option<usize>,
    pub metrics: BTreeMap<String, f64>,
    pub samples: usize,
    pub seeds: Vec<u64>,
}

impl EvalReport {
    pub fn new(task: impl Into<String>) -> Self {
        Self { task: task.into(), context_len: None, metrics: BTreeMap::new(), samples: 0, seeds: Vec::new() }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    /// Checks every metric against its declared range.
    pub fn validate(&self) -> Result<(), String> {
        for (name, &v) in &self.metrics {
            let ok = match name.as_str() {
                "loss" => v >= 0.0,
                "perplexity" => v >= 1.0,
                n if n == "mrr" || n == "accuracy" || n == "macro_f1" || n == "precision" || n == "recall" || n == "f1" || n.starts_with("recall@") => {
                    (0.0..=1.0).contains(&v)
                }
                _ => v.is_finite(),
            };
            if !ok {
                return Err(format!("{}: metric {name} = {v} out of range", self.task));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One `task<TAB>context_len<TAB>metric<TAB>value` row per metric.
    pub fn to_tsv(&self) -> String {
        let ctx = self.context_len.map_or_else(|| "-".to_string(), |c| c.to_string());
        let mut out = String::from("task\tcontext_len\tmetric\tvalue\n");
        for (k, v) in &self.metrics {
            out.push_str(&format!("{}\t{ctx}\t{k}\t{v}\n", self.task));
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>.tsv`.
    pub fn save(&self, stem: &Path) -> Result<(), EvalError> {
        std::fs::write(stem.with_extension("json"), self.to_json())?;
        std::fs::write(stem.with_extension("tsv"), self.to_tsv())?;
        Ok(())
    }
}

pub fn perplexity(loss: f64) -> f64 {
    loss.exp()
}

// ---------------------------------------------------------------- MLM

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MlmEvalConfig {
    pub context_len: usize,
    pub mask: MaskConfig,
    pub seed: u64,
    /// Evaluate at most this many leading chunks.
    pub max_chunks: Option<usize>,
    /// Chunks per forward pass; does not affect the result.
    pub batch_size: usize,
}

impl MlmEvalConfig {
    pub fn new(context_len: usize, seed: u64) -> Self {
        Self { context_len, mask: MaskConfig::default(), seed, max_chunks: None, batch_size: 4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MlmEval {
    pub loss: f64,
    pub perplexity: f64,
    pub masked_tokens: usize,
    pub chunks: usize,
}

impl MlmEval {
    pub fn report(&self, context_len: usize, seed: u64) -> EvalReport {
        let mut r = EvalReport::new("mlm");
        r.context_len = Some(context_len);
        r.metrics.insert("loss".into(), self.loss);
        r.metrics.insert("perplexity".into(), self.perplexity);
        r.samples = self.masked_tokens;
        r.seeds = vec![seed];
        r
    }
}

const TAG_EVAL_MASK: u64 = 101;

/// Masked cross-entropy averaged over every masked position of the
/// fixed-length chunks of `data`. Each chunk's mask depends only on the seed
/// and its index. A stream shorter than one context is evaluated as a single
/// shorter sequence.
pub fn eval_mlm(model: &EncoderModel, data: &TokenStream, vocab: &MaskVocab, cfg: &MlmEvalConfig) -> Result<MlmEval, EvalError> {
    if data.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let max = model.config().max_context;
    if cfg.context_len == 0 || cfg.context_len > max {
        return Err(EncoderError::ContextTooLong { len: cfg.context_len, max }.into());
    }
    let (ctx, chunks) = if data.len() < cfg.context_len { (data.len(), 1) } else { (cfg.context_len, data.num_chunks(cfg.context_len)) };
    let chunks = cfg.max_chunks.map_or(chunks, |m| chunks.min(m.max(1)));
    let mut total = 0.0;
    let mut masked = 0usize;
    let indices: Vec<usize> = (0..chunks).collect();
    for group in indices.chunks(cfg.batch_size.max(1)) {
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        for &c in group {
            let chunk = data.chunk(ctx, c);
            let b = mask_batch(chunk, ctx, &cfg.mask, vocab, sub_seed(cfg.seed, TAG_EVAL_MASK, ctx as u64, c as u64));
            if b.selected() == 0 {
                continue;
            }
            ids.extend(b.ids);
            labels.extend(b.labels);
        }
        let n = labels.iter().filter(|l| l.is_some()).count();
        if n == 0 {
            continue;
        }
        total += model.mlm_loss_batch(&ids, &labels, ctx)? * n as f64;
        masked += n;
    }
    if masked == 0 {
        return Err(EvalError::EmptyCorpus);
    }
    let loss = total / masked as f64;
    Ok(MlmEval { loss, perplexity: perplexity(loss), masked_tokens: masked, chunks })
}

// ---------------------------------------------------------------- retrieval

/// Mean of the final hidden states over all positions (no padding is ever
/// introduced). Text longer than the model context is truncated.
pub fn encode_sentence(model: &EncoderModel, tokenizer: &TokenizerModel, text: &str) -> Result<Vec<f64>, EvalError> {
    let mut ids = tokenizer.encode(text);
    if ids.is_empty() {
        return Err(EvalError::EmptyText(text.to_string()));
    }
    ids.truncate(model.config().max_context);
    let h = model.hidden_states(&ids)?;
    Ok(mean_rows(&h))
}

fn mean_rows(h: &Tensor) -> Vec<f64> {
    let n = h.num_rows();
    let mut out = vec![0.0; h.last_dim()];
    for r in 0..n {
        for (o, x) in out.iter_mut().zip(h.row(r)) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    out
}

/// Document indices by descending cosine similarity; ties keep document order.
pub fn rank_documents(query: &[f64], docs: &[Vec<f64>]) -> Vec<usize> {
    let scores: Vec<f64> = docs.iter().map(|d| cosine(query, d)).collect();
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Recall@k and MRR from the 1-based rank of each query's best relevant document.
pub fn retrieval_metrics(ranks: &[usize], ks: &[usize]) -> BTreeMap<String, f64> {
    let n = ranks.len().max(1) as f64;
    let mut m = BTreeMap::new();
    for &k in ks {
        let hits = ranks.iter().filter(|&&r| r <= k).count();
        m.insert(format!("recall@{k}"), hits as f64 / n);
    }
    m.insert("mrr".into(), ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n);
    m
}

pub fn retrieval_eval(
    model: &EncoderModel,
    tokenizer: &TokenizerModel,
    queries: &[(String, String)],
    documents: &[(String, String)],
    qrels: &[(String, String)],
    ks: &[usize],
) -> Result<EvalReport, EvalError> {
    if queries.is_empty() || documents.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let doc_index: HashMap<&str, usize> = documents.iter().enumerate().map(|(i, (id, _))| (id.as_str(), i)).collect();
    let mut relevant: HashMap<&str, BTreeSet<usize>> = HashMap::new();
    for (q, d) in qrels {
        let di = *doc_index.get(d.as_str()).ok_or_else(|| EvalError::UnknownId(d.clone()))?;
        relevant.entry(q.as_str()).or_default().insert(di);
    }
    let doc_vecs = documents.iter().map(|(_, t)| encode_sentence(model, tokenizer, t)).collect::<Result<Vec<_>, _>>()?;
    let mut ranks = Vec::with_capacity(queries.len());
    for (qid, text) in queries {
        let rel = relevant.get(qid.as_str()).filter(|r| !r.is_empty()).ok_or_else(|| EvalError::NoRelevant(qid.clone()))?;
        let order = rank_documents(&encode_sentence(model, tokenizer, text)?, &doc_vecs);
        let rank = order.iter().position(|d| rel.contains(d)).expect("relevant document is ranked") + 1;
        ranks.push(rank);
    }
    let mut r = EvalReport::new("retrieval");
    r.metrics = retrieval_metrics(&ranks, ks);
    r.samples = queries.len();
    Ok(r)
}

// ---------------------------------------------------------------- heads

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { epochs: 3, learning_rate: 1e-2, batch_size: 16, weight_decay: 0.0 }
    }
}

/// Affine projection `x · W + b` from encoder features to class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearHead {
    pub fn new(inputs: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self { weight: Tensor::randn(&[inputs, classes], 0.02, &mut rng), bias: Tensor::zeros(&[classes]) }
    }

    pub fn logits(&self, features: &Tensor) -> Result<Tensor, EvalError> {
        let mut out = crate::numerics::matmul(features, &self.weight)?;
        for r in 0..out.num_rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(self.bias.data()) {
                *o += b;
            }
        }
        Ok(out)
    }

    pub fn predict(&self, features: &Tensor) -> Result<Vec<usize>, EvalError> {
        let z = self.logits(features)?;
        Ok((0..z.num_rows())
            .map(|r| z.row(r).iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best }).0)
            .collect())
    }

    /// Cross-entropy fine-tuning with AdamW over shuffled minibatches.
    pub fn fit(&mut self, features: &Tensor, labels: &[usize], cfg: &FinetuneConfig, seed: u64) -> Result<(), EvalError> {
        if features.num_rows() != labels.len() || labels.is_empty() {
            return Err(EvalError::InvalidArgument(format!("{} feature rows for {} labels", features.num_rows(), labels.len())));
        }
        let mut opt = AdamW::new(&[&self.weight, &self.bias], 0.9, 0.999, 1e-8, cfg.weight_decay);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
        let mut order: Vec<usize> = (0..labels.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size.max(1)) {
                let rows: Vec<Vec<f64>> = batch.iter().map(|&i| features.row(i).to_vec()).collect();
                let x = Tensor::from_rows(&rows)?;
                let y: Vec<Option<usize>> = batch.iter().map(|&i| Some(labels[i])).collect();
                let grads = {
                    let mut tape = Tape::new();
                    let w = tape.param(&self.weight);
                    let b = tape.param(&self.bias);
                    let x = tape.input(x);
                    let z = tape.matmul(&x, &w)?;
                    let z = tape.add_row(&z, &b)?;
                    let loss = tape.cross_entropy(&z, &y)?;
                    let mut g = tape.backward(loss)?;
                    [g.take(w), g.take(b)].map(|t| t.expect("head parameter gradient"))
                };
                opt.step(vec![&mut self.weight, &mut self.bias], &grads, cfg.learning_rate);
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- classification

/// Accuracy and macro-F1 over the union of gold and predicted labels; a
/// class with no true positive contributes F1 0.
pub fn classification_metrics(gold: &[usize], pred: &[usize]) -> (f64, f64) {
    assert_eq!(gold.len(), pred.len(), "gold and predictions differ in length");
    if gold.is_empty() {
        return (0.0, 0.0);
    }
    let correct = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    let classes: BTreeSet<usize> = gold.iter().chain(pred).copied().collect();
    let f1_sum: f64 = classes
        .iter()
        .map(|&c| {
            let tp = gold.iter().zip(pred).filter(|&(&g, &p)| g == c && p == c).count() as f64;
            let fp = pred.iter().filter(|&&p| p == c).count() as f64 - tp;
            let fn_ = gold.iter().filter(|&&g| g == c).count() as f64 - tp;
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fn_)
            }
        })
        .sum();
    (correct as f64 / gold.len() as f64, f1_sum / classes.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledText {
    pub label: String,
    pub text: String,
    /// Second segment for pair tasks.
    pub text_b: Option<String>,
}

fn text_features(model: &EncoderModel, tokenizer: &TokenizerModel, data: &[LabeledText]) -> Result<Tensor, EvalError> {
    let sep = tokenizer.token(tokenizer.special_ids().sep).unwrap_or("[SEP]").to_string();
    let rows = data
        .iter()
        .map(|ex| match &ex.text_b {
            Some(b) => encode_sentence(model, tokenizer, &format!("{} {sep} {}", ex.text, b)),
            None => encode_sentence(model, tokenizer, &ex.text),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Tensor::from_rows(&rows)?)
}

/// Trains a head on `train` over frozen pooled features and scores `test`.
pub fn classify_eval(
    model: &EncoderModel,
    tokenizer: &TokenizerModel,
    train: &[LabeledText],
    test: &[LabeledText],
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if train.is_empty() || test.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let labels: Vec<String> = train.iter().map(|e| e.label.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let index = |l: &str| labels.iter().position(|x| x == l).ok_or_else(|| EvalError::UnseenLabel(l.to_string()));
    let y_train = train.iter().map(|e| index(&e.label)).collect::<Result<Vec<_>, _>>()?;
    let y_test = test.iter().map(|e| index(&e.label)).collect::<Result<Vec<_>, _>>()?;
    let mut head = LinearHead::new(model.config().hidden, labels.len(), seed);
    head.fit(&text_features(model, tokenizer, train)?, &y_train, cfg, seed)?;
    let pred = head.predict(&text_features(model, tokenizer, test)?)?;
    let (acc, f1) = classification_metrics(&y_test, &pred);
    let mut r = EvalReport::new("classification");
    r.metrics.insert("accuracy".into(), acc);
    r.metrics.insert("macro_f1".into(), f1);
    r.samples = test.len();
    r.seeds = vec![seed];
    Ok(r)
}

// ---------------------------------------------------------------- NER

/// Entity span with inclusive token bounds.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(label: &str, start: usize, end: usize) -> Self {
        Self { label: label.to_string(), start, end }
    }
}

/// Decodes BIO tags to spans. An `I-X` without a preceding `B-X`/`I-X`
/// opens a new span, as if it were `B-X`; unrecognised tags count as `O`.
pub fn decode_bio<S: AsRef<str>>(tags: &[S]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<Span> = None;
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        let (kind, label) = match tag.split_once('-') {
            Some((k @ ("B" | "I"), l)) if !l.is_empty() => (k, l),
            _ => ("O", ""),
        };
        match (kind, open.as_mut()) {
            ("I", Some(s)) if s.label == label => s.end = i,
            ("B" | "I", _) => {
                spans.extend(open.take());
                open = Some(Span::new(label, i, i));
            }
            _ => spans.extend(open.take()),
        }
    }
    spans.extend(open);
    spans
}

/// Micro-averaged entity precision, recall and F1 on exact span+type matches.
/// With no gold and no predicted spans all three are 1.
pub fn entity_prf(gold: &[Vec<Span>], pred: &[Vec<Span>]) -> (f64, f64, f64) {
    assert_eq!(gold.len(), pred.len(), "gold and predictions differ in length");
    let (mut tp, mut n_gold, mut n_pred) = (0usize, 0usize, 0usize);
    for (g, p) in gold.iter().zip(pred) {
        let gs: BTreeSet<&Span> = g.iter().collect();
        let ps: BTreeSet<&Span> = p.iter().collect();
        tp += gs.intersection(&ps).count();
        n_gold += gs.len();
        n_pred += ps.len();
    }
    if n_gold == 0 && n_pred == 0 {
        return (1.0, 1.0, 1.0);
    }
    let p = if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 };
    let r = if n_gold == 0 { 0.0 } else { tp as f64 / n_gold as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSpanSequence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

impl LabeledSpanSequence {
    pub fn spans(&self) -> Vec<Span> {
        decode_bio(&self.tags)
    }
}

/// Hidden state at the first subword of every word; words past the model
/// context get no row and are predicted `O`.
fn word_features(model: &EncoderModel, tokenizer: &TokenizerModel, words: &[String]) -> Result<Tensor, EvalError> {
    let unk = tokenizer.special_ids().unk;
    let mut ids = Vec::new();
    let mut firsts = Vec::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            ids.extend(tokenizer.space_id());
        }
        let pieces: Vec<usize> = tokenizer.encode_words(w).into_iter().flatten().collect();
        firsts.push(ids.len());
        if pieces.is_empty() {
            ids.push(unk);
        } else {
            ids.extend(pieces);
        }
    }
    let max = model.config().max_context;
    ids.truncate(max);
    let h = model.hidden_states(&ids)?;
    let rows: Vec<Vec<f64>> = firsts.iter().take_while(|&&f| f < max).map(|&f| h.row(f).to_vec()).collect();
    Ok(Tensor::from_rows(&rows)?)
}

/// Trains one token head per seed on frozen features and reports
/// seed-averaged entity precision, recall and F1 on `test`.
pub fn ner_eval(
    model: &EncoderModel,
    tokenizer: &TokenizerModel,
    train: &[LabeledSpanSequence],
    test: &[LabeledSpanSequence],
    seeds: &[u64],
    cfg: &FinetuneConfig,
) -> Result<EvalReport, EvalError> {
    if train.is_empty() || test.is_empty() || seeds.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut tagset: BTreeSet<String> = train.iter().flat_map(|s| s.tags.iter().cloned()).collect();
    tagset.insert("O".into());
    let tagset: Vec<String> = tagset.into_iter().collect();
    let o = tagset.iter().position(|t| t == "O").expect("O present");
    let tag_id = |t: &str| tagset.iter().position(|x| x == t).unwrap_or(o);

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in train {
        let f = word_features(model, tokenizer, &s.tokens)?;
        for r in 0..f.num_rows() {
            xs.push(f.row(r).to_vec());
            ys.push(tag_id(&s.tags[r]));
        }
    }
    let x_train = Tensor::from_rows(&xs)?;
    let test_feats = test.iter().map(|s| word_features(model, tokenizer, &s.tokens)).collect::<Result<Vec<_>, _>>()?;
    let gold: Vec<Vec<Span>> = test.iter().map(|s| s.spans()).collect();

    let mut sums = [0.0; 3];
    for &seed in seeds {
        let mut head = LinearHead::new(model.config().hidden, tagset.len(), seed);
        head.fit(&x_train, &ys, cfg, seed)?;
        let mut pred = Vec::with_capacity(test.len());
        for (s, f) in test.iter().zip(&test_feats) {
            let mut tags: Vec<&str> = head.predict(f)?.into_iter().map(|i| tagset[i].as_str()).collect();
            tags.resize(s.tokens.len(), "O");
            pred.push(decode_bio(&tags));
        }
        let (p, r, f) = entity_prf(&gold, &pred);
        sums[0] += p;
        sums[1] += r;
        sums[2] += f;
    }
    let n = seeds.len() as f64;
    let mut report = EvalReport::new("ner");
    report.metrics.insert("precision".into(), sums[0] / n);
    report.metrics.insert("recall".into(), sums[1] / n);
    report.metrics.insert("f1".into(), sums[2] / n);
    report.samples = test.len();
    report.seeds = seeds.to_vec();
    Ok(report)
}

// ---------------------------------------------------------------- data formats

/// `label<TAB>text` or `label<TAB>text_a<TAB>text_b`; blank lines skipped.
pub fn parse_classification_tsv(text: &str) -> Result<Vec<LabeledText>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let ex = match cols.as_slice() {
            [l, t] => LabeledText { label: l.to_string(), text: t.to_string(), text_b: None },
            [l, a, b] => LabeledText { label: l.to_string(), text: a.to_string(), text_b: Some(b.to_string()) },
            _ => return Err(EvalError::Parse { line: i + 1, msg: format!("expected 2 or 3 columns, found {}", cols.len()) }),
        };
        out.push(ex);
    }
    Ok(out)
}

/// CoNLL-style `token tag` lines; a blank line ends a sentence. Only the
/// first and last whitespace-separated columns are used.
pub fn parse_conll(text: &str) -> Result<Vec<LabeledSpanSequence>, EvalError> {
    let mut out = Vec::new();
    let mut cur = LabeledSpanSequence { tokens: Vec::new(), tags: Vec::new() };
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            if !cur.tokens.is_empty() {
                out.push(std::mem::replace(&mut cur, LabeledSpanSequence { tokens: Vec::new(), tags: Vec::new() }));
            }
            continue;
        }
        if cols.len() < 2 {
            return Err(EvalError::Parse { line: i + 1, msg: "expected `token tag`".into() });
        }
        cur.tokens.push(cols[0].to_string());
        cur.tags.push(cols[cols.len() - 1].to_string());
    }
    if !cur.tokens.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

/// Two-column TSV (`qid<TAB>text`, `did<TAB>text` or `qid<TAB>did`).
pub fn parse_pairs_tsv(text: &str) -> Result<Vec<(String, String)>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (a, b) = line.split_once('\t').ok_or_else(|| EvalError::Parse { line: i + 1, msg: "expected two tab-separated columns".into() })?;
        out.push((a.to_string(), b.to_string()));
    }
    Ok(out)
}
