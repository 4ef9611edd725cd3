//! Token alignment between a target and a source tokenizer over a parallel
//! corpus: IBM Model 1 trained by expectation-maximization, then Viterbi
//! links aggregated into per-target-token alignment counts.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::tokenizer::TokenizerModel;

#[derive(Debug, thiserror::Error)]
pub enum AlignmentError {
    #[error("parallel corpus is empty")]
    EmptyCorpus,
    #[error("pair {line}: {side} side is empty")]
    EmptySide { line: usize, side: &'static str },
    #[error("pair {line}: {side} sentence has no in-vocabulary tokens; tokenizer does not match the corpus")]
    VocabularyMismatch { line: usize, side: &'static str },
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sentence pairs, target first.
#[derive(Clone, Debug, Default)]
pub struct ParallelCorpus {
    pairs: Vec<(String, String)>,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self, AlignmentError> {
        for (i, (t, s)) in pairs.iter().enumerate() {
            if t.trim().is_empty() {
                return Err(AlignmentError::EmptySide { line: i + 1, side: "target" });
            }
            if s.trim().is_empty() {
                return Err(AlignmentError::EmptySide { line: i + 1, side: "source" });
            }
        }
        Ok(Self { pairs })
    }

    /// One `target<TAB>source` pair per line; blank lines are skipped.
    pub fn from_tsv(text: &str) -> Result<Self, AlignmentError> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (t, s) = line.split_once('\t').ok_or_else(|| AlignmentError::Parse {
                line: i + 1,
                detail: "expected target<TAB>source".into(),
            })?;
            pairs.push((t.to_string(), s.to_string()));
        }
        Self::new(pairs)
    }

    pub fn load(path: &Path) -> Result<Self, AlignmentError> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (t, s) in &self.pairs {
            let _ = writeln!(out, "{t}\t{s}");
        }
        out
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

type EncodedPairs = Vec<(Vec<usize>, Vec<usize>)>;

fn encode_corpus(
    corpus: &ParallelCorpus,
    tgt: &TokenizerModel,
    src: &TokenizerModel,
) -> Result<EncodedPairs, AlignmentError> {
    if corpus.is_empty() {
        return Err(AlignmentError::EmptyCorpus);
    }
    let check = |ids: &[usize], tok: &TokenizerModel, line: usize, side: &'static str| {
        let unk = tok.special_ids().unk;
        if ids.iter().all(|&i| i == unk) {
            Err(AlignmentError::VocabularyMismatch { line, side })
        } else {
            Ok(())
        }
    };
    corpus
        .pairs
        .iter()
        .enumerate()
        .map(|(i, (t, s))| {
            let t_ids = tgt.encode(t);
            let s_ids = src.encode(s);
            check(&t_ids, tgt, i + 1, "target")?;
            check(&s_ids, src, i + 1, "source")?;
            Ok((t_ids, s_ids))
        })
        .collect()
}

/// Lexical translation probabilities `p(target | source)`.
#[derive(Clone, Debug)]
pub struct TranslationTable {
    probs: HashMap<(usize, usize), f64>,
    target_vocab_size: usize,
    source_vocab_size: usize,
}

impl TranslationTable {
    /// `p(target | source)`; pairs that never co-occurred have probability 0.
    pub fn prob(&self, target: usize, source: usize) -> f64 {
        self.probs.get(&(source, target)).copied().unwrap_or(0.0)
    }

    pub fn target_vocab_size(&self) -> usize {
        self.target_vocab_size
    }

    pub fn source_vocab_size(&self) -> usize {
        self.source_vocab_size
    }

    /// Total probability mass of each source token's distribution.
    pub fn source_mass(&self) -> BTreeMap<usize, f64> {
        let mut keys: Vec<_> = self.probs.keys().copied().collect();
        keys.sort_unstable();
        let mut out = BTreeMap::new();
        for k in keys {
            *out.entry(k.0).or_insert(0.0) += self.probs[&k];
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Ibm1Result {
    pub table: TranslationTable,
    /// Corpus log-likelihood before each EM iteration and after the last one.
    pub log_likelihood: Vec<f64>,
}

/// Accumulates expected counts under `probs`; returns the log-likelihood of
/// the corpus under the same parameters.
fn e_step(
    pairs: &EncodedPairs,
    probs: Option<&HashMap<(usize, usize), f64>>,
    uniform: f64,
    counts: &mut HashMap<(usize, usize), f64>,
    totals: &mut HashMap<usize, f64>,
) -> f64 {
    let p = |s: usize, t: usize| probs.map_or(uniform, |m| m.get(&(s, t)).copied().unwrap_or(0.0));
    let mut ll = 0.0;
    for (tgt, src) in pairs {
        let inv_len = 1.0 / src.len() as f64;
        for &t in tgt {
            let denom: f64 = src.iter().map(|&s| p(s, t)).sum();
            ll += (denom * inv_len).ln();
            if denom <= 0.0 {
                continue;
            }
            for &s in src {
                let delta = p(s, t) / denom;
                *counts.entry((s, t)).or_insert(0.0) += delta;
                *totals.entry(s).or_insert(0.0) += delta;
            }
        }
    }
    ll
}

/// IBM Model 1 without a NULL source token, initialized uniformly over the
/// target vocabulary.
pub fn train_ibm1(
    corpus: &ParallelCorpus,
    tgt: &TokenizerModel,
    src: &TokenizerModel,
    iterations: usize,
) -> Result<Ibm1Result, AlignmentError> {
    if iterations == 0 {
        return Err(AlignmentError::NoIterations);
    }
    let pairs = encode_corpus(corpus, tgt, src)?;
    let uniform = 1.0 / tgt.vocab_size() as f64;
    let mut probs: Option<HashMap<(usize, usize), f64>> = None;
    let mut log_likelihood = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let mut counts = HashMap::new();
        let mut totals = HashMap::new();
        log_likelihood.push(e_step(&pairs, probs.as_ref(), uniform, &mut counts, &mut totals));
        for (key, c) in counts.iter_mut() {
            *c /= totals[&key.0];
        }
        probs = Some(counts);
    }
    let probs = probs.expect("at least one iteration");
    let final_ll = e_step(&pairs, Some(&probs), uniform, &mut HashMap::new(), &mut HashMap::new());
    log_likelihood.push(final_ll);
    Ok(Ibm1Result {
        table: TranslationTable { probs, target_vocab_size: tgt.vocab_size(), source_vocab_size: src.vocab_size() },
        log_likelihood,
    })
}

/// Alignment counts `c(t -> s)`; targets with no counts are absent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlignmentTable {
    counts: BTreeMap<usize, BTreeMap<usize, f64>>,
    target_vocab_size: usize,
    source_vocab_size: usize,
}

impl AlignmentTable {
    pub fn new(target_vocab_size: usize, source_vocab_size: usize) -> Self {
        Self { counts: BTreeMap::new(), target_vocab_size, source_vocab_size }
    }

    /// Adds `count` to the `target -> source` edge; non-positive counts are ignored.
    pub fn add(&mut self, target: usize, source: usize, count: f64) {
        if count > 0.0 {
            *self.counts.entry(target).or_default().entry(source).or_insert(0.0) += count;
        }
    }

    pub fn get(&self, target: usize) -> Option<&BTreeMap<usize, f64>> {
        self.counts.get(&target)
    }

    pub fn count(&self, target: usize, source: usize) -> f64 {
        self.counts.get(&target).and_then(|m| m.get(&source)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &BTreeMap<usize, f64>)> {
        self.counts.iter().map(|(t, m)| (*t, m))
    }

    pub fn targets(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> f64 {
        self.counts.values().flat_map(|m| m.values()).sum()
    }

    pub fn target_vocab_size(&self) -> usize {
        self.target_vocab_size
    }

    pub fn source_vocab_size(&self) -> usize {
        self.source_vocab_size
    }

    /// Source token with the largest count for `target`, lowest id on ties.
    pub fn argmax(&self, target: usize) -> Option<usize> {
        let m = self.counts.get(&target)?;
        m.iter().fold(None, |best: Option<(usize, f64)>, (&s, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((s, c)),
        })
        .map(|(s, _)| s)
    }

    /// `target_id<TAB>source_id<TAB>count`, sorted by `(target_id, source_id)`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (t, m) in &self.counts {
            for (s, c) in m {
                let _ = writeln!(out, "{t}\t{s}\t{c}");
            }
        }
        out
    }

    pub fn from_tsv(text: &str, target_vocab_size: usize, source_vocab_size: usize) -> Result<Self, AlignmentError> {
        let mut table = Self::new(target_vocab_size, source_vocab_size);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |detail: String| AlignmentError::Parse { line: i + 1, detail };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(parse_err(format!("expected 3 fields, got {}", fields.len())));
            }
            let t: usize = fields[0].parse().map_err(|e| parse_err(format!("target id: {e}")))?;
            let s: usize = fields[1].parse().map_err(|e| parse_err(format!("source id: {e}")))?;
            let c: f64 = fields[2].parse().map_err(|e| parse_err(format!("count: {e}")))?;
            if !(c >= 0.0) || !c.is_finite() {
                return Err(parse_err(format!("count must be a finite non-negative number, got {c}")));
            }
            table.add(t, s, c);
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<(), AlignmentError> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: &Path, target_vocab_size: usize, source_vocab_size: usize) -> Result<Self, AlignmentError> {
        Self::from_tsv(&std::fs::read_to_string(path)?, target_vocab_size, source_vocab_size)
    }
}

/// Links every target-token occurrence to its most probable source token in
/// the paired sentence (lowest source id on ties) and counts the links.
pub fn extract_counts(
    table: &TranslationTable,
    corpus: &ParallelCorpus,
    tgt: &TokenizerModel,
    src: &TokenizerModel,
) -> Result<AlignmentTable, AlignmentError> {
    let pairs = encode_corpus(corpus, tgt, src)?;
    let mut out = AlignmentTable::new(tgt.vocab_size(), src.vocab_size());
    for (t_ids, s_ids) in &pairs {
        for &t in t_ids {
            let mut best: Option<(usize, f64)> = None;
            for &s in s_ids {
                let p = table.prob(t, s);
                best = match best {
                    Some((bs, bp)) if bp > p || (bp == p && bs < s) => Some((bs, bp)),
                    _ => Some((s, p)),
                };
            }
            if let Some((s, _)) = best {
                out.add(t, s, 1.0);
            }
        }
    }
    Ok(out)
}
