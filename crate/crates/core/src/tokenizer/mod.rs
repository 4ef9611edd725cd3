//! Character-level byte-pair-encoding tokenizer.
//!
//! Text is split on Unicode whitespace; every whitespace run becomes a single
//! space token so that decoding restores word boundaries. Merges never cross
//! word boundaries and never touch special tokens.

mod normalize;
mod train;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use normalize::Normalization;
pub use train::{train_bpe, BpeTrainer, TrainedTokenizer};

pub const SPACE: &str = " ";

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("vocab size {requested} is below the minimum {minimum} (alphabet + special tokens)")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("corpus contains no words")]
    EmptyCorpus,
    #[error("token id {id} out of range for vocabulary of {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("invalid tokenizer: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Surface forms of the reserved tokens, keyed by role.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub pad: String,
    pub unk: String,
    pub cls: String,
    pub sep: String,
    pub mask: String,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self {
            pad: "[PAD]".into(),
            unk: "[UNK]".into(),
            cls: "[CLS]".into(),
            sep: "[SEP]".into(),
            mask: "[MASK]".into(),
        }
    }
}

impl SpecialTokens {
    /// Surfaces in id-assignment order.
    pub fn surfaces(&self) -> [&str; 5] {
        [&self.pad, &self.unk, &self.cls, &self.sep, &self.mask]
    }
}

/// Resolved ids of the special tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpecialIds {
    pub pad: usize,
    pub unk: usize,
    pub cls: usize,
    pub sep: usize,
    pub mask: usize,
}

impl SpecialIds {
    pub fn contains(&self, id: usize) -> bool {
        [self.pad, self.unk, self.cls, self.sep, self.mask].contains(&id)
    }
}

#[derive(Clone, Debug)]
pub struct TokenizerModel {
    vocab: HashMap<String, usize>,
    tokens: Vec<String>,
    merges: Vec<(String, String)>,
    merge_table: HashMap<(usize, usize), (usize, usize)>,
    special_tokens: SpecialTokens,
    special_ids: SpecialIds,
    space_id: Option<usize>,
    normalization: Normalization,
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    vocab: BTreeMap<String, usize>,
    merges: Vec<String>,
    special_tokens: SpecialTokens,
    #[serde(default)]
    normalization: Normalization,
}

enum Segment<'a> {
    Special(usize),
    Text(&'a str),
}

impl TokenizerModel {
    /// Assembles and validates a model from its serialized parts.
    pub fn from_parts(
        tokens: Vec<String>,
        merges: Vec<(String, String)>,
        special_tokens: SpecialTokens,
        normalization: Normalization,
    ) -> Result<Self, TokenizerError> {
        let mut vocab = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if vocab.insert(tok.clone(), id).is_some() {
                return Err(TokenizerError::Invalid(format!("duplicate token {tok:?}")));
            }
        }
        let lookup = |s: &str| {
            vocab.get(s).copied().ok_or_else(|| TokenizerError::Invalid(format!("special token {s:?} missing from vocab")))
        };
        let special_ids = SpecialIds {
            pad: lookup(&special_tokens.pad)?,
            unk: lookup(&special_tokens.unk)?,
            cls: lookup(&special_tokens.cls)?,
            sep: lookup(&special_tokens.sep)?,
            mask: lookup(&special_tokens.mask)?,
        };
        let mut merge_table = HashMap::with_capacity(merges.len());
        for (rank, (left, right)) in merges.iter().enumerate() {
            let get = |s: &str| {
                vocab.get(s).copied().ok_or_else(|| TokenizerError::Invalid(format!("merge {left:?} {right:?}: {s:?} not in vocab")))
            };
            let (l, r) = (get(left)?, get(right)?);
            let out = get(&format!("{left}{right}"))?;
            for id in [l, r, out] {
                if special_ids.contains(id) {
                    return Err(TokenizerError::Invalid(format!("merge {left:?} {right:?} involves a special token")));
                }
            }
            merge_table.entry((l, r)).or_insert((rank, out));
        }
        let space_id = vocab.get(SPACE).copied();
        Ok(Self { vocab, tokens, merges, merge_table, special_tokens, special_ids, space_id, normalization })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn special_tokens(&self) -> &SpecialTokens {
        &self.special_tokens
    }

    pub fn special_ids(&self) -> SpecialIds {
        self.special_ids
    }

    pub fn space_id(&self) -> Option<usize> {
        self.space_id
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn token_id(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(&self, id: usize) -> bool {
        self.special_ids.contains(id)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        let text = self.normalization.apply(text);
        let mut out = Vec::new();
        for seg in self.split_specials(&text) {
            match seg {
                Segment::Special(id) => out.push(id),
                Segment::Text(t) => self.encode_segment(t, &mut out),
            }
        }
        out
    }

    /// Token ids of each whitespace-separated word, without space tokens.
    pub fn encode_words(&self, text: &str) -> Vec<Vec<usize>> {
        let text = self.normalization.apply(text);
        text.split_whitespace().map(|w| self.encode(w)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        for &id in ids {
            let tok = self.tokens.get(id).ok_or(TokenizerError::IdOutOfRange { id, size: self.tokens.len() })?;
            out.push_str(tok);
        }
        Ok(out)
    }

    fn split_specials<'a>(&self, text: &'a str) -> Vec<Segment<'a>> {
        let surfaces = self.special_tokens.surfaces();
        let ids = [self.special_ids.pad, self.special_ids.unk, self.special_ids.cls, self.special_ids.sep, self.special_ids.mask];
        let mut segs = Vec::new();
        let mut rest = text;
        loop {
            // earliest match; longest surface wins a tie
            let hit = surfaces
                .iter()
                .zip(ids)
                .filter(|(s, _)| !s.is_empty())
                .filter_map(|(s, id)| rest.find(*s).map(|pos| (pos, std::cmp::Reverse(s.len()), id)))
                .min();
            match hit {
                Some((pos, std::cmp::Reverse(len), id)) => {
                    if pos > 0 {
                        segs.push(Segment::Text(&rest[..pos]));
                    }
                    segs.push(Segment::Special(id));
                    rest = &rest[pos + len..];
                }
                None => {
                    if !rest.is_empty() {
                        segs.push(Segment::Text(rest));
                    }
                    return segs;
                }
            }
        }
    }

    fn encode_segment(&self, text: &str, out: &mut Vec<usize>) {
        let mut word_start: Option<usize> = None;
        let mut in_space = false;
        for (i, c) in text.char_indices() {
            if c.is_whitespace() {
                if let Some(s) = word_start.take() {
                    self.encode_word_into(&text[s..i], out);
                }
                if !in_space {
                    out.push(self.space_id.unwrap_or(self.special_ids.unk));
                    in_space = true;
                }
            } else {
                in_space = false;
                word_start.get_or_insert(i);
            }
        }
        if let Some(s) = word_start {
            self.encode_word_into(&text[s..], out);
        }
    }

    fn encode_word_into(&self, word: &str, out: &mut Vec<usize>) {
        let mut buf = [0u8; 4];
        let mut symbols: Vec<usize> = word
            .chars()
            .map(|c| self.vocab.get(c.encode_utf8(&mut buf) as &str).copied().unwrap_or(self.special_ids.unk))
            .collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.merge_table.get(&(w[0], w[1])).map(|&(rank, merged)| (rank, w[0], w[1], merged)))
                .min();
            let Some((_, left, right, merged)) = best else { break };
            symbols = apply_merge(&symbols, left, right, merged);
        }
        out.extend(symbols);
    }

    pub fn to_json(&self) -> Result<String, TokenizerError> {
        let file = TokenizerFile {
            vocab: self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect(),
            merges: self.merges.iter().map(|(l, r)| format!("{l} {r}")).collect(),
            special_tokens: self.special_tokens.clone(),
            normalization: self.normalization,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self, TokenizerError> {
        let file: TokenizerFile = serde_json::from_str(json)?;
        let n = file.vocab.len();
        let mut tokens: Vec<Option<String>> = vec![None; n];
        for (tok, id) in file.vocab {
            let slot = tokens.get_mut(id).ok_or_else(|| TokenizerError::Invalid(format!("ids are not contiguous: {id} >= {n}")))?;
            if slot.replace(tok).is_some() {
                return Err(TokenizerError::Invalid(format!("id {id} assigned twice")));
            }
        }
        let tokens = tokens.into_iter().collect::<Option<Vec<_>>>().ok_or_else(|| TokenizerError::Invalid("ids are not contiguous".into()))?;
        let merges = file
            .merges
            .iter()
            .map(|m| {
                m.split_once(' ')
                    .map(|(l, r)| (l.to_string(), r.to_string()))
                    .ok_or_else(|| TokenizerError::Invalid(format!("malformed merge {m:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_parts(tokens, merges, file.special_tokens, file.normalization)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Replaces non-overlapping `(left, right)` occurrences, scanning left to right.
pub(crate) fn apply_merge(symbols: &[usize], left: usize, right: usize, merged: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(merged);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    out
}

/// Tokens-per-word statistics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FertilityReport {
    pub words: usize,
    pub tokens: usize,
    pub ratio: f64,
    /// Keyed by word length in characters.
    pub by_length: BTreeMap<usize, BucketFertility>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BucketFertility {
    pub words: usize,
    pub tokens: usize,
    pub ratio: f64,
}

/// Average number of subword tokens per whitespace-delimited word.
pub fn fertility<I, S>(model: &TokenizerModel, corpus: I) -> Result<FertilityReport, TokenizerError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut words = 0;
    let mut tokens = 0;
    let mut buckets: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for line in corpus {
        let text = model.normalization.apply(line.as_ref());
        for word in text.split_whitespace() {
            let n = model.encode(word).len();
            words += 1;
            tokens += n;
            let b = buckets.entry(word.chars().count()).or_default();
            b.0 += 1;
            b.1 += n;
        }
    }
    if words == 0 {
        return Err(TokenizerError::EmptyCorpus);
    }
    let by_length = buckets
        .into_iter()
        .map(|(len, (w, t))| (len, BucketFertility { words: w, tokens: t, ratio: t as f64 / w as f64 }))
        .collect();
    Ok(FertilityReport { words, tokens, ratio: tokens as f64 / words as f64, by_length })
}
