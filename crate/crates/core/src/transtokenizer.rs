//! Target-vocabulary embedding initialization from a source embedding
//! matrix. An aligned target token gets the count-weighted mean of the
//! source rows it was aligned to; unaligned tokens fall back to a direct
//! token mapping, and anything left gets a random row matched to the source
//! matrix's scale.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::alignment::AlignmentTable;
use crate::numerics::Tensor;
use crate::tokenizer::{TokenizerModel, SPACE};

const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, thiserror::Error)]
pub enum TranstokenizeError {
    #[error("fallback maps {target:?} to {source_token:?}, which is not in the source vocabulary")]
    FallbackSourceMissing { target: String, source_token: String },
    #[error("alignment references source id {id} but the source matrix has {rows} rows")]
    SourceIdOutOfRange { id: usize, rows: usize },
    #[error("alignment references target id {id} but the target vocabulary has {size} tokens")]
    TargetIdOutOfRange { id: usize, size: usize },
    #[error("malformed embedding file: {0}")]
    Format(String),
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a row of an [`EmbeddingMatrix`] was initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Aligned = 0,
    Fallback = 1,
    RandomBackoff = 2,
}

impl Provenance {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::Aligned),
            1 => Some(Self::Fallback),
            2 => Some(Self::RandomBackoff),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
    provenance: Vec<Provenance>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>, provenance: Vec<Provenance>) -> Result<Self, TranstokenizeError> {
        if values.len() != rows * dim || provenance.len() != rows {
            return Err(TranstokenizeError::Format(format!(
                "{rows}x{dim} needs {} values and {rows} tags, got {} and {}",
                rows * dim,
                values.len(),
                provenance.len()
            )));
        }
        Ok(Self { rows, dim, values, provenance })
    }

    /// Wraps a `[rows, dim]` tensor, tagging every row with `tag`.
    pub fn from_tensor(t: &Tensor, tag: Provenance) -> Result<Self, TranstokenizeError> {
        if t.rank() != 2 {
            return Err(TranstokenizeError::Format(format!("expected a matrix, got shape {:?}", t.shape())));
        }
        let (rows, dim) = (t.shape()[0], t.shape()[1]);
        Self::new(rows, dim, t.data().to_vec(), vec![tag; rows])
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows, self.dim], self.values.clone()).expect("consistent by construction")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// Population standard deviation over every element.
    pub fn element_std(&self) -> f64 {
        let n = self.values.len();
        if n == 0 {
            return 0.0;
        }
        let mean = self.values.iter().sum::<f64>() / n as f64;
        (self.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 16 + self.values.len() * 8 + self.rows);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend(self.provenance.iter().map(|p| *p as u8));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TranstokenizeError> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| TranstokenizeError::Format("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(TranstokenizeError::Format(format!("bad magic {magic:?}")));
        }
        let mut word = [0u8; 8];
        let mut read_u64 = |r: &mut &[u8]| -> Result<u64, TranstokenizeError> {
            r.read_exact(&mut word).map_err(|_| TranstokenizeError::Format("truncated header".into()))?;
            Ok(u64::from_le_bytes(word))
        };
        let rows = read_u64(&mut r)? as usize;
        let dim = read_u64(&mut r)? as usize;
        let n = rows.checked_mul(dim).ok_or_else(|| TranstokenizeError::Format("size overflow".into()))?;
        if r.len() != n * 8 + rows {
            return Err(TranstokenizeError::Format(format!("expected {} payload bytes, found {}", n * 8 + rows, r.len())));
        }
        let (vals, tags) = r.split_at(n * 8);
        let values = vals.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let provenance = tags
            .iter()
            .map(|&b| Provenance::from_byte(b).ok_or_else(|| TranstokenizeError::Format(format!("unknown provenance byte {b}"))))
            .collect::<Result<_, _>>()?;
        Self::new(rows, dim, values, provenance)
    }

    pub fn save(&self, path: &Path) -> Result<(), TranstokenizeError> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TranstokenizeError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Direct target-token to source-token correspondences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FallbackMap {
    entries: Vec<(String, String)>,
}

fn ascii_equivalent(c: char) -> Option<char> {
    match c {
        '٠'..='٩' => char::from_digit(c as u32 - '٠' as u32, 10),
        '۰'..='۹' => char::from_digit(c as u32 - '۰' as u32, 10),
        '،' => Some(','),
        '؛' => Some(';'),
        '؟' => Some('?'),
        '٪' => Some('%'),
        '٫' => Some('.'),
        _ => None,
    }
}

fn is_symbolic(token: &str) -> bool {
    !token.is_empty()
        && token.chars().all(|c| c.is_ascii_digit() || c.is_ascii_punctuation() || ascii_equivalent(c).is_some())
}

impl FallbackMap {
    pub fn new(entries: Vec<(String, String)>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Default list: special tokens by role, the space token, and any target
    /// token made only of digits or punctuation (Arabic-Indic digits and
    /// Arabic punctuation folded to ASCII) that the source vocabulary has.
    pub fn default_for(tgt: &TokenizerModel, src: &TokenizerModel) -> Self {
        let mut entries = Vec::new();
        let (ts, ss) = (tgt.special_tokens(), src.special_tokens());
        for (t, s) in ts.surfaces().into_iter().zip(ss.surfaces()) {
            entries.push((t.to_string(), s.to_string()));
        }
        if tgt.token_id(SPACE).is_some() && src.token_id(SPACE).is_some() {
            entries.push((SPACE.to_string(), SPACE.to_string()));
        }
        for (id, tok) in tgt.tokens().iter().enumerate() {
            if tgt.is_special(id) || !is_symbolic(tok) {
                continue;
            }
            let mapped: String = tok.chars().map(|c| ascii_equivalent(c).unwrap_or(c)).collect();
            if src.token_id(&mapped).is_some() {
                entries.push((tok.clone(), mapped));
            }
        }
        Self { entries }
    }

    /// `target_token<TAB>source_token` per line.
    pub fn from_tsv(text: &str) -> Result<Self, TranstokenizeError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (t, s) = line.split_once('\t').ok_or_else(|| TranstokenizeError::Parse {
                line: i + 1,
                detail: "expected target_token<TAB>source_token".into(),
            })?;
            entries.push((t.to_string(), s.to_string()));
        }
        Ok(Self { entries })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (t, s) in &self.entries {
            let _ = writeln!(out, "{t}\t{s}");
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, TranstokenizeError> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), TranstokenizeError> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    /// Resolves to `(target id, source id)`; targets absent from the target
    /// vocabulary are skipped, missing sources are an error.
    pub fn resolve(&self, tgt: &TokenizerModel, src: &TokenizerModel) -> Result<BTreeMap<usize, usize>, TranstokenizeError> {
        let mut out = BTreeMap::new();
        for (t, s) in &self.entries {
            let sid = src.token_id(s).ok_or_else(|| TranstokenizeError::FallbackSourceMissing { target: t.clone(), source_token: s.clone() })?;
            match tgt.token_id(t) {
                Some(tid) => {
                    out.entry(tid).or_insert(sid);
                }
                None => log::debug!("fallback target {t:?} not in target vocabulary; skipped"),
            }
        }
        Ok(out)
    }
}

/// Normalized weights `c_i / sum_j c_j` over the positive counts of one
/// target token; `None` when the counts sum to zero.
pub fn alignment_weights(counts: &BTreeMap<usize, f64>) -> Option<Vec<(usize, f64)>> {
    let total: f64 = counts.values().filter(|c| **c > 0.0).sum();
    if !(total > 0.0) {
        return None;
    }
    Some(counts.iter().filter(|(_, c)| **c > 0.0).map(|(&s, &c)| (s, c / total)).collect())
}

/// Builds the target embedding matrix. Rows are filled in priority order:
/// aligned (weighted mean of aligned source rows), fallback (copy of the
/// mapped source row), random backoff (normal, mean 0, std of the source
/// matrix's elements).
pub fn init_embeddings(
    table: &AlignmentTable,
    src_emb: &EmbeddingMatrix,
    fallback: &FallbackMap,
    tgt: &TokenizerModel,
    src: &TokenizerModel,
    seed: u64,
) -> Result<EmbeddingMatrix, TranstokenizeError> {
    let rows = tgt.vocab_size();
    let dim = src_emb.dim();
    let fallback_ids = fallback.resolve(tgt, src)?;
    let mut values = vec![0.0; rows * dim];
    let mut provenance = vec![Provenance::RandomBackoff; rows];
    let mut filled = vec![false; rows];

    for (t, counts) in table.iter() {
        if t >= rows {
            return Err(TranstokenizeError::TargetIdOutOfRange { id: t, size: rows });
        }
        let Some(weights) = alignment_weights(counts) else { continue };
        let out = &mut values[t * dim..(t + 1) * dim];
        for (s, w) in weights {
            if s >= src_emb.rows() {
                return Err(TranstokenizeError::SourceIdOutOfRange { id: s, rows: src_emb.rows() });
            }
            for (o, v) in out.iter_mut().zip(src_emb.row(s)) {
                *o += w * v;
            }
        }
        provenance[t] = Provenance::Aligned;
        filled[t] = true;
    }

    for (&t, &s) in &fallback_ids {
        if filled[t] {
            continue;
        }
        if s >= src_emb.rows() {
            return Err(TranstokenizeError::SourceIdOutOfRange { id: s, rows: src_emb.rows() });
        }
        values[t * dim..(t + 1) * dim].copy_from_slice(src_emb.row(s));
        provenance[t] = Provenance::Fallback;
        filled[t] = true;
    }

    let std = src_emb.element_std();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in (0..rows).filter(|&t| !filled[t]) {
        let row = Tensor::randn(&[dim], std, &mut rng);
        values[t * dim..(t + 1) * dim].copy_from_slice(row.data());
    }
    EmbeddingMatrix::new(rows, dim, values, provenance)
}

#[derive(Clone, Debug, Serialize)]
pub struct CoverageReport {
    pub rows: usize,
    pub counts: BTreeMap<Provenance, usize>,
    pub fractions: BTreeMap<Provenance, f64>,
    /// Ids of random-backoff rows, with surfaces when a tokenizer is given.
    pub random_backoff: Vec<(usize, Option<String>)>,
}

pub fn coverage_report(emb: &EmbeddingMatrix, tokenizer: Option<&TokenizerModel>) -> CoverageReport {
    let mut counts: BTreeMap<Provenance, usize> =
        [Provenance::Aligned, Provenance::Fallback, Provenance::RandomBackoff].into_iter().map(|p| (p, 0)).collect();
    let mut random_backoff = Vec::new();
    for (id, p) in emb.provenance().iter().enumerate() {
        *counts.get_mut(p).expect("all tags present") += 1;
        if *p == Provenance::RandomBackoff {
            random_backoff.push((id, tokenizer.and_then(|t| t.token(id)).map(str::to_string)));
        }
    }
    let rows = emb.rows();
    let fractions = counts.iter().map(|(p, c)| (*p, if rows == 0 { 0.0 } else { *c as f64 / rows as f64 })).collect();
    CoverageReport { rows, counts, fractions, random_backoff }
}
