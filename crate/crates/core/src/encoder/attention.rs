//! Multi-head scaled dot-product attention with rotary embeddings.
//!
//! Scores are stored in a band layout: row `i` keeps only the keys it may
//! attend to, so a local layer allocates `seq_len * (window + 1)` scores per
//! head and a global layer `seq_len * seq_len`.

use std::cell::RefCell;

use crate::numerics::ops::{axpy, dot, softmax_in_place};
use crate::numerics::{CustomOp, NumericsError, Tensor};

use super::rope::RopeTable;
use super::EncoderError;

/// Boolean `seq_len x seq_len` attention permission matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.n + j]
    }
}

/// Symmetric band: `i` may attend to `j` iff `|i - j| <= window / 2`.
pub fn local_attention_mask(seq_len: usize, window: usize) -> Result<AttentionMask, EncoderError> {
    if seq_len == 0 {
        return Err(EncoderError::InvalidInput("seq_len must be at least 1".into()));
    }
    if window == 0 || !window.is_multiple_of(2) {
        return Err(EncoderError::InvalidConfig(format!("local window {window} must be positive and even")));
    }
    let half = window / 2;
    let allowed = (0..seq_len * seq_len).map(|k| (k / seq_len).abs_diff(k % seq_len) <= half).collect();
    Ok(AttentionMask { n: seq_len, allowed })
}

/// Score-buffer accounting for the current thread, in number of f64 scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScoreAccounting {
    pub local_peak: usize,
    pub global_peak: usize,
    pub local_total: usize,
    pub global_total: usize,
}

thread_local! {
    static ACCOUNTING: RefCell<ScoreAccounting> = RefCell::new(ScoreAccounting::default());
}

pub fn reset_score_accounting() {
    ACCOUNTING.with(|a| *a.borrow_mut() = ScoreAccounting::default());
}

pub fn score_accounting() -> ScoreAccounting {
    ACCOUNTING.with(|a| *a.borrow())
}

fn record_allocation(local: bool, scores: usize) {
    ACCOUNTING.with(|a| {
        let mut a = a.borrow_mut();
        if local {
            a.local_peak = a.local_peak.max(scores);
            a.local_total += scores;
        } else {
            a.global_peak = a.global_peak.max(scores);
            a.global_total += scores;
        }
    });
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionSpec {
    /// Rows of the inputs are consecutive sequences of this length.
    pub seq_len: usize,
    pub heads: usize,
    /// `None` disables rotary embeddings.
    pub rope_theta: Option<f64>,
    /// Total band width for local attention; `None` is global.
    pub window: Option<usize>,
}

impl AttentionSpec {
    fn half_window(&self) -> usize {
        self.window.map_or(self.seq_len, |w| w / 2)
    }

    /// Scores kept per query row.
    pub fn band_width(&self) -> usize {
        match self.window {
            Some(w) => (w + 1).min(self.seq_len),
            None => self.seq_len,
        }
    }

    /// Half-open key range visible from query `i`.
    #[inline]
    fn band(&self, i: usize) -> (usize, usize) {
        let half = self.half_window();
        (i.saturating_sub(half), (i + half + 1).min(self.seq_len))
    }
}

struct Cache {
    q: Vec<f64>,
    k: Vec<f64>,
    probs: Vec<f64>,
}

/// Attention core over projected `q`, `k`, `v` (each `[rows, hidden]`).
pub struct AttentionOp {
    spec: AttentionSpec,
    cache: Option<Cache>,
}

impl AttentionOp {
    pub fn new(spec: AttentionSpec) -> Self {
        Self { spec, cache: None }
    }

    fn rope(&self, head_dim: usize) -> Option<RopeTable> {
        self.spec.rope_theta.map(|theta| RopeTable::new(0..self.spec.seq_len, head_dim, theta))
    }

    fn rotate_all(&self, x: &mut [f64], hidden: usize, table: &RopeTable, inverse: bool) {
        let d = hidden / self.spec.heads;
        for (r, row) in x.chunks_exact_mut(hidden).enumerate() {
            let pos = r % self.spec.seq_len;
            for head in row.chunks_exact_mut(d) {
                table.rotate(head, pos, inverse);
            }
        }
    }

    fn check(&self, inputs: &[&Tensor]) -> Result<(usize, usize), NumericsError> {
        let bad = |detail: String| Err(NumericsError::ShapeMismatch { op: "attention", detail });
        if inputs.len() != 3 {
            return bad(format!("expected q, k, v; got {} inputs", inputs.len()));
        }
        let shape = inputs[0].shape();
        if shape.len() != 2 || inputs[1].shape() != shape || inputs[2].shape() != shape {
            return bad(format!("q {:?}, k {:?}, v {:?}", shape, inputs[1].shape(), inputs[2].shape()));
        }
        let (rows, hidden) = (shape[0], shape[1]);
        let s = &self.spec;
        if s.seq_len == 0 || rows % s.seq_len != 0 {
            return bad(format!("{rows} rows are not a whole number of length-{} sequences", s.seq_len));
        }
        if s.heads == 0 || hidden % s.heads != 0 {
            return bad(format!("hidden {hidden} not divisible by {} heads", s.heads));
        }
        if s.rope_theta.is_some() && !(hidden / s.heads).is_multiple_of(2) {
            return bad("rotary embeddings need an even head_dim".into());
        }
        if let Some(w) = s.window {
            if w == 0 || w % 2 != 0 {
                return Err(NumericsError::InvalidArgument { op: "attention", detail: format!("window {w} must be positive and even") });
            }
        }
        Ok((rows, hidden))
    }
}

impl CustomOp for AttentionOp {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn forward(&mut self, inputs: &[&Tensor], record: bool) -> Result<Tensor, NumericsError> {
        let (rows, hidden) = self.check(inputs)?;
        let spec = self.spec;
        let (n, heads) = (spec.seq_len, spec.heads);
        let d = hidden / heads;
        let batch = rows / n;
        let width = spec.band_width();
        let scale = 1.0 / (d as f64).sqrt();

        let mut q = inputs[0].data().to_vec();
        let mut k = inputs[1].data().to_vec();
        let v = inputs[2].data();
        if let Some(table) = self.rope(d) {
            self.rotate_all(&mut q, hidden, &table, false);
            self.rotate_all(&mut k, hidden, &table, false);
        }

        let total = batch * heads * n * width;
        record_allocation(spec.window.is_some(), total);
        let mut probs = vec![0.0; total];
        let mut out = Tensor::zeros(&[rows, hidden]);
        let od = out.data_mut();
        for b in 0..batch {
            for h in 0..heads {
                let col = h * d;
                for i in 0..n {
                    let (lo, hi) = spec.band(i);
                    let base = ((b * heads + h) * n + i) * width;
                    let row = &mut probs[base..base + (hi - lo)];
                    let qi = &q[(b * n + i) * hidden + col..][..d];
                    for (slot, j) in row.iter_mut().zip(lo..hi) {
                        *slot = dot(qi, &k[(b * n + j) * hidden + col..][..d]) * scale;
                    }
                    softmax_in_place(row);
                    let oi = &mut od[(b * n + i) * hidden + col..][..d];
                    for (p, j) in row.iter().zip(lo..hi) {
                        axpy(*p, &v[(b * n + j) * hidden + col..][..d], oi);
                    }
                }
            }
        }
        if record {
            self.cache = Some(Cache { q, k, probs });
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor], grad_out: &Tensor) -> Vec<Tensor> {
        let cache = self.cache.as_ref().expect("attention backward without a recorded forward");
        let shape = inputs[0].shape();
        let (rows, hidden) = (shape[0], shape[1]);
        let spec = self.spec;
        let (n, heads) = (spec.seq_len, spec.heads);
        let d = hidden / heads;
        let batch = rows / n;
        let width = spec.band_width();
        let scale = 1.0 / (d as f64).sqrt();
        let v = inputs[2].data();
        let go = grad_out.data();

        let mut dq = vec![0.0; rows * hidden];
        let mut dk = vec![0.0; rows * hidden];
        let mut dv = vec![0.0; rows * hidden];
        let mut dp = vec![0.0; width];
        for b in 0..batch {
            for h in 0..heads {
                let col = h * d;
                for i in 0..n {
                    let (lo, hi) = spec.band(i);
                    let base = ((b * heads + h) * n + i) * width;
                    let p = &cache.probs[base..base + (hi - lo)];
                    let gi = &go[(b * n + i) * hidden + col..][..d];
                    let mut weighted = 0.0;
                    for ((dpj, pj), j) in dp.iter_mut().zip(p).zip(lo..hi) {
                        let vj = (b * n + j) * hidden + col;
                        *dpj = dot(gi, &v[vj..vj + d]);
                        weighted += pj * *dpj;
                        axpy(*pj, gi, &mut dv[vj..vj + d]);
                    }
                    let qi = (b * n + i) * hidden + col;
                    for ((dpj, pj), j) in dp.iter().zip(p).zip(lo..hi) {
                        let ds = pj * (dpj - weighted) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj = (b * n + j) * hidden + col;
                        axpy(ds, &cache.k[kj..kj + d], &mut dq[qi..qi + d]);
                        axpy(ds, &cache.q[qi..qi + d], &mut dk[kj..kj + d]);
                    }
                }
            }
        }
        if let Some(table) = self.rope(d) {
            self.rotate_all(&mut dq, hidden, &table, true);
            self.rotate_all(&mut dk, hidden, &table, true);
        }
        let mk = |data| Tensor::new(vec![rows, hidden], data).expect("shape");
        vec![mk(dq), mk(dk), mk(dv)]
    }
}
