//! Reverse-mode differentiation over a dynamically recorded tape.
//!
//! Model code is written once against [`Graph`]; [`Eager`] evaluates it
//! without recording anything (inference), [`Tape`] records every op so
//! [`Tape::backward`] can replay it in reverse.

use std::borrow::Cow;

use super::ops::{self, gemm, MatView, NormStats};
use super::{NumericsError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An op with a hand-written vector-Jacobian product, recorded as one node.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Computes the output. When `record` is set the op keeps whatever its
    /// backward pass needs.
    fn forward(&mut self, inputs: &[&Tensor], record: bool) -> Result<Tensor, NumericsError>;

    /// Gradient with respect to each input, in input order.
    fn backward(&self, inputs: &[&Tensor], grad_out: &Tensor) -> Vec<Tensor>;
}

/// Operations the encoder needs, over either execution backend.
pub trait Graph<'p> {
    type Value: Clone;

    /// A trainable parameter borrowed from the model.
    fn param(&mut self, t: &'p Tensor) -> Self::Value;
    /// A constant input (never differentiated).
    fn input(&mut self, t: Tensor) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, NumericsError>;
    /// `a · bᵀ`
    fn matmul_nt(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, NumericsError>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, NumericsError>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, NumericsError>;
    /// Adds a `[d]` vector to every row of `x`.
    fn add_row(&mut self, x: &Self::Value, bias: &Self::Value) -> Result<Self::Value, NumericsError>;
    fn gelu(&mut self, x: &Self::Value) -> Self::Value;
    fn layer_norm(
        &mut self,
        x: &Self::Value,
        gain: &Self::Value,
        bias: &Self::Value,
        eps: f64,
    ) -> Result<Self::Value, NumericsError>;
    /// Selects rows of `table` (embedding lookup).
    fn gather_rows(&mut self, table: &Self::Value, ids: &[usize]) -> Result<Self::Value, NumericsError>;
    /// Mean cross-entropy over rows whose label is `Some`.
    fn cross_entropy(&mut self, logits: &Self::Value, labels: &[Option<usize>]) -> Result<Self::Value, NumericsError>;
    fn custom(&mut self, inputs: &[&Self::Value], op: Box<dyn CustomOp + 'p>) -> Result<Self::Value, NumericsError>;
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), NumericsError> {
    if a.shape() != b.shape() {
        return Err(NumericsError::ShapeMismatch { op, detail: format!("{:?} vs {:?}", a.shape(), b.shape()) });
    }
    Ok(())
}

fn zip_with(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NumericsError> {
    same_shape(op, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

fn add_row_forward(x: &Tensor, bias: &Tensor) -> Result<Tensor, NumericsError> {
    if bias.len() != x.last_dim() {
        return Err(NumericsError::ShapeMismatch {
            op: "add_row",
            detail: format!("{:?} + {:?}", x.shape(), bias.shape()),
        });
    }
    let mut out = x.clone();
    for r in 0..out.num_rows() {
        for (o, b) in out.row_mut(r).iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

fn gather_forward(table: &Tensor, ids: &[usize]) -> Result<Tensor, NumericsError> {
    if table.rank() != 2 {
        return Err(NumericsError::ShapeMismatch { op: "gather_rows", detail: format!("table {:?}", table.shape()) });
    }
    let (rows, d) = (table.shape()[0], table.shape()[1]);
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= rows {
            return Err(NumericsError::IndexOutOfRange { op: "gather_rows", index: id, bound: rows });
        }
        data.extend_from_slice(table.row(id));
    }
    Tensor::new(vec![ids.len(), d], data)
}

/// Probabilities of the labelled rows, kept for the backward pass.
struct CrossEntropyCache {
    rows: Vec<(usize, usize)>,
    probs: Vec<f64>,
}

fn cross_entropy_forward(
    logits: &Tensor,
    labels: &[Option<usize>],
    record: bool,
) -> Result<(Tensor, Option<CrossEntropyCache>), NumericsError> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(NumericsError::ShapeMismatch {
            op: "cross_entropy",
            detail: format!("logits {:?}, {} labels", logits.shape(), labels.len()),
        });
    }
    let v = logits.shape()[1];
    let mut total = 0.0;
    let mut count = 0usize;
    let mut cache = CrossEntropyCache { rows: Vec::new(), probs: Vec::new() };
    for (r, label) in labels.iter().enumerate() {
        let Some(label) = *label else { continue };
        if label >= v {
            return Err(NumericsError::IndexOutOfRange { op: "cross_entropy", index: label, bound: v });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[label];
        count += 1;
        if record {
            cache.rows.push((r, label));
            cache.probs.extend(row.iter().map(|x| (x - lse).exp()));
        }
    }
    if count == 0 {
        return Err(NumericsError::NoTargets);
    }
    let loss = Tensor::scalar(total / count as f64);
    Ok((loss, record.then_some(cache)))
}

/// Direct evaluation with no recording.
#[derive(Default)]
pub struct Eager;

impl<'p> Graph<'p> for Eager {
    type Value = Cow<'p, Tensor>;

    fn param(&mut self, t: &'p Tensor) -> Self::Value {
        Cow::Borrowed(t)
    }

    fn input(&mut self, t: Tensor) -> Self::Value {
        Cow::Owned(t)
    }

    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor {
        v
    }

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, NumericsError> {
        ops::matmul(a, b).map(Cow::Owned)
    }

    fn matmul_nt(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, NumericsError> {
        ops::matmul_nt(a, b).map(Cow::Owned)
    }

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, NumericsError> {
        zip_with("add", a, b, |x, y| x + y).map(Cow::Owned)
    }

    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, NumericsError> {
        zip_with("mul", a, b, |x, y| x * y).map(Cow::Owned)
    }

    fn add_row(&mut self, x: &Self::Value, bias: &Self::Value) -> Result<Self::Value, NumericsError> {
        add_row_forward(x, bias).map(Cow::Owned)
    }

    fn gelu(&mut self, x: &Self::Value) -> Self::Value {
        Cow::Owned(ops::gelu(x))
    }

    fn layer_norm(
        &mut self,
        x: &Self::Value,
        gain: &Self::Value,
        bias: &Self::Value,
        eps: f64,
    ) -> Result<Self::Value, NumericsError> {
        ops::layer_norm(x, gain.data(), bias.data(), eps).map(Cow::Owned)
    }

    fn gather_rows(&mut self, table: &Self::Value, ids: &[usize]) -> Result<Self::Value, NumericsError> {
        gather_forward(table, ids).map(Cow::Owned)
    }

    fn cross_entropy(&mut self, logits: &Self::Value, labels: &[Option<usize>]) -> Result<Self::Value, NumericsError> {
        cross_entropy_forward(logits, labels, false).map(|(l, _)| Cow::Owned(l))
    }

    fn custom(&mut self, inputs: &[&Self::Value], mut op: Box<dyn CustomOp + 'p>) -> Result<Self::Value, NumericsError> {
        let tensors: Vec<&Tensor> = inputs.iter().map(|v| &***v).collect();
        op.forward(&tensors, false).map(Cow::Owned)
    }
}

enum Op<'p> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, stats: Vec<NormStats> },
    Gather { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, cache: CrossEntropyCache, count: usize },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp + 'p> },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op<'p>,
    needs_grad: bool,
}

/// Recorded computation; parameters are borrowed for the tape's lifetime.
#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn slot_or_zeros<'a>(slot: &'a mut Option<Tensor>, shape: &[usize]) -> &'a mut Tensor {
    slot.get_or_insert_with(|| Tensor::zeros(shape))
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an owned leaf, optionally differentiable.
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, requires_grad)
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op<'p>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn t(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Backpropagates from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let loss_value = self.t(loss);
        if loss_value.len() != 1 {
            return Err(NumericsError::ShapeMismatch {
                op: "backward",
                detail: format!("loss must be a scalar, got {:?}", loss_value.shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<'p>, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.t(*a), self.t(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.needs(*a) {
                    let slot = slot_or_zeros(&mut grads[a.0], ta.shape());
                    gemm(g.data(), MatView::dense(m, n), tb.data(), MatView::dense(k, n).t(), 1.0, slot.data_mut(), MatView::dense(m, k));
                }
                if self.needs(*b) {
                    let slot = slot_or_zeros(&mut grads[b.0], tb.shape());
                    gemm(ta.data(), MatView::dense(m, k).t(), g.data(), MatView::dense(m, n), 1.0, slot.data_mut(), MatView::dense(k, n));
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (self.t(*a), self.t(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
                if self.needs(*a) {
                    let slot = slot_or_zeros(&mut grads[a.0], ta.shape());
                    gemm(g.data(), MatView::dense(m, n), tb.data(), MatView::dense(n, k), 1.0, slot.data_mut(), MatView::dense(m, k));
                }
                if self.needs(*b) {
                    let slot = slot_or_zeros(&mut grads[b.0], tb.shape());
                    gemm(g.data(), MatView::dense(m, n).t(), ta.data(), MatView::dense(m, k), 1.0, slot.data_mut(), MatView::dense(n, k));
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.needs(*v) {
                        accumulate(&mut grads[v.0], g.clone());
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.t(*a), self.t(*b));
                if self.needs(*a) {
                    let da = zip_with("mul", g, tb, |x, y| x * y).expect("shapes checked at record time");
                    accumulate(&mut grads[a.0], da);
                }
                if self.needs(*b) {
                    let db = zip_with("mul", g, ta, |x, y| x * y).expect("shapes checked at record time");
                    accumulate(&mut grads[b.0], db);
                }
            }
            Op::AddRow(x, bias) => {
                if self.needs(*x) {
                    accumulate(&mut grads[x.0], g.clone());
                }
                if self.needs(*bias) {
                    let tb = self.t(*bias);
                    let slot = slot_or_zeros(&mut grads[bias.0], tb.shape());
                    for r in 0..g.num_rows() {
                        for (s, v) in slot.data_mut().iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if self.needs(*x) {
                    let dx = zip_with("gelu", g, self.t(*x), |gv, xv| gv * ops::gelu_grad_scalar(xv))
                        .expect("same shape");
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::LayerNorm { x, gain, bias, stats } => {
                let tx = self.t(*x);
                let tg = self.t(*gain).data();
                let d = tx.last_dim();
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                let mut dx = Tensor::zeros(tx.shape());
                let mut xhat = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for (r, st) in stats.iter().enumerate() {
                    let row = tx.row(r);
                    let grow = g.row(r);
                    for k in 0..d {
                        xhat[k] = (row[k] - st.mean) * st.rstd;
                        dgain[k] += grow[k] * xhat[k];
                        dbias[k] += grow[k];
                        dxhat[k] = grow[k] * tg[k];
                    }
                    let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dxhat_xhat = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for (k, o) in dx.row_mut(r).iter_mut().enumerate() {
                        *o = st.rstd * (dxhat[k] - mean_dxhat - xhat[k] * mean_dxhat_xhat);
                    }
                }
                if self.needs(*x) {
                    accumulate(&mut grads[x.0], dx);
                }
                if self.needs(*gain) {
                    let shape = self.t(*gain).shape().to_vec();
                    accumulate(&mut grads[gain.0], Tensor::new(shape, dgain).expect("gain shape"));
                }
                if self.needs(*bias) {
                    let shape = self.t(*bias).shape().to_vec();
                    accumulate(&mut grads[bias.0], Tensor::new(shape, dbias).expect("bias shape"));
                }
            }
            Op::Gather { table, ids } => {
                if self.needs(*table) {
                    let tt = self.t(*table);
                    let slot = slot_or_zeros(&mut grads[table.0], tt.shape());
                    for (r, &id) in ids.iter().enumerate() {
                        for (s, v) in slot.row_mut(id).iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, cache, count } => {
                if self.needs(*logits) {
                    let tl = self.t(*logits);
                    let v = tl.last_dim();
                    let scale = g.item() / *count as f64;
                    let slot = slot_or_zeros(&mut grads[logits.0], tl.shape());
                    for (i, &(r, label)) in cache.rows.iter().enumerate() {
                        let probs = &cache.probs[i * v..(i + 1) * v];
                        let out = slot.row_mut(r);
                        for (o, p) in out.iter_mut().zip(probs) {
                            *o += scale * p;
                        }
                        out[label] -= scale;
                    }
                }
            }
            Op::Custom { inputs, op } => {
                let tensors: Vec<&Tensor> = inputs.iter().map(|v| self.t(*v)).collect();
                let dins = op.backward(&tensors, g);
                for (v, d) in inputs.iter().zip(dins) {
                    if self.needs(*v) {
                        accumulate(&mut grads[v.0], d);
                    }
                }
            }
        }
    }
}

impl<'p> Graph<'p> for Tape<'p> {
    type Value = Var;

    fn param(&mut self, t: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    fn input(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        self.t(*v)
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var, NumericsError> {
        let out = ops::matmul(self.t(*a), self.t(*b))?;
        let ng = self.needs(*a) || self.needs(*b);
        Ok(self.push(Cow::Owned(out), Op::MatMul(*a, *b), ng))
    }

    fn matmul_nt(&mut self, a: &Var, b: &Var) -> Result<Var, NumericsError> {
        let out = ops::matmul_nt(self.t(*a), self.t(*b))?;
        let ng = self.needs(*a) || self.needs(*b);
        Ok(self.push(Cow::Owned(out), Op::MatMulNt(*a, *b), ng))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var, NumericsError> {
        let out = zip_with("add", self.t(*a), self.t(*b), |x, y| x + y)?;
        let ng = self.needs(*a) || self.needs(*b);
        Ok(self.push(Cow::Owned(out), Op::Add(*a, *b), ng))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var, NumericsError> {
        let out = zip_with("mul", self.t(*a), self.t(*b), |x, y| x * y)?;
        let ng = self.needs(*a) || self.needs(*b);
        Ok(self.push(Cow::Owned(out), Op::Mul(*a, *b), ng))
    }

    fn add_row(&mut self, x: &Var, bias: &Var) -> Result<Var, NumericsError> {
        let out = add_row_forward(self.t(*x), self.t(*bias))?;
        let ng = self.needs(*x) || self.needs(*bias);
        Ok(self.push(Cow::Owned(out), Op::AddRow(*x, *bias), ng))
    }

    fn gelu(&mut self, x: &Var) -> Var {
        let out = ops::gelu(self.t(*x));
        let ng = self.needs(*x);
        self.push(Cow::Owned(out), Op::Gelu(*x), ng)
    }

    fn layer_norm(&mut self, x: &Var, gain: &Var, bias: &Var, eps: f64) -> Result<Var, NumericsError> {
        let (out, stats) =
            ops::layer_norm_with_stats(self.t(*x), self.t(*gain).data(), self.t(*bias).data(), eps)?;
        let ng = self.needs(*x) || self.needs(*gain) || self.needs(*bias);
        Ok(self.push(Cow::Owned(out), Op::LayerNorm { x: *x, gain: *gain, bias: *bias, stats }, ng))
    }

    fn gather_rows(&mut self, table: &Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let out = gather_forward(self.t(*table), ids)?;
        let ng = self.needs(*table);
        Ok(self.push(Cow::Owned(out), Op::Gather { table: *table, ids: ids.to_vec() }, ng))
    }

    fn cross_entropy(&mut self, logits: &Var, labels: &[Option<usize>]) -> Result<Var, NumericsError> {
        let ng = self.needs(*logits);
        let (loss, cache) = cross_entropy_forward(self.t(*logits), labels, ng)?;
        let count = labels.iter().filter(|l| l.is_some()).count();
        let cache = cache.unwrap_or(CrossEntropyCache { rows: Vec::new(), probs: Vec::new() });
        Ok(self.push(Cow::Owned(loss), Op::CrossEntropy { logits: *logits, cache, count }, ng))
    }

    fn custom(&mut self, inputs: &[&Var], mut op: Box<dyn CustomOp + 'p>) -> Result<Var, NumericsError> {
        let ng = inputs.iter().any(|v| self.needs(**v));
        let out = {
            let tensors: Vec<&Tensor> = inputs.iter().map(|v| self.t(**v)).collect();
            op.forward(&tensors, ng)?
        };
        let inputs = inputs.iter().map(|v| **v).collect();
        Ok(self.push(Cow::Owned(out), Op::Custom { inputs, op }, ng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let x = Tensor::from_vec(vec![3.0]);
        let mut tape = Tape::new();
        let v = tape.param(&x);
        let y = tape.mul(&v, &v).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(v).unwrap().data(), &[6.0]);
    }

    #[test]
    fn inputs_get_no_gradient() {
        let w = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(&w);
        let x = tape.input(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap());
        let y = tape.matmul(&x, &wv).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.get(wv).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn cross_entropy_requires_a_target() {
        let mut tape = Tape::new();
        let l = tape.input(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.cross_entropy(&l, &[None, None]), Err(NumericsError::NoTargets)));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::zeros(&[2]);
        let mut tape = Tape::new();
        let v = tape.param(&x);
        assert!(tape.backward(v).is_err());
    }

    #[test]
    fn eager_and_tape_agree() {
        let a = Tensor::new(vec![2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let gain = Tensor::from_vec(vec![1.5, 0.5]);
        let bias = Tensor::from_vec(vec![0.1, -0.1]);
        fn run<'p, G: Graph<'p>>(g: &mut G, a: &'p Tensor, gain: &'p Tensor, bias: &'p Tensor) -> f64 {
            let av = g.param(a);
            let gv = g.param(gain);
            let bv = g.param(bias);
            let h = g.layer_norm(&av, &gv, &bv, 1e-5).unwrap();
            let h = g.gelu(&h);
            let h = g.matmul_nt(&h, &av).unwrap();
            let l = g.cross_entropy(&h, &[Some(1), Some(0)]).unwrap();
            g.value(&l).item()
        }
        let e = run(&mut Eager, &a, &gain, &bias);
        let t = run(&mut Tape::new(), &a, &gain, &bias);
        assert_eq!(e.to_bits(), t.to_bits());
    }
}
