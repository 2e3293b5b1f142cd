//! Reverse-mode differentiation over matrices.
//!
//! Every operation appends a node holding its forward value and enough
//! bookkeeping to push gradients back to its inputs. [`Tape::backward`]
//! walks the nodes in exact reverse execution order and accumulates
//! parameter gradients into a [`ParamStore`].
//!
//! Variable-length batches use a padded, time-major-within-utterance
//! layout: utterance `b`, frame `t` lives in row `b * max_len + t`.
//! Operations that reduce over time take a [`Segments`] describing the
//! valid length of each utterance and never read padded rows.

use rand::Rng;

use super::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Valid lengths of a padded batch of sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    lengths: Vec<usize>,
    max_len: usize,
}

impl Segments {
    pub fn new(lengths: Vec<usize>, max_len: usize) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        if let Some(&bad) = lengths.iter().find(|&&l| l == 0 || l > max_len) {
            return Err(Error::Data(format!(
                "sequence length {bad} outside 1..={max_len}"
            )));
        }
        Ok(Segments { lengths, max_len })
    }

    /// Segments padded to the longest length.
    pub fn from_lengths(lengths: Vec<usize>) -> Result<Self> {
        let max_len = lengths.iter().copied().max().unwrap_or(0);
        Self::new(lengths, max_len)
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// Rows of the padded layout.
    pub fn rows(&self) -> usize {
        self.batch() * self.max_len
    }

    #[inline]
    pub fn row(&self, b: usize, t: usize) -> usize {
        b * self.max_len + t
    }

    /// Which utterances still have a frame at step `t`.
    pub fn mask_at(&self, t: usize) -> Vec<bool> {
        self.lengths.iter().map(|&l| t < l).collect()
    }

    fn check_rows(&self, op: &'static str, m: &Matrix) -> Result<()> {
        if m.rows() != self.rows() {
            return Err(Error::Dimension {
                op,
                left: m.shape(),
                right: (self.rows(), m.cols()),
            });
        }
        Ok(())
    }
}

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    /// Elementwise product with a constant, e.g. a dropout mask.
    Scale(Var, Matrix),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    StackSteps(Vec<Var>, usize),
    SelectRows {
        new: Var,
        prev: Var,
        mask: Vec<bool>,
    },
    SegMean(Var, Segments),
    /// Source row for each output entry, row-major over the output.
    SegMax(Var, Vec<usize>),
    AttnPool {
        values: Var,
        scores: Var,
        segs: Segments,
        weights: Matrix,
    },
    PairwiseAdd {
        audio: Var,
        text: Var,
        batch: usize,
        audio_len: usize,
        text_len: usize,
    },
    AlignPool {
        values: Var,
        scores: Var,
        audio: Segments,
        text_len: usize,
        weights: Matrix,
    },
    SumAll(Var),
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Matrix,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Record of executed differentiable operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A constant leaf; receives no gradient.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input)
    }

    /// A leaf bound to a parameter slot; its gradient lands in that slot.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Adds a `1×c` row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(bias));
        if bs.0 != 1 || bs.1 != xs.1 {
            return Err(Error::Dimension {
                op: "add_bias",
                left: xs,
                right: bs,
            });
        }
        let mut value = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..value.rows() {
            value.row_mut(r).iter_mut().zip(&b).for_each(|(v, b)| *v += b);
        }
        Ok(self.push(value, Op::AddBias(x, bias)))
    }

    /// `x · W + b`, applied to every row of `x`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let mut value = self.value(a).clone();
        value
            .data_mut()
            .iter_mut()
            .zip(self.value(b).data())
            .for_each(|(x, y)| *x *= y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    /// Inverted dropout. Identity when `rate == 0` or outside training.
    pub fn dropout(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if rate == 0.0 || !training {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let (r, c) = self.shape(x);
        let mask_data = (0..r * c)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mask = Matrix::from_vec(r, c, mask_data)?;
        let mut value = self.value(x).clone();
        value
            .data_mut()
            .iter_mut()
            .zip(mask.data())
            .for_each(|(v, m)| *v *= m);
        Ok(self.push(value, Op::Scale(x, mask)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(Error::Dimension {
                op: "concat_cols",
                left: sa,
                right: sb,
            });
        }
        let mut value = Matrix::zeros(sa.0, sa.1 + sb.1);
        for r in 0..sa.0 {
            let row = value.row_mut(r);
            row[..sa.1].copy_from_slice(self.nodes[a.0].value.row(r));
            row[sa.1..].copy_from_slice(self.nodes[b.0].value.row(r));
        }
        Ok(self.push(value, Op::ConcatCols(a, b)))
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x);
        if start > end || end > s.1 {
            return Err(Error::Dimension {
                op: "slice_cols",
                left: s,
                right: (start, end),
            });
        }
        let src = self.value(x);
        let mut value = Matrix::zeros(s.0, end - start);
        for r in 0..s.0 {
            value.row_mut(r).copy_from_slice(&src.row(r)[start..end]);
        }
        Ok(self.push(value, Op::SliceCols(x, start)))
    }

    /// Rows of `x` picked by index, in order.
    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let s = self.shape(x);
        if let Some(&bad) = rows.iter().find(|&&r| r >= s.0) {
            return Err(Error::Dimension {
                op: "gather_rows",
                left: s,
                right: (bad, s.1),
            });
        }
        let src = self.value(x);
        let mut value = Matrix::zeros(rows.len(), s.1);
        for (i, &r) in rows.iter().enumerate() {
            value.row_mut(i).copy_from_slice(src.row(r));
        }
        Ok(self.push(value, Op::GatherRows(x, rows)))
    }

    /// Interleaves per-step `B×c` matrices into the padded `(B·T)×c` layout.
    pub fn stack_steps(&mut self, steps: Vec<Var>) -> Result<Var> {
        let Some(&first) = steps.first() else {
            return Err(Error::Data("stack_steps needs at least one step".into()));
        };
        let (batch, cols) = self.shape(first);
        for &s in &steps {
            if self.shape(s) != (batch, cols) {
                return Err(Error::Dimension {
                    op: "stack_steps",
                    left: (batch, cols),
                    right: self.shape(s),
                });
            }
        }
        let t_max = steps.len();
        let mut value = Matrix::zeros(batch * t_max, cols);
        for (t, &s) in steps.iter().enumerate() {
            let src = &self.nodes[s.0].value;
            for b in 0..batch {
                value.row_mut(b * t_max + t).copy_from_slice(src.row(b));
            }
        }
        Ok(self.push(value, Op::StackSteps(steps, t_max)))
    }

    /// Row `r` from `new` where `mask[r]`, otherwise from `prev`.
    pub fn select_rows(&mut self, new: Var, prev: Var, mask: Vec<bool>) -> Result<Var> {
        self.same_shape("select_rows", new, prev)?;
        if mask.len() != self.shape(new).0 {
            return Err(Error::Dimension {
                op: "select_rows",
                left: self.shape(new),
                right: (mask.len(), 1),
            });
        }
        let mut value = self.value(prev).clone();
        for (r, &m) in mask.iter().enumerate() {
            if m {
                value.row_mut(r).copy_from_slice(self.nodes[new.0].value.row(r));
            }
        }
        Ok(self.push(value, Op::SelectRows { new, prev, mask }))
    }

    /// Mean over the valid frames of each utterance: `(B·T)×c → B×c`.
    pub fn seg_mean(&mut self, x: Var, segs: &Segments) -> Result<Var> {
        let src = self.value(x);
        segs.check_rows("seg_mean", src)?;
        let cols = src.cols();
        let mut value = Matrix::zeros(segs.batch(), cols);
        for (b, &len) in segs.lengths().iter().enumerate() {
            let out = value.row_mut(b);
            for t in 0..len {
                out.iter_mut()
                    .zip(src.row(segs.row(b, t)))
                    .for_each(|(o, v)| *o += v);
            }
            out.iter_mut().for_each(|o| *o /= len as f64);
        }
        Ok(self.push(value, Op::SegMean(x, segs.clone())))
    }

    /// Columnwise max over the valid frames of each utterance.
    pub fn seg_max(&mut self, x: Var, segs: &Segments) -> Result<Var> {
        let src = self.value(x);
        segs.check_rows("seg_max", src)?;
        let cols = src.cols();
        let mut value = Matrix::zeros(segs.batch(), cols);
        let mut argmax = vec![0; segs.batch() * cols];
        for (b, &len) in segs.lengths().iter().enumerate() {
            for c in 0..cols {
                let mut best_row = segs.row(b, 0);
                let mut best = src.get(best_row, c);
                for t in 1..len {
                    let r = segs.row(b, t);
                    let v = src.get(r, c);
                    if v > best {
                        best = v;
                        best_row = r;
                    }
                }
                value.set(b, c, best);
                argmax[b * cols + c] = best_row;
            }
        }
        Ok(self.push(value, Op::SegMax(x, argmax)))
    }

    /// Attention-weighted sum over time.
    ///
    /// `scores` is `(B·T)×1`; weights are a softmax of the scores over the
    /// valid frames of each utterance. The pooled row is computed as
    /// `Σ e_t x_t / Σ e_t` with `e_t = exp(s_t − max s)`, so equal scores
    /// reproduce [`seg_mean`](Self::seg_mean) bit for bit.
    pub fn attn_pool(&mut self, values: Var, scores: Var, segs: &Segments) -> Result<Var> {
        let x = self.value(values);
        let s = self.value(scores);
        segs.check_rows("attn_pool", x)?;
        if s.shape() != (segs.rows(), 1) {
            return Err(Error::Dimension {
                op: "attn_pool",
                left: s.shape(),
                right: (segs.rows(), 1),
            });
        }
        let cols = x.cols();
        let mut value = Matrix::zeros(segs.batch(), cols);
        let mut weights = Matrix::zeros(segs.rows(), 1);
        for (b, &len) in segs.lengths().iter().enumerate() {
            let rows = (0..len).map(|t| segs.row(b, t));
            let z = softmax_accumulate(x, s, rows, value.row_mut(b), weights.data_mut());
            debug_assert!(z >= 1.0);
        }
        Ok(self.push(
            value,
            Op::AttnPool {
                values,
                scores,
                segs: segs.clone(),
                weights,
            },
        ))
    }

    /// Every audio row plus every text row of the same utterance.
    ///
    /// `audio` is `(B·Ta)×d`, `text` is `(B·Tt)×d`; the output is
    /// `(B·Tt·Ta)×d` with row `(b·Tt + j)·Ta + t` holding
    /// `audio[b·Ta + t] + text[b·Tt + j]`.
    pub fn pairwise_add(
        &mut self,
        audio: Var,
        text: Var,
        audio_segs: &Segments,
        text_segs: &Segments,
    ) -> Result<Var> {
        let (a, t) = (self.value(audio), self.value(text));
        audio_segs.check_rows("pairwise_add", a)?;
        text_segs.check_rows("pairwise_add", t)?;
        if a.cols() != t.cols() || audio_segs.batch() != text_segs.batch() {
            return Err(Error::Dimension {
                op: "pairwise_add",
                left: a.shape(),
                right: t.shape(),
            });
        }
        let batch = audio_segs.batch();
        let (ta, tt) = (audio_segs.max_len(), text_segs.max_len());
        let cols = a.cols();
        let mut value = Matrix::zeros(batch * tt * ta, cols);
        for b in 0..batch {
            for j in 0..tt {
                let trow = t.row(b * tt + j);
                for s in 0..ta {
                    let out = value.row_mut((b * tt + j) * ta + s);
                    for ((o, x), y) in out.iter_mut().zip(a.row(b * ta + s)).zip(trow) {
                        *o = x + y;
                    }
                }
            }
        }
        Ok(self.push(
            value,
            Op::PairwiseAdd {
                audio,
                text,
                batch,
                audio_len: ta,
                text_len: tt,
            },
        ))
    }

    /// For every text position, an attention-weighted sum of the same
    /// utterance's audio rows.
    ///
    /// `values` is `(B·Ta)×d`; `scores` is `(B·Tt·Ta)×1` in the layout of
    /// [`pairwise_add`](Self::pairwise_add). Output is `(B·Tt)×d`. Padded
    /// audio frames get zero weight; padded text rows are computed but
    /// meaningless.
    pub fn align_pool(
        &mut self,
        values: Var,
        scores: Var,
        audio_segs: &Segments,
        text_segs: &Segments,
    ) -> Result<Var> {
        let x = self.value(values);
        let s = self.value(scores);
        audio_segs.check_rows("align_pool", x)?;
        let (ta, tt) = (audio_segs.max_len(), text_segs.max_len());
        let batch = audio_segs.batch();
        if s.shape() != (batch * tt * ta, 1) || text_segs.batch() != batch {
            return Err(Error::Dimension {
                op: "align_pool",
                left: s.shape(),
                right: (batch * tt * ta, 1),
            });
        }
        let cols = x.cols();
        let mut value = Matrix::zeros(batch * tt, cols);
        let mut weights = Matrix::zeros(batch * tt * ta, 1);
        for (b, &len) in audio_segs.lengths().iter().enumerate() {
            for j in 0..tt {
                let q = b * tt + j;
                // Scores and weights for query q occupy rows q·Ta.., values b·Ta..
                let score_rows = q * ta;
                let value_rows = b * ta;
                let z = softmax_accumulate_offset(
                    x,
                    s,
                    len,
                    value_rows,
                    score_rows,
                    value.row_mut(q),
                    weights.data_mut(),
                );
                debug_assert!(z >= 1.0);
            }
        }
        Ok(self.push(
            value,
            Op::AlignPool {
                values,
                scores,
                audio: audio_segs.clone(),
                text_len: tt,
                weights,
            },
        ))
    }

    /// Normalized attention weights of an [`attn_pool`](Self::attn_pool) or
    /// [`align_pool`](Self::align_pool) node, one per score row.
    pub fn attention_weights(&self, v: Var) -> Option<&Matrix> {
        match &self.nodes[v.0].op {
            Op::AttnPool { weights, .. } | Op::AlignPool { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Sum of all entries as a `1×1` node.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Matrix::row_vector(&[self.value(x).sum()]);
        self.push(value, Op::SumAll(x))
    }

    /// Mean softmax cross-entropy over the batch, as a `1×1` node.
    ///
    /// Row-wise log-sum-exp keeps the loss finite for large logits.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        let (batch, classes) = l.shape();
        if labels.len() != batch {
            return Err(Error::Dimension {
                op: "softmax_xent",
                left: l.shape(),
                right: (labels.len(), 1),
            });
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                classes,
            });
        }
        let probs = softmax_rows(l);
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = l.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        loss /= batch as f64;
        Ok(self.push(
            Matrix::row_vector(&[loss]),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Class probabilities computed by a [`softmax_xent`](Self::softmax_xent) node.
    pub fn probs(&self, loss: Var) -> Option<&Matrix> {
        match &self.nodes[loss.0].op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Propagates `d loss` back through the tape and adds parameter
    /// gradients into `store`.
    ///
    /// A tape can be differentiated once; record a fresh forward pass
    /// before calling this again.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(Error::State("backward already ran on this tape; record a new forward pass"));
        }
        if self.nodes.is_empty() {
            return Err(Error::State("backward called before any forward pass"));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Dimension {
                op: "backward",
                left: self.shape(loss),
                right: (1, 1),
            });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Matrix>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = Acc {
                grads: &mut grads,
                nodes: &self.nodes,
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => store.grad_mut(*id).add_assign(&g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (acc.value(*a), acc.value(*b));
                    g.matmul_nt_acc(bv, acc.slot(*a));
                    av.matmul_tn_acc(&g, acc.slot(*b));
                }
                Op::AddBias(x, b) => {
                    acc.slot(*x).add_assign(&g);
                    let gb = acc.slot(*b).data_mut();
                    for row in g.iter_rows() {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                }
                Op::Add(a, b) => {
                    acc.slot(*a).add_assign(&g);
                    acc.slot(*b).add_assign(&g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (acc.value(*a), acc.value(*b));
                    zip3(acc.slot(*a), &g, bv, |o, g, y| *o += g * y);
                    zip3(acc.slot(*b), &g, av, |o, g, x| *o += g * x);
                }
                Op::Relu(x) => {
                    zip3(acc.slot(*x), &g, &node.value, |o, g, y| {
                        if y > 0.0 {
                            *o += g
                        }
                    });
                }
                Op::Tanh(x) => zip3(acc.slot(*x), &g, &node.value, |o, g, y| *o += g * (1.0 - y * y)),
                Op::Sigmoid(x) => zip3(acc.slot(*x), &g, &node.value, |o, g, y| *o += g * y * (1.0 - y)),
                Op::Scale(x, mask) => zip3(acc.slot(*x), &g, mask, |o, g, m| *o += g * m),
                Op::ConcatCols(a, b) => {
                    let split = acc.value(*a).cols();
                    let ga = acc.slot(*a);
                    for r in 0..g.rows() {
                        add_slice(ga.row_mut(r), &g.row(r)[..split]);
                    }
                    let gb = acc.slot(*b);
                    for r in 0..g.rows() {
                        add_slice(gb.row_mut(r), &g.row(r)[split..]);
                    }
                }
                Op::SliceCols(x, start) => {
                    let gx = acc.slot(*x);
                    let end = start + g.cols();
                    for r in 0..g.rows() {
                        add_slice(&mut gx.row_mut(r)[*start..end], g.row(r));
                    }
                }
                Op::GatherRows(x, rows) => {
                    let gx = acc.slot(*x);
                    for (i, &r) in rows.iter().enumerate() {
                        add_slice(gx.row_mut(r), g.row(i));
                    }
                }
                Op::StackSteps(steps, t_max) => {
                    for (t, &s) in steps.iter().enumerate() {
                        let gs = acc.slot(s);
                        for b in 0..gs.rows() {
                            add_slice(gs.row_mut(b), g.row(b * t_max + t));
                        }
                    }
                }
                Op::SelectRows { new, prev, mask } => {
                    for (r, &m) in mask.iter().enumerate() {
                        let target = if m { *new } else { *prev };
                        add_slice(acc.slot(target).row_mut(r), g.row(r));
                    }
                }
                Op::SegMean(x, segs) => {
                    let gx = acc.slot(*x);
                    for (b, &len) in segs.lengths().iter().enumerate() {
                        let inv = 1.0 / len as f64;
                        for t in 0..len {
                            gx.row_mut(segs.row(b, t))
                                .iter_mut()
                                .zip(g.row(b))
                                .for_each(|(o, v)| *o += v * inv);
                        }
                    }
                }
                Op::SegMax(x, argmax) => {
                    let gx = acc.slot(*x);
                    let cols = g.cols();
                    for (i, &src) in argmax.iter().enumerate() {
                        let c = i % cols;
                        let v = gx.get(src, c) + g.data()[i];
                        gx.set(src, c, v);
                    }
                }
                Op::AttnPool {
                    values,
                    scores,
                    segs,
                    weights,
                } => {
                    let xv = acc.value(*values);
                    let mut gs = Matrix::zeros(segs.rows(), 1);
                    {
                        let gx = acc.slot(*values);
                        for (b, &len) in segs.lengths().iter().enumerate() {
                            let gb = g.row(b);
                            let pooled_dot = dot(gb, node.value.row(b));
                            for t in 0..len {
                                let r = segs.row(b, t);
                                let a = weights.get(r, 0);
                                gx.row_mut(r).iter_mut().zip(gb).for_each(|(o, v)| *o += a * v);
                                gs.set(r, 0, a * (dot(gb, xv.row(r)) - pooled_dot));
                            }
                        }
                    }
                    acc.slot(*scores).add_assign(&gs);
                }
                Op::PairwiseAdd {
                    audio,
                    text,
                    batch,
                    audio_len,
                    text_len,
                } => {
                    let (ta, tt) = (*audio_len, *text_len);
                    {
                        let ga = acc.slot(*audio);
                        for b in 0..*batch {
                            for j in 0..tt {
                                for s in 0..ta {
                                    add_slice(ga.row_mut(b * ta + s), g.row((b * tt + j) * ta + s));
                                }
                            }
                        }
                    }
                    let gt = acc.slot(*text);
                    for b in 0..*batch {
                        for j in 0..tt {
                            let out = gt.row_mut(b * tt + j);
                            for s in 0..ta {
                                add_slice(out, g.row((b * tt + j) * ta + s));
                            }
                        }
                    }
                }
                Op::AlignPool {
                    values,
                    scores,
                    audio,
                    text_len,
                    weights,
                } => {
                    let xv = acc.value(*values);
                    let ta = audio.max_len();
                    let mut gs = Matrix::zeros(weights.rows(), 1);
                    {
                        let gx = acc.slot(*values);
                        for (b, &len) in audio.lengths().iter().enumerate() {
                            for j in 0..*text_len {
                                let q = b * text_len + j;
                                let gq = g.row(q);
                                let pooled_dot = dot(gq, node.value.row(q));
                                for t in 0..len {
                                    let w = q * ta + t;
                                    let r = b * ta + t;
                                    let a = weights.get(w, 0);
                                    gx.row_mut(r).iter_mut().zip(gq).for_each(|(o, v)| *o += a * v);
                                    gs.set(w, 0, a * (dot(gq, xv.row(r)) - pooled_dot));
                                }
                            }
                        }
                    }
                    acc.slot(*scores).add_assign(&gs);
                }
                Op::SumAll(x) => {
                    let s = g.get(0, 0);
                    acc.slot(*x).data_mut().iter_mut().for_each(|o| *o += s);
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    let scale = g.get(0, 0) / labels.len() as f64;
                    let gl = acc.slot(*logits);
                    for (r, &y) in labels.iter().enumerate() {
                        let row = gl.row_mut(r);
                        for (c, (o, p)) in row.iter_mut().zip(probs.row(r)).enumerate() {
                            let onehot = if c == y { 1.0 } else { 0.0 };
                            *o += scale * (p - onehot);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

struct Acc<'a> {
    grads: &'a mut [Option<Matrix>],
    nodes: &'a [Node],
}

impl<'a> Acc<'a> {
    fn value(&self, v: Var) -> &'a Matrix {
        &self.nodes[v.0].value
    }

    fn slot(&mut self, v: Var) -> &mut Matrix {
        let (r, c) = self.nodes[v.0].value.shape();
        self.grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c))
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn add_slice(out: &mut [f64], g: &[f64]) {
    out.iter_mut().zip(g).for_each(|(o, v)| *o += v);
}

fn zip3(out: &mut Matrix, g: &Matrix, other: &Matrix, f: impl Fn(&mut f64, f64, f64)) {
    out.data_mut()
        .iter_mut()
        .zip(g.data())
        .zip(other.data())
        .for_each(|((o, &g), &y)| f(o, g, y));
}

/// Row-wise softmax with max subtraction.
fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Accumulates `Σ e_r x_r / Σ e_r` over `rows` into `out` and writes the
/// normalized weights into `weights[r]`. Returns the normalizer.
fn softmax_accumulate(
    x: &Matrix,
    s: &Matrix,
    rows: impl Iterator<Item = usize> + Clone,
    out: &mut [f64],
    weights: &mut [f64],
) -> f64 {
    let m = rows
        .clone()
        .map(|r| s.get(r, 0))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for r in rows.clone() {
        let e = (s.get(r, 0) - m).exp();
        weights[r] = e;
        z += e;
        out.iter_mut().zip(x.row(r)).for_each(|(o, v)| *o += e * v);
    }
    out.iter_mut().for_each(|o| *o /= z);
    for r in rows {
        weights[r] /= z;
    }
    z
}

fn softmax_accumulate_offset(
    x: &Matrix,
    s: &Matrix,
    len: usize,
    value_base: usize,
    score_base: usize,
    out: &mut [f64],
    weights: &mut [f64],
) -> f64 {
    let m = (0..len)
        .map(|t| s.get(score_base + t, 0))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for t in 0..len {
        let e = (s.get(score_base + t, 0) - m).exp();
        weights[score_base + t] = e;
        z += e;
        out.iter_mut()
            .zip(x.row(value_base + t))
            .for_each(|(o, v)| *o += e * v);
    }
    out.iter_mut().for_each(|o| *o /= z);
    for t in 0..len {
        weights[score_base + t] /= z;
    }
    z
}
