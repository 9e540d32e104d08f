//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records each forward operation; [`Tape::backward`] replays the
//! record in reverse and accumulates gradients for every node via the chain
//! rule. The operation vocabulary is deliberately limited to what the network
//! layers need.

use super::tensor::Tensor;
use crate::error::{EmberError, Result};

/// Probabilities are clipped to `[CLIP, 1 - CLIP]` before any log.
pub const PROB_CLIP: f64 = 1e-7;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Broadcast-add a `1 x c` row vector to every row of an `r x c` matrix.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    /// Row-wise softmax over columns. Masked-out columns get weight zero and
    /// are excluded from normalization.
    SoftmaxRows(NodeId, Option<Vec<bool>>),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    Row(NodeId, usize),
    AddN(Vec<NodeId>),
    SumAll(NodeId),
    /// Binary cross-entropy of a `1 x 1` probability against a fixed label.
    Bce(NodeId, f64),
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.values.push(value);
        self.ops.push(op);
        NodeId(self.values.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> NodeId {
        self.leaf(Tensor::zeros(rows, cols))
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.values[id.0].shape()
    }

    fn check_same_shape(&self, context: &str, a: NodeId, b: NodeId) -> Result<()> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ar != br || ac != bc {
            return Err(EmberError::dims(
                context,
                format!("{ar}x{ac}"),
                format!("{br}x{bc}"),
            ));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(EmberError::dims(
                "matmul",
                format!("inner {ka}"),
                format!("inner {kb}"),
            ));
        }
        let out = matmul_raw(self.values[a.0].data(), self.values[b.0].data(), m, ka, n);
        Ok(self.push(Tensor::from_vec(m, n, out)?, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let src = self.values[a.0].data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let t = Tensor::from_vec(c, r, out).expect("transpose preserves volume");
        self.push(t, Op::Transpose(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        let out = zip_map(self.values[a.0].data(), self.values[b.0].data(), |x, y| {
            x + y
        });
        let (r, c) = self.shape(a);
        Ok(self.push(Tensor::from_vec(r, c, out)?, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("sub", a, b)?;
        let out = zip_map(self.values[a.0].data(), self.values[b.0].data(), |x, y| {
            x - y
        });
        let (r, c) = self.shape(a);
        Ok(self.push(Tensor::from_vec(r, c, out)?, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mul", a, b)?;
        let out = zip_map(self.values[a.0].data(), self.values[b.0].data(), |x, y| {
            x * y
        });
        let (r, c) = self.shape(a);
        Ok(self.push(Tensor::from_vec(r, c, out)?, Op::Mul(a, b)))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != c {
            return Err(EmberError::dims(
                "add_row",
                format!("1x{c}"),
                format!("{rr}x{rc}"),
            ));
        }
        let rv = self.values[row.0].data().to_vec();
        let src = self.values[a.0].data();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(src[i * c + j] + rv[j]);
            }
        }
        Ok(self.push(Tensor::from_vec(r, c, out)?, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.values[a.0].data().iter().map(|v| v * k).collect();
        self.push(Tensor::from_vec(r, c, out).unwrap(), Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.values[a.0].data().iter().map(|v| v + k).collect();
        self.push(Tensor::from_vec(r, c, out).unwrap(), Op::AddScalar(a))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.values[a.0].data().iter().map(|v| v.tanh()).collect();
        self.push(Tensor::from_vec(r, c, out).unwrap(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.values[a.0]
            .data()
            .iter()
            .map(|v| sigmoid(*v))
            .collect();
        self.push(Tensor::from_vec(r, c, out).unwrap(), Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId, mask: Option<&[bool]>) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        if let Some(m) = mask {
            if m.len() != c {
                return Err(EmberError::dims(
                    "softmax mask",
                    c.to_string(),
                    m.len().to_string(),
                ));
            }
            if !m.iter().any(|&keep| keep) {
                return Err(EmberError::EmptyInput(
                    "softmax mask excludes every position",
                ));
            }
        }
        let src = self.values[a.0].data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            softmax_into(row, mask, &mut out[i * c..(i + 1) * c]);
        }
        let mask_owned = mask.map(|m| m.to_vec());
        Ok(self.push(Tensor::from_vec(r, c, out)?, Op::SoftmaxRows(a, mask_owned)))
    }

    /// Stack `1 x c`-compatible blocks (equal column counts) into one matrix.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(EmberError::EmptyInput("concat_rows"));
        }
        let (_, c) = self.shape(parts[0]);
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pc != c {
                return Err(EmberError::dims(
                    "concat_rows",
                    format!("{c} cols"),
                    format!("{pc} cols"),
                ));
            }
            rows += pr;
            data.extend_from_slice(self.values[p.0].data());
        }
        Ok(self.push(
            Tensor::from_vec(rows, c, data)?,
            Op::ConcatRows(parts.to_vec()),
        ))
    }

    /// Concatenate blocks with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(EmberError::EmptyInput("concat_cols"));
        }
        let (r, _) = self.shape(parts[0]);
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pr != r {
                return Err(EmberError::dims(
                    "concat_cols",
                    format!("{r} rows"),
                    format!("{pr} rows"),
                ));
            }
            cols += pc;
        }
        let mut data = Vec::with_capacity(r * cols);
        for i in 0..r {
            for &p in parts {
                let (_, pc) = self.shape(p);
                let src = self.values[p.0].data();
                data.extend_from_slice(&src[i * pc..(i + 1) * pc]);
            }
        }
        Ok(self.push(
            Tensor::from_vec(r, cols, data)?,
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    /// Extract row `index` of a matrix as a `1 x c` vector.
    pub fn row(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        if index >= r {
            return Err(EmberError::dims(
                "row",
                format!("index < {r}"),
                index.to_string(),
            ));
        }
        let data = self.values[a.0].row_slice(index).to_vec();
        Ok(self.push(Tensor::from_vec(1, c, data)?, Op::Row(a, index)))
    }

    pub fn add_n(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(EmberError::EmptyInput("add_n"));
        }
        let (r, c) = self.shape(parts[0]);
        let mut out = self.values[parts[0].0].data().to_vec();
        for &p in &parts[1..] {
            self.check_same_shape("add_n", parts[0], p)?;
            for (o, v) in out.iter_mut().zip(self.values[p.0].data()) {
                *o += v;
            }
        }
        Ok(self.push(Tensor::from_vec(r, c, out)?, Op::AddN(parts.to_vec())))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.values[a.0].data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// Binary cross-entropy `-[y ln p + (1-y) ln(1-p)]` of a scalar
    /// probability node, with the probability clipped to `[PROB_CLIP, 1-PROB_CLIP]`.
    pub fn binary_cross_entropy(&mut self, p: NodeId, label: f64) -> Result<NodeId> {
        if label != 0.0 && label != 1.0 {
            return Err(EmberError::InvalidLabel { value: label });
        }
        let (r, c) = self.shape(p);
        if r != 1 || c != 1 {
            return Err(EmberError::dims(
                "binary_cross_entropy",
                "1x1",
                format!("{r}x{c}"),
            ));
        }
        let raw = self.values[p.0].data()[0];
        let clipped = raw.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        let loss = -(label * clipped.ln() + (1.0 - label) * (1.0 - clipped).ln());
        Ok(self.push(Tensor::scalar(loss), Op::Bce(p, label)))
    }

    /// Error unless every value of the node is finite.
    pub fn assert_finite(&self, id: NodeId, stage: &str) -> Result<()> {
        if self.values[id.0].is_finite() {
            Ok(())
        } else {
            Err(EmberError::NonFinite {
                stage: stage.to_string(),
            })
        }
    }

    /// Accumulate gradients of `loss` (a `1 x 1` node) with respect to every
    /// node on the tape.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let (r, c) = self.shape(loss);
        if r != 1 || c != 1 {
            return Err(EmberError::dims("backward loss", "1x1", format!("{r}x{c}")));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.values.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..self.ops.len()).rev() {
            let upstream = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &upstream, &mut grads)?;
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(
        grads: &mut [Option<Vec<f64>>],
        target: NodeId,
        len: usize,
        add: impl Fn(&mut [f64]),
    ) {
        let slot = grads[target.0].get_or_insert_with(|| vec![0.0; len]);
        add(slot);
    }

    fn propagate(&self, idx: usize, up: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        match &self.ops[idx] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let (_, n) = self.shape(*b);
                let av = self.values[a.0].data();
                let bv = self.values[b.0].data();
                // dA = dC * B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let g = up[i * n + j];
                        if g == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            da[i * k + p] += g * bv[p * n + j];
                        }
                    }
                }
                // dB = A^T * dC
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let av_ip = av[i * k + p];
                        if av_ip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += av_ip * up[i * n + j];
                        }
                    }
                }
                Self::accumulate(grads, *a, m * k, |s| add_into(s, &da));
                Self::accumulate(grads, *b, k * n, |s| add_into(s, &db));
            }
            Op::Transpose(a) => {
                let (r, c) = self.shape(*a);
                let mut da = vec![0.0; r * c];
                // upstream has shape c x r
                for i in 0..c {
                    for j in 0..r {
                        da[j * c + i] = up[i * r + j];
                    }
                }
                Self::accumulate(grads, *a, r * c, |s| add_into(s, &da));
            }
            Op::Add(a, b) => {
                Self::accumulate(grads, *a, up.len(), |s| add_into(s, up));
                Self::accumulate(grads, *b, up.len(), |s| add_into(s, up));
            }
            Op::Sub(a, b) => {
                Self::accumulate(grads, *a, up.len(), |s| add_into(s, up));
                Self::accumulate(grads, *b, up.len(), |s| {
                    for (o, g) in s.iter_mut().zip(up) {
                        *o -= g;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.values[a.0].data().to_vec();
                let bv = self.values[b.0].data().to_vec();
                Self::accumulate(grads, *a, up.len(), |s| {
                    for ((o, g), y) in s.iter_mut().zip(up).zip(&bv) {
                        *o += g * y;
                    }
                });
                Self::accumulate(grads, *b, up.len(), |s| {
                    for ((o, g), x) in s.iter_mut().zip(up).zip(&av) {
                        *o += g * x;
                    }
                });
            }
            Op::AddRow(a, row) => {
                let (r, c) = self.shape(*a);
                Self::accumulate(grads, *a, r * c, |s| add_into(s, up));
                Self::accumulate(grads, *row, c, |s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[j] += up[i * c + j];
                        }
                    }
                });
            }
            Op::Scale(a, k) => {
                let k = *k;
                Self::accumulate(grads, *a, up.len(), |s| {
                    for (o, g) in s.iter_mut().zip(up) {
                        *o += g * k;
                    }
                });
            }
            Op::AddScalar(a) => {
                Self::accumulate(grads, *a, up.len(), |s| add_into(s, up));
            }
            Op::Tanh(a) => {
                let y = self.values[idx].data();
                Self::accumulate(grads, *a, up.len(), |s| {
                    for ((o, g), t) in s.iter_mut().zip(up).zip(y) {
                        *o += g * (1.0 - t * t);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = self.values[idx].data();
                Self::accumulate(grads, *a, up.len(), |s| {
                    for ((o, g), t) in s.iter_mut().zip(up).zip(y) {
                        *o += g * t * (1.0 - t);
                    }
                });
            }
            Op::SoftmaxRows(a, mask) => {
                let (r, c) = self.shape(*a);
                let y = self.values[idx].data();
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &up[i * c..(i + 1) * c];
                    let dot: f64 = yr
                        .iter()
                        .zip(gr)
                        .enumerate()
                        .filter(|(j, _)| mask.as_ref().is_none_or(|m| m[*j]))
                        .map(|(_, (s, g))| s * g)
                        .sum();
                    for j in 0..c {
                        if mask.as_ref().is_none_or(|m| m[j]) {
                            da[i * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                }
                Self::accumulate(grads, *a, r * c, |s| add_into(s, &da));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.shape(p);
                    let span = pr * pc;
                    let seg = &up[offset..offset + span];
                    Self::accumulate(grads, p, span, |s| add_into(s, seg));
                    offset += span;
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = self.shape(NodeId(idx));
                let mut col_offset = 0;
                for &p in parts {
                    let (_, pc) = self.shape(p);
                    let mut seg = vec![0.0; r * pc];
                    for i in 0..r {
                        let base = i * total + col_offset;
                        seg[i * pc..(i + 1) * pc].copy_from_slice(&up[base..base + pc]);
                    }
                    Self::accumulate(grads, p, r * pc, |s| add_into(s, &seg));
                    col_offset += pc;
                }
            }
            Op::Row(a, index) => {
                let (r, c) = self.shape(*a);
                let index = *index;
                Self::accumulate(grads, *a, r * c, |s| {
                    add_into(&mut s[index * c..(index + 1) * c], up);
                });
            }
            Op::AddN(parts) => {
                for &p in parts {
                    Self::accumulate(grads, p, up.len(), |s| add_into(s, up));
                }
            }
            Op::SumAll(a) => {
                let (r, c) = self.shape(*a);
                let g = up[0];
                Self::accumulate(grads, *a, r * c, |s| {
                    for o in s.iter_mut() {
                        *o += g;
                    }
                });
            }
            Op::Bce(p, label) => {
                let raw = self.values[p.0].data()[0];
                // The clip is flat, so clipped probabilities get zero gradient.
                let d = if (PROB_CLIP..=1.0 - PROB_CLIP).contains(&raw) {
                    (raw - label) / (raw * (1.0 - raw))
                } else {
                    0.0
                };
                let g = up[0] * d;
                Self::accumulate(grads, *p, 1, |s| s[0] += g);
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_into(row: &[f64], mask: Option<&[bool]>, out: &mut [f64]) {
    let keep = |j: usize| mask.is_none_or(|m| m[j]);
    let max = row
        .iter()
        .enumerate()
        .filter(|(j, _)| keep(*j))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for (j, &v) in row.iter().enumerate() {
        if keep(j) {
            let e = (v - max).exp();
            out[j] = e;
            denom += e;
        } else {
            out[j] = 0.0;
        }
    }
    for (j, o) in out.iter_mut().enumerate() {
        if keep(j) {
            *o /= denom;
        }
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += a_ip * brow[j];
            }
        }
    }
    c
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
