//! Differentiable layer vocabulary: gated recurrent cells, bidirectional
//! sequence encoding, additive attention pooling and small MLP heads.
//!
//! Each layer comes as a pair: a `register_*` function that creates the
//! learnable tensors under a path prefix, and a `bind` step that loads them
//! onto a [`Session`] tape for one forward pass.

use rand::rngs::StdRng;

use super::params::{register_bias, register_weight, ParamStore, Session};
use super::tape::{NodeId, Tape};
use crate::error::{EmberError, Result};

/// Update/reset-gate recurrent cell.
///
/// z = sigmoid(xWxz + hWhz + bz), r = sigmoid(xWxr + hWhr + br),
/// n = tanh(xWxn + (r*h)Whn + bn), h' = (1-z)*n + z*h.
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub hidden: usize,
    w_xz: NodeId,
    w_hz: NodeId,
    b_z: NodeId,
    w_xr: NodeId,
    w_hr: NodeId,
    b_r: NodeId,
    w_xn: NodeId,
    w_hn: NodeId,
    b_n: NodeId,
}

pub fn register_gru(
    store: &mut ParamStore,
    prefix: &str,
    in_dim: usize,
    hidden: usize,
    rng: &mut StdRng,
) -> Result<()> {
    for gate in ["z", "r", "n"] {
        register_weight(store, &format!("{prefix}.w_x{gate}"), in_dim, hidden, rng)?;
        register_weight(store, &format!("{prefix}.w_h{gate}"), hidden, hidden, rng)?;
        register_bias(store, &format!("{prefix}.b_{gate}"), hidden)?;
    }
    Ok(())
}

impl GruCell {
    pub fn bind(sess: &mut Session, prefix: &str, hidden: usize) -> Result<Self> {
        Ok(GruCell {
            hidden,
            w_xz: sess.param(&format!("{prefix}.w_xz"))?,
            w_hz: sess.param(&format!("{prefix}.w_hz"))?,
            b_z: sess.param(&format!("{prefix}.b_z"))?,
            w_xr: sess.param(&format!("{prefix}.w_xr"))?,
            w_hr: sess.param(&format!("{prefix}.w_hr"))?,
            b_r: sess.param(&format!("{prefix}.b_r"))?,
            w_xn: sess.param(&format!("{prefix}.w_xn"))?,
            w_hn: sess.param(&format!("{prefix}.w_hn"))?,
            b_n: sess.param(&format!("{prefix}.b_n"))?,
        })
    }

    fn gate(
        &self,
        tape: &mut Tape,
        x: NodeId,
        h: NodeId,
        wx: NodeId,
        wh: NodeId,
        b: NodeId,
    ) -> Result<NodeId> {
        let xs = tape.matmul(x, wx)?;
        let hs = tape.matmul(h, wh)?;
        let sum = tape.add(xs, hs)?;
        tape.add(sum, b)
    }

    /// One step: `x` is `1 x in_dim`, `h_prev` is `1 x hidden`.
    pub fn step(&self, tape: &mut Tape, x: NodeId, h_prev: NodeId) -> Result<NodeId> {
        let z_pre = self.gate(tape, x, h_prev, self.w_xz, self.w_hz, self.b_z)?;
        let z = tape.sigmoid(z_pre);
        let r_pre = self.gate(tape, x, h_prev, self.w_xr, self.w_hr, self.b_r)?;
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h_prev)?;
        let n_pre = self.gate(tape, x, rh, self.w_xn, self.w_hn, self.b_n)?;
        let n = tape.tanh(n_pre);
        let zn_inv = tape.one_minus(z);
        let keep_new = tape.mul(zn_inv, n)?;
        let keep_old = tape.mul(z, h_prev)?;
        tape.add(keep_new, keep_old)
    }
}

/// Forget/input/output-gate recurrent cell with a separate cell state.
#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    pub hidden: usize,
    w_xi: NodeId,
    w_hi: NodeId,
    b_i: NodeId,
    w_xf: NodeId,
    w_hf: NodeId,
    b_f: NodeId,
    w_xg: NodeId,
    w_hg: NodeId,
    b_g: NodeId,
    w_xo: NodeId,
    w_ho: NodeId,
    b_o: NodeId,
}

pub fn register_lstm(
    store: &mut ParamStore,
    prefix: &str,
    in_dim: usize,
    hidden: usize,
    rng: &mut StdRng,
) -> Result<()> {
    for gate in ["i", "f", "g", "o"] {
        register_weight(store, &format!("{prefix}.w_x{gate}"), in_dim, hidden, rng)?;
        register_weight(store, &format!("{prefix}.w_h{gate}"), hidden, hidden, rng)?;
        register_bias(store, &format!("{prefix}.b_{gate}"), hidden)?;
    }
    Ok(())
}

impl LstmCell {
    pub fn bind(sess: &mut Session, prefix: &str, hidden: usize) -> Result<Self> {
        Ok(LstmCell {
            hidden,
            w_xi: sess.param(&format!("{prefix}.w_xi"))?,
            w_hi: sess.param(&format!("{prefix}.w_hi"))?,
            b_i: sess.param(&format!("{prefix}.b_i"))?,
            w_xf: sess.param(&format!("{prefix}.w_xf"))?,
            w_hf: sess.param(&format!("{prefix}.w_hf"))?,
            b_f: sess.param(&format!("{prefix}.b_f"))?,
            w_xg: sess.param(&format!("{prefix}.w_xg"))?,
            w_hg: sess.param(&format!("{prefix}.w_hg"))?,
            b_g: sess.param(&format!("{prefix}.b_g"))?,
            w_xo: sess.param(&format!("{prefix}.w_xo"))?,
            w_ho: sess.param(&format!("{prefix}.w_ho"))?,
            b_o: sess.param(&format!("{prefix}.b_o"))?,
        })
    }

    fn gate(
        &self,
        tape: &mut Tape,
        x: NodeId,
        h: NodeId,
        wx: NodeId,
        wh: NodeId,
        b: NodeId,
    ) -> Result<NodeId> {
        let xs = tape.matmul(x, wx)?;
        let hs = tape.matmul(h, wh)?;
        let sum = tape.add(xs, hs)?;
        tape.add(sum, b)
    }

    /// One step; returns `(h, c)`.
    pub fn step(
        &self,
        tape: &mut Tape,
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let i_pre = self.gate(tape, x, h_prev, self.w_xi, self.w_hi, self.b_i)?;
        let i = tape.sigmoid(i_pre);
        let f_pre = self.gate(tape, x, h_prev, self.w_xf, self.w_hf, self.b_f)?;
        let f = tape.sigmoid(f_pre);
        let g_pre = self.gate(tape, x, h_prev, self.w_xg, self.w_hg, self.b_g)?;
        let g = tape.tanh(g_pre);
        let o_pre = self.gate(tape, x, h_prev, self.w_xo, self.w_ho, self.b_o)?;
        let o = tape.sigmoid(o_pre);
        let retained = tape.mul(f, c_prev)?;
        let written = tape.mul(i, g)?;
        let c = tape.add(retained, written)?;
        let c_act = tape.tanh(c);
        let h = tape.mul(o, c_act)?;
        Ok((h, c))
    }
}

/// Recurrent state threaded through a sequence pass.
#[derive(Clone, Copy, Debug)]
pub enum CellState {
    Gru(NodeId),
    Lstm { h: NodeId, c: NodeId },
}

impl CellState {
    pub fn output(&self) -> NodeId {
        match self {
            CellState::Gru(h) => *h,
            CellState::Lstm { h, .. } => *h,
        }
    }
}

/// Either recurrent cell, for code that encodes sequences generically.
#[derive(Clone, Copy, Debug)]
pub enum Recurrent {
    Gru(GruCell),
    Lstm(LstmCell),
}

impl Recurrent {
    pub fn hidden(&self) -> usize {
        match self {
            Recurrent::Gru(c) => c.hidden,
            Recurrent::Lstm(c) => c.hidden,
        }
    }

    pub fn start(&self, tape: &mut Tape) -> CellState {
        match self {
            Recurrent::Gru(c) => CellState::Gru(tape.zeros(1, c.hidden)),
            Recurrent::Lstm(c) => CellState::Lstm {
                h: tape.zeros(1, c.hidden),
                c: tape.zeros(1, c.hidden),
            },
        }
    }

    pub fn step(&self, tape: &mut Tape, x: NodeId, state: &CellState) -> Result<CellState> {
        match (self, state) {
            (Recurrent::Gru(cell), CellState::Gru(h)) => {
                Ok(CellState::Gru(cell.step(tape, x, *h)?))
            }
            (Recurrent::Lstm(cell), CellState::Lstm { h, c }) => {
                let (h2, c2) = cell.step(tape, x, *h, *c)?;
                Ok(CellState::Lstm { h: h2, c: c2 })
            }
            _ => Err(EmberError::dims(
                "recurrent step",
                "matching cell/state kinds",
                "mixed kinds",
            )),
        }
    }

    /// Run over a sequence from zero state; returns every hidden output.
    pub fn run(&self, tape: &mut Tape, xs: &[NodeId]) -> Result<Vec<NodeId>> {
        let mut state = self.start(tape);
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            state = self.step(tape, x, &state)?;
            out.push(state.output());
        }
        Ok(out)
    }
}

/// Encode a sequence in both directions; element `t` of the output is
/// `concat(forward_state_t, backward_state_t)` and is `1 x 2*hidden` wide.
pub fn bidirectional_encode(
    tape: &mut Tape,
    fwd: &Recurrent,
    bwd: &Recurrent,
    xs: &[NodeId],
) -> Result<Vec<NodeId>> {
    if xs.is_empty() {
        return Err(EmberError::EmptyInput("bidirectional_encode sequence"));
    }
    let forward = fwd.run(tape, xs)?;
    let reversed: Vec<NodeId> = xs.iter().rev().copied().collect();
    let mut backward = bwd.run(tape, &reversed)?;
    backward.reverse();
    forward
        .into_iter()
        .zip(backward)
        .map(|(f, b)| tape.concat_cols(&[f, b]))
        .collect()
}

/// Additive attention pooling over a sequence of row vectors.
///
/// scores_i = tanh(h_i W + b) . u, weights = softmax(scores),
/// pooled = sum_i weights_i h_i.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    w: NodeId,
    b: NodeId,
    u: NodeId,
}

pub fn register_attention(
    store: &mut ParamStore,
    prefix: &str,
    in_dim: usize,
    att_dim: usize,
    rng: &mut StdRng,
) -> Result<()> {
    register_weight(store, &format!("{prefix}.w"), in_dim, att_dim, rng)?;
    register_bias(store, &format!("{prefix}.b"), att_dim)?;
    register_weight(store, &format!("{prefix}.u"), att_dim, 1, rng)?;
    Ok(())
}

impl Attention {
    pub fn bind(sess: &mut Session, prefix: &str) -> Result<Self> {
        Ok(Attention {
            w: sess.param(&format!("{prefix}.w"))?,
            b: sess.param(&format!("{prefix}.b"))?,
            u: sess.param(&format!("{prefix}.u"))?,
        })
    }

    /// Returns `(weights 1 x n, pooled 1 x m)`. Masked positions receive zero
    /// weight and are excluded from the softmax.
    pub fn pool(
        &self,
        tape: &mut Tape,
        rows: &[NodeId],
        mask: Option<&[bool]>,
    ) -> Result<(NodeId, NodeId)> {
        if rows.is_empty() {
            return Err(EmberError::EmptyInput("attention pool sequence"));
        }
        let stacked = tape.concat_rows(rows)?;
        let projected = tape.matmul(stacked, self.w)?;
        let shifted = tape.add_row(projected, self.b)?;
        let hidden = tape.tanh(shifted);
        let scores = tape.matmul(hidden, self.u)?;
        let scores_row = tape.transpose(scores);
        let weights = tape.softmax_rows(scores_row, mask)?;
        let pooled = tape.matmul(weights, stacked)?;
        Ok((weights, pooled))
    }
}

/// Affine map `y = xW + b`.
#[derive(Clone, Copy, Debug)]
pub struct Affine {
    w: NodeId,
    b: NodeId,
}

pub fn register_affine(
    store: &mut ParamStore,
    prefix: &str,
    in_dim: usize,
    out_dim: usize,
    rng: &mut StdRng,
) -> Result<()> {
    register_weight(store, &format!("{prefix}.w"), in_dim, out_dim, rng)?;
    register_bias(store, &format!("{prefix}.b"), out_dim)?;
    Ok(())
}

impl Affine {
    pub fn bind(sess: &mut Session, prefix: &str) -> Result<Self> {
        Ok(Affine {
            w: sess.param(&format!("{prefix}.w"))?,
            b: sess.param(&format!("{prefix}.b"))?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let prod = tape.matmul(x, self.w)?;
        tape.add_row(prod, self.b)
    }
}

/// Two-layer head: tanh hidden layer, sigmoid scalar output.
#[derive(Clone, Copy, Debug)]
pub struct MlpHead {
    first: Affine,
    second: Affine,
}

/// Hidden width convention for the prediction heads.
pub fn mlp_hidden_width(in_dim: usize) -> usize {
    (in_dim / 2).max(1)
}

pub fn register_mlp_head(
    store: &mut ParamStore,
    prefix: &str,
    in_dim: usize,
    rng: &mut StdRng,
) -> Result<()> {
    let hidden = mlp_hidden_width(in_dim);
    register_affine(store, &format!("{prefix}.fc1"), in_dim, hidden, rng)?;
    register_affine(store, &format!("{prefix}.fc2"), hidden, 1, rng)?;
    Ok(())
}

impl MlpHead {
    pub fn bind(sess: &mut Session, prefix: &str) -> Result<Self> {
        Ok(MlpHead {
            first: Affine::bind(sess, &format!("{prefix}.fc1"))?,
            second: Affine::bind(sess, &format!("{prefix}.fc2"))?,
        })
    }

    /// Returns a `1 x 1` probability node in (0, 1).
    pub fn apply(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let pre = self.first.apply(tape, x)?;
        let hidden = tape.tanh(pre);
        let logit = self.second.apply(tape, hidden)?;
        Ok(tape.sigmoid(logit))
    }
}
