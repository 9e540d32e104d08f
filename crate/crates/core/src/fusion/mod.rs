//! Inter-component fusion: pairwise co-attention over every two components,
//! the reading-sequence pair ordering, and the backward recurrent aggregation
//! of the pair features.

use rand::rngs::StdRng;

use crate::data::ComponentKind;
use crate::error::{EmberError, Result};
use crate::extractors::EncodedComponent;
use crate::numerics::layers::{register_attention, register_gru, Attention, GruCell, Recurrent};
use crate::numerics::params::{register_weight, ParamStore, Session};
use crate::numerics::tape::{NodeId, Tape};
use crate::numerics::Tensor;

/// The order readers walk through the components; drives both the pair
/// sequence and the backward aggregation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReadingOrder {
    kinds: Vec<ComponentKind>,
}

impl ReadingOrder {
    pub fn new(kinds: Vec<ComponentKind>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for k in &kinds {
            if !seen.insert(*k) {
                return Err(EmberError::Config(format!(
                    "component {k} repeats in reading order"
                )));
            }
        }
        if kinds.len() < 2 {
            return Err(EmberError::Config(format!(
                "reading order needs at least 2 components, got {}",
                kinds.len()
            )));
        }
        Ok(ReadingOrder { kinds })
    }

    /// Parse a compact string such as "HICB".
    pub fn parse(s: &str) -> Result<Self> {
        ReadingOrder::new(ComponentKind::parse_set(s)?)
    }

    pub fn kinds(&self) -> &[ComponentKind] {
        &self.kinds
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn contains(&self, kind: ComponentKind) -> bool {
        self.kinds.contains(&kind)
    }

    pub fn rank(&self, kind: ComponentKind) -> Option<usize> {
        self.kinds.iter().position(|&k| k == kind)
    }

    /// The last-read component; refinement is conducted on it.
    pub fn last(&self) -> ComponentKind {
        *self.kinds.last().expect("reading order is non-empty")
    }

    /// Drop one component, keeping the relative order of the rest.
    pub fn without(&self, kind: ComponentKind) -> Result<Self> {
        ReadingOrder::new(self.kinds.iter().copied().filter(|&k| k != kind).collect())
    }

    pub fn as_string(&self) -> String {
        self.kinds.iter().map(|k| k.letter()).collect()
    }
}

impl Default for ReadingOrder {
    fn default() -> Self {
        ReadingOrder {
            kinds: vec![
                ComponentKind::Headline,
                ComponentKind::Images,
                ComponentKind::Comments,
                ComponentKind::Body,
            ],
        }
    }
}

/// All unordered component pairs, sorted by (reading rank of the later
/// component, reading rank of the earlier one). For H,I,C,B this yields
/// HI, HC, IC, HB, IB, CB.
pub fn pair_order(order: &ReadingOrder) -> Vec<(ComponentKind, ComponentKind)> {
    let kinds = order.kinds();
    let mut pairs = Vec::with_capacity(kinds.len() * (kinds.len() - 1) / 2);
    for later in 1..kinds.len() {
        for earlier in 0..later {
            pairs.push((kinds[earlier], kinds[later]));
        }
    }
    pairs
}

/// Tag used in parameter paths and reports, e.g. "HI".
pub fn pair_tag(pair: (ComponentKind, ComponentKind)) -> String {
    format!("{}{}", pair.0.letter(), pair.1.letter())
}

/// Learnable tensors of one co-attention block. Each component pair owns an
/// independent set.
pub struct CoAttention {
    w_m: NodeId,
    w_d: NodeId,
    w_e: NodeId,
    w_de: NodeId,
    w_ed: NodeId,
}

pub fn register_co_attention(
    store: &mut ParamStore,
    prefix: &str,
    two_h: usize,
    k: usize,
    rng: &mut StdRng,
) -> Result<()> {
    register_weight(store, &format!("{prefix}.w_m"), two_h, two_h, rng)?;
    register_weight(store, &format!("{prefix}.w_d"), two_h, k, rng)?;
    register_weight(store, &format!("{prefix}.w_e"), two_h, k, rng)?;
    register_weight(store, &format!("{prefix}.w_de"), k, 1, rng)?;
    register_weight(store, &format!("{prefix}.w_ed"), k, 1, rng)?;
    Ok(())
}

/// Outputs of one co-attention application, all tape nodes: the two enhanced
/// pooled representations, their concatenation, and the attention
/// diagnostics (affinity matrix and both weight vectors).
#[derive(Clone, Copy, Debug)]
pub struct CoAttentionNodes {
    /// Pooled first input informed by the second, `1 x 2h`.
    pub enhanced_d: NodeId,
    /// Pooled second input informed by the first, `1 x 2h`.
    pub enhanced_e: NodeId,
    /// `[enhanced_d, enhanced_e]`, `1 x 4h`.
    pub fused: NodeId,
    /// Affinity matrix, `Q x N` (second input positions by first input positions).
    pub affinity: NodeId,
    /// Attention over the first input's positions, `1 x N`.
    pub attn_d: NodeId,
    /// Attention over the second input's positions, `1 x Q`.
    pub attn_e: NodeId,
}

impl CoAttention {
    pub fn bind(sess: &mut Session, prefix: &str) -> Result<Self> {
        Ok(CoAttention {
            w_m: sess.param(&format!("{prefix}.w_m"))?,
            w_d: sess.param(&format!("{prefix}.w_d"))?,
            w_e: sess.param(&format!("{prefix}.w_e"))?,
            w_de: sess.param(&format!("{prefix}.w_de"))?,
            w_ed: sess.param(&format!("{prefix}.w_ed"))?,
        })
    }

    /// Parallel co-attention between two encoded components.
    ///
    /// With row-major sequences D (N x 2h) and E (Q x 2h):
    /// affinity A = tanh(E Wm D^T), H_D = tanh(D Wd + A^T (E We)),
    /// H_E = tanh(E We + A (D Wd)), attention = position softmax of
    /// H_D w_de / H_E w_ed, and each side is pooled by its attention.
    pub fn apply(
        &self,
        tape: &mut Tape,
        d: &EncodedComponent,
        e: &EncodedComponent,
    ) -> Result<CoAttentionNodes> {
        let d_mat = d.matrix;
        let e_mat = e.matrix;
        let (_, dw) = tape.value(d_mat).shape();
        let (_, ew) = tape.value(e_mat).shape();
        if dw != ew {
            return Err(EmberError::dims(
                "co-attention widths",
                dw.to_string(),
                ew.to_string(),
            ));
        }

        let e_wm = tape.matmul(e_mat, self.w_m)?;
        let d_t = tape.transpose(d_mat);
        let affinity_pre = tape.matmul(e_wm, d_t)?;
        let affinity = tape.tanh(affinity_pre);

        let d_wd = tape.matmul(d_mat, self.w_d)?;
        let e_we = tape.matmul(e_mat, self.w_e)?;

        let a_t = tape.transpose(affinity);
        let cross_d = tape.matmul(a_t, e_we)?;
        let h_d_pre = tape.add(d_wd, cross_d)?;
        let h_d = tape.tanh(h_d_pre);

        let cross_e = tape.matmul(affinity, d_wd)?;
        let h_e_pre = tape.add(e_we, cross_e)?;
        let h_e = tape.tanh(h_e_pre);

        let scores_d = tape.matmul(h_d, self.w_de)?;
        let scores_d_row = tape.transpose(scores_d);
        let attn_d = tape.softmax_rows(scores_d_row, Some(&d.mask))?;

        let scores_e = tape.matmul(h_e, self.w_ed)?;
        let scores_e_row = tape.transpose(scores_e);
        let attn_e = tape.softmax_rows(scores_e_row, Some(&e.mask))?;

        let enhanced_d = tape.matmul(attn_d, d_mat)?;
        let enhanced_e = tape.matmul(attn_e, e_mat)?;
        let fused = tape.concat_cols(&[enhanced_d, enhanced_e])?;

        Ok(CoAttentionNodes {
            enhanced_d,
            enhanced_e,
            fused,
            affinity,
            attn_d,
            attn_e,
        })
    }
}

/// Materialized co-attention diagnostics for inspection and export.
#[derive(Clone, Debug, serde::Serialize)]
pub struct CoAttentionDiagnostics {
    pub pair: String,
    pub affinity: Vec<Vec<f64>>,
    pub attn_d: Vec<f64>,
    pub attn_e: Vec<f64>,
}

impl CoAttentionDiagnostics {
    pub fn from_nodes(tape: &Tape, pair: &str, nodes: &CoAttentionNodes) -> Self {
        let aff = tape.value(nodes.affinity);
        let affinity = (0..aff.rows()).map(|r| aff.row_slice(r).to_vec()).collect();
        CoAttentionDiagnostics {
            pair: pair.to_string(),
            affinity,
            attn_d: tape.value(nodes.attn_d).data().to_vec(),
            attn_e: tape.value(nodes.attn_e).data().to_vec(),
        }
    }
}

/// Aggregator over the fused pair sequence: one GRU consuming the sequence
/// backwards (last pair first), final hidden state out.
pub struct BackwardAggregator {
    cell: GruCell,
}

pub fn register_aggregator(
    store: &mut ParamStore,
    in_dim: usize,
    hidden: usize,
    rng: &mut StdRng,
) -> Result<()> {
    register_gru(store, "aggregator.gru", in_dim, hidden, rng)
}

impl BackwardAggregator {
    pub fn bind(sess: &mut Session, hidden: usize) -> Result<Self> {
        Ok(BackwardAggregator {
            cell: GruCell::bind(sess, "aggregator.gru", hidden)?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, sequence: &[NodeId]) -> Result<NodeId> {
        if sequence.is_empty() {
            return Err(EmberError::EmptyInput("aggregator sequence"));
        }
        let reversed: Vec<NodeId> = sequence.iter().rev().copied().collect();
        let cell = Recurrent::Gru(self.cell);
        let outputs = cell.run(tape, &reversed)?;
        Ok(*outputs.last().expect("non-empty sequence"))
    }
}

/// Ablation-only substitute: additive attention pooling over the pair
/// features instead of the backward recurrence.
pub(crate) struct AttentionAggregator {
    attn: Attention,
}

pub(crate) fn register_attention_aggregator(
    store: &mut ParamStore,
    in_dim: usize,
    rng: &mut StdRng,
) -> Result<()> {
    register_attention(store, "aggregator.attn", in_dim, in_dim, rng)
}

impl AttentionAggregator {
    pub(crate) fn bind(sess: &mut Session) -> Result<Self> {
        Ok(AttentionAggregator {
            attn: Attention::bind(sess, "aggregator.attn")?,
        })
    }

    pub(crate) fn apply(&self, tape: &mut Tape, sequence: &[NodeId]) -> Result<NodeId> {
        let (_, pooled) = self.attn.pool(tape, sequence, None)?;
        Ok(pooled)
    }
}

/// Ablation-only substitute: bidirectional GRU, final states of both
/// directions concatenated.
pub(crate) struct BiGruAggregator {
    fwd: GruCell,
    bwd: GruCell,
}

pub(crate) fn register_bigru_aggregator(
    store: &mut ParamStore,
    in_dim: usize,
    hidden: usize,
    rng: &mut StdRng,
) -> Result<()> {
    let half = (hidden / 2).max(1);
    register_gru(store, "aggregator.bigru.fwd", in_dim, half, rng)?;
    register_gru(store, "aggregator.bigru.bwd", in_dim, half, rng)?;
    Ok(())
}

impl BiGruAggregator {
    pub(crate) fn bind(sess: &mut Session, hidden: usize) -> Result<Self> {
        let half = (hidden / 2).max(1);
        Ok(BiGruAggregator {
            fwd: GruCell::bind(sess, "aggregator.bigru.fwd", half)?,
            bwd: GruCell::bind(sess, "aggregator.bigru.bwd", half)?,
        })
    }

    pub(crate) fn apply(&self, tape: &mut Tape, sequence: &[NodeId]) -> Result<NodeId> {
        if sequence.is_empty() {
            return Err(EmberError::EmptyInput("aggregator sequence"));
        }
        let fwd = Recurrent::Gru(self.fwd);
        let bwd = Recurrent::Gru(self.bwd);
        let f = fwd.run(tape, sequence)?;
        let reversed: Vec<NodeId> = sequence.iter().rev().copied().collect();
        let b = bwd.run(tape, &reversed)?;
        tape.concat_cols(&[*f.last().unwrap(), *b.last().unwrap()])
    }
}

/// Helper for tests and oracles: wrap plain row vectors as an encoded
/// component on the given tape.
pub fn component_from_rows(
    tape: &mut Tape,
    kind: ComponentKind,
    rows: &[Vec<f64>],
) -> Result<EncodedComponent> {
    if rows.is_empty() {
        return Err(EmberError::EmptyInput("component rows"));
    }
    let nodes: Vec<NodeId> = rows
        .iter()
        .map(|r| tape.leaf(Tensor::row(r.clone())))
        .collect();
    let matrix = tape.concat_rows(&nodes)?;
    Ok(EncodedComponent {
        kind,
        rows: nodes,
        mask: vec![true; rows.len()],
        matrix,
    })
}
