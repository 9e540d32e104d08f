//! Assembly of the full network: encode every active component, run
//! co-attention over each pair, aggregate the pair sequence, and read out the
//! two prediction heads.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::data::{ComponentKind, EmbeddingTable, EncodedItem, NOCOMP_INDEX};
use crate::error::{EmberError, Result};
use crate::extractors::{
    register_body_extractor, register_comment_extractor, register_headline_extractor,
    register_image_extractor, BodyExtractor, CommentExtractor, EncodedComponent, HeadlineExtractor,
    ImageExtractor, ImageNodes,
};
use crate::forensics::FeatureTable;
use crate::fusion::{
    pair_order, pair_tag, register_aggregator, register_attention_aggregator,
    register_bigru_aggregator, register_co_attention, AttentionAggregator, BackwardAggregator,
    BiGruAggregator, CoAttention, CoAttentionDiagnostics, CoAttentionNodes, ReadingOrder,
};
use crate::numerics::layers::{register_mlp_head, MlpHead};
use crate::numerics::params::{ParamStore, Session};
use crate::numerics::tape::NodeId;
use crate::numerics::Tensor;

use super::config::TrainConfig;

/// How the pair-feature sequence is reduced to one vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    /// One GRU consuming the sequence backwards (the model default).
    BackwardGru,
    /// Plain concatenation into a widened head.
    Concat,
    /// Additive attention pooling.
    Attention,
    /// Bidirectional GRU, final states concatenated.
    BiGru,
}

/// A fully resolved model shape: active components, pair sequence, widths.
/// This is what a checkpoint must reproduce to evaluate identically.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Architecture {
    pub hidden: usize,
    pub co_k: usize,
    pub embed_dim: usize,
    pub feature_width: usize,
    pub order: Vec<ComponentKind>,
    pub pair_sequence: Vec<(ComponentKind, ComponentKind)>,
    pub aggregator: AggregatorKind,
    pub use_ela: bool,
    pub train_embeddings: bool,
}

impl Architecture {
    pub fn resolve(config: &TrainConfig, embed_dim: usize, feature_width: usize) -> Result<Self> {
        config.validate()?;
        let order = ReadingOrder::new(config.reading_order())?;
        let pair_sequence = pair_order(&order);
        Ok(Architecture {
            hidden: config.hidden,
            co_k: config.co_k,
            embed_dim,
            feature_width,
            order: order.kinds().to_vec(),
            pair_sequence,
            aggregator: AggregatorKind::BackwardGru,
            use_ela: true,
            train_embeddings: config.train_embeddings,
        })
    }

    pub fn reading_order(&self) -> ReadingOrder {
        ReadingOrder::new(self.order.clone()).expect("stored order is valid")
    }

    pub fn two_h(&self) -> usize {
        2 * self.hidden
    }

    /// Width of each fused pair vector.
    pub fn pair_width(&self) -> usize {
        4 * self.hidden
    }

    /// Hidden width of the aggregator (and of its output).
    pub fn aggregate_width(&self) -> usize {
        4 * self.hidden
    }

    fn main_head_input(&self) -> usize {
        match self.aggregator {
            AggregatorKind::BackwardGru | AggregatorKind::Attention => self.aggregate_width(),
            AggregatorKind::Concat => self.pair_sequence.len() * self.pair_width(),
            AggregatorKind::BiGru => 2 * (self.aggregate_width() / 2).max(1),
        }
    }

    /// Pairs that involve the last-read component, ordered by the partner's
    /// reading rank. The refinement features concatenate the last component's
    /// enhanced representation from each of these.
    pub fn refinement_pairs(&self) -> Vec<(ComponentKind, ComponentKind)> {
        let last = *self.order.last().expect("non-empty order");
        self.pair_sequence
            .iter()
            .copied()
            .filter(|&(a, b)| a == last || b == last)
            .map(|pair| {
                let partner = if pair.0 == last { pair.1 } else { pair.0 };
                (partner, pair)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .map(|(_, pair)| pair)
            .collect()
    }

    fn refine_head_input(&self) -> Result<usize> {
        let n = self.refinement_pairs().len();
        if n == 0 {
            return Err(EmberError::Config(
                "no pair involves the last-read component; refinement undefined".into(),
            ));
        }
        Ok(n * self.two_h())
    }

    /// Create every learnable tensor. Registration order is fixed so that a
    /// seeded init is reproducible.
    pub fn register_params(
        &self,
        store: &mut ParamStore,
        table: &EmbeddingTable,
        seed: u64,
    ) -> Result<()> {
        let mut rng = StdRng::seed_from_u64(seed);
        let h = self.hidden;
        for kind in &self.order {
            match kind {
                ComponentKind::Headline => {
                    register_headline_extractor(store, self.embed_dim, h, &mut rng)?
                }
                ComponentKind::Images => {
                    register_image_extractor(store, self.feature_width, h, &mut rng)?
                }
                ComponentKind::Comments => {
                    register_comment_extractor(store, self.embed_dim, h, &mut rng)?
                }
                ComponentKind::Body => register_body_extractor(store, self.embed_dim, h, &mut rng)?,
            }
        }
        if self.train_embeddings {
            store.register("embed.matrix", table.matrix().clone())?;
        } else {
            // Only the placeholder row for absent components stays learnable
            // when embeddings are frozen.
            store.register(
                "embed.nocomp",
                Tensor::row(table.vector(NOCOMP_INDEX).to_vec()),
            )?;
        }
        for pair in &self.pair_sequence {
            register_co_attention(
                store,
                &format!("pair.{}", pair_tag(*pair)),
                self.two_h(),
                self.co_k,
                &mut rng,
            )?;
        }
        match self.aggregator {
            AggregatorKind::BackwardGru => {
                register_aggregator(store, self.pair_width(), self.aggregate_width(), &mut rng)?
            }
            AggregatorKind::Attention => {
                register_attention_aggregator(store, self.pair_width(), &mut rng)?
            }
            AggregatorKind::BiGru => register_bigru_aggregator(
                store,
                self.pair_width(),
                self.aggregate_width(),
                &mut rng,
            )?,
            AggregatorKind::Concat => {}
        }
        register_mlp_head(store, "head.main", self.main_head_input(), &mut rng)?;
        register_mlp_head(store, "head.refine", self.refine_head_input()?, &mut rng)?;
        Ok(())
    }
}

enum WordSource<'a> {
    Frozen(&'a EmbeddingTable),
    Trainable(NodeId),
}

impl<'a> WordSource<'a> {
    fn lookup(&self, sess: &mut Session, index: usize) -> Result<NodeId> {
        match self {
            WordSource::Frozen(table) => {
                if index == NOCOMP_INDEX {
                    sess.param("embed.nocomp")
                } else {
                    Ok(sess.leaf(Tensor::row(table.vector(index).to_vec())))
                }
            }
            WordSource::Trainable(matrix) => sess.tape.row(*matrix, index),
        }
    }
}

enum Encoder {
    Headline(HeadlineExtractor),
    Images(ImageExtractor),
    Comments(CommentExtractor),
    Body(BodyExtractor),
}

enum Aggregator {
    BackwardGru(BackwardAggregator),
    Concat,
    Attention(AttentionAggregator),
    BiGru(BiGruAggregator),
}

/// All layer handles bound onto one session tape.
pub struct EmberNetwork<'a> {
    arch: &'a Architecture,
    encoders: Vec<(ComponentKind, Encoder)>,
    pairs: Vec<((ComponentKind, ComponentKind), CoAttention)>,
    aggregator: Aggregator,
    head_main: MlpHead,
    head_refine: MlpHead,
}

/// Tape nodes produced by one item forward pass.
pub struct ItemNodes {
    pub prob_main: NodeId,
    pub prob_refine: NodeId,
    pub fea_gru: NodeId,
    pub pair_nodes: Vec<(String, CoAttentionNodes)>,
}

/// Materialized per-item outputs.
#[derive(Clone, Debug)]
pub struct ItemOutputs {
    pub id: String,
    pub label: u8,
    pub prob_main: f64,
    pub prob_refine: f64,
    pub fea_gru: Vec<f64>,
    pub diagnostics: Option<Vec<CoAttentionDiagnostics>>,
}

impl<'a> EmberNetwork<'a> {
    pub fn bind(sess: &mut Session, arch: &'a Architecture) -> Result<Self> {
        let h = arch.hidden;
        let mut encoders = Vec::with_capacity(arch.order.len());
        for kind in &arch.order {
            let encoder = match kind {
                ComponentKind::Headline => Encoder::Headline(HeadlineExtractor::bind(sess, h)?),
                ComponentKind::Images => {
                    Encoder::Images(ImageExtractor::bind(sess, h, arch.use_ela)?)
                }
                ComponentKind::Comments => Encoder::Comments(CommentExtractor::bind(sess, h)?),
                ComponentKind::Body => Encoder::Body(BodyExtractor::bind(sess, h)?),
            };
            encoders.push((*kind, encoder));
        }
        let mut pairs = Vec::with_capacity(arch.pair_sequence.len());
        for pair in &arch.pair_sequence {
            pairs.push((
                *pair,
                CoAttention::bind(sess, &format!("pair.{}", pair_tag(*pair)))?,
            ));
        }
        let aggregator = match arch.aggregator {
            AggregatorKind::BackwardGru => {
                Aggregator::BackwardGru(BackwardAggregator::bind(sess, arch.aggregate_width())?)
            }
            AggregatorKind::Concat => Aggregator::Concat,
            AggregatorKind::Attention => Aggregator::Attention(AttentionAggregator::bind(sess)?),
            AggregatorKind::BiGru => {
                Aggregator::BiGru(BiGruAggregator::bind(sess, arch.aggregate_width())?)
            }
        };
        Ok(EmberNetwork {
            arch,
            encoders,
            pairs,
            aggregator,
            head_main: MlpHead::bind(sess, "head.main")?,
            head_refine: MlpHead::bind(sess, "head.refine")?,
        })
    }

    fn encode_component(
        &self,
        sess: &mut Session,
        encoder: &Encoder,
        item: &EncodedItem,
        words: &WordSource,
        features: &FeatureTable,
    ) -> Result<EncodedComponent> {
        match encoder {
            Encoder::Headline(hfe) => {
                let nodes: Result<Vec<NodeId>> = item
                    .headline
                    .iter()
                    .map(|&i| words.lookup(sess, i))
                    .collect();
                hfe.encode(&mut sess.tape, &nodes?)
            }
            Encoder::Body(bfe) => {
                let mut sentences = Vec::with_capacity(item.body.len());
                for sentence in &item.body {
                    let nodes: Result<Vec<NodeId>> =
                        sentence.iter().map(|&i| words.lookup(sess, i)).collect();
                    sentences.push(nodes?);
                }
                bfe.encode(&mut sess.tape, &sentences)
            }
            Encoder::Comments(cfe) => {
                let mut comments = Vec::with_capacity(item.comments.len());
                for comment in &item.comments {
                    let nodes: Result<Vec<NodeId>> =
                        comment.iter().map(|&i| words.lookup(sess, i)).collect();
                    comments.push(nodes?);
                }
                cfe.encode(&mut sess.tape, &comments)
            }
            Encoder::Images(ife) => {
                let mut images = Vec::new();
                for id in &item.image_refs {
                    let feature = features.resolve(id);
                    images.push(ImageNodes {
                        original: sess.leaf(Tensor::row(feature.original)),
                        ela: sess.leaf(Tensor::row(feature.ela)),
                    });
                }
                if images.is_empty() {
                    // Component absent: a zero feature pair plays the
                    // placeholder role so the pair combinations stay defined.
                    let zero = crate::forensics::ImageFeature::absent("", self.arch.feature_width);
                    images.push(ImageNodes {
                        original: sess.leaf(Tensor::row(zero.original)),
                        ela: sess.leaf(Tensor::row(zero.ela)),
                    });
                }
                ife.encode(&mut sess.tape, &images)
            }
        }
    }

    /// Forward pass for one item. Checks every stage for non-finite values so
    /// a failure names where it happened.
    pub fn forward_item(
        &self,
        sess: &mut Session,
        item: &EncodedItem,
        table: &EmbeddingTable,
        features: &FeatureTable,
    ) -> Result<ItemNodes> {
        let words = if self.arch.train_embeddings {
            WordSource::Trainable(sess.param("embed.matrix")?)
        } else {
            WordSource::Frozen(table)
        };

        let mut encoded: BTreeMap<ComponentKind, EncodedComponent> = BTreeMap::new();
        for (kind, encoder) in &self.encoders {
            let comp = self.encode_component(sess, encoder, item, &words, features)?;
            sess.tape
                .assert_finite(comp.matrix, &format!("extractor:{kind}"))?;
            encoded.insert(*kind, comp);
        }

        let mut pair_nodes = Vec::with_capacity(self.pairs.len());
        let mut fused_sequence = Vec::with_capacity(self.pairs.len());
        for (pair, coatt) in &self.pairs {
            let d = &encoded[&pair.0];
            let e = &encoded[&pair.1];
            let nodes = coatt.apply(&mut sess.tape, d, e)?;
            let tag = pair_tag(*pair);
            sess.tape
                .assert_finite(nodes.fused, &format!("pair:{tag}"))?;
            fused_sequence.push(nodes.fused);
            pair_nodes.push((tag, nodes));
        }

        let fea_gru = match &self.aggregator {
            Aggregator::BackwardGru(agg) => agg.apply(&mut sess.tape, &fused_sequence)?,
            Aggregator::Concat => sess.tape.concat_cols(&fused_sequence)?,
            Aggregator::Attention(agg) => agg.apply(&mut sess.tape, &fused_sequence)?,
            Aggregator::BiGru(agg) => agg.apply(&mut sess.tape, &fused_sequence)?,
        };
        sess.tape.assert_finite(fea_gru, "aggregate")?;

        let prob_main = self.head_main.apply(&mut sess.tape, fea_gru)?;

        // Refinement features: the last-read component's enhanced
        // representation from each of its pairs, in partner reading order.
        let last = *self.arch.order.last().expect("non-empty order");
        let mut refine_parts = Vec::new();
        for refine_pair in self.arch.refinement_pairs() {
            let (_, nodes) = self
                .pairs
                .iter()
                .zip(&pair_nodes)
                .find(|((p, _), _)| *p == refine_pair)
                .map(|((_, _), (tag, nodes))| (tag, nodes))
                .ok_or_else(|| {
                    EmberError::Config("refinement pair missing from pair sequence".into())
                })?;
            let enhanced_last = if refine_pair.1 == last {
                nodes.enhanced_e
            } else {
                nodes.enhanced_d
            };
            refine_parts.push(enhanced_last);
        }
        let fea_refine = sess.tape.concat_cols(&refine_parts)?;
        let prob_refine = self.head_refine.apply(&mut sess.tape, fea_refine)?;
        sess.tape.assert_finite(prob_main, "head:main")?;
        sess.tape.assert_finite(prob_refine, "head:refine")?;

        Ok(ItemNodes {
            prob_main,
            prob_refine,
            fea_gru,
            pair_nodes,
        })
    }

    /// Joint loss node for one item: main cross-entropy plus `lambda` times
    /// the refinement cross-entropy.
    pub fn item_loss(
        &self,
        sess: &mut Session,
        nodes: &ItemNodes,
        label: u8,
        lambda: f64,
    ) -> Result<NodeId> {
        let main = sess
            .tape
            .binary_cross_entropy(nodes.prob_main, label as f64)?;
        let refine = sess
            .tape
            .binary_cross_entropy(nodes.prob_refine, label as f64)?;
        let weighted = sess.tape.scale(refine, lambda);
        sess.tape.add(main, weighted)
    }
}

/// Run one item forward on a fresh tape and materialize the outputs.
pub fn run_item(
    arch: &Architecture,
    store: &ParamStore,
    item: &EncodedItem,
    table: &EmbeddingTable,
    features: &FeatureTable,
    with_diagnostics: bool,
) -> Result<ItemOutputs> {
    let mut sess = Session::new(store);
    let network = EmberNetwork::bind(&mut sess, arch)?;
    let nodes = network.forward_item(&mut sess, item, table, features)?;
    let diagnostics = with_diagnostics.then(|| {
        nodes
            .pair_nodes
            .iter()
            .map(|(tag, n)| CoAttentionDiagnostics::from_nodes(&sess.tape, tag, n))
            .collect()
    });
    Ok(ItemOutputs {
        id: item.id.clone(),
        label: item.label,
        prob_main: sess.tape.value(nodes.prob_main).item()?,
        prob_refine: sess.tape.value(nodes.prob_refine).item()?,
        fea_gru: sess.tape.value(nodes.fea_gru).data().to_vec(),
        diagnostics,
    })
}

/// Mean joint loss and its parameter gradients over a batch.
///
/// Items run on independent tapes (in parallel chunks); gradients are summed
/// in item order and scaled by `1 / batch`, so the result does not depend on
/// the worker count.
pub fn batch_gradients(
    arch: &Architecture,
    store: &ParamStore,
    items: &[&EncodedItem],
    table: &EmbeddingTable,
    features: &FeatureTable,
    lambda: f64,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    if items.is_empty() {
        return Err(EmberError::EmptyInput("gradient batch"));
    }
    let mut total_loss = 0.0;
    let mut total: BTreeMap<String, Tensor> = BTreeMap::new();

    for chunk in items.chunks(8) {
        let partials: Vec<Result<(f64, BTreeMap<String, Tensor>)>> = chunk
            .par_iter()
            .map(|item| {
                let mut sess = Session::new(store);
                let network = EmberNetwork::bind(&mut sess, arch)?;
                let nodes = network.forward_item(&mut sess, item, table, features)?;
                let loss = network.item_loss(&mut sess, &nodes, item.label, lambda)?;
                let value = sess.tape.value(loss).item()?;
                let grads = sess.parameter_gradients(loss)?;
                Ok((value, grads))
            })
            .collect();
        for partial in partials {
            let (loss, grads) = partial?;
            total_loss += loss;
            for (path, grad) in grads {
                match total.get_mut(&path) {
                    Some(slot) => {
                        for (a, b) in slot.data_mut().iter_mut().zip(grad.data()) {
                            *a += b;
                        }
                    }
                    None => {
                        total.insert(path, grad);
                    }
                }
            }
        }
    }

    let scale = 1.0 / items.len() as f64;
    total_loss *= scale;
    for grad in total.values_mut() {
        for v in grad.data_mut() {
            *v *= scale;
        }
    }
    if !total_loss.is_finite() {
        return Err(EmberError::NonFinite {
            stage: "batch loss".into(),
        });
    }
    Ok((total_loss, total))
}

/// Mean joint loss only (no gradients), for validation.
pub fn batch_loss(
    arch: &Architecture,
    store: &ParamStore,
    items: &[&EncodedItem],
    table: &EmbeddingTable,
    features: &FeatureTable,
    lambda: f64,
) -> Result<f64> {
    if items.is_empty() {
        return Err(EmberError::EmptyInput("loss batch"));
    }
    let losses: Vec<Result<f64>> = items
        .par_iter()
        .map(|item| {
            let mut sess = Session::new(store);
            let network = EmberNetwork::bind(&mut sess, arch)?;
            let nodes = network.forward_item(&mut sess, item, table, features)?;
            let loss = network.item_loss(&mut sess, &nodes, item.label, lambda)?;
            sess.tape.value(loss).item()
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / items.len() as f64)
}
