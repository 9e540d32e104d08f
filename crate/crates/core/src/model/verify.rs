//! End-to-end gradient verification: every differentiable module gets a toy
//! fixture whose analytic gradients are compared against central differences.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::Rng;
use rand::SeedableRng;

use crate::data::{
    generate_synthetic, EmbeddingTable, EncodedItem, SyntheticOptions, TruncationCaps,
};
use crate::error::Result;
use crate::extractors::{
    register_body_extractor, register_comment_extractor, register_headline_extractor,
    register_image_extractor, BodyExtractor, CommentExtractor, HeadlineExtractor, ImageExtractor,
    ImageNodes,
};
use crate::fusion::{
    component_from_rows, register_aggregator, register_co_attention, BackwardAggregator,
    CoAttention,
};
use crate::numerics::gradcheck::{check_against, GradCheckReport, DELTA};
use crate::numerics::layers::{
    bidirectional_encode, register_attention, register_gru, register_lstm, register_mlp_head,
    Attention, GruCell, LstmCell, MlpHead, Recurrent,
};
use crate::numerics::params::{ParamStore, Session};
use crate::numerics::tape::NodeId;
use crate::numerics::Tensor;

use super::config::TrainConfig;
use super::network::{batch_gradients, Architecture};

/// One verified module.
pub struct ModuleCheck {
    pub module: String,
    pub report: GradCheckReport,
}

fn random_rows(rng: &mut StdRng, n: usize, width: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..width).map(|_| rng.gen_range(-0.9..0.9)).collect())
        .collect()
}

fn sum_of_squares(sess: &mut Session, node: NodeId) -> Result<NodeId> {
    let squared = sess.tape.mul(node, node)?;
    Ok(sess.tape.sum_all(squared))
}

type LossAndGrads<'a> = Box<dyn Fn(&ParamStore) -> Result<(f64, BTreeMap<String, Tensor>)> + 'a>;

struct ModuleFixture<'a> {
    name: &'static str,
    store: ParamStore,
    loss: LossAndGrads<'a>,
}

fn run_fixture(
    fixture: ModuleFixture,
    samples: usize,
    seed: u64,
    corrupt: Option<&str>,
) -> Result<ModuleCheck> {
    let ModuleFixture {
        name,
        mut store,
        loss,
    } = fixture;
    let (_, mut analytic) = loss(&store)?;
    if let Some(path) = corrupt {
        if let Some(grad) = analytic.get_mut(path) {
            for g in grad.data_mut() {
                *g += 1.0;
            }
        }
    }
    let report = check_against(
        &mut store,
        &analytic,
        |s| loss(s).map(|(l, _)| l),
        samples,
        DELTA,
        seed,
    )?;
    Ok(ModuleCheck {
        module: name.to_string(),
        report,
    })
}

/// Check every module at the given sampling budget. `corrupt` is a test hook
/// that perturbs the named parameter's analytic gradient before comparison.
pub fn verify_gradients(
    samples: usize,
    seed: u64,
    corrupt: Option<&str>,
) -> Result<Vec<ModuleCheck>> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut checks = Vec::new();

    // Recurrent cells: loss is the squared norm of every step output.
    {
        let mut store = ParamStore::new();
        register_gru(&mut store, "g", 3, 4, &mut rng).unwrap();
        let inputs = random_rows(&mut rng, 3, 3);
        let fixture = ModuleFixture {
            name: "numerics.gru",
            store,
            loss: Box::new(move |s| {
                let mut sess = Session::new(s);
                let cell = Recurrent::Gru(GruCell::bind(&mut sess, "g", 4)?);
                let xs: Vec<NodeId> = inputs
                    .iter()
                    .map(|r| sess.leaf(Tensor::row(r.clone())))
                    .collect();
                let outs = cell.run(&mut sess.tape, &xs)?;
                let stacked = sess.tape.concat_rows(&outs)?;
                let loss = sum_of_squares(&mut sess, stacked)?;
                Ok((
                    sess.tape.value(loss).item()?,
                    sess.parameter_gradients(loss)?,
                ))
            }),
        };
        checks.push(run_fixture(fixture, samples, seed ^ 1, corrupt)?);
    }
    {
        let mut store = ParamStore::new();
        register_lstm(&mut store, "l", 3, 4, &mut rng).unwrap();
        let inputs = random_rows(&mut rng, 3, 3);
        let fixture = ModuleFixture {
            name: "numerics.lstm",
            store,
            loss: Box::new(move |s| {
                let mut sess = Session::new(s);
                let cell = Recurrent::Lstm(LstmCell::bind(&mut sess, "l", 4)?);
                let xs: Vec<NodeId> = inputs
                    .iter()
                    .map(|r| sess.leaf(Tensor::row(r.clone())))
                    .collect();
                let outs = cell.run(&mut sess.tape, &xs)?;
                let stacked = sess.tape.concat_rows(&outs)?;
                let loss = sum_of_squares(&mut sess, stacked)?;
                Ok((
                    sess.tape.value(loss).item()?,
                    sess.parameter_gradients(loss)?,
                ))
            }),
        };
        checks.push(run_fixture(fixture, samples, seed ^ 2, corrupt)?);
    }
    {
        let mut store = ParamStore::new();
        register_gru(&mut store, "bi.fwd", 3, 3, &mut rng).unwrap();
        register_gru(&mut store, "bi.bwd", 3, 3, &mut rng).unwrap();
        let inputs = random_rows(&mut rng, 4, 3);
        let fixture = ModuleFixture {
            name: "numerics.bidirectional",
            store,
            loss: Box::new(move |s| {
                let mut sess = Session::new(s);
                let fwd = Recurrent::Gru(GruCell::bind(&mut sess, "bi.fwd", 3)?);
                let bwd = Recurrent::Gru(GruCell::bind(&mut sess, "bi.bwd", 3)?);
                let xs: Vec<NodeId> = inputs
                    .iter()
                    .map(|r| sess.leaf(Tensor::row(r.clone())))
                    .collect();
                let outs = bidirectional_encode(&mut sess.tape, &fwd, &bwd, &xs)?;
                let stacked = sess.tape.concat_rows(&outs)?;
                let loss = sum_of_squares(&mut sess, stacked)?;
                Ok((
                    sess.tape.value(loss).item()?,
                    sess.parameter_gradients(loss)?,
                ))
            }),
        };
        checks.push(run_fixture(fixture, samples, seed ^ 3, corrupt)?);
    }
    // Attention pooling exercises the softmax backward through both outputs.
    {
        let mut store = ParamStore::new();
        register_attention(&mut store, "att", 4, 3, &mut rng).unwrap();
        let inputs = random_rows(&mut rng, 4, 4);
        let fixture = ModuleFixture {
            name: "numerics.attention",
            store,
            loss: Box::new(move |s| {
                let mut sess = Session::new(s);
                let att = Attention::bind(&mut sess, "att")?;
                let rows: Vec<NodeId> = inputs
                    .iter()
                    .map(|r| sess.leaf(Tensor::row(r.clone())))
                    .collect();
                let (weights, pooled) = att.pool(&mut sess.tape, &rows, None)?;
                let a = sum_of_squares(&mut sess, pooled)?;
                let b = sum_of_squares(&mut sess, weights)?;
                let loss = sess.tape.add(a, b)?;
                Ok((
                    sess.tape.value(loss).item()?,
                    sess.parameter_gradients(loss)?,
                ))
            }),
        };
        checks.push(run_fixture(fixture, samples, seed ^ 4, corrupt)?);
    }
    // Prediction head plus the clipped cross-entropy.
    {
        let mut store = ParamStore::new();
        register_mlp_head(&mut store, "head", 5, &mut rng).unwrap();
        let inputs = random_rows(&mut rng, 2, 5);
        let fixture = ModuleFixture {
            name: "numerics.mlp_cross_entropy",
            store,
            loss: Box::new(move |s| {
                let mut sess = Session::new(s);
                let head = MlpHead::bind(&mut sess, "head")?;
                let x0 = sess.leaf(Tensor::row(inputs[0].clone()));
                let x1 = sess.leaf(Tensor::row(inputs[1].clone()));
                let p0 = head.apply(&mut sess.tape, x0)?;
                let p1 = head.apply(&mut sess.tape, x1)?;
                let l0 = sess.tape.binary_cross_entropy(p0, 1.0)?;
                let l1 = sess.tape.binary_cross_entropy(p1, 0.0)?;
                let loss = sess.tape.add(l0, l1)?;
                Ok((
                    sess.tape.value(loss).item()?,
                    sess.parameter_gradients(loss)?,
                ))
            }),
        };
        checks.push(run_fixture(fixture, samples, seed ^ 5, corrupt)?);
    }

    // The four component extractors.
    {
        let mut store = ParamStore::new();
        register_headline_extractor(&mut store, 4, 3, &mut rng).unwrap();
        let words = random_rows(&mut rng, 4, 4);
        let fixture = ModuleFixture {
            name: "extractors.headline",
            store,
            loss: Box::new(move |s| {
                let mut sess = Session::new(s);
                let hfe = HeadlineExtractor::bind(&mut sess, 3)?;
                let xs: Vec<NodeId> = words
                    .iter()
                    .map(|r| sess.leaf(Tensor::row(r.clone())))
                    .collect();
                let out = hfe.encode(&mut sess.tape, &xs)?;
                let loss = sum_of_squares(&mut sess, out.matrix)?;
                Ok((
                    sess.tape.value(loss).item()?,
                    sess.parameter_gradients(loss)?,
                ))
            }),
        };
        checks.push(run_fixture(fixture, samples, seed ^ 6, corrupt)?);
    }
    {
        let mut store = ParamStore::new();
        register_body_extractor(&mut store, 4, 3, &mut rng).unwrap();
        let s1 = random_rows(&mut rng, 3, 4);
        let s2 = random_rows(&mut rng, 2, 4);
        let fixture = ModuleFixture {
            name: "extractors.body",
            store,
            loss: Box::new(move |s| {
                let mut sess = Session::new(s);
                let bfe = BodyExtractor::bind(&mut sess, 3)?;
                let sent1: Vec<NodeId> = s1
                    .iter()
                    .map(|r| sess.leaf(Tensor::row(r.clone())))
                    .collect();
                let sent2: Vec<NodeId> = s2
                    .iter()
                    .map(|r| sess.leaf(Tensor::row(r.clone())))
                    .collect();
                let out = bfe.encode(&mut sess.tape, &[sent1, sent2])?;
                let loss = sum_of_squares(&mut sess, out.matrix)?;
                Ok((
                    sess.tape.value(loss).item()?,
                    sess.parameter_gradients(loss)?,
                ))
            }),
        };
        checks.push(run_fixture(fixture, samples, seed ^ 7, corrupt)?);
    }
    {
        let mut store = ParamStore::new();
        register_comment_extractor(&mut store, 4, 3, &mut rng).unwrap();
        let c1 = random_rows(&mut rng, 2, 4);
        let c2 = random_rows(&mut rng, 3, 4);
        let fixture = ModuleFixture {
            name: "extractors.comments",
            store,
            loss: Box::new(move |s| {
                let mut sess = Session::new(s);
                let cfe = CommentExtractor::bind(&mut sess, 3)?;
                let a: Vec<NodeId> = c1
                    .iter()
                    .map(|r| sess.leaf(Tensor::row(r.clone())))
                    .collect();
                let b: Vec<NodeId> = c2
                    .iter()
                    .map(|r| sess.leaf(Tensor::row(r.clone())))
                    .collect();
                let out = cfe.encode(&mut sess.tape, &[a, b])?;
                let loss = sum_of_squares(&mut sess, out.matrix)?;
                Ok((
                    sess.tape.value(loss).item()?,
                    sess.parameter_gradients(loss)?,
                ))
            }),
        };
        checks.push(run_fixture(fixture, samples, seed ^ 8, corrupt)?);
    }
    {
        let mut store = ParamStore::new();
        register_image_extractor(&mut store, 5, 3, &mut rng).unwrap();
        let pairs = random_rows(&mut rng, 4, 5);
        let fixture = ModuleFixture {
            name: "extractors.images",
            store,
            loss: Box::new(move |s| {
                let mut sess = Session::new(s);
                let ife = ImageExtractor::bind(&mut sess, 3, true)?;
                let images: Vec<ImageNodes> = pairs
                    .chunks(2)
                    .map(|pair| ImageNodes {
                        original: sess.leaf(Tensor::row(pair[0].clone())),
                        ela: sess.leaf(Tensor::row(pair[1].clone())),
                    })
                    .collect();
                let out = ife.encode(&mut sess.tape, &images)?;
                let loss = sum_of_squares(&mut sess, out.matrix)?;
                Ok((
                    sess.tape.value(loss).item()?,
                    sess.parameter_gradients(loss)?,
                ))
            }),
        };
        checks.push(run_fixture(fixture, samples, seed ^ 9, corrupt)?);
    }

    // Co-attention and the backward aggregator.
    {
        let mut store = ParamStore::new();
        register_co_attention(&mut store, "pair.HB", 4, 3, &mut rng).unwrap();
        let d_rows = random_rows(&mut rng, 3, 4);
        let e_rows = random_rows(&mut rng, 2, 4);
        let fixture = ModuleFixture {
            name: "fusion.co_attention",
            store,
            loss: Box::new(move |s| {
                let mut sess = Session::new(s);
                let coatt = CoAttention::bind(&mut sess, "pair.HB")?;
                let d = component_from_rows(
                    &mut sess.tape,
                    crate::data::ComponentKind::Headline,
                    &d_rows,
                )?;
                let e =
                    component_from_rows(&mut sess.tape, crate::data::ComponentKind::Body, &e_rows)?;
                let out = coatt.apply(&mut sess.tape, &d, &e)?;
                let a = sum_of_squares(&mut sess, out.fused)?;
                let b = sum_of_squares(&mut sess, out.affinity)?;
                let loss = sess.tape.add(a, b)?;
                Ok((
                    sess.tape.value(loss).item()?,
                    sess.parameter_gradients(loss)?,
                ))
            }),
        };
        checks.push(run_fixture(fixture, samples, seed ^ 10, corrupt)?);
    }
    {
        let mut store = ParamStore::new();
        register_aggregator(&mut store, 4, 4, &mut rng).unwrap();
        let seq = random_rows(&mut rng, 4, 4);
        let fixture = ModuleFixture {
            name: "fusion.aggregate",
            store,
            loss: Box::new(move |s| {
                let mut sess = Session::new(s);
                let agg = BackwardAggregator::bind(&mut sess, 4)?;
                let xs: Vec<NodeId> = seq
                    .iter()
                    .map(|r| sess.leaf(Tensor::row(r.clone())))
                    .collect();
                let out = agg.apply(&mut sess.tape, &xs)?;
                let loss = sum_of_squares(&mut sess, out)?;
                Ok((
                    sess.tape.value(loss).item()?,
                    sess.parameter_gradients(loss)?,
                ))
            }),
        };
        checks.push(run_fixture(fixture, samples, seed ^ 11, corrupt)?);
    }

    // The full network: joint loss over a two-item toy batch.
    {
        let opts = SyntheticOptions {
            topics: 3,
            embed_dim: 5,
            feature_width: 4,
            words_per_topic: 6,
        };
        let corpus = generate_synthetic(20, 0.5, seed, &opts)?;
        let table = EmbeddingTable::from_pairs(corpus.embeddings.clone(), opts.embed_dim)?;
        let config = TrainConfig {
            hidden: 3,
            co_k: 2,
            lambda: 0.7,
            ..TrainConfig::default()
        };
        let arch = Architecture::resolve(&config, table.dim(), corpus.features.width())?;
        let mut store = ParamStore::new();
        arch.register_params(&mut store, &table, seed)?;
        let caps = TruncationCaps::default();
        let items: Vec<EncodedItem> = corpus.items[..2]
            .iter()
            .map(|i| EncodedItem::encode(i, &table, &caps))
            .collect::<Result<_>>()?;
        let features = corpus.features;
        let fixture = ModuleFixture {
            name: "model.joint_loss",
            store,
            loss: Box::new(move |s| {
                let refs: Vec<&EncodedItem> = items.iter().collect();
                batch_gradients(&arch, s, &refs, &table, &features, config.lambda)
            }),
        };
        checks.push(run_fixture(fixture, samples, seed ^ 12, corrupt)?);
    }

    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::TOLERANCE;

    #[test]
    fn every_module_passes_at_a_small_budget() {
        let checks = verify_gradients(24, 2024, None).unwrap();
        assert_eq!(checks.len(), 12);
        for c in &checks {
            assert!(
                c.report.passed(),
                "{} failed: max rel err {} at {}[{}] (analytic {}, numeric {})",
                c.module,
                c.report.max_rel_err,
                c.report.worst_path,
                c.report.worst_index,
                c.report.analytic,
                c.report.numeric
            );
            assert!(c.report.max_rel_err < TOLERANCE);
        }
        // The attention-only landscape is smooth enough for a tighter bound.
        let attention = checks
            .iter()
            .find(|c| c.module == "numerics.attention")
            .unwrap();
        assert!(
            attention.report.max_rel_err < 1e-6,
            "attention subnetwork err {}",
            attention.report.max_rel_err
        );
    }

    #[test]
    fn corrupted_gradient_is_detected_and_named() {
        let checks = verify_gradients(64, 7, Some("aggregator.gru.w_xz")).unwrap();
        let agg = checks
            .iter()
            .find(|c| c.module == "fusion.aggregate")
            .unwrap();
        assert!(!agg.report.passed(), "corruption must be caught");
        assert_eq!(agg.report.worst_path, "aggregator.gru.w_xz");
    }
}
