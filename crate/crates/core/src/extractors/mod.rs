//! Intra-component feature extractors, one per news component. Each reads a
//! component the way a person would - word by word, then sentence by
//! sentence - and emits a sequence of `1 x 2h` vectors for the fusion stage.

use rand::rngs::StdRng;

use crate::data::ComponentKind;
use crate::error::{EmberError, Result};
use crate::numerics::layers::{
    bidirectional_encode, register_affine, register_attention, register_gru, register_lstm, Affine,
    Attention, GruCell, LstmCell, Recurrent,
};
use crate::numerics::params::{ParamStore, Session};
use crate::numerics::tape::{NodeId, Tape};

/// A component rendered as a sequence of uniform-width vectors. Width is
/// `2 * hidden` for every kind, which is what lets any two components meet in
/// co-attention. `mask` marks the valid positions; ragged encoding keeps it
/// all-true in practice, and attention excludes any masked position.
#[derive(Clone, Debug)]
pub struct EncodedComponent {
    pub kind: ComponentKind,
    pub rows: Vec<NodeId>,
    pub matrix: NodeId,
    pub mask: Vec<bool>,
}

impl EncodedComponent {
    fn from_rows(tape: &mut Tape, kind: ComponentKind, rows: Vec<NodeId>) -> Result<Self> {
        if rows.is_empty() {
            return Err(EmberError::EmptyInput("encoded component"));
        }
        let matrix = tape.concat_rows(&rows)?;
        let mask = vec![true; rows.len()];
        Ok(EncodedComponent {
            kind,
            rows,
            matrix,
            mask,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Body extractor: word-level bidirectional GRU, additive attention pooling
/// per sentence, then a sentence-level bidirectional GRU.
pub struct BodyExtractor {
    word_fwd: GruCell,
    word_bwd: GruCell,
    word_attn: Attention,
    sent_fwd: GruCell,
    sent_bwd: GruCell,
}

pub fn register_body_extractor(
    store: &mut ParamStore,
    embed_dim: usize,
    hidden: usize,
    rng: &mut StdRng,
) -> Result<()> {
    register_gru(store, "bfe.word.fwd", embed_dim, hidden, rng)?;
    register_gru(store, "bfe.word.bwd", embed_dim, hidden, rng)?;
    register_attention(store, "bfe.word_attn", 2 * hidden, 2 * hidden, rng)?;
    register_gru(store, "bfe.sent.fwd", 2 * hidden, hidden, rng)?;
    register_gru(store, "bfe.sent.bwd", 2 * hidden, hidden, rng)?;
    Ok(())
}

impl BodyExtractor {
    pub fn bind(sess: &mut Session, hidden: usize) -> Result<Self> {
        Ok(BodyExtractor {
            word_fwd: GruCell::bind(sess, "bfe.word.fwd", hidden)?,
            word_bwd: GruCell::bind(sess, "bfe.word.bwd", hidden)?,
            word_attn: Attention::bind(sess, "bfe.word_attn")?,
            sent_fwd: GruCell::bind(sess, "bfe.sent.fwd", hidden)?,
            sent_bwd: GruCell::bind(sess, "bfe.sent.bwd", hidden)?,
        })
    }

    /// `sentences` holds word-vector nodes per sentence, each `1 x d`.
    pub fn encode(&self, tape: &mut Tape, sentences: &[Vec<NodeId>]) -> Result<EncodedComponent> {
        if sentences.is_empty() {
            return Err(EmberError::EmptyInput("body sentences"));
        }
        let word_fwd = Recurrent::Gru(self.word_fwd);
        let word_bwd = Recurrent::Gru(self.word_bwd);
        let mut pooled = Vec::with_capacity(sentences.len());
        for words in sentences {
            let encoded = bidirectional_encode(tape, &word_fwd, &word_bwd, words)?;
            let (_, sentence_vec) = self.word_attn.pool(tape, &encoded, None)?;
            pooled.push(sentence_vec);
        }
        let sent_fwd = Recurrent::Gru(self.sent_fwd);
        let sent_bwd = Recurrent::Gru(self.sent_bwd);
        let rows = bidirectional_encode(tape, &sent_fwd, &sent_bwd, &pooled)?;
        EncodedComponent::from_rows(tape, ComponentKind::Body, rows)
    }
}

/// Headline extractor: the body architecture with both recurrent layers
/// swapped for bidirectional LSTMs, applied to the single headline sentence.
pub struct HeadlineExtractor {
    word_fwd: LstmCell,
    word_bwd: LstmCell,
    word_attn: Attention,
    sent_fwd: LstmCell,
    sent_bwd: LstmCell,
}

pub fn register_headline_extractor(
    store: &mut ParamStore,
    embed_dim: usize,
    hidden: usize,
    rng: &mut StdRng,
) -> Result<()> {
    register_lstm(store, "hfe.word.fwd", embed_dim, hidden, rng)?;
    register_lstm(store, "hfe.word.bwd", embed_dim, hidden, rng)?;
    register_attention(store, "hfe.word_attn", 2 * hidden, 2 * hidden, rng)?;
    register_lstm(store, "hfe.sent.fwd", 2 * hidden, hidden, rng)?;
    register_lstm(store, "hfe.sent.bwd", 2 * hidden, hidden, rng)?;
    Ok(())
}

impl HeadlineExtractor {
    pub fn bind(sess: &mut Session, hidden: usize) -> Result<Self> {
        Ok(HeadlineExtractor {
            word_fwd: LstmCell::bind(sess, "hfe.word.fwd", hidden)?,
            word_bwd: LstmCell::bind(sess, "hfe.word.bwd", hidden)?,
            word_attn: Attention::bind(sess, "hfe.word_attn")?,
            sent_fwd: LstmCell::bind(sess, "hfe.sent.fwd", hidden)?,
            sent_bwd: LstmCell::bind(sess, "hfe.sent.bwd", hidden)?,
        })
    }

    /// Headlines carry exactly one sentence, so the output length is 1.
    pub fn encode(&self, tape: &mut Tape, words: &[NodeId]) -> Result<EncodedComponent> {
        if words.is_empty() {
            return Err(EmberError::EmptyInput("headline words"));
        }
        let word_fwd = Recurrent::Lstm(self.word_fwd);
        let word_bwd = Recurrent::Lstm(self.word_bwd);
        let encoded = bidirectional_encode(tape, &word_fwd, &word_bwd, words)?;
        let (_, sentence_vec) = self.word_attn.pool(tape, &encoded, None)?;
        let sent_fwd = Recurrent::Lstm(self.sent_fwd);
        let sent_bwd = Recurrent::Lstm(self.sent_bwd);
        let rows = bidirectional_encode(tape, &sent_fwd, &sent_bwd, &[sentence_vec])?;
        EncodedComponent::from_rows(tape, ComponentKind::Headline, rows)
    }
}

/// Comment extractor: no word-level recurrence; each comment is pooled by
/// additive attention straight over its word embeddings, then one
/// bidirectional GRU runs across the comment vectors.
pub struct CommentExtractor {
    word_attn: Attention,
    seq_fwd: GruCell,
    seq_bwd: GruCell,
}

pub fn register_comment_extractor(
    store: &mut ParamStore,
    embed_dim: usize,
    hidden: usize,
    rng: &mut StdRng,
) -> Result<()> {
    register_attention(store, "cfe.word_attn", embed_dim, embed_dim, rng)?;
    register_gru(store, "cfe.seq.fwd", embed_dim, hidden, rng)?;
    register_gru(store, "cfe.seq.bwd", embed_dim, hidden, rng)?;
    Ok(())
}

impl CommentExtractor {
    pub fn bind(sess: &mut Session, hidden: usize) -> Result<Self> {
        Ok(CommentExtractor {
            word_attn: Attention::bind(sess, "cfe.word_attn")?,
            seq_fwd: GruCell::bind(sess, "cfe.seq.fwd", hidden)?,
            seq_bwd: GruCell::bind(sess, "cfe.seq.bwd", hidden)?,
        })
    }

    pub fn encode(&self, tape: &mut Tape, comments: &[Vec<NodeId>]) -> Result<EncodedComponent> {
        if comments.is_empty() {
            return Err(EmberError::EmptyInput("comments"));
        }
        let mut pooled = Vec::with_capacity(comments.len());
        for words in comments {
            let (_, vec) = self.word_attn.pool(tape, words, None)?;
            pooled.push(vec);
        }
        let fwd = Recurrent::Gru(self.seq_fwd);
        let bwd = Recurrent::Gru(self.seq_bwd);
        let rows = bidirectional_encode(tape, &fwd, &bwd, &pooled)?;
        EncodedComponent::from_rows(tape, ComponentKind::Comments, rows)
    }
}

/// One image as a pair of backbone vectors (original and ELA halves).
#[derive(Clone, Copy, Debug)]
pub struct ImageNodes {
    pub original: NodeId,
    pub ela: NodeId,
}

/// Image extractor: both halves are projected to the shared `2h` width, an
/// attention layer weighs the original against the ELA view, and a
/// bidirectional GRU runs across the images of the item.
pub struct ImageExtractor {
    project: Affine,
    view_attn: Attention,
    seq_fwd: GruCell,
    seq_bwd: GruCell,
    /// Ablation hook: with the ELA view off, attention sees only the original.
    pub use_ela: bool,
}

pub fn register_image_extractor(
    store: &mut ParamStore,
    feature_width: usize,
    hidden: usize,
    rng: &mut StdRng,
) -> Result<()> {
    register_affine(store, "ife.project", feature_width, 2 * hidden, rng)?;
    register_attention(store, "ife.view_attn", 2 * hidden, 2 * hidden, rng)?;
    register_gru(store, "ife.seq.fwd", 2 * hidden, hidden, rng)?;
    register_gru(store, "ife.seq.bwd", 2 * hidden, hidden, rng)?;
    Ok(())
}

impl ImageExtractor {
    pub fn bind(sess: &mut Session, hidden: usize, use_ela: bool) -> Result<Self> {
        Ok(ImageExtractor {
            project: Affine::bind(sess, "ife.project")?,
            view_attn: Attention::bind(sess, "ife.view_attn")?,
            seq_fwd: GruCell::bind(sess, "ife.seq.fwd", hidden)?,
            seq_bwd: GruCell::bind(sess, "ife.seq.bwd", hidden)?,
            use_ela,
        })
    }

    pub fn encode(&self, tape: &mut Tape, images: &[ImageNodes]) -> Result<EncodedComponent> {
        if images.is_empty() {
            return Err(EmberError::EmptyInput("image features"));
        }
        let mut pooled = Vec::with_capacity(images.len());
        for img in images {
            let orig = self.project.apply(tape, img.original)?;
            let views = if self.use_ela {
                vec![orig, self.project.apply(tape, img.ela)?]
            } else {
                vec![orig]
            };
            let (_, vec) = self.view_attn.pool(tape, &views, None)?;
            pooled.push(vec);
        }
        let fwd = Recurrent::Gru(self.seq_fwd);
        let bwd = Recurrent::Gru(self.seq_bwd);
        let rows = bidirectional_encode(tape, &fwd, &bwd, &pooled)?;
        EncodedComponent::from_rows(tape, ComponentKind::Images, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;

    const D: usize = 5;
    const H: usize = 3;
    const W: usize = 7;

    fn full_store(seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = StdRng::seed_from_u64(seed);
        register_body_extractor(&mut store, D, H, &mut rng).unwrap();
        register_headline_extractor(&mut store, D, H, &mut rng).unwrap();
        register_comment_extractor(&mut store, D, H, &mut rng).unwrap();
        register_image_extractor(&mut store, W, H, &mut rng).unwrap();
        store
    }

    fn word(sess: &mut Session, seed: usize) -> NodeId {
        let v: Vec<f64> = (0..D)
            .map(|i| ((seed * 53 + i * 17) % 23) as f64 / 11.0 - 1.0)
            .collect();
        sess.leaf(Tensor::row(v))
    }

    #[test]
    fn all_extractors_emit_two_h_wide_rows() {
        let store = full_store(1);
        let mut sess = Session::new(&store);

        let bfe = BodyExtractor::bind(&mut sess, H).unwrap();
        let hfe = HeadlineExtractor::bind(&mut sess, H).unwrap();
        let cfe = CommentExtractor::bind(&mut sess, H).unwrap();
        let ife = ImageExtractor::bind(&mut sess, H, true).unwrap();

        let s1: Vec<NodeId> = (0..4).map(|i| word(&mut sess, i)).collect();
        let s2: Vec<NodeId> = (0..2).map(|i| word(&mut sess, i + 9)).collect();
        let body = bfe
            .encode(&mut sess.tape, &[s1.clone(), s2.clone()])
            .unwrap();
        assert_eq!(body.len(), 2);

        let headline = hfe.encode(&mut sess.tape, &s1).unwrap();
        assert_eq!(headline.len(), 1, "headline output length is one sentence");

        let comments = cfe.encode(&mut sess.tape, &[s1.clone(), s2, s1]).unwrap();
        assert_eq!(comments.len(), 3);

        let img = ImageNodes {
            original: sess.leaf(Tensor::row(vec![0.2; W])),
            ela: sess.leaf(Tensor::row(vec![-0.4; W])),
        };
        let images = ife.encode(&mut sess.tape, &[img]).unwrap();
        assert_eq!(images.len(), 1);

        for comp in [&body, &headline, &comments, &images] {
            for row in &comp.rows {
                assert_eq!(sess.tape.value(*row).shape(), (1, 2 * H));
            }
            assert_eq!(sess.tape.value(comp.matrix).shape(), (comp.len(), 2 * H));
            assert!(comp.mask.iter().all(|&m| m));
        }
    }

    #[test]
    fn body_singleton_sentence_and_word() {
        // One sentence of one word still produces a length-1, 2h-wide output.
        let store = full_store(8);
        let mut sess = Session::new(&store);
        let bfe = BodyExtractor::bind(&mut sess, H).unwrap();
        let w = word(&mut sess, 4);
        let out = bfe.encode(&mut sess.tape, &[vec![w]]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(sess.tape.value(out.matrix).shape(), (1, 2 * H));
    }

    #[test]
    fn body_is_sentence_order_sensitive() {
        let store = full_store(2);
        let mut sess = Session::new(&store);
        let bfe = BodyExtractor::bind(&mut sess, H).unwrap();
        let s1: Vec<NodeId> = (0..3).map(|i| word(&mut sess, i)).collect();
        let s2: Vec<NodeId> = (0..3).map(|i| word(&mut sess, i + 5)).collect();
        let s3: Vec<NodeId> = (0..3).map(|i| word(&mut sess, i + 11)).collect();

        let a = bfe
            .encode(&mut sess.tape, &[s1.clone(), s2.clone(), s3.clone()])
            .unwrap();
        let b = bfe.encode(&mut sess.tape, &[s3, s2, s1]).unwrap();
        let first: Vec<f64> = sess.tape.value(a.matrix).data().to_vec();
        let second: Vec<f64> = sess.tape.value(b.matrix).data().to_vec();
        assert_ne!(first, second, "sentence recurrence must be order sensitive");
    }

    #[test]
    fn headline_zero_params_gives_zero_vector() {
        let mut store = ParamStore::new();
        let mut rng = StdRng::seed_from_u64(0);
        register_headline_extractor(&mut store, D, H, &mut rng).unwrap();
        let paths: Vec<String> = store.paths().cloned().collect();
        for p in paths {
            store.get_mut(&p).unwrap().data_mut().fill(0.0);
        }
        let mut sess = Session::new(&store);
        let hfe = HeadlineExtractor::bind(&mut sess, H).unwrap();
        let words: Vec<NodeId> = (0..3).map(|i| word(&mut sess, i)).collect();
        let out = hfe.encode(&mut sess.tape, &words).unwrap();
        assert!(sess.tape.value(out.matrix).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_comments_encode_to_different_positions() {
        let store = full_store(3);
        let mut sess = Session::new(&store);
        let cfe = CommentExtractor::bind(&mut sess, H).unwrap();
        let words: Vec<NodeId> = (0..3).map(|i| word(&mut sess, i)).collect();
        let out = cfe.encode(&mut sess.tape, &[words.clone(), words]).unwrap();
        let r0 = sess.tape.value(out.rows[0]).data().to_vec();
        let r1 = sess.tape.value(out.rows[1]).data().to_vec();
        assert_ne!(r0, r1, "recurrent state distinguishes repeated comments");
    }

    #[test]
    fn single_word_comment_gets_unit_attention() {
        let store = full_store(4);
        let mut sess = Session::new(&store);
        let cfe = CommentExtractor::bind(&mut sess, H).unwrap();
        let w = word(&mut sess, 1);
        let out = cfe.encode(&mut sess.tape, &[vec![w]]).unwrap();
        assert_eq!(out.len(), 1);
        // Attention over a singleton is forced to weight 1.0: the pooled
        // vector equals the embedding itself.
        let att = Attention::bind(&mut sess, "cfe.word_attn").unwrap();
        let (weights, pooled) = att.pool(&mut sess.tape, &[w], None).unwrap();
        assert_eq!(sess.tape.value(weights).data(), &[1.0]);
        assert_eq!(sess.tape.value(pooled).data(), sess.tape.value(w).data());
    }

    #[test]
    fn ela_half_is_live() {
        let store = full_store(5);
        let mut sess = Session::new(&store);
        let with_ela = ImageExtractor::bind(&mut sess, H, true).unwrap();
        let without_ela = ImageExtractor::bind(&mut sess, H, false).unwrap();
        let img = ImageNodes {
            original: sess.leaf(Tensor::row(vec![0.3; W])),
            ela: sess.leaf(Tensor::row(vec![-0.8; W])),
        };
        let a = with_ela.encode(&mut sess.tape, &[img]).unwrap();
        let b = without_ela.encode(&mut sess.tape, &[img]).unwrap();
        let va = sess.tape.value(a.matrix).data().to_vec();
        let vb = sess.tape.value(b.matrix).data().to_vec();
        assert_ne!(va, vb, "dropping the ELA view must change the encoding");
    }

    #[test]
    fn zero_features_zero_params_give_zero_output() {
        let mut store = ParamStore::new();
        let mut rng = StdRng::seed_from_u64(0);
        register_image_extractor(&mut store, W, H, &mut rng).unwrap();
        let paths: Vec<String> = store.paths().cloned().collect();
        for p in paths {
            store.get_mut(&p).unwrap().data_mut().fill(0.0);
        }
        let mut sess = Session::new(&store);
        let ife = ImageExtractor::bind(&mut sess, H, true).unwrap();
        let img = ImageNodes {
            original: sess.leaf(Tensor::row(vec![0.0; W])),
            ela: sess.leaf(Tensor::row(vec![0.0; W])),
        };
        let out = ife.encode(&mut sess.tape, &[img]).unwrap();
        assert!(sess.tape.value(out.matrix).data().iter().all(|&v| v == 0.0));
    }
}
