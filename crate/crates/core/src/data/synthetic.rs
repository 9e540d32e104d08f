use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::Rng;
use rand::SeedableRng;

use super::corpus::{ComponentKind, NewsItem};
use crate::error::{EmberError, Result};
use crate::forensics::{FeatureTable, ImageFeature};

/// Knobs for the generated corpus. Defaults are the desk-scale quickstart
/// sizes.
#[derive(Clone, Copy, Debug)]
pub struct SyntheticOptions {
    pub topics: usize,
    pub embed_dim: usize,
    pub feature_width: usize,
    pub words_per_topic: usize,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            topics: 6,
            embed_dim: 32,
            feature_width: 32,
            words_per_topic: 20,
        }
    }
}

/// Ground truth the generator constructed for one item: which latent topic
/// each component was drawn from. Real items share one topic across all
/// components; fake items carry exactly one off-topic component.
#[derive(Clone, Debug)]
pub struct SyntheticTruth {
    pub id: String,
    pub label: u8,
    pub component_topics: BTreeMap<ComponentKind, usize>,
}

impl SyntheticTruth {
    /// The constructed classification rule: real iff all components agree.
    pub fn all_components_share_a_topic(&self) -> bool {
        let mut topics = self.component_topics.values();
        match topics.next() {
            Some(first) => topics.all(|t| t == first),
            None => true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub items: Vec<NewsItem>,
    /// Token vectors for every generated word, loadable as an embedding file.
    pub embeddings: Vec<(String, Vec<f64>)>,
    pub features: FeatureTable,
    pub truth: Vec<SyntheticTruth>,
}

struct Topic {
    embed_center: Vec<f64>,
    orig_center: Vec<f64>,
    ela_center: Vec<f64>,
}

fn unit_direction(dim: usize, rng: &mut StdRng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    for x in &mut v {
        *x *= 1.5 / norm;
    }
    v
}

fn noisy(center: &[f64], amplitude: f64, rng: &mut StdRng) -> Vec<f64> {
    center
        .iter()
        .map(|&c| c + rng.gen_range(-amplitude..amplitude))
        .collect()
}

fn token_name(topic: usize, word: usize) -> String {
    format!("t{topic}w{word:02}")
}

/// Generate a separable corpus of `n` items. `mismatch_rate` is the fraction
/// of items whose components are mixed across topics (and therefore labeled
/// fake); the default rate of one third mirrors a 1:2 fake:real imbalance.
pub fn generate_synthetic(
    n: usize,
    mismatch_rate: f64,
    seed: u64,
    opts: &SyntheticOptions,
) -> Result<SyntheticCorpus> {
    if n < 20 {
        return Err(EmberError::Config(format!(
            "synthetic corpus needs at least 20 items, asked for {n}"
        )));
    }
    if !(0.0..=1.0).contains(&mismatch_rate) {
        return Err(EmberError::Config(format!(
            "mismatch rate must lie in [0, 1], got {mismatch_rate}"
        )));
    }
    if opts.topics < 2 {
        return Err(EmberError::Config("need at least 2 latent topics".into()));
    }

    let mut rng = StdRng::seed_from_u64(seed);

    let topics: Vec<Topic> = (0..opts.topics)
        .map(|_| Topic {
            embed_center: unit_direction(opts.embed_dim, &mut rng),
            orig_center: unit_direction(opts.feature_width, &mut rng),
            ela_center: unit_direction(opts.feature_width, &mut rng),
        })
        .collect();

    let mut embeddings = Vec::with_capacity(opts.topics * opts.words_per_topic);
    for (t, topic) in topics.iter().enumerate() {
        for w in 0..opts.words_per_topic {
            embeddings.push((token_name(t, w), noisy(&topic.embed_center, 0.15, &mut rng)));
        }
    }

    let n_fake = (n as f64 * mismatch_rate).round() as usize;
    let mut items = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let mut features = FeatureTable::new(opts.feature_width);

    for i in 0..n {
        let fake = i < n_fake;
        let id = format!("s{i:05}");
        let base_topic = rng.gen_range(0..opts.topics);

        let mut component_topics = BTreeMap::new();
        for kind in ComponentKind::ALL {
            component_topics.insert(kind, base_topic);
        }
        if fake {
            let odd = ComponentKind::ALL[rng.gen_range(0..ComponentKind::ALL.len())];
            let mut odd_topic = rng.gen_range(0..opts.topics);
            while odd_topic == base_topic {
                odd_topic = rng.gen_range(0..opts.topics);
            }
            component_topics.insert(odd, odd_topic);
        }

        let sentence = |topic: usize, min_len: usize, max_len: usize, rng: &mut StdRng| {
            let len = rng.gen_range(min_len..=max_len);
            (0..len)
                .map(|_| token_name(topic, rng.gen_range(0..opts.words_per_topic)))
                .collect::<Vec<String>>()
        };

        let headline = sentence(component_topics[&ComponentKind::Headline], 4, 7, &mut rng);
        let body_topic = component_topics[&ComponentKind::Body];
        let body: Vec<Vec<String>> = (0..rng.gen_range(2..=4))
            .map(|_| sentence(body_topic, 4, 8, &mut rng))
            .collect();
        let comment_topic = component_topics[&ComponentKind::Comments];
        let comments: Vec<Vec<String>> = (0..rng.gen_range(1..=3))
            .map(|_| sentence(comment_topic, 3, 6, &mut rng))
            .collect();

        let image_topic = component_topics[&ComponentKind::Images];
        let image_count = rng.gen_range(1..=2);
        let mut image_refs = Vec::with_capacity(image_count);
        for j in 0..image_count {
            let image_id = format!("{id}_img{j}");
            features.insert(ImageFeature::new(
                image_id.clone(),
                noisy(&topics[image_topic].orig_center, 0.1, &mut rng),
                noisy(&topics[image_topic].ela_center, 0.1, &mut rng),
            ))?;
            image_refs.push(image_id);
        }

        items.push(NewsItem {
            id: id.clone(),
            label: (!fake) as u8,
            headline,
            body,
            comments,
            image_refs,
        });
        truth.push(SyntheticTruth {
            id,
            label: (!fake) as u8,
            component_topics,
        });
    }

    Ok(SyntheticCorpus {
        items,
        embeddings,
        features,
        truth,
    })
}
