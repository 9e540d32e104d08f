//! The training loop: shuffled mini-batches, Adam updates on the joint loss
//! and early stopping on validation loss with the best checkpoint retained.

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::{
    split_dataset, DatasetSplits, EmbeddingTable, EncodedItem, NewsItem, SplitSpec, TruncationCaps,
};
use crate::error::{EmberError, Result};
use crate::forensics::FeatureTable;
use crate::numerics::{AdamState, ParamStore};

use super::config::TrainConfig;
use super::eval::{evaluate, EvalReport};
use super::network::{batch_gradients, batch_loss, Architecture};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    #[serde(rename = "val_acc")]
    pub val_accuracy: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub params: ParamStore,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Training hit a non-finite loss and was aborted; `params` still holds
    /// the last good checkpoint.
    pub diverged: bool,
    pub log: Vec<EpochRecord>,
}

/// Corpus prepared for training: encoded items plus the deterministic split.
pub struct PreparedCorpus {
    pub encoded: Vec<EncodedItem>,
    pub splits: DatasetSplits,
}

pub fn prepare_corpus(
    items: &[NewsItem],
    table: &EmbeddingTable,
    seed: u64,
) -> Result<PreparedCorpus> {
    let splits = split_dataset(items, SplitSpec { seed })?;
    let caps = TruncationCaps::default();
    let encoded: Result<Vec<EncodedItem>> = items
        .iter()
        .map(|item| EncodedItem::encode(item, table, &caps))
        .collect();
    Ok(PreparedCorpus {
        encoded: encoded?,
        splits,
    })
}

/// Train the given architecture. The random stream is seeded once and feeds
/// parameter init then per-epoch shuffles, so identical inputs reproduce the
/// run bit for bit.
pub fn train(
    arch: &Architecture,
    corpus: &PreparedCorpus,
    table: &EmbeddingTable,
    features: &FeatureTable,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut store = ParamStore::new();
    arch.register_params(&mut store, table, config.seed)?;
    let mut shuffle_rng = StdRng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = AdamState::new(config.lr);

    let train_items: Vec<&EncodedItem> = corpus
        .splits
        .train
        .iter()
        .map(|&i| &corpus.encoded[i])
        .collect();
    let val_items: Vec<&EncodedItem> = corpus
        .splits
        .val
        .iter()
        .map(|&i| &corpus.encoded[i])
        .collect();
    if train_items.is_empty() || val_items.is_empty() {
        return Err(EmberError::EmptyInput("train or validation split"));
    }

    let mut best_params = store.clone();
    let mut best_val_loss = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut log = Vec::new();
    let mut stopped_early = false;
    let mut diverged = false;
    let mut epochs_run = 0usize;

    let mut order: Vec<usize> = (0..train_items.len()).collect();
    'epochs: for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch_indices in order.chunks(config.batch_size) {
            let batch: Vec<&EncodedItem> = batch_indices.iter().map(|&i| train_items[i]).collect();
            let (loss, grads) =
                match batch_gradients(arch, &store, &batch, table, features, config.lambda) {
                    Ok(ok) => ok,
                    Err(EmberError::NonFinite { .. }) => {
                        diverged = true;
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();
            store.zero_grads();
            for (path, grad) in &grads {
                store.accumulate_grad(path, grad.data())?;
            }
            adam.step(&mut store)?;
        }
        let train_loss = epoch_loss / seen.max(1) as f64;

        let val_loss = batch_loss(arch, &store, &val_items, table, features, config.lambda)?;
        if !val_loss.is_finite() {
            diverged = true;
            break;
        }
        let val_report = evaluate(arch, &store, &val_items, table, features, config.averaging)?;
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy: val_report.accuracy,
        });

        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best_epoch = epoch;
            best_params = store.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if config.early_stopping && since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    if best_epoch == 0 {
        // No epoch completed validation; keep the freshly initialized params.
        best_params = store;
        best_val_loss = f64::NAN;
    }

    Ok(TrainOutcome {
        params: best_params,
        best_epoch,
        best_val_loss,
        epochs_run,
        stopped_early,
        diverged,
        log,
    })
}

/// Evaluate a parameter store over one named split of a prepared corpus.
pub fn evaluate_split(
    arch: &Architecture,
    store: &ParamStore,
    corpus: &PreparedCorpus,
    table: &EmbeddingTable,
    features: &FeatureTable,
    config: &TrainConfig,
    split: Split,
) -> Result<EvalReport> {
    let indices: Vec<usize> = match split {
        Split::Train => corpus.splits.train.clone(),
        Split::Val => corpus.splits.val.clone(),
        Split::Test => corpus.splits.test.clone(),
        Split::All => (0..corpus.encoded.len()).collect(),
    };
    let items: Vec<&EncodedItem> = indices.iter().map(|&i| &corpus.encoded[i]).collect();
    evaluate(arch, store, &items, table, features, config.averaging)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            other => Err(EmberError::Config(format!(
                "unknown split '{other}'; expected train, val, test or all"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticOptions};

    fn tiny_setup(
        seed: u64,
    ) -> (
        TrainConfig,
        Architecture,
        PreparedCorpus,
        EmbeddingTable,
        FeatureTable,
    ) {
        let opts = SyntheticOptions {
            topics: 3,
            embed_dim: 8,
            feature_width: 6,
            words_per_topic: 10,
        };
        let corpus = generate_synthetic(30, 1.0 / 3.0, seed, &opts).unwrap();
        let table = EmbeddingTable::from_pairs(corpus.embeddings.clone(), opts.embed_dim).unwrap();
        let config = TrainConfig {
            hidden: 4,
            co_k: 4,
            lr: 2e-3,
            batch_size: 8,
            max_epochs: 3,
            seed,
            ..TrainConfig::default()
        };
        let arch = Architecture::resolve(&config, table.dim(), corpus.features.width()).unwrap();
        let prepared = prepare_corpus(&corpus.items, &table, config.seed).unwrap();
        (config, arch, prepared, table, corpus.features)
    }

    #[test]
    fn same_seed_trains_to_identical_parameters() {
        let (config, arch, prepared, table, features) = tiny_setup(31);
        let a = train(&arch, &prepared, &table, &features, &config).unwrap();
        let b = train(&arch, &prepared, &table, &features, &config).unwrap();
        for (path, tensor) in a.params.iter() {
            assert_eq!(tensor, b.params.get(path).unwrap(), "param {path} differs");
        }
        assert_eq!(a.best_epoch, b.best_epoch);
        assert_eq!(a.log.len(), b.log.len());
    }

    #[test]
    fn early_stopping_halts_exactly_patience_after_best() {
        // lr = 0 freezes the parameters: epoch 1 sets the best validation
        // loss and every later epoch ties, so training stops at 1 + patience.
        let (mut config, arch, prepared, table, features) = tiny_setup(32);
        config.lr = 0.0;
        config.max_epochs = 50;
        config.patience = 8;
        let outcome = train(&arch, &prepared, &table, &features, &config).unwrap();
        assert!(outcome.stopped_early);
        assert_eq!(outcome.best_epoch, 1);
        assert_eq!(outcome.epochs_run, 9, "stop at best_epoch + patience");
        assert_eq!(outcome.log.len(), 9);
    }

    #[test]
    fn early_stopping_can_be_disabled() {
        let (mut config, arch, prepared, table, features) = tiny_setup(33);
        config.lr = 0.0;
        config.max_epochs = 12;
        config.early_stopping = false;
        let outcome = train(&arch, &prepared, &table, &features, &config).unwrap();
        assert!(!outcome.stopped_early);
        assert_eq!(outcome.epochs_run, 12);
    }

    #[test]
    fn training_log_is_complete_and_finite() {
        let (config, arch, prepared, table, features) = tiny_setup(34);
        let outcome = train(&arch, &prepared, &table, &features, &config).unwrap();
        assert_eq!(outcome.log.len(), outcome.epochs_run);
        for r in &outcome.log {
            assert!(r.train_loss.is_finite());
            assert!(r.val_loss.is_finite());
            assert!((0.0..=1.0).contains(&r.val_accuracy));
        }
        assert!(!outcome.diverged);
    }
}
