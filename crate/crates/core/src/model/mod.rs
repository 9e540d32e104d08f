//! The full detection model: configuration, network assembly, the joint
//! training objective with early stopping, evaluation metrics, ablation
//! variants and bit-exact checkpointing.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod network;
pub mod train;
pub mod verify;

pub use ablate::{
    ablate, load_variants, write_ablation_table, AblationRow, AblationTable, AblationVariant,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use config::{lambda_preset, parse_config_file, parse_config_text, Averaging, TrainConfig};
pub use eval::{
    attention_diagnostics, evaluate, metrics_from_confusion, Confusion, EvalReport, ItemPrediction,
    DECISION_THRESHOLD,
};
pub use network::{
    batch_gradients, batch_loss, run_item, AggregatorKind, Architecture, EmberNetwork, ItemOutputs,
};
pub use train::{
    evaluate_split, prepare_corpus, train, EpochRecord, PreparedCorpus, Split, TrainOutcome,
};
pub use verify::{verify_gradients, ModuleCheck};
