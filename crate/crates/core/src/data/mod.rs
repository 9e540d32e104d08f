//! Corpus schema, tokenization, vocabulary and embedding ingestion, dataset
//! splitting, and the synthetic corpus generator.

mod corpus;
mod embeddings;
mod split;
mod synthetic;

pub use corpus::{
    load_corpus, tokenize, tokenize_sentences, write_corpus, ComponentKind, EncodedItem, NewsItem,
    TruncationCaps,
};
pub use embeddings::{
    load_embeddings, write_embeddings, EmbeddingTable, NOCOMP_INDEX, PAD_INDEX, UNK_INDEX,
};
pub use split::{split_dataset, DatasetSplits, SplitSpec};
pub use synthetic::{generate_synthetic, SyntheticCorpus, SyntheticOptions, SyntheticTruth};
