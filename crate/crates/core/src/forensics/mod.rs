//! Image forensics: error level analysis over real image files, plus
//! ingestion of precomputed backbone feature vectors.

mod ela;
mod features;

pub use ela::{ela, ela_feature_vector, luma_feature_vector, ElaMap, DEFAULT_ERROR_LEVEL};
pub use features::{load_image_features, write_image_features, FeatureTable, ImageFeature};
