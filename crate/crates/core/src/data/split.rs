use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;

use super::corpus::NewsItem;
use crate::error::{EmberError, Result};

/// Train/validation/test split in the fixed 8:1:1 ratio.
#[derive(Clone, Copy, Debug)]
pub struct SplitSpec {
    pub seed: u64,
}

/// Index sets into the original item slice; disjoint and covering.
#[derive(Clone, Debug)]
pub struct DatasetSplits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Shuffle deterministically and cut `floor(0.8 n)` / `floor(0.1 n)` /
/// remainder. A split holding only one class is flagged with a warning,
/// not an error.
pub fn split_dataset(items: &[NewsItem], spec: SplitSpec) -> Result<DatasetSplits> {
    let n = items.len();
    if n < 10 {
        return Err(EmberError::Config(format!(
            "dataset too small to split: {n} items, need at least 10"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = StdRng::seed_from_u64(spec.seed);
    indices.shuffle(&mut rng);

    let train_len = (n * 8) / 10;
    let val_len = n / 10;
    let train = indices[..train_len].to_vec();
    let val = indices[train_len..train_len + val_len].to_vec();
    let test = indices[train_len + val_len..].to_vec();

    let mut warnings = Vec::new();
    for (name, split) in [("train", &train), ("val", &val), ("test", &test)] {
        let mut has = [false; 2];
        for &i in split.iter() {
            has[items[i].label as usize] = true;
        }
        if !(has[0] && has[1]) {
            warnings.push(format!("{name} split holds a single class"));
        }
    }

    Ok(DatasetSplits {
        train,
        val,
        test,
        warnings,
    })
}
