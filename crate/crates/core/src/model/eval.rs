//! Evaluation: thresholded prediction, confusion counts and the four
//! headline metrics under weighted or macro averaging.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingTable, EncodedItem};
use crate::error::{EmberError, Result};
use crate::forensics::FeatureTable;
use crate::fusion::CoAttentionDiagnostics;
use crate::numerics::ParamStore;

use super::config::Averaging;
use super::network::{run_item, Architecture};

/// An item is predicted real iff its main-head probability reaches 0.5
/// (ties go to real).
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    /// Real items predicted real.
    pub true_real: usize,
    /// Fake items predicted real.
    pub false_real: usize,
    /// Fake items predicted fake.
    pub true_fake: usize,
    /// Real items predicted fake.
    pub false_fake: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.true_real + self.false_real + self.true_fake + self.false_fake
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemPrediction {
    pub id: String,
    pub label: u8,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub averaging: String,
    pub confusion: Confusion,
    pub per_item: Vec<ItemPrediction>,
}

fn safe_div(n: f64, d: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        n / d
    }
}

/// Metrics from confusion counts alone. Per-class precision/recall/F1 are
/// combined by the chosen averaging.
pub fn metrics_from_confusion(c: &Confusion, averaging: Averaging) -> (f64, f64, f64, f64) {
    let total = c.total() as f64;
    let accuracy = safe_div((c.true_real + c.true_fake) as f64, total);

    let prec_real = safe_div(c.true_real as f64, (c.true_real + c.false_real) as f64);
    let rec_real = safe_div(c.true_real as f64, (c.true_real + c.false_fake) as f64);
    let f1_real = safe_div(2.0 * prec_real * rec_real, prec_real + rec_real);

    let prec_fake = safe_div(c.true_fake as f64, (c.true_fake + c.false_fake) as f64);
    let rec_fake = safe_div(c.true_fake as f64, (c.true_fake + c.false_real) as f64);
    let f1_fake = safe_div(2.0 * prec_fake * rec_fake, prec_fake + rec_fake);

    let support_real = (c.true_real + c.false_fake) as f64;
    let support_fake = (c.true_fake + c.false_real) as f64;

    let combine = |real: f64, fake: f64| match averaging {
        Averaging::Weighted => safe_div(support_real * real + support_fake * fake, total),
        Averaging::Macro => (real + fake) / 2.0,
    };
    (
        accuracy,
        combine(prec_real, prec_fake),
        combine(rec_real, rec_fake),
        combine(f1_real, f1_fake),
    )
}

/// Evaluate a parameter set over a slice of encoded items.
pub fn evaluate(
    arch: &Architecture,
    store: &ParamStore,
    items: &[&EncodedItem],
    table: &EmbeddingTable,
    features: &FeatureTable,
    averaging: Averaging,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(EmberError::EmptyInput("evaluation split"));
    }
    let outputs: Vec<Result<ItemPrediction>> = items
        .par_iter()
        .map(|item| {
            let out = run_item(arch, store, item, table, features, false)?;
            Ok(ItemPrediction {
                id: out.id,
                label: out.label,
                prob: out.prob_main,
            })
        })
        .collect();

    let mut per_item = Vec::with_capacity(items.len());
    let mut confusion = Confusion::default();
    for out in outputs {
        let p = out?;
        let predicted_real = p.prob >= DECISION_THRESHOLD;
        match (p.label == 1, predicted_real) {
            (true, true) => confusion.true_real += 1,
            (true, false) => confusion.false_fake += 1,
            (false, true) => confusion.false_real += 1,
            (false, false) => confusion.true_fake += 1,
        }
        per_item.push(p);
    }

    let (accuracy, precision, recall, f1) = metrics_from_confusion(&confusion, averaging);
    Ok(EvalReport {
        accuracy,
        precision,
        recall,
        f1,
        averaging: averaging.name().to_string(),
        confusion,
        per_item,
    })
}

/// Per-item co-attention diagnostics (affinity matrix plus both attention
/// vectors for every pair), for the structured dump interface.
pub fn attention_diagnostics(
    arch: &Architecture,
    store: &ParamStore,
    items: &[&EncodedItem],
    table: &EmbeddingTable,
    features: &FeatureTable,
) -> Result<Vec<(String, Vec<CoAttentionDiagnostics>)>> {
    items
        .iter()
        .map(|item| {
            let out = run_item(arch, store, item, table, features, true)?;
            Ok((out.id, out.diagnostics.unwrap_or_default()))
        })
        .collect()
}
