//! Ablation harness: named model variants trained and evaluated under a
//! shared seed, reported as one machine-readable table.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{ComponentKind, EmbeddingTable, NewsItem};
use crate::error::{EmberError, Result};
use crate::forensics::FeatureTable;
use crate::fusion::{pair_order, pair_tag, ReadingOrder};

use super::config::TrainConfig;
use super::network::{AggregatorKind, Architecture};
use super::train::{prepare_corpus, train, Split};

#[derive(Clone, Debug, PartialEq)]
pub enum AblationVariant {
    /// The unmodified model.
    Full,
    /// Remove one component and every pair touching it.
    DropComponent(ComponentKind),
    /// Encode images from the original view only.
    DropEla,
    /// Replace the sequence aggregator with plain concatenation.
    DropGru,
    /// Replace the sequence aggregator with attention pooling.
    AggAttention,
    /// Replace the sequence aggregator with a bidirectional GRU.
    AggBiGru,
    /// Remove a single component pair from the fusion sequence.
    DropPair(ComponentKind, ComponentKind),
    /// Feed the pair features to the aggregator in a custom order.
    Reorder(Vec<(ComponentKind, ComponentKind)>),
}

impl AblationVariant {
    pub fn tag(&self) -> String {
        match self {
            AblationVariant::Full => "full".into(),
            AblationVariant::DropComponent(k) => format!("drop_component:{}", k.letter()),
            AblationVariant::DropEla => "drop_ela".into(),
            AblationVariant::DropGru => "drop_gru".into(),
            AblationVariant::AggAttention => "agg_attention".into(),
            AblationVariant::AggBiGru => "agg_bigru".into(),
            AblationVariant::DropPair(a, b) => format!("drop_pair:{}", pair_tag((*a, *b))),
            AblationVariant::Reorder(pairs) => {
                let tags: Vec<String> = pairs.iter().map(|p| pair_tag(*p)).collect();
                format!("reorder:{}", tags.join(","))
            }
        }
    }

    /// Parse one variants-file line, e.g. `drop_component:B` or
    /// `reorder:HB,IB,CB,HI,HC,IC`.
    pub fn parse(line: &str) -> Result<Self> {
        let line = line.trim();
        let (head, rest) = match line.split_once(':') {
            Some((h, r)) => (h.trim(), Some(r.trim())),
            None => (line, None),
        };
        let pair_from = |s: &str| -> Result<(ComponentKind, ComponentKind)> {
            let chars: Vec<char> = s.trim().chars().collect();
            if chars.len() != 2 {
                return Err(EmberError::Config(format!(
                    "bad pair '{s}', expected two letters like HB"
                )));
            }
            Ok((
                ComponentKind::from_letter(chars[0])?,
                ComponentKind::from_letter(chars[1])?,
            ))
        };
        match (head, rest) {
            ("full", None) => Ok(AblationVariant::Full),
            ("drop_ela", None) => Ok(AblationVariant::DropEla),
            ("drop_gru", None) => Ok(AblationVariant::DropGru),
            ("agg_attention", None) => Ok(AblationVariant::AggAttention),
            ("agg_bigru", None) => Ok(AblationVariant::AggBiGru),
            ("drop_component", Some(arg)) => {
                let chars: Vec<char> = arg.chars().collect();
                if chars.len() != 1 {
                    return Err(EmberError::Config(format!("bad component '{arg}'")));
                }
                Ok(AblationVariant::DropComponent(ComponentKind::from_letter(
                    chars[0],
                )?))
            }
            ("drop_pair", Some(arg)) => {
                let (a, b) = pair_from(arg)?;
                Ok(AblationVariant::DropPair(a, b))
            }
            ("reorder", Some(arg)) => {
                let pairs: Result<Vec<(ComponentKind, ComponentKind)>> =
                    arg.split(',').map(pair_from).collect();
                Ok(AblationVariant::Reorder(pairs?))
            }
            _ => Err(EmberError::Config(format!(
                "unknown ablation variant '{line}'"
            ))),
        }
    }

    /// Resolve the architecture this variant trains.
    pub fn architecture(
        &self,
        config: &TrainConfig,
        embed_dim: usize,
        feature_width: usize,
    ) -> Result<Architecture> {
        let mut arch = match self {
            AblationVariant::DropComponent(kind) => {
                if !config.components.contains(kind) {
                    return Err(EmberError::Config(format!(
                        "component {kind} is not active"
                    )));
                }
                let mut reduced = config.clone();
                reduced.components = config
                    .components
                    .iter()
                    .copied()
                    .filter(|k| k != kind)
                    .collect();
                reduced.order = Some(
                    reduced
                        .reading_order()
                        .into_iter()
                        .filter(|k| k != kind)
                        .collect(),
                );
                return Architecture::resolve(&reduced, embed_dim, feature_width);
            }
            _ => Architecture::resolve(config, embed_dim, feature_width)?,
        };
        match self {
            AblationVariant::Full | AblationVariant::DropComponent(_) => {}
            AblationVariant::DropEla => {
                if !arch.order.contains(&ComponentKind::Images) {
                    return Err(EmberError::Config(
                        "drop_ela needs the image component".into(),
                    ));
                }
                arch.use_ela = false;
            }
            AblationVariant::DropGru => arch.aggregator = AggregatorKind::Concat,
            AblationVariant::AggAttention => arch.aggregator = AggregatorKind::Attention,
            AblationVariant::AggBiGru => arch.aggregator = AggregatorKind::BiGru,
            AblationVariant::DropPair(a, b) => {
                let order = ReadingOrder::new(arch.order.clone())?;
                let normalized = normalize_pair((*a, *b), &order)?;
                let before = arch.pair_sequence.len();
                arch.pair_sequence.retain(|&p| p != normalized);
                if arch.pair_sequence.len() == before {
                    return Err(EmberError::Config(format!(
                        "pair {} is not in the fusion sequence",
                        pair_tag(normalized)
                    )));
                }
                if arch.pair_sequence.is_empty() {
                    return Err(EmberError::Config(
                        "dropping that pair leaves no fusion input".into(),
                    ));
                }
                if arch.refinement_pairs().is_empty() {
                    return Err(EmberError::Config(
                        "dropping that pair leaves the refinement head without input".into(),
                    ));
                }
            }
            AblationVariant::Reorder(pairs) => {
                let order = ReadingOrder::new(arch.order.clone())?;
                let mut normalized = Vec::with_capacity(pairs.len());
                for p in pairs {
                    normalized.push(normalize_pair(*p, &order)?);
                }
                let mut expected = pair_order(&order);
                let mut given = normalized.clone();
                expected.sort();
                given.sort();
                if expected != given {
                    return Err(EmberError::Config(
                        "reorder must list every component pair exactly once".into(),
                    ));
                }
                arch.pair_sequence = normalized;
            }
        }
        Ok(arch)
    }
}

/// Orient a pair as (earlier-read, later-read).
fn normalize_pair(
    pair: (ComponentKind, ComponentKind),
    order: &ReadingOrder,
) -> Result<(ComponentKind, ComponentKind)> {
    let ra = order
        .rank(pair.0)
        .ok_or_else(|| EmberError::Config(format!("component {} is not active", pair.0)))?;
    let rb = order
        .rank(pair.1)
        .ok_or_else(|| EmberError::Config(format!("component {} is not active", pair.1)))?;
    if ra == rb {
        return Err(EmberError::Config(
            "a pair needs two distinct components".into(),
        ));
    }
    Ok(if ra < rb { pair } else { (pair.1, pair.0) })
}

/// Load a variants file: one variant per line, `#` comments allowed.
pub fn load_variants(path: impl AsRef<Path>) -> Result<Vec<AblationVariant>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|_| EmberError::MissingFile {
        path: path.display().to_string(),
    })?;
    let mut variants = Vec::new();
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        variants.push(AblationVariant::parse(line)?);
    }
    Ok(variants)
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub warnings: Vec<String>,
}

/// Train and evaluate the full model plus each variant under the shared
/// config seed, reporting test metrics per row. Invalid variants are skipped
/// with a warning rather than failing the sweep.
pub fn ablate(
    items: &[NewsItem],
    table: &EmbeddingTable,
    features: &FeatureTable,
    config: &TrainConfig,
    variants: &[AblationVariant],
) -> Result<AblationTable> {
    let mut out = AblationTable::default();
    let mut all = vec![AblationVariant::Full];
    all.extend(variants.iter().cloned());

    for variant in all {
        let tag = variant.tag();
        let arch = match variant.architecture(config, table.dim(), features.width()) {
            Ok(a) => a,
            Err(e) => {
                out.warnings.push(format!("{tag}: skipped ({e})"));
                continue;
            }
        };
        let prepared = prepare_corpus(items, table, config.seed)?;
        let outcome = train(&arch, &prepared, table, features, config)?;
        let report = super::train::evaluate_split(
            &arch,
            &outcome.params,
            &prepared,
            table,
            features,
            config,
            Split::Test,
        )?;
        out.rows.push(AblationRow {
            variant: tag,
            accuracy: report.accuracy,
            precision: report.precision,
            recall: report.recall,
            f1: report.f1,
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.epochs_run,
        });
    }
    Ok(out)
}

/// Tab-separated table, one row per variant.
pub fn write_ablation_table(table: &AblationTable, path: impl AsRef<Path>) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(
        out,
        "variant\taccuracy\tprecision\trecall\tf1\tbest_epoch\tepochs_run"
    )?;
    for r in &table.rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.variant, r.accuracy, r.precision, r.recall, r.f1, r.best_epoch, r.epochs_run
        )?;
    }
    for w in &table.warnings {
        writeln!(out, "# warning: {w}")?;
    }
    Ok(())
}
