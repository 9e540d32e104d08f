use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ComponentKind;
use crate::error::{EmberError, Result};

/// Metric averaging scheme for precision/recall/F1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Per-class metrics weighted by class support.
    Weighted,
    /// Unweighted mean over the two classes.
    Macro,
}

impl Averaging {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "weighted" => Ok(Averaging::Weighted),
            "macro" => Ok(Averaging::Macro),
            other => Err(EmberError::Config(format!(
                "unknown metric averaging '{other}'; expected weighted or macro"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Averaging::Weighted => "weighted",
            Averaging::Macro => "macro",
        }
    }
}

/// Refinement-loss weights tuned per dataset.
pub fn lambda_preset(dataset: &str) -> Option<f64> {
    match dataset.to_ascii_lowercase().as_str() {
        "politifact2" => Some(0.6),
        "politifact7" => Some(1.0),
        "gossipcop" => Some(0.1),
        "compre" => Some(0.4),
        _ => None,
    }
}

/// Every hyperparameter of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Recurrent hidden width per direction; component vectors are `2h` wide.
    pub hidden: usize,
    /// Co-attention internal width.
    pub co_k: usize,
    /// Weight of the refinement loss term.
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub early_stopping: bool,
    pub seed: u64,
    /// Active component set.
    pub components: Vec<ComponentKind>,
    /// Reading order over the active components; defaults to the component
    /// set order itself.
    pub order: Option<Vec<ComponentKind>>,
    /// Fine-tune word embeddings instead of keeping them frozen.
    pub train_embeddings: bool,
    pub averaging: Averaging,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 50,
            co_k: 50,
            lambda: 1.0,
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 100,
            patience: 8,
            early_stopping: true,
            seed: 42,
            components: ComponentKind::ALL.to_vec(),
            order: None,
            train_embeddings: false,
            averaging: Averaging::Weighted,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.co_k == 0 {
            return Err(EmberError::Config(
                "hidden and co-attention widths must be positive".into(),
            ));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(EmberError::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(EmberError::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(EmberError::Config(
                "batch size and epoch count must be positive".into(),
            ));
        }
        if self.patience == 0 {
            return Err(EmberError::Config("patience must be at least 1".into()));
        }
        if self.components.len() < 2 {
            return Err(EmberError::Config(format!(
                "need at least 2 active components, got {}",
                self.components.len()
            )));
        }
        if let Some(order) = &self.order {
            let mut a: Vec<ComponentKind> = order.clone();
            let mut b: Vec<ComponentKind> = self.components.clone();
            a.sort();
            b.sort();
            if a != b {
                return Err(EmberError::Config(
                    "reading order must cover exactly the active components".into(),
                ));
            }
        }
        Ok(())
    }

    /// The resolved reading order.
    pub fn reading_order(&self) -> Vec<ComponentKind> {
        self.order
            .clone()
            .unwrap_or_else(|| self.components.clone())
    }
}

/// Parse a flat `key = value` config file. Unknown keys are hard errors:
/// a silently ignored hyperparameter typo is worse than a failed run.
pub fn parse_config_file(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|_| EmberError::MissingFile {
        path: path.display().to_string(),
    })?;
    parse_config_text(&text, &path.display().to_string())
}

pub fn parse_config_text(text: &str, origin: &str) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    let mut explicit_lambda = false;
    let mut dataset: Option<String> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| EmberError::Parse {
            path: origin.to_string(),
            line: lineno + 1,
            message: format!("expected `key = value`, got '{raw}'"),
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = |message: String| EmberError::Parse {
            path: origin.to_string(),
            line: lineno + 1,
            message,
        };
        match key {
            "h" | "hidden" => {
                config.hidden = value.parse().map_err(|_| bad(format!("bad h '{value}'")))?
            }
            "k" | "co_k" => {
                config.co_k = value.parse().map_err(|_| bad(format!("bad k '{value}'")))?
            }
            "lambda" => {
                config.lambda = value
                    .parse()
                    .map_err(|_| bad(format!("bad lambda '{value}'")))?;
                explicit_lambda = true;
            }
            "dataset" => dataset = Some(value.to_string()),
            "lr" => {
                config.lr = value
                    .parse()
                    .map_err(|_| bad(format!("bad lr '{value}'")))?
            }
            "batch_size" => {
                config.batch_size = value
                    .parse()
                    .map_err(|_| bad(format!("bad batch_size '{value}'")))?
            }
            "max_epochs" => {
                config.max_epochs = value
                    .parse()
                    .map_err(|_| bad(format!("bad max_epochs '{value}'")))?
            }
            "patience" => {
                config.patience = value
                    .parse()
                    .map_err(|_| bad(format!("bad patience '{value}'")))?
            }
            "early_stopping" => {
                config.early_stopping = value
                    .parse()
                    .map_err(|_| bad(format!("bad early_stopping '{value}'")))?
            }
            "seed" => {
                config.seed = value
                    .parse()
                    .map_err(|_| bad(format!("bad seed '{value}'")))?
            }
            "components" => config.components = ComponentKind::parse_set(value)?,
            "order" => config.order = Some(ComponentKind::parse_set(value)?),
            "train_embeddings" => {
                config.train_embeddings = value
                    .parse()
                    .map_err(|_| bad(format!("bad train_embeddings '{value}'")))?
            }
            "metric_averaging" => config.averaging = Averaging::parse(value)?,
            other => {
                return Err(bad(format!("unknown config key '{other}'")));
            }
        }
    }

    if let Some(name) = dataset {
        let preset = lambda_preset(&name).ok_or_else(|| {
            EmberError::Config(format!(
                "no lambda preset for dataset '{name}'; known: politifact2, politifact7, gossipcop, compre"
            ))
        })?;
        if !explicit_lambda {
            config.lambda = preset;
        }
    }

    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_presets_match_reported_values() {
        assert_eq!(lambda_preset("politifact2"), Some(0.6));
        assert_eq!(lambda_preset("PolitiFact7"), Some(1.0));
        assert_eq!(lambda_preset("gossipcop"), Some(0.1));
        assert_eq!(lambda_preset("Compre"), Some(0.4));
        assert_eq!(lambda_preset("unknown"), None);
    }

    #[test]
    fn config_text_roundtrip() {
        let text = "\
# quickstart
h = 16
k = 16
dataset = compre
lr = 0.002
batch_size = 16
max_epochs = 30
seed = 7
components = HICB
order = HICB
";
        let config = parse_config_text(text, "test").unwrap();
        assert_eq!(config.hidden, 16);
        assert_eq!(config.co_k, 16);
        assert_eq!(config.lambda, 0.4); // from the dataset preset
        assert_eq!(config.batch_size, 16);
        assert_eq!(config.seed, 7);
    }

    #[test]
    fn explicit_lambda_beats_dataset_preset() {
        let config = parse_config_text("dataset = gossipcop\nlambda = 0.9\n", "t").unwrap();
        assert_eq!(config.lambda, 0.9);
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let err = parse_config_text("learning_rate = 0.1\n", "t").unwrap_err();
        assert!(err.to_string().contains("unknown config key"));
    }

    #[test]
    fn validation_rejects_bad_settings() {
        let bad_lambda = TrainConfig {
            lambda: -0.1,
            ..TrainConfig::default()
        };
        assert!(bad_lambda.validate().is_err());

        let no_patience = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        assert!(no_patience.validate().is_err());

        let one_component = TrainConfig {
            components: vec![ComponentKind::Headline],
            ..TrainConfig::default()
        };
        assert!(one_component.validate().is_err());

        let partial_order = TrainConfig {
            order: Some(vec![ComponentKind::Headline, ComponentKind::Body]),
            ..TrainConfig::default()
        };
        assert!(
            partial_order.validate().is_err(),
            "order must cover the component set"
        );
    }

    #[test]
    fn order_defaults_to_component_order() {
        let config = parse_config_text("components = BICH\n", "t").unwrap();
        let order = config.reading_order();
        assert_eq!(order[0], ComponentKind::Body);
        assert_eq!(order[3], ComponentKind::Headline);
    }
}
