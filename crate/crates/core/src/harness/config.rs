use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{Normalization, SyntheticConfig};
use crate::error::{CoreError, Result};
use crate::identifier::ScaleActivation;
use crate::model::ModelDims;

/// Model wiring variants for ablation runs.
///
/// `A` trains the graph encoder alone with deterministic scoring; `B` adds
/// the node-level posteriors and their objective; `C` keeps the full forward
/// path but optimizes only the matching term; `D` drops the cross-domain
/// objective; `Full` uses everything.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    A,
    B,
    C,
    D,
}

impl Default for Variant {
    fn default() -> Self {
        Variant::Full
    }
}

impl Variant {
    pub fn uses_identifier(&self) -> bool {
        !matches!(self, Variant::A)
    }

    pub fn uses_group_path(&self) -> bool {
        matches!(self, Variant::Full | Variant::C | Variant::D)
    }

    pub fn uses_user_objective(&self) -> bool {
        matches!(self, Variant::Full | Variant::A | Variant::B | Variant::D)
    }

    pub fn uses_domain_objective(&self) -> bool {
        matches!(self, Variant::Full)
    }

    pub fn uses_matching(&self) -> bool {
        matches!(self, Variant::Full | Variant::C | Variant::D)
    }

    /// Variant C has no other loss, so the matching term is always live.
    pub fn ignores_warmup(&self) -> bool {
        matches!(self, Variant::C)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub source: Option<PathBuf>,
    #[serde(default)]
    pub target: Option<PathBuf>,
    /// Identity pairs as `[source_id, target_id]` JSON; defaults to ids
    /// present in both domains.
    #[serde(default)]
    pub overlap: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default = "default_min_user")]
    pub min_user_interactions: usize,
    #[serde(default = "default_min_item")]
    pub min_item_interactions: usize,
    #[serde(default)]
    pub overlap_fraction: f64,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    #[serde(default)]
    pub normalization: Normalization,
}

fn default_min_user() -> usize {
    5
}

fn default_min_item() -> usize {
    10
}

fn default_eval_fraction() -> f64 {
    0.2
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: None,
            target: None,
            overlap: None,
            synthetic: None,
            min_user_interactions: default_min_user(),
            min_item_interactions: default_min_item(),
            overlap_fraction: 0.0,
            eval_fraction: default_eval_fraction(),
            normalization: Normalization::Symmetric,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default)]
    pub sigma1_activation: ScaleActivation,
    /// Multiplier on the softmax scale head; `null` means the feature width.
    #[serde(default)]
    pub sigma1_scale: Option<f64>,
    #[serde(default)]
    pub reaggregate_per_layer: bool,
    #[serde(default)]
    pub learned_prior: bool,
}

fn default_embed_dim() -> usize {
    32
}

fn default_layers() -> usize {
    3
}

fn default_heads() -> usize {
    2
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            embed_dim: default_embed_dim(),
            layers: default_layers(),
            heads: default_heads(),
            sigma1_activation: ScaleActivation::Softmax,
            sigma1_scale: None,
            reaggregate_per_layer: false,
            learned_prior: false,
        }
    }
}

/// Per-term multiplier overrides; any field left `null` falls back to the
/// shared `beta`.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaOverrides {
    pub user_source: Option<f64>,
    pub item_source: Option<f64>,
    pub user_target: Option<f64>,
    pub item_target: Option<f64>,
    pub level2_source: Option<f64>,
    pub level2_target: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_negatives")]
    pub negatives: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub beta_overrides: BetaOverrides,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub exact_reconstruction: bool,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_epochs() -> usize {
    70
}

fn default_warmup() -> usize {
    10
}

fn default_batch_size() -> usize {
    1024
}

fn default_group_size() -> usize {
    256
}

fn default_negatives() -> usize {
    4
}

fn default_learning_rate() -> f64 {
    1e-3
}

fn default_weight_decay() -> f64 {
    1e-6
}

fn default_beta() -> f64 {
    1.0
}

fn default_dropout() -> f64 {
    0.3
}

fn default_patience() -> usize {
    10
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: default_epochs(),
            warmup_epochs: default_warmup(),
            batch_size: default_batch_size(),
            group_size: default_group_size(),
            negatives: default_negatives(),
            learning_rate: default_learning_rate(),
            weight_decay: default_weight_decay(),
            beta: default_beta(),
            beta_overrides: BetaOverrides::default(),
            dropout: default_dropout(),
            exact_reconstruction: false,
            patience: default_patience(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Validation cadence in epochs.
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
}

fn default_cadence() -> usize {
    1
}

fn default_ks() -> Vec<usize> {
    vec![10, 20, 30]
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            cadence: default_cadence(),
            ks: default_ks(),
        }
    }
}

/// On-disk configuration: `data`, `model`, `train`, `eval`, `ablation`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub ablation: Variant,
}

impl ConfigFile {
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CoreError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: ConfigFile = serde_json::from_str(&text)
            .map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.beta < 0.0 {
            return Err(CoreError::Config("beta must be >= 0".into()));
        }
        if t.group_size == 0 || t.batch_size == 0 || t.epochs == 0 {
            return Err(CoreError::Config(
                "group_size, batch_size, and epochs must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&t.dropout) {
            return Err(CoreError::Config("dropout must be in [0, 1)".into()));
        }
        if t.negatives == 0 {
            return Err(CoreError::Config("negatives must be >= 1".into()));
        }
        if self.model.layers == 0 || self.model.embed_dim == 0 {
            return Err(CoreError::Config("layers and embed_dim must be >= 1".into()));
        }
        self.dims().validate()?;
        let has_files = self.data.source.is_some() && self.data.target.is_some();
        if has_files == self.data.synthetic.is_some() {
            return Err(CoreError::Config(
                "configure exactly one of data.source+data.target or data.synthetic".into(),
            ));
        }
        if self.eval.cadence == 0 {
            return Err(CoreError::Config("eval cadence must be >= 1".into()));
        }
        if self.eval.ks.is_empty() {
            return Err(CoreError::Config("eval ks must be non-empty".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            embed_dim: self.model.embed_dim,
            layers: self.model.layers,
            heads: self.model.heads,
        }
    }

    /// Resolved per-term multipliers: (user_s, item_s, user_t, item_t, l2_s, l2_t).
    pub fn betas(&self) -> [f64; 6] {
        let b = self.train.beta;
        let o = &self.train.beta_overrides;
        [
            o.user_source.unwrap_or(b),
            o.item_source.unwrap_or(b),
            o.user_target.unwrap_or(b),
            o.item_target.unwrap_or(b),
            o.level2_source.unwrap_or(b),
            o.level2_target.unwrap_or(b),
        ]
    }
}
