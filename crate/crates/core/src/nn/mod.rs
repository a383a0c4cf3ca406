//! MLP, GCN, GAT and OODGAT forward definitions.

mod layers;
mod model;
mod params;

pub use layers::{
    aggregate, dense_layer, gat_attention, gat_layer, gcn_layer, gcn_weights, oodgat_attention,
    oodgat_layer, Combine, GatHead, LayerInput, LayerOutput, OodgatHead, LEAKY_SLOPE,
};
pub use model::{ForwardOutput, GraphInput, Mode, Model, Prediction};
pub use params::{BoundParams, ParamStore, CHECKPOINT_MAGIC};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Mlp,
    Gcn,
    Gat,
    Oodgat,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Mlp => "mlp",
            Architecture::Gcn => "gcn",
            Architecture::Gat => "gat",
            Architecture::Oodgat => "oodgat",
        }
    }

    pub fn is_attention(self) -> bool {
        matches!(self, Architecture::Gat | Architecture::Oodgat)
    }

    /// Default hidden width: per head for attention models.
    pub fn default_hidden(self) -> usize {
        if self.is_attention() {
            32
        } else {
            64
        }
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Elu,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Units per head for attention models, total units otherwise.
    pub hidden_dim: usize,
    /// Ignored by MLP and GCN.
    pub heads: usize,
    pub dropout: f64,
    /// Fraction of non-self neighbourhood entries removed per training step.
    pub drop_edge: f64,
    pub activation: Activation,
}

impl ModelConfig {
    pub fn new(architecture: Architecture) -> Self {
        ModelConfig {
            architecture,
            hidden_dim: architecture.default_hidden(),
            heads: if architecture.is_attention() { 4 } else { 1 },
            dropout: 0.5,
            drop_edge: 0.0,
            activation: Activation::Elu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be at least 1".into()));
        }
        if self.heads == 0 {
            return Err(Error::Config("heads must be at least 1".into()));
        }
        for (name, p) in [("dropout", self.dropout), ("drop_edge", self.drop_edge)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }

    /// Heads actually used by the architecture.
    pub fn effective_heads(&self) -> usize {
        if self.architecture.is_attention() {
            self.heads
        } else {
            1
        }
    }
}
