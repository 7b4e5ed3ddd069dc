use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    /// Elementwise mean of neighbour representations.
    Mean,
    /// Elementwise mean of `relu(W_pool h + b_pool)` over neighbours.
    MeanPooling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    pub(crate) fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SageConfig {
    /// Number of aggregation layers `K`.
    pub layers: usize,
    /// Width of every hidden layer (layers `1..K`).
    pub hidden_units: usize,
    /// Width of the final layer, the node embedding `z_v`.
    pub embedding_dim: usize,
    pub aggregator: Aggregator,
    /// Neighbour sample size per layer, outermost first: layer `k` draws
    /// `fanouts[k - 1]` neighbours, so the last entry applies to the batch
    /// nodes themselves.
    pub fanouts: Vec<usize>,
    pub dropout: f64,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    /// Concatenate the node's own representation with the aggregate.
    pub self_concat: bool,
}

impl Default for SageConfig {
    fn default() -> Self {
        SageConfig {
            layers: 2,
            hidden_units: 64,
            embedding_dim: 32,
            aggregator: Aggregator::MeanPooling,
            fanouts: vec![25, 10],
            dropout: 0.0,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
            self_concat: true,
        }
    }
}

impl SageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("layer depth K must be at least 1".into()));
        }
        if self.fanouts.len() != self.layers {
            return Err(Error::Config(format!(
                "{} fanouts given for {} layers",
                self.fanouts.len(),
                self.layers
            )));
        }
        if self.fanouts.contains(&0) {
            return Err(Error::Config("fanouts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.embedding_dim == 0 || (self.layers > 1 && self.hidden_units == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Output width of layer `k` (1-based).
    pub fn width(&self, k: usize) -> usize {
        if k == self.layers {
            self.embedding_dim
        } else {
            self.hidden_units
        }
    }

    pub fn activation(&self, k: usize) -> Activation {
        if k == self.layers {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }
}
