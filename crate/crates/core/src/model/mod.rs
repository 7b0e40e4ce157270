//! The matching network: a shared-weight GCN encoder, per-layer neural tensor
//! network similarity with node-to-node attention, and a 1x1 channel-mixing
//! head followed by a row softmax.

mod checkpoint;
mod forward;
mod layers;
mod params;

pub use checkpoint::Checkpoint;
pub use forward::{forward, forward_batch, LayerDiagnostics, ModelOutput, SampleVars};
pub use layers::{
    activate, attention, combine, discretize, gcn_layer, gcn_layer_sparse, normalize_adjacency,
    normalize_adjacency_sparse, ntn_similarity, output_head,
};
pub use params::{ModelParams, NtnParams, NtnVars, ParamVars};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nonlinearity applied after a GCN layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Elu,
    Sigmoid,
    /// Softmax over each node's embedding dimensions.
    RowSoftmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    /// Input feature dim followed by each layer's output dim.
    pub layer_dims: Vec<usize>,
    pub layer_activations: Vec<Activation>,
    pub ntn_k: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    /// Three GCN layers of width 128 (elu, elu, row softmax) and 16 NTN slices.
    pub fn standard(input_dim: usize) -> ModelConfig {
        ModelConfig {
            num_layers: 3,
            layer_dims: vec![input_dim, 128, 128, 128],
            layer_activations: vec![Activation::Elu, Activation::Elu, Activation::RowSoftmax],
            ntn_k: 16,
            seed: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::invalid("num_layers must be at least 1"));
        }
        if self.layer_dims.len() != self.num_layers + 1 {
            return Err(Error::invalid(format!(
                "layer_dims has {} entries, expected num_layers + 1 = {}",
                self.layer_dims.len(),
                self.num_layers + 1
            )));
        }
        if self.layer_activations.len() != self.num_layers {
            return Err(Error::invalid(format!(
                "layer_activations has {} entries for {} layers",
                self.layer_activations.len(),
                self.num_layers
            )));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::invalid("layer dims must be positive"));
        }
        if self.ntn_k == 0 {
            return Err(Error::invalid("ntn_k must be at least 1"));
        }
        Ok(())
    }
}
