//! Network building blocks: nonlinearities, positional encodings, parameters
//! and MLP graph construction.

pub mod activation;
pub mod encoding;
pub mod mlp;
pub mod params;

use thiserror::Error;

use crate::graph::GraphError;

pub use activation::{nl_eval, sigmoid, softplus, Nonlinearity};
pub use encoding::{encode, Encoding};
pub use mlp::{
    build_integral_network, init_params, BlockSource, Checkpoint, InitScheme, InputBlock,
    LayerRecord, MlpSpec,
};
pub use params::{GradientSet, Layer, LayerId, ParamStore};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network: {0}")]
    Build(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
