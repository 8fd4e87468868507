//! Reverse-mode autodiff and the sketch-to-mesh networks.

mod gemm;
mod model;
mod tape;
mod tensor;
mod weights;

use thiserror::Error;

pub use model::{
    decode_mesh, decode_graph, discriminate, discriminate_graph, encode, encode_graph, pose_ranges,
    predict_view, predict_view_graph, view_code, view_code_graph, Binding, EncodeOutput, ModelConfig,
    TemplateMesh, DISC_RESOLUTIONS,
};
pub(crate) use model::sketch_batch;
pub use tape::{softplus, CsrMatrix, CustomOp, Tape, Var};
pub use tensor::Tensor;
pub use weights::{load_weights, read_weights, save_weights, write_weights, ModelWeights, WeightsFile};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("unknown parameter '{0}'")]
    MissingParameter(String),
    #[error("silhouette resolution {got} does not match discriminator stage {stage} ({expected})")]
    StageResolutionMismatch { stage: usize, expected: usize, got: usize },
    #[error("weights file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod model_tests;
