//! Multi-phase CT liver tumour segmentation toolkit.
//!
//! The crate provides a small reverse-mode differentiation engine, the
//! residual encoder/decoder segmentation network with phase-attention fusion,
//! a boundary-weighted loss, volumetric evaluation metrics, synthetic phantom
//! generation, and the training/inference pipeline that ties them together.

pub mod attention;
pub mod backbone;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod ops;
pub mod optim;
pub mod pipeline;

pub use backbone::{
    build_network, fuse_stage, mpf_merge, BnUpdate, BoundParams, BufferSet, ForwardTrace, Fusion,
    Mode, Model, NetworkConfig, Output, Param, ParamSet,
};
pub use error::{Error, Result};
pub use graph::{Graph, TensorData, TensorId};
pub use pipeline::{
    ablation_matrix, evaluate, evaluate_cases, infer_volume, infer_volume_detailed, train,
    AblationTable, EvalOutcome, LossKind, RunArtifacts, TrainConfig,
};
