//! Speckle reduction for stacks of repeated B-scans.
//!
//! The stack is aligned under a parametric transform model while being split
//! into a low-rank component (the shared anatomy) and a sparse component
//! (speckle and transient features). The denoised image is the pixel-wise
//! median of the aligned low-rank component.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compound;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod prox;
pub mod rasl;
pub mod rpca;
pub mod transform;

#[cfg(test)]
pub(crate) mod testutil;

pub use compound::{compound, CompoundMethod};
pub use error::{Error, Result, StageExt};
pub use metrics::{evaluate, roi_stats, MetricReport, Roi, RoiKind, RoiStats};

pub use pipeline::{
    baseline_translation_align, denoise, load_stack, synth_stack, DenoiseRequest, InputSource,
    RunReport, StackManifest, SynthSpec,
};
pub use prox::{soft_threshold, svt, Matrix};
pub use rasl::{
    normalize_columns, pairwise_misalignment, rasl_align, rasl_inner, InnerSettings,
    LagrangianState, Lambda, Misalignment, RaslConfig, RaslResult,
};
pub use rpca::{default_lambda, rpca_ialm, RpcaConfig, RpcaResult};
pub use transform::{
    compose_update, image_gradients, transform_jacobian, transform_jacobian_masked,
    transform_jacobian_with_gradients, warp, Frame, Image, ImageStack, JacobianBlock,
    TransformModel, TransformParams,
};
