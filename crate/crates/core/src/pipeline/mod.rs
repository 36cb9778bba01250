//! Image I/O, synthetic stacks, the translation baseline and the end-to-end
//! denoising run.

pub mod baseline;
pub mod io;
mod run;
pub mod synth;

pub use baseline::{baseline_translation_align, TranslationBaseline};
pub use io::{load_image, load_stack, read_matrix, save_png16, write_matrix, StackManifest};
pub use run::{
    baseline_pipeline, compound_low_rank, denoise, AlignmentSummary, DenoiseOutput, DenoiseRequest,
    InputSource, MetricsSummary, Outputs, RunReport, Timings, TransformRecord,
};
pub use synth::{render, synth_stack, GroundTruth, Phantom, SynthSpec};
