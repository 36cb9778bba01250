//! The full denoising run and its report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::compound::{compound, CompoundMethod};
use crate::error::{Error, Result, StageExt};
use crate::metrics::{evaluate, MetricReport, Roi};
use crate::pipeline::baseline::baseline_translation_align;
use crate::pipeline::io::{load_stack, StackManifest};
use crate::pipeline::synth::{synth_stack, SynthSpec};
use crate::rasl::{
    pairwise_misalignment, rasl_align, Misalignment, OuterRecord, RaslConfig, RaslResult,
};
use crate::transform::{Image, ImageStack, TransformModel, TransformParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputSource {
    Manifest { path: PathBuf },
    Synth { spec: SynthSpec },
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseRequest {
    pub input: InputSource,
    pub config: RaslConfig,
    pub method: CompoundMethod,
    /// ROIs for the metrics. Synthetic inputs fall back to their ground truth.
    pub rois: Option<Vec<Roi>>,
    /// Also run the translation-registration baseline when ROIs are known.
    pub baseline: bool,
}

impl DenoiseRequest {
    pub fn new(input: InputSource) -> Self {
        DenoiseRequest {
            input,
            config: RaslConfig::default(),
            method: CompoundMethod::Median,
            rois: None,
            baseline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub model: TransformModel,
    pub params: Vec<f64>,
    /// Homogeneous matrix in centered pixel coordinates, row-major.
    pub matrix: [[f64; 3]; 3],
}

impl From<&TransformParams> for TransformRecord {
    fn from(t: &TransformParams) -> Self {
        let m = t.to_matrix();
        TransformRecord {
            model: t.model(),
            params: t.params().to_vec(),
            matrix: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
        }
    }
}

impl TryFrom<&TransformRecord> for TransformParams {
    type Error = Error;

    fn try_from(r: &TransformRecord) -> Result<Self> {
        TransformParams::new(r.model, r.params.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub outer_iters: usize,
    pub converged: bool,
    pub lambda: f64,
    pub rank: usize,
    pub final_residual: f64,
    pub joint_valid_fraction: f64,
    pub history: Vec<OuterRecord>,
    pub transforms: Vec<TransformRecord>,
}

impl From<&RaslResult> for AlignmentSummary {
    fn from(r: &RaslResult) -> Self {
        let valid = r.joint_mask.iter().filter(|&&m| m).count();
        AlignmentSummary {
            outer_iters: r.outer_iters,
            converged: r.converged,
            lambda: r.lambda,
            rank: r.rank,
            final_residual: r.final_residual,
            joint_valid_fraction: valid as f64 / r.joint_mask.len() as f64,
            history: r.history.clone(),
            transforms: r.taus.iter().map(TransformRecord::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub rois: Vec<Roi>,
    /// One report per unprocessed input scan.
    pub inputs: Vec<MetricReport>,
    pub output: MetricReport,
    pub baseline: Option<MetricReport>,
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub load: f64,
    pub align: f64,
    pub compound: f64,
    pub baseline: f64,
    pub metrics: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Outputs {
    pub image: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub request: DenoiseRequest,
    pub alignment: AlignmentSummary,
    pub metrics: Option<MetricsSummary>,
    /// Pairwise misalignment against the generating transforms (synthetic input only).
    pub truth_misalignment: Option<Misalignment>,
    pub timings: Timings,
    pub outputs: Outputs,
}

impl RunReport {
    /// The report with timings zeroed, for run-to-run comparison.
    pub fn without_timings(&self) -> RunReport {
        RunReport {
            timings: Timings::default(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(format!("report: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("report: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunReport::from_json(&text).map_err(|e| Error::io(path, e))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct DenoiseOutput {
    pub image: Image,
    pub baseline_image: Option<Image>,
    pub report: RunReport,
}

/// Compounds the aligned low-rank component.
///
/// Pixels outside the joint mask have no low-rank estimate; they fall back to
/// the warped scans that do cover them, and to zero where none does.
pub fn compound_low_rank(result: &RaslResult, method: CompoundMethod) -> Result<Image> {
    let n = result.low_rank.ncols();
    let mut stack = result.low_rank.clone();
    let mut masks = vec![vec![true; stack.nrows()]; n];
    for (p, _) in result.joint_mask.iter().enumerate().filter(|(_, m)| !**m) {
        let covered = (0..n).any(|i| result.masks[i][p]);
        for i in 0..n {
            stack[(p, i)] = result.aligned[(p, i)];
            masks[i][p] = !covered || result.masks[i][p];
        }
    }
    compound(&stack, method, Some(&masks), result.frame)
}

/// Aligns with the translation baseline and compounds the registered scans.
pub fn baseline_pipeline(stack: &ImageStack, method: CompoundMethod) -> Result<Image> {
    let registered = baseline_translation_align(stack)?;
    compound(
        &registered.aligned.to_matrix(),
        method,
        Some(&registered.masks),
        registered.aligned.frame(),
    )
}

/// Loads or synthesizes the stack, aligns it, compounds the low-rank part and
/// scores the result. Nothing is written to disk.
pub fn denoise(req: &DenoiseRequest) -> Result<DenoiseOutput> {
    let started = Instant::now();
    let mut timings = Timings::default();

    let clock = Instant::now();
    let (stack, truth) = match &req.input {
        InputSource::Manifest { path } => {
            let manifest = StackManifest::read(path).stage("load")?;
            (load_stack(&manifest).stage("load")?, None)
        }
        InputSource::Synth { spec } => {
            let (stack, truth) = synth_stack(spec).stage("synth")?;
            (stack, Some(truth))
        }
    };
    if stack.len() < 2 {
        return Err(Error::InvalidManifest(format!(
            "alignment needs at least 2 images, got {}",
            stack.len()
        )))
        .stage("load");
    }
    timings.load = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let aligned = rasl_align(&stack, &req.config).stage("align")?;
    timings.align = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let image = compound_low_rank(&aligned, req.method).stage("compound")?;
    timings.compound = clock.elapsed().as_secs_f64();

    let rois = req
        .rois
        .clone()
        .or_else(|| truth.as_ref().map(|t| t.rois.clone()));
    let mut baseline_image = None;
    let mut metrics = None;
    if let Some(rois) = rois {
        if req.baseline {
            let clock = Instant::now();
            baseline_image = Some(baseline_pipeline(&stack, req.method).stage("baseline")?);
            timings.baseline = clock.elapsed().as_secs_f64();
        }
        let clock = Instant::now();
        let inputs = stack
            .images()
            .iter()
            .map(|img| evaluate(img, &rois))
            .collect::<Result<Vec<_>>>()
            .stage("metrics")?;
        let output = evaluate(&image, &rois).stage("metrics")?;
        let baseline = baseline_image
            .as_ref()
            .map(|img| evaluate(img, &rois))
            .transpose()
            .stage("metrics")?;
        metrics = Some(MetricsSummary {
            rois,
            inputs,
            output,
            baseline,
        });
        timings.metrics = clock.elapsed().as_secs_f64();
    }

    let truth_misalignment = truth
        .as_ref()
        .map(|t| pairwise_misalignment(&t.taus, &aligned.taus))
        .transpose()
        .stage("align")?;
    timings.total = started.elapsed().as_secs_f64();

    Ok(DenoiseOutput {
        image,
        baseline_image,
        report: RunReport {
            request: req.clone(),
            alignment: AlignmentSummary::from(&aligned),
            metrics,
            truth_misalignment,
            timings,
            outputs: Outputs::default(),
        },
    })
}
