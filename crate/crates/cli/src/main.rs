//! `despeckle`: align, decompose and compound stacks of repeated B-scans.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use despeckle_core::metrics::{read_rois, write_rois};
use despeckle_core::pipeline::{
    load_stack, read_matrix, save_png16, synth_stack, write_matrix, AlignmentSummary,
    DenoiseRequest, InputSource, RunReport, StackManifest, SynthSpec, TransformRecord,
};
use despeckle_core::{
    evaluate, rasl_align, rpca_ialm, CompoundMethod, Error, Frame, Image, Lambda, Matrix,
    RaslConfig, Result, RpcaConfig, StageExt, TransformModel,
};

#[derive(Parser)]
#[command(
    name = "despeckle",
    version,
    about = "Speckle reduction for stacks of repeated B-scans"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stack with ground truth.
    Synth(SynthArgs),
    /// Align a stack and report the transforms.
    Align(AlignArgs),
    /// Split a matrix or stack into low-rank and sparse parts.
    Rpca(RpcaArgs),
    /// Align, decompose and compound a stack into one image.
    Denoise(DenoiseArgs),
    /// Score an image against a set of ROIs.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON synthesis spec; omitted fields take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the seed of the spec.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RaslArgs {
    #[arg(long, default_value = "rigid")]
    model: TransformModel,
    /// `auto` or a positive weight.
    #[arg(long, default_value = "auto")]
    lambda: Lambda,
    #[arg(long)]
    outer_tol: Option<f64>,
    #[arg(long)]
    outer_max_iters: Option<usize>,
    /// Gaussian std (pixels) of the images Jacobians are taken from.
    #[arg(long)]
    jacobian_smoothing: Option<f64>,
    #[arg(long)]
    inner_tol: Option<f64>,
    #[arg(long)]
    inner_max_iters: Option<usize>,
}

impl RaslArgs {
    fn config(&self) -> RaslConfig {
        let mut cfg = RaslConfig {
            model: self.model,
            lambda: self.lambda,
            ..RaslConfig::default()
        };
        if let Some(v) = self.outer_tol {
            cfg.outer_tol = v;
        }
        if let Some(v) = self.outer_max_iters {
            cfg.outer_max_iters = v;
        }
        if let Some(v) = self.jacobian_smoothing {
            cfg.jacobian_smoothing = v;
        }
        if let Some(v) = self.inner_tol {
            cfg.inner.tol = v;
        }
        if let Some(v) = self.inner_max_iters {
            cfg.inner.max_iters = v;
        }
        cfg
    }
}

#[derive(Args)]
struct AlignArgs {
    /// Stack manifest.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    rasl: RaslArgs,
    #[arg(long)]
    report: PathBuf,
    /// Also write the aligned low-rank images here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RpcaArgs {
    /// Stack manifest or plain-text matrix.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "auto")]
    lambda: Lambda,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    mu0: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// `.txt` for a plain-text matrix, otherwise a directory of PNGs.
    #[arg(long)]
    out_l: PathBuf,
    #[arg(long)]
    out_s: PathBuf,
}

#[derive(Args)]
struct DenoiseArgs {
    /// Stack manifest, or a `.json` synthesis spec.
    #[arg(long, required_unless_present = "replay")]
    input: Option<PathBuf>,
    /// Re-run the request recorded in an earlier report.
    #[arg(long, conflicts_with_all = ["input", "seed", "rois", "no_baseline"])]
    replay: Option<PathBuf>,
    #[command(flatten)]
    rasl: RaslArgs,
    #[arg(long, default_value = "median")]
    method: CompoundMethod,
    /// ROI file; synthetic inputs default to their ground-truth ROIs.
    #[arg(long)]
    rois: Option<PathBuf>,
    /// Seed for a synthetic input.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip the translation-registration baseline.
    #[arg(long)]
    no_baseline: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Where to write the baseline's compounded image.
    #[arg(long)]
    baseline_out: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    rois: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => synth(args),
        Command::Align(args) => align(args),
        Command::Rpca(args) => rpca(args),
        Command::Denoise(args) => denoise(args),
        Command::Metrics(args) => metrics(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn read_spec(path: &Path) -> Result<SynthSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: SynthSpec =
        serde_json::from_str(&text).map_err(|e| Error::io(path, format!("bad spec: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => read_spec(path).stage("load")?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (stack, truth) = synth_stack(&spec).stage("synth")?;

    let dir = &args.out_dir;
    create_dir(dir).stage("write")?;
    let mut paths = Vec::with_capacity(stack.len());
    for (i, img) in stack.images().iter().enumerate() {
        let path = dir.join(format!("scan_{i:03}.png"));
        save_png16(&path, img).stage("write")?;
        paths.push(path);
    }
    let manifest = StackManifest {
        paths,
        frame: Some(spec.frame()),
        source: Some(format!("synth {} seed {}", spec.base, spec.seed)),
        notes: vec!["intensities clamped to [0, 1] on export".into()],
    };
    manifest.write(&dir.join("manifest.txt")).stage("write")?;
    save_png16(&dir.join("clean.png"), &truth.clean_image).stage("write")?;
    write_rois(&dir.join("rois.txt"), &truth.rois).stage("write")?;
    let record = json!({
        "spec": spec,
        "transforms": truth.taus.iter().map(TransformRecord::from).collect::<Vec<_>>(),
        "sparse_supports": truth.sparse_supports,
        "rois": truth.rois,
    });
    write_json(&dir.join("truth.json"), &record).stage("write")?;
    println!("wrote {} scans to {}", stack.len(), dir.display());
    Ok(())
}

fn write_stack_pngs(dir: &Path, m: &Matrix, frame: Frame, prefix: &str) -> Result<()> {
    create_dir(dir)?;
    let mut paths = Vec::with_capacity(m.ncols());
    for (i, col) in m.column_iter().enumerate() {
        let img = Image::from_column(frame.width, frame.height, col.iter().copied())?;
        let path = dir.join(format!("{prefix}_{i:03}.png"));
        save_png16(&path, &img)?;
        paths.push(path);
    }
    let manifest = StackManifest {
        paths,
        frame: Some(frame),
        source: Some(prefix.to_string()),
        notes: vec!["intensities clamped to [0, 1] on export".into()],
    };
    manifest.write(&dir.join("manifest.txt"))
}

fn align(args: AlignArgs) -> Result<()> {
    let cfg = args.rasl.config();
    let manifest = StackManifest::read(&args.input).stage("load")?;
    let stack = load_stack(&manifest).stage("load")?;
    let result = rasl_align(&stack, &cfg).stage("align")?;
    let summary = AlignmentSummary::from(&result);
    write_json(
        &args.report,
        &json!({ "input": args.input, "config": cfg, "alignment": summary }),
    )
    .stage("write")?;
    if let Some(dir) = &args.out_dir {
        write_stack_pngs(dir, &result.low_rank, result.frame, "aligned").stage("write")?;
    }
    println!(
        "{} images, {} outer iterations, converged: {}, rank {}",
        stack.len(),
        result.outer_iters,
        result.converged,
        result.rank
    );
    Ok(())
}

/// A plain-text matrix starts with a number on its first content line.
fn looks_like_matrix(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .and_then(|l| l.split_whitespace().next());
    Ok(first.is_some_and(|t| t.parse::<f64>().is_ok()))
}

fn write_decomposition(path: &Path, m: &Matrix, frame: Option<Frame>, prefix: &str) -> Result<()> {
    if path.extension().is_some_and(|e| e == "txt") {
        return write_matrix(path, m);
    }
    let frame = frame.ok_or_else(|| {
        Error::InvalidInput(format!(
            "{}: image output needs an image-stack input; use a .txt path",
            path.display()
        ))
    })?;
    write_stack_pngs(path, m, frame, prefix)
}

fn rpca(args: RpcaArgs) -> Result<()> {
    let (d, frame) = if looks_like_matrix(&args.input).stage("load")? {
        (read_matrix(&args.input).stage("load")?, None)
    } else {
        let manifest = StackManifest::read(&args.input).stage("load")?;
        let stack = load_stack(&manifest).stage("load")?;
        (stack.to_matrix(), Some(stack.frame()))
    };
    let (rows, cols) = d.shape();
    let mut cfg = RpcaConfig::for_shape(rows, cols);
    cfg.lambda = args.lambda.resolve(rows, cols);
    if let Some(v) = args.tol {
        cfg.tol = v;
    }
    if let Some(v) = args.max_iters {
        cfg.max_iters = v;
    }
    if args.mu0.is_some() {
        cfg.mu0 = args.mu0;
    }
    if let Some(v) = args.rho {
        cfg.rho = v;
    }
    let out = rpca_ialm(&d, &cfg).stage("rpca")?;
    write_decomposition(&args.out_l, &out.low_rank, frame, "low_rank").stage("write")?;
    write_decomposition(&args.out_s, &out.sparse, frame, "sparse").stage("write")?;
    println!(
        "{rows}x{cols}: rank {}, {} iterations, converged: {}, residual {:.3e}",
        out.rank, out.iterations, out.converged, out.final_residual
    );
    Ok(())
}

fn denoise(args: DenoiseArgs) -> Result<()> {
    let request = match &args.replay {
        Some(path) => RunReport::read(path).stage("load")?.request,
        None => {
            let input = args
                .input
                .clone()
                .expect("clap requires input without replay");
            let source = if input.extension().is_some_and(|e| e == "json") {
                let mut spec = read_spec(&input).stage("load")?;
                if let Some(seed) = args.seed {
                    spec.seed = seed;
                }
                InputSource::Synth { spec }
            } else {
                InputSource::Manifest { path: input }
            };
            let rois = args
                .rois
                .as_deref()
                .map(read_rois)
                .transpose()
                .stage("load")?;
            DenoiseRequest {
                config: args.rasl.config(),
                method: args.method,
                rois,
                baseline: !args.no_baseline,
                ..DenoiseRequest::new(source)
            }
        }
    };

    let output = despeckle_core::denoise(&request)?;
    save_png16(&args.out, &output.image).stage("write")?;
    if let (Some(path), Some(img)) = (&args.baseline_out, &output.baseline_image) {
        save_png16(path, img).stage("write")?;
    }
    let mut report = output.report;
    report.outputs.image = Some(args.out.clone());
    report.outputs.report = args.report.clone();
    if let Some(path) = &args.report {
        report.write(path).stage("write")?;
    }

    let a = &report.alignment;
    println!(
        "aligned {} scans in {} outer iterations (converged: {}), rank {}",
        a.transforms.len(),
        a.outer_iters,
        a.converged,
        a.rank
    );
    if let Some(m) = &report.metrics {
        println!(
            "output: avg SNR {:.2} dB, avg CNR {:.2}",
            m.output.avg_snr, m.output.avg_cnr
        );
        if let Some(b) = &m.baseline {
            println!(
                "baseline: avg SNR {:.2} dB, avg CNR {:.2}",
                b.avg_snr, b.avg_cnr
            );
        }
    }
    if let Some(mis) = &report.truth_misalignment {
        println!(
            "misalignment vs truth: {:.3} px, {:.3} deg",
            mis.max_translation, mis.max_rotation_deg
        );
    }
    Ok(())
}

fn metrics(args: MetricsArgs) -> Result<()> {
    let img = despeckle_core::pipeline::load_image(&args.image).stage("load")?;
    let rois = read_rois(&args.rois).stage("load")?;
    let report = evaluate(&img, &rois).stage("metrics")?;
    if let Some(path) = &args.report {
        let value = serde_json::to_value(&report)
            .map_err(|e| Error::io(path, e))
            .stage("write")?;
        write_json(
            path,
            &json!({ "image": args.image, "rois": rois, "metrics": value }),
        )
        .stage("write")?;
    }
    for (i, (snr, cnr)) in report
        .per_roi_snr
        .iter()
        .zip(&report.per_roi_cnr)
        .enumerate()
    {
        println!("feature {i}: SNR {snr:.3} dB, CNR {cnr:.3}");
    }
    println!(
        "average: SNR {:.3} dB, CNR {:.3}",
        report.avg_snr, report.avg_cnr
    );
    Ok(())
}
