//! Robust batch alignment by sparse and low-rank decomposition.
//!
//! The outer loop linearizes the warp of every image around its current
//! transform, the inner loop solves the linearized problem
//!
//! ```text
//! min ‖L‖_* + λ‖S‖₁   s.t.   D∘τ + Σᵢ Jᵢ Δτᵢ εᵢεᵢᵀ = L + S
//! ```
//!
//! with an inexact augmented Lagrangian scheme, and the transforms are then
//! updated additively, `τ ← τ + Δτ`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::{l1_norm, singular_values, soft_threshold, spectral_norm, svt_full, Matrix};
use crate::rpca::{default_lambda, MU_GROWTH_CAP};
use crate::transform::{
    compose_update, transform_jacobian_with_gradients, warp, Frame, Image, ImageStack,
    JacobianBlock, TransformModel, TransformParams,
};

/// Jacobian blocks whose condition number exceeds this are rejected.
pub const MAX_JACOBIAN_CONDITION: f64 = 1e8;

/// Weight of the ℓ₁ term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lambda {
    /// `1/√pixels`.
    Auto,
    Value(f64),
}

impl Lambda {
    pub fn resolve(self, rows: usize, cols: usize) -> f64 {
        match self {
            Lambda::Auto => default_lambda(rows, cols),
            Lambda::Value(v) => v,
        }
    }
}

impl std::str::FromStr for Lambda {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Lambda::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Lambda::Value(v)),
            _ => Err(Error::InvalidInput(format!(
                "lambda must be 'auto' or a positive number, got {s:?}"
            ))),
        }
    }
}

/// Settings of the inner augmented Lagrangian solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnerSettings {
    pub tol: f64,
    pub max_iters: usize,
    /// Initial penalty; `None` selects `1.25 / ‖D∘τ‖₂`.
    pub mu0: Option<f64>,
    pub rho: f64,
}

impl Default for InnerSettings {
    fn default() -> Self {
        InnerSettings {
            tol: 1e-6,
            max_iters: 1000,
            mu0: None,
            rho: 1.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RaslConfig {
    pub model: TransformModel,
    pub lambda: Lambda,
    pub inner: InnerSettings,
    pub outer_max_iters: usize,
    /// Stop once `maxᵢ ‖Δτᵢ‖` falls below this.
    pub outer_tol: f64,
    /// Standard deviation, in pixels, of the Gaussian applied to the images
    /// the Jacobians take their gradients from. Zero uses the raw images.
    pub jacobian_smoothing: f64,
}

impl Default for RaslConfig {
    fn default() -> Self {
        RaslConfig {
            model: TransformModel::Rigid,
            lambda: Lambda::Auto,
            inner: InnerSettings::default(),
            outer_max_iters: 50,
            outer_tol: 1e-3,
            jacobian_smoothing: 1.5,
        }
    }
}

impl RaslConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("rasl config: {what}")));
        if let Lambda::Value(v) = self.lambda {
            if !(v > 0.0 && v.is_finite()) {
                return bad("lambda must be positive");
            }
        }
        if self.outer_max_iters == 0 {
            return bad("outer_max_iters must be at least 1");
        }
        if !(self.outer_tol > 0.0) {
            return bad("outer_tol must be positive");
        }
        if !(self.jacobian_smoothing >= 0.0 && self.jacobian_smoothing.is_finite()) {
            return bad("jacobian_smoothing must be finite and nonnegative");
        }
        let inner = &self.inner;
        if !(inner.tol > 0.0) || inner.max_iters == 0 || !(inner.rho > 1.0) {
            return bad("inner settings need tol > 0, max_iters ≥ 1, rho > 1");
        }
        if let Some(mu0) = inner.mu0 {
            if !(mu0 > 0.0 && mu0.is_finite()) {
                return bad("inner mu0 must be positive");
            }
        }
        Ok(())
    }
}

/// Multiplier matrix and penalty of the augmented Lagrangian.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianState {
    pub y: Matrix,
    pub mu: f64,
}

impl LagrangianState {
    pub fn new(y: Matrix, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "penalty must be positive, got {mu}"
            )));
        }
        Ok(LagrangianState { y, mu })
    }

    /// Zero multiplier with penalty `1.25/‖d‖₂`.
    pub fn cold(d: &Matrix) -> Result<Self> {
        let two = spectral_norm(d)?;
        LagrangianState::new(Matrix::zeros(d.nrows(), d.ncols()), 1.25 / two)
    }

    /// Dual-feasible start `Y = d / max(‖d‖₂, ‖d‖_∞/λ)`, penalty `1.25/‖d‖₂`.
    pub fn dual_scaled(d: &Matrix, lambda: f64) -> Result<Self> {
        let two = spectral_norm(d)?;
        let inf = d.amax() / lambda;
        LagrangianState::new(d / two.max(inf), 1.25 / two)
    }
}

/// Outcome of one linearized solve.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub low_rank: Matrix,
    pub sparse: Matrix,
    /// Parameter step for every image.
    pub dtaus: Vec<Vec<f64>>,
    pub iterations: usize,
    /// `‖D∘τ + JΔτ − L − S‖_F / ‖D∘τ‖_F` at exit.
    pub residual: f64,
    pub converged: bool,
    pub nuclear_norm: f64,
    pub rank: usize,
}

/// Orthonormal basis of one Jacobian block and the triangular factor that
/// maps steps in that basis back to parameters.
struct Basis {
    q: Matrix,
    r: Matrix,
}

fn orthonormalize(blocks: &[JacobianBlock], pixels: usize) -> Result<Vec<Option<Basis>>> {
    blocks
        .iter()
        .enumerate()
        .map(|(i, block)| {
            if block.pixels() != pixels {
                return Err(Error::InvalidInput(format!(
                    "jacobian {i} has {} rows, expected {pixels}",
                    block.pixels()
                )));
            }
            // Images without free parameters (or with an identically zero
            // Jacobian) contribute no step.
            if block.dof() == 0 || block.entries.iter().all(|v| *v == 0.0) {
                return Ok(None);
            }
            let qr = block.entries.clone().qr();
            let q = qr.q();
            let r = qr.unpack_r();
            let sv = singular_values(&r)?;
            let condition = sv[0] / sv[sv.len() - 1];
            if !(condition <= MAX_JACOBIAN_CONDITION) {
                return Err(Error::IllConditionedJacobian {
                    image: i,
                    condition,
                });
            }
            Ok(Some(Basis { q, r }))
        })
        .collect()
}

/// Solves the linearized problem for fixed Jacobians by inexact ALM.
///
/// `dw` holds one unit-norm column per image, `jacobians[i]` the derivative
/// of column `i`. The multiplier and penalty start from `state`.
pub fn rasl_inner(
    dw: &Matrix,
    jacobians: &[JacobianBlock],
    lambda: f64,
    state: LagrangianState,
    settings: &InnerSettings,
) -> Result<InnerSolution> {
    let (pixels, n) = dw.shape();
    if jacobians.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} jacobians for {n} images",
            jacobians.len()
        )));
    }
    if state.y.shape() != dw.shape() {
        return Err(Error::InvalidInput(
            "multiplier shape differs from data".into(),
        ));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let bases = orthonormalize(jacobians, pixels)?;
    let d_norm = dw.norm();
    if d_norm == 0.0 {
        return Err(Error::InvalidInput("data matrix is zero".into()));
    }

    let LagrangianState { mut y, mut mu } = state;
    let mu_max = mu * MU_GROWTH_CAP;
    let mut low_rank = Matrix::zeros(pixels, n);
    let mut sparse = Matrix::zeros(pixels, n);
    let mut jdt = Matrix::zeros(pixels, n);
    let mut steps: Vec<DVector<f64>> = bases
        .iter()
        .map(|b| DVector::zeros(b.as_ref().map_or(0, |b| b.q.ncols())))
        .collect();
    let mut residual = f64::INFINITY;
    let mut nuclear_norm = 0.0;
    let mut rank = 0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < settings.max_iters {
        iterations += 1;
        let inv_mu = 1.0 / mu;
        let base = dw + &jdt;
        let thresholded = svt_full(&(&base - &sparse + &y * inv_mu), inv_mu)
            .map_err(|e| numerical(iterations, e))?;
        low_rank = thresholded.value;
        nuclear_norm = thresholded.nuclear_norm;
        rank = thresholded.rank;
        sparse = soft_threshold(&(&base - &low_rank + &y * inv_mu), lambda * inv_mu)
            .map_err(|e| numerical(iterations, e))?;

        for (i, basis) in bases.iter().enumerate() {
            let Some(basis) = basis else { continue };
            let target =
                low_rank.column(i) + sparse.column(i) - dw.column(i) - y.column(i) * inv_mu;
            let step = basis.q.tr_mul(&target);
            jdt.set_column(i, &(&basis.q * &step));
            steps[i] = step;
        }

        let h = dw + &jdt - &low_rank - &sparse;
        y += &h * mu;
        mu = (mu * settings.rho).min(mu_max);

        residual = h.norm() / d_norm;
        if !residual.is_finite() {
            return Err(Error::Numerical {
                iteration: iterations,
                context: "inner solve diverged".into(),
            });
        }
        if residual <= settings.tol {
            converged = true;
            break;
        }
    }

    let dtaus = bases
        .iter()
        .zip(&steps)
        .zip(jacobians)
        .map(|((basis, step), block)| match basis {
            None => Ok(vec![0.0; block.dof()]),
            Some(b) => {
                b.r.solve_upper_triangular(step)
                    .map(|v| v.iter().copied().collect())
                    .ok_or_else(|| Error::Numerical {
                        iteration: iterations,
                        context: "triangular back-substitution failed".into(),
                    })
            }
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(InnerSolution {
        low_rank,
        sparse,
        dtaus,
        iterations,
        residual,
        converged,
        nuclear_norm,
        rank,
    })
}

fn numerical(iteration: usize, e: Error) -> Error {
    match e {
        Error::InvalidInput(context) | Error::Numerical { context, .. } => {
            Error::Numerical { iteration, context }
        }
        other => other,
    }
}

/// Divides every column by its ℓ₂ norm; returns the normalized matrix and
/// the norms.
pub fn normalize_columns(d: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut out = d.clone();
    let mut norms = Vec::with_capacity(d.ncols());
    for (index, mut col) in out.column_iter_mut().enumerate() {
        let norm = col.norm();
        if !(norm > 1e-12) {
            return Err(Error::DegenerateImage {
                index,
                reason: format!("column norm {norm:e} is too small to normalize"),
            });
        }
        col /= norm;
        norms.push(norm);
    }
    Ok((out, norms))
}

/// One outer iteration of the alignment loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub iteration: usize,
    /// `‖L‖_* + λ‖S‖₁` of the normalized problem.
    pub objective: f64,
    /// Relative feasibility residual of the inner solve.
    pub residual: f64,
    /// `maxᵢ ‖Δτᵢ‖`.
    pub max_step: f64,
    pub inner_iterations: usize,
    pub rank: usize,
    pub valid_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct RaslResult {
    /// De-normalized low-rank component, `pixels × n`.
    pub low_rank: Matrix,
    /// De-normalized sparse component, `pixels × n`.
    pub sparse: Matrix,
    pub taus: Vec<TransformParams>,
    pub outer_iters: usize,
    pub converged: bool,
    pub history: Vec<OuterRecord>,
    pub lambda: f64,
    pub frame: Frame,
    /// Pixels valid in every warped image at the final transforms.
    pub joint_mask: Vec<bool>,
    /// Per-image validity at the final transforms.
    pub masks: Vec<Vec<bool>>,
    /// Warped images at the final transforms (columns of `D∘τ`, unnormalized).
    pub aligned: Matrix,
    /// Column norms used for normalization at the final transforms.
    pub norms: Vec<f64>,
    /// Effective rank of the final low-rank component.
    pub rank: usize,
    /// `‖D∘τ − L − S‖_F / ‖D∘τ‖_F` of the final decomposition (normalized domain).
    pub final_residual: f64,
}

struct Warped {
    /// Masked, normalized data.
    dw: Matrix,
    raw: Matrix,
    norms: Vec<f64>,
    joint_mask: Vec<bool>,
    masks: Vec<Vec<bool>>,
    valid_fraction: f64,
}

fn warp_stack(images: &[Image], taus: &[TransformParams], frame: Frame) -> Result<Warped> {
    let warped = images
        .par_iter()
        .zip(taus.par_iter())
        .map(|(img, tau)| warp(img, tau, frame))
        .collect::<Result<Vec<_>>>()?;
    let pixels = frame.pixel_count();
    let joint_mask: Vec<bool> = (0..pixels)
        .map(|p| warped.iter().all(|(_, m)| m[p]))
        .collect();
    let valid = joint_mask.iter().filter(|&&m| m).count();
    let valid_fraction = valid as f64 / pixels as f64;
    if valid_fraction < 0.5 {
        return Err(Error::ExcessiveMotion {
            valid_fraction: 100.0 * valid_fraction,
        });
    }
    let raw = DMatrix::from_fn(pixels, images.len(), |p, i| warped[i].0.as_slice()[p]);
    let masked = DMatrix::from_fn(pixels, images.len(), |p, i| {
        if joint_mask[p] {
            raw[(p, i)]
        } else {
            0.0
        }
    });
    let (dw, norms) = normalize_columns(&masked)?;
    Ok(Warped {
        dw,
        raw,
        norms,
        joint_mask,
        masks: warped.into_iter().map(|(_, m)| m).collect(),
        valid_fraction,
    })
}

/// Aligns a stack of images while decomposing it into low-rank and sparse
/// parts. Every transform starts at the identity.
pub fn rasl_align(stack: &ImageStack, cfg: &RaslConfig) -> Result<RaslResult> {
    cfg.validate()?;
    let images = stack.images();
    if images.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "alignment needs at least 2 images, got {}",
            images.len()
        )));
    }
    let frame = stack.frame();
    let n = images.len();
    let lambda = cfg.lambda.resolve(frame.pixel_count(), n);
    let smoothed: Vec<Image> = images
        .par_iter()
        .map(|img| img.gaussian_blur(cfg.jacobian_smoothing))
        .collect();
    let mut taus = vec![TransformParams::identity(cfg.model); n];
    let mut previous: Vec<Vec<f64>> = vec![vec![0.0; cfg.model.dof()]; n];
    let mut gains = vec![1.0; n];
    let mut history = Vec::new();
    let mut converged = false;

    for iteration in 1..=cfg.outer_max_iters {
        let outer = |e: Error| Error::Outer {
            iteration,
            source: Box::new(e),
        };
        let warped = warp_stack(images, &taus, frame).map_err(outer)?;
        let jacobians = images
            .par_iter()
            .zip(smoothed.par_iter())
            .zip(taus.par_iter())
            .enumerate()
            .map(|(i, ((img, grad_src), tau))| {
                transform_jacobian_with_gradients(img, grad_src, tau, frame, &warped.joint_mask)
                    .map_err(|e| match e {
                        Error::DegenerateImage { reason, .. } => {
                            Error::DegenerateImage { index: i, reason }
                        }
                        other => other,
                    })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(outer)?;
        let state = initial_state(&warped.dw, &cfg.inner).map_err(outer)?;
        let sol = rasl_inner(&warped.dw, &jacobians, lambda, state, &cfg.inner).map_err(outer)?;

        let steps = damp_reversals(remove_common_step(&sol.dtaus), &mut previous, &mut gains);
        let mut max_step: f64 = 0.0;
        for (tau, dtau) in taus.iter_mut().zip(&steps) {
            *tau = compose_update(tau, dtau).map_err(outer)?;
            max_step = max_step.max(dtau.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        history.push(OuterRecord {
            iteration,
            objective: sol.nuclear_norm + lambda * l1_norm(&sol.sparse),
            residual: sol.residual,
            max_step,
            inner_iterations: sol.iterations,
            rank: sol.rank,
            valid_fraction: warped.valid_fraction,
        });
        if max_step < cfg.outer_tol {
            converged = true;
            break;
        }
    }

    // Decompose the stack at the final transforms so that L + S reproduces
    // D∘τ itself rather than its linearization.
    let outer_iters = history.len();
    let wrap = |e: Error| Error::Outer {
        iteration: outer_iters + 1,
        source: Box::new(e),
    };
    let warped = warp_stack(images, &taus, frame).map_err(wrap)?;
    let no_params: Vec<JacobianBlock> = (0..n)
        .map(|_| JacobianBlock {
            entries: Matrix::zeros(frame.pixel_count(), 0),
        })
        .collect();
    let state = initial_state(&warped.dw, &cfg.inner).map_err(wrap)?;
    let sol = rasl_inner(&warped.dw, &no_params, lambda, state, &cfg.inner).map_err(wrap)?;

    let mut low_rank = sol.low_rank;
    let mut sparse = sol.sparse;
    for (i, norm) in warped.norms.iter().enumerate() {
        let mut l = low_rank.column_mut(i);
        l *= *norm;
        let mut s = sparse.column_mut(i);
        s *= *norm;
    }
    for (p, _) in warped.joint_mask.iter().enumerate().filter(|(_, m)| !**m) {
        low_rank.row_mut(p).fill(0.0);
        sparse.row_mut(p).fill(0.0);
    }

    Ok(RaslResult {
        low_rank,
        sparse,
        taus,
        outer_iters,
        converged,
        history,
        lambda,
        frame,
        joint_mask: warped.joint_mask,
        masks: warped.masks,
        aligned: warped.raw,
        norms: warped.norms,
        rank: sol.rank,
        final_residual: sol.residual,
    })
}

/// Subtracts the mean step. A step shared by every image moves the whole
/// stack without changing its alignment, and the linearized objective is
/// flat to first order along it, so the inner solve leaves it undetermined.
fn remove_common_step(dtaus: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = dtaus.len() as f64;
    let dof = dtaus.first().map_or(0, Vec::len);
    let mean: Vec<f64> = (0..dof)
        .map(|k| dtaus.iter().map(|d| d[k]).sum::<f64>() / n)
        .collect();
    dtaus
        .iter()
        .map(|d| d.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect()
}

/// Halves an image's step gain each time its step turns against the previous
/// one. Bilinear sampling and the ℓ₁ term make the objective non-smooth, and
/// near a kink the full step bounces across it indefinitely.
fn damp_reversals(
    steps: Vec<Vec<f64>>,
    previous: &mut [Vec<f64>],
    gains: &mut [f64],
) -> Vec<Vec<f64>> {
    let damped: Vec<Vec<f64>> = steps
        .iter()
        .zip(previous.iter())
        .zip(gains.iter_mut())
        .map(|((step, prev), gain)| {
            let turn: f64 = step.iter().zip(prev).map(|(a, b)| a * b).sum();
            if turn < 0.0 {
                *gain *= 0.5;
            }
            step.iter().map(|v| v * *gain).collect()
        })
        .collect();
    previous.clone_from_slice(&steps);
    remove_common_step(&damped)
}

fn initial_state(dw: &Matrix, inner: &InnerSettings) -> Result<LagrangianState> {
    match inner.mu0 {
        Some(mu) => LagrangianState::new(Matrix::zeros(dw.nrows(), dw.ncols()), mu),
        None => LagrangianState::cold(dw),
    }
}

/// Worst pairwise relative misalignment between recovered and true
/// transforms, insensitive to a common transform applied to every image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Misalignment {
    /// Pixels, measured at the frame center.
    pub max_translation: f64,
    pub max_rotation_deg: f64,
}

/// Compares `τ̂ⱼ⁻¹∘τ̂ᵢ` against `τⱼ⁻¹∘τᵢ` for every pair. With inverse-warp
/// sampling these relative transforms are unaffected by the alignment gauge.
pub fn pairwise_misalignment(
    truth: &[TransformParams],
    estimate: &[TransformParams],
) -> Result<Misalignment> {
    if truth.len() != estimate.len() {
        return Err(Error::InvalidInput(format!(
            "{} true transforms, {} estimates",
            truth.len(),
            estimate.len()
        )));
    }
    let mut worst = Misalignment {
        max_translation: 0.0,
        max_rotation_deg: 0.0,
    };
    for i in 0..truth.len() {
        for j in 0..truth.len() {
            if i == j {
                continue;
            }
            let rel_true = truth[j].inverse_matrix()? * truth[i].to_matrix();
            let rel_est = estimate[j].inverse_matrix()? * estimate[i].to_matrix();
            let err = rel_true
                .try_inverse()
                .ok_or_else(|| Error::InvalidTransform("relative transform is singular".into()))?
                * rel_est;
            let angle = err[(1, 0)].atan2(err[(0, 0)]).to_degrees().abs();
            let shift = err[(0, 2)].hypot(err[(1, 2)]);
            worst.max_translation = worst.max_translation.max(shift);
            worst.max_rotation_deg = worst.max_rotation_deg.max(angle);
        }
    }
    Ok(worst)
}
