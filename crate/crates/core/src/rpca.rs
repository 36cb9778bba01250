//! Robust PCA by the inexact augmented Lagrange multiplier method.
//!
//! Splits a data matrix `D` into a low-rank part `L` and a sparse part `S`
//! by minimizing `‖L‖_* + λ‖S‖₁` subject to `L + S = D`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::{ensure_finite, soft_threshold, spectral_norm, svt_full, Matrix};

/// The penalty stops growing once it reaches this multiple of its start value.
pub const MU_GROWTH_CAP: f64 = 1e7;

/// Standard ℓ₁ weight `1/√max(rows, cols)`.
pub fn default_lambda(rows: usize, cols: usize) -> f64 {
    1.0 / (rows.max(cols).max(1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpcaConfig {
    pub lambda: f64,
    /// Relative feasibility `‖D−L−S‖_F / ‖D‖_F` at which to stop.
    pub tol: f64,
    pub max_iters: usize,
    /// Initial penalty. `None` selects `1.25 / ‖D‖₂`.
    pub mu0: Option<f64>,
    pub rho: f64,
}

impl RpcaConfig {
    /// Defaults for a `rows × cols` input. The penalty grows by 1.05 per
    /// iteration: at 1.5 the iterates freeze at a feasible but suboptimal
    /// point on small problems once `μ` is large.
    pub fn for_shape(rows: usize, cols: usize) -> Self {
        RpcaConfig {
            lambda: default_lambda(rows, cols),
            tol: 1e-7,
            max_iters: 500,
            mu0: None,
            rho: 1.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("rpca config: {what}")));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if let Some(mu0) = self.mu0 {
            if !(mu0 > 0.0 && mu0.is_finite()) {
                return bad("mu0 must be positive");
            }
        }
        if !(self.rho > 1.0 && self.rho.is_finite()) {
            return bad("rho must exceed 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RpcaResult {
    pub low_rank: Matrix,
    pub sparse: Matrix,
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    /// Effective rank of `low_rank` as reported by the last thresholding step.
    pub rank: usize,
    /// Relative feasibility residual after every iteration.
    pub residual_history: Vec<f64>,
}

impl RpcaResult {
    pub fn objective(&self, lambda: f64) -> Result<f64> {
        Ok(
            crate::prox::nuclear_norm(&self.low_rank)?
                + lambda * crate::prox::l1_norm(&self.sparse),
        )
    }
}

/// Inexact ALM robust PCA.
///
/// Non-convergence within `max_iters` is not an error; the last iterate is
/// returned with `converged == false`.
pub fn rpca_ialm(d: &Matrix, cfg: &RpcaConfig) -> Result<RpcaResult> {
    cfg.validate()?;
    ensure_finite(d, "rpca input")?;
    let (rows, cols) = d.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidInput("rpca input is empty".into()));
    }

    let d_norm = d.norm();
    if d_norm == 0.0 {
        return Ok(RpcaResult {
            low_rank: Matrix::zeros(rows, cols),
            sparse: Matrix::zeros(rows, cols),
            iterations: 1,
            final_residual: 0.0,
            converged: true,
            rank: 0,
            residual_history: vec![0.0],
        });
    }

    let lambda = cfg.lambda;
    let two = spectral_norm(d)?;
    let inf = d.amax() / lambda;
    let mut y = d / two.max(inf);
    let mut mu = cfg.mu0.unwrap_or(1.25 / two);
    let mu_max = mu * MU_GROWTH_CAP;

    let mut low_rank = Matrix::zeros(rows, cols);
    let mut sparse = Matrix::zeros(rows, cols);
    let mut history = Vec::new();
    let mut rank = 0;

    for iteration in 1..=cfg.max_iters {
        let inv_mu = 1.0 / mu;
        let thresholded =
            svt_full(&(d - &sparse + &y * inv_mu), inv_mu).map_err(|e| numerical(iteration, e))?;
        low_rank = thresholded.value;
        rank = thresholded.rank;
        sparse = soft_threshold(&(d - &low_rank + &y * inv_mu), lambda * inv_mu)
            .map_err(|e| numerical(iteration, e))?;

        let h = d - &low_rank - &sparse;
        y += &h * mu;
        mu = (mu * cfg.rho).min(mu_max);

        let residual = h.norm() / d_norm;
        if !residual.is_finite() {
            return Err(Error::Numerical {
                iteration,
                context: "rpca iterate diverged".into(),
            });
        }
        history.push(residual);
        if residual <= cfg.tol {
            return Ok(RpcaResult {
                low_rank,
                sparse,
                iterations: iteration,
                final_residual: residual,
                converged: true,
                rank,
                residual_history: history,
            });
        }
    }

    let final_residual = history.last().copied().unwrap_or(f64::INFINITY);
    Ok(RpcaResult {
        low_rank,
        sparse,
        iterations: cfg.max_iters,
        final_residual,
        converged: false,
        rank,
        residual_history: history,
    })
}

fn numerical(iteration: usize, e: Error) -> Error {
    match e {
        Error::InvalidInput(context) => Error::Numerical { iteration, context },
        Error::Numerical { context, .. } => Error::Numerical { iteration, context },
        other => other,
    }
}
