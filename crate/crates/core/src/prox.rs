//! Proximal operators of the ℓ₁ norm and the nuclear norm.
//!
//! These are the two kernels every solver in the crate is built from:
//! entrywise shrinkage for the sparse term and singular-value thresholding
//! for the low-rank term.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Dense real matrix. Pixel stacks are stored one vectorized image per column.
pub type Matrix = DMatrix<f64>;

/// Singular values below this fraction of the largest one count as zero.
pub const RANK_RTOL: f64 = 1e-12;

pub(crate) fn ensure_finite(x: &Matrix, what: &str) -> Result<()> {
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "{what} has a non-finite entry at linear index {pos}"
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn shrink(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Entrywise soft thresholding: `sign(x)·max(|x|−t, 0)`.
pub fn soft_threshold(x: &Matrix, t: f64) -> Result<Matrix> {
    check_threshold(t)?;
    ensure_finite(x, "soft_threshold input")?;
    Ok(x.map(|v| shrink(v, t)))
}

/// Singular-value thresholding, the proximal operator of `t·‖·‖_*`.
///
/// Returns the shrunk matrix and its effective rank, i.e. the number of
/// singular values strictly above `t` (and above [`RANK_RTOL`] relative to
/// the largest singular value).
pub fn svt(x: &Matrix, t: f64) -> Result<(Matrix, usize)> {
    let out = svt_full(x, t)?;
    Ok((out.value, out.rank))
}

/// Result of a singular-value thresholding step, with the bookkeeping the
/// solvers need for their objective values.
#[derive(Debug, Clone)]
pub struct Thresholded {
    pub value: Matrix,
    pub rank: usize,
    /// Nuclear norm of `value`, i.e. `Σ max(σ_k − t, 0)`.
    pub nuclear_norm: f64,
}

pub fn svt_full(x: &Matrix, t: f64) -> Result<Thresholded> {
    check_threshold(t)?;
    ensure_finite(x, "svt input")?;
    let (rows, cols) = x.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidInput("svt input is empty".into()));
    }
    let f = to_faer(x);
    let svd = f.thin_svd().map_err(|_| not_converged(rows, cols))?;
    let sigma: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let floor = sigma.first().copied().unwrap_or(0.0) * RANK_RTOL;

    let mut rank = 0;
    let mut nuclear_norm = 0.0;
    let mut kept = Vec::new();
    for (k, &s) in sigma.iter().enumerate() {
        if s > t && s > floor {
            rank += 1;
        }
        if s > t {
            nuclear_norm += s - t;
            kept.push((k, s - t));
        }
    }

    // U·diag(shrunk)·Vᵀ restricted to the non-zero part.
    let (u, v) = (svd.U(), svd.V());
    let value = Matrix::from_fn(rows, cols, |r, c| {
        kept.iter().map(|&(k, s)| u[(r, k)] * s * v[(c, k)]).sum()
    });
    Ok(Thresholded {
        value,
        rank,
        nuclear_norm,
    })
}

fn to_faer(x: &Matrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(x.nrows(), x.ncols(), |r, c| x[(r, c)])
}

fn not_converged(rows: usize, cols: usize) -> Error {
    Error::Numerical {
        iteration: 0,
        context: format!("SVD of a {rows}x{cols} matrix did not converge"),
    }
}

/// Singular values of `x`, largest first.
pub fn singular_values(x: &Matrix) -> Result<Vec<f64>> {
    ensure_finite(x, "matrix")?;
    let (rows, cols) = x.shape();
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    to_faer(x)
        .singular_values()
        .map_err(|_| not_converged(rows, cols))
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(x: &Matrix) -> Result<f64> {
    Ok(singular_values(x)?.first().copied().unwrap_or(0.0))
}

pub fn nuclear_norm(x: &Matrix) -> Result<f64> {
    Ok(singular_values(x)?.iter().sum())
}

pub fn l1_norm(x: &Matrix) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "threshold must be finite and nonnegative, got {t}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn soft_threshold_scalar_cases() {
        let x = Matrix::from_element(1, 1, 3.0);
        assert_eq!(soft_threshold(&x, 1.0).unwrap()[(0, 0)], 2.0);
        let x = Matrix::from_element(1, 1, -0.5);
        assert_eq!(soft_threshold(&x, 1.0).unwrap()[(0, 0)], 0.0);
        let x = Matrix::from_element(1, 1, -3.0);
        assert_eq!(soft_threshold(&x, 1.0).unwrap()[(0, 0)], -2.0);
    }

    #[test]
    fn soft_threshold_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 7, 5);
        assert_eq!(soft_threshold(&x, 0.0).unwrap(), x);
    }

    #[test]
    fn rejects_non_finite() {
        let mut x = Matrix::zeros(2, 2);
        x[(1, 0)] = f64::NAN;
        assert!(matches!(
            soft_threshold(&x, 1.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(svt(&x, 1.0), Err(Error::InvalidInput(_))));
        x[(1, 0)] = f64::INFINITY;
        assert!(soft_threshold(&x, 1.0).is_err());
        assert!(soft_threshold(&Matrix::zeros(2, 2), -1.0).is_err());
    }

    #[test]
    fn svt_diagonal() {
        let x = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![5.0, 2.0, 0.5]));
        let (y, rank) = svt(&x, 1.0).unwrap();
        let expected = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0, 0.0]));
        assert_eq!(rank, 2);
        assert!((y - expected).norm() < 1e-12);
    }

    #[test]
    fn svt_zero_threshold_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (r, c) in [(6, 6), (40, 5), (5, 40), (9, 7)] {
            let x = random_matrix(&mut rng, r, c);
            let (y, rank) = svt(&x, 0.0).unwrap();
            assert!((&y - &x).norm() / x.norm() < 1e-12);
            assert_eq!(rank, r.min(c));
        }
    }

    #[test]
    fn svt_reports_numerical_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 30, 2);
        let b = random_matrix(&mut rng, 2, 8);
        let (_, rank) = svt(&(a * b), 0.0).unwrap();
        assert_eq!(rank, 2);
    }

    #[test]
    fn svt_of_zero_is_zero() {
        let (y, rank) = svt(&Matrix::zeros(10, 3), 0.5).unwrap();
        assert_eq!(rank, 0);
        assert_eq!(y, Matrix::zeros(10, 3));
    }

    #[test]
    fn svt_nuclear_norm_matches_shrunk_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 25, 6);
        let sv = singular_values(&x).unwrap();
        let t = sv[2];
        let out = svt_full(&x, t).unwrap();
        let expected: f64 = sv.iter().map(|s| (s - t).max(0.0)).sum();
        assert!((out.nuclear_norm - expected).abs() < 1e-12);
        assert!((nuclear_norm(&out.value).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn svt_is_first_order_optimal() {
        // t‖Z‖_* + ½‖Z−X‖² has a unique minimizer; no small perturbation improves it.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 8, 6);
        let t = 0.4;
        let objective = |z: &Matrix| t * nuclear_norm(z).unwrap() + 0.5 * (z - &x).norm_squared();
        let (z, _) = svt(&x, t).unwrap();
        let best = objective(&z);
        for _ in 0..100 {
            let dz = random_matrix(&mut rng, 8, 6);
            let dz = &dz * (1e-3 / dz.norm());
            assert!(objective(&(&z + dz)) >= best - 1e-12);
        }
    }

    #[test]
    fn svt_of_nearly_identical_columns() {
        // Columns equal up to rounding leave singular values far below the
        // representable range; the leading one must still be exact.
        let col: Vec<f64> = (0..400)
            .map(|p| 0.5 + 0.3 * (0.07 * p as f64).sin())
            .collect();
        let mut x = Matrix::from_fn(400, 6, |p, _| col[p]);
        for c in 1..6 {
            x[(c * 37, c)] += 4e-16 * c as f64;
        }
        let sigma = x.column(0).norm() * 6f64.sqrt();
        let t = 0.3 * sigma;
        let out = svt_full(&x, t).unwrap();
        assert_eq!(out.rank, 1);
        assert!((out.nuclear_norm - (sigma - t)).abs() < 1e-9 * sigma);
        let expected = &x * ((sigma - t) / sigma);
        assert!((&out.value - expected).amax() < 1e-12);
    }

    proptest! {
        #[test]
        fn soft_threshold_is_a_contraction(
            xs in prop::collection::vec(-10.0f64..10.0, 12),
            ys in prop::collection::vec(-10.0f64..10.0, 12),
            t in 0.0f64..5.0,
        ) {
            let x = Matrix::from_vec(4, 3, xs);
            let y = Matrix::from_vec(4, 3, ys);
            let d = (soft_threshold(&x, t).unwrap() - soft_threshold(&y, t).unwrap()).norm();
            prop_assert!(d <= (&x - &y).norm() + 1e-12);
        }

        #[test]
        fn svt_never_increases_nuclear_norm(
            xs in prop::collection::vec(-5.0f64..5.0, 20),
            t in 0.0f64..3.0,
        ) {
            let x = Matrix::from_vec(5, 4, xs);
            let before = nuclear_norm(&x).unwrap();
            let after = svt_full(&x, t).unwrap().nuclear_norm;
            prop_assert!(after <= before + 1e-9);
            if t > 1e-6 && before > 1e-6 {
                prop_assert!(after < before);
            }
        }
    }
}
