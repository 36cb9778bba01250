//! Shared fixtures for unit tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::prox::Matrix;

/// `D = L0 + S0` with `L0` a product of standard-normal `n×r` and `r×n`
/// factors and `S0` supported on `fraction` of the entries with magnitude ten
/// times the entry scale `√r` of `L0` and random sign.
pub fn low_rank_plus_sparse(
    n: usize,
    rank: usize,
    fraction: f64,
    seed: u64,
) -> (Matrix, Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Matrix::from_fn(n, rank, |_, _| rng.sample(StandardNormal));
    let b = Matrix::from_fn(rank, n, |_, _| rng.sample(StandardNormal));
    let l0 = a * b;
    let mut idx: Vec<usize> = (0..n * n).collect();
    idx.shuffle(&mut rng);
    let count = (fraction * (n * n) as f64).round() as usize;
    let magnitude = 10.0 * (rank as f64).sqrt();
    let mut s0 = Matrix::zeros(n, n);
    for &k in &idx[..count] {
        s0[k] = if rng.random::<bool>() {
            magnitude
        } else {
            -magnitude
        };
    }
    (&l0 + &s0, l0, s0)
}
