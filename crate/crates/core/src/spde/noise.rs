use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Brownian increments of one path, `dB_k ~ N(0, dt)`.
///
/// The stream of path `p` under seed `s` is fixed by `(s, p)` alone, so paths can be
/// generated in any order or in parallel.
pub fn brownian_increments(seed: u64, path: u64, steps: usize, dt: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    let scale = dt.sqrt();
    (0..steps)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Sums consecutive blocks of `factor` increments, giving the same Brownian path
/// sampled on a grid `factor` times coarser.
pub fn coarsen(increments: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 || increments.len() % factor != 0 {
        return Err(Error::Config(format!(
            "{} increments cannot be coarsened by {factor}",
            increments.len()
        )));
    }
    Ok(increments
        .chunks(factor)
        .map(|c| c.iter().sum())
        .collect())
}
