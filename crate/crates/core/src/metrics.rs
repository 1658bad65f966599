//! Recovery metrics and holdout splitting.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::quantization::{quantize_value, QuantizedObservations};
use crate::tensor::DenseTensor;

/// `‖X* - X̂‖_F^2 / ‖X*‖_F^2`.
pub fn relative_error(xstar: &DenseTensor, xhat: &DenseTensor) -> Result<f64> {
    xstar.check_same_shape(xhat)?;
    let denom: f64 = xstar.data().iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Err(Error::ZeroTensor);
    }
    let num: f64 = xstar
        .data()
        .iter()
        .zip(xhat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(num / denom)
}

/// Nearest level in `1..=levels`; exact midpoints go to the lower level.
pub fn nearest_level(v: f64, levels: usize) -> usize {
    let top = levels as f64;
    let r = libm::ceil(v - 0.5);
    if r.is_nan() {
        return 1;
    }
    r.clamp(1.0, top) as usize
}

/// Mean absolute level distance over the held-out entries, normalized by the
/// level range `W - 1`.
///
/// `estimate` is expressed in label units: each entry is mapped to the
/// nearest level before comparison.
pub fn prediction_error(holdout: &QuantizedObservations, estimate: &DenseTensor) -> Result<f64> {
    if holdout.is_empty() {
        return Err(Error::EmptyHoldout);
    }
    if estimate.shape() != holdout.shape() {
        return Err(Error::DimensionMismatch {
            expected: holdout.omega_set().total(),
            actual: estimate.len(),
        });
    }
    let levels = holdout.levels();
    let range = (levels - 1) as f64;
    let data = estimate.data();
    let total: f64 = holdout
        .iter()
        .map(|(i, l)| (l as f64 - nearest_level(data[i], levels) as f64).abs())
        .sum();
    Ok(total / (holdout.len() as f64 * range))
}

/// Maps a latent estimate to label units with the noise-free quantizer.
pub fn quantized_estimate(xhat: &DenseTensor, omegas: &[f64]) -> DenseTensor {
    let mut out = xhat.clone();
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = quantize_value(omegas, *v) as f64);
    out
}

/// Seeded random split of the observed entries into `(train, holdout)`,
/// with `round(fraction * |Ω|)` entries held out.
pub fn holdout_split(
    obs: &QuantizedObservations,
    fraction: f64,
    seed: u64,
) -> Result<(QuantizedObservations, QuantizedObservations)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter("holdout fraction must be in (0, 1)"));
    }
    let n = obs.len();
    let n_hold = libm::round(fraction * n as f64) as usize;
    if n_hold == 0 {
        return Err(Error::EmptyHoldout);
    }
    if n_hold >= n {
        return Err(Error::EmptyTrain);
    }
    let mut positions: Vec<usize> = (0..n).collect();
    positions.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let (hold, train) = positions.split_at(n_hold);
    Ok((obs.subset(train)?, obs.subset(hold)?))
}
