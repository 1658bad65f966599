//! Synthetic low-rank ground truth.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::cp::{cp_reconstruct, FactorSet};
use crate::error::{Error, Result};
use crate::quantization::{default_boundaries, NoiseModel};
use crate::tensor::DenseTensor;

/// Parameters of one synthetic recovery problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub shape: Vec<usize>,
    pub rank: usize,
    /// True noise model (σ_true).
    pub noise: NoiseModel,
    /// True thresholds `ω*_1..ω*_{W-1}`.
    pub omegas: Vec<f64>,
    pub obs_rate: f64,
    /// Uniform range of each factor's entries.
    pub factor_ranges: Vec<(f64, f64)>,
}

impl SynthSpec {
    /// `n x n x n`, factor 1 uniform on `[-0.5, 0.5]`, the others on
    /// `[0, 1]`, probit noise with σ = 0.25, `W = 4` with thresholds
    /// `-0.4, 0, 0.4`, full observation.
    pub fn cube(n: usize, rank: usize) -> Self {
        Self {
            shape: vec![n; 3],
            rank,
            noise: NoiseModel::probit(0.25).expect("positive sigma"),
            omegas: synthetic_thresholds(4),
            obs_rate: 1.0,
            factor_ranges: default_factor_ranges(3),
        }
    }

    pub fn levels(&self) -> usize {
        self.omegas.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.len() < 2 || self.shape.contains(&0) {
            return Err(Error::InvalidShape("need at least two positive extents"));
        }
        if self.rank == 0 {
            return Err(Error::InvalidParameter("rank must be at least 1"));
        }
        if self.factor_ranges.len() != self.shape.len() {
            return Err(Error::DimensionMismatch {
                expected: self.shape.len(),
                actual: self.factor_ranges.len(),
            });
        }
        if self
            .factor_ranges
            .iter()
            .any(|&(lo, hi)| !(lo < hi && lo.is_finite() && hi.is_finite()))
        {
            return Err(Error::InvalidParameter("factor ranges must be finite with low < high"));
        }
        if !(self.obs_rate > 0.0 && self.obs_rate <= 1.0) {
            return Err(Error::InvalidParameter("observation rate must be in (0, 1]"));
        }
        if self.omegas.is_empty() || self.omegas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidBoundaries("thresholds must be strictly increasing"));
        }
        Ok(())
    }
}

/// First factor on `[-0.5, 0.5]`, the rest on `[0, 1]`.
pub fn default_factor_ranges(order: usize) -> Vec<(f64, f64)> {
    (0..order)
        .map(|k| if k == 0 { (-0.5, 0.5) } else { (0.0, 1.0) })
        .collect()
}

/// Thresholds used by the synthetic experiments: `0` for `W = 2`,
/// `-0.4, 0, 0.4` for `W = 4` and the uniform grid on `[-1, 1]` otherwise.
pub fn synthetic_thresholds(levels: usize) -> Vec<f64> {
    match levels {
        2 => vec![0.0],
        4 => vec![-0.4, 0.0, 0.4],
        _ => default_boundaries(levels.max(2), 1.0)
            .map(|b| b.omegas().to_vec())
            .unwrap_or_default(),
    }
}

/// Draws the factors, reconstructs, and rescales so that `max |X*| = 1`.
/// The returned factors reproduce the rescaled tensor.
pub fn gen_synthetic(spec: &SynthSpec, seed: u64) -> Result<(DenseTensor, FactorSet)> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut factors = FactorSet::random_uniform(&spec.shape, spec.rank, &spec.factor_ranges, &mut rng)?;
    let raw = cp_reconstruct(&factors);
    let peak = raw.max_abs();
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::DegenerateDraw("all-zero synthetic tensor"));
    }
    factors.factor_mut(0).scale(1.0 / peak);
    let mut x = raw;
    x.data_mut().iter_mut().for_each(|v| *v /= peak);
    Ok((x, factors))
}
