//! Noise models, the multi-level quantizer and its bin probabilities, the
//! curvature/slope constants of the negative log-likelihood and the
//! recovery-error bound evaluator.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, ObservationSet};
use crate::PROB_FLOOR;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Probit,
    Logistic,
}

/// Additive noise with CDF `Φ(x) = Φ_0(x / σ)`, where `Φ_0` is the standard
/// normal or the standard logistic CDF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    sigma: f64,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter("sigma must be positive and finite"));
        }
        Ok(Self { kind, sigma })
    }

    pub fn probit(sigma: f64) -> Result<Self> {
        Self::new(NoiseKind::Probit, sigma)
    }

    pub fn logistic(sigma: f64) -> Result<Self> {
        Self::new(NoiseKind::Logistic, sigma)
    }

    #[inline]
    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `Φ(x)`. The probit branch uses `erfc`, accurate to a few ulps over the
    /// whole line including the tails.
    pub fn cdf(&self, x: f64) -> f64 {
        let z = x / self.sigma;
        match self.kind {
            NoiseKind::Probit => 0.5 * libm::erfc(-z * core::f64::consts::FRAC_1_SQRT_2),
            NoiseKind::Logistic => logistic(z),
        }
    }

    /// `1 - Φ(x)` without cancellation.
    pub fn sf(&self, x: f64) -> f64 {
        let z = x / self.sigma;
        match self.kind {
            NoiseKind::Probit => 0.5 * libm::erfc(z * core::f64::consts::FRAC_1_SQRT_2),
            NoiseKind::Logistic => logistic(-z),
        }
    }

    /// `Φ'(x)`.
    pub fn pdf(&self, x: f64) -> f64 {
        if x.is_infinite() {
            return 0.0;
        }
        let z = x / self.sigma;
        match self.kind {
            NoiseKind::Probit => FRAC_1_SQRT_2PI * libm::exp(-0.5 * z * z) / self.sigma,
            NoiseKind::Logistic => {
                let p = logistic(z);
                p * logistic(-z) / self.sigma
            }
        }
    }

    /// `Φ''(x)`.
    pub fn pdf_deriv(&self, x: f64) -> f64 {
        if x.is_infinite() {
            return 0.0;
        }
        let z = x / self.sigma;
        match self.kind {
            NoiseKind::Probit => -z * FRAC_1_SQRT_2PI * libm::exp(-0.5 * z * z) / (self.sigma * self.sigma),
            NoiseKind::Logistic => {
                let p = logistic(z);
                let q = logistic(-z);
                p * q * (q - p) / (self.sigma * self.sigma)
            }
        }
    }

    /// One noise draw. Logistic noise uses the inverse CDF
    /// `σ log(u / (1 - u))`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::Probit => {
                let z: f64 = rng.sample(StandardNormal);
                self.sigma * z
            }
            NoiseKind::Logistic => {
                let mut u: f64 = rng.random();
                while u == 0.0 {
                    u = rng.random();
                }
                self.sigma * libm::log(u / (1.0 - u))
            }
        }
    }
}

impl NoiseModel {
    /// Log of the standardized density up to an additive constant.
    fn log_kernel(&self, z: f64) -> f64 {
        match self.kind {
            NoiseKind::Probit => -0.5 * z * z,
            NoiseKind::Logistic => {
                let a = libm::fabs(z);
                -a - 2.0 * libm::log1p(libm::exp(-a))
            }
        }
    }

    /// `φ'(z) / φ(z)` for the standardized density.
    fn score(&self, z: f64) -> f64 {
        match self.kind {
            NoiseKind::Probit => -z,
            NoiseKind::Logistic => logistic(-z) - logistic(z),
        }
    }

    /// Mills ratio `(1 - Φ(z)) / φ(z)` of the standardized model, `z >= 0`.
    fn mills(&self, z: f64) -> f64 {
        match self.kind {
            NoiseKind::Probit => {
                let sqrt_half_pi = 1.253_314_137_315_500_3;
                sqrt_half_pi * erfcx(z * core::f64::consts::FRAC_1_SQRT_2)
            }
            NoiseKind::Logistic => 1.0 + libm::exp(-z),
        }
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Ordered thresholds `ω_1 < .. < ω_{W-1}` with the gap floors
/// `κ_2..κ_{W-1}` and the box `[α_low, α_upper]` of the feasible set.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundaries {
    omegas: Vec<f64>,
    /// `kappas[i]` is `κ_{i+2}`.
    kappas: Vec<f64>,
    alpha_low: f64,
    alpha_upper: f64,
}

/// Slack allowed when checking the gap and box constraints, so values that
/// were projected onto a constraint still test as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;

impl Boundaries {
    pub fn new(omegas: Vec<f64>, kappas: Vec<f64>, alpha_low: f64, alpha_upper: f64) -> Result<Self> {
        if omegas.is_empty() {
            return Err(Error::InvalidBoundaries("at least one threshold is required"));
        }
        if kappas.len() + 1 != omegas.len() {
            return Err(Error::InvalidBoundaries(
                "expected one gap floor per interior threshold",
            ));
        }
        if kappas.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return Err(Error::InvalidBoundaries("gap floors must be positive"));
        }
        if !(alpha_low.is_finite() && alpha_upper.is_finite() && alpha_low <= alpha_upper) {
            return Err(Error::InvalidBoundaries("box bounds must be finite and ordered"));
        }
        let b = Self {
            omegas,
            kappas,
            alpha_low,
            alpha_upper,
        };
        if b.omegas.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidBoundaries("thresholds must be finite"));
        }
        if b.omegas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidBoundaries("thresholds must be strictly increasing"));
        }
        if !b.is_feasible() {
            return Err(Error::InvalidBoundaries(
                "thresholds violate the gap or box constraints",
            ));
        }
        Ok(b)
    }

    /// Known thresholds with permissive constraints: the box spans
    /// `[-α, α]` widened to contain the thresholds, and each gap floor is the
    /// smaller of the default floor and the actual gap.
    pub fn from_thresholds(omegas: Vec<f64>, alpha: f64) -> Result<Self> {
        if omegas.is_empty() {
            return Err(Error::InvalidBoundaries("at least one threshold is required"));
        }
        let levels = omegas.len() + 1;
        let default_kappa = default_kappa(levels, alpha);
        let kappas = omegas.windows(2).map(|w| default_kappa.min(w[1] - w[0])).collect();
        let low = (-alpha).min(omegas[0]);
        let up = alpha.max(*omegas.last().unwrap());
        Self::new(omegas, kappas, low, up)
    }

    #[inline]
    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub(crate) fn omegas_mut(&mut self) -> &mut [f64] {
        &mut self.omegas
    }

    /// Number of quantization levels `W`.
    #[inline]
    pub fn levels(&self) -> usize {
        self.omegas.len() + 1
    }

    /// `κ_l` for `l` in `1..=W` (`κ_1 = κ_W = 0`).
    pub fn kappa(&self, l: usize) -> f64 {
        if l <= 1 || l >= self.levels() {
            0.0
        } else {
            self.kappas[l - 2]
        }
    }

    pub fn kappas(&self) -> &[f64] {
        &self.kappas
    }

    #[inline]
    pub fn alpha_low(&self) -> f64 {
        self.alpha_low
    }

    #[inline]
    pub fn alpha_upper(&self) -> f64 {
        self.alpha_upper
    }

    /// Gap and box constraints, up to [`FEASIBILITY_TOL`].
    pub fn is_feasible(&self) -> bool {
        let w = &self.omegas;
        let last = w.len() - 1;
        if w[0] < self.alpha_low - FEASIBILITY_TOL || w[last] > self.alpha_upper + FEASIBILITY_TOL {
            return false;
        }
        (1..w.len()).all(|i| w[i] - w[i - 1] >= self.kappa(i + 1) - FEASIBILITY_TOL)
    }

    /// Replaces the threshold values, keeping the constraints.
    pub fn with_omegas(&self, omegas: Vec<f64>) -> Result<Self> {
        Self::new(omegas, self.kappas.clone(), self.alpha_low, self.alpha_upper)
    }
}

fn default_kappa(levels: usize, alpha: f64) -> f64 {
    0.05 * (2.0 * alpha / levels as f64)
}

/// Uniform thresholds `ω_l = 2αl/W - α` with gap floors `0.05 * 2α/W` and
/// box `[-α, α]`.
pub fn default_boundaries(levels: usize, alpha: f64) -> Result<Boundaries> {
    if levels < 2 {
        return Err(Error::InvalidParameter("at least two levels are required"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter("alpha must be positive"));
    }
    let w = levels as f64;
    let omegas = (1..levels).map(|l| 2.0 * alpha * l as f64 / w - alpha).collect();
    let kappas = vec![default_kappa(levels, alpha); levels - 2];
    Boundaries::new(omegas, kappas, -alpha, alpha)
}

/// Threshold `ω_l` for `l` in `0..=W`, with `ω_0 = -∞` and `ω_W = +∞`.
#[inline]
pub fn threshold(omegas: &[f64], l: usize) -> f64 {
    if l == 0 {
        f64::NEG_INFINITY
    } else if l > omegas.len() {
        f64::INFINITY
    } else {
        omegas[l - 1]
    }
}

fn check_level(omegas: &[f64], level: usize) -> Result<()> {
    let levels = omegas.len() + 1;
    if level == 0 || level > levels {
        return Err(Error::LevelOutOfRange { level, levels });
    }
    Ok(())
}

/// `f_l(x) = Φ(ω_l - x) - Φ(ω_{l-1} - x)` for 1-based `level`. Not floored.
pub fn bin_prob(model: &NoiseModel, omegas: &[f64], level: usize, x: f64) -> Result<f64> {
    check_level(omegas, level)?;
    Ok(bin_prob_unchecked(model, omegas, level, x))
}

#[inline]
pub(crate) fn bin_prob_unchecked(model: &NoiseModel, omegas: &[f64], level: usize, x: f64) -> f64 {
    let upper = threshold(omegas, level) - x;
    let lower = threshold(omegas, level - 1) - x;
    // Difference of survival functions on the right half avoids cancellation.
    if lower >= 0.0 {
        model.sf(lower) - model.sf(upper)
    } else {
        model.cdf(upper) - model.cdf(lower)
    }
}

/// `(f_l, f_l', f_l'')` with derivatives taken with respect to `x`.
pub(crate) fn bin_prob_derivs(model: &NoiseModel, omegas: &[f64], level: usize, x: f64) -> (f64, f64, f64) {
    let upper = threshold(omegas, level) - x;
    let lower = threshold(omegas, level - 1) - x;
    let f = bin_prob_unchecked(model, omegas, level, x);
    let d1 = model.pdf(lower) - model.pdf(upper);
    let d2 = model.pdf_deriv(upper) - model.pdf_deriv(lower);
    (f, d1, d2)
}

/// `(f_l'/f_l, f_l''/f_l)` without the probability floor. When the bin lies
/// entirely in one tail, numerator and denominator are both divided by the
/// density at the threshold nearer to `x`, which turns the bin mass into a
/// difference of Mills ratios that cannot underflow.
pub(crate) fn bin_log_derivs(model: &NoiseModel, omegas: &[f64], level: usize, x: f64) -> (f64, f64) {
    let sigma = model.sigma();
    let u = (threshold(omegas, level) - x) / sigma;
    let l = (threshold(omegas, level - 1) - x) / sigma;
    let (f, d1, d2) = if l >= 0.0 {
        let e = if u.is_finite() {
            libm::exp(model.log_kernel(u) - model.log_kernel(l))
        } else {
            0.0
        };
        let (mu, su) = if u.is_finite() {
            (model.mills(u) * e, model.score(u) * e)
        } else {
            (0.0, 0.0)
        };
        (model.mills(l) - mu, 1.0 - e, su - model.score(l))
    } else if u <= 0.0 {
        let e = if l.is_finite() {
            libm::exp(model.log_kernel(l) - model.log_kernel(u))
        } else {
            0.0
        };
        let (ml, sl) = if l.is_finite() {
            (model.mills(-l) * e, model.score(l) * e)
        } else {
            (0.0, 0.0)
        };
        (model.mills(-u) - ml, e - 1.0, model.score(u) - sl)
    } else {
        let (f, d1, d2) = bin_prob_derivs(model, omegas, level, x);
        (f.max(PROB_FLOOR), d1 * sigma, d2 * sigma * sigma)
    };
    (d1 / (sigma * f), d2 / (sigma * sigma * f))
}

/// `e^{t^2} erfc(t)` for `t >= 0`.
fn erfcx(t: f64) -> f64 {
    if t < 26.0 {
        libm::exp(t * t) * libm::erfc(t)
    } else {
        let s = 1.0 / (2.0 * t * t);
        let series = 1.0 - s * (1.0 - 3.0 * s * (1.0 - 5.0 * s * (1.0 - 7.0 * s * (1.0 - 9.0 * s))));
        0.5 * core::f64::consts::FRAC_2_SQRT_PI * series / t
    }
}

/// Noise-free quantizer: the level `l` with `ω_{l-1} < v <= ω_l`.
pub fn quantize_value(omegas: &[f64], v: f64) -> usize {
    1 + omegas.iter().filter(|&&w| w < v).count()
}

/// Quantized labels over an observation set.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedObservations {
    omega_set: ObservationSet,
    labels: Vec<u16>,
    levels: usize,
}

impl QuantizedObservations {
    /// `labels[i]` belongs to `omega_set.indices()[i]`.
    pub fn new(omega_set: ObservationSet, labels: Vec<u16>, levels: usize) -> Result<Self> {
        if levels < 2 || levels > u16::MAX as usize {
            return Err(Error::InvalidParameter("level count must be in 2..=65535"));
        }
        if labels.len() != omega_set.len() {
            return Err(Error::DimensionMismatch {
                expected: omega_set.len(),
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l as usize > levels) {
            return Err(Error::LevelOutOfRange {
                level: bad as usize,
                levels,
            });
        }
        Ok(Self {
            omega_set,
            labels,
            levels,
        })
    }

    #[inline]
    pub fn omega_set(&self) -> &ObservationSet {
        &self.omega_set
    }

    #[inline]
    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    /// `W`.
    #[inline]
    pub fn levels(&self) -> usize {
        self.levels
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        self.omega_set.shape()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(linear index, label)` pairs in increasing index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.omega_set
            .indices()
            .iter()
            .zip(&self.labels)
            .map(|(&i, &l)| (i, l as usize))
    }

    /// Label at a linear position, if observed.
    pub fn label_at(&self, linear: usize) -> Option<usize> {
        self.omega_set
            .indices()
            .binary_search(&linear)
            .ok()
            .map(|p| self.labels[p] as usize)
    }

    /// `G_1..G_W`: how many observed labels equal each level. Index 0 is `G_1`.
    pub fn level_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.levels];
        for &l in &self.labels {
            counts[l as usize - 1] += 1;
        }
        counts
    }

    /// `n_1 ⋯ n_K / |Ω|`.
    pub fn scale_factor(&self) -> f64 {
        self.omega_set.total() as f64 / self.omega_set.len() as f64
    }

    /// Keeps the observations whose positions (into [`Self::labels`]) are listed.
    pub fn subset(&self, positions: &[usize]) -> Result<Self> {
        let mut pos = positions.to_vec();
        pos.sort_unstable();
        pos.dedup();
        let indices = pos.iter().map(|&p| self.omega_set.indices()[p]).collect();
        let labels = pos.iter().map(|&p| self.labels[p]).collect();
        Self::new(ObservationSet::from_linear(self.shape(), indices)?, labels, self.levels)
    }
}

/// Adds i.i.d. noise to `xstar`, quantizes with `omegas` and keeps every
/// entry independently with probability `obs_rate`.
///
/// All noise draws come first (in storage order), then the observation
/// coin flips, from one ChaCha20 stream seeded with `seed`.
pub fn quantize_sample(
    xstar: &DenseTensor,
    model: &NoiseModel,
    omegas: &[f64],
    obs_rate: f64,
    seed: u64,
) -> Result<QuantizedObservations> {
    if !(obs_rate > 0.0 && obs_rate <= 1.0) {
        return Err(Error::InvalidParameter("observation rate must be in (0, 1]"));
    }
    if omegas.is_empty() || omegas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidBoundaries("thresholds must be strictly increasing"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let all: Vec<u16> = xstar
        .data()
        .iter()
        .map(|&x| quantize_value(omegas, x + model.sample(&mut rng)) as u16)
        .collect();
    let levels = omegas.len() + 1;
    if obs_rate >= 1.0 {
        return QuantizedObservations::new(ObservationSet::full(xstar.shape())?, all, levels);
    }
    let mut indices = Vec::new();
    let mut labels = Vec::new();
    for (i, &l) in all.iter().enumerate() {
        if rng.random::<f64>() < obs_rate {
            indices.push(i);
            labels.push(l);
        }
    }
    if indices.is_empty() {
        return Err(Error::EmptyObservations);
    }
    QuantizedObservations::new(ObservationSet::from_linear(xstar.shape(), indices)?, labels, levels)
}

pub const CONSTANT_GRID_POINTS: usize = 2001;

/// `γ_α` and `L_α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    pub gamma_alpha: f64,
    pub l_alpha: f64,
}

/// `γ_α = min_l inf_{|x| <= 2α} (f_l'^2 / f_l^2 - f_l'' / f_l)` and
/// `L_α = max_l sup_{|x| <= 2α} |f_l'| / f_l`, evaluated on a uniform grid
/// of [`CONSTANT_GRID_POINTS`] points. The ratios are evaluated in scaled
/// form, so bins whose mass underflows still contribute exact values.
pub fn compute_constants(model: &NoiseModel, omegas: &[f64], alpha: f64) -> Result<Constants> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter("alpha must be positive"));
    }
    if omegas.is_empty() || omegas.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidBoundaries("thresholds must be finite"));
    }
    let mut gamma = f64::INFINITY;
    let mut lip = 0.0_f64;
    let step = 4.0 * alpha / (CONSTANT_GRID_POINTS - 1) as f64;
    for i in 0..CONSTANT_GRID_POINTS {
        let x = -2.0 * alpha + step * i as f64;
        for level in 1..=omegas.len() + 1 {
            let (r1, r2) = bin_log_derivs(model, omegas, level, x);
            gamma = gamma.min(r1 * r1 - r2);
            lip = lip.max(libm::fabs(r1));
        }
    }
    if !(gamma.is_finite() && lip.is_finite()) {
        return Err(Error::InvalidParameter("non-finite likelihood constant"));
    }
    Ok(Constants {
        gamma_alpha: gamma,
        l_alpha: lip,
    })
}

/// `U_α = (4r/γ_α) sqrt(8 L_α^2 ((Σ n_k) log(4K/3) + log(2/δ)) / Π n_k)`.
pub fn error_bound_u(rank: usize, shape: &[usize], constants: Constants, delta: f64) -> Result<f64> {
    if !(constants.gamma_alpha > 0.0) {
        return Err(Error::InvalidParameter("gamma_alpha must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter("delta must be in (0, 1)"));
    }
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape("every extent must be positive"));
    }
    let k = shape.len() as f64;
    let sum: f64 = shape.iter().map(|&n| n as f64).sum();
    let prod: f64 = shape.iter().map(|&n| n as f64).product();
    let l = constants.l_alpha;
    let inner = 8.0 * l * l * (sum * libm::log(4.0 * k / 3.0) + libm::log(2.0 / delta)) / prod;
    Ok(4.0 * rank as f64 / constants.gamma_alpha * libm::sqrt(inner))
}

/// `min(2α, U_α)`: bound on `‖X̂ - X*‖_F / sqrt(n_1 ⋯ n_K)` for a global
/// minimizer under full observation and known thresholds.
pub fn error_bound(rank: usize, shape: &[usize], constants: Constants, delta: f64, alpha: f64) -> Result<f64> {
    Ok((2.0 * alpha).min(error_bound_u(rank, shape, constants, delta)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probit(s: f64) -> NoiseModel {
        NoiseModel::probit(s).unwrap()
    }

    fn logit(s: f64) -> NoiseModel {
        NoiseModel::logistic(s).unwrap()
    }

    #[test]
    fn cdf_values() {
        assert_eq!(logit(1.0).cdf(0.0), 0.5);
        assert!((probit(1.0).cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((logit(2.0).cdf(2.0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        // Φ(1.96) from tables.
        assert!((probit(1.0).cdf(1.96) - 0.975_002_104_851_780_1).abs() < 1e-14);
        assert!((probit(0.5).cdf(-0.5) - 0.158_655_253_931_457_05).abs() < 1e-14);
        assert!(NoiseModel::probit(0.0).is_err());
    }

    #[test]
    fn pdf_is_cdf_derivative() {
        for m in [probit(0.3), logit(0.7)] {
            for &x in &[-1.3, -0.2, 0.0, 0.4, 2.1] {
                let h = 1e-6;
                let fd = (m.cdf(x + h) - m.cdf(x - h)) / (2.0 * h);
                assert!((fd - m.pdf(x)).abs() < 1e-8);
                let fd2 = (m.pdf(x + h) - m.pdf(x - h)) / (2.0 * h);
                assert!((fd2 - m.pdf_deriv(x)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bin_prob_examples() {
        let f = bin_prob(&logit(1.0), &[0.0], 1, 0.0).unwrap();
        assert_eq!(f, 0.5);
        let f2 = bin_prob(&probit(0.25), &[-0.4, 0.0, 0.4], 2, 0.0).unwrap();
        // Φ(0) - Φ(-1.6) = 0.5 - 0.054799291699557974
        assert!((f2 - 0.445_200_708_300_442).abs() < 1e-12);
        assert!(bin_prob(&logit(1.0), &[0.0], 3, 0.0).is_err());
        assert!(bin_prob(&logit(1.0), &[0.0], 0, 0.0).is_err());
    }

    #[test]
    fn bin_prob_right_tail_has_no_cancellation() {
        let f = bin_prob(&probit(0.1), &[1.0], 2, -0.5).unwrap();
        // P(N > 1.5) for σ = 0.1 is Φ(-15).
        assert!((f / 3.670_966_199_312_698_6e-51 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn default_boundaries_examples() {
        let b2 = default_boundaries(2, 1.0).unwrap();
        assert_eq!(b2.omegas(), &[0.0]);
        let b4 = default_boundaries(4, 1.0).unwrap();
        assert_eq!(b4.omegas(), &[-0.5, 0.0, 0.5]);
        assert!(b4.is_feasible());
        assert_eq!(b4.kappa(1), 0.0);
        assert!((b4.kappa(2) - 0.025).abs() < 1e-15);
        assert!(default_boundaries(1, 1.0).is_err());
    }

    #[test]
    fn boundaries_validation() {
        assert!(Boundaries::new(vec![0.5, 0.2], vec![0.1], -1.0, 1.0).is_err());
        assert!(Boundaries::new(vec![0.0, 0.05], vec![0.1], -1.0, 1.0).is_err());
        assert!(Boundaries::new(vec![-2.0, 0.5], vec![0.1], -1.0, 1.0).is_err());
        assert!(Boundaries::new(vec![0.0, 0.5], vec![], -1.0, 1.0).is_err());
        let b = Boundaries::from_thresholds(vec![-0.4, 0.0, 0.4], 1.0).unwrap();
        assert_eq!(b.levels(), 4);
    }

    #[test]
    fn quantize_value_rule() {
        let w = [-0.4, 0.0, 0.4];
        assert_eq!(quantize_value(&w, -1.0), 1);
        assert_eq!(quantize_value(&w, -0.4), 1);
        assert_eq!(quantize_value(&w, -0.39), 2);
        assert_eq!(quantize_value(&w, 0.0), 2);
        assert_eq!(quantize_value(&w, 0.4), 3);
        assert_eq!(quantize_value(&w, 0.41), 4);
    }

    #[test]
    fn quantize_noise_free_limit() {
        let x = DenseTensor::filled(&[2, 2, 2], 0.5).unwrap();
        let obs = quantize_sample(&x, &probit(1e-12), &[0.0], 1.0, 3).unwrap();
        assert!(obs.labels().iter().all(|&l| l == 2));
        assert!(obs.omega_set().is_full());
        assert_eq!(obs.len(), 8);
        assert_eq!(obs.scale_factor(), 1.0);
    }

    #[test]
    fn quantize_rejects_bad_rate() {
        let x = DenseTensor::zeros(&[2, 2]).unwrap();
        assert!(quantize_sample(&x, &probit(1.0), &[0.0], 0.0, 1).is_err());
        assert!(quantize_sample(&x, &probit(1.0), &[0.0], 1.5, 1).is_err());
    }

    #[test]
    fn quantize_empty_sample_is_an_error() {
        let x = DenseTensor::zeros(&[1, 1]).unwrap();
        let mut saw_empty = false;
        for seed in 0..200 {
            if let Err(e) = quantize_sample(&x, &probit(1.0), &[0.0], 0.01, seed) {
                assert_eq!(e, Error::EmptyObservations);
                saw_empty = true;
            }
        }
        assert!(saw_empty);
    }

    #[test]
    fn observations_validation() {
        let om = ObservationSet::full(&[2, 2]).unwrap();
        assert!(QuantizedObservations::new(om.clone(), vec![1, 2, 3, 1], 2).is_err());
        assert!(QuantizedObservations::new(om.clone(), vec![1, 2], 2).is_err());
        let q = QuantizedObservations::new(om, vec![1, 2, 2, 1], 2).unwrap();
        assert_eq!(q.level_counts(), vec![2, 2]);
        assert_eq!(q.label_at(2), Some(2));
        let sub = q.subset(&[3, 0]).unwrap();
        assert_eq!(sub.omega_set().indices(), &[0, 3]);
        assert_eq!(sub.scale_factor(), 2.0);
    }

    #[test]
    fn logistic_gamma_matches_closed_form_symmetric_case() {
        // Closed form: γ = min over the grid of (1/σ^2)[Φ(a)(1-Φ(a)) + Φ(b)(1-Φ(b))].
        let m = logit(1.0);
        let c = compute_constants(&m, &[0.0], 1.0).unwrap();
        let p = 1.0 / (1.0 + 2f64.exp());
        assert!((c.gamma_alpha - p * (1.0 - p)).abs() < 1e-6);
        assert!(c.gamma_alpha > 0.0);
        // |f'|/f = |1 - Φ(a) - Φ(b)| / σ, largest at the edge of [-2, 2].
        assert!((c.l_alpha - 1.0 / (1.0 + (-2f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn scaled_ratios_match_direct_evaluation() {
        for m in [probit(0.3), logit(0.4)] {
            let w = [-0.5, 0.1, 0.6];
            for level in 1..=4 {
                for &x in &[-1.2, -0.5, 0.0, 0.3, 0.9] {
                    let (f, d1, d2) = bin_prob_derivs(&m, &w, level, x);
                    let (r1, r2) = bin_log_derivs(&m, &w, level, x);
                    assert!((r1 - d1 / f).abs() <= 1e-10 * (1.0 + r1.abs()), "{level} {x}");
                    assert!((r2 - d2 / f).abs() <= 1e-10 * (1.0 + r2.abs()), "{level} {x}");
                }
            }
        }
    }

    #[test]
    fn deep_tail_curvature_stays_positive() {
        // f_2(-3) = 1 - Φ(38) underflows. Reference values from scipy's
        // logpdf/logsf.
        let m = probit(0.1);
        let (r1, r2) = bin_log_derivs(&m, &[0.8], 2, -3.0);
        assert!((r1 - 380.262_794_665_733_1).abs() < 1e-9, "{r1}");
        assert!((r1 * r1 - r2 - 99.931_034_014_934_98).abs() < 1e-6, "{}", r1 * r1 - r2);
        let c = compute_constants(&m, &[-0.5, 0.8], 1.5).unwrap();
        assert!(c.gamma_alpha > 0.0);
    }

    #[test]
    fn constants_monotone_in_alpha() {
        let m = probit(0.3);
        let w = [-0.2, 0.1, 0.5];
        let a = compute_constants(&m, &w, 0.5).unwrap();
        let b = compute_constants(&m, &w, 1.0).unwrap();
        assert!(b.gamma_alpha <= a.gamma_alpha + 1e-12);
        assert!(b.l_alpha >= a.l_alpha - 1e-12);
        assert!(compute_constants(&m, &w, 0.0).is_err());
    }

    #[test]
    fn error_bound_min_branch() {
        let huge = Constants {
            gamma_alpha: 1e12,
            l_alpha: 1.0,
        };
        let tiny = Constants {
            gamma_alpha: 1e-12,
            l_alpha: 1.0,
        };
        let shape = [10, 10, 10];
        let u = error_bound_u(2, &shape, huge, 0.1).unwrap();
        assert!(u < 1e-9);
        assert_eq!(error_bound(2, &shape, huge, 0.1, 1.0).unwrap(), u);
        assert_eq!(error_bound(2, &shape, tiny, 0.1, 1.0).unwrap(), 2.0);
        let bad = Constants {
            gamma_alpha: 0.0,
            l_alpha: 1.0,
        };
        assert!(error_bound(2, &shape, bad, 0.1, 1.0).is_err());
        assert!(error_bound(2, &shape, huge, 1.0, 1.0).is_err());
    }

    #[test]
    fn error_bound_direct_evaluation() {
        let c = Constants {
            gamma_alpha: 0.2,
            l_alpha: 1.5,
        };
        let n = 12.0_f64;
        let u = error_bound_u(3, &[12, 12, 12], c, 0.05).unwrap();
        let expect = 4.0 * 3.0 / 0.2
            * (8.0 * 1.5 * 1.5 * (3.0 * n * (4.0_f64).ln() + (2.0_f64 / 0.05).ln()) / (n * n * n)).sqrt();
        assert!((u - expect).abs() <= 1e-12 * expect);
    }
}
