//! Tensor-based alternating proximal gradient descent (TAPGD).
//!
//! One iteration is a Gauss-Seidel sweep: each CP factor `A_k` takes a
//! gradient step on the penalty using the already updated `A_1..A_{k-1}`,
//! then `X` takes a projected gradient step on `H` and is clamped to
//! `[-α, α]`, then (unless the thresholds are known) every `ω_l` takes a
//! projected gradient step in increasing `l`. Finally `λ` grows by the
//! configured factor, capped at `lambda_cap`.
//!
//! Step sizes are the reciprocals of the block Lipschitz bounds:
//! `τ_A = 1 / (λ ‖B_k^T B_k‖)`, `τ_X = 1 / (s / (σ²β²) + λ)` and
//! `τ_ω = σ²β² / (s (√G_l + √G_{l+1}))`, where `s = n_1 ⋯ n_K / |Ω|`.
//! A block whose bound is zero is skipped for that iteration.

use alloc::vec::Vec;

use crate::cp::{cp_als_init, cp_reconstruct, mttkrp, FactorSet, DEFAULT_ALS_SWEEPS};
use crate::error::{Error, Result};
use crate::likelihood::{grad_boundary, grad_x_with_recon, neg_log_likelihood, ObjectiveContext};
use crate::linalg::{sym_psd_spectral_norm, Matrix};
use crate::quantization::{default_boundaries, Boundaries, NoiseModel, QuantizedObservations};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub rank: usize,
    /// Number of sweeps `T`.
    pub iterations: usize,
    /// Assumed noise model, including the σ estimate.
    pub model: NoiseModel,
    /// Lower bound on bin probabilities assumed by the `X` and `ω` steps.
    /// Smaller values give more conservative steps.
    pub beta: f64,
    /// Box on the entries of `X`.
    pub alpha: f64,
    /// Gap floors `κ_2..κ_{W-1}`; `None` uses `0.05 * 2α/W`.
    pub kappas: Option<Vec<f64>>,
    pub alpha_low: Option<f64>,
    pub alpha_upper: Option<f64>,
    pub lambda0: f64,
    pub lambda_growth: f64,
    pub lambda_cap: f64,
    pub boundaries_known: bool,
    pub init_sweeps: usize,
    pub seed: u64,
    /// Stop once the relative change of `H` drops below this value.
    pub early_stop: Option<f64>,
}

impl SolverConfig {
    pub fn new(rank: usize, model: NoiseModel) -> Self {
        Self {
            rank,
            iterations: 200,
            model,
            beta: 0.1,
            alpha: 1.0,
            kappas: None,
            alpha_low: None,
            alpha_upper: None,
            lambda0: 1.0,
            lambda_growth: 1.05,
            lambda_cap: 1e6,
            boundaries_known: false,
            init_sweeps: DEFAULT_ALS_SWEEPS,
            seed: 0,
            early_stop: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidParameter("rank must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter("beta must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter("alpha must be positive"));
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(Error::InvalidParameter("lambda0 must be positive"));
        }
        if !(self.lambda_growth >= 1.0 && self.lambda_growth.is_finite()) {
            return Err(Error::InvalidParameter("lambda growth must be at least 1"));
        }
        if !(self.lambda_cap >= self.lambda0) {
            return Err(Error::InvalidParameter("lambda cap must not be below lambda0"));
        }
        if self.init_sweeps == 0 {
            return Err(Error::InvalidParameter("at least one initialization sweep is required"));
        }
        Ok(())
    }

    /// Constraint set for `levels` thresholds: defaults overridden by the
    /// configured gap floors and box.
    pub fn default_boundaries(&self, levels: usize) -> Result<Boundaries> {
        let base = default_boundaries(levels, self.alpha)?;
        let kappas = self.kappas.clone().unwrap_or_else(|| base.kappas().to_vec());
        if kappas.len() + 2 != levels {
            return Err(Error::InvalidParameter("expected W-2 gap floors"));
        }
        let low = self.alpha_low.unwrap_or(base.alpha_low());
        let up = self.alpha_upper.unwrap_or(base.alpha_upper());
        let projected = project_boundaries(base.omegas(), &kappas, low, up);
        Boundaries::new(projected, kappas, low, up)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub factors: FactorSet,
    pub x: DenseTensor,
    pub boundaries: Boundaries,
    pub lambda: f64,
    pub iteration: usize,
    /// `H` at the initial point followed by `H` after every sweep (with the
    /// `λ` used during that sweep). The indicator terms are zero because
    /// every iterate is feasible.
    pub objective_trace: Vec<f64>,
    /// Thresholds at the initial point and after every sweep.
    pub boundary_trace: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    /// The estimate `X̂` (the tensor variable, not the CP reconstruction).
    pub x: DenseTensor,
    pub boundaries: Boundaries,
    pub factors: FactorSet,
    pub objective_trace: Vec<f64>,
    pub boundary_trace: Vec<Vec<f64>>,
    pub iterations: usize,
    pub lambda: f64,
}

/// Step sizes of one sweep; `None` marks a skipped block.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSizes {
    pub factors: Vec<Option<f64>>,
    pub x: f64,
    pub omegas: Vec<Option<f64>>,
}

/// `1 / (λ ‖G‖)` for the mode Gram matrix `G = B_k^T B_k`.
pub fn factor_step(mode_gram: &Matrix, lambda: f64) -> Option<f64> {
    let lip = lambda * sym_psd_spectral_norm(mode_gram);
    (lip > 0.0 && lip.is_finite()).then(|| 1.0 / lip)
}

pub fn x_step(model: &NoiseModel, beta: f64, scale_factor: f64, lambda: f64) -> f64 {
    let sb = model.sigma() * beta;
    1.0 / (scale_factor / (sb * sb) + lambda)
}

/// `G_l` and `G_{l+1}` are the counts of labels `l` and `l + 1`.
pub fn boundary_step(model: &NoiseModel, beta: f64, scale_factor: f64, g_l: usize, g_next: usize) -> Option<f64> {
    let denom = scale_factor * (libm::sqrt(g_l as f64) + libm::sqrt(g_next as f64));
    let sb = model.sigma() * beta;
    (denom > 0.0).then(|| sb * sb / denom)
}

/// Step sizes at the current state (before any block of the next sweep
/// moves).
pub fn step_sizes(state: &SolverState, obs: &QuantizedObservations, cfg: &SolverConfig) -> StepSizes {
    let s = obs.scale_factor();
    let counts = obs.level_counts();
    StepSizes {
        factors: (0..state.factors.order())
            .map(|k| factor_step(&state.factors.mode_gram(k), state.lambda))
            .collect(),
        x: x_step(&cfg.model, cfg.beta, s, state.lambda),
        omegas: (0..counts.len() - 1)
            .map(|l| boundary_step(&cfg.model, cfg.beta, s, counts[l], counts[l + 1]))
            .collect(),
    }
}

/// Entrywise clamp to `[-α, α]`.
pub fn project_tensor(x: &mut DenseTensor, alpha: f64) {
    x.data_mut().iter_mut().for_each(|v| *v = v.clamp(-alpha, alpha));
}

/// Maps arbitrary thresholds onto the constraint set: a forward pass
/// enforces the lower bounds `max(ω_{l-1} + κ_l, α_low)`, then a backward
/// pass enforces the upper bounds `min(ω_{l+1} - κ_{l+1}, α_upper)`.
/// `kappas[i]` is `κ_{i+2}`. Feasible input is returned unchanged.
pub fn project_boundaries(omegas: &[f64], kappas: &[f64], alpha_low: f64, alpha_upper: f64) -> Vec<f64> {
    let mut w = omegas.to_vec();
    let n = w.len();
    for l in 0..n {
        let lower = if l == 0 {
            alpha_low
        } else {
            (w[l - 1] + kappas[l - 1]).max(alpha_low)
        };
        if w[l] < lower {
            w[l] = lower;
        }
    }
    for l in (0..n).rev() {
        let upper = if l + 1 == n {
            alpha_upper
        } else {
            (w[l + 1] - kappas[l]).min(alpha_upper)
        };
        if w[l] > upper {
            w[l] = upper;
        }
    }
    w
}

/// Bin-midpoint starting tensor: `(ω_{l-1} + ω_l)/2` for interior labels,
/// `(-α + ω_1)/2` for label 1, `(α + ω_{W-1})/2` for label `W` and 0 off Ω.
pub fn initial_tensor(obs: &QuantizedObservations, omegas: &[f64], alpha: f64) -> Result<DenseTensor> {
    let levels = obs.levels();
    if omegas.len() + 1 != levels {
        return Err(Error::DimensionMismatch {
            expected: levels - 1,
            actual: omegas.len(),
        });
    }
    let mut x = DenseTensor::zeros(obs.shape())?;
    let data = x.data_mut();
    for (i, l) in obs.iter() {
        data[i] = if l == 1 {
            (-alpha + omegas[0]) / 2.0
        } else if l == levels {
            (alpha + omegas[levels - 2]) / 2.0
        } else {
            (omegas[l - 1] + omegas[l - 2]) / 2.0
        };
    }
    Ok(x)
}

/// Starting state. `omega0` defaults to the uniform thresholds of
/// [`SolverConfig::default_boundaries`].
pub fn initialize(obs: &QuantizedObservations, cfg: &SolverConfig, omega0: Option<Boundaries>) -> Result<SolverState> {
    cfg.validate()?;
    if obs.is_empty() {
        return Err(Error::EmptyObservations);
    }
    let boundaries = match omega0 {
        Some(b) => {
            if b.levels() != obs.levels() {
                return Err(Error::DimensionMismatch {
                    expected: obs.levels() - 1,
                    actual: b.omegas().len(),
                });
            }
            b
        }
        None => cfg.default_boundaries(obs.levels())?,
    };
    let x = initial_tensor(obs, boundaries.omegas(), cfg.alpha)?;
    let factors = cp_als_init(&x, cfg.rank, cfg.seed, cfg.init_sweeps)?;
    let ctx = ObjectiveContext::new(obs, cfg.model, cfg.lambda0, cfg.alpha)?;
    let h = objective_from(&ctx, &x, &cp_reconstruct(&factors), boundaries.omegas())?;
    Ok(SolverState {
        boundary_trace: alloc::vec![boundaries.omegas().to_vec()],
        factors,
        x,
        boundaries,
        lambda: cfg.lambda0,
        iteration: 0,
        objective_trace: alloc::vec![h],
    })
}

fn objective_from(ctx: &ObjectiveContext<'_>, x: &DenseTensor, recon: &DenseTensor, omegas: &[f64]) -> Result<f64> {
    let penalty: f64 = x.data().iter().zip(recon.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(neg_log_likelihood(ctx, x, omegas)? + 0.5 * ctx.lambda * penalty)
}

/// One full TAPGD sweep.
pub fn iterate_once(state: &mut SolverState, obs: &QuantizedObservations, cfg: &SolverConfig) -> Result<()> {
    let iteration = state.iteration + 1;
    let non_finite = Error::NonFinite { iteration };
    let lambda = state.lambda;
    let ctx = ObjectiveContext::new(obs, cfg.model, lambda, cfg.alpha)?;

    for k in 0..state.factors.order() {
        let gram = state.factors.mode_gram(k);
        let Some(tau) = factor_step(&gram, lambda) else {
            continue;
        };
        let m = mttkrp(&state.x, &state.factors, k)?;
        let ag = state.factors.factor(k).matmul(&gram)?;
        let a = state.factors.factor_mut(k);
        for ((av, gv), mv) in a.as_mut_slice().iter_mut().zip(ag.as_slice()).zip(m.as_slice()) {
            *av -= tau * lambda * (gv - mv);
        }
        if !a.is_finite() {
            return Err(non_finite);
        }
    }

    let recon = cp_reconstruct(&state.factors);
    let grad = grad_x_with_recon(&ctx, &state.x, &recon, state.boundaries.omegas())?;
    let tau_x = x_step(&cfg.model, cfg.beta, ctx.scale_factor, lambda);
    for (xv, gv) in state.x.data_mut().iter_mut().zip(grad.data()) {
        *xv -= tau_x * gv;
    }
    if !state.x.is_finite() {
        return Err(non_finite);
    }
    project_tensor(&mut state.x, cfg.alpha);

    if !cfg.boundaries_known {
        update_boundaries(state, &ctx, cfg)?;
        if state.boundaries.omegas().iter().any(|w| !w.is_finite()) {
            return Err(non_finite);
        }
    }

    let h = objective_from(&ctx, &state.x, &recon, state.boundaries.omegas())?;
    if !h.is_finite() {
        return Err(non_finite);
    }
    debug_assert!(state.x.max_abs() <= cfg.alpha);
    debug_assert!(cfg.boundaries_known || state.boundaries.is_feasible());

    state.objective_trace.push(h);
    state.boundary_trace.push(state.boundaries.omegas().to_vec());
    state.lambda = (lambda * cfg.lambda_growth).min(cfg.lambda_cap);
    state.iteration = iteration;
    Ok(())
}

fn update_boundaries(state: &mut SolverState, ctx: &ObjectiveContext<'_>, cfg: &SolverConfig) -> Result<()> {
    let counts = ctx.observations.level_counts();
    let b = &mut state.boundaries;
    let n = b.omegas().len();
    let (low, up) = (b.alpha_low(), b.alpha_upper());
    let kappas = b.kappas().to_vec();
    for l in 1..=n {
        let Some(tau) = boundary_step(&cfg.model, cfg.beta, ctx.scale_factor, counts[l - 1], counts[l]) else {
            continue;
        };
        let g = grad_boundary(ctx, l, &state.x, b.omegas())?;
        let w = b.omegas_mut();
        let mut v = w[l - 1] - tau * g;
        // Upper bound uses the stale ω_{l+1}, lower bound the updated ω_{l-1}.
        let upper = if l == n { up } else { (w[l] - kappas[l - 1]).min(up) };
        let lower = if l == 1 {
            low
        } else {
            (w[l - 2] + kappas[l - 2]).max(low)
        };
        if v > upper {
            v = upper;
        } else if v < lower {
            v = lower;
        }
        w[l - 1] = v;
    }
    Ok(())
}

/// Runs `cfg.iterations` sweeps from [`initialize`].
pub fn run(obs: &QuantizedObservations, cfg: &SolverConfig, omega0: Option<Boundaries>) -> Result<SolveResult> {
    let mut state = initialize(obs, cfg, omega0)?;
    for _ in 0..cfg.iterations {
        iterate_once(&mut state, obs, cfg)?;
        if let Some(tol) = cfg.early_stop {
            let t = &state.objective_trace;
            let (prev, cur) = (t[t.len() - 2], t[t.len() - 1]);
            if libm::fabs(cur - prev) <= tol * libm::fabs(prev).max(1.0) {
                break;
            }
        }
    }
    Ok(SolveResult {
        x: state.x,
        boundaries: state.boundaries,
        factors: state.factors,
        objective_trace: state.objective_trace,
        boundary_trace: state.boundary_trace,
        iterations: state.iteration,
        lambda: state.lambda,
    })
}
