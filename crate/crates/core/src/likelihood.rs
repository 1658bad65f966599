//! Penalized negative log-likelihood
//! `H = F_Ω(X, ω) + (λ/2) ‖X - A_1 ∘ .. ∘ A_K‖_F^2` and its partial gradients.
//!
//! `F_Ω = -(n_1 ⋯ n_K / |Ω|) Σ_Ω log f_{y}(X)`. The scale factor is carried
//! through every gradient so that `H` is one consistent function. Bin
//! probabilities are floored at [`PROB_FLOOR`] before logs and divisions.

use alloc::vec::Vec;

use crate::cp::{cp_reconstruct, mttkrp, FactorSet};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::quantization::{bin_prob_derivs, bin_prob_unchecked, threshold, NoiseModel, QuantizedObservations};
use crate::tensor::DenseTensor;
use crate::PROB_FLOOR;

#[derive(Debug, Clone, Copy)]
pub struct ObjectiveContext<'a> {
    pub observations: &'a QuantizedObservations,
    pub model: NoiseModel,
    pub lambda: f64,
    pub alpha: f64,
    pub scale_factor: f64,
}

impl<'a> ObjectiveContext<'a> {
    pub fn new(observations: &'a QuantizedObservations, model: NoiseModel, lambda: f64, alpha: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter("lambda must be non-negative"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter("alpha must be positive"));
        }
        Ok(Self {
            observations,
            model,
            lambda,
            alpha,
            scale_factor: observations.scale_factor(),
        })
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }

    fn check_tensor(&self, x: &DenseTensor) -> Result<()> {
        if x.shape() != self.observations.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.observations.omega_set().total(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn check_omegas(&self, omegas: &[f64]) -> Result<()> {
        if omegas.len() + 1 != self.observations.levels() {
            return Err(Error::DimensionMismatch {
                expected: self.observations.levels() - 1,
                actual: omegas.len(),
            });
        }
        Ok(())
    }
}

/// `F_Ω(X, ω)`.
pub fn neg_log_likelihood(ctx: &ObjectiveContext<'_>, x: &DenseTensor, omegas: &[f64]) -> Result<f64> {
    ctx.check_tensor(x)?;
    ctx.check_omegas(omegas)?;
    let data = x.data();
    let sum: f64 = ctx
        .observations
        .iter()
        .map(|(i, l)| libm::log(bin_prob_unchecked(&ctx.model, omegas, l, data[i]).max(PROB_FLOOR)))
        .sum();
    Ok(-ctx.scale_factor * sum)
}

fn penalty_from(x: &DenseTensor, recon: &DenseTensor) -> f64 {
    x.data()
        .iter()
        .zip(recon.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
}

/// `H(X, A, ω)`.
pub fn objective_h(ctx: &ObjectiveContext<'_>, x: &DenseTensor, factors: &FactorSet, omegas: &[f64]) -> Result<f64> {
    let f = neg_log_likelihood(ctx, x, omegas)?;
    if ctx.lambda == 0.0 {
        return Ok(f);
    }
    check_factors(x, factors)?;
    let recon = cp_reconstruct(factors);
    Ok(f + 0.5 * ctx.lambda * penalty_from(x, &recon))
}

fn check_factors(x: &DenseTensor, factors: &FactorSet) -> Result<()> {
    if x.shape() != factors.shape().as_slice() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: factors.shape().iter().product(),
        });
    }
    Ok(())
}

/// `∇_X H`. Unobserved entries only receive the penalty term.
pub fn grad_x(ctx: &ObjectiveContext<'_>, x: &DenseTensor, factors: &FactorSet, omegas: &[f64]) -> Result<DenseTensor> {
    check_factors(x, factors)?;
    grad_x_with_recon(ctx, x, &cp_reconstruct(factors), omegas)
}

/// [`grad_x`] with the CP reconstruction supplied by the caller.
pub fn grad_x_with_recon(
    ctx: &ObjectiveContext<'_>,
    x: &DenseTensor,
    recon: &DenseTensor,
    omegas: &[f64],
) -> Result<DenseTensor> {
    ctx.check_tensor(x)?;
    ctx.check_omegas(omegas)?;
    x.check_same_shape(recon)?;
    let mut g = x.sub(recon)?;
    g.data_mut().iter_mut().for_each(|v| *v *= ctx.lambda);
    let xs = x.data();
    let gs = g.data_mut();
    for (i, l) in ctx.observations.iter() {
        let (f, d1, _) = bin_prob_derivs(&ctx.model, omegas, l, xs[i]);
        gs[i] -= ctx.scale_factor * d1 / f.max(PROB_FLOOR);
    }
    Ok(g)
}

/// `∇_{A_k} H = λ (A_k B_k^T - X_(k)) B_k` for 0-based mode `k`.
pub fn grad_factor(ctx: &ObjectiveContext<'_>, k: usize, x: &DenseTensor, factors: &FactorSet) -> Result<Matrix> {
    check_factors(x, factors)?;
    let m = mttkrp(x, factors, k)?;
    let mut g = factors.factor(k).matmul(&factors.mode_gram(k))?;
    for (gv, mv) in g.as_mut_slice().iter_mut().zip(m.as_slice()) {
        *gv = ctx.lambda * (*gv - mv);
    }
    Ok(g)
}

/// `∇_{ω_l} H` for 1-based threshold index `l` in `1..=W-1`.
pub fn grad_boundary(ctx: &ObjectiveContext<'_>, l: usize, x: &DenseTensor, omegas: &[f64]) -> Result<f64> {
    ctx.check_tensor(x)?;
    ctx.check_omegas(omegas)?;
    if l == 0 || l > omegas.len() {
        return Err(Error::LevelOutOfRange {
            level: l,
            levels: omegas.len(),
        });
    }
    let xs = x.data();
    let w = threshold(omegas, l);
    let mut sum = 0.0;
    for (i, y) in ctx.observations.iter() {
        if y == l + 1 {
            let f = bin_prob_unchecked(&ctx.model, omegas, l + 1, xs[i]).max(PROB_FLOOR);
            sum += ctx.model.pdf(w - xs[i]) / f;
        } else if y == l {
            let f = bin_prob_unchecked(&ctx.model, omegas, l, xs[i]).max(PROB_FLOOR);
            sum -= ctx.model.pdf(w - xs[i]) / f;
        }
    }
    Ok(ctx.scale_factor * sum)
}

/// Which block of variables a numeric gradient is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    X,
    /// 0-based mode.
    Factor(usize),
    /// 1-based threshold index.
    Boundary(usize),
}

/// Central-difference gradient of [`objective_h`] over one block, one
/// coordinate at a time. Output is in the block's storage order (a single
/// value for [`Target::Boundary`]).
pub fn numeric_gradient(
    ctx: &ObjectiveContext<'_>,
    x: &DenseTensor,
    factors: &FactorSet,
    omegas: &[f64],
    target: Target,
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter("step must be positive"));
    }
    let eval = |x: &DenseTensor, f: &FactorSet, w: &[f64]| objective_h(ctx, x, f, w);
    match target {
        Target::X => {
            let mut xp = x.clone();
            let mut out = Vec::with_capacity(x.len());
            for i in 0..x.len() {
                let orig = xp.data()[i];
                xp.data_mut()[i] = orig + h;
                let up = eval(&xp, factors, omegas)?;
                xp.data_mut()[i] = orig - h;
                let down = eval(&xp, factors, omegas)?;
                xp.data_mut()[i] = orig;
                out.push((up - down) / (2.0 * h));
            }
            Ok(out)
        }
        Target::Factor(k) => {
            if k >= factors.order() {
                return Err(Error::ModeOutOfRange {
                    mode: k,
                    order: factors.order(),
                });
            }
            let mut fp = factors.clone();
            let len = factors.factor(k).as_slice().len();
            let mut out = Vec::with_capacity(len);
            for i in 0..len {
                let orig = fp.factor(k).as_slice()[i];
                fp.factor_mut(k).as_mut_slice()[i] = orig + h;
                let up = eval(x, &fp, omegas)?;
                fp.factor_mut(k).as_mut_slice()[i] = orig - h;
                let down = eval(x, &fp, omegas)?;
                fp.factor_mut(k).as_mut_slice()[i] = orig;
                out.push((up - down) / (2.0 * h));
            }
            Ok(out)
        }
        Target::Boundary(l) => {
            if l == 0 || l > omegas.len() {
                return Err(Error::LevelOutOfRange {
                    level: l,
                    levels: omegas.len(),
                });
            }
            let mut wp = omegas.to_vec();
            wp[l - 1] = omegas[l - 1] + h;
            let up = eval(x, factors, &wp)?;
            wp[l - 1] = omegas[l - 1] - h;
            let down = eval(x, factors, &wp)?;
            Ok(alloc::vec![(up - down) / (2.0 * h)])
        }
    }
}

/// Central difference of a scalar function; shares the stencil used by
/// [`numeric_gradient`].
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}
