//! CP (CANDECOMP/PARAFAC) factors and the multilinear kernels built on them.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::linalg::{pinv_sym_psd, sym_psd_spectral_norm, Matrix};
use crate::tensor::{increment, DenseTensor};

/// Singular-value cutoff (relative) of the pseudo-inverse used by ALS.
pub const ALS_PINV_CUTOFF: f64 = 1e-10;
pub const DEFAULT_ALS_SWEEPS: usize = 10;

/// `K` factor matrices `A_k` of size `n_k x r`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    factors: Vec<Matrix>,
}

impl FactorSet {
    pub fn new(factors: Vec<Matrix>) -> Result<Self> {
        if factors.len() < 2 {
            return Err(Error::InvalidShape("a tensor needs at least two modes"));
        }
        let rank = factors[0].cols();
        if rank == 0 {
            return Err(Error::InvalidParameter("rank must be at least 1"));
        }
        for f in &factors {
            if f.cols() != rank {
                return Err(Error::ColumnMismatch {
                    left: rank,
                    right: f.cols(),
                });
            }
            if f.rows() == 0 {
                return Err(Error::InvalidShape("every extent must be positive"));
            }
        }
        Ok(Self { factors })
    }

    /// Factors drawn i.i.d. uniform on `[low, high)` (one range per mode).
    pub fn random_uniform<R: Rng>(shape: &[usize], rank: usize, ranges: &[(f64, f64)], rng: &mut R) -> Result<Self> {
        if ranges.len() != shape.len() {
            return Err(Error::DimensionMismatch {
                expected: shape.len(),
                actual: ranges.len(),
            });
        }
        let factors = shape
            .iter()
            .zip(ranges)
            .map(|(&n, &(lo, hi))| Matrix::from_fn(n, rank, |_, _| lo + (hi - lo) * rng.random::<f64>()))
            .collect();
        Self::new(factors)
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.factors[0].cols()
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    #[inline]
    pub fn factor(&self, k: usize) -> &Matrix {
        &self.factors[k]
    }

    #[inline]
    pub fn factor_mut(&mut self, k: usize) -> &mut Matrix {
        &mut self.factors[k]
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn is_finite(&self) -> bool {
        self.factors.iter().all(Matrix::is_finite)
    }

    /// Frobenius norm of all factors stacked together.
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.factors.iter().flat_map(|f| f.as_slice()).map(|v| v * v).sum())
    }

    /// `B_k^T B_k` for `B_k = A_K ⊙ .. ⊙ A_{k+1} ⊙ A_{k-1} ⊙ .. ⊙ A_1`,
    /// computed as the Hadamard product of the other factors' Gram matrices.
    pub fn mode_gram(&self, k: usize) -> Matrix {
        let r = self.rank();
        let mut g = Matrix::from_fn(r, r, |_, _| 1.0);
        for (m, f) in self.factors.iter().enumerate() {
            if m != k {
                g = g.hadamard(&f.gram()).expect("factor ranks agree");
            }
        }
        g
    }

    /// The Khatri-Rao matrix `B_k` itself, `(prod_{m != k} n_m) x r`.
    pub fn khatri_rao_except(&self, k: usize) -> Matrix {
        let ops: Vec<&Matrix> = self
            .factors
            .iter()
            .enumerate()
            .rev()
            .filter(|(m, _)| *m != k)
            .map(|(_, f)| f)
            .collect();
        khatri_rao_many(&ops).expect("factor ranks agree")
    }
}

/// Column-wise Kronecker product. Row `ia * n_b + ib` of column `j` holds
/// `A[ia, j] * B[ib, j]`.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::ColumnMismatch {
            left: a.cols(),
            right: b.cols(),
        });
    }
    let r = a.cols();
    let nb = b.rows();
    Ok(Matrix::from_fn(a.rows() * nb, r, |row, j| {
        a[(row / nb, j)] * b[(row % nb, j)]
    }))
}

/// `ops[0] ⊙ ops[1] ⊙ .. ⊙ ops[last]` in one pass, last operand fastest.
pub fn khatri_rao_many(ops: &[&Matrix]) -> Result<Matrix> {
    let first = ops.first().ok_or(Error::InvalidParameter("no operands"))?;
    let r = first.cols();
    for op in ops {
        if op.cols() != r {
            return Err(Error::ColumnMismatch {
                left: r,
                right: op.cols(),
            });
        }
    }
    let extents: Vec<usize> = ops.iter().map(|m| m.rows()).collect();
    let rows: usize = extents.iter().product();
    let mut out = Matrix::zeros(rows, r);
    let mut idx = vec![0usize; ops.len()];
    for row in 0..rows {
        for j in 0..r {
            out[(row, j)] = ops.iter().zip(&idx).map(|(m, &i)| m[(i, j)]).product();
        }
        increment(&mut idx, &extents);
    }
    Ok(out)
}

/// `sum_j A_1[:, j] ∘ .. ∘ A_K[:, j]`.
pub fn cp_reconstruct(factors: &FactorSet) -> DenseTensor {
    let shape = factors.shape();
    let r = factors.rank();
    let order = shape.len();
    let mut prefix = vec![0.0; r];
    DenseTensor::from_fn(&shape, |idx| {
        prefix.iter_mut().for_each(|p| *p = 1.0);
        for m in 0..order {
            let row = factors.factor(m).row(idx[m]);
            for (p, a) in prefix.iter_mut().zip(row) {
                *p *= a;
            }
        }
        prefix.iter().sum()
    })
    .expect("factor shapes are valid")
}

/// `X_(k) B_k` (matricized tensor times Khatri-Rao product) without forming
/// either operand.
pub fn mttkrp(x: &DenseTensor, factors: &FactorSet, k: usize) -> Result<Matrix> {
    let shape = x.shape();
    if shape != factors.shape().as_slice() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: factors.shape().iter().product(),
        });
    }
    if k >= shape.len() {
        return Err(Error::ModeOutOfRange {
            mode: k,
            order: shape.len(),
        });
    }
    let r = factors.rank();
    let mut out = Matrix::zeros(shape[k], r);
    let mut idx = vec![0usize; shape.len()];
    let mut w = vec![0.0; r];
    for &v in x.data() {
        if v != 0.0 {
            w.iter_mut().for_each(|p| *p = v);
            for (m, &i) in idx.iter().enumerate() {
                if m == k {
                    continue;
                }
                for (p, a) in w.iter_mut().zip(factors.factor(m).row(i)) {
                    *p *= a;
                }
            }
            let base = idx[k] * r;
            for (o, p) in out.as_mut_slice()[base..base + r].iter_mut().zip(&w) {
                *o += p;
            }
        }
        increment(&mut idx, shape);
    }
    Ok(out)
}

/// Largest eigenvalue of `B^T B` (the squared spectral norm of `B`), by
/// power iteration on the `r x r` Gram matrix.
pub fn gram_spectral_norm(b: &Matrix) -> f64 {
    sym_psd_spectral_norm(&b.gram())
}

/// Alternating least squares fit of a rank-`rank` CP model to `x0`.
///
/// Factors start i.i.d. uniform on `(-1, 1)` from a ChaCha20 stream seeded
/// with `seed`; each sweep solves `A_k <- X_(k) B_k (B_k^T B_k)^+` for
/// `k = 1..K` in order, keeping the previous factor if the update would not
/// lower the residual. The relative reconstruction error after every sweep
/// is returned alongside the factors.
pub fn cp_als(x0: &DenseTensor, rank: usize, seed: u64, sweeps: usize) -> Result<(FactorSet, Vec<f64>)> {
    if rank == 0 {
        return Err(Error::InvalidParameter("rank must be at least 1"));
    }
    if sweeps == 0 {
        return Err(Error::InvalidParameter("at least one ALS sweep is required"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let ranges = vec![(-1.0, 1.0); x0.order()];
    let mut factors = FactorSet::random_uniform(x0.shape(), rank, &ranges, &mut rng)?;
    let norm = x0.frobenius_norm();
    let mut trace = Vec::with_capacity(sweeps);
    let mut resid = residual(x0, &factors)?;
    for _ in 0..sweeps {
        for k in 0..x0.order() {
            let gram = factors.mode_gram(k);
            let m = mttkrp(x0, &factors, k)?;
            let candidate = m.matmul(&pinv_sym_psd(&gram, ALS_PINV_CUTOFF))?;
            // The truncated pseudo-inverse can overshoot once the fit is
            // exact to rounding; keep the old factor when it fits better.
            let old = core::mem::replace(factors.factor_mut(k), candidate);
            let fit = residual(x0, &factors)?;
            if fit > resid {
                *factors.factor_mut(k) = old;
            } else {
                resid = fit;
            }
        }
        trace.push(if norm > 0.0 { resid / norm } else { resid });
    }
    Ok((factors, trace))
}

fn residual(x0: &DenseTensor, factors: &FactorSet) -> Result<f64> {
    Ok(x0.sub(&cp_reconstruct(factors))?.frobenius_norm())
}

/// Factor initialization for the solver: [`cp_als`] without the trace.
pub fn cp_als_init(x0: &DenseTensor, rank: usize, seed: u64, sweeps: usize) -> Result<FactorSet> {
    cp_als(x0, rank, seed, sweeps).map(|(f, _)| f)
}
