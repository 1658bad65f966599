//! Synthetic recovery experiments and parameter sweeps.
//!
//! Every run draws `X*`, quantizes it, fits TAPGD and scores the estimate.
//! Runs are independent; a sweep executes them in parallel and returns them
//! in grid-major, seed-minor order. Every grid point reuses the same seed
//! list.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use qtensor_core::metrics::{holdout_split, prediction_error, quantized_estimate, relative_error};
use qtensor_core::quantization::quantize_sample;
use qtensor_core::synth::{default_factor_ranges, gen_synthetic, synthetic_thresholds};
use qtensor_core::{solver, Boundaries, NoiseKind, NoiseModel, QuantizedObservations, SolverConfig, SynthSpec};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rank,
    Dimension,
    Noise,
    ObsRate,
    /// Bits per measurement; `W = 2^bits`.
    Bits,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rank" => Ok(Axis::Rank),
            "dimension" => Ok(Axis::Dimension),
            "noise" => Ok(Axis::Noise),
            "obs_rate" => Ok(Axis::ObsRate),
            "bits" => Ok(Axis::Bits),
            _ => Err(Error::usage(format!(
                "unknown axis `{s}` (expected rank, dimension, noise, obs_rate or bits)"
            ))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Rank => "rank",
            Axis::Dimension => "dimension",
            Axis::Noise => "noise",
            Axis::ObsRate => "obs_rate",
            Axis::Bits => "bits",
        })
    }
}

/// One synthetic experiment setting.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub shape: Vec<usize>,
    /// True rank.
    pub rank: usize,
    /// True noise model.
    pub noise: NoiseModel,
    pub levels: usize,
    /// True thresholds; `None` uses the synthetic defaults for `levels`.
    pub omegas: Option<Vec<f64>>,
    pub obs_rate: f64,
    pub boundaries_known: bool,
    /// Rank given to the solver; `None` uses the true rank.
    pub rank_est: Option<usize>,
    /// σ given to the solver; `None` uses the true σ.
    pub sigma_est: Option<f64>,
    /// Fraction of Ω held out for the prediction error.
    pub holdout_fraction: Option<f64>,
    /// Solver template. Rank, model, seed and the boundary mode are set per
    /// run.
    pub solver: SolverConfig,
}

impl Experiment {
    /// `n x n x n`, rank 3, probit σ = 0.25, `W = 4` with thresholds
    /// `-0.4, 0, 0.4`, full observation, known thresholds, 200 sweeps.
    pub fn desk(n: usize) -> Self {
        let noise = NoiseModel::probit(0.25).expect("positive sigma");
        Self {
            shape: vec![n; 3],
            rank: 3,
            noise,
            levels: 4,
            omegas: None,
            obs_rate: 1.0,
            boundaries_known: true,
            rank_est: None,
            sigma_est: None,
            holdout_fraction: None,
            solver: SolverConfig::new(3, noise),
        }
    }

    pub fn true_omegas(&self) -> Vec<f64> {
        self.omegas.clone().unwrap_or_else(|| synthetic_thresholds(self.levels))
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            shape: self.shape.clone(),
            rank: self.rank,
            noise: self.noise,
            omegas: self.true_omegas(),
            obs_rate: self.obs_rate,
            factor_ranges: default_factor_ranges(self.shape.len()),
        }
    }

    pub fn rank_est(&self) -> usize {
        self.rank_est.unwrap_or(self.rank)
    }

    pub fn sigma_est(&self) -> f64 {
        self.sigma_est.unwrap_or(self.noise.sigma())
    }

    /// The setting at one grid value.
    pub fn with_axis(&self, axis: Axis, value: f64) -> Result<Self> {
        let mut e = self.clone();
        let count = |what: &str| {
            if value >= 1.0 && value.fract() == 0.0 && value < u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(Error::usage(format!(
                    "{what} grid values must be positive integers, got {value}"
                )))
            }
        };
        match axis {
            Axis::Rank => e.rank = count("rank")?,
            Axis::Dimension => e.shape = vec![count("dimension")?; self.shape.len()],
            Axis::Noise => e.noise = NoiseModel::new(self.noise.kind(), value)?,
            Axis::ObsRate => {
                if !(value > 0.0 && value <= 1.0) {
                    return Err(Error::usage(format!(
                        "observation rates must be in (0, 1], got {value}"
                    )));
                }
                e.obs_rate = value;
            }
            Axis::Bits => {
                let bits = count("bits")?;
                if bits > 15 {
                    return Err(Error::usage("at most 15 bits are supported"));
                }
                e.levels = 1 << bits;
                e.omegas = None;
            }
        }
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth_spec().validate()?;
        let omegas = self.true_omegas();
        if omegas.len() + 1 != self.levels {
            return Err(Error::usage(format!(
                "expected {} thresholds, got {}",
                self.levels - 1,
                omegas.len()
            )));
        }
        if let Some(f) = self.holdout_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::usage("holdout fraction must be in (0, 1)"));
            }
        }
        let mut cfg = self.solver.clone();
        cfg.rank = self.rank_est();
        cfg.model = NoiseModel::new(self.noise.kind(), self.sigma_est())?;
        cfg.validate()?;
        Ok(())
    }

    /// Solver configuration used for a run with base seed `seed`.
    pub fn solver_config(&self, seed: u64) -> qtensor_core::Result<SolverConfig> {
        let mut cfg = self.solver.clone();
        cfg.rank = self.rank_est();
        cfg.model = NoiseModel::new(self.noise.kind(), self.sigma_est())?;
        cfg.boundaries_known = self.boundaries_known;
        cfg.seed = derive_seeds(seed)[2];
        Ok(cfg)
    }

    /// Data for a run with base seed `seed`: `X*` and the quantized
    /// observations.
    pub fn sample(&self, seed: u64) -> qtensor_core::Result<(qtensor_core::DenseTensor, QuantizedObservations)> {
        let spec = self.synth_spec();
        let seeds = derive_seeds(seed);
        let (xstar, _) = gen_synthetic(&spec, seeds[0])?;
        let obs = quantize_sample(&xstar, &self.noise, &spec.omegas, self.obs_rate, seeds[1])?;
        Ok((xstar, obs))
    }

    pub fn run(&self, seed: u64, run_id: usize) -> qtensor_core::Result<RunRecord> {
        let start = Instant::now();
        let (xstar, obs) = self.sample(seed)?;
        let (train, holdout) = match self.holdout_fraction {
            Some(f) => {
                let (t, h) = holdout_split(&obs, f, derive_seeds(seed)[3])?;
                (t, Some(h))
            }
            None => (obs, None),
        };
        let cfg = self.solver_config(seed)?;
        let omega0 = if self.boundaries_known {
            Some(Boundaries::from_thresholds(self.true_omegas(), cfg.alpha)?)
        } else {
            None
        };
        let res = solver::run(&train, &cfg, omega0)?;
        let rel_error = relative_error(&xstar, &res.x)?;
        let pred_error = holdout
            .map(|h| prediction_error(&h, &quantized_estimate(&res.x, res.boundaries.omegas())))
            .transpose()?;
        Ok(RunRecord {
            run_id,
            seed,
            shape: self.shape.clone(),
            r_true: self.rank,
            r_est: cfg.rank,
            sigma_true: self.noise.sigma(),
            sigma_est: cfg.model.sigma(),
            levels: self.levels,
            obs_rate: self.obs_rate,
            boundaries_known: self.boundaries_known,
            rel_error,
            pred_error,
            iterations: res.iterations,
            wall_time_ms: start.elapsed().as_millis() as u64,
            omegas: res.boundaries.omegas().to_vec(),
        })
    }
}

/// Independent seeds for data generation, quantization, solver
/// initialization and the holdout split.
pub fn derive_seeds(seed: u64) -> [u64; 4] {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    [rng.next_u64(), rng.next_u64(), rng.next_u64(), rng.next_u64()]
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: usize,
    pub seed: u64,
    pub shape: Vec<usize>,
    pub r_true: usize,
    pub r_est: usize,
    pub sigma_true: f64,
    pub sigma_est: f64,
    /// `W`.
    pub levels: usize,
    pub obs_rate: f64,
    pub boundaries_known: bool,
    pub rel_error: f64,
    pub pred_error: Option<f64>,
    pub iterations: usize,
    pub wall_time_ms: u64,
    pub omegas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub run_id: usize,
    pub seed: u64,
    pub grid_value: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSummary {
    pub value: f64,
    pub runs: usize,
    pub failures: usize,
    /// NaN when every run at this grid point failed.
    pub mean_rel_error: f64,
    pub mean_pred_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: Axis,
    pub records: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
    pub summary: Vec<GridSummary>,
}

impl SweepReport {
    pub fn mean_at(&self, value: f64) -> Option<f64> {
        self.summary.iter().find(|s| s.value == value).map(|s| s.mean_rel_error)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{},runs,failures,mean_rel_error,mean_pred_error\n", self.axis);
        for s in &self.summary {
            let pred = s.mean_pred_error.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{pred}\n",
                s.value, s.runs, s.failures, s.mean_rel_error
            ));
        }
        out
    }
}

/// Full factorial over `grid x seeds`. Invalid grid values are rejected
/// before any run starts; failures of individual runs are collected in the
/// report.
pub fn run_sweep(axis: Axis, grid: &[f64], base: &Experiment, seeds: &[u64]) -> Result<SweepReport> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::usage("a sweep needs at least one grid value and one seed"));
    }
    let settings = grid
        .iter()
        .map(|&v| {
            let e = base.with_axis(axis, v)?;
            e.validate()?;
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize, u64)> = (0..grid.len())
        .flat_map(|g| seeds.iter().map(move |&s| (g, s)))
        .enumerate()
        .map(|(id, (g, s))| (id, g, s))
        .collect();
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|&(id, g, seed)| (g, settings[g].run(seed, id).map_err(|e| (id, seed, e))))
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut per_grid: Vec<(Vec<f64>, Vec<f64>, usize)> = vec![(Vec::new(), Vec::new(), 0); grid.len()];
    for (g, outcome) in outcomes {
        match outcome {
            Ok(r) => {
                per_grid[g].0.push(r.rel_error);
                if let Some(p) = r.pred_error {
                    per_grid[g].1.push(p);
                }
                records.push(r);
            }
            Err((run_id, seed, e)) => {
                per_grid[g].2 += 1;
                failures.push(RunFailure {
                    run_id,
                    seed,
                    grid_value: grid[g],
                    message: e.to_string(),
                });
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let summary = grid
        .iter()
        .zip(per_grid)
        .map(|(&value, (rel, pred, failed))| GridSummary {
            value,
            runs: rel.len(),
            failures: failed,
            mean_rel_error: mean(&rel),
            mean_pred_error: (!pred.is_empty()).then(|| mean(&pred)),
        })
        .collect();
    Ok(SweepReport {
        axis,
        records,
        failures,
        summary,
    })
}

/// Rank grid of the rating-prediction protocol.
pub const PRESET_RANKS: [usize; 5] = [5, 10, 15, 20, 25];
/// σ grid of the rating-prediction protocol.
pub const PRESET_SIGMAS: [f64; 7] = [0.001, 0.01, 0.05, 0.1, 0.15, 0.2, 0.25];

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRecord {
    pub rank: usize,
    pub sigma: f64,
    pub pred_error: Option<f64>,
    pub error: Option<String>,
}

/// Model selection for observed ratings with unknown rank and noise: hold
/// out `fraction` of Ω once, fit every `(rank, σ)` pair on the rest with
/// unknown thresholds and score the held-out labels.
pub fn rank_sigma_selection(
    obs: &QuantizedObservations,
    ranks: &[usize],
    sigmas: &[f64],
    kind: NoiseKind,
    fraction: f64,
    seed: u64,
    template: &SolverConfig,
) -> Result<Vec<SelectionRecord>> {
    if ranks.is_empty() || sigmas.is_empty() {
        return Err(Error::usage("rank and sigma grids must be nonempty"));
    }
    let seeds = derive_seeds(seed);
    let (train, holdout) = holdout_split(obs, fraction, seeds[3])?;
    let pairs: Vec<(usize, f64)> = ranks
        .iter()
        .flat_map(|&r| sigmas.iter().map(move |&s| (r, s)))
        .collect();
    Ok(pairs
        .par_iter()
        .map(|&(rank, sigma)| {
            let fit = || -> qtensor_core::Result<f64> {
                let mut cfg = template.clone();
                cfg.rank = rank;
                cfg.model = NoiseModel::new(kind, sigma)?;
                cfg.boundaries_known = false;
                cfg.seed = seeds[2];
                let res = solver::run(&train, &cfg, None)?;
                prediction_error(&holdout, &quantized_estimate(&res.x, res.boundaries.omegas()))
            };
            match fit() {
                Ok(p) => SelectionRecord {
                    rank,
                    sigma,
                    pred_error: Some(p),
                    error: None,
                },
                Err(e) => SelectionRecord {
                    rank,
                    sigma,
                    pred_error: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

pub fn selection_csv(records: &[SelectionRecord]) -> String {
    let mut out = String::from("rank,sigma,pred_error,error\n");
    for r in records {
        let pred = r.pred_error.map(|v| v.to_string()).unwrap_or_default();
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], " ");
        out.push_str(&format!("{},{},{pred},{err}\n", r.rank, r.sigma));
    }
    out
}
