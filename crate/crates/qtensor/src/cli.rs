//! The `qtensor` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use qtensor_core::metrics::{prediction_error, quantized_estimate, relative_error};
use qtensor_core::quantization::{compute_constants, error_bound, quantize_sample};
use qtensor_core::synth::{default_factor_ranges, gen_synthetic, synthetic_thresholds};
use qtensor_core::{solver, Boundaries, NoiseKind, NoiseModel, SolverConfig, SynthSpec};

use crate::config::{parse_list, Config};
use crate::error::{Error, Result};
use crate::io;
use crate::sweep::{self, Axis, Experiment};

#[derive(Debug, Parser)]
#[command(
    name = "qtensor",
    version,
    about = "Low-rank tensor recovery from quantized measurements"
)]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `key=value` file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic low-rank tensor scaled to max |X*| = 1 (QTD1).
    GenSynth(GenSynthArgs),
    /// Add noise, quantize and subsample a dense tensor (QTD1 -> QTO1).
    Quantize(QuantizeArgs),
    /// Run TAPGD on quantized observations.
    Recover(RecoverArgs),
    /// Run a synthetic parameter sweep and write run records.
    Sweep(SweepArgs),
    /// Score an estimate against held-out labels.
    Predict(PredictArgs),
    /// Evaluate the recovery-error bound min(2α, U_α).
    Bound(BoundArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Model {
    Probit,
    Logistic,
}

impl Model {
    fn parse(s: &str) -> Result<Self> {
        <Self as ValueEnum>::from_str(s, true).map_err(|_| Error::usage(format!("unknown model `{s}`")))
    }

    fn kind(self) -> NoiseKind {
        match self {
            Model::Probit => NoiseKind::Probit,
            Model::Logistic => NoiseKind::Logistic,
        }
    }
}

#[derive(Debug, Args)]
struct ThresholdArgs {
    /// Number of quantization levels W.
    #[arg(long)]
    levels: Option<usize>,
    /// Comma-separated thresholds ω_1..ω_{W-1}.
    #[arg(long, allow_hyphen_values = true)]
    omegas: Option<String>,
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    /// Comma-separated extents.
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    rank: Option<usize>,
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    /// Dense input tensor (QTD1).
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    model: Option<Model>,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(long)]
    obs_rate: Option<f64>,
}

#[derive(Debug, Args)]
struct RecoverArgs {
    /// Observations (QTO1).
    #[arg(long)]
    obs: Option<PathBuf>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    model: Option<Model>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    lambda_growth: Option<f64>,
    /// Known thresholds as a comma list, or `none` to estimate them.
    #[arg(long, allow_hyphen_values = true)]
    known_boundaries: Option<String>,
    /// Ground truth (QTD1); prints the relative error when given.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// rank, dimension, noise, obs_rate or bits.
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated grid values.
    #[arg(long)]
    grid: Option<String>,
    /// Number of seeds per grid value, counting up from --seed.
    #[arg(long)]
    seeds: Option<u64>,
    /// Comma-separated base extents.
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    model: Option<Model>,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(long)]
    obs_rate: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    /// Estimate the thresholds instead of giving them to the solver.
    #[arg(long)]
    estimate_boundaries: bool,
    /// Hold out this fraction of Ω and report the prediction error.
    #[arg(long)]
    holdout_fraction: Option<f64>,
    /// `rank-sigma`: model selection over the rating-prediction grid on --obs.
    #[arg(long)]
    preset: Option<String>,
    /// Observations for the rank-sigma preset (QTO1).
    #[arg(long)]
    obs: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Held-out labels (QTO1).
    #[arg(long)]
    obs: PathBuf,
    /// Latent estimate (QTD1).
    #[arg(long)]
    estimate: PathBuf,
    /// Thresholds used to map the estimate to labels.
    #[arg(long, allow_hyphen_values = true)]
    omegas: String,
}

#[derive(Debug, Args)]
struct BoundArgs {
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    model: Option<Model>,
    #[arg(long)]
    alpha: Option<f64>,
    #[command(flatten)]
    thresholds: ThresholdArgs,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 4 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let seed = cfg.pick(cli.seed, "seed")?.unwrap_or(0);
    let out = cli.out.as_deref();
    match cli.command {
        Command::GenSynth(a) => gen_synth(a, &cfg, seed, out),
        Command::Quantize(a) => quantize(a, &cfg, seed, out),
        Command::Recover(a) => recover(a, &cfg, seed, out),
        Command::Sweep(a) => run_sweep(a, &cfg, seed, out),
        Command::Predict(a) => predict(a, out),
        Command::Bound(a) => bound(a, &cfg),
    }
}

fn require_out(out: Option<&Path>) -> Result<&Path> {
    out.ok_or_else(|| Error::usage("--out is required"))
}

fn list_flag<T: std::str::FromStr>(flag: &Option<String>, cfg: &Config, key: &str) -> Result<Option<Vec<T>>> {
    match flag {
        Some(v) => parse_list(key, v).map(Some),
        None => cfg.get_list(key),
    }
}

fn model(flag: Option<Model>, cfg: &Config) -> Result<Model> {
    match flag {
        Some(m) => Ok(m),
        None => cfg
            .raw("model")
            .map(Model::parse)
            .transpose()
            .map(|m| m.unwrap_or(Model::Probit)),
    }
}

fn noise(flag_model: Option<Model>, flag_sigma: Option<f64>, cfg: &Config, default_sigma: f64) -> Result<NoiseModel> {
    let kind = model(flag_model, cfg)?.kind();
    let sigma = cfg.pick(flag_sigma, "sigma")?.unwrap_or(default_sigma);
    Ok(NoiseModel::new(kind, sigma)?)
}

/// Thresholds from `--omegas`, else the defaults for `--levels`, else `W`
/// levels of the synthetic experiments.
fn thresholds(a: &ThresholdArgs, cfg: &Config, default_levels: usize) -> Result<Vec<f64>> {
    if let Some(w) = list_flag::<f64>(&a.omegas, cfg, "omegas")? {
        return Ok(w);
    }
    let levels = cfg.pick(a.levels, "levels")?.unwrap_or(default_levels);
    if levels < 2 {
        return Err(Error::usage("at least two levels are required"));
    }
    Ok(synthetic_thresholds(levels))
}

fn shape(flag: &Option<String>, cfg: &Config, default: Vec<usize>) -> Result<Vec<usize>> {
    Ok(list_flag(flag, cfg, "shape")?.unwrap_or(default))
}

fn gen_synth(a: GenSynthArgs, cfg: &Config, seed: u64, out: Option<&Path>) -> Result<()> {
    let out = require_out(out)?;
    let shape = shape(&a.shape, cfg, vec![40; 3])?;
    let spec = SynthSpec {
        factor_ranges: default_factor_ranges(shape.len()),
        shape,
        ..SynthSpec::cube(1, cfg.pick(a.rank, "rank")?.unwrap_or(3))
    };
    let (x, _) = gen_synthetic(&spec, seed)?;
    io::write_tensor(out, &x)
}

fn quantize(a: QuantizeArgs, cfg: &Config, seed: u64, out: Option<&Path>) -> Result<()> {
    let out = require_out(out)?;
    let x = io::read_tensor(&a.tensor)?;
    let m = noise(a.model, a.sigma, cfg, 0.25)?;
    let omegas = thresholds(&a.thresholds, cfg, 4)?;
    let rate = cfg.pick(a.obs_rate, "obs_rate")?.unwrap_or(1.0);
    let obs = quantize_sample(&x, &m, &omegas, rate, seed)?;
    io::write_observations(out, &obs)
}

fn solver_config(cfg: &Config, seed: u64) -> Result<SolverConfig> {
    let mut c = SolverConfig::new(1, NoiseModel::probit(1.0).expect("positive sigma"));
    c.seed = seed;
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = cfg.get(stringify!($field))? {
                c.$field = v;
            }
        };
    }
    set!(rank);
    set!(iterations);
    set!(beta);
    set!(alpha);
    set!(lambda0);
    set!(lambda_growth);
    set!(lambda_cap);
    set!(boundaries_known);
    set!(init_sweeps);
    c.early_stop = cfg.get("early_stop")?;
    c.alpha_low = cfg.get("alpha_low")?;
    c.alpha_upper = cfg.get("alpha_upper")?;
    c.kappas = cfg.get_list("kappas")?;
    Ok(c)
}

fn recover(a: RecoverArgs, cfg: &Config, seed: u64, out: Option<&Path>) -> Result<()> {
    let obs_path = a.obs.ok_or_else(|| Error::usage("--obs is required"))?;
    let obs = io::read_observations(&obs_path)?;
    let mut c = solver_config(cfg, seed)?;
    if let Some(r) = a.rank {
        c.rank = r;
    }
    if cfg.raw("rank").is_none() && a.rank.is_none() {
        return Err(Error::usage("--rank is required"));
    }
    c.model = noise(a.model, a.sigma, cfg, 0.25)?;
    c.iterations = a.iters.unwrap_or(c.iterations);
    c.alpha = a.alpha.unwrap_or(c.alpha);
    c.beta = a.beta.unwrap_or(c.beta);
    c.lambda0 = a.lambda0.unwrap_or(c.lambda0);
    c.lambda_growth = a.lambda_growth.unwrap_or(c.lambda_growth);
    let known = match a.known_boundaries.as_deref().or(cfg.raw("known_boundaries")) {
        None | Some("none") => None,
        Some(list) => Some(parse_list::<f64>("known_boundaries", list)?),
    };
    let omega0 = match known {
        Some(w) => {
            c.boundaries_known = true;
            Some(Boundaries::from_thresholds(w, c.alpha)?)
        }
        None if c.boundaries_known => {
            return Err(Error::usage("boundaries_known needs --known-boundaries <list>"));
        }
        None => None,
    };
    c.validate()?;
    let res = solver::run(&obs, &c, omega0)?;
    let mut stdout = std::io::stdout().lock();
    let omegas: Vec<String> = res.boundaries.omegas().iter().map(f64::to_string).collect();
    let _ = writeln!(stdout, "iterations={}", res.iterations);
    let _ = writeln!(
        stdout,
        "objective={}",
        res.objective_trace.last().copied().unwrap_or(f64::NAN)
    );
    let _ = writeln!(stdout, "omegas={}", omegas.join(","));
    if let Some(t) = &a.truth {
        let xstar = io::read_tensor(t)?;
        let _ = writeln!(stdout, "rel_error={}", relative_error(&xstar, &res.x)?);
    }
    if let Some(p) = out {
        io::write_tensor(p, &res.x)?;
    }
    Ok(())
}

fn run_sweep(a: SweepArgs, cfg: &Config, seed: u64, out: Option<&Path>) -> Result<()> {
    let preset = a.preset.as_deref();
    let mut base = Experiment::desk(40);
    base.shape = shape(&a.shape, cfg, base.shape.clone())?;
    base.rank = cfg.pick(a.rank, "rank")?.unwrap_or(base.rank);
    base.noise = noise(a.model, a.sigma, cfg, 0.25)?;
    let omegas = thresholds(&a.thresholds, cfg, 4)?;
    base.levels = omegas.len() + 1;
    base.omegas = Some(omegas);
    base.obs_rate = cfg.pick(a.obs_rate, "obs_rate")?.unwrap_or(1.0);
    base.boundaries_known = !a.estimate_boundaries && cfg.get("boundaries_known")?.unwrap_or(true);
    base.rank_est = cfg.get("rank_est")?;
    base.sigma_est = cfg.get("sigma_est")?;
    base.holdout_fraction = cfg.pick(a.holdout_fraction, "holdout_fraction")?;
    base.solver = solver_config(cfg, seed)?;
    base.solver.iterations = a.iters.unwrap_or(base.solver.iterations);

    match preset {
        Some("rank-sigma") => {
            let path = a.obs.ok_or_else(|| Error::usage("--preset rank-sigma needs --obs"))?;
            let obs = io::read_observations(&path)?;
            let fraction = base.holdout_fraction.unwrap_or(0.2);
            let records = sweep::rank_sigma_selection(
                &obs,
                &sweep::PRESET_RANKS,
                &sweep::PRESET_SIGMAS,
                base.noise.kind(),
                fraction,
                seed,
                &base.solver,
            )?;
            let text = sweep::selection_csv(&records);
            return emit(out, &text);
        }
        Some(other) => return Err(Error::usage(format!("unknown preset `{other}`"))),
        None => {}
    }

    let axis: Axis = match a.axis.as_deref().or(cfg.raw("axis")) {
        Some(s) => s.parse()?,
        None => return Err(Error::usage("--axis is required")),
    };
    let grid: Vec<f64> = list_flag(&a.grid, cfg, "grid")?.ok_or_else(|| Error::usage("--grid is required"))?;
    let count = cfg.pick(a.seeds, "seeds")?.unwrap_or(10);
    let seeds: Vec<u64> = (0..count).map(|i| seed.wrapping_add(i)).collect();
    let report = sweep::run_sweep(axis, &grid, &base, &seeds)?;
    for f in &report.failures {
        eprintln!(
            "run {} (seed {}, {axis}={}) failed: {}",
            f.run_id, f.seed, f.grid_value, f.message
        );
    }
    match out {
        Some(p) => {
            io::write_records(p, &report.records)?;
            print!("{}", report.summary_csv());
        }
        None => print!("{}", io::encode_records(&report.records)),
    }
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn predict(a: PredictArgs, out: Option<&Path>) -> Result<()> {
    let holdout = io::read_observations(&a.obs)?;
    let xhat = io::read_tensor(&a.estimate)?;
    let omegas: Vec<f64> = parse_list("omegas", &a.omegas)?;
    if omegas.len() + 1 != holdout.levels() {
        return Err(Error::usage(format!(
            "{} thresholds given for {} levels",
            omegas.len(),
            holdout.levels()
        )));
    }
    let labels = quantized_estimate(&xhat, &omegas);
    println!("pred_error={}", prediction_error(&holdout, &labels)?);
    if let Some(p) = out {
        io::write_tensor(p, &labels)?;
    }
    Ok(())
}

fn bound(a: BoundArgs, cfg: &Config) -> Result<()> {
    let shape = shape(&a.shape, cfg, vec![40; 3])?;
    let rank = cfg.pick(a.rank, "rank")?.unwrap_or(3);
    let delta = cfg.pick(a.delta, "delta")?.unwrap_or(0.05);
    let alpha = cfg.pick(a.alpha, "alpha")?.unwrap_or(1.0);
    let m = noise(a.model, a.sigma, cfg, 0.25)?;
    let omegas = thresholds(&a.thresholds, cfg, 4)?;
    let constants = compute_constants(&m, &omegas, alpha)?;
    let value = error_bound(rank, &shape, constants, delta, alpha)?;
    println!("gamma_alpha={}", constants.gamma_alpha);
    println!("l_alpha={}", constants.l_alpha);
    println!("bound={value}");
    Ok(())
}
