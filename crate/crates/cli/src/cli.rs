//! Argument definitions and command implementations.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use l20mc_core::datagen::{synthetic, SyntheticSpec};
use l20mc_core::metrics::relative_error_to;
use l20mc_core::{SamplingScheme, SolveReport};

use crate::bench::{run_experiment, write_csv, ExperimentSpec, Preset};
use crate::error::{CliError, Result};
use crate::eval::{evaluate_file, EvalOptions};
use crate::io;
use crate::run::{lambda_from_c, solve_timed, SolverKind, SolverSetup, DEFAULT_MU, DEFAULT_R_CAP};

/// `c_λ` used when neither `--clambda` nor `--lambda` is given.
pub const DEFAULT_C_LAMBDA: f64 = 10.0;

#[derive(Debug, Parser)]
#[command(name = "l20mc", version, about = "Matrix completion with column l2,0 regularized factorization")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic instance: observations and ground-truth factors.
    Gen(GenArgs),
    /// Run one solver on an observation dump.
    Solve(SolveArgs),
    /// Run a multi-seed benchmark and write CSV rows.
    Bench(BenchArgs),
    /// Train on a sampled part of a rating file and score the rest.
    Eval(EvalArgs),
}

fn parse_scheme(s: &str) -> std::result::Result<SamplingScheme, String> {
    SamplingScheme::from_label(s).ok_or_else(|| format!("unknown scheme `{s}` (expected 1, 2 or uniform)"))
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `LO,HI`, got `{s}`"))?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad lower bound `{a}`"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad upper bound `{b}`"))?;
    Ok((lo, hi))
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    /// Defaults to `n`.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub rstar: usize,
    #[arg(long)]
    pub sr: f64,
    #[arg(long, default_value = "1", value_parser = parse_scheme)]
    pub scheme: SamplingScheme,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives `obs.txt` and `truth.txt`.
    #[arg(long)]
    pub out: PathBuf,
}

pub const OBS_FILE: &str = "obs.txt";
pub const TRUTH_FILE: &str = "truth.txt";

pub fn cmd_gen(a: &GenArgs) -> Result<()> {
    if !(a.sr > 0.0 && a.sr < 1.0) {
        return Err(CliError::Validation(format!("--sr must lie in (0, 1), got {}", a.sr)));
    }
    let spec = SyntheticSpec {
        n: a.n,
        m: a.m.unwrap_or(a.n),
        r_star: a.rstar,
        sr: a.sr,
        scheme: a.scheme,
        sigma: a.sigma,
        seed: a.seed,
    };
    let (truth, obs) = synthetic(&spec)?;
    io::save_observations(&a.out.join(OBS_FILE), &obs)?;
    io::save_factors(&a.out.join(TRUTH_FILE), &truth.factors())?;
    log::info!("wrote {} observations of a {}x{} rank-{} matrix", obs.nnz(), spec.n, spec.m, spec.r_star);
    Ok(())
}

/// Solver settings accepted from a JSON file; flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub solver: Option<SolverKind>,
    pub c_lambda: Option<f64>,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub r: Option<usize>,
    pub beta_safeguard: Option<bool>,
    pub max_iters: Option<usize>,
    pub seed: Option<u64>,
}

impl SolveConfig {
    /// Fields set in `self` win over those in `base`.
    pub fn over(self, base: SolveConfig) -> SolveConfig {
        SolveConfig {
            solver: self.solver.or(base.solver),
            c_lambda: self.c_lambda.or(base.c_lambda),
            lambda: self.lambda.or(base.lambda),
            mu: self.mu.or(base.mu),
            r: self.r.or(base.r),
            beta_safeguard: self.beta_safeguard.or(base.beta_safeguard),
            max_iters: self.max_iters.or(base.max_iters),
            seed: self.seed.or(base.seed),
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, value_enum)]
    pub solver: Option<SolverKind>,
    /// Observation dump.
    #[arg(long)]
    pub obs: PathBuf,
    /// JSON file with solver settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sets lambda through the sample-ratio recipe.
    #[arg(long)]
    pub clambda: Option<f64>,
    /// Sets lambda directly, overriding `--clambda`.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Column budget; defaults to min(n, m, 150).
    #[arg(long)]
    pub r: Option<usize>,
    /// Cap the extrapolation weight and enlarge steps so the potential descends.
    #[arg(long)]
    pub beta_safeguard: bool,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ground-truth factor dump; adds the relative error to the report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Report JSON destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the solution as a factor dump.
    #[arg(long)]
    pub factors: Option<PathBuf>,
}

impl SolveArgs {
    fn flags(&self) -> SolveConfig {
        SolveConfig {
            solver: self.solver,
            c_lambda: self.clambda,
            lambda: self.lambda,
            mu: self.mu,
            r: self.r,
            beta_safeguard: self.beta_safeguard.then_some(true),
            max_iters: self.max_iters,
            seed: self.seed,
        }
    }
}

/// Solve report plus the effective settings that produced it.
#[derive(Debug, Serialize)]
pub struct SolveOutput {
    pub settings: SolveConfig,
    pub setup: SolverSetup,
    #[serde(flatten)]
    pub report: SolveReport,
}

pub fn cmd_solve(a: &SolveArgs) -> Result<SolveOutput> {
    let file = match &a.config {
        Some(p) => io::load_json::<SolveConfig>(p)?,
        None => SolveConfig::default(),
    };
    let cfg = a.flags().over(file);
    let solver = cfg
        .solver
        .ok_or_else(|| CliError::Validation("no solver given (use --solver or the config file)".into()))?;
    let obs = io::load_observations(&a.obs)?;
    let c = cfg.c_lambda.unwrap_or(DEFAULT_C_LAMBDA);
    let lambda = match cfg.lambda {
        Some(l) => l,
        None => lambda_from_c(solver, c, &obs),
    };
    let r = cfg.r.unwrap_or(obs.n_rows().min(obs.n_cols()).min(DEFAULT_R_CAP));
    if r > obs.n_rows().min(obs.n_cols()) {
        return Err(CliError::Validation(format!("r = {r} exceeds min(n, m)")));
    }
    let setup = SolverSetup {
        solver,
        lambda,
        mu: cfg.mu.unwrap_or(DEFAULT_MU),
        r,
        beta_safeguard: cfg.beta_safeguard.unwrap_or(false),
        max_iters: cfg.max_iters,
    };
    let settings = SolveConfig {
        solver: Some(solver),
        c_lambda: cfg.lambda.is_none().then_some(c),
        lambda: Some(lambda),
        mu: Some(setup.mu),
        r: Some(r),
        beta_safeguard: Some(setup.beta_safeguard),
        max_iters: cfg.max_iters,
        seed: Some(cfg.seed.unwrap_or(0)),
    };
    let mut report = solve_timed(&obs, &setup, cfg.seed.unwrap_or(0))?;
    if let Some(t) = &a.truth {
        let truth = io::load_factors(t)?;
        report.re = Some(relative_error_to(report.factors(), &truth)?);
    }
    if let Some(f) = &a.factors {
        io::save_factors(f, report.factors())?;
    }
    let out = SolveOutput { settings, setup, report };
    emit_json(a.out.as_deref(), &out)?;
    Ok(out)
}

fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => io::save_json(p, value),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, value)
                .map_err(std::io::Error::other)
                .and_then(|_| writeln!(lock))
                .map_err(|e| CliError::io("<stdout>", e))
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, conflicts_with = "spec", required_unless_present = "spec")]
    pub preset: Option<Preset>,
    /// Experiment spec JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Worker threads across instances.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Override the number of repetitions.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Override the base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the rows as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub fn cmd_bench(a: &BenchArgs) -> Result<usize> {
    let mut spec: ExperimentSpec = match (&a.preset, &a.spec) {
        (Some(p), _) => p.spec(),
        (None, Some(path)) => io::load_json(path)?,
        (None, None) => return Err(CliError::Validation("give --preset or --spec".into())),
    };
    if let Some(r) = a.reps {
        spec.reps = r;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let rows = run_experiment(&spec, a.jobs)?;
    let failed = rows.iter().filter(|r| !r.is_avg() && r.failed()).count();
    let csv_err = |p: &Path, e: csv::Error| CliError::io(p, std::io::Error::other(e));
    match &a.out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            let f = std::fs::File::create(p).map_err(|e| CliError::io(p, e))?;
            write_csv(f, &rows).map_err(|e| csv_err(p, e))?;
        }
        None => write_csv(std::io::stdout().lock(), &rows).map_err(|e| csv_err(Path::new("<stdout>"), e))?,
    }
    if let Some(p) = &a.json {
        io::save_json(p, &rows)?;
    }
    if failed > 0 {
        log::warn!("{failed} run(s) failed; see rows marked `error`");
    }
    Ok(failed)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Rating triplets `user item rating`.
    #[arg(long)]
    pub ratings: PathBuf,
    /// Field separator; commas, tabs, `::` and spaces when omitted.
    #[arg(long)]
    pub delimiter: Option<String>,
    /// Subtracted from every rating before training.
    #[arg(long, default_value_t = 0.0)]
    pub recenter: f64,
    /// Declared rating range `LO,HI`; the observed range otherwise.
    #[arg(long, value_parser = parse_range)]
    pub range: Option<(f64, f64)>,
    /// Keep this many random users.
    #[arg(long)]
    pub users: Option<usize>,
    /// Keep this many random items.
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub sr: f64,
    #[arg(long, default_value = "1", value_parser = parse_scheme)]
    pub scheme: SamplingScheme,
    #[arg(long, value_enum, default_value_t = SolverKind::Hybrid)]
    pub solver: SolverKind,
    #[arg(long, default_value_t = DEFAULT_C_LAMBDA)]
    pub clambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_eval(a: &EvalArgs) -> Result<crate::eval::EvalReport> {
    let mut opts = EvalOptions::new(a.solver, a.clambda);
    opts.split.recenter_offset = a.recenter;
    opts.split.value_range = a.range;
    opts.split.n_users = a.users;
    opts.split.n_items = a.items;
    opts.split.sr = a.sr;
    opts.split.scheme = a.scheme;
    opts.split.seed = a.seed;
    opts.delimiter = a.delimiter.clone();
    let rep = evaluate_file(&a.ratings, &opts)?;
    emit_json(a.out.as_deref(), &rep)?;
    Ok(rep)
}

/// Runs a parsed command line; returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a).map(|_| 0),
        Command::Solve(a) => cmd_solve(a).map(|_| 0),
        Command::Bench(a) => cmd_bench(a).map(|_| 0),
        Command::Eval(a) => cmd_eval(a).map(|_| 0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file = SolveConfig {
            solver: Some(SolverKind::Map),
            c_lambda: Some(3.0),
            mu: Some(1e-4),
            ..Default::default()
        };
        let flags = SolveConfig {
            c_lambda: Some(5.0),
            ..Default::default()
        };
        let eff = flags.over(file);
        assert_eq!(eff.solver, Some(SolverKind::Map));
        assert_eq!(eff.c_lambda, Some(5.0));
        assert_eq!(eff.mu, Some(1e-4));
        assert_eq!(eff.r, None);
    }

    #[test]
    fn argument_parsers() {
        assert_eq!(parse_scheme("2").unwrap(), SamplingScheme::Scheme2);
        assert!(parse_scheme("3").is_err());
        assert_eq!(parse_range("-10, 10").unwrap(), (-10.0, 10.0));
        assert!(parse_range("1").is_err());
        let cli = Cli::try_parse_from(["l20mc", "bench", "--preset", "table1-small", "--jobs", "2"]).unwrap();
        match cli.command {
            Command::Bench(b) => assert_eq!((b.preset, b.jobs), (Some(Preset::Table1Small), 2)),
            _ => panic!("wrong command"),
        }
        assert!(Cli::try_parse_from(["l20mc", "bench"]).is_err());
    }
}
