//! Multi-seed benchmark harness over synthetic instances.
//!
//! Each cell fixes `(n, m, r*, SR, scheme)` and a list of solvers with their
//! `c_λ`. For every repetition the instance is generated from seed
//! `seed + rep` (1-based), one spectral start is computed, and every solver
//! of the cell runs from it. Reported wall time covers that solver plus the
//! spectral start, never data generation or I/O.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use l20mc_core::datagen::{synthetic, SyntheticSpec};
use l20mc_core::metrics::relative_error;
use l20mc_core::SamplingScheme;

use crate::error::{CliError, Result};
use crate::run::{lambda_from_c, run_solver, spectral_start, SolverKind, SolverSetup, DEFAULT_MU, DEFAULT_R_CAP};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverRun {
    pub solver: SolverKind,
    pub c_lambda: f64,
}

fn default_scheme() -> SamplingScheme {
    SamplingScheme::Scheme1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub n: usize,
    /// Defaults to `n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    pub r_star: usize,
    pub sr: f64,
    #[serde(default = "default_scheme")]
    pub scheme: SamplingScheme,
    pub solvers: Vec<SolverRun>,
}

impl CellSpec {
    pub fn m(&self) -> usize {
        self.m.unwrap_or(self.n)
    }
}

fn default_sigma() -> f64 {
    0.1
}
fn default_reps() -> usize {
    5
}
fn default_mu() -> f64 {
    DEFAULT_MU
}
fn default_r_cap() -> usize {
    DEFAULT_R_CAP
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// Repetition `k` (1-based) uses seed `seed + k`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    /// The column budget is `min(n, m, r_cap)`.
    #[serde(default = "default_r_cap")]
    pub r_cap: usize,
    #[serde(default)]
    pub beta_safeguard: bool,
    pub cells: Vec<CellSpec>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: String, msg: &str| {
            Err(CliError::Validation(format!("{field}: {msg}")))
        };
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma".into(), "must be >= 0");
        }
        if self.reps == 0 {
            return bad("reps".into(), "must be at least 1");
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad("mu".into(), "must be positive");
        }
        if self.r_cap == 0 {
            return bad("r_cap".into(), "must be positive");
        }
        if self.cells.is_empty() {
            return bad("cells".into(), "at least one cell is required");
        }
        for (k, c) in self.cells.iter().enumerate() {
            let at = |f: &str| format!("cells[{k}].{f}");
            if c.n == 0 || c.m() == 0 {
                return bad(at("n"), "dimensions must be positive");
            }
            if c.scheme != SamplingScheme::Uniform && c.n.min(c.m()) < 10 {
                return bad(at("n"), "banded schemes need n, m >= 10");
            }
            if c.r_star == 0 || c.r_star > c.n.min(c.m()) {
                return bad(at("r_star"), "must lie in 1..=min(n, m)");
            }
            if !(c.sr > 0.0 && c.sr < 1.0) {
                return bad(at("sr"), "must lie in (0, 1)");
            }
            if c.solvers.is_empty() {
                return bad(at("solvers"), "at least one solver is required");
            }
            for (s, run) in c.solvers.iter().enumerate() {
                if !(run.c_lambda > 0.0 && run.c_lambda.is_finite()) {
                    return bad(at(&format!("solvers[{s}].c_lambda")), "must be positive");
                }
            }
        }
        Ok(())
    }
}

/// One CSV/JSON row: a single seed or the average over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub solver: SolverKind,
    pub n: usize,
    pub m: usize,
    pub r_star: usize,
    pub sr: f64,
    pub scheme: String,
    pub c_lambda: f64,
    /// Instance seed, or `avg`.
    pub seed: String,
    pub re: Option<f64>,
    pub nmae: Option<f64>,
    pub rank: Option<f64>,
    pub kappa: Option<f64>,
    pub iters: Option<f64>,
    pub wall_ms: Option<f64>,
    /// Stopping rule; `error: …` for failed runs, and for averages the
    /// number of converged seeds.
    pub terminated_by: String,
}

impl ResultRow {
    pub fn is_avg(&self) -> bool {
        self.seed == "avg"
    }

    pub fn failed(&self) -> bool {
        self.terminated_by.starts_with("error")
    }
}

fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.collect();
    let v = v?;
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Per-seed rows of one cell and solver, in seed order, followed by one
/// average row. Averages are plain means over all seeds; a field is left
/// empty when any seed lacks it.
fn with_average(rows: Vec<ResultRow>) -> Vec<ResultRow> {
    let first = rows[0].clone();
    let ok = rows.iter().filter(|r| !r.failed()).count();
    let converged = rows
        .iter()
        .filter(|r| {
            !r.failed()
                && !matches!(r.terminated_by.as_str(), "max_iters")
        })
        .count();
    let avg = ResultRow {
        seed: "avg".into(),
        re: mean(rows.iter().map(|r| r.re)),
        nmae: mean(rows.iter().map(|r| r.nmae)),
        rank: mean(rows.iter().map(|r| r.rank)),
        kappa: mean(rows.iter().map(|r| r.kappa)),
        iters: mean(rows.iter().map(|r| r.iters)),
        wall_ms: mean(rows.iter().map(|r| r.wall_ms)),
        terminated_by: if ok == rows.len() {
            format!("{converged}/{} converged", rows.len())
        } else {
            format!("error: {}/{} runs failed", rows.len() - ok, rows.len())
        },
        ..first
    };
    let mut out = rows;
    out.push(avg);
    out
}

fn run_instance(spec: &ExperimentSpec, cell: &CellSpec, rep: usize) -> Vec<ResultRow> {
    let seed = spec.seed + rep as u64;
    let row = |run: &SolverRun| ResultRow {
        solver: run.solver,
        n: cell.n,
        m: cell.m(),
        r_star: cell.r_star,
        sr: cell.sr,
        scheme: cell.scheme.label().to_string(),
        c_lambda: run.c_lambda,
        seed: seed.to_string(),
        re: None,
        nmae: None,
        rank: None,
        kappa: None,
        iters: None,
        wall_ms: None,
        terminated_by: String::new(),
    };
    let failed = |msg: String| {
        cell.solvers
            .iter()
            .map(|run| ResultRow {
                terminated_by: format!("error: {msg}"),
                ..row(run)
            })
            .collect()
    };
    let data = SyntheticSpec {
        n: cell.n,
        m: cell.m(),
        r_star: cell.r_star,
        sr: cell.sr,
        scheme: cell.scheme,
        sigma: spec.sigma,
        seed,
    };
    let (truth, obs) = match synthetic(&data) {
        Ok(x) => x,
        Err(e) => return failed(e.to_string()),
    };
    let r = cell.n.min(cell.m()).min(spec.r_cap);
    let t0 = Instant::now();
    let init = match spectral_start(&obs, r, seed) {
        Ok(x) => x,
        Err(e) => return failed(e.to_string()),
    };
    let svd_ms = t0.elapsed().as_secs_f64() * 1e3;

    cell.solvers
        .iter()
        .map(|run| {
            let setup = SolverSetup {
                solver: run.solver,
                lambda: lambda_from_c(run.solver, run.c_lambda, &obs),
                mu: spec.mu,
                r,
                beta_safeguard: spec.beta_safeguard,
                max_iters: None,
            };
            let t = Instant::now();
            let out = run_solver(&obs, &setup, &init).and_then(|rep| {
                let ms = svd_ms + t.elapsed().as_secs_f64() * 1e3;
                let re = relative_error(rep.factors(), &truth)?;
                Ok((rep, re, ms))
            });
            match out {
                Ok((rep, re, ms)) => {
                    log::info!(
                        "{} n={} r*={} sr={} seed={} c={}: re={re:.4} rank={} iters={} {:.0} ms",
                        run.solver,
                        cell.n,
                        cell.r_star,
                        cell.sr,
                        seed,
                        run.c_lambda,
                        rep.rank,
                        rep.iters,
                        ms
                    );
                    ResultRow {
                        re: Some(re),
                        rank: Some(rep.rank as f64),
                        kappa: rep.kappa.map(|k| k as f64),
                        iters: Some(rep.iters as f64),
                        wall_ms: Some(ms),
                        terminated_by: rep.terminated_by.as_str().to_string(),
                        ..row(run)
                    }
                }
                Err(e) => ResultRow {
                    terminated_by: format!("error: {e}"),
                    ..row(run)
                },
            }
        })
        .collect()
}

/// Runs every `(cell, repetition)` instance on `jobs` threads. Row order
/// depends only on the spec: cells in order, solvers in cell order, seeds
/// ascending, then the average.
pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let tasks: Vec<(usize, usize)> = (0..spec.cells.len())
        .flat_map(|c| (1..=spec.reps).map(move |k| (c, k)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Validation(format!("cannot start {jobs} worker threads: {e}")))?;
    let per_instance: Vec<Vec<ResultRow>> =
        pool.install(|| tasks.par_iter().map(|&(c, k)| run_instance(spec, &spec.cells[c], k)).collect());

    let mut rows = Vec::new();
    for (c, cell) in spec.cells.iter().enumerate() {
        for s in 0..cell.solvers.len() {
            let seeds: Vec<ResultRow> = tasks
                .iter()
                .zip(&per_instance)
                .filter(|((cc, _), _)| *cc == c)
                .map(|(_, rs)| rs[s].clone())
                .collect();
            rows.extend(with_average(seeds));
        }
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(w: W, rows: &[ResultRow]) -> std::result::Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

fn cell(n: usize, r_star: usize, sr: f64, scheme: SamplingScheme, solvers: &[(SolverKind, f64)]) -> CellSpec {
    CellSpec {
        n,
        m: None,
        r_star,
        sr,
        scheme,
        solvers: solvers
            .iter()
            .map(|&(solver, c_lambda)| SolverRun { solver, c_lambda })
            .collect(),
    }
}

/// `(n, r*, SR, c_amm, c_hybrid, c_als)` for the synthetic table.
const TABLE1: &[(usize, usize, f64, f64, f64, f64)] = &[
    (1000, 8, 0.10, 50.0, 10.0, 0.80),
    (1000, 8, 0.15, 45.0, 10.0, 0.24),
    (1000, 8, 0.20, 45.0, 10.0, 0.16),
    (1000, 8, 0.25, 45.0, 10.0, 0.14),
    (1000, 10, 0.10, 45.0, 10.0, 3.5),
    (1000, 10, 0.15, 40.0, 10.0, 2.5),
    (1000, 10, 0.20, 40.0, 10.0, 1.8),
    (1000, 10, 0.25, 40.0, 10.0, 1.5),
    (1000, 20, 0.10, 40.0, 8.0, 1.0),
    (1000, 20, 0.15, 32.0, 6.0, 1.0),
    (1000, 20, 0.20, 32.0, 6.0, 1.0),
    (1000, 20, 0.25, 28.0, 5.0, 1.0),
    (3000, 10, 0.10, 120.0, 30.0, 1.0),
    (3000, 10, 0.15, 95.0, 30.0, 1.0),
    (3000, 10, 0.20, 95.0, 30.0, 1.0),
    (3000, 10, 0.25, 95.0, 30.0, 1.0),
    (3000, 20, 0.10, 100.0, 25.0, 1.0),
    (3000, 20, 0.15, 80.0, 25.0, 1.0),
    (3000, 20, 0.20, 80.0, 25.0, 1.0),
    (3000, 20, 0.25, 80.0, 25.0, 1.0),
    (5000, 10, 0.10, 200.0, 40.0, 1.0),
    (5000, 10, 0.15, 160.0, 30.0, 1.0),
    (5000, 10, 0.20, 160.0, 30.0, 1.0),
    (5000, 10, 0.25, 160.0, 30.0, 1.0),
    (5000, 20, 0.10, 200.0, 40.0, 1.0),
    (5000, 20, 0.15, 160.0, 30.0, 1.0),
    (5000, 20, 0.20, 160.0, 30.0, 1.0),
    (5000, 20, 0.25, 160.0, 30.0, 1.0),
];

/// Published `(RE_amm, RE_hybrid, RE_als)` for the rows of [`TABLE1`].
pub const TABLE1_RE: &[(f64, f64, f64)] = &[
    (0.064, 0.065, 0.766),
    (0.046, 0.047, 0.617),
    (0.038, 0.038, 0.612),
    (0.032, 0.032, 0.347),
    (0.075, 0.075, 0.850),
    (0.052, 0.053, 0.807),
    (0.043, 0.043, 0.753),
    (0.036, 0.036, 0.727),
    (0.134, 0.129, 0.790),
    (0.082, 0.082, 0.700),
    (0.099, 0.065, 0.679),
    (0.053, 0.054, 0.646),
    (0.038, 0.038, 0.765),
    (0.028, 0.028, 0.660),
    (0.024, 0.024, 0.642),
    (0.020, 0.020, 0.590),
    (0.055, 0.055, 0.766),
    (0.041, 0.041, 0.667),
    (0.034, 0.034, 0.651),
    (0.029, 0.029, 0.606),
    (0.029, 0.028, 0.761),
    (0.022, 0.022, 0.656),
    (0.018, 0.018, 0.639),
    (0.016, 0.016, 0.585),
    (0.041, 0.041, 0.759),
    (0.031, 0.031, 0.662),
    (0.026, 0.026, 0.645),
    (0.022, 0.022, 0.596),
];

fn table_cells(max_n: usize) -> Vec<CellSpec> {
    TABLE1
        .iter()
        .filter(|t| t.0 <= max_n)
        .map(|&(n, r, sr, ca, ch, cs)| {
            cell(
                n,
                r,
                sr,
                SamplingScheme::Scheme1,
                &[(SolverKind::Amm, ca), (SolverKind::Hybrid, ch), (SolverKind::Als, cs)],
            )
        })
        .collect()
}

/// `c_λ` used for the sampling-ratio sweep, which has no published values.
pub const FIG2_C: [(SolverKind, f64); 3] = [(SolverKind::Amm, 25.0), (SolverKind::Hybrid, 7.5), (SolverKind::Als, 1.0)];

/// Sampling ratios of the sweep: 0.04, 0.06, …, 0.20.
pub fn fig2_ratios() -> Vec<f64> {
    (2..=10).map(|k| k as f64 * 0.02).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// The n = 1000 block of the synthetic table.
    #[value(name = "table1-small")]
    Table1Small,
    /// All blocks, n ∈ {1000, 3000, 5000}.
    Table1,
    /// RE against sampling ratio at n = 1000, r* = 5, both banded schemes.
    Fig2,
}

impl Preset {
    pub fn spec(&self) -> ExperimentSpec {
        let cells = match self {
            Preset::Table1Small => table_cells(1000),
            Preset::Table1 => table_cells(usize::MAX),
            Preset::Fig2 => [SamplingScheme::Scheme1, SamplingScheme::Scheme2]
                .into_iter()
                .flat_map(|scheme| fig2_ratios().into_iter().map(move |sr| cell(1000, 5, sr, scheme, &FIG2_C)))
                .collect(),
        };
        let name = match self {
            Preset::Table1Small => "table1-small",
            Preset::Table1 => "table1",
            Preset::Fig2 => "fig2",
        };
        ExperimentSpec {
            name: Some(name.into()),
            sigma: default_sigma(),
            reps: default_reps(),
            seed: 0,
            mu: DEFAULT_MU,
            r_cap: DEFAULT_R_CAP,
            beta_safeguard: false,
            cells,
        }
    }
}
