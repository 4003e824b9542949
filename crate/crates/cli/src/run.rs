//! Solver dispatch shared by `solve`, `bench` and `eval`.

use std::time::Instant;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use l20mc_core::init::{partial_svd, PartialSvdOptions, SpectralInit};
use l20mc_core::{
    als_solve, amm_solve, hybrid_solve, map_solve, AlsConfig, AmmConfig, HybridConfig, MapConfig, ObservationSet,
    RegWeights, SolveReport,
};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Amm,
    Map,
    Hybrid,
    Als,
}

impl SolverKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverKind::Amm => "amm",
            SolverKind::Map => "map",
            SolverKind::Hybrid => "hybrid",
            SolverKind::Als => "als",
        }
    }

    pub fn is_l20(&self) -> bool {
        !matches!(self, SolverKind::Als)
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Default `μ`.
pub const DEFAULT_MU: f64 = 1e-8;
/// Default cap on the column budget `r`.
pub const DEFAULT_R_CAP: usize = 150;

/// Sample ratio `|Ω|/(n·m)` of an observation set.
pub fn sample_ratio(obs: &ObservationSet) -> f64 {
    obs.nnz() as f64 / (obs.n_rows() as f64 * obs.n_cols() as f64)
}

/// `λ` from `c_λ`: `10·c·SR·‖M_Ω‖_F` for the column ℓ2,0 model and
/// `c·SR·‖M_Ω‖` (spectral) for the nuclear-norm model solved by ALS.
pub fn lambda_from_c(kind: SolverKind, c_lambda: f64, obs: &ObservationSet) -> f64 {
    let sr = sample_ratio(obs);
    if kind.is_l20() {
        10.0 * c_lambda * sr * obs.fro_norm()
    } else {
        c_lambda * sr * obs.spectral_norm()
    }
}

/// Everything a single solve needs beyond the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSetup {
    pub solver: SolverKind,
    pub lambda: f64,
    pub mu: f64,
    pub r: usize,
    pub beta_safeguard: bool,
    pub max_iters: Option<usize>,
}

impl SolverSetup {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(CliError::Validation(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(CliError::Validation(format!("mu must be >= 0, got {}", self.mu)));
        }
        if self.r == 0 {
            return Err(CliError::Validation("r must be positive".into()));
        }
        Ok(())
    }
}

/// Spectral start shared by every solver on one instance.
pub fn spectral_start(obs: &ObservationSet, r: usize, seed: u64) -> Result<SpectralInit> {
    let opts = PartialSvdOptions {
        seed,
        ..PartialSvdOptions::default()
    };
    Ok(partial_svd(obs, r, &opts)?)
}

/// Runs one solver from a precomputed spectral start. AMM starts from the
/// balanced factors; the others from the orthonormal singular vectors.
pub fn run_solver(obs: &ObservationSet, setup: &SolverSetup, init: &SpectralInit) -> Result<SolveReport> {
    setup.validate()?;
    if init.rank() != setup.r {
        return Err(CliError::Validation(format!(
            "spectral start has {} columns, solver budget is {}",
            init.rank(),
            setup.r
        )));
    }
    let w = RegWeights::new(setup.lambda, setup.mu)?;
    let report = match setup.solver {
        SolverKind::Amm => {
            let mut cfg = AmmConfig::new(w, setup.r);
            if setup.beta_safeguard {
                cfg = cfg.with_safeguard();
            }
            if let Some(k) = setup.max_iters {
                cfg.max_iters = k;
            }
            amm_solve(obs, &cfg, init.balanced_factors())?
        }
        SolverKind::Map => {
            let mut cfg = MapConfig::new(w, setup.r);
            if let Some(k) = setup.max_iters {
                cfg.max_iters = k;
            }
            map_solve(obs, &cfg, init.orthonormal_start())?
        }
        SolverKind::Hybrid => {
            let mut cfg = HybridConfig::new(w, setup.r);
            if setup.beta_safeguard {
                cfg.phase2 = cfg.phase2.with_safeguard();
            }
            if let Some(k) = setup.max_iters {
                cfg.phase2.max_iters = k;
            }
            hybrid_solve(obs, &cfg, init.orthonormal_start())?
        }
        SolverKind::Als => {
            if setup.lambda <= 0.0 {
                return Err(CliError::Validation("ALS needs lambda > 0".into()));
            }
            let mut cfg = AlsConfig::new(setup.lambda, setup.r);
            if let Some(k) = setup.max_iters {
                cfg.max_iters = k;
            }
            als_solve(obs, &cfg, init.orthonormal_start())?
        }
    };
    Ok(report)
}

/// Computes the spectral start and runs the solver, filling `wall_ms` with
/// the time of both.
pub fn solve_timed(obs: &ObservationSet, setup: &SolverSetup, seed: u64) -> Result<SolveReport> {
    let t = Instant::now();
    let init = spectral_start(obs, setup.r, seed)?;
    let mut rep = run_solver(obs, setup, &init)?;
    rep.wall_ms = Some(t.elapsed().as_secs_f64() * 1e3);
    Ok(rep)
}
