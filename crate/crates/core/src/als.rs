//! Alternating least squares for the factored nuclear-norm model
//! `min f(UVᵀ) + (λ/2)(‖U‖² + ‖V‖²)`.
//!
//! Runs the refactorization skeleton of [`crate::map`] with the proximal
//! terms and column thresholding removed; the ALS weight `λ` takes the place
//! of `μ` in the ridge updates.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::amm::tail_constant;
use crate::error::{param_err, Error, Result};
use crate::factor::{count_above, DEFAULT_RANK_TOL};
use crate::linalg::Mat;
use crate::map::{sweep, u_step_with, v_step_with, MapState, SweepParams};
use crate::obs::ObservationSet;
use crate::report::{ConfigEcho, SolveReport, Termination};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlsConfig {
    /// Weight of the nuclear-norm surrogate.
    pub lambda: f64,
    pub r: usize,
    /// Tolerance on `‖X^k − X^{k−1}‖²_F / ‖X^{k−1}‖²_F`.
    pub eps_change: f64,
    pub rank_window: usize,
    pub max_iters: usize,
}

impl AlsConfig {
    pub fn new(lambda: f64, r: usize) -> Self {
        AlsConfig {
            lambda,
            r,
            eps_change: 1e-6,
            rank_window: 20,
            max_iters: 2000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(param_err(format!("ALS lambda must be positive, got {}", self.lambda)));
        }
        if self.r == 0 {
            return Err(param_err("column budget r must be positive"));
        }
        if !(self.eps_change > 0.0) {
            return Err(param_err("eps_change must be positive"));
        }
        if self.rank_window == 0 {
            return Err(param_err("rank_window must be at least 1"));
        }
        Ok(())
    }
}

/// `U = L·(Z̄P)·D·(L D² + λI)⁻¹`, column by column.
pub fn als_u_step(state: &MapState, obs: &ObservationSet, lambda: f64) -> Result<Mat> {
    let res = obs.residual(&state.u_bar, &state.v_bar)?;
    u_step_with(state, obs, &res, 0.0, lambda, None)
}

/// `V = L·(ẐᵀP̂)·D̂·(L D̂² + λI)⁻¹`, column by column.
pub fn als_v_step(state: &MapState, obs: &ObservationSet, lambda: f64) -> Result<Mat> {
    let res = obs.residual(&state.u_hat, &state.v_hat)?;
    v_step_with(state, obs, &res, 0.0, lambda, None)
}

/// Rank of `X̄ = Ū V̄ᵀ`, whose singular values are `d_i²`.
fn rank_of(state: &MapState) -> usize {
    let sq: Vec<f64> = state.d.iter().map(|x| x * x).collect();
    count_above(&sq, DEFAULT_RANK_TOL)
}

/// Runs from `(P⁰, Q⁰)` until the rank is stable over `rank_window` iterates
/// and the relative squared change drops below `eps_change`.
pub fn als_solve(obs: &ObservationSet, cfg: &AlsConfig, init: (Mat, Mat)) -> Result<SolveReport> {
    cfg.validate()?;
    if init.0.cols() != cfg.r {
        return Err(Error::DimensionMismatch(format!(
            "start has {} columns, config budget is {}",
            init.0.cols(),
            cfg.r
        )));
    }
    // `MapState` stores Φ with λ = 0; its μ-term then equals the ALS penalty.
    let weights = crate::factor::RegWeights { lambda: 0.0, mu: cfg.lambda };
    let mut state = MapState::new(obs, init.0, init.1, &weights)?;
    let mut ranks = alloc::vec![rank_of(&state)];
    let params = SweepParams {
        gamma1: 0.0,
        gamma2: 0.0,
        mu: cfg.lambda,
        lambda: None,
    };
    let mut reason = Termination::MaxIters;
    while state.iters() < cfg.max_iters {
        sweep(&mut state, obs, params)?;
        ranks.push(rank_of(&state));
        if state.kappa() == 0 {
            reason = Termination::EmptySupport;
            break;
        }
        let change = *state.rel_change_sq_trace.last().expect("one sweep done");
        if tail_constant(&ranks, cfg.rank_window) && change <= cfg.eps_change {
            reason = Termination::RelativeChange;
            break;
        }
    }
    if reason == Termination::MaxIters {
        log::warn!("ALS stopped at the iteration cap ({})", cfg.max_iters);
    }
    let rank = *ranks.last().expect("nonempty");
    Ok(SolveReport {
        model: "als-nuclear".to_string(),
        iters: state.iters(),
        terminated_by: reason,
        re: None,
        nmae: None,
        rank,
        numerical_rank: rank,
        phi_trace: state.phi_trace.clone(),
        residual_trace: state.rel_change_sq_trace.clone(),
        rank_trace: ranks,
        j_trace: None,
        kappa: None,
        phase1_iters: None,
        phase2_iters: None,
        phase1_phi_trace: None,
        xi_monotone: None,
        wall_ms: None,
        config: ConfigEcho::Als(cfg.clone()),
        solution: Some(state.solution()),
    })
}
