//! Majorized alternating proximal method with SVD refactorization.
//!
//! The iterates are kept in balanced form: `V̄ = P D` with orthonormal `P`
//! and `Ū` with `ŪᵀŪ = D²`. Both block subproblems then decouple column by
//! column and are solved exactly by scaled hard thresholding.
//!
//! Each refactorization re-sorts the columns by singular value, so the
//! nonzero-column set of every balanced iterate is a prefix `{0, …, κ−1}`.
//! Columns past `κ` can never come back and are not stored.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::amm::{objective_spread, tail_constant};
use crate::error::{param_err, Error, Result};
use crate::factor::{count_above, refactor_unchecked, FactorPair, RegWeights, DEFAULT_RANK_TOL};
use crate::linalg::Mat;
use crate::obs::{lipschitz_f, ObservationSet, SparseResidual};
use crate::prox::scaled_threshold_unchecked;
use crate::report::{ConfigEcho, SolveReport, Termination};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub weights: RegWeights,
    pub r: usize,
    /// Decay factor `ϱ` of the proximal parameters.
    pub varrho: f64,
    pub gamma_floor_1: f64,
    pub gamma_floor_2: f64,
    pub gamma1_0: f64,
    pub gamma2_0: f64,
    pub max_iters: usize,
    /// Iterations with an identical nonzero-column set that count as stable.
    pub stable_window: usize,
    /// Flatness tolerance on `Φ` for standalone runs.
    pub eps_objective: f64,
}

impl MapConfig {
    pub fn new(weights: RegWeights, r: usize) -> Self {
        MapConfig {
            weights,
            r,
            varrho: 0.8,
            gamma_floor_1: 1e-8,
            gamma_floor_2: 1e-8,
            gamma1_0: 0.01,
            gamma2_0: 0.01,
            max_iters: 2000,
            stable_window: 10,
            eps_objective: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        RegWeights::new(self.weights.lambda, self.weights.mu)?;
        if self.r == 0 {
            return Err(param_err("column budget r must be positive"));
        }
        if !(self.varrho > 0.0 && self.varrho < 1.0) {
            return Err(param_err(format!("varrho must lie in (0, 1), got {}", self.varrho)));
        }
        if !(self.gamma_floor_1 > 0.0 && self.gamma_floor_2 > 0.0) {
            return Err(param_err("gamma floors must be positive"));
        }
        if !(self.gamma1_0 > 0.0 && self.gamma2_0 > 0.0) {
            return Err(param_err("initial proximal parameters must be positive"));
        }
        if self.stable_window == 0 {
            return Err(param_err("stable_window must be at least 1"));
        }
        if !(self.eps_objective > 0.0) {
            return Err(param_err("eps_objective must be positive"));
        }
        Ok(())
    }

    /// `γ_{1,k} = max(γ̲₁, ϱ^k γ_{1,0})`.
    pub fn gamma1_at(&self, k: usize) -> f64 {
        decayed(self.gamma1_0, self.varrho, self.gamma_floor_1, k)
    }

    pub fn gamma2_at(&self, k: usize) -> f64 {
        decayed(self.gamma2_0, self.varrho, self.gamma_floor_2, k)
    }
}

fn decayed(g0: f64, rho: f64, floor: f64, k: usize) -> f64 {
    let k = i32::try_from(k).unwrap_or(i32::MAX);
    (g0 * libm::pow(rho, k as f64)).max(floor)
}

/// Balanced iterates of the method, restricted to the `κ` live columns.
#[derive(Clone, Debug)]
pub struct MapState {
    /// `m x κ`, orthonormal columns.
    pub p: Mat,
    pub d: Vec<f64>,
    /// `Ū` (`n x κ`) and `V̄ = P D` (`m x κ`).
    pub u_bar: Mat,
    pub v_bar: Mat,
    /// `n x κ̂`, orthonormal columns.
    pub p_hat: Mat,
    pub d_hat: Vec<f64>,
    /// `Û = P̂ D̂` and `V̂`.
    pub u_hat: Mat,
    pub v_hat: Mat,
    pub gamma1: f64,
    pub gamma2: f64,
    /// `Φ(Ū^k, V̄^k)`, starting at the initial point.
    pub phi_trace: Vec<f64>,
    /// `Φ(Û^k, V̂^k)` for `k ≥ 1`.
    pub phi_hat_trace: Vec<f64>,
    /// `|J_{Ū^k}|`, starting at the initial point.
    pub kappa_trace: Vec<usize>,
    /// `|J_{Û^k}|` for `k ≥ 1`.
    pub kappa_hat_trace: Vec<usize>,
    /// `|J_{U^k}|` straight out of the thresholding step, `k ≥ 1`.
    pub kappa_step_trace: Vec<usize>,
    /// `‖X̄^k − X̄^{k−1}‖_F / (1 + ‖X̄^{k−1}‖_F)` for `k ≥ 1`.
    pub change_trace: Vec<f64>,
    /// `‖X̄^k − X̄^{k−1}‖²_F / ‖X̄^{k−1}‖²_F` for `k ≥ 1`.
    pub rel_change_sq_trace: Vec<f64>,
    budget: usize,
    res_bar: Option<SparseResidual>,
    res_hat: Option<SparseResidual>,
}

impl MapState {
    /// Starts from `P⁰ = p0` (`m x r`), `Ū⁰ = q0` (`n x r`), `D⁰ = I`.
    pub fn new(obs: &ObservationSet, p0: Mat, q0: Mat, weights: &RegWeights) -> Result<Self> {
        check_start(obs, &p0, &q0)?;
        let r = p0.cols();
        let d = alloc::vec![1.0; r];
        let res = obs.residual(&q0, &p0)?;
        let phi = phi_balanced(&res, &d, weights);
        Ok(MapState {
            u_bar: q0.clone(),
            v_bar: p0.clone(),
            p_hat: q0.clone(),
            d_hat: d.clone(),
            u_hat: q0,
            v_hat: p0.clone(),
            p: p0,
            d,
            gamma1: 0.0,
            gamma2: 0.0,
            phi_trace: alloc::vec![phi],
            phi_hat_trace: Vec::new(),
            kappa_trace: alloc::vec![r],
            kappa_hat_trace: Vec::new(),
            kappa_step_trace: Vec::new(),
            change_trace: Vec::new(),
            rel_change_sq_trace: Vec::new(),
            budget: r,
            res_bar: Some(res),
            res_hat: None,
        })
    }

    pub fn iters(&self) -> usize {
        self.phi_trace.len() - 1
    }

    /// `κ = |J_{Ū}|`.
    pub fn kappa(&self) -> usize {
        self.d.len()
    }

    /// `(Ū, V̄)` padded with zero columns to the full budget.
    pub fn solution(&self) -> FactorPair {
        let idx: Vec<usize> = (0..self.kappa()).collect();
        FactorPair {
            u: self.u_bar.scatter_columns(&idx, self.budget),
            v: self.v_bar.scatter_columns(&idx, self.budget),
        }
    }

    /// `(Ū, V̄)` on the live columns only.
    pub fn live_factors(&self) -> FactorPair {
        FactorPair {
            u: self.u_bar.clone(),
            v: self.v_bar.clone(),
        }
    }
}

fn check_start(obs: &ObservationSet, p0: &Mat, q0: &Mat) -> Result<()> {
    if p0.rows() != obs.n_cols() || q0.rows() != obs.n_rows() || p0.cols() != q0.cols() {
        return Err(Error::DimensionMismatch(format!(
            "start P0 {}x{} and Q0 {}x{} do not fit a {}x{} problem",
            p0.rows(),
            p0.cols(),
            q0.rows(),
            q0.cols(),
            obs.n_rows(),
            obs.n_cols()
        )));
    }
    for m in [p0, q0] {
        let defect = m.orthonormality_defect();
        if defect > 1e-8 {
            return Err(Error::NotOrthonormal(defect));
        }
    }
    Ok(())
}

/// `Φ` of a balanced pair with `‖Ū‖² = ‖V̄‖² = Σ d_i²` and `κ = |d|` live
/// columns in each factor.
fn phi_balanced(res: &SparseResidual, d: &[f64], w: &RegWeights) -> f64 {
    let sq: f64 = d.iter().map(|x| x * x).sum();
    res.loss() + w.mu * sq + 2.0 * w.lambda * d.len() as f64
}

/// Column-wise `G_i = (L·Z_i·d_i + γ·A_i)/Λ_i` with `Λ_i = √(L d_i² + μ + γ)`,
/// returning `(G, Λ)`.
fn scaled_target(zp: &Mat, d: &[f64], anchor: &Mat, gamma: f64, mu: f64) -> (Mat, Vec<f64>) {
    let l = lipschitz_f();
    let lam: Vec<f64> = d.iter().map(|&di| libm::sqrt(l * di * di + mu + gamma)).collect();
    let zs: Vec<f64> = d.iter().zip(&lam).map(|(di, li)| l * di / li).collect();
    let as_: Vec<f64> = lam.iter().map(|li| gamma / li).collect();
    let g = Mat::from_fn(zp.rows(), zp.cols(), |i, j| zs[j] * zp[(i, j)] + as_[j] * anchor[(i, j)]);
    (g, lam)
}

/// `Z̄P = Ū D − R P`, the projection of `X̄ − ∇f(X̄)/L` onto `P` (with `L = 1`).
fn projected_target(obs: &ObservationSet, res: &SparseResidual, left: &Mat, d: &[f64], p: &Mat) -> Result<Mat> {
    let rp = obs.spmm(res.values(), p)?;
    Ok(left.scale_columns(d).add_scaled(-1.0 / lipschitz_f(), &rp))
}

/// Same as [`projected_target`] on the transposed problem: `ẐᵀP̂ = V̂ D̂ − R̂ᵀ P̂`.
fn projected_target_t(obs: &ObservationSet, res: &SparseResidual, right: &Mat, d: &[f64], p: &Mat) -> Result<Mat> {
    let rtp = obs.spmm_t(res.values(), p)?;
    Ok(right.scale_columns(d).add_scaled(-1.0 / lipschitz_f(), &rtp))
}

fn bar_residual(state: &MapState, obs: &ObservationSet) -> Result<SparseResidual> {
    match &state.res_bar {
        Some(r) => Ok(r.clone()),
        None => obs.residual(&state.u_bar, &state.v_bar),
    }
}

fn hat_residual(state: &MapState, obs: &ObservationSet) -> Result<SparseResidual> {
    match &state.res_hat {
        Some(r) => Ok(r.clone()),
        None => obs.residual(&state.u_hat, &state.v_hat),
    }
}

/// Exact minimizer of the `U` subproblem at `(Ū, V̄)` with proximal weight
/// `state.gamma1` (set by the caller, [`map_iterate`] uses `cfg.gamma1_at(k)`).
pub fn map_u_step(state: &MapState, obs: &ObservationSet, cfg: &MapConfig) -> Result<Mat> {
    let res = bar_residual(state, obs)?;
    u_step_with(state, obs, &res, state.gamma1, cfg.weights.mu, Some(cfg.weights.lambda))
}

/// Exact minimizer of the `V` subproblem at `(Û, V̂)` with proximal weight
/// `state.gamma2`.
pub fn map_v_step(state: &MapState, obs: &ObservationSet, cfg: &MapConfig) -> Result<Mat> {
    let res = hat_residual(state, obs)?;
    v_step_with(state, obs, &res, state.gamma2, cfg.weights.mu, Some(cfg.weights.lambda))
}

/// Shared block update. `lambda = None` skips thresholding and returns the
/// ridge solution `G_i/Λ_i`.
pub(crate) fn u_step_with(
    state: &MapState,
    obs: &ObservationSet,
    res: &SparseResidual,
    gamma: f64,
    mu: f64,
    lambda: Option<f64>,
) -> Result<Mat> {
    if !(mu + gamma > 0.0) {
        return Err(param_err("mu + gamma must be positive"));
    }
    let zp = projected_target(obs, res, &state.u_bar, &state.d, &state.p)?;
    let (g, lam) = scaled_target(&zp, &state.d, &state.u_bar, gamma, mu);
    Ok(finish_step(&g, &lam, lambda))
}

pub(crate) fn v_step_with(
    state: &MapState,
    obs: &ObservationSet,
    res: &SparseResidual,
    gamma: f64,
    mu: f64,
    lambda: Option<f64>,
) -> Result<Mat> {
    if !(mu + gamma > 0.0) {
        return Err(param_err("mu + gamma must be positive"));
    }
    let ztp = projected_target_t(obs, res, &state.v_hat, &state.d_hat, &state.p_hat)?;
    let (h, del) = scaled_target(&ztp, &state.d_hat, &state.v_hat, gamma, mu);
    Ok(finish_step(&h, &del, lambda))
}

fn finish_step(g: &Mat, lam: &[f64], lambda: Option<f64>) -> Mat {
    match lambda {
        Some(l) => scaled_threshold_unchecked(g, lam, l),
        None => {
            let inv: Vec<f64> = lam.iter().map(|x| 1.0 / x).collect();
            g.scale_columns(&inv)
        }
    }
}

/// Balanced refactorization restricted to the nonzero singular values:
/// returns `(P̂, D̂, P̂D̂, P Q̂ D̂)` with `κ̂` columns each.
fn refactor_live(a: &Mat, p: &Mat, d: &[f64]) -> Result<(Mat, Vec<f64>, Mat, Mat)> {
    let (rows, prow) = (a.rows(), p.rows());
    if a.cols() == 0 || a.fro_norm_sq() == 0.0 {
        return Ok((Mat::zeros(rows, 0), Vec::new(), Mat::zeros(rows, 0), Mat::zeros(prow, 0)));
    }
    let rf = refactor_unchecked(a, p, d)?;
    let k = rf.rank();
    let keep: Vec<usize> = (0..k).collect();
    Ok((
        rf.p_hat.select_columns(&keep),
        rf.d_hat[..k].to_vec(),
        rf.u_hat.select_columns(&keep),
        rf.v_hat.select_columns(&keep),
    ))
}

/// Which objective a sweep tracks.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SweepParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub mu: f64,
    /// `None` for the ridge-only sweep.
    pub lambda: Option<f64>,
}

/// Steps 1 to 4 of one iteration; the caller manages the proximal weights.
pub(crate) fn sweep(state: &mut MapState, obs: &ObservationSet, sp: SweepParams) -> Result<()> {
    let w = RegWeights {
        lambda: sp.lambda.unwrap_or(0.0),
        mu: sp.mu,
    };
    let res = bar_residual(state, obs)?;
    let u = u_step_with(state, obs, &res, sp.gamma1, sp.mu, sp.lambda)?;
    state.kappa_step_trace.push(crate::factor::column_l20(&u));

    let (p_hat, d_hat, u_hat, v_hat) = refactor_live(&u, &state.p, &state.d)?;
    state.p_hat = p_hat;
    state.d_hat = d_hat;
    state.u_hat = u_hat;
    state.v_hat = v_hat;
    let res_hat = obs.residual(&state.u_hat, &state.v_hat)?;
    state.phi_hat_trace.push(phi_balanced(&res_hat, &state.d_hat, &w));
    state.kappa_hat_trace.push(state.d_hat.len());

    let v = v_step_with(state, obs, &res_hat, sp.gamma2, sp.mu, sp.lambda)?;
    state.res_hat = Some(res_hat);
    let prev = state.live_factors();
    let (p_new, d_new, v_bar, u_bar) = refactor_live(&v, &state.p_hat, &state.d_hat)?;
    state.p = p_new;
    state.d = d_new;
    state.u_bar = u_bar;
    state.v_bar = v_bar;
    let res_bar = obs.residual(&state.u_bar, &state.v_bar)?;
    state.phi_trace.push(phi_balanced(&res_bar, &state.d, &w));
    state.kappa_trace.push(state.d.len());
    state.res_bar = Some(res_bar);

    let dist = crate::factor::product_distance_sq(&state.live_factors(), &prev)?;
    let prev_sq = prev.product_norm_sq();
    state.change_trace.push(libm::sqrt(dist) / (1.0 + libm::sqrt(prev_sq)));
    state.rel_change_sq_trace.push(if prev_sq > 0.0 { dist / prev_sq } else { f64::INFINITY });
    Ok(())
}

/// One iteration: both block updates with refactorizations, then the
/// proximal weights decay.
pub fn map_iterate(state: &mut MapState, obs: &ObservationSet, cfg: &MapConfig) -> Result<()> {
    let k = state.iters();
    state.gamma1 = cfg.gamma1_at(k);
    state.gamma2 = cfg.gamma2_at(k);
    sweep(
        state,
        obs,
        SweepParams {
            gamma1: state.gamma1,
            gamma2: state.gamma2,
            mu: cfg.weights.mu,
            lambda: Some(cfg.weights.lambda),
        },
    )?;
    state.gamma1 = cfg.gamma1_at(k + 1);
    state.gamma2 = cfg.gamma2_at(k + 1);
    Ok(())
}

/// Iterates until the nonzero-column set is stable. With `require_flat`
/// the objective must also be flat over the last 20 values.
pub(crate) fn run_map(
    obs: &ObservationSet,
    cfg: &MapConfig,
    p0: Mat,
    q0: Mat,
    require_flat: bool,
    cap: usize,
) -> Result<(MapState, Termination)> {
    cfg.validate()?;
    if p0.cols() != cfg.r {
        return Err(Error::DimensionMismatch(format!(
            "start has {} columns, config budget is {}",
            p0.cols(),
            cfg.r
        )));
    }
    let mut state = MapState::new(obs, p0, q0, &cfg.weights)?;
    let mut reason = Termination::MaxIters;
    while state.iters() < cap {
        map_iterate(&mut state, obs, cfg)?;
        if state.kappa() == 0 {
            reason = Termination::EmptySupport;
            break;
        }
        if !tail_constant(&state.kappa_trace, cfg.stable_window) {
            continue;
        }
        if !require_flat {
            reason = Termination::SupportStable;
            break;
        }
        if objective_spread(&state.phi_trace, 20).is_some_and(|s| s <= cfg.eps_objective) {
            reason = Termination::ObjectiveFlat;
            break;
        }
    }
    Ok((state, reason))
}

pub(crate) fn prefix_sets(kappas: &[usize]) -> Vec<Vec<usize>> {
    kappas.iter().map(|&k| (0..k).collect()).collect()
}

/// Runs from `(P⁰, Q⁰)` until the support is stable and `Φ` is flat, or
/// `max_iters` iterations.
pub fn map_solve(obs: &ObservationSet, cfg: &MapConfig, init: (Mat, Mat)) -> Result<SolveReport> {
    let (state, reason) = run_map(obs, cfg, init.0, init.1, true, cfg.max_iters)?;
    if reason == Termination::MaxIters {
        log::warn!("MAP stopped at the iteration cap ({})", cfg.max_iters);
    }
    let sq: Vec<f64> = state.d.iter().map(|x| x * x).collect();
    Ok(SolveReport {
        model: "map".to_string(),
        iters: state.iters(),
        terminated_by: reason,
        re: None,
        nmae: None,
        rank: state.kappa(),
        numerical_rank: count_above(&sq, DEFAULT_RANK_TOL),
        j_trace: Some(prefix_sets(&state.kappa_trace)),
        rank_trace: state.kappa_trace.clone(),
        residual_trace: state.change_trace.clone(),
        phi_trace: state.phi_trace.clone(),
        kappa: Some(state.kappa()),
        phase1_iters: None,
        phase2_iters: None,
        phase1_phi_trace: None,
        xi_monotone: None,
        wall_ms: None,
        config: ConfigEcho::Map(cfg.clone()),
        solution: Some(state.solution()),
    })
}
