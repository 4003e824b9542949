//! Alternating majorization-minimization with extrapolation.
//!
//! Each sweep extrapolates `Ũ = U + β(U − U_prev)`, takes a backtracked
//! proximal step in `U`, then does the same for `V`. The solver works on the
//! columns that can still become nonzero: a column that is zero in the
//! current and previous iterates of both factors stays zero forever, so it is
//! dropped from the working set and restored as zeros in the output.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::factor::{column_l20, numerical_rank, FactorPair, RegWeights, DEFAULT_RANK_TOL};
use crate::linalg::{spectral_norm_sq, Mat};
use crate::obs::{lipschitz_f, ObservationSet, SparseResidual};
use crate::prox::prox_l20_step;
use crate::report::{ConfigEcho, SolveReport, Termination};

/// Largest exponent tried by the step-size search.
pub const MAX_BACKTRACKS: usize = 60;

/// In safeguarded runs every step is at least this multiple of the block
/// Lipschitz constant, which makes `Ξ` decrease for `β ≤ 0.4`.
pub const SAFEGUARD_STEP_RATIO: f64 = 2.6;

/// `ρ₁ = ρ₂` used for the `Ξ` check of safeguarded runs.
pub const XI_RHO: f64 = 0.6;

/// Extrapolation weights `β_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    Nesterov,
    Constant(f64),
    Zero,
}

/// Which factor a block step updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    U,
    V,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmmConfig {
    pub weights: RegWeights,
    /// Column budget.
    pub r: usize,
    /// Initial step `γ_{i,0}`; `None` means `2.5·‖M_Ω‖`.
    pub gamma0: Option<f64>,
    pub backtrack_rho: f64,
    pub beta_schedule: BetaSchedule,
    /// Cap on `β_k`. Also raises every step to at least
    /// [`SAFEGUARD_STEP_RATIO`] times the block Lipschitz constant.
    pub beta_safeguard: Option<f64>,
    pub eps_residual: f64,
    pub eps_objective: f64,
    pub rank_window: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl AmmConfig {
    pub fn new(weights: RegWeights, r: usize) -> Self {
        AmmConfig {
            weights,
            r,
            gamma0: None,
            backtrack_rho: 1.05,
            beta_schedule: BetaSchedule::Nesterov,
            beta_safeguard: None,
            eps_residual: 1e-3,
            eps_objective: 1e-4,
            rank_window: 20,
            max_iters: 2000,
            seed: 0,
        }
    }

    /// Caps `β` at 0.4.
    pub fn with_safeguard(mut self) -> Self {
        self.beta_safeguard = Some(0.4);
        self
    }

    pub fn validate(&self) -> Result<()> {
        RegWeights::new(self.weights.lambda, self.weights.mu)?;
        if self.r == 0 {
            return Err(param_err("column budget r must be positive"));
        }
        if let Some(g) = self.gamma0 {
            if !(g > 0.0 && g.is_finite()) {
                return Err(param_err(format!("gamma0 must be positive, got {g}")));
            }
        }
        if !(self.backtrack_rho > 1.0 && self.backtrack_rho.is_finite()) {
            return Err(param_err("backtrack_rho must exceed 1"));
        }
        if !(self.eps_residual > 0.0 && self.eps_objective > 0.0) {
            return Err(param_err("tolerances must be positive"));
        }
        if self.rank_window == 0 {
            return Err(param_err("rank_window must be at least 1"));
        }
        if let BetaSchedule::Constant(b) = self.beta_schedule {
            if !(0.0..1.0).contains(&b) {
                return Err(param_err(format!("constant beta must lie in [0, 1), got {b}")));
            }
        }
        if let Some(c) = self.beta_safeguard {
            if !(0.0..1.0).contains(&c) {
                return Err(param_err(format!("beta cap must lie in [0, 1), got {c}")));
            }
        }
        Ok(())
    }
}

/// Quantities of the most recent sweep needed by the stopping test.
#[derive(Clone, Debug)]
struct LastStep {
    anchor_u: Mat,
    anchor_v: Mat,
    grad_u: Mat,
    grad_v: Mat,
    gamma_u: f64,
    gamma_v: f64,
}

/// Iterates and traces of a run. Factors are stored on the working columns
/// `live` of the full budget.
#[derive(Clone, Debug)]
pub struct AmmState {
    pub current: FactorPair,
    pub previous: FactorPair,
    /// Anchors `Ũ`, `Ṽ` of the last sweep.
    pub anchor_u: Mat,
    pub anchor_v: Mat,
    /// Nesterov sequence `t_k`.
    pub t: f64,
    /// `phi_trace[k] = Φ(U^k, V^k)`, starting at the initial point.
    pub phi_trace: Vec<f64>,
    /// Numerical rank of `U^k V^kᵀ`, aligned with `phi_trace`.
    pub rank_trace: Vec<usize>,
    /// Normalized stationarity residual after sweep `k + 1`.
    pub residual_trace: Vec<f64>,
    pub gamma_u_trace: Vec<f64>,
    pub gamma_v_trace: Vec<f64>,
    pub beta_trace: Vec<f64>,
    /// `Ξ(α_k)` after minus before each sweep, with `ρ₁ = ρ₂ = 0.6`.
    pub xi_change_trace: Vec<f64>,
    live: Vec<usize>,
    budget: usize,
    res_current: Option<SparseResidual>,
    last: Option<LastStep>,
}

impl AmmState {
    pub fn new(obs: &ObservationSet, init: FactorPair, w: &RegWeights) -> Result<Self> {
        check_dims(obs, &init)?;
        let budget = init.width();
        let res = obs.residual(&init.u, &init.v)?;
        let phi = phi_from_residual(&res, &init, w);
        let rank = numerical_rank(&init, DEFAULT_RANK_TOL)?;
        let mut state = AmmState {
            anchor_u: init.u.clone(),
            anchor_v: init.v.clone(),
            previous: init.clone(),
            current: init,
            t: 1.0,
            phi_trace: alloc::vec![phi],
            rank_trace: alloc::vec![rank],
            residual_trace: Vec::new(),
            gamma_u_trace: Vec::new(),
            gamma_v_trace: Vec::new(),
            beta_trace: Vec::new(),
            xi_change_trace: Vec::new(),
            live: (0..budget).collect(),
            budget,
            res_current: Some(res),
            last: None,
        };
        state.compact();
        Ok(state)
    }

    /// Completed sweeps.
    pub fn iters(&self) -> usize {
        self.phi_trace.len() - 1
    }

    /// Current iterate on the full column budget.
    pub fn solution(&self) -> FactorPair {
        FactorPair {
            u: self.current.u.scatter_columns(&self.live, self.budget),
            v: self.current.v.scatter_columns(&self.live, self.budget),
        }
    }

    /// Drops columns that are zero in both current and previous factors.
    fn compact(&mut self) {
        let w = self.live.len();
        let keep: Vec<usize> = (0..w)
            .filter(|&j| {
                !(self.current.u.column_is_zero(j)
                    && self.current.v.column_is_zero(j)
                    && self.previous.u.column_is_zero(j)
                    && self.previous.v.column_is_zero(j))
            })
            .collect();
        if keep.len() == w {
            return;
        }
        self.current = self.current.select_columns(&keep);
        self.previous = self.previous.select_columns(&keep);
        self.anchor_u = self.anchor_u.select_columns(&keep);
        self.anchor_v = self.anchor_v.select_columns(&keep);
        if let Some(last) = self.last.as_mut() {
            last.anchor_u = last.anchor_u.select_columns(&keep);
            last.anchor_v = last.anchor_v.select_columns(&keep);
            last.grad_u = last.grad_u.select_columns(&keep);
            last.grad_v = last.grad_v.select_columns(&keep);
        }
        self.live = keep.iter().map(|&j| self.live[j]).collect();
    }
}

fn check_dims(obs: &ObservationSet, fp: &FactorPair) -> Result<()> {
    if fp.u.rows() != obs.n_rows() || fp.v.rows() != obs.n_cols() || fp.u.cols() != fp.v.cols() {
        return Err(Error::DimensionMismatch(format!(
            "initial factors {}x{} / {}x{} do not match a {}x{} problem",
            fp.u.rows(),
            fp.u.cols(),
            fp.v.rows(),
            fp.v.cols(),
            obs.n_rows(),
            obs.n_cols()
        )));
    }
    Ok(())
}

fn phi_from_residual(res: &SparseResidual, fp: &FactorPair, w: &RegWeights) -> f64 {
    res.loss()
        + 0.5 * w.mu * (fp.u.fro_norm_sq() + fp.v.fro_norm_sq())
        + w.lambda * (column_l20(&fp.u) + column_l20(&fp.v)) as f64
}

/// Advances the schedule and returns `β_k`, capped when the safeguard is on.
pub fn nesterov_beta(state: &mut AmmState, cfg: &AmmConfig) -> f64 {
    let beta = match cfg.beta_schedule {
        BetaSchedule::Nesterov => {
            let t = state.t;
            let next = 0.5 * (1.0 + libm::sqrt(4.0 * t * t + 1.0));
            state.t = next;
            (t - 1.0) / next
        }
        BetaSchedule::Constant(b) => b,
        BetaSchedule::Zero => 0.0,
    };
    match cfg.beta_safeguard {
        Some(cap) => beta.min(cap),
        None => beta,
    }
}

fn block_residual(obs: &ObservationSet, side: Side, block: &Mat, other: &Mat) -> Result<SparseResidual> {
    match side {
        Side::U => obs.residual(block, other),
        Side::V => obs.residual(other, block),
    }
}

fn block_grad(obs: &ObservationSet, side: Side, res: &SparseResidual, other: &Mat) -> Result<Mat> {
    match side {
        Side::U => obs.grad_u(res, other),
        Side::V => obs.grad_v(res, other),
    }
}

/// Smallest `γ = ρ^ℓ·start` whose proximal candidate satisfies the
/// majorization test. `tau` is the block Lipschitz constant `L_f·‖other‖²`;
/// steps at or above it pass without evaluating the loss.
#[allow(clippy::too_many_arguments)]
fn search_step(
    obs: &ObservationSet,
    side: Side,
    anchor: &Mat,
    other: &Mat,
    grad: &Mat,
    f_anchor: f64,
    start: f64,
    rho: f64,
    tau: f64,
    w: &RegWeights,
) -> Result<(f64, Mat)> {
    let slack = 1e-12 * f_anchor.abs().max(1.0);
    let mut gamma = start;
    for _ in 0..=MAX_BACKTRACKS {
        let cand = prox_l20_step(grad, anchor, gamma, w)?;
        if gamma >= tau {
            return Ok((gamma, cand));
        }
        let step = cand.sub(anchor);
        let f_cand = block_residual(obs, side, &cand, other)?.loss();
        let bound = f_anchor + grad.inner(&step) + 0.5 * gamma * step.fro_norm_sq();
        if f_cand <= bound + slack {
            return Ok((gamma, cand));
        }
        gamma *= rho;
    }
    Err(Error::BacktrackingBreakdown(MAX_BACKTRACKS))
}

/// Backtracked proximal step on one block, starting from `gamma0`.
///
/// For `side = U` the block is `U` and `other_factor` is `V`; for `side = V`
/// the roles swap. Returns the accepted `γ` and the candidate `U(γ)`.
pub fn backtrack_gamma(
    obs: &ObservationSet,
    anchor: &Mat,
    other_factor: &Mat,
    gamma0: f64,
    rho: f64,
    side: Side,
    w: &RegWeights,
) -> Result<(f64, Mat)> {
    if !(gamma0 > 0.0) {
        return Err(param_err("gamma0 must be positive"));
    }
    if !(rho > 1.0) {
        return Err(param_err("rho must exceed 1"));
    }
    let res = block_residual(obs, side, anchor, other_factor)?;
    let grad = block_grad(obs, side, &res, other_factor)?;
    let tau = lipschitz_f() * spectral_norm_sq(other_factor);
    search_step(obs, side, anchor, other_factor, &grad, res.loss(), gamma0, rho, tau, w)
}

fn extrapolate(cur: &Mat, prev: &Mat, beta: f64) -> Mat {
    if beta == 0.0 {
        cur.clone()
    } else {
        cur.add_scaled(beta, &cur.sub(prev))
    }
}

/// One sweep: extrapolated `U` step, extrapolated `V` step, traces.
pub fn amm_iterate(state: &mut AmmState, obs: &ObservationSet, cfg: &AmmConfig, gamma0: f64) -> Result<()> {
    let w = &cfg.weights;
    let rho = cfg.backtrack_rho;
    let beta = nesterov_beta(state, cfg);
    let (u, v) = (&state.current.u, &state.current.v);

    let anchor_u = extrapolate(u, &state.previous.u, beta);
    let res_a = match (beta == 0.0, state.res_current.take()) {
        (true, Some(r)) => r,
        _ => obs.residual(&anchor_u, v)?,
    };
    let grad_u = obs.grad_u(&res_a, v)?;
    let tau_v = lipschitz_f() * spectral_norm_sq(v);
    let start_u = step_start(cfg, gamma0, tau_v);
    let (gamma_u, u_new) = search_step(obs, Side::U, &anchor_u, v, &grad_u, res_a.loss(), start_u, rho, tau_v, w)?;

    let anchor_v = extrapolate(v, &state.previous.v, beta);
    let res_b = obs.residual(&u_new, &anchor_v)?;
    let grad_v = obs.grad_v(&res_b, &u_new)?;
    let tau_u = lipschitz_f() * spectral_norm_sq(&u_new);
    let start_v = step_start(cfg, gamma0, tau_u);
    let (gamma_v, v_new) = search_step(obs, Side::V, &anchor_v, &u_new, &grad_v, res_b.loss(), start_v, rho, tau_u, w)?;

    let next = FactorPair { u: u_new, v: v_new };
    let res_next = obs.residual(&next.u, &next.v)?;
    let phi_next = phi_from_residual(&res_next, &next, w);

    let phi_old = *state.phi_trace.last().expect("trace holds the initial point");
    let du_old = state.current.u.sub(&state.previous.u).fro_norm_sq();
    let dv_old = state.current.v.sub(&state.previous.v).fro_norm_sq();
    let du_new = next.u.sub(&state.current.u).fro_norm_sq();
    let dv_new = next.v.sub(&state.current.v).fro_norm_sq();
    let (a1, a2) = (gamma_u - tau_v, gamma_v - tau_u);
    let xi_old = phi_old + 0.5 * XI_RHO * (a1 * du_old + a2 * dv_old);
    let xi_new = phi_next + 0.5 * XI_RHO * (a1 * du_new + a2 * dv_new);

    state.previous = core::mem::replace(&mut state.current, next);
    state.anchor_u = anchor_u.clone();
    state.anchor_v = anchor_v.clone();
    state.res_current = Some(res_next);
    state.last = Some(LastStep {
        anchor_u,
        anchor_v,
        grad_u,
        grad_v,
        gamma_u,
        gamma_v,
    });
    let (_, _, rel) = stopping_residuals(state, obs, w)?;
    state.compact();

    state.phi_trace.push(phi_next);
    state.rank_trace.push(numerical_rank(&state.current, DEFAULT_RANK_TOL)?);
    state.residual_trace.push(rel);
    state.gamma_u_trace.push(gamma_u);
    state.gamma_v_trace.push(gamma_v);
    state.beta_trace.push(beta);
    state.xi_change_trace.push(xi_new - xi_old);
    Ok(())
}

fn step_start(cfg: &AmmConfig, gamma0: f64, tau: f64) -> f64 {
    match cfg.beta_safeguard {
        Some(_) => gamma0.max(SAFEGUARD_STEP_RATIO * tau),
        None => gamma0,
    }
}

/// `(‖E_U‖, ‖E_V‖, ‖(E_U, E_V)‖/(1 + ‖X‖_F))` for the latest sweep, where
///
/// `E_U = ∇f(X⁺)V⁺ − ∇f(ŨVᵀ)V + γ₁(Ũ − U⁺)` and
/// `E_V = ∇f(X⁺)ᵀU⁺ − ∇f(U⁺Ṽᵀ)ᵀU⁺ + γ₂(Ṽ − V⁺)`.
pub fn stopping_residuals(state: &AmmState, obs: &ObservationSet, _w: &RegWeights) -> Result<(f64, f64, f64)> {
    let last = state
        .last
        .as_ref()
        .ok_or_else(|| param_err("stopping residuals need a completed sweep"))?;
    let fp = &state.current;
    let computed;
    let res = match &state.res_current {
        Some(r) => r,
        None => {
            computed = obs.residual(&fp.u, &fp.v)?;
            &computed
        }
    };
    let e_u = obs
        .grad_u(res, &fp.v)?
        .sub(&last.grad_u)
        .add_scaled(last.gamma_u, &last.anchor_u.sub(&fp.u));
    let e_v = obs
        .grad_v(res, &fp.u)?
        .sub(&last.grad_v)
        .add_scaled(last.gamma_v, &last.anchor_v.sub(&fp.v));
    let (nu, nv) = (e_u.fro_norm_sq(), e_v.fro_norm_sq());
    let x_norm = libm::sqrt(fp.product_norm_sq());
    let rel = libm::sqrt(nu + nv) / (1.0 + x_norm);
    Ok((libm::sqrt(nu), libm::sqrt(nv), rel))
}

/// `Ξ(U,V,U′,V′) = Φ(U,V) + (ρ₁α₁/2)‖U − U′‖² + (ρ₂α₂/2)‖V − V′‖²`.
#[allow(clippy::too_many_arguments)]
pub fn xi_potential(
    fp: &FactorPair,
    fp_prev: &FactorPair,
    rho1: f64,
    rho2: f64,
    alpha1: f64,
    alpha2: f64,
    obs: &ObservationSet,
    w: &RegWeights,
) -> Result<f64> {
    if !(rho1 > 0.0 && rho1 < 1.0 && rho2 > 0.0 && rho2 < 1.0) {
        return Err(param_err("rho1 and rho2 must lie in (0, 1)"));
    }
    if !(alpha1 >= 0.0 && alpha2 >= 0.0) {
        return Err(param_err("alpha1 and alpha2 must be nonnegative"));
    }
    if fp.u.shape() != fp_prev.u.shape() || fp.v.shape() != fp_prev.v.shape() {
        return Err(Error::DimensionMismatch("iterate and previous iterate differ in shape".to_string()));
    }
    let phi = crate::factor::eval_phi(obs, fp, w)?;
    Ok(phi
        + 0.5 * rho1 * alpha1 * fp.u.sub(&fp_prev.u).fro_norm_sq()
        + 0.5 * rho2 * alpha2 * fp.v.sub(&fp_prev.v).fro_norm_sq())
}

/// `max_{1≤i<window} |Φ_k − Φ_{k−i}| / max(1, Φ_k)` over the trace tail, or
/// `None` while fewer than `window` values exist.
pub(crate) fn objective_spread(trace: &[f64], window: usize) -> Option<f64> {
    if trace.len() < window || window < 2 {
        return None;
    }
    let tail = &trace[trace.len() - window..];
    let last = tail[window - 1];
    let spread = tail[..window - 1]
        .iter()
        .map(|p| (last - p).abs())
        .fold(0.0f64, f64::max);
    Some(spread / last.abs().max(1.0))
}

pub(crate) fn tail_constant<T: PartialEq>(trace: &[T], window: usize) -> bool {
    trace.len() >= window && trace[trace.len() - window..].windows(2).all(|p| p[0] == p[1])
}

/// Which stopping rule a loop applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum StopRule {
    /// Rank stable and (residual or objective flatness).
    RankGated,
    /// Residual or objective flatness.
    Smooth,
}

pub(crate) fn run_loop(
    obs: &ObservationSet,
    cfg: &AmmConfig,
    init: FactorPair,
    rule: StopRule,
) -> Result<(AmmState, Termination, f64)> {
    cfg.validate()?;
    check_dims(obs, &init)?;
    if init.width() != cfg.r {
        return Err(Error::DimensionMismatch(format!(
            "initial factors have {} columns, config budget is {}",
            init.width(),
            cfg.r
        )));
    }
    let gamma0 = match cfg.gamma0 {
        Some(g) => g,
        None => 2.5 * obs.spectral_norm(),
    };
    if !(gamma0 > 0.0) {
        return Err(param_err("the data matrix is zero; pass gamma0 explicitly"));
    }
    let mut state = AmmState::new(obs, init, &cfg.weights)?;
    let window = 20usize;
    let mut reason = Termination::MaxIters;
    while state.iters() < cfg.max_iters {
        if state.current.width() == 0 {
            reason = Termination::EmptySupport;
            break;
        }
        amm_iterate(&mut state, obs, cfg, gamma0)?;
        let rank_ok = match rule {
            StopRule::RankGated => tail_constant(&state.rank_trace, cfg.rank_window),
            StopRule::Smooth => true,
        };
        if !rank_ok {
            continue;
        }
        if state.residual_trace.last().is_some_and(|&r| r <= cfg.eps_residual) {
            reason = Termination::ResidualTolerance;
            break;
        }
        if objective_spread(&state.phi_trace, window).is_some_and(|s| s <= cfg.eps_objective) {
            reason = Termination::ObjectiveFlat;
            break;
        }
    }
    Ok((state, reason, gamma0))
}

/// Columns that are nonzero in both factors.
pub(crate) fn joint_support(fp: &FactorPair) -> usize {
    let (ju, jv) = (fp.j_u(), fp.j_v());
    ju.iter().filter(|j| jv.contains(j)).count()
}

/// Runs the method from `init` until the stopping test passes or
/// `max_iters` sweeps are done.
pub fn amm_solve(obs: &ObservationSet, cfg: &AmmConfig, init: FactorPair) -> Result<SolveReport> {
    let (state, reason, gamma0) = run_loop(obs, cfg, init, StopRule::RankGated)?;
    let solution = state.solution();
    let mut echo = cfg.clone();
    echo.gamma0 = Some(gamma0);
    let xi_monotone = cfg.beta_safeguard.map(|_| {
        state
            .xi_change_trace
            .iter()
            .zip(&state.phi_trace)
            .all(|(d, phi)| *d <= 1e-10 * phi.abs().max(1.0))
    });
    if reason == Termination::MaxIters {
        log::warn!("AMM stopped at the iteration cap ({})", cfg.max_iters);
    }
    Ok(SolveReport {
        model: "amm".to_string(),
        iters: state.iters(),
        terminated_by: reason,
        re: None,
        nmae: None,
        rank: joint_support(&solution),
        numerical_rank: *state.rank_trace.last().expect("nonempty"),
        phi_trace: state.phi_trace,
        residual_trace: state.residual_trace,
        rank_trace: state.rank_trace,
        j_trace: None,
        kappa: None,
        phase1_iters: None,
        phase2_iters: None,
        phase1_phi_trace: None,
        xi_monotone,
        wall_ms: None,
        config: ConfigEcho::Amm(echo),
        solution: Some(solution),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::eval_phi;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, n: usize, r: usize) -> Mat {
        Mat::from_fn(n, r, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    /// Low-rank data observed on roughly `frac` of the entries.
    fn instance(seed: u64, n: usize, m: usize, rstar: usize, frac: f64) -> ObservationSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = rand_mat(&mut rng, n, rstar);
        let r = rand_mat(&mut rng, m, rstar);
        let x = l.matmul_t(&r).unwrap();
        let mut entries = vec![];
        for i in 0..n {
            for j in 0..m {
                if rng.random::<f64>() < frac {
                    entries.push((i, j, x[(i, j)] + 0.01 * (rng.random::<f64>() - 0.5)));
                }
            }
        }
        ObservationSet::new(n, m, entries).unwrap()
    }

    fn dummy_state(obs: &ObservationSet, r: usize) -> AmmState {
        let fp = FactorPair::zeros(obs.n_rows(), obs.n_cols(), r);
        AmmState::new(obs, fp, &RegWeights::new(0.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn nesterov_schedule() {
        let obs = instance(1, 4, 4, 1, 1.0);
        let mut st = dummy_state(&obs, 1);
        let cfg = AmmConfig::new(RegWeights::new(0.0, 1.0).unwrap(), 1);
        assert_eq!(nesterov_beta(&mut st, &cfg), 0.0);
        assert!((st.t - 1.618033988749895).abs() < 1e-15);
        let b1 = nesterov_beta(&mut st, &cfg);
        assert!((b1 - 0.28175352512532087).abs() < 1e-15);
        assert!((st.t - 2.193527085331054).abs() < 1e-14);
        for _ in 0..50 {
            nesterov_beta(&mut st, &cfg);
        }
        let capped = AmmConfig { beta_safeguard: Some(0.4), ..cfg.clone() };
        assert_eq!(nesterov_beta(&mut st, &capped), 0.4);
        let zero = AmmConfig { beta_schedule: BetaSchedule::Zero, ..cfg.clone() };
        let constant = AmmConfig { beta_schedule: BetaSchedule::Constant(0.3), ..cfg };
        for _ in 0..3 {
            assert_eq!(nesterov_beta(&mut st, &zero), 0.0);
            assert_eq!(nesterov_beta(&mut st, &constant), 0.3);
        }
    }

    fn majorized(obs: &ObservationSet, side: Side, anchor: &Mat, other: &Mat, gamma: f64, cand: &Mat) -> bool {
        let res = block_residual(obs, side, anchor, other).unwrap();
        let grad = block_grad(obs, side, &res, other).unwrap();
        let step = cand.sub(anchor);
        let lhs = block_residual(obs, side, cand, other).unwrap().loss();
        let rhs = res.loss() + grad.inner(&step) + 0.5 * gamma * step.fro_norm_sq();
        lhs <= rhs + 1e-12 * res.loss().abs().max(1.0)
    }

    #[test]
    fn backtracking_accepts_immediately_for_zero_partner() {
        let obs = instance(2, 6, 5, 2, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let anchor = rand_mat(&mut rng, 6, 3);
        let w = RegWeights::new(0.01, 1e-3).unwrap();
        let (g, cand) = backtrack_gamma(&obs, &anchor, &Mat::zeros(5, 3), 0.5, 1.05, Side::U, &w).unwrap();
        assert_eq!(g, 0.5);
        assert!(majorized(&obs, Side::U, &anchor, &Mat::zeros(5, 3), g, &cand));
    }

    #[test]
    fn backtracking_accepts_at_lipschitz_bound() {
        let obs = instance(4, 7, 6, 2, 0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = RegWeights::new(0.05, 1e-4).unwrap();
        for side in [Side::U, Side::V] {
            let (na, no) = if side == Side::U { (7, 6) } else { (6, 7) };
            let anchor = rand_mat(&mut rng, na, 3);
            let other = rand_mat(&mut rng, no, 3);
            let g0 = spectral_norm_sq(&other) * 1.0001;
            let (g, cand) = backtrack_gamma(&obs, &anchor, &other, g0, 1.05, side, &w).unwrap();
            assert_eq!(g, g0);
            assert!(majorized(&obs, side, &anchor, &other, g, &cand));
        }
    }

    #[test]
    fn backtracking_returns_smallest_certified_step() {
        let w = RegWeights::new(0.02, 1e-4).unwrap();
        let rho = 1.05;
        for seed in 0..20u64 {
            let obs = instance(100 + seed, 8, 7, 2, 0.8);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let anchor = rand_mat(&mut rng, 8, 3).scaled(2.0);
            let other = rand_mat(&mut rng, 7, 3).scaled(2.0);
            let g0 = 0.05 * spectral_norm_sq(&other);
            let (g, cand) = backtrack_gamma(&obs, &anchor, &other, g0, rho, Side::U, &w).unwrap();
            assert!(majorized(&obs, Side::U, &anchor, &other, g, &cand));
            if g > g0 {
                let gp = g / rho;
                let res = obs.residual(&anchor, &other).unwrap();
                let grad = obs.grad_u(&res, &other).unwrap();
                let prev = prox_l20_step(&grad, &anchor, gp, &w).unwrap();
                assert!(!majorized(&obs, Side::U, &anchor, &other, gp, &prev));
            }
        }
    }

    #[test]
    fn backtracking_rejects_bad_parameters() {
        let obs = instance(6, 3, 3, 1, 1.0);
        let w = RegWeights::new(0.0, 1.0).unwrap();
        let a = Mat::zeros(3, 1);
        assert!(backtrack_gamma(&obs, &a, &a, 0.0, 1.05, Side::U, &w).is_err());
        assert!(backtrack_gamma(&obs, &a, &a, 1.0, 1.0, Side::U, &w).is_err());
    }

    #[test]
    fn zero_factors_are_a_fixed_point() {
        let obs = instance(7, 6, 6, 2, 0.8);
        let w = RegWeights::new(0.1, 1e-3).unwrap();
        let cfg = AmmConfig::new(w, 3);
        let mut st = AmmState::new(&obs, FactorPair::zeros(6, 6, 3), &w).unwrap();
        // zero columns in all four factors are dropped up front
        assert_eq!(st.current.width(), 0);
        amm_iterate(&mut st, &obs, &cfg, 1.0).unwrap();
        assert_eq!(st.solution(), FactorPair::zeros(6, 6, 3));
        assert_eq!(st.residual_trace, vec![0.0]);
    }

    #[test]
    fn damped_step_descends() {
        let obs = instance(8, 10, 9, 2, 0.7);
        let w = RegWeights::new(0.0, 50.0).unwrap();
        let cfg = AmmConfig {
            beta_schedule: BetaSchedule::Zero,
            ..AmmConfig::new(w, 3)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let init = FactorPair::new(rand_mat(&mut rng, 10, 3), rand_mat(&mut rng, 9, 3)).unwrap();
        let before = eval_phi(&obs, &init, &w).unwrap();
        let mut st = AmmState::new(&obs, init.clone(), &w).unwrap();
        amm_iterate(&mut st, &obs, &cfg, 1.0).unwrap();
        let after = eval_phi(&obs, &st.solution(), &w).unwrap();
        assert!(after <= before);
        assert!(st.solution().u.fro_norm() < init.u.fro_norm());
    }

    #[test]
    fn objective_monotone_without_extrapolation() {
        let obs = instance(10, 10, 10, 2, 0.6);
        let w = RegWeights::new(0.05, 1e-6).unwrap();
        let cfg = AmmConfig {
            beta_schedule: BetaSchedule::Zero,
            ..AmmConfig::new(w, 4)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let init = FactorPair::new(rand_mat(&mut rng, 10, 4), rand_mat(&mut rng, 10, 4)).unwrap();
        let mut st = AmmState::new(&obs, init, &w).unwrap();
        for _ in 0..50 {
            amm_iterate(&mut st, &obs, &cfg, 0.5).unwrap();
        }
        for p in st.phi_trace.windows(2) {
            assert!(p[1] <= p[0] + 1e-10 * p[0].abs().max(1.0), "{} > {}", p[1], p[0]);
        }
    }

    #[test]
    fn residuals_match_dense_formulas() {
        let obs = instance(12, 9, 8, 2, 0.7);
        let w = RegWeights::new(0.01, 1e-3).unwrap();
        let cfg = AmmConfig::new(w, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let init = FactorPair::new(rand_mat(&mut rng, 9, 3), rand_mat(&mut rng, 8, 3)).unwrap();
        let mut st = AmmState::new(&obs, init.clone(), &w).unwrap();
        // two sweeps so the second one extrapolates
        amm_iterate(&mut st, &obs, &cfg, 0.5).unwrap();
        let before = st.solution();
        amm_iterate(&mut st, &obs, &cfg, 0.5).unwrap();
        assert_eq!(st.current.width(), 3);
        let (eu, ev, rel) = stopping_residuals(&st, &obs, &w).unwrap();

        let beta = st.beta_trace[1];
        let (gu, gv) = (st.gamma_u_trace[1], st.gamma_v_trace[1]);
        let mask = |x: &Mat| {
            let mut out = Mat::zeros(9, 8);
            for (i, j, m) in obs.iter() {
                out[(i, j)] = x[(i, j)] - m;
            }
            out
        };
        let au = before.u.add_scaled(beta, &before.u.sub(&init.u));
        let av = before.v.add_scaled(beta, &before.v.sub(&init.v));
        let now = st.solution();
        let rn = mask(&now.u.matmul_t(&now.v).unwrap());
        let ra = mask(&au.matmul_t(&before.v).unwrap());
        let rb = mask(&now.u.matmul_t(&av).unwrap());
        let e_u = rn
            .matmul(&now.v)
            .unwrap()
            .sub(&ra.matmul(&before.v).unwrap())
            .add_scaled(gu, &au.sub(&now.u));
        let e_v = rn
            .t_matmul(&now.u)
            .unwrap()
            .sub(&rb.t_matmul(&now.u).unwrap())
            .add_scaled(gv, &av.sub(&now.v));
        assert!((eu - e_u.fro_norm()).abs() < 1e-10);
        assert!((ev - e_v.fro_norm()).abs() < 1e-10);
        let x = now.u.matmul_t(&now.v).unwrap().fro_norm();
        let expect = libm::sqrt(e_u.fro_norm_sq() + e_v.fro_norm_sq()) / (1.0 + x);
        assert!((rel - expect).abs() < 1e-12);
    }

    #[test]
    fn xi_reduces_to_phi() {
        let obs = instance(14, 6, 5, 2, 0.8);
        let w = RegWeights::new(0.1, 1e-2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let a = FactorPair::new(rand_mat(&mut rng, 6, 2), rand_mat(&mut rng, 5, 2)).unwrap();
        let b = FactorPair::new(rand_mat(&mut rng, 6, 2), rand_mat(&mut rng, 5, 2)).unwrap();
        let phi = eval_phi(&obs, &a, &w).unwrap();
        assert_eq!(xi_potential(&a, &a, 0.6, 0.6, 3.0, 4.0, &obs, &w).unwrap(), phi);
        assert_eq!(xi_potential(&a, &b, 0.6, 0.6, 0.0, 0.0, &obs, &w).unwrap(), phi);
        let expect = phi + 0.5 * 0.3 * 2.0 * a.u.sub(&b.u).fro_norm_sq() + 0.5 * 0.7 * 5.0 * a.v.sub(&b.v).fro_norm_sq();
        let got = xi_potential(&a, &b, 0.3, 0.7, 2.0, 5.0, &obs, &w).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect.abs());
        assert!(xi_potential(&a, &b, 1.0, 0.5, 1.0, 1.0, &obs, &w).is_err());
        assert!(xi_potential(&a, &b, 0.5, 0.5, -1.0, 1.0, &obs, &w).is_err());
    }

    #[test]
    fn exact_fit_start_stops_quickly() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let l = rand_mat(&mut rng, 12, 2);
        let r = rand_mat(&mut rng, 10, 2);
        let x = l.matmul_t(&r).unwrap();
        let mut entries = vec![];
        for i in 0..12 {
            for j in 0..10 {
                if (i + 2 * j) % 3 != 0 {
                    entries.push((i, j, x[(i, j)]));
                }
            }
        }
        let obs = ObservationSet::new(12, 10, entries).unwrap();
        let init = FactorPair::new(l, r).unwrap();
        let w = RegWeights::new(1e-6, 1e-10).unwrap();
        let cfg = AmmConfig::new(w, 2);
        let rep = amm_solve(&obs, &cfg, init).unwrap();
        assert!(rep.iters <= cfg.rank_window);
        assert_eq!(rep.terminated_by, Termination::ResidualTolerance);
        assert!(*rep.residual_trace.last().unwrap() < 1e-6);
        assert_eq!(rep.rank, 2);
    }

    #[test]
    fn safeguarded_run_decreases_xi() {
        let obs = instance(17, 15, 14, 2, 0.5);
        let w = RegWeights::new(0.02, 1e-4).unwrap();
        let cfg = AmmConfig {
            max_iters: 80,
            ..AmmConfig::new(w, 5).with_safeguard()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let init = FactorPair::new(rand_mat(&mut rng, 15, 5), rand_mat(&mut rng, 14, 5)).unwrap();
        let rep = amm_solve(&obs, &cfg, init).unwrap();
        assert_eq!(rep.xi_monotone, Some(true));
    }

    #[test]
    fn config_validation() {
        let w = RegWeights::new(0.0, 1.0).unwrap();
        assert!(AmmConfig::new(w, 2).validate().is_ok());
        assert!(AmmConfig { backtrack_rho: 1.0, ..AmmConfig::new(w, 2) }.validate().is_err());
        assert!(AmmConfig { gamma0: Some(-1.0), ..AmmConfig::new(w, 2) }.validate().is_err());
        assert!(AmmConfig { rank_window: 0, ..AmmConfig::new(w, 2) }.validate().is_err());
        assert!(AmmConfig { eps_residual: 0.0, ..AmmConfig::new(w, 2) }.validate().is_err());
        assert!(AmmConfig { r: 0, ..AmmConfig::new(w, 2) }.validate().is_err());
    }

    #[test]
    fn spread_and_tail_helpers() {
        assert_eq!(objective_spread(&[1.0, 2.0], 3), None);
        assert_eq!(objective_spread(&[5.0, 4.0, 2.0], 3), Some(1.5));
        assert_eq!(objective_spread(&[0.5, 0.25], 2), Some(0.25));
        assert!(tail_constant(&[3, 2, 2, 2], 3));
        assert!(!tail_constant(&[3, 2, 2], 3));
        assert!(!tail_constant(&[2, 2], 3));
    }
}
