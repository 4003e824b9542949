//! Two-phase solver: the refactorization method finds the nonzero-column
//! support, then the smooth objective `F_μ` is minimized over the surviving
//! `κ` columns with extrapolated ridge steps.

use alloc::string::ToString;

use serde::{Deserialize, Serialize};

use crate::amm::{joint_support, run_loop, AmmConfig, StopRule};
use crate::error::{param_err, Error, Result};
use crate::factor::{numerical_rank, FactorPair, RegWeights, DEFAULT_RANK_TOL};
use crate::linalg::Mat;
use crate::map::{prefix_sets, run_map, MapConfig};
use crate::obs::ObservationSet;
use crate::report::{ConfigEcho, SolveReport, Termination};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub phase1: MapConfig,
    /// Cap on phase-1 iterations.
    pub phase1_max_iters: usize,
    /// Smooth phase; `weights.lambda` must be 0 and `r` is replaced by `κ`.
    pub phase2: AmmConfig,
}

impl HybridConfig {
    pub fn new(weights: RegWeights, r: usize) -> Self {
        let mut phase2 = AmmConfig::new(RegWeights { lambda: 0.0, mu: weights.mu }, r);
        phase2.eps_residual = 5e-3;
        HybridConfig {
            phase1: MapConfig::new(weights, r),
            phase1_max_iters: 100,
            phase2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.phase1.validate()?;
        self.phase2.validate()?;
        if self.phase2.weights.lambda != 0.0 {
            return Err(param_err("phase-2 weights must have lambda = 0"));
        }
        if self.phase1_max_iters == 0 {
            return Err(param_err("phase1_max_iters must be positive"));
        }
        Ok(())
    }
}

/// Restricts `U` and `V` to their common nonzero columns, in order.
pub fn extract_support(fp: &FactorPair) -> Result<FactorPair> {
    let ju = fp.j_u();
    if ju != fp.j_v() {
        return Err(Error::InvalidParameter(
            "nonzero columns of U and V differ; the pair is not a phase-1 output".to_string(),
        ));
    }
    Ok(fp.select_columns(&ju))
}

/// Phase 1 from `(P⁰, Q⁰)` until the support is stable, then phase 2 on the
/// `κ` surviving columns.
pub fn hybrid_solve(obs: &ObservationSet, cfg: &HybridConfig, init: (Mat, Mat)) -> Result<SolveReport> {
    cfg.validate()?;
    let (p1, reason1) = run_map(obs, &cfg.phase1, init.0, init.1, false, cfg.phase1_max_iters)?;
    if reason1 == Termination::MaxIters {
        log::warn!(
            "support did not stabilize within {} phase-1 iterations",
            cfg.phase1_max_iters
        );
    }
    let kappa = p1.kappa();
    let reduced = extract_support(&p1.live_factors())?;
    let (n, m, r) = (obs.n_rows(), obs.n_cols(), cfg.phase1.r);
    let j_trace = prefix_sets(&p1.kappa_trace);
    let base = SolveReport {
        model: "hybrid".to_string(),
        iters: p1.iters(),
        terminated_by: Termination::EmptySupport,
        re: None,
        nmae: None,
        rank: 0,
        numerical_rank: 0,
        phi_trace: alloc::vec::Vec::new(),
        residual_trace: alloc::vec::Vec::new(),
        rank_trace: alloc::vec::Vec::new(),
        j_trace: Some(j_trace),
        kappa: Some(kappa),
        phase1_iters: Some(p1.iters()),
        phase2_iters: Some(0),
        phase1_phi_trace: Some(p1.phi_trace.clone()),
        xi_monotone: None,
        wall_ms: None,
        config: ConfigEcho::Hybrid(cfg.clone()),
        solution: Some(FactorPair::zeros(n, m, r)),
    };
    if kappa == 0 {
        return Ok(base);
    }

    let mut cfg2 = cfg.phase2.clone();
    cfg2.r = kappa;
    let (st, reason2, gamma0) = run_loop(obs, &cfg2, reduced, StopRule::Smooth)?;
    let idx: alloc::vec::Vec<usize> = (0..kappa).collect();
    let sol = st.solution();
    let solution = FactorPair {
        u: sol.u.scatter_columns(&idx, r),
        v: sol.v.scatter_columns(&idx, r),
    };
    let mut echo = cfg.clone();
    echo.phase2.gamma0 = Some(gamma0);
    Ok(SolveReport {
        iters: p1.iters() + st.iters(),
        terminated_by: reason2,
        rank: joint_support(&solution),
        numerical_rank: numerical_rank(&sol, DEFAULT_RANK_TOL)?,
        phase2_iters: Some(st.iters()),
        phi_trace: st.phi_trace,
        residual_trace: st.residual_trace,
        rank_trace: st.rank_trace,
        config: ConfigEcho::Hybrid(echo),
        solution: Some(solution),
        ..base
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::eval_f_mu;
    use crate::init::{partial_svd, PartialSvdOptions};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, n: usize, r: usize) -> Mat {
        Mat::from_fn(n, r, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn extract_support_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let full = FactorPair::new(rand_mat(&mut rng, 5, 3), rand_mat(&mut rng, 4, 3)).unwrap();
        assert_eq!(extract_support(&full).unwrap(), full);

        let empty = FactorPair::zeros(5, 4, 3);
        let e = extract_support(&empty).unwrap();
        assert_eq!(e.width(), 0);

        let mut u = rand_mat(&mut rng, 6, 4);
        let mut v = rand_mat(&mut rng, 5, 4);
        for j in [1, 3] {
            u.set_column(j, &[0.0; 6]);
            v.set_column(j, &[0.0; 5]);
        }
        let fp = FactorPair { u: u.clone(), v: v.clone() };
        let got = extract_support(&fp).unwrap();
        for i in 0..6 {
            assert_eq!(got.u.row(i), &[u[(i, 0)], u[(i, 2)]]);
        }
        for i in 0..5 {
            assert_eq!(got.v.row(i), &[v[(i, 0)], v[(i, 2)]]);
        }

        let mut bad = fp;
        bad.v.set_column(1, &[1.0; 5]);
        assert!(extract_support(&bad).is_err());
    }

    fn planted(seed: u64, n: usize, m: usize, rstar: usize) -> (ObservationSet, FactorPair) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = rand_mat(&mut rng, n, rstar).scaled(3.0);
        let r = rand_mat(&mut rng, m, rstar).scaled(3.0);
        let x = l.matmul_t(&r).unwrap();
        let mut entries = vec![];
        for i in 0..n {
            for j in 0..m {
                if rng.random::<f64>() < 0.5 {
                    entries.push((i, j, x[(i, j)] + 0.01 * (rng.random::<f64>() - 0.5)));
                }
            }
        }
        (ObservationSet::new(n, m, entries).unwrap(), FactorPair { u: l, v: r })
    }

    #[test]
    fn recovers_planted_support_and_matrix() {
        let (obs, truth) = planted(2, 50, 40, 3);
        let init = partial_svd(&obs, 10, &PartialSvdOptions::default()).unwrap();
        let cut = 0.5 * (init.sigma[2] + init.sigma[3]);
        let cfg = HybridConfig::new(RegWeights::new(0.5 * cut * cut, 1e-8).unwrap(), 10);
        let rep = hybrid_solve(&obs, &cfg, init.orthonormal_start()).unwrap();
        assert_eq!(rep.kappa, Some(3));
        assert_eq!(rep.rank, 3);
        assert!(rep.terminated_by.converged());
        let re = libm::sqrt(
            crate::factor::product_distance_sq(rep.factors(), &truth).unwrap() / truth.product_norm_sq(),
        );
        assert!(re < 0.02, "RE {re}");
        assert_eq!(rep.phase1_iters.unwrap() + rep.phase2_iters.unwrap(), rep.iters);
    }

    #[test]
    fn oversized_lambda_gives_zero_solution() {
        let (obs, _) = planted(3, 12, 10, 2);
        let init = partial_svd(&obs, 4, &PartialSvdOptions::default()).unwrap();
        let cfg = HybridConfig::new(RegWeights::new(1e9, 1e-8).unwrap(), 4);
        let rep = hybrid_solve(&obs, &cfg, init.orthonormal_start()).unwrap();
        assert_eq!(rep.terminated_by, Termination::EmptySupport);
        assert_eq!(rep.kappa, Some(0));
        assert_eq!(rep.factors(), &FactorPair::zeros(12, 10, 4));
    }

    #[test]
    fn phase_two_descends_without_extrapolation() {
        let (obs, _) = planted(4, 30, 25, 2);
        let init = partial_svd(&obs, 6, &PartialSvdOptions::default()).unwrap();
        let mut cfg = HybridConfig::new(RegWeights::new(1.0, 1e-6).unwrap(), 6);
        cfg.phase2.beta_schedule = crate::amm::BetaSchedule::Zero;
        let rep = hybrid_solve(&obs, &cfg, init.orthonormal_start()).unwrap();
        for p in rep.phi_trace.windows(2) {
            assert!(p[1] <= p[0] + 1e-10 * p[0].max(1.0));
        }
        assert!(rep.rank <= rep.kappa.unwrap());
        let sol = rep.factors();
        let f = eval_f_mu(&obs, sol, 1e-6).unwrap();
        assert!((f - rep.phi_trace.last().unwrap()).abs() < 1e-9 * f.max(1.0));
    }

    #[test]
    fn critical_start_stops_at_once() {
        let (obs, _) = planted(5, 30, 25, 2);
        let init = partial_svd(&obs, 6, &PartialSvdOptions::default()).unwrap();
        let cfg = HybridConfig::new(RegWeights::new(1.0, 1e-6).unwrap(), 6);
        let first = hybrid_solve(&obs, &cfg, init.orthonormal_start()).unwrap();
        // restart phase 2 from its own output
        let k = first.kappa.unwrap();
        let reduced = extract_support(first.factors()).unwrap();
        let mut cfg2 = cfg.phase2.clone();
        cfg2.r = k;
        let (st, reason, _) = run_loop(&obs, &cfg2, reduced, StopRule::Smooth).unwrap();
        assert_eq!(reason, Termination::ResidualTolerance);
        assert_eq!(st.iters(), 1);
    }

    #[test]
    fn rejects_nonzero_phase2_lambda() {
        let mut cfg = HybridConfig::new(RegWeights::new(1.0, 1e-6).unwrap(), 4);
        cfg.phase2.weights.lambda = 0.5;
        assert!(cfg.validate().is_err());
    }
}
