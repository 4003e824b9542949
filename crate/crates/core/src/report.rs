//! Solver outcomes and their serialized form.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::als::AlsConfig;
use crate::amm::AmmConfig;
use crate::factor::FactorPair;
use crate::hybrid::HybridConfig;
use crate::map::MapConfig;

/// Why a solver stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Normalized stationarity residual fell below its tolerance.
    ResidualTolerance,
    /// Objective flat over the lag window.
    ObjectiveFlat,
    /// Nonzero-column set unchanged over the stability window.
    SupportStable,
    /// Relative change of consecutive products below tolerance.
    RelativeChange,
    MaxIters,
    /// Every column was thresholded away; the output is `X = 0`.
    EmptySupport,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::ResidualTolerance => "residual_tolerance",
            Termination::ObjectiveFlat => "objective_flat",
            Termination::SupportStable => "support_stable",
            Termination::RelativeChange => "relative_change",
            Termination::MaxIters => "max_iters",
            Termination::EmptySupport => "empty_support",
        }
    }

    /// `true` unless the iteration cap was hit.
    pub fn converged(&self) -> bool {
        !matches!(self, Termination::MaxIters)
    }
}

/// Effective configuration of a run, echoed into its report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "snake_case")]
pub enum ConfigEcho {
    Amm(AmmConfig),
    Map(MapConfig),
    Hybrid(HybridConfig),
    Als(AlsConfig),
}

/// Result of one solve: the factors, traces and bookkeeping.
///
/// `re`, `nmae` and `wall_ms` are left empty by the solvers and filled in by
/// callers that have ground truth, held-out data or a clock.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub model: String,
    pub iters: usize,
    pub terminated_by: Termination,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub re: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nmae: Option<f64>,
    /// Nonzero-column count for the ℓ2,0 solvers, numerical rank for ALS.
    pub rank: usize,
    pub numerical_rank: usize,
    pub phi_trace: Vec<f64>,
    pub residual_trace: Vec<f64>,
    pub rank_trace: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub j_trace: Option<Vec<Vec<usize>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kappa: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub phase1_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub phase2_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub phase1_phi_trace: Option<Vec<f64>>,
    /// Whether every step decreased the potential `Ξ`; only set in
    /// safeguarded AMM runs.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub xi_monotone: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
    pub config: ConfigEcho,
    #[serde(skip)]
    pub solution: Option<FactorPair>,
}

impl SolveReport {
    /// The output factors. Present on every report returned by a solver.
    pub fn factors(&self) -> &FactorPair {
        self.solution
            .as_ref()
            .expect("solver reports always carry their solution")
    }
}
