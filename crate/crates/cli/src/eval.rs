//! Held-out evaluation on rating data.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use l20mc_core::datagen::{split_ratings, SplitOptions};
use l20mc_core::metrics::nmae;
use l20mc_core::{SamplingScheme, SolveReport};

use crate::error::{CliError, Result};
use crate::io::{load_triplets, RatingTable};
use crate::run::{lambda_from_c, run_solver, spectral_start, SolverKind, SolverSetup, DEFAULT_MU, DEFAULT_R_CAP};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub solver: SolverKind,
    pub c_lambda: f64,
    pub split: SplitOptions,
    pub mu: f64,
    pub r_cap: usize,
    pub delimiter: Option<String>,
}

impl EvalOptions {
    pub fn new(solver: SolverKind, c_lambda: f64) -> Self {
        EvalOptions {
            solver,
            c_lambda,
            split: SplitOptions {
                sr: 0.5,
                scheme: SamplingScheme::Scheme1,
                ..SplitOptions::default()
            },
            mu: DEFAULT_MU,
            r_cap: DEFAULT_R_CAP,
            delimiter: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub ratings_file: String,
    pub n_users: usize,
    pub n_items: usize,
    pub n_train: usize,
    pub n_heldout: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub c_lambda: f64,
    pub lambda: f64,
    pub options: EvalOptions,
    #[serde(flatten)]
    pub report: SolveReport,
}

/// Splits the ratings, trains on `Γ ∩ Ω` and scores NMAE on `Γ \ Ω`.
pub fn evaluate(table: &RatingTable, opts: &EvalOptions, source: &str) -> Result<EvalReport> {
    if !(opts.c_lambda > 0.0 && opts.c_lambda.is_finite()) {
        return Err(CliError::Validation(format!("c_lambda must be positive, got {}", opts.c_lambda)));
    }
    let split = split_ratings(&table.ratings, table.n_users, table.n_items, &opts.split)?;
    if split.heldout.is_empty() {
        log::warn!("every rating landed in the training set; NMAE is undefined");
    }
    let obs = &split.train;
    let r = obs.n_rows().min(obs.n_cols()).min(opts.r_cap);
    let lambda = lambda_from_c(opts.solver, opts.c_lambda, obs);
    let setup = SolverSetup {
        solver: opts.solver,
        lambda,
        mu: opts.mu,
        r,
        beta_safeguard: false,
        max_iters: None,
    };
    let t = Instant::now();
    let init = spectral_start(obs, r, opts.split.seed)?;
    let mut report = run_solver(obs, &setup, &init)?;
    report.wall_ms = Some(t.elapsed().as_secs_f64() * 1e3);
    report.nmae = Some(nmae(report.factors(), &split.heldout, split.r_min, split.r_max)?);
    Ok(EvalReport {
        ratings_file: source.to_string(),
        n_users: obs.n_rows(),
        n_items: obs.n_cols(),
        n_train: obs.nnz(),
        n_heldout: split.heldout.len(),
        r_min: split.r_min,
        r_max: split.r_max,
        c_lambda: opts.c_lambda,
        lambda,
        options: opts.clone(),
        report,
    })
}

pub fn evaluate_file(path: &Path, opts: &EvalOptions) -> Result<EvalReport> {
    let table = load_triplets(path, opts.delimiter.as_deref())?;
    evaluate(&table, opts, &path.display().to_string())
}
