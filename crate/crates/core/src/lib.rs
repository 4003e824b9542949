//! Column-sparse (`ℓ2,0`) regularized low-rank factorization for matrix
//! completion, plus a factored nuclear-norm ALS baseline.
//!
//! Everything here is `no_std` with `alloc`. File formats, timing and the
//! command-line front end live in the companion `l20mc` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod als;
pub mod amm;
pub mod datagen;
pub mod error;
pub mod factor;
pub mod hybrid;
pub mod init;
pub mod linalg;
pub mod map;
pub mod metrics;
pub mod obs;
pub mod prox;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
pub use als::{als_solve, AlsConfig};
pub use amm::{amm_solve, AmmConfig, BetaSchedule};
pub use datagen::{GroundTruth, SamplingScheme};
pub use factor::{FactorPair, RegWeights};
pub use hybrid::{hybrid_solve, HybridConfig};
pub use map::{map_solve, MapConfig};
pub use report::{SolveReport, Termination};
pub use linalg::Mat;
pub use obs::ObservationSet;
