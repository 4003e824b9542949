//! File formats, benchmark harness and command-line front end for the
//! `l20mc-core` solvers.

pub mod bench;
pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod run;

pub use error::{CliError, Result};
