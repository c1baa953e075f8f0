//! Library side of the `fdbem` command: configuration, solve and benchmark
//! runs, and verification suites.

pub mod config;
pub mod run;
pub mod verify;

use fdbem::BemError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{0}")]
    Bem(#[from] BemError),

    #[error("cannot write {path}: {source}")]
    Output { path: String, source: std::io::Error },

    #[error("{0} check(s) failed")]
    Verification(usize),
}

impl CliError {
    /// 1 verification failure, 2 usage or configuration, 3 no convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Bem(BemError::MeshNotFound(_) | BemError::InvalidArgument(_) | BemError::Parse { .. } | BemError::NonTriangularFace { .. }) => 2,
            CliError::Bem(BemError::NotConverged { .. }) => 3,
            CliError::Bem(_) | CliError::Output { .. } | CliError::Verification(_) => 1,
        }
    }
}
