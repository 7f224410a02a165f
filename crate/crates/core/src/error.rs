use std::path::PathBuf;

use thiserror::Error;

use crate::grid::{BranchId, BusId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Validation failures raised while loading or editing a grid model.
#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("duplicate bus id {0}")]
    DuplicateBus(BusId),
    #[error("duplicate branch id {0}")]
    DuplicateBranch(BranchId),
    #[error("{element} references unknown bus {bus}")]
    UnknownBus { element: String, bus: BusId },
    #[error("unknown branch {0}")]
    UnknownBranch(BranchId),
    #[error("{element}: reactance must be positive, got {value}")]
    NonPositiveReactance { element: String, value: f64 },
    #[error("{element}: {reason}")]
    InvalidValue { element: String, reason: String },
    #[error("network is disconnected: bus {0} is not reachable")]
    Disconnected(BusId),
    #[error("split position {0} is outside [0, 1]")]
    SplitOutOfRange(f64),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid: {0}")]
    Grid(#[from] GridError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("singular {network} network matrix: {detail}")]
    Singular { network: String, detail: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("relay current {magnitude:.3e} p.u. is below the measurable floor")]
    NoMeasurableLoop { magnitude: f64 },
    #[error("DC link collapsed: vdc = {vdc:.4} p.u. fell below floor {floor:.4} p.u.")]
    DcLinkCollapse { vdc: f64, floor: f64 },
    #[error("run aborted at step {step} (t = {t:.4} s): {cause}")]
    RunAborted {
        step: usize,
        t: f64,
        #[source]
        cause: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Grid(_) | Error::Config(_) => 2,
            Error::Io { .. } => 4,
            Error::RunAborted { cause, .. } => cause.exit_code(),
            Error::NonFinite(_)
            | Error::Singular { .. }
            | Error::Numerical(_)
            | Error::NoMeasurableLoop { .. }
            | Error::DcLinkCollapse { .. } => 3,
        }
    }
}
