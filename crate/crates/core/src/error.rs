//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("ik did not converge after {iterations} iterations (pos residual {pos_residual} m, rot residual {rot_residual} rad)")]
    NonConvergence {
        iterations: usize,
        pos_residual: f64,
        rot_residual: f64,
    },

    #[error("tilt angle {0} rad outside [0, pi/2)")]
    InvalidAngle(f64),

    #[error("no failure found below {a_hi} m/s^2 at theta {theta} rad")]
    DegenerateRig { theta: f64, a_hi: f64 },

    #[error("polynomial fit needs >= 5 distinct abscissae, got {0}")]
    RankDeficient(usize),

    #[error("cannot step an unsealed cup state (t = {0} s)")]
    StepOnBroken(f64),

    #[error("sample time {t} s outside [0, {duration}] s")]
    OutOfRange { t: f64, duration: f64 },

    #[error("empty trace")]
    EmptyTrace,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("qp infeasible: {0}")]
    Infeasible(String),

    #[error("iteration limit {0} reached")]
    MaxIterations(usize),

    #[error("problem infeasible at initial horizon H = {0}")]
    InfeasibleAtInit(usize),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("{0}")]
    Config(String),
}

impl Error {
    pub fn parse(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
