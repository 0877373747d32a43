use std::path::PathBuf;

/// Errors raised across the library. Variants map onto the CLI exit codes
/// through [`Error::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("kernel evaluated at the origin")]
    Singularity,

    #[error("particles {i} and {j} collide")]
    Collision { i: usize, j: usize },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("out of regime: {0}")]
    OutOfRegime(String),

    #[error("integrator failure at t = {t}: {reason}")]
    Integrator { t: f64, reason: String },

    #[error("CFL violation: dt must be at most {required_dt}")]
    Cfl { required_dt: f64 },

    #[error("shock detected at t = {t}: minimal Jacobian ratio {min_jacobian}")]
    Shock { t: f64, min_jacobian: f64 },

    #[error("query point outside the padded box")]
    Extrapolation,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("schema error in {file} line {line}: {message}")]
    Schema {
        file: PathBuf,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidSpec(message.into())
    }

    /// 2 for configuration problems, 3 for everything raised at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidSpec(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
