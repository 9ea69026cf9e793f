use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid geometry or mesh construction request.
    #[error("geometry: {0}")]
    Geometry(String),

    /// Structural inconsistency in a mesh (dangling node references and the like).
    #[error("mesh structure: {0}")]
    Structure(String),

    /// Interaction integral cannot be evaluated.
    #[error("singular kernel between cells {a} and {b}: {reason}")]
    SingularKernel { a: usize, b: usize, reason: String },

    #[error("invalid material: {0}")]
    Material(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// LU factorization broke down.
    #[error("singular matrix ({context}); pivot ratio min/max |u_ii| = {pivot_ratio:.3e}")]
    Singular { context: String, pivot_ratio: f64 },

    #[error("solve residual {residual:.3e} exceeds {limit:.1e} ({context})")]
    Residual {
        context: String,
        residual: f64,
        limit: f64,
    },

    /// Reciprocity check of an extracted impedance matrix failed.
    #[error("non-reciprocal impedance matrix: relative asymmetry {0:.3e}")]
    NonReciprocal(f64),

    #[error("degenerate network: {0}")]
    Degenerate(String),

    /// Sherman-Morrison denominator too small; the caller should re-factorize.
    #[error("rank-1 update refused at load {index}: |1 + delta*m| = {denominator:.3e}")]
    RefactorNeeded { index: usize, denominator: f64 },

    #[error("optimizer: {0}")]
    Optimizer(String),

    /// Configuration error, always naming the offending key path.
    #[error("{key}: {message}")]
    Config { key: String, message: String },

    #[error("{path}: {message}")]
    Input { path: String, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 for configuration/input problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Config { .. } | Error::Input { .. } | Error::Io(_) | Error::Csv(_) => 2,
            Error::Geometry(_) | Error::Material(_) => 2,
            _ => 3,
        }
    }
}
