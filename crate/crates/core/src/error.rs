use std::fmt;

/// Coarse classification used by the command-line front end to pick an exit
/// code and a machine-readable error tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
    NoAdmissibleModel,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
            ErrorClass::NoAdmissibleModel => 5,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::Numerical => "numerical",
            ErrorClass::NoAdmissibleModel => "no_admissible_model",
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("empty panel: {0}")]
    EmptyPanel(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate decomposition: {0}")]
    DegenerateDecomposition(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular weighted system; offending columns: {}", .columns.join(", "))]
    SingularSystem { columns: Vec<String> },

    #[error("scale update failed: {0}")]
    ScaleUpdate(String),

    #[error("component {component} collapsed (mass {mass:e})")]
    DegenerateComponent { component: usize, mass: f64 },

    #[error("all {} starts failed: {}", .0.len(), .0.join("; "))]
    MultiStartFailed(Vec<String>),

    #[error("non-finite information entry for {0}")]
    NonFinite(String),

    #[error("information matrix is singular or indefinite ({0}); re-fit with tighter convergence or a smaller K")]
    Indefinite(String),

    #[error("no admissible fit in the K range: {}", .0.join("; "))]
    NoAdmissible(Vec<String>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::EmptyPanel(_)
            | Error::DegenerateDecomposition(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorClass::Data,
            Error::NoAdmissible(_) => ErrorClass::NoAdmissibleModel,
            Error::Domain(_)
            | Error::Dimension(_)
            | Error::SingularSystem { .. }
            | Error::ScaleUpdate(_)
            | Error::DegenerateComponent { .. }
            | Error::MultiStartFailed(_)
            | Error::NonFinite(_)
            | Error::Indefinite(_) => ErrorClass::Numerical,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
