use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Fock space: {0}")]
    InvalidSpace(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("truncation: {0}")]
    Truncation(String),
    #[error("ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("eigensolver: {0}")]
    Eigensolver(String),
    #[error("manifold {manifold}: well-state phase is ambiguous (coupling {coupling:e})")]
    PhaseAmbiguous { manifold: usize, coupling: f64 },
    #[error("eigenvector pairing: {0}")]
    Pairing(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("division by zero: {0}")]
    Division(String),
    #[error("invalid variant: {0}")]
    InvalidVariant(String),
    #[error("size limit: {0}")]
    SizeLimit(String),
    #[error("no real eigenvalue: {0}")]
    NoRealEigenvalue(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("outside domain: {0}")]
    Domain(String),
    #[error("no bracket: {0}")]
    NoBracket(String),
    #[error("root not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
