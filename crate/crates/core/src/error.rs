use thiserror::Error;

pub type Result<T, E = FptError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FptError {
    #[error("invalid grid function: {0}")]
    InvalidGrid(String),

    #[error("cannot coarsen from level {from} to level {to}")]
    Coarsen { from: u32, to: u32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("point kind mismatch: {0}")]
    PointMismatch(String),

    #[error("point outside the domain at iterate {iterate}: {reason}")]
    DomainViolation { iterate: usize, reason: String },

    #[error("coordinate truncation exhausted: mass would leave slot {slot}")]
    Truncation { slot: usize },

    #[error("all sampled pairs were degenerate")]
    DegeneratePairs,

    #[error("sequence is not null in measure (Ky Fan tail {ky_fan:.3e} > {tol:.1e})")]
    NotNullInMeasure { ky_fan: f64, tol: f64 },

    #[error("no Ky Fan cluster of size >= {min_size} within {tol:.1e}; extend the sequence")]
    NoCluster { tol: f64, min_size: usize },

    #[error("sequence not bounded: norm {norm} exceeds {bound}")]
    Unbounded { norm: f64, bound: f64 },

    #[error("unknown space tag '{0}'")]
    UnknownSpace(String),

    #[error("operator is not affine: combination defect {defect:.3e} exceeds {tol:.1e}")]
    NotAffine { defect: f64, tol: f64 },

    #[error("no admissible eps: S(T) = {s} is not below (1+r)/t(C) = {threshold}")]
    NoAdmissibleEps { s: f64, threshold: f64 },

    #[error(
        "theorem hypothesis violated or estimates too loose: \
         limsup|x - x_n| = {x_branch:.6e}, limsup|z - z_p| = {z_branch:.6e}, rho = {rho:.6e}"
    )]
    NeitherBranch { x_branch: f64, z_branch: f64, rho: f64 },

    #[error("application budget of {max} exhausted")]
    Budget { max: usize },

    #[error("step certificate failed: {0}")]
    Certificate(String),

    #[error("unknown body or missing closed form: {0}")]
    UnknownBody(String),

    #[error("{quantity}: {source}")]
    Row { quantity: String, source: Box<FptError> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
