use bsl_linalg::LinalgError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("region has no grid support")]
    NoGridSupport,
    #[error("no avoiding corridor through seed")]
    NoCorridor,
    #[error("grid has {0} interior nodes, at least 4 are required")]
    TooFewNodes(usize),
    #[error("inconsistent boundary conditions at node ({i}, {j}): {reason}")]
    MixedBoundary { i: usize, j: usize, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("factorization broke down at shift {shift} after {attempts} attempts")]
    Factorization { shift: f64, attempts: usize },
    #[error("eigensolver did not converge: attained residual {residual:.3e}, tolerance {tol:.3e}")]
    NoConvergence { residual: f64, tol: f64 },
    #[error("operator of dimension {0} exceeds the dense oracle limit of 3000")]
    TooLarge(usize),
    #[error("zero vector")]
    ZeroVector,
    #[error("resonant shift: -s = {shift} lies within {gap:.3e} of the Dirichlet eigenvalue {eigenvalue}")]
    ResonantShift { shift: f64, eigenvalue: f64, gap: f64 },
    #[error("zero total mass")]
    ZeroMass,
    #[error("{0}")]
    RegionMissesBoundary(String),
    #[error("operation requires a periodic grid")]
    NotPeriodic,
    #[error("slice resolution too coarse: {0} points on an axis, at least 8 required")]
    CoarseSlice(usize),
    #[error("empty projector: {0}")]
    EmptyProjector(String),
    #[error("interior propagation only: {0}")]
    InteriorPropagation(String),
    #[error("tube covers whole domain")]
    TubeCoversDomain,
    #[error("symbol: {0}")]
    Symbol(String),
    #[error("config: {0}")]
    Config(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
