use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("derivative condition fails at (j={j}, k={k}, x={x:e}, theta={theta})")]
    AuditFailed { j: usize, k: usize, x: f64, theta: f64 },
    #[error("symbol class audit failed for {what} at (x={x}, xi={xi}, eta={eta})")]
    SymbolAuditFailed { what: String, x: f64, xi: f64, eta: f64 },
    #[error("surface has not passed the derivative audit")]
    AuditRequired,
    #[error("symbol is not finite on the dual lattice at (xi={xi}, eta={eta})")]
    NonFiniteSymbol { xi: f64, eta: f64 },
    #[error("dense realization of dimension {dim} exceeds the cap {cap}")]
    GridTooLarge { dim: usize, cap: usize },
    #[error("derivative order {requested} unavailable (max {available})")]
    OrderUnavailable { requested: usize, available: usize },
    #[error("cutoff resolution too coarse: {0}")]
    ResolutionTooCoarse(String),
    #[error("Krylov breakdown at t={t}: {detail}")]
    KrylovBreakdown { t: f64, detail: String },
    #[error("norm drift {drift:e} exceeds tolerance at t={t}")]
    UnitarityLost { t: f64, drift: f64 },
    #[error("boundary mass {mass:e} exceeds tolerance at t={t}")]
    BoundaryMassExceeded { t: f64, mass: f64 },
    #[error("oscillator domain too small: turning point {turning} vs half-width {half_width}")]
    DomainTooSmall { turning: f64, half_width: f64 },
    #[error("eigenvalues not converged under refinement (relative change {change:e})")]
    NotConverged { change: f64 },
    #[error("scan region {0} has no sample points")]
    EmptyRegion(String),
    #[error("subspace dimension {dim} below minimum {min}")]
    SubspaceTooSmall { dim: usize, min: usize },
    #[error("Gram matrix ill-conditioned (condition {cond:e})")]
    IllConditionedGram { cond: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
