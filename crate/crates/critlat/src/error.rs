use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension {0} unsupported (need 2..=8)")]
    Dimension(usize),
    #[error("operation requires d >= {need}, got d = {got}")]
    DimensionTooLow { need: usize, got: usize },
    #[error("boundary of an infinite or oversized region (~{estimate} sites, budget {budget})")]
    RegionTooLarge { estimate: u64, budget: u64 },
    #[error("step cap {cap} exceeded before exit ({partial_len} steps taken)")]
    CapExceeded { cap: u64, partial_len: usize },
    #[error("exact mode infeasible: {sites} interior sites exceeds budget {budget}; use the Monte Carlo mode")]
    ExactModeBudget { sites: u64, budget: u64 },
    #[error("point {0} outside the required region")]
    OutsideRegion(String),
    #[error("origin lies in the killing set")]
    OriginInKillingSet,
    #[error("free bi-harmonic Green function diverges for d = 4")]
    G2FreeDivergent,
    #[error("d = 4 covariance kernel requires a mean-zero test function")]
    NotMeanZero,
    #[error("graph too large for exact enumeration ({vertices} vertices, cap {cap})")]
    EnumerationCap { vertices: usize, cap: usize },
    #[error("rejection sampler exhausted {attempts} attempts ({accepted} accepted)")]
    AttemptsExhausted { attempts: u64, accepted: u64 },
    #[error("capacity fit radii must lie outside C_{{n+1}}")]
    FitRadiiInside,
    #[error("lattice budget exceeded: {0}")]
    LatticeBudget(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
