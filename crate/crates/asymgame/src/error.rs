use std::fmt;

/// One failed invariant of a [`GameSpec`](crate::game_model::GameSpec).
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub location: String,
    pub constraint: &'static str,
    pub observed: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} (observed {})", self.location, self.constraint, self.observed)
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid game spec: {}", join_violations(.0))]
    InvalidSpec(Vec<Violation>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("linear program failed: {0}")]
    Lp(String),
    #[error("matrix game certificate failed: duality gap {gap:e} exceeds {tol:e}")]
    Certificate { gap: f64, tol: f64 },
    #[error("point {0:?} is not in the simplex")]
    OffSimplex(Vec<f64>),
    #[error("grid with {count} points exceeds the cap of {cap}")]
    GridTooLarge { count: u128, cap: usize },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("grid point is not exposed (margin {0:e})")]
    NotExposed(f64),
    #[error("belief left the simplex by {0:e}")]
    BeliefDrift(f64),
    #[error("information boundary violated: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
