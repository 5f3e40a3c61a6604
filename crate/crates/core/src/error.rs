use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape: {0}")]
    InputShape(String),

    #[error("parameter out of range: {0}")]
    Parameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("germ is not coherent: measured defect exponent a = {measured:.4} (need a > 1)")]
    Coherence { measured: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("ellipticity violated at node {node}, time index {time}: eigenvalue {eigenvalue:.6e} outside [{lower:.6e}, {upper:.6e}]")]
    Ellipticity {
        node: usize,
        time: usize,
        eigenvalue: f64,
        lower: f64,
        upper: f64,
    },

    #[error("memory guard: {0}")]
    MemoryGuard(String),

    #[error("resolution mismatch: {0}")]
    Resolution(String),

    #[error("channel count mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("step-size guard violated on interval {interval}: amplification {amplification:.4} > {threshold}; refine the time grid by a factor of at least {suggested_refinement}")]
    StepSize {
        interval: usize,
        amplification: f64,
        threshold: f64,
        suggested_refinement: usize,
    },

    #[error("driver is not geometric; rerun with allow-nongeometric to accept it")]
    Geometricity,

    #[error("function is not admissible: {0}")]
    Admissibility(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("expression `{expr}`: {msg}")]
    Expression { expr: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Geometricity | Error::Admissibility(_) => 3,
            Error::StepSize { .. }
            | Error::Solve(_)
            | Error::Coherence { .. }
            | Error::MemoryGuard(_) => 4,
            _ => 2,
        }
    }
}
