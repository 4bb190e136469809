use thiserror::Error;

/// Errors raised while building or analysing a delayed consensus problem.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid delay bounds: {0}")]
    Bounds(String),

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("simulation diverged at t = {time}")]
    Diverged { time: f64 },

    #[error("search failed: {0}")]
    Search(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
