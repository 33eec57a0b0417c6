use thiserror::Error;

/// Errors raised by the simulator.
///
/// Every variant maps to a configuration problem: protocol-level failures
/// such as a detected cheat are ordinary results, not errors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("site index {site} out of range for {sites} sites")]
    SiteOutOfRange { site: usize, sites: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("state too large: total dimension {dim} exceeds {limit}")]
    TooLarge { dim: usize, limit: usize },

    #[error("corrupt input{}: {detail}", join_lines(.lines))]
    Corrupt { lines: Vec<usize>, detail: String },

    #[error("i/o error: {0}")]
    Io(String),
}

fn join_lines(lines: &[usize]) -> String {
    if lines.is_empty() {
        return String::new();
    }
    format!(
        " at line(s) {}",
        lines
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    )
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
