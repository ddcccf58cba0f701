use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// `backward` was called on a loss graph with nothing recorded.
    #[error("no recorded computation: {0}")]
    State(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate censoring weights: {0}")]
    DegenerateWeights(String),

    #[error("over-pruned network: {0}")]
    OverPruned(String),

    #[error("unfittable: {0}")]
    Unfittable(String),

    #[error("unsupported network shape: {0}")]
    UnsupportedShape(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("stratification failed: {0}")]
    Stratification(String),

    #[error("censoring calibration failed: {0}")]
    Calibration(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("model format: {0}")]
    Format(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn ensure_finite(x: f64, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{what} must be finite, got {x}")))
    }
}
