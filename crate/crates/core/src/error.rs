use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("degenerate channel: gain {0} is not positive")]
    DegenerateChannel(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(
        "forward cache is stale: computed for parameter version {cached}, model is at {current}"
    )]
    StaleCache { cached: u64, current: u64 },

    /// Non-finite loss or gradient. `dump` holds the model checkpoints at the
    /// point of failure when the trainer could serialize them.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged {
        epoch: usize,
        detail: String,
        dump: Option<String>,
    },

    #[error("integration did not reach tolerance {tol:e} after {levels} refinements")]
    Integration { tol: f64, levels: usize },

    #[error("infeasible performance target {eta} (must be below alpha = {alpha})")]
    InfeasibleTarget { eta: f64, alpha: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidInput(format!(
            "{what}: entry {i} is not finite ({})",
            values[i]
        ))),
        None => Ok(()),
    }
}
