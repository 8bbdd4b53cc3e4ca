use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("SVD did not converge after {sweeps} sweeps on a {rows}x{cols} matrix")]
    SvdNoConvergence {
        rows: usize,
        cols: usize,
        sweeps: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integration produced a non-finite state at step {step} (t = {time})")]
    NonFiniteState { step: usize, time: f64 },

    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("ensemble member {member} failed: {source}")]
    EnsembleMember {
        member: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no sign change of Re(lambda) over mu in [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },

    #[error("AUROC needs both classes, got {positives} positive and {negatives} negative labels")]
    SingleClass { positives: usize, negatives: usize },

    #[error("CSV error at row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
