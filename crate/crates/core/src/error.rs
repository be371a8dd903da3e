use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite state {value} on path {path} at node {node}")]
    NonFinite {
        path: usize,
        node: usize,
        value: f64,
    },

    #[error("design matrix is rank deficient (condition {condition:.3e}); use ridge > 0")]
    RankDeficient { condition: f64 },

    #[error("regression needs more paths than features ({paths} paths, {features} features)")]
    TooFewPaths { paths: usize, features: usize },

    #[error("Picard iteration did not converge in {} iterations (last residual {:.3e})", .residuals.len(), .residuals.last().copied().unwrap_or(f64::NAN))]
    PicardNonConvergence { residuals: Vec<f64> },

    #[error(
        "fixed-point sweep did not converge in {sweeps} sweeps (last update {last_update:.3e})"
    )]
    SweepNonConvergence {
        sweeps: usize,
        last_update: f64,
        trace: Box<crate::skorohod::FixedPointTrace>,
    },

    #[error("Z extraction needs a Brownian-only filtration; noise bundle carries jump marks")]
    UnsupportedFiltration,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("inadmissible control variation: {0}")]
    Inadmissible(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
