//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the support of a marginal distribution.
    #[error("domain error in component {component}: {message}")]
    Domain { component: usize, message: String },

    /// A kernel matrix could not be factorized even after the jitter ladder.
    #[error("ill-conditioned model: {0}")]
    IllConditioned(String),

    /// An argument violates a documented precondition.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A deterministic node produced a non-finite value.
    #[error("evaluation error at node '{node}': {message}")]
    Evaluation { node: String, message: String },

    /// A transformation returned a non-finite value at a sigma point.
    #[error("propagation error at sigma point {index}: non-finite value")]
    Propagation { index: usize },

    /// The limit-state gradient vanished during design-point search.
    #[error("singular gradient in design-point search at iteration {iteration}")]
    SingularGradient { iteration: usize },

    /// A scenario update failed while evaluating an acquisition function.
    #[error("scenario {index} failed: {source}")]
    Scenario {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("optimization error: {0}")]
    Optimization(String),

    #[error("degenerate estimate: {0}")]
    DegenerateEstimate(String),

    #[error("oracle failure: {0}")]
    Oracle(String),

    /// Snapshot version mismatch or checksum failure.
    #[error("snapshot error: {0}")]
    Snapshot(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}
