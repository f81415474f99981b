use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration is inconsistent or incomplete.
    #[error("configuration error: {0}")]
    Config(String),

    /// Random scenario generation could not satisfy its constraints.
    #[error("scene generation failed after {attempts} attempts: {reason}")]
    Generation { attempts: usize, reason: String },

    /// The channel matrix is numerically rank deficient.
    #[error("precoding error: channel matrix is rank deficient (smallest/largest singular value {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    /// Receiver-side metadata is missing or inconsistent.
    #[error("detection error: {0}")]
    Detection(String),

    /// A Monte-Carlo trial failed.
    #[error("trial {trial} (master seed {seed}) failed: {source}")]
    Trial {
        trial: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
