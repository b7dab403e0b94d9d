use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants fall into two groups: input errors (bad model data, bad
/// arguments) and numeric failures (degenerate filters, non-convergent
/// series, failed refinements). [`Error::is_input_error`] tells them apart.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported: {0}")]
    Capability(String),

    #[error("hidden block does not leave: spectral radius {spectral_radius} of the integrated hidden kernel is not below 1")]
    NonConvergentSeries { spectral_radius: f64 },

    #[error("unstable pole {re}{im:+}i with nonzero residue")]
    UnstablePole { re: f64, im: f64 },

    #[error("structural: {0}")]
    Structural(String),

    #[error("filter degeneracy at mark {mark} after waiting {waiting}: posterior weight vanished")]
    FilterDegeneracy { mark: String, waiting: f64 },

    #[error("survival mass vanished at v = {at}")]
    VanishingSurvival { at: f64 },

    #[error("grid refinement failed: |r(h) - r(h/2)| = {discrepancy} exceeds {tolerance}")]
    Refinement { discrepancy: f64, tolerance: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("monte carlo run failed: {0}")]
    MonteCarlo(String),
}

impl Error {
    /// True for errors caused by the caller's data rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::InvalidInput(_) | Error::Capability(_) | Error::Structural(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
