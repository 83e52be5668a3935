//! Synthetic Gaussian benchmark: predict the conditional expectation of
//! unobserved variables from a growing prefix of observed ones.

mod covariance;
mod dataset;
mod io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::NumericError;

pub use covariance::{conditional_expectation, gain_matrix, residual_variance, sample_covariance};
pub use dataset::{build_dataset, GaussDataset, Split};
pub use io::{load_dataset, save_dataset, sigma_path};

#[derive(Debug, Error)]
pub enum GaussError {
    #[error("invalid task spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("covariance generation failed after jitter escalation: {0}")]
    Generation(NumericError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("dataset file has a header but no samples")]
    MissingSamples,
    #[error("truncated dataset: header declares {expected} rows, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("covariance digest mismatch: header says {expected}, file hashes to {found}")]
    Digest { expected: String, found: String },
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
}

/// Shape of a Gaussian task. Observed variables come first in `Σ`, the
/// unobserved block follows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussTaskSpec {
    pub d_x: usize,
    pub d_y: usize,
    /// Observed variables revealed per timestep.
    pub chunk: usize,
    pub timesteps: usize,
    pub sparsity: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl GaussTaskSpec {
    /// 1320 variables, 40 steps of 30.
    pub fn full_scale() -> Self {
        Self {
            d_x: 1200,
            d_y: 120,
            chunk: 30,
            timesteps: 40,
            sparsity: 0.85,
            n_samples: 100_000,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        Self {
            d_x: 120,
            d_y: 12,
            chunk: 12,
            timesteps: 10,
            sparsity: 0.10,
            n_samples: 20_000,
            seed: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.d_x + self.d_y
    }

    pub fn validate(&self) -> Result<(), GaussError> {
        if self.chunk == 0 || self.timesteps == 0 || self.d_y == 0 {
            return Err(GaussError::Spec("chunk, timesteps and d_y must be positive".into()));
        }
        if self.d_x != self.chunk * self.timesteps {
            return Err(GaussError::Spec(format!(
                "d_x = {} but chunk x timesteps = {} x {} = {}",
                self.d_x,
                self.chunk,
                self.timesteps,
                self.chunk * self.timesteps
            )));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(GaussError::Spec(format!("sparsity must lie in [0, 1), got {}", self.sparsity)));
        }
        if self.n_samples == 0 {
            return Err(GaussError::Spec("n_samples must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(GaussTaskSpec::full_scale().validate().is_ok());
        assert!(GaussTaskSpec::desk().validate().is_ok());
        let bad = GaussTaskSpec {
            d_x: 100,
            chunk: 30,
            timesteps: 4,
            ..GaussTaskSpec::desk()
        };
        assert!(matches!(bad.validate(), Err(GaussError::Spec(_))));
        let dense = GaussTaskSpec {
            sparsity: 1.0,
            ..GaussTaskSpec::desk()
        };
        assert!(dense.validate().is_err());
    }
}
