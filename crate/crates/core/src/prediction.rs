//! Gaussian predictive distributions.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{dim_mismatch, Error, Result};

/// Clamped negative variances above this fraction of test points fail
/// [`GaussianPrediction::validate`].
pub const MAX_CLAMPED_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrediction {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    pub covariance: Option<DMatrix<f64>>,
    /// Whether `variance` already contains the observation noise.
    pub includes_noise: bool,
    /// Number of variances that came out negative and were set to zero.
    pub clamped: usize,
    /// Number of test points where a fused precision was not positive and
    /// the prior precision was used instead.
    pub degenerate: usize,
}

impl GaussianPrediction {
    /// Builds a prediction, clamping negative variances at zero.
    pub fn new(mean: DVector<f64>, mut variance: DVector<f64>, includes_noise: bool) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(dim_mismatch(format!(
                "{} means but {} variances",
                mean.len(),
                variance.len()
            )));
        }
        let clamped = clamp_nonnegative(&mut variance);
        if clamped > 0 {
            warn!("clamped {clamped} negative predictive variances to zero");
        }
        Ok(GaussianPrediction {
            mean,
            variance,
            covariance: None,
            includes_noise,
            clamped,
            degenerate: 0,
        })
    }

    pub fn empty() -> Self {
        GaussianPrediction {
            mean: DVector::zeros(0),
            variance: DVector::zeros(0),
            covariance: None,
            includes_noise: false,
            clamped: 0,
            degenerate: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Fails when too many variances had to be clamped.
    pub fn validate(&self) -> Result<()> {
        if self.clamped as f64 > MAX_CLAMPED_FRACTION * self.len() as f64 {
            return Err(Error::ExcessiveClamping {
                clamped: self.clamped,
                total: self.len(),
            });
        }
        Ok(())
    }

    /// Variance of a noisy observation at each test point.
    pub fn observation_variance(&self, noise_variance: f64) -> DVector<f64> {
        if self.includes_noise {
            self.variance.clone()
        } else {
            self.variance.add_scalar(noise_variance)
        }
    }
}

pub(crate) fn clamp_nonnegative(v: &mut DVector<f64>) -> usize {
    let mut count = 0;
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
            count += 1;
        }
    }
    count
}
