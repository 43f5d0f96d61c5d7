//! Accuracy metrics.

use std::f64::consts::PI;

use distgp_core::GaussianPrediction;
use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("{predicted} predictions for {truth} targets")]
    DimensionMismatch { predicted: usize, truth: usize },
    #[error("{metric} is not finite at test point {index}")]
    NonFiniteMetric { metric: &'static str, index: usize },
}

fn check_len(predicted: usize, truth: usize) -> Result<(), MetricError> {
    if predicted != truth {
        return Err(MetricError::DimensionMismatch { predicted, truth });
    }
    Ok(())
}

pub fn rmse(pred: &DVector<f64>, truth: &DVector<f64>) -> Result<f64, MetricError> {
    check_len(pred.len(), truth.len())?;
    let mut sum = 0.0;
    for (i, (p, t)) in pred.iter().zip(truth.iter()).enumerate() {
        let e = (p - t) * (p - t);
        if !e.is_finite() {
            return Err(MetricError::NonFiniteMetric { metric: "rmse", index: i });
        }
        sum += e;
    }
    Ok((sum / pred.len().max(1) as f64).sqrt())
}

/// Mean negative log predictive density. With `add_noise` set, latent
/// predictions are widened by `noise_variance` before scoring; predictions
/// that already include the noise are scored as they are.
pub fn nlpd(
    pred: &GaussianPrediction,
    truth: &DVector<f64>,
    noise_variance: f64,
    add_noise: bool,
) -> Result<f64, MetricError> {
    check_len(pred.len(), truth.len())?;
    let var = if add_noise {
        pred.observation_variance(noise_variance)
    } else {
        pred.variance.clone()
    };
    let mut sum = 0.0;
    for i in 0..truth.len() {
        let r = truth[i] - pred.mean[i];
        let term = 0.5 * ((2.0 * PI * var[i]).ln() + r * r / var[i]);
        if !term.is_finite() {
            return Err(MetricError::NonFiniteMetric { metric: "nlpd", index: i });
        }
        sum += term;
    }
    Ok(sum / truth.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&dvector![1.0, 2.0], &dvector![1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&dvector![0.0, 0.0], &dvector![1.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(
            rmse(&dvector![0.0], &dvector![1.0, 1.0]),
            Err(MetricError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn nlpd_standard_normal() {
        let p = GaussianPrediction::new(dvector![0.0, 0.0], dvector![0.75, 0.75], false).unwrap();
        let v = nlpd(&p, &dvector![0.0, 0.0], 0.25, true).unwrap();
        assert!((v - 0.918939).abs() < 1e-6);
        let q = GaussianPrediction::new(dvector![0.0], dvector![1.0], true).unwrap();
        assert!((nlpd(&q, &dvector![0.0], 0.25, true).unwrap() - 0.918939).abs() < 1e-6);
    }

    #[test]
    fn zero_variance_is_not_finite() {
        let p = GaussianPrediction::new(dvector![0.0], dvector![0.0], false).unwrap();
        assert!(matches!(
            nlpd(&p, &dvector![1.0], 0.0, false),
            Err(MetricError::NonFiniteMetric { metric: "nlpd", index: 0 })
        ));
    }
}
