//! Exact Gaussian-process regression with a zero prior mean.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{dim_mismatch, Result};
use crate::kernels::{HyperParam, Hyperparameters};
use crate::numerics::{self, SpdFactor};
use crate::prediction::GaussianPrediction;

/// An exact GP conditioned on a training set. Immutable once fitted; refit
/// with [`ExactGp::with_hyperparameters`] to change hyperparameters.
#[derive(Debug, Clone)]
pub struct ExactGp {
    hp: Hyperparameters,
    data: Dataset,
    factor: SpdFactor,
    alpha: DVector<f64>,
}

impl ExactGp {
    pub fn fit(hp: &Hyperparameters, data: &Dataset) -> Result<Self> {
        hp.validate()?;
        if data.dim() != hp.dim() {
            return Err(dim_mismatch(format!(
                "data has dimension {} but the kernel expects {}",
                data.dim(),
                hp.dim()
            )));
        }
        let mut k = hp.kernel.gram(&data.x)?;
        for i in 0..k.nrows() {
            k[(i, i)] += hp.noise_variance;
        }
        let factor = numerics::cholesky_jittered(&k, numerics::default_jitter(&k))?;
        let alpha = factor.solve_vec(&data.y)?;
        Ok(ExactGp {
            hp: hp.clone(),
            data: data.clone(),
            factor,
            alpha,
        })
    }

    pub fn with_hyperparameters(&self, hp: &Hyperparameters) -> Result<Self> {
        ExactGp::fit(hp, &self.data)
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// Cholesky factor of `K + σ_ε² I`.
    pub fn factor(&self) -> &SpdFactor {
        &self.factor
    }

    /// `(K + σ_ε² I)⁻¹ y`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    fn cross(&self, xs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if xs.ncols() != self.hp.dim() {
            return Err(dim_mismatch(format!(
                "test inputs have {} columns, expected {}",
                xs.ncols(),
                self.hp.dim()
            )));
        }
        self.hp.kernel.matrix(&self.data.x, xs)
    }

    /// Posterior mean `K_*f α` and the explained variance
    /// `K_*f (K + σ_ε² I)⁻¹ K_f*` at each test point.
    pub fn mean_and_explained(&self, xs: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let kfs = self.cross(xs)?;
        let mean = kfs.tr_mul(&self.alpha);
        let v = self.factor.forward(&kfs)?;
        let explained = DVector::from_iterator(v.ncols(), v.column_iter().map(|c| c.norm_squared()));
        Ok((mean, explained))
    }

    /// Latent posterior at `xs`; the full covariance is attached when asked.
    pub fn posterior(&self, xs: &DMatrix<f64>, full_cov: bool) -> Result<GaussianPrediction> {
        let kfs = self.cross(xs)?;
        let mean = kfs.tr_mul(&self.alpha);
        let v = self.factor.forward(&kfs)?;
        let prior = self.hp.kernel.diag(xs);
        let variance = DVector::from_iterator(
            v.ncols(),
            v.column_iter().zip(prior.iter()).map(|(c, p)| p - c.norm_squared()),
        );
        let mut pred = GaussianPrediction::new(mean, variance, false)?;
        if full_cov {
            let mut cov = self.hp.kernel.gram(xs)? - v.transpose() * &v;
            for i in 0..cov.nrows() {
                cov[(i, i)] = pred.variance[i];
            }
            pred.covariance = Some(cov);
        }
        Ok(pred)
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.data.len() as f64;
        -0.5 * (self.data.y.dot(&self.alpha) + self.factor.log_det() + n * (2.0 * std::f64::consts::PI).ln())
    }

    pub fn lml_gradient(&self, param: HyperParam) -> Result<f64> {
        Ok(self.lml_gradients(&[param])?[0])
    }

    /// Derivatives of the log marginal likelihood with respect to raw
    /// hyperparameters, sharing one inverse across all of them.
    pub fn lml_gradients(&self, params: &[HyperParam]) -> Result<Vec<f64>> {
        let kinv = self.factor.inverse();
        params
            .iter()
            .map(|&p| {
                let dk = self.hp.kernel.matrix_grad(&self.data.x, &self.data.x, p)?;
                let quad = self.alpha.dot(&(&dk * &self.alpha));
                let trace = kinv.component_mul(&dk).sum();
                Ok(0.5 * quad - 0.5 * trace)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use nalgebra::{dmatrix, dvector};

    fn unit_hp() -> Hyperparameters {
        Hyperparameters::new(KernelSpec::rbf(vec![1.0], 1.0).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn single_point_posterior() {
        let data = Dataset::new(dmatrix![0.0], dvector![1.0]).unwrap();
        let gp = ExactGp::fit(&unit_hp(), &data).unwrap();
        let p = gp.posterior(&dmatrix![0.0], true).unwrap();
        assert!((p.mean[0] - 0.5).abs() < 1e-15);
        assert!((p.variance[0] - 0.5).abs() < 1e-15);
        assert!((p.covariance.unwrap()[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_point_lml() {
        let data = Dataset::new(dmatrix![0.0], dvector![0.0]).unwrap();
        let gp = ExactGp::fit(&unit_hp(), &data).unwrap();
        let expected = -0.5 * (2f64.ln() + (2.0 * std::f64::consts::PI).ln());
        assert!((gp.log_marginal_likelihood() - expected).abs() < 1e-14);
        assert!((gp.log_marginal_likelihood() + 1.26551).abs() < 1e-5);
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let data = Dataset::new(dmatrix![0.0; 0.5; 1.0], dvector![1.0, -2.0, 0.5]).unwrap();
        let gp = ExactGp::fit(&unit_hp(), &data).unwrap();
        let p = gp.posterior(&dmatrix![100.0], false).unwrap();
        assert!(p.mean[0].abs() <= 1e-6 * 2.0);
        assert!((p.variance[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_test_set() {
        let data = Dataset::new(dmatrix![0.0], dvector![1.0]).unwrap();
        let gp = ExactGp::fit(&unit_hp(), &data).unwrap();
        assert!(gp.posterior(&DMatrix::zeros(0, 1), false).unwrap().is_empty());
        assert!(gp.posterior(&DMatrix::zeros(2, 2), false).is_err());
    }

    #[test]
    fn noise_gradient_with_zero_targets() {
        let x = dmatrix![0.0; 0.3; 0.9];
        let data = Dataset::new(x, DVector::zeros(3)).unwrap();
        let gp = ExactGp::fit(&unit_hp(), &data).unwrap();
        let g = gp.lml_gradient(HyperParam::NoiseVariance).unwrap();
        assert!((g + 0.5 * gp.factor().inverse().trace()).abs() < 1e-14);
    }
}
