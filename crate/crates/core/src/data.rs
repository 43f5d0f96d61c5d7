//! Training data containers.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim_mismatch, Error, Result};
use crate::kernels::Hyperparameters;
use crate::numerics;

/// Inputs stored one point per row, with one target per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(dim_mismatch(format!("{} inputs but {} targets", x.nrows(), y.len())));
        }
        Ok(Dataset { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::IndexOutOfRange(format!("row {bad} of {}", self.len())));
        }
        Ok(Dataset {
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
        })
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim() != other.dim() {
            return Err(dim_mismatch("cannot concatenate datasets of different dimension"));
        }
        let n = self.len() + other.len();
        let mut x = DMatrix::zeros(n, self.dim());
        x.rows_mut(0, self.len()).copy_from(&self.x);
        x.rows_mut(self.len(), other.len()).copy_from(&other.x);
        let mut y = DVector::zeros(n);
        y.rows_mut(0, self.len()).copy_from(&self.y);
        y.rows_mut(self.len(), other.len()).copy_from(&other.y);
        Ok(Dataset { x, y })
    }
}

/// Draws noisy targets `y ~ N(0, K + σ_ε² I)` at the given inputs.
pub fn sample_gp_prior(hp: &Hyperparameters, x: &DMatrix<f64>, seed: u64) -> Result<DVector<f64>> {
    let mut k = hp.kernel.gram(x)?;
    for i in 0..k.nrows() {
        k[(i, i)] += hp.noise_variance;
    }
    let factor = numerics::cholesky_jittered(&k, numerics::default_jitter(&k))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_fn(x.nrows(), |_, _| StandardNormal.sample(&mut rng));
    Ok(factor.lower() * z)
}
