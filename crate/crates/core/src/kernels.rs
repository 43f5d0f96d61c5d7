//! Stationary covariance functions with per-dimension lengthscales.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_mismatch, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    /// `σ_f² exp(-½ r²)`
    Rbf,
    /// `σ_f² (1 + √3 r) exp(-√3 r)`
    Matern32,
}

/// A kernel hyperparameter, differentiated with respect to its raw
/// (not log-transformed) value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HyperParam {
    Lengthscale(usize),
    SignalVariance,
    NoiseVariance,
}

impl std::fmt::Display for HyperParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HyperParam::Lengthscale(i) => write!(f, "lengthscale_{i}"),
            HyperParam::SignalVariance => f.write_str("signal_variance"),
            HyperParam::NoiseVariance => f.write_str("noise_variance"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    lengthscales: Vec<f64>,
    signal_variance: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lengthscales: Vec<f64>, signal_variance: f64) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::InvalidHyperparameters("at least one lengthscale is required".into()));
        }
        if let Some(l) = lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidHyperparameters(format!("lengthscale {l} is not positive")));
        }
        if !(signal_variance > 0.0 && signal_variance.is_finite()) {
            return Err(Error::InvalidHyperparameters(format!(
                "signal variance {signal_variance} is not positive"
            )));
        }
        Ok(KernelSpec {
            family,
            lengthscales,
            signal_variance,
        })
    }

    pub fn rbf(lengthscales: Vec<f64>, signal_variance: f64) -> Result<Self> {
        Self::new(KernelFamily::Rbf, lengthscales, signal_variance)
    }

    pub fn matern32(lengthscales: Vec<f64>, signal_variance: f64) -> Result<Self> {
        Self::new(KernelFamily::Matern32, lengthscales, signal_variance)
    }

    /// Isotropic helper: the same lengthscale in every one of `dim` dimensions.
    pub fn isotropic(family: KernelFamily, dim: usize, lengthscale: f64, signal_variance: f64) -> Result<Self> {
        Self::new(family, vec![lengthscale; dim], signal_variance)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Profile of the kernel as a function of the scaled squared distance.
    #[inline]
    fn profile(&self, r2: f64) -> f64 {
        match self.family {
            KernelFamily::Rbf => self.signal_variance * (-0.5 * r2).exp(),
            KernelFamily::Matern32 => {
                let s = (3.0 * r2).sqrt();
                self.signal_variance * (1.0 + s) * (-s).exp()
            }
        }
    }

    /// `k(a, b)` for two points given as slices.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.dim());
        debug_assert_eq!(b.len(), self.dim());
        let r2 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| {
                let t = (x - y) / l;
                t * t
            })
            .sum();
        self.profile(r2)
    }

    /// Points of `x` divided by the lengthscales, stored one point per column.
    fn scaled_columns(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut t = x.transpose();
        for (mut row, l) in t.row_iter_mut().zip(&self.lengthscales) {
            row /= *l;
        }
        t
    }

    fn check_dim(&self, x: &DMatrix<f64>, what: &str) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(dim_mismatch(format!(
                "{what} has {} columns but the kernel has {} lengthscales",
                x.ncols(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Cross-covariance matrix `[k(x_i, y_j)]` for row-wise point sets.
    pub fn matrix(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x, "left input")?;
        self.check_dim(y, "right input")?;
        let xs = self.scaled_columns(x);
        let ys = self.scaled_columns(y);
        let d = self.dim();
        let mut k = DMatrix::zeros(x.nrows(), y.nrows());
        for j in 0..y.nrows() {
            let yj = &ys.as_slice()[j * d..(j + 1) * d];
            for i in 0..x.nrows() {
                let xi = &xs.as_slice()[i * d..(i + 1) * d];
                let r2: f64 = xi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
                k[(i, j)] = self.profile(r2);
            }
        }
        Ok(k)
    }

    /// Symmetric `k(x, x)`; only the lower triangle is evaluated.
    pub fn gram(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x, "input")?;
        let xs = self.scaled_columns(x);
        let d = self.dim();
        let n = x.nrows();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            let xj = &xs.as_slice()[j * d..(j + 1) * d];
            k[(j, j)] = self.signal_variance;
            for i in j + 1..n {
                let xi = &xs.as_slice()[i * d..(i + 1) * d];
                let r2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
                let v = self.profile(r2);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    /// Prior variances `k(x_i, x_i)`.
    pub fn diag(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_element(x.nrows(), self.signal_variance)
    }

    /// `aᵀ k(x, y) b` without materializing the cross-covariance matrix.
    pub fn bilinear(&self, x: &DMatrix<f64>, a: &DVector<f64>, y: &DMatrix<f64>, b: &DVector<f64>) -> Result<f64> {
        self.check_dim(x, "left input")?;
        self.check_dim(y, "right input")?;
        if a.len() != x.nrows() || b.len() != y.nrows() {
            return Err(dim_mismatch("bilinear form weights do not match the point sets"));
        }
        let xs = self.scaled_columns(x);
        let ys = self.scaled_columns(y);
        let d = self.dim();
        let mut total = 0.0;
        for j in 0..y.nrows() {
            let yj = &ys.as_slice()[j * d..(j + 1) * d];
            let mut col = 0.0;
            for i in 0..x.nrows() {
                let xi = &xs.as_slice()[i * d..(i + 1) * d];
                let r2: f64 = xi.iter().zip(yj).map(|(p, q)| (p - q) * (p - q)).sum();
                col += a[i] * self.profile(r2);
            }
            total += col * b[j];
        }
        Ok(total)
    }

    /// Entrywise derivative of `k(x, y)` with respect to one raw hyperparameter.
    ///
    /// The noise-variance derivative refers to `K + σ_ε² I`: it is the identity
    /// when `x` and `y` are the same point set and zero otherwise. Matérn
    /// lengthscale derivatives are not provided.
    pub fn matrix_grad(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, param: HyperParam) -> Result<DMatrix<f64>> {
        self.check_dim(x, "left input")?;
        self.check_dim(y, "right input")?;
        match param {
            HyperParam::SignalVariance => Ok(self.matrix(x, y)? / self.signal_variance),
            HyperParam::NoiseVariance => {
                if x == y {
                    Ok(DMatrix::identity(x.nrows(), y.nrows()))
                } else {
                    Ok(DMatrix::zeros(x.nrows(), y.nrows()))
                }
            }
            HyperParam::Lengthscale(dim) => {
                if dim >= self.dim() {
                    return Err(Error::UnsupportedParam(format!(
                        "lengthscale {dim} of a {}-dimensional kernel",
                        self.dim()
                    )));
                }
                if self.family != KernelFamily::Rbf {
                    return Err(Error::UnsupportedParam(
                        "analytic Matérn 3/2 lengthscale gradient".into(),
                    ));
                }
                let l = self.lengthscales[dim];
                let mut k = self.matrix(x, y)?;
                for j in 0..y.nrows() {
                    for i in 0..x.nrows() {
                        let diff = x[(i, dim)] - y[(j, dim)];
                        k[(i, j)] *= diff * diff / (l * l * l);
                    }
                }
                Ok(k)
            }
        }
    }

    /// Copy with one raw hyperparameter replaced. The noise variance is not a
    /// kernel parameter and is rejected here.
    pub fn with_param(&self, param: HyperParam, value: f64) -> Result<Self> {
        let mut next = self.clone();
        match param {
            HyperParam::Lengthscale(i) if i < self.dim() => next.lengthscales[i] = value,
            HyperParam::SignalVariance => next.signal_variance = value,
            other => return Err(Error::UnsupportedParam(format!("{other} is not a kernel parameter"))),
        }
        KernelSpec::new(next.family, next.lengthscales, next.signal_variance)
    }
}

/// Kernel, noise variance and optional inducing inputs shared by a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    pub inducing_inputs: Option<DMatrix<f64>>,
}

impl Hyperparameters {
    pub fn new(kernel: KernelSpec, noise_variance: f64) -> Result<Self> {
        let hp = Hyperparameters {
            kernel,
            noise_variance,
            inducing_inputs: None,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn with_inducing(mut self, z: DMatrix<f64>) -> Result<Self> {
        self.inducing_inputs = Some(z);
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidHyperparameters(format!(
                "noise variance {} is not positive",
                self.noise_variance
            )));
        }
        if let Some(z) = &self.inducing_inputs {
            if z.nrows() == 0 {
                return Err(Error::InvalidHyperparameters("no inducing inputs".into()));
            }
            if z.ncols() != self.kernel.dim() {
                return Err(dim_mismatch(format!(
                    "inducing inputs have {} columns, kernel has {} lengthscales",
                    z.ncols(),
                    self.kernel.dim()
                )));
            }
        }
        Ok(())
    }

    /// Raw value of a hyperparameter.
    pub fn get(&self, param: HyperParam) -> Result<f64> {
        match param {
            HyperParam::Lengthscale(i) => self
                .kernel
                .lengthscales()
                .get(i)
                .copied()
                .ok_or_else(|| Error::UnsupportedParam(format!("lengthscale {i}"))),
            HyperParam::SignalVariance => Ok(self.kernel.signal_variance()),
            HyperParam::NoiseVariance => Ok(self.noise_variance),
        }
    }

    /// Copy with one raw hyperparameter replaced.
    pub fn with_param(&self, param: HyperParam, value: f64) -> Result<Self> {
        let mut next = self.clone();
        match param {
            HyperParam::NoiseVariance => next.noise_variance = value,
            other => next.kernel = self.kernel.with_param(other, value)?,
        }
        next.validate()?;
        Ok(next)
    }

    /// All scalar hyperparameters in a fixed order: lengthscales, signal
    /// variance, noise variance.
    pub fn params(&self) -> Vec<HyperParam> {
        let mut p: Vec<HyperParam> = (0..self.dim()).map(HyperParam::Lengthscale).collect();
        p.push(HyperParam::SignalVariance);
        p.push(HyperParam::NoiseVariance);
        p
    }
}
