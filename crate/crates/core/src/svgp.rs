//! Sparse variational GP regression with the collapsed (optimal) variational
//! distribution over inducing variables.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{dim_mismatch, Error, Result};
use crate::kernels::{HyperParam, Hyperparameters, KernelSpec};
use crate::numerics::{self, SpdFactor};
use crate::prediction::GaussianPrediction;
use crate::trace::{note, ShapeTrace};

/// Cached quantities for one set of inducing inputs conditioned on data.
///
/// `M = K_uu + σ_ε⁻² K_uf K_fu` is factored as `(L_uu L_B)(L_uu L_B)ᵀ` with
/// `B = I + A Aᵀ`, `A = L_uu⁻¹ K_uf / σ_ε`, so no `n × n` matrix is formed.
#[derive(Debug, Clone)]
pub(crate) struct InducingFit {
    pub(crate) z: DMatrix<f64>,
    pub(crate) kuu: DMatrix<f64>,
    pub(crate) l_uu: SpdFactor,
    pub(crate) l_b: SpdFactor,
    /// `M⁻¹ K_uf y`.
    pub(crate) alpha: DVector<f64>,
    /// `K_fu α` at the training inputs.
    pub(crate) fitted: DVector<f64>,
    pub(crate) elbo: f64,
    pub(crate) noise_variance: f64,
}

impl InducingFit {
    pub(crate) fn new(
        kernel: &KernelSpec,
        noise_variance: f64,
        z: &DMatrix<f64>,
        data: &Dataset,
        trace: Option<&ShapeTrace>,
    ) -> Result<Self> {
        let kuu = kernel.gram(z)?;
        note(trace, "inducing_gram", &kuu);
        let l_uu = numerics::cholesky_jittered(&kuu, numerics::default_jitter(&kuu))?;
        let kuf = kernel.matrix(z, &data.x)?;
        note(trace, "cross_kernel", &kuf);
        let sigma = noise_variance.sqrt();
        let mut a = l_uu.forward(&kuf)?;
        a /= sigma;
        let at = a.transpose();
        note(trace, "cross_kernel_transpose", &at);
        let mut b = &a * at;
        note(trace, "inducing_system", &b);
        for i in 0..b.nrows() {
            b[(i, i)] += 1.0;
        }
        let l_b = numerics::cholesky(&b)?;

        let ay = &a * &data.y;
        let w = l_b.forward_vec(&ay)?;
        // α = M⁻¹ K_uf y = L_uu⁻ᵀ L_B⁻ᵀ L_B⁻¹ A y σ
        let mut alpha = l_b.backward(&DMatrix::from_column_slice(w.len(), 1, w.as_slice()))?;
        alpha = l_uu.backward(&alpha)?;
        let alpha = DVector::from_column_slice(alpha.as_slice()) * sigma;
        let fitted = kuf.tr_mul(&alpha);

        let n = data.len() as f64;
        let quad = (data.y.norm_squared() - w.norm_squared()) / noise_variance;
        let trace = (n * kernel.signal_variance() - noise_variance * a.norm_squared()) / noise_variance;
        let elbo = -0.5
            * (n * (2.0 * std::f64::consts::PI).ln() + n * noise_variance.ln() + l_b.log_det() + quad + trace);

        Ok(InducingFit {
            z: z.clone(),
            kuu,
            l_uu,
            l_b,
            alpha,
            fitted,
            elbo,
            noise_variance,
        })
    }

    /// Cholesky factor of `M` (up to the jitter added to `K_uu`).
    pub(crate) fn m_factor(&self) -> SpdFactor {
        SpdFactor::from_lower(self.l_uu.lower() * self.l_b.lower(), self.l_uu.jitter_applied())
    }

    pub(crate) fn cross(&self, kernel: &KernelSpec, xs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if xs.ncols() != self.z.ncols() {
            return Err(dim_mismatch(format!(
                "test inputs have {} columns, expected {}",
                xs.ncols(),
                self.z.ncols()
            )));
        }
        kernel.matrix(&self.z, xs)
    }

    /// Predictive mean `σ_ε⁻² K_*u α` given `K_u*`.
    pub(crate) fn mean_from_cross(&self, kus: &DMatrix<f64>) -> DVector<f64> {
        kus.tr_mul(&self.alpha) / self.noise_variance
    }

    /// Per-point `K_*u K_uu⁻¹ K_u*` and `K_*u M⁻¹ K_u*`.
    pub(crate) fn quadratic_terms(
        &self,
        kus: &DMatrix<f64>,
        trace: Option<&ShapeTrace>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let w = self.l_uu.forward(kus)?;
        note(trace, "whitened_test_cross", &w);
        let v = self.l_b.forward(&w)?;
        note(trace, "whitened_test_cross", &v);
        let prior = DVector::from_iterator(w.ncols(), w.column_iter().map(|c| c.norm_squared()));
        let explained = DVector::from_iterator(v.ncols(), v.column_iter().map(|c| c.norm_squared()));
        Ok((prior, explained))
    }

    pub(crate) fn predict(&self, kernel: &KernelSpec, xs: &DMatrix<f64>) -> Result<GaussianPrediction> {
        let kus = self.cross(kernel, xs)?;
        let mean = self.mean_from_cross(&kus);
        let (q, e) = self.quadratic_terms(&kus, None)?;
        let variance = kernel.diag(xs) - q + e;
        GaussianPrediction::new(mean, variance, false)
    }
}

/// How to place inducing inputs when none are supplied.
#[derive(Debug, Clone, PartialEq)]
pub enum InducingInit {
    /// `m` distinct training inputs chosen uniformly at random.
    RandomSubset { m: usize, seed: u64 },
    /// `m` points drawn uniformly from an axis-aligned box.
    UniformBox { m: usize, bounds: Vec<(f64, f64)>, seed: u64 },
}

impl InducingInit {
    pub fn generate(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            InducingInit::RandomSubset { m, seed } => {
                if *m == 0 || *m > x.nrows() {
                    return Err(Error::InvalidConfig(format!(
                        "cannot choose {m} inducing inputs from {} points",
                        x.nrows()
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut idx = sample(&mut rng, x.nrows(), *m).into_vec();
                idx.sort_unstable();
                Ok(x.select_rows(&idx))
            }
            InducingInit::UniformBox { m, bounds, seed } => {
                if *m == 0 {
                    return Err(Error::InvalidConfig("zero inducing inputs".into()));
                }
                if bounds.len() != x.ncols() {
                    return Err(dim_mismatch("inducing box dimension differs from the data"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut z = DMatrix::zeros(*m, bounds.len());
                for i in 0..*m {
                    for (j, (lo, hi)) in bounds.iter().enumerate() {
                        z[(i, j)] = rng.random_range(*lo..*hi);
                    }
                }
                Ok(z)
            }
        }
    }
}

/// A trainable quantity of the collapsed ELBO.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SvgpParam {
    Hyper(HyperParam),
    /// Coordinate `col` of inducing input `row`.
    Inducing { row: usize, col: usize },
}

/// Relative central-difference step for ELBO gradients.
pub const ELBO_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Svgp {
    hp: Hyperparameters,
    data: Dataset,
    fit: InducingFit,
}

impl Svgp {
    /// Fits to `data` using the inducing inputs stored in `hp`.
    pub fn fit(hp: &Hyperparameters, data: &Dataset) -> Result<Self> {
        Self::fit_traced(hp, data, None)
    }

    pub(crate) fn fit_traced(hp: &Hyperparameters, data: &Dataset, trace: Option<&ShapeTrace>) -> Result<Self> {
        hp.validate()?;
        let z = hp
            .inducing_inputs
            .as_ref()
            .ok_or_else(|| Error::InvalidHyperparameters("SVGP needs inducing inputs".into()))?;
        if data.dim() != hp.dim() {
            return Err(dim_mismatch(format!(
                "data has dimension {} but the kernel expects {}",
                data.dim(),
                hp.dim()
            )));
        }
        let fit = InducingFit::new(&hp.kernel, hp.noise_variance, z, data, trace)?;
        Ok(Svgp {
            hp: hp.clone(),
            data: data.clone(),
            fit,
        })
    }

    pub fn with_hyperparameters(&self, hp: &Hyperparameters) -> Result<Self> {
        Svgp::fit(hp, &self.data)
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn inducing_inputs(&self) -> &DMatrix<f64> {
        &self.fit.z
    }

    /// `M⁻¹ K_uf y`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.fit.alpha
    }

    /// Cholesky factor of `M = K_uu + σ_ε⁻² K_uf K_fu`.
    pub fn m_factor(&self) -> SpdFactor {
        self.fit.m_factor()
    }

    pub(crate) fn inducing_fit(&self) -> &InducingFit {
        &self.fit
    }

    /// Mean and covariance of the optimal variational distribution `q(u)`.
    pub fn optimal_variational(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let kuu = &self.fit.kuu;
        let mean = (kuu * &self.fit.alpha) / self.hp.noise_variance;
        let l = self.fit.m_factor();
        let r = l.forward(kuu)?;
        let cov = r.transpose() * r;
        Ok((mean, cov))
    }

    /// Collapsed evidence lower bound.
    pub fn elbo(&self) -> f64 {
        self.fit.elbo
    }

    /// Central finite-difference ELBO gradient with the default step.
    pub fn elbo_gradient(&self, params: &[SvgpParam]) -> Result<Vec<f64>> {
        self.elbo_gradient_with_step(params, ELBO_FD_STEP)
    }

    /// Central differences with step `rel_step · |θ|` (or `rel_step` when θ = 0).
    pub fn elbo_gradient_with_step(&self, params: &[SvgpParam], rel_step: f64) -> Result<Vec<f64>> {
        params
            .iter()
            .map(|&p| {
                let theta = self.get(p)?;
                let h = if theta == 0.0 { rel_step } else { rel_step * theta.abs() };
                let up = elbo_at(&self.set(p, theta + h)?, &self.data)?;
                let down = elbo_at(&self.set(p, theta - h)?, &self.data)?;
                Ok((up - down) / (2.0 * h))
            })
            .collect()
    }

    fn get(&self, p: SvgpParam) -> Result<f64> {
        match p {
            SvgpParam::Hyper(h) => self.hp.get(h),
            SvgpParam::Inducing { row, col } => self
                .fit
                .z
                .get((row, col))
                .copied()
                .ok_or_else(|| Error::IndexOutOfRange(format!("inducing entry ({row}, {col})"))),
        }
    }

    fn set(&self, p: SvgpParam, value: f64) -> Result<Hyperparameters> {
        match p {
            SvgpParam::Hyper(h) => self.hp.with_param(h, value),
            SvgpParam::Inducing { row, col } => {
                let mut z = self.fit.z.clone();
                z[(row, col)] = value;
                self.hp.clone().with_inducing(z)
            }
        }
    }

    pub fn predict(&self, xs: &DMatrix<f64>) -> Result<GaussianPrediction> {
        self.fit.predict(&self.hp.kernel, xs)
    }

    /// Per-point `K_*u M⁻¹ K_u*`, the variance explained by the data.
    pub fn explained_variance(&self, xs: &DMatrix<f64>) -> Result<DVector<f64>> {
        let kus = self.fit.cross(&self.hp.kernel, xs)?;
        Ok(self.fit.quadratic_terms(&kus, None)?.1)
    }
}

fn elbo_at(hp: &Hyperparameters, data: &Dataset) -> Result<f64> {
    let z = hp.inducing_inputs.as_ref().expect("inducing inputs present");
    Ok(InducingFit::new(&hp.kernel, hp.noise_variance, z, data, None)?.elbo)
}

/// Every trainable ELBO quantity: kernel and noise hyperparameters, followed
/// by the inducing coordinates when `train_inducing` is set.
pub fn svgp_params(hp: &Hyperparameters, train_inducing: bool) -> Vec<SvgpParam> {
    let mut p: Vec<SvgpParam> = hp.params().into_iter().map(SvgpParam::Hyper).collect();
    if train_inducing {
        if let Some(z) = &hp.inducing_inputs {
            for row in 0..z.nrows() {
                for col in 0..z.ncols() {
                    p.push(SvgpParam::Inducing { row, col });
                }
            }
        }
    }
    p
}
