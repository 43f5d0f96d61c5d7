//! Brute-force dense oracles used to cross-check the production solvers.
//!
//! Nothing here shares code with `distgp-core`: kernels are re-evaluated from
//! their closed forms, every inverse is an LU inverse of the full matrix, and
//! no Cholesky factor, Woodbury identity or blocking is used. Slow on purpose.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform entries in `[-1, 1]`.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..=1.0))
}

/// Uniform entries in `[lo, hi]`.
pub fn random_points(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..=hi))
}

pub fn random_vector(len: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(len, |_, _| rng.random_range(-1.0..=1.0))
}

pub fn dense_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().lu().try_inverse().expect("oracle: singular matrix")
}

/// Log-determinant from the LU diagonal, so large matrices do not underflow.
pub fn dense_log_det(a: &DMatrix<f64>) -> f64 {
    let lu = a.clone().lu();
    let u = lu.u();
    let sign = lu.p().determinant::<f64>() * u.diagonal().iter().map(|v| v.signum()).product::<f64>();
    assert!(sign > 0.0, "oracle: non-positive determinant");
    u.diagonal().iter().map(|v| v.abs().ln()).sum()
}

/// Moore-Penrose pseudo-inverse via SVD.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().pseudo_inverse(1e-10 * a.amax()).expect("oracle: pinv")
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Central finite difference of a scalar function.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Closed-form stationary kernels, evaluated pointwise.
#[derive(Debug, Clone)]
pub struct OracleKernel {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub matern32: bool,
}

impl OracleKernel {
    pub fn rbf(lengthscales: Vec<f64>, signal_variance: f64) -> Self {
        OracleKernel {
            lengthscales,
            signal_variance,
            matern32: false,
        }
    }

    pub fn matern32(lengthscales: Vec<f64>, signal_variance: f64) -> Self {
        OracleKernel {
            lengthscales,
            signal_variance,
            matern32: true,
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        if self.matern32 {
            let s = 3f64.sqrt() * r2.sqrt();
            self.signal_variance * (1.0 + s) * (-s).exp()
        } else {
            self.signal_variance * (-0.5 * r2).exp()
        }
    }

    pub fn matrix(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect();
        let cols: Vec<Vec<f64>> = (0..y.nrows()).map(|j| y.row(j).iter().copied().collect()).collect();
        DMatrix::from_fn(x.nrows(), y.nrows(), |i, j| self.eval(&rows[i], &cols[j]))
    }
}

pub struct DensePrediction {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
}

/// Exact GP posterior by explicit inversion of `K + σ²I`.
pub fn exact_posterior(
    k: &OracleKernel,
    noise: f64,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    xs: &DMatrix<f64>,
) -> DensePrediction {
    let n = x.nrows();
    let kinv = dense_inverse(&(k.matrix(x, x) + DMatrix::identity(n, n) * noise));
    let ksf = k.matrix(xs, x);
    let mean = &ksf * (&kinv * y);
    let cov = k.matrix(xs, xs) - &ksf * &kinv * ksf.transpose();
    DensePrediction {
        mean,
        variance: cov.diagonal(),
    }
}

/// Gaussian log density `log N(y | 0, C)` with a dense inverse and LU determinant.
pub fn gaussian_log_density(c: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let quad = (y.transpose() * dense_inverse(c) * y)[(0, 0)];
    -0.5 * (quad + dense_log_det(c) + n * (2.0 * std::f64::consts::PI).ln())
}

pub fn exact_lml(k: &OracleKernel, noise: f64, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let n = x.nrows();
    gaussian_log_density(&(k.matrix(x, x) + DMatrix::identity(n, n) * noise), y)
}

/// Collapsed ELBO evaluated with the full `n×n` Nyström matrix.
pub fn svgp_elbo(
    k: &OracleKernel,
    noise: f64,
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> f64 {
    let n = x.nrows();
    let kuu_inv = dense_inverse(&k.matrix(z, z));
    let kfu = k.matrix(x, z);
    let q = &kfu * kuu_inv * kfu.transpose();
    let c = &q + DMatrix::identity(n, n) * noise;
    let trace = (k.matrix(x, x) - &q).trace();
    gaussian_log_density(&c, y) - 0.5 / noise * trace
}

fn svgp_m(k: &OracleKernel, noise: f64, z: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let kuf = k.matrix(z, x);
    k.matrix(z, z) + &kuf * kuf.transpose() / noise
}

/// Optimal variational mean and covariance of the inducing variables.
pub fn svgp_optimal_q(
    k: &OracleKernel,
    noise: f64,
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let kuu = k.matrix(z, z);
    let minv = dense_inverse(&svgp_m(k, noise, z, x));
    let mean = &kuu * &minv * k.matrix(z, x) * y / noise;
    let cov = &kuu * &minv * &kuu;
    (mean, cov)
}

/// SVGP predictive distribution with explicit `K_uu⁻¹` and `M⁻¹`.
pub fn svgp_predict(
    k: &OracleKernel,
    noise: f64,
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    xs: &DMatrix<f64>,
) -> DensePrediction {
    let kuu_inv = dense_inverse(&k.matrix(z, z));
    let minv = dense_inverse(&svgp_m(k, noise, z, x));
    let ksu = k.matrix(xs, z);
    let mean = &ksu * &minv * k.matrix(z, x) * y / noise;
    let cov = k.matrix(xs, xs) - &ksu * (kuu_inv - &minv) * ksu.transpose();
    DensePrediction {
        mean,
        variance: cov.diagonal(),
    }
}

/// `α = M⁻¹ K_uf y` for inducing inputs `z`.
pub fn svgp_alpha(
    k: &OracleKernel,
    noise: f64,
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> DVector<f64> {
    dense_inverse(&svgp_m(k, noise, z, x)) * k.matrix(z, x) * y
}

/// OptiCom Gram matrix built entry by entry from the RLS scalar product:
/// `A[i,j] = σ⁻² α_iᵀ (K_{u_i u_j} + σ⁻² K_{u_i f} K_{f u_j}) α_j`.
pub fn opticom_gram(
    k: &OracleKernel,
    noise: f64,
    grids: &[DMatrix<f64>],
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> DMatrix<f64> {
    let alphas: Vec<DVector<f64>> = grids.iter().map(|g| svgp_alpha(k, noise, g, x, y)).collect();
    let b = grids.len();
    DMatrix::from_fn(b, b, |i, j| {
        let kuf_i = k.matrix(&grids[i], x);
        let kuf_j = k.matrix(&grids[j], x);
        let m = k.matrix(&grids[i], &grids[j]) + &kuf_i * kuf_j.transpose() / noise;
        (alphas[i].transpose() * m * &alphas[j])[(0, 0)] / noise
    })
}

/// Rows of `x` selected by `idx`.
pub fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

pub fn select(y: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| y[idx[i]])
}

/// Optimal-weights Gram for SVGP experts sharing inducing inputs `z`.
pub fn svgp_weight_gram(
    k: &OracleKernel,
    noise: f64,
    z: &DMatrix<f64>,
    shards: &[(DMatrix<f64>, DVector<f64>)],
    xc: &DMatrix<f64>,
) -> DMatrix<f64> {
    let alphas: Vec<DVector<f64>> = shards
        .iter()
        .map(|(x, y)| svgp_alpha(k, noise, z, x, y))
        .collect();
    let kuc = k.matrix(z, xc);
    let mc = k.matrix(z, z) + &kuc * kuc.transpose() / noise;
    let m = shards.len();
    DMatrix::from_fn(m, m, |i, j| (alphas[i].transpose() * &mc * &alphas[j])[(0, 0)] / noise)
}

/// Optimal-weights Gram for exact-GP experts:
/// `A[i,j] = α_iᵀ (K_{f_i f_j} + K_{f_i f_c} K_{f_c f_j}) α_j`.
pub fn exact_weight_gram(
    k: &OracleKernel,
    noise: f64,
    shards: &[(DMatrix<f64>, DVector<f64>)],
    xc: &DMatrix<f64>,
) -> DMatrix<f64> {
    let alphas: Vec<DVector<f64>> = shards
        .iter()
        .map(|(x, y)| {
            let n = x.nrows();
            dense_inverse(&(k.matrix(x, x) + DMatrix::identity(n, n) * noise)) * y
        })
        .collect();
    let m = shards.len();
    DMatrix::from_fn(m, m, |i, j| {
        let (xi, xj) = (&shards[i].0, &shards[j].0);
        let mc = k.matrix(xi, xj) + k.matrix(xi, xc) * k.matrix(xc, xj);
        (alphas[i].transpose() * mc * &alphas[j])[(0, 0)]
    })
}

/// `β = A⁺ diag(A)` (equals `A⁻¹ diag(A)` for invertible `A`).
pub fn weights_from_gram(a: &DMatrix<f64>) -> DVector<f64> {
    pinv(a) * a.diagonal()
}

/// NPAE at one test point, straight from the covariance definitions.
pub fn npae_point(
    k: &OracleKernel,
    noise: f64,
    shards: &[(DMatrix<f64>, DVector<f64>)],
    xs: &DMatrix<f64>,
) -> (f64, f64) {
    assert_eq!(xs.nrows(), 1);
    let m = shards.len();
    let kinvs: Vec<DMatrix<f64>> = shards
        .iter()
        .map(|(x, _)| {
            let n = x.nrows();
            dense_inverse(&(k.matrix(x, x) + DMatrix::identity(n, n) * noise))
        })
        .collect();
    let mus: Vec<f64> = (0..m)
        .map(|i| (k.matrix(xs, &shards[i].0) * &kinvs[i] * &shards[i].1)[(0, 0)])
        .collect();
    let cov = |i: usize, j: usize| -> f64 {
        let left = k.matrix(xs, &shards[i].0) * &kinvs[i];
        if i == j {
            (left * k.matrix(&shards[i].0, xs))[(0, 0)]
        } else {
            (left * k.matrix(&shards[i].0, &shards[j].0) * &kinvs[j] * k.matrix(&shards[j].0, xs))[(0, 0)]
        }
    };
    let ka = DMatrix::from_fn(m, m, &cov);
    let kva = DVector::from_fn(m, |i, _| cov(i, i));
    let w = dense_inverse(&ka) * &kva;
    let mean = w.dot(&DVector::from_vec(mus));
    let var = k.eval(xs.row(0).clone_owned().as_slice(), xs.row(0).clone_owned().as_slice()) - w.dot(&kva) + noise;
    (mean, var)
}

/// Griewank test function `1 + Σ x_i²/4000 − Π cos(x_i/√i)`.
pub fn griewank(x: &[f64]) -> f64 {
    let sum: f64 = x.iter().map(|v| v * v / 4000.0).sum();
    let prod: f64 = x
        .iter()
        .enumerate()
        .map(|(i, v)| (v / ((i + 1) as f64).sqrt()).cos())
        .product();
    1.0 + sum - prod
}
