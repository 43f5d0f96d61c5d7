//! Sparse-grid inducing inputs, combination-technique coefficients and the
//! optimized combination (OptiCom) of sparse-GP solutions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{dim_mismatch, Error, Result};
use crate::kernels::{Hyperparameters, KernelSpec};
use crate::numerics;
use crate::prediction::GaussianPrediction;
use crate::svgp::InducingFit;

/// Largest number of points a single grid may contain.
pub const MAX_GRID_POINTS: u128 = 10_000_000;

/// Level vector of an anisotropic full grid; every level is at least 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex {
    levels: Vec<u32>,
}

impl MultiIndex {
    pub fn new(levels: Vec<u32>) -> Result<Self> {
        if levels.is_empty() || levels.contains(&0) {
            return Err(Error::IndexOutOfRange(format!(
                "levels must be non-empty and at least 1, got {levels:?}"
            )));
        }
        Ok(MultiIndex { levels })
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    /// `|ℓ|₁`.
    pub fn norm1(&self) -> u64 {
        self.levels.iter().map(|&l| l as u64).sum()
    }

    /// Number of points in the full grid of this level vector.
    pub fn point_count(&self) -> Option<u128> {
        self.levels.iter().try_fold(1u128, |acc, &l| {
            let per_dim = 1u128.checked_shl(l)?.checked_sub(1)?;
            acc.checked_mul(per_dim)
        })
    }
}

impl std::fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.levels.iter().map(|l| l.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// All level vectors with `η ≤ |ℓ|₁ ≤ η + d − 1`, grouped by increasing
/// `|ℓ|₁` and lexicographic within a group.
pub fn enumerate_indices(level: u32, dim: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    if level == 0 || dim == 0 {
        return out;
    }
    for total in level as u64..level as u64 + dim as u64 {
        let mut current = Vec::with_capacity(dim);
        compositions(total, dim, &mut current, &mut out);
    }
    out
}

fn compositions(remaining: u64, slots: usize, current: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if slots == 1 {
        current.push(remaining as u32);
        out.push(MultiIndex { levels: current.clone() });
        current.pop();
        return;
    }
    // Leave at least one level for each remaining slot.
    for first in 1..=remaining.saturating_sub(slots as u64 - 1) {
        current.push(first as u32);
        compositions(remaining - first, slots - 1, current, out);
        current.pop();
    }
}

/// Number of level vectors returned by [`enumerate_indices`].
pub fn index_count(level: u32, dim: usize) -> u128 {
    (level as u64..level as u64 + dim as u64)
        .map(|s| binomial(s.saturating_sub(1), dim as u64 - 1))
        .sum()
}

pub(crate) fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Interior dyadic points `i / 2^ℓ_j`, `i = 1..2^ℓ_j − 1`, in each dimension,
/// combined as a Cartesian product (first dimension varies slowest) and
/// mapped affinely onto `bounds`.
pub fn grid_points(index: &MultiIndex, bounds: &[(f64, f64)]) -> Result<DMatrix<f64>> {
    let d = index.dim();
    if bounds.len() != d {
        return Err(dim_mismatch(format!(
            "level vector has {d} entries but {} bounds were given",
            bounds.len()
        )));
    }
    if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo < hi)) {
        return Err(Error::InvalidConfig(format!("empty interval [{lo}, {hi}]")));
    }
    let total = index.point_count().unwrap_or(u128::MAX);
    if total > MAX_GRID_POINTS {
        return Err(Error::OverflowGuard {
            points: total,
            limit: MAX_GRID_POINTS,
        });
    }
    let total = total as usize;
    let axes: Vec<Vec<f64>> = index
        .levels
        .iter()
        .zip(bounds)
        .map(|(&l, &(lo, hi))| {
            let denom = (1u64 << l) as f64;
            (1..(1u64 << l)).map(|i| lo + (hi - lo) * (i as f64 / denom)).collect()
        })
        .collect();
    let mut points = DMatrix::zeros(total, d);
    for row in 0..total {
        let mut rest = row;
        for j in (0..d).rev() {
            let len = axes[j].len();
            points[(row, j)] = axes[j][rest % len];
            rest /= len;
        }
    }
    Ok(points)
}

/// Signed binomial weight `(−1)^{η+d−1−|ℓ|₁} C(d−1, |ℓ|₁−η)` of a term in the
/// classical combination formula.
pub fn ct_coefficient(index: &MultiIndex, level: u32, dim: usize) -> Result<i64> {
    let s = index.norm1();
    let lo = level as u64;
    let hi = lo + dim as u64 - 1;
    if index.dim() != dim || level == 0 || s < lo || s > hi {
        return Err(Error::IndexOutOfRange(format!(
            "{index} is not a combination term of level {level} in dimension {dim}"
        )));
    }
    let magnitude = binomial(dim as u64 - 1, s - lo) as i64;
    Ok(if (hi - s).is_multiple_of(2) { magnitude } else { -magnitude })
}

/// One partial-grid sparse GP of the combination.
#[derive(Debug, Clone)]
pub struct CombinationTerm {
    pub index: MultiIndex,
    pub ct_coefficient: i64,
    pub(crate) fit: InducingFit,
}

impl CombinationTerm {
    pub fn grid(&self) -> &DMatrix<f64> {
        &self.fit.z
    }

    /// `M⁻¹ K_uf y` for this term's grid.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.fit.alpha
    }

    /// Cholesky factor of `M = K_uu + σ_ε⁻² K_uf K_fu` on this term's grid.
    pub fn m_factor(&self) -> numerics::SpdFactor {
        self.fit.m_factor()
    }
}

#[derive(Debug, Clone)]
pub struct OptiComSolution {
    pub coefficients: DVector<f64>,
    pub gram: DMatrix<f64>,
    pub fallback_used: bool,
    pub terms: Vec<CombinationTerm>,
    kernel: KernelSpec,
    noise_variance: f64,
}

/// Fits one sparse GP per combination term on the sparse grid of the given
/// level over `bounds` and solves for the optimal combination coefficients.
pub fn opticom_coefficients(
    data: &Dataset,
    hp: &Hyperparameters,
    level: u32,
    bounds: &[(f64, f64)],
) -> Result<OptiComSolution> {
    let dim = data.dim();
    if level == 0 {
        return Err(Error::InvalidConfig("sparse grid level must be at least 1".into()));
    }
    let indices = enumerate_indices(level, dim);
    let ct: Vec<i64> = indices
        .iter()
        .map(|ix| ct_coefficient(ix, level, dim))
        .collect::<Result<_>>()?;
    opticom_from_terms(data, hp, &indices, &ct, bounds)
}

/// OptiCom over an explicit list of level vectors with their combination
/// weights. Duplicate entries are allowed.
pub fn opticom_from_terms(
    data: &Dataset,
    hp: &Hyperparameters,
    indices: &[MultiIndex],
    ct_coefficients: &[i64],
    bounds: &[(f64, f64)],
) -> Result<OptiComSolution> {
    hp.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.dim() != hp.dim() {
        return Err(dim_mismatch("data dimension differs from the kernel"));
    }
    if indices.len() != ct_coefficients.len() {
        return Err(dim_mismatch("one combination weight per term is required"));
    }
    let grids: Vec<DMatrix<f64>> = indices
        .iter()
        .map(|ix| grid_points(ix, bounds))
        .collect::<Result<_>>()?;
    let kernel = &hp.kernel;
    let noise = hp.noise_variance;
    let fits: Vec<InducingFit> = grids
        .par_iter()
        .map(|z| InducingFit::new(kernel, noise, z, data, None))
        .collect::<Result<_>>()?;

    let b = fits.len();
    let pairs: Vec<(usize, usize)> = (0..b).flat_map(|i| (i..b).map(move |j| (i, j))).collect();
    let entries: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| rls_product(kernel, noise, &fits[i], &fits[j]))
        .collect::<Result<_>>()?;
    let mut gram = DMatrix::zeros(b, b);
    for (&(i, j), &v) in pairs.iter().zip(&entries) {
        gram[(i, j)] = v;
        gram[(j, i)] = v;
    }
    let solve = numerics::solve_symmetric_with_fallback(&gram, &gram.diagonal())?;
    let terms = indices
        .iter()
        .zip(ct_coefficients)
        .zip(fits)
        .map(|((ix, &c), fit)| CombinationTerm {
            index: ix.clone(),
            ct_coefficient: c,
            fit,
        })
        .collect();
    Ok(OptiComSolution {
        coefficients: solve.solution,
        gram,
        fallback_used: solve.fallback_used,
        terms,
        kernel: kernel.clone(),
        noise_variance: noise,
    })
}

/// `σ_ε⁻² α_iᵀ (K_{u_i u_j} + σ_ε⁻² K_{u_i f} K_{f u_j}) α_j`.
fn rls_product(kernel: &KernelSpec, noise: f64, a: &InducingFit, b: &InducingFit) -> Result<f64> {
    let rkhs = kernel.bilinear(&a.z, &a.alpha, &b.z, &b.alpha)?;
    let data_fit = a.fitted.dot(&b.fitted) / noise;
    Ok((rkhs + data_fit) / noise)
}

impl OptiComSolution {
    /// Classical combination weights, one per term.
    pub fn ct_coefficients(&self) -> DVector<f64> {
        DVector::from_iterator(self.terms.len(), self.terms.iter().map(|t| t.ct_coefficient as f64))
    }

    /// Projection residual up to a constant: `cᵀAc − 2cᵀdiag(A)`.
    pub fn functional(&self, c: &DVector<f64>) -> f64 {
        c.dot(&(&self.gram * c)) - 2.0 * c.dot(&self.gram.diagonal())
    }

    /// Combined posterior mean `Σ c_ℓ σ_ε⁻² K_{*u_ℓ} α_ℓ` for arbitrary weights.
    pub fn mean_with(&self, xs: &DMatrix<f64>, weights: &DVector<f64>) -> Result<DVector<f64>> {
        if weights.len() != self.terms.len() {
            return Err(dim_mismatch("one weight per combination term is required"));
        }
        let parts: Vec<DVector<f64>> = self
            .terms
            .par_iter()
            .map(|t| Ok(t.fit.mean_from_cross(&t.fit.cross(&self.kernel, xs)?)))
            .collect::<Result<_>>()?;
        let mut mean = DVector::zeros(xs.nrows());
        for (w, p) in weights.iter().zip(&parts) {
            mean.axpy(*w, p, 1.0);
        }
        Ok(mean)
    }

    /// Posterior with the optimized coefficients in the mean and the
    /// classical combination weights in the variance.
    pub fn posterior(&self, xs: &DMatrix<f64>) -> Result<GaussianPrediction> {
        let parts: Vec<(DVector<f64>, DVector<f64>)> = self
            .terms
            .par_iter()
            .map(|t| {
                let kus = t.fit.cross(&self.kernel, xs)?;
                let mean = t.fit.mean_from_cross(&kus);
                let (q, e) = t.fit.quadratic_terms(&kus, None)?;
                let var = self.kernel.diag(xs) - q + e;
                Ok((mean, var))
            })
            .collect::<Result<_>>()?;
        let mut mean = DVector::zeros(xs.nrows());
        let mut var = DVector::zeros(xs.nrows());
        for ((m, v), (c, t)) in parts.iter().zip(self.coefficients.iter().zip(&self.terms)) {
            mean.axpy(*c, m, 1.0);
            var.axpy(t.ct_coefficient as f64, v, 1.0);
        }
        GaussianPrediction::new(mean, var, false)
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }
}

/// Convenience wrapper: fit and predict in one call.
pub fn opticom_posterior(
    data: &Dataset,
    hp: &Hyperparameters,
    level: u32,
    bounds: &[(f64, f64)],
    xs: &DMatrix<f64>,
) -> Result<GaussianPrediction> {
    opticom_coefficients(data, hp, level, bounds)?.posterior(xs)
}
