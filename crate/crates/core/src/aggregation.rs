//! Fusing predictions of experts fitted on disjoint shards: the product of
//! experts and Bayesian committee machine families, grBCM, NPAE, and
//! aggregation with optimal weights solved from a Gram system on a small
//! central subset.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{dim_mismatch, Error, Result};
use crate::exact_gp::ExactGp;
use crate::experts::{CentralSubset, Partition};
use crate::kernels::Hyperparameters;
use crate::numerics;
use crate::prediction::GaussianPrediction;
use crate::svgp::Svgp;
use crate::trace::{note, note_shape, ShapeTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Exact,
    Svgp,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Exact => "exact",
            ModelKind::Svgp => "svgp",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" | "exactgp" | "exact_gp" => Ok(ModelKind::Exact),
            "svgp" => Ok(ModelKind::Svgp),
            other => Err(Error::InvalidConfig(format!("unknown model '{other}'"))),
        }
    }
}

/// A prediction rule: a single full model or a way to fuse experts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregator {
    Full,
    Poe,
    GPoe,
    Bcm,
    RBcm,
    GrBcm,
    Npae,
    Opt,
}

impl Aggregator {
    pub const ALL: [Aggregator; 8] = [
        Aggregator::Full,
        Aggregator::Poe,
        Aggregator::GPoe,
        Aggregator::Bcm,
        Aggregator::RBcm,
        Aggregator::GrBcm,
        Aggregator::Npae,
        Aggregator::Opt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Full => "full",
            Aggregator::Poe => "poe",
            Aggregator::GPoe => "gpoe",
            Aggregator::Bcm => "bcm",
            Aggregator::RBcm => "rbcm",
            Aggregator::GrBcm => "grbcm",
            Aggregator::Npae => "npae",
            Aggregator::Opt => "opt",
        }
    }

    pub fn supports(self, kind: ModelKind) -> bool {
        !(self == Aggregator::Npae && kind == ModelKind::Svgp)
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Aggregator::ALL
            .into_iter()
            .find(|a| a.name() == lower)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown aggregator '{s}'")))
    }
}

/// Rules that fuse local precisions directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoeRule {
    Poe,
    GPoe,
    Bcm,
    RBcm,
}

impl PoeRule {
    fn name(self) -> &'static str {
        match self {
            PoeRule::Poe => "PoE",
            PoeRule::GPoe => "gPoE",
            PoeRule::Bcm => "BCM",
            PoeRule::RBcm => "rBCM",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Expert {
    Exact(ExactGp),
    Svgp(Svgp),
}

impl Expert {
    pub fn fit(kind: ModelKind, hp: &Hyperparameters, data: &Dataset) -> Result<Self> {
        Self::fit_traced(kind, hp, data, None)
    }

    fn fit_traced(kind: ModelKind, hp: &Hyperparameters, data: &Dataset, trace: Option<&ShapeTrace>) -> Result<Self> {
        Ok(match kind {
            ModelKind::Exact => Expert::Exact(ExactGp::fit(hp, data)?),
            ModelKind::Svgp => Expert::Svgp(Svgp::fit_traced(hp, data, trace)?),
        })
    }

    /// Latent predictive distribution.
    pub fn predict(&self, xs: &DMatrix<f64>) -> Result<GaussianPrediction> {
        match self {
            Expert::Exact(gp) => gp.posterior(xs, false),
            Expert::Svgp(m) => m.predict(xs),
        }
    }
}

/// Experts sharing one set of hyperparameters (and, for sparse experts, one
/// set of inducing inputs), each fitted on its own shard.
#[derive(Debug, Clone)]
pub struct ExpertEnsemble {
    pub hp: Hyperparameters,
    pub kind: ModelKind,
    pub partition: Partition,
    pub central: CentralSubset,
    pub shards: Vec<Dataset>,
    pub experts: Vec<Expert>,
    /// Inputs of the central subset, one row per expert.
    pub central_x: DMatrix<f64>,
}

impl ExpertEnsemble {
    pub fn fit(
        data: &Dataset,
        hp: &Hyperparameters,
        kind: ModelKind,
        partition: Partition,
        central: CentralSubset,
    ) -> Result<Self> {
        Self::fit_traced(data, hp, kind, partition, central, None)
    }

    /// As [`ExpertEnsemble::fit`], recording matrix shapes of the local fits.
    pub fn fit_traced(
        data: &Dataset,
        hp: &Hyperparameters,
        kind: ModelKind,
        partition: Partition,
        central: CentralSubset,
        trace: Option<&ShapeTrace>,
    ) -> Result<Self> {
        hp.validate()?;
        if kind == ModelKind::Svgp && hp.inducing_inputs.is_none() {
            return Err(Error::InvalidHyperparameters("sparse experts need inducing inputs".into()));
        }
        if central.indices.len() != partition.experts() {
            return Err(dim_mismatch("central subset needs one point per expert"));
        }
        let shards = partition.shard_data(data)?;
        let experts = shards
            .par_iter()
            .map(|s| Expert::fit_traced(kind, hp, s, trace))
            .collect::<Result<Vec<_>>>()?;
        let central_x = data.subset(&central.indices)?.x;
        Ok(ExpertEnsemble {
            hp: hp.clone(),
            kind,
            partition,
            central,
            shards,
            experts,
            central_x,
        })
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    /// Latent predictions of every expert.
    pub fn local_predictions(&self, xs: &DMatrix<f64>) -> Result<Vec<GaussianPrediction>> {
        self.experts.par_iter().map(|e| e.predict(xs)).collect()
    }

    fn prior_variance(&self, xs: &DMatrix<f64>) -> DVector<f64> {
        self.hp.kernel.diag(xs).add_scalar(self.hp.noise_variance)
    }
}

/// Fused mean and variance at one test point, and whether the fused
/// precision had to be replaced by the prior precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Combined {
    pub mean: f64,
    pub variance: f64,
    pub degenerate: bool,
}

fn finish(precision: f64, weighted_mean: f64, prior_variance: f64) -> Combined {
    if precision > 0.0 && precision.is_finite() {
        Combined {
            mean: weighted_mean / precision,
            variance: 1.0 / precision,
            degenerate: false,
        }
    } else {
        Combined {
            mean: weighted_mean * prior_variance,
            variance: prior_variance,
            degenerate: true,
        }
    }
}

/// Fuses local means and observation-level variances at one test point.
pub fn poe_combine(rule: PoeRule, means: &[f64], variances: &[f64], prior_variance: f64) -> Combined {
    let m = means.len() as f64;
    let mut precision = 0.0;
    let mut weighted = 0.0;
    let mut beta_sum = 0.0;
    for (&mu, &var) in means.iter().zip(variances) {
        let beta = match rule {
            PoeRule::Poe | PoeRule::Bcm => 1.0,
            PoeRule::GPoe => 1.0 / m,
            PoeRule::RBcm => 0.5 * (prior_variance.ln() - var.ln()),
        };
        precision += beta / var;
        weighted += beta * mu / var;
        beta_sum += beta;
    }
    if matches!(rule, PoeRule::Bcm | PoeRule::RBcm) {
        precision += (1.0 - beta_sum) / prior_variance;
    }
    finish(precision, weighted, prior_variance)
}

/// Fuses the communication expert and the augmented experts at one test
/// point. The first augmented expert gets weight one.
pub fn grbcm_combine(
    central_mean: f64,
    central_variance: f64,
    means: &[f64],
    variances: &[f64],
    prior_variance: f64,
) -> Combined {
    let mut precision = 0.0;
    let mut weighted = 0.0;
    let mut beta_sum = 0.0;
    for (k, (&mu, &var)) in means.iter().zip(variances).enumerate() {
        let beta = if k == 0 {
            1.0
        } else {
            0.5 * (central_variance.ln() - var.ln())
        };
        precision += beta / var;
        weighted += beta * mu / var;
        beta_sum += beta;
    }
    precision -= (beta_sum - 1.0) / central_variance;
    weighted -= (beta_sum - 1.0) * central_mean / central_variance;
    finish(precision, weighted, prior_variance)
}

fn assemble(
    n: usize,
    f: impl Fn(usize) -> Combined,
    label: &str,
) -> Result<GaussianPrediction> {
    let mut mean = DVector::zeros(n);
    let mut var = DVector::zeros(n);
    let mut degenerate = 0;
    for t in 0..n {
        let c = f(t);
        mean[t] = c.mean;
        var[t] = c.variance;
        degenerate += usize::from(c.degenerate);
    }
    if degenerate > 0 {
        warn!("{label}: {degenerate} of {n} fused precisions were not positive; used the prior precision");
    }
    let mut p = GaussianPrediction::new(mean, var, true)?;
    p.degenerate = degenerate;
    Ok(p)
}

/// Product-of-experts and committee-machine fusion. Local variances are
/// taken at the observation level (latent variance plus noise), and so is
/// the returned variance.
pub fn aggregate_poe_family(ens: &ExpertEnsemble, xs: &DMatrix<f64>, rule: PoeRule) -> Result<GaussianPrediction> {
    if ens.is_empty() {
        return Err(Error::TooFewExperts {
            rule: rule.name(),
            required: 1,
            experts: 0,
        });
    }
    let noise = ens.hp.noise_variance;
    let locals = ens.local_predictions(xs)?;
    let prior = ens.prior_variance(xs);
    assemble(
        xs.nrows(),
        |t| {
            let means: Vec<f64> = locals.iter().map(|p| p.mean[t]).collect();
            let vars: Vec<f64> = locals.iter().map(|p| p.variance[t] + noise).collect();
            poe_combine(rule, &means, &vars, prior[t])
        },
        rule.name(),
    )
}

/// Generalized robust committee machine with shard 1 as the communication
/// set and augmented experts on shard 1 joined with each other shard.
pub fn aggregate_grbcm(ens: &ExpertEnsemble, xs: &DMatrix<f64>) -> Result<GaussianPrediction> {
    let m = ens.len();
    if m < 2 {
        return Err(Error::TooFewExperts {
            rule: "grBCM",
            required: 2,
            experts: m,
        });
    }
    let noise = ens.hp.noise_variance;
    let central = ens.experts[0].predict(xs)?;
    let augmented: Vec<GaussianPrediction> = ens.shards[1..]
        .par_iter()
        .map(|s| {
            let joined = ens.shards[0].concat(s)?;
            Expert::fit(ens.kind, &ens.hp, &joined)?.predict(xs)
        })
        .collect::<Result<_>>()?;
    let prior = ens.prior_variance(xs);
    assemble(
        xs.nrows(),
        |t| {
            let means: Vec<f64> = augmented.iter().map(|p| p.mean[t]).collect();
            let vars: Vec<f64> = augmented.iter().map(|p| p.variance[t] + noise).collect();
            grbcm_combine(central.mean[t], central.variance[t] + noise, &means, &vars, prior[t])
        },
        "grBCM",
    )
}

fn exact_experts<'a>(ens: &'a ExpertEnsemble, rule: &str) -> Result<Vec<&'a ExactGp>> {
    ens.experts
        .iter()
        .map(|e| match e {
            Expert::Exact(gp) => Ok(gp),
            Expert::Svgp(_) => Err(Error::InvalidConfig(format!("{rule} needs exact GP experts"))),
        })
        .collect()
}

fn svgp_experts<'a>(ens: &'a ExpertEnsemble, rule: &str) -> Result<Vec<&'a Svgp>> {
    ens.experts
        .iter()
        .map(|e| match e {
            Expert::Svgp(m) => Ok(m),
            Expert::Exact(_) => Err(Error::InvalidConfig(format!("{rule} needs SVGP experts"))),
        })
        .collect()
}

/// Nested pointwise aggregation of exact GP experts.
pub fn aggregate_npae(ens: &ExpertEnsemble, xs: &DMatrix<f64>) -> Result<GaussianPrediction> {
    aggregate_npae_traced(ens, xs, None)
}

/// As [`aggregate_npae`], recording matrix shapes.
pub fn aggregate_npae_traced(
    ens: &ExpertEnsemble,
    xs: &DMatrix<f64>,
    trace: Option<&ShapeTrace>,
) -> Result<GaussianPrediction> {
    let gps = exact_experts(ens, "NPAE")?;
    let m = gps.len();
    let nt = xs.nrows();
    let kernel = &ens.hp.kernel;

    // Per expert: local means, V_i = K̃_i⁻¹ K_{f_i *}, and cov[μ_i, y*].
    let locals: Vec<(DVector<f64>, DMatrix<f64>, DVector<f64>)> = gps
        .par_iter()
        .map(|gp| {
            let kfs = kernel.matrix(&gp.data().x, xs)?;
            note(trace, "expert_test_cross", &kfs);
            let mean = kfs.tr_mul(gp.alpha());
            let v = gp.factor().solve(&kfs)?;
            let cov = DVector::from_iterator(nt, v.column_iter().zip(kfs.column_iter()).map(|(a, b)| a.dot(&b)));
            Ok((mean, v, cov))
        })
        .collect::<Result<_>>()?;

    // cov[μ_i, μ_j] for i < j at every test point.
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    let cross: Vec<DVector<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let kij = kernel.matrix(&gps[i].data().x, &gps[j].data().x)?;
            note(trace, "expert_pair_kernel", &kij);
            let w = kij * &locals[j].1;
            Ok(DVector::from_iterator(
                nt,
                locals[i].1.column_iter().zip(w.column_iter()).map(|(a, b)| a.dot(&b)),
            ))
        })
        .collect::<Result<_>>()?;

    let prior = kernel.diag(xs);
    let sf2 = kernel.signal_variance();
    let noise = ens.hp.noise_variance;
    let points: Vec<(f64, f64)> = (0..nt)
        .into_par_iter()
        .map(|t| {
            let mut ka = DMatrix::zeros(m, m);
            note_shape(trace, "npae_system", m, m);
            let mut ky = DVector::zeros(m);
            let mut mu = DVector::zeros(m);
            for i in 0..m {
                ka[(i, i)] = locals[i].2[t];
                ky[i] = locals[i].2[t];
                mu[i] = locals[i].0[t];
            }
            for (&(i, j), c) in pairs.iter().zip(&cross) {
                ka[(i, j)] = c[t];
                ka[(j, i)] = c[t];
            }
            let base = numerics::default_jitter(&ka).max(1e-14 * sf2);
            let factor = numerics::cholesky_jittered(&ka, base)?;
            let w = factor.solve_vec(&ky)?;
            Ok((w.dot(&mu), prior[t] - w.dot(&ky) + noise))
        })
        .collect::<Result<_>>()?;
    let mean = DVector::from_iterator(nt, points.iter().map(|p| p.0));
    let var = DVector::from_iterator(nt, points.iter().map(|p| p.1));
    GaussianPrediction::new(mean, var, true)
}

/// Expert weights solved from the Gram system `A β = diag(A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSolution {
    pub beta: DVector<f64>,
    pub gram: DMatrix<f64>,
    pub fallback_used: bool,
}

impl WeightSolution {
    fn solve(gram: DMatrix<f64>) -> Result<Self> {
        let s = numerics::solve_symmetric_with_fallback(&gram, &gram.diagonal())?;
        if s.fallback_used {
            warn!("weight Gram matrix is singular; using the minimum-norm solution");
        }
        Ok(WeightSolution {
            beta: s.solution,
            gram,
            fallback_used: s.fallback_used,
        })
    }

    /// `βᵀAβ − 2βᵀdiag(A)`, the residual being minimized up to a constant.
    pub fn functional(&self, beta: &DVector<f64>) -> f64 {
        beta.dot(&(&self.gram * beta)) - 2.0 * beta.dot(&self.gram.diagonal())
    }
}

fn upper_pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect()
}

fn fill_symmetric(m: usize, pairs: &[(usize, usize)], values: &[f64]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(m, m);
    for (&(i, j), &v) in pairs.iter().zip(values) {
        a[(i, j)] = v;
        a[(j, i)] = v;
    }
    a
}

/// Weights for sparse experts. Gram entries are
/// `σ_ε⁻² α_iᵀ (K_uu + σ_ε⁻² K_uc K_cu) α_j` with `c` the central subset.
pub fn optimal_weights_svgp(ens: &ExpertEnsemble) -> Result<WeightSolution> {
    optimal_weights_svgp_traced(ens, None)
}

/// As [`optimal_weights_svgp`], recording matrix shapes.
pub fn optimal_weights_svgp_traced(ens: &ExpertEnsemble, trace: Option<&ShapeTrace>) -> Result<WeightSolution> {
    let models = svgp_experts(ens, "optimal SVGP weights")?;
    let m = models.len();
    let noise = ens.hp.noise_variance;
    let z = models[0].inducing_inputs();
    let kuu = ens.hp.kernel.gram(z)?;
    note(trace, "inducing_gram", &kuu);
    let kuc = ens.hp.kernel.matrix(z, &ens.central_x)?;
    note(trace, "central_cross", &kuc);
    let mut mc = &kuc * kuc.transpose();
    note(trace, "central_system", &mc);
    mc /= noise;
    mc += &kuu;
    let pairs = upper_pairs(m);
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| models[i].alpha().dot(&(&mc * models[j].alpha())) / noise)
        .collect();
    let gram = fill_symmetric(m, &pairs, &values);
    note(trace, "weight_gram", &gram);
    WeightSolution::solve(gram)
}

/// Weights for exact experts. Gram entries are
/// `α_iᵀ (K_{f_i f_j} + K_{f_i c} K_{c f_j}) α_j` with `α_i = K̃_i⁻¹ y_i`.
pub fn optimal_weights_exact(ens: &ExpertEnsemble) -> Result<WeightSolution> {
    let gps = exact_experts(ens, "optimal exact weights")?;
    let m = gps.len();
    let kernel = &ens.hp.kernel;
    // K_{c f_i} α_i for each expert.
    let central: Vec<DVector<f64>> = gps
        .par_iter()
        .map(|gp| Ok(kernel.matrix(&ens.central_x, &gp.data().x)? * gp.alpha()))
        .collect::<Result<_>>()?;
    let pairs = upper_pairs(m);
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let direct = kernel.bilinear(&gps[i].data().x, gps[i].alpha(), &gps[j].data().x, gps[j].alpha())?;
            Ok(direct + central[i].dot(&central[j]))
        })
        .collect::<Result<_>>()?;
    WeightSolution::solve(fill_symmetric(m, &pairs, &values))
}

/// Weights matching the ensemble's model kind.
pub fn optimal_weights(ens: &ExpertEnsemble) -> Result<WeightSolution> {
    match ens.kind {
        ModelKind::Exact => optimal_weights_exact(ens),
        ModelKind::Svgp => optimal_weights_svgp(ens),
    }
}

fn check_weights(ens: &ExpertEnsemble, w: &WeightSolution) -> Result<()> {
    if w.beta.len() != ens.len() {
        return Err(dim_mismatch(format!(
            "{} weights for {} experts",
            w.beta.len(),
            ens.len()
        )));
    }
    Ok(())
}

/// `μ = Σ β_i σ_ε⁻² K_*u α_i`, `σ² = Σ β_i² K_*u M_i⁻¹ K_u*`.
pub fn aggregate_opt_svgp(ens: &ExpertEnsemble, w: &WeightSolution, xs: &DMatrix<f64>) -> Result<GaussianPrediction> {
    aggregate_opt_svgp_traced(ens, w, xs, None)
}

/// As [`aggregate_opt_svgp`], recording matrix shapes.
pub fn aggregate_opt_svgp_traced(
    ens: &ExpertEnsemble,
    w: &WeightSolution,
    xs: &DMatrix<f64>,
    trace: Option<&ShapeTrace>,
) -> Result<GaussianPrediction> {
    let models = svgp_experts(ens, "optimal SVGP aggregation")?;
    check_weights(ens, w)?;
    let kus = models[0].inducing_fit().cross(&ens.hp.kernel, xs)?;
    note(trace, "test_cross", &kus);
    let parts: Vec<(DVector<f64>, DVector<f64>)> = models
        .par_iter()
        .map(|m| {
            let fit = m.inducing_fit();
            Ok((fit.mean_from_cross(&kus), fit.quadratic_terms(&kus, trace)?.1))
        })
        .collect::<Result<_>>()?;
    let mut mean = DVector::zeros(xs.nrows());
    let mut var = DVector::zeros(xs.nrows());
    for (b, (mu, e)) in w.beta.iter().zip(&parts) {
        mean.axpy(*b, mu, 1.0);
        var.axpy(b * b, e, 1.0);
    }
    GaussianPrediction::new(mean, var, false)
}

/// `μ = Σ β_i K_{*f_i} α_i`, `σ² = Σ β_i² K_{*f_i} K̃_i⁻¹ K_{f_i *}`.
pub fn aggregate_opt_exact(ens: &ExpertEnsemble, w: &WeightSolution, xs: &DMatrix<f64>) -> Result<GaussianPrediction> {
    let gps = exact_experts(ens, "optimal exact aggregation")?;
    check_weights(ens, w)?;
    let parts: Vec<(DVector<f64>, DVector<f64>)> =
        gps.par_iter().map(|gp| gp.mean_and_explained(xs)).collect::<Result<_>>()?;
    let mut mean = DVector::zeros(xs.nrows());
    let mut var = DVector::zeros(xs.nrows());
    for (b, (mu, e)) in w.beta.iter().zip(&parts) {
        mean.axpy(*b, mu, 1.0);
        var.axpy(b * b, e, 1.0);
    }
    GaussianPrediction::new(mean, var, false)
}

/// Optimal-weight aggregation matching the ensemble's model kind.
pub fn aggregate_opt(ens: &ExpertEnsemble, w: &WeightSolution, xs: &DMatrix<f64>) -> Result<GaussianPrediction> {
    match ens.kind {
        ModelKind::Exact => aggregate_opt_exact(ens, w, xs),
        ModelKind::Svgp => aggregate_opt_svgp(ens, w, xs),
    }
}

/// Predicts with any expert-fusing rule. [`Aggregator::Full`] is rejected:
/// a full model is not built from an ensemble.
pub fn aggregate(ens: &ExpertEnsemble, rule: Aggregator, xs: &DMatrix<f64>) -> Result<GaussianPrediction> {
    match rule {
        Aggregator::Poe => aggregate_poe_family(ens, xs, PoeRule::Poe),
        Aggregator::GPoe => aggregate_poe_family(ens, xs, PoeRule::GPoe),
        Aggregator::Bcm => aggregate_poe_family(ens, xs, PoeRule::Bcm),
        Aggregator::RBcm => aggregate_poe_family(ens, xs, PoeRule::RBcm),
        Aggregator::GrBcm => aggregate_grbcm(ens, xs),
        Aggregator::Npae => aggregate_npae(ens, xs),
        Aggregator::Opt => aggregate_opt(ens, &optimal_weights(ens)?, xs),
        Aggregator::Full => Err(Error::InvalidConfig("the full model is not an aggregation rule".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rbcm_weight_example() {
        // σ_** = 1 and σ_i² = e⁻² give β_i = 1: one expert then reproduces
        // its own precision with no correction.
        let v = (-2.0f64).exp();
        let c = poe_combine(PoeRule::RBcm, &[0.3], &[v], 1.0);
        assert!((c.variance - v).abs() < 1e-15);
        assert!((c.mean - 0.3).abs() < 1e-15);
    }

    #[test]
    fn identical_experts() {
        let c = poe_combine(PoeRule::Poe, &[0.2; 4], &[0.8; 4], 2.0);
        assert!((c.variance - 0.2).abs() < 1e-15);
        let g = poe_combine(PoeRule::GPoe, &[0.2; 4], &[0.8; 4], 2.0);
        assert!((g.variance - 0.8).abs() < 1e-15);
        assert!((g.mean - 0.2).abs() < 1e-15);
    }

    #[test]
    fn degenerate_precision_falls_back_to_prior() {
        // Experts vaguer than the prior make the correction overshoot.
        let c = poe_combine(PoeRule::Bcm, &[1.0; 3], &[10.0; 3], 1.0);
        assert!(c.degenerate);
        assert_eq!(c.variance, 1.0);
    }

    #[test]
    fn grbcm_single_augmented_expert() {
        let c = grbcm_combine(0.4, 0.9, &[0.7], &[0.3], 2.0);
        assert!((c.mean - 0.7).abs() < 1e-15);
        assert!((c.variance - 0.3).abs() < 1e-15);
    }

    #[test]
    fn aggregator_names_round_trip() {
        for a in Aggregator::ALL {
            assert_eq!(a.name().parse::<Aggregator>().unwrap(), a);
        }
        assert!("median".parse::<Aggregator>().is_err());
        assert!(!Aggregator::Npae.supports(ModelKind::Svgp));
    }
}
