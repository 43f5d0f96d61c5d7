//! Partitioning data across experts and distributed hyperparameter training.

use log::debug;
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exact_gp::ExactGp;
use crate::kernels::{HyperParam, Hyperparameters, KernelFamily};
use crate::svgp::{svgp_params, Svgp, SvgpParam};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionStrategy {
    /// Seeded shuffle, then contiguous split of the shuffled order.
    Random,
    /// Contiguous split of the original order.
    Contiguous,
}

/// Disjoint index sets covering `0..n`, sizes differing by at most one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub shards: Vec<Vec<usize>>,
    pub strategy: PartitionStrategy,
    pub seed: u64,
}

impl Partition {
    pub fn new(n: usize, experts: usize, strategy: PartitionStrategy, seed: u64) -> Result<Self> {
        if experts == 0 || experts > n {
            return Err(Error::TooManyExperts { experts, points: n });
        }
        let mut order: Vec<usize> = (0..n).collect();
        if strategy == PartitionStrategy::Random {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        let base = n / experts;
        let extra = n % experts;
        let mut shards = Vec::with_capacity(experts);
        let mut start = 0;
        for i in 0..experts {
            let len = base + usize::from(i < extra);
            shards.push(order[start..start + len].to_vec());
            start += len;
        }
        Ok(Partition { shards, strategy, seed })
    }

    pub fn experts(&self) -> usize {
        self.shards.len()
    }

    pub fn shard_data(&self, data: &Dataset) -> Result<Vec<Dataset>> {
        self.shards.iter().map(|s| data.subset(s)).collect()
    }
}

/// One training index drawn uniformly from each shard.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CentralSubset {
    pub indices: Vec<usize>,
}

impl CentralSubset {
    pub fn select(partition: &Partition, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let indices = partition
            .shards
            .iter()
            .map(|s| s[rng.random_range(0..s.len())])
            .collect();
        CentralSubset { indices }
    }
}

/// Local objective maximized during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Exact log marginal likelihood.
    ExactLml,
    /// Collapsed SVGP evidence lower bound, optionally also moving the
    /// inducing inputs.
    SvgpElbo { train_inducing: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMethod {
    /// Centralized Adam on the sum of independent local objectives.
    Fact,
    /// Rounds of local Adam steps followed by parameter averaging.
    FedAvg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: TrainMethod,
    pub iterations: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_epsilon: f64,
    pub local_steps_per_round: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: TrainMethod::Fact,
            iterations: 200,
            learning_rate: 0.1,
            adam_betas: (0.9, 0.999),
            adam_epsilon: 1e-8,
            local_steps_per_round: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        if self.local_steps_per_round == 0 {
            return bad("local steps per round must be at least 1");
        }
        if self.method == TrainMethod::FedAvg && !self.iterations.is_multiple_of(self.local_steps_per_round) {
            return bad("iterations must be a multiple of local steps per round");
        }
        Ok(())
    }

    /// Number of recorded rounds.
    pub fn rounds(&self) -> usize {
        match self.method {
            TrainMethod::Fact => self.iterations,
            TrainMethod::FedAvg => self.iterations / self.local_steps_per_round,
        }
    }
}

/// Adam state for maximizing an objective.
#[derive(Debug, Clone)]
pub struct Adam {
    m: DVector<f64>,
    v: DVector<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(dim: usize, config: &TrainConfig) -> Self {
        Adam {
            m: DVector::zeros(dim),
            v: DVector::zeros(dim),
            t: 0,
            lr: config.learning_rate,
            beta1: config.adam_betas.0,
            beta2: config.adam_betas.1,
            eps: config.adam_epsilon,
        }
    }

    /// Moves `theta` uphill along `grad`.
    pub fn ascend(&mut self, theta: &mut DVector<f64>, grad: &DVector<f64>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            theta[i] += self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Maps hyperparameters to the optimizer's unconstrained vector: logs of the
/// positive parameters, followed by raw inducing coordinates when trained.
#[derive(Debug, Clone)]
struct Parameterization {
    params: Vec<SvgpParam>,
}

impl Parameterization {
    fn new(hp: &Hyperparameters, objective: Objective) -> Self {
        let train_inducing = matches!(objective, Objective::SvgpElbo { train_inducing: true });
        Parameterization {
            params: svgp_params(hp, train_inducing),
        }
    }

    fn names(&self) -> Vec<String> {
        self.params
            .iter()
            .map(|p| match p {
                SvgpParam::Hyper(h) => h.to_string(),
                SvgpParam::Inducing { row, col } => format!("inducing_{row}_{col}"),
            })
            .collect()
    }

    fn encode(&self, hp: &Hyperparameters) -> Result<DVector<f64>> {
        let mut theta = DVector::zeros(self.params.len());
        for (i, &p) in self.params.iter().enumerate() {
            theta[i] = match p {
                SvgpParam::Hyper(h) => hp.get(h)?.ln(),
                SvgpParam::Inducing { row, col } => {
                    hp.inducing_inputs.as_ref().expect("inducing inputs present")[(row, col)]
                }
            };
        }
        Ok(theta)
    }

    fn decode(&self, template: &Hyperparameters, theta: &DVector<f64>) -> Result<Hyperparameters> {
        let mut hp = template.clone();
        for (i, &p) in self.params.iter().enumerate() {
            match p {
                SvgpParam::Hyper(h) => hp = hp.with_param(h, theta[i].exp())?,
                SvgpParam::Inducing { row, col } => {
                    hp.inducing_inputs.as_mut().expect("inducing inputs present")[(row, col)] = theta[i];
                }
            }
        }
        Ok(hp)
    }

    /// Converts raw-parameter gradients into gradients of the encoded vector.
    fn chain(&self, hp: &Hyperparameters, raw: &[f64]) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(raw.len());
        for (i, &p) in self.params.iter().enumerate() {
            g[i] = match p {
                SvgpParam::Hyper(h) => raw[i] * hp.get(h)?,
                SvgpParam::Inducing { .. } => raw[i],
            };
        }
        Ok(g)
    }
}

/// Relative step for finite-difference derivatives the kernel lacks.
const LML_FD_STEP: f64 = 1e-5;

/// Local objective value and raw-parameter gradient on one shard.
fn local_objective(
    data: &Dataset,
    hp: &Hyperparameters,
    objective: Objective,
    params: &[SvgpParam],
) -> Result<(f64, Vec<f64>)> {
    match objective {
        Objective::ExactLml => {
            let gp = ExactGp::fit(hp, data)?;
            let hyper: Vec<HyperParam> = params
                .iter()
                .map(|p| match p {
                    SvgpParam::Hyper(h) => *h,
                    SvgpParam::Inducing { .. } => unreachable!("exact objective has no inducing inputs"),
                })
                .collect();
            let analytic: Vec<HyperParam> = hyper.iter().copied().filter(|&h| !needs_fd(hp, h)).collect();
            let mut closed = gp.lml_gradients(&analytic)?.into_iter();
            let grad = hyper
                .iter()
                .map(|&h| {
                    if needs_fd(hp, h) {
                        lml_fd(hp, data, h)
                    } else {
                        Ok(closed.next().expect("one gradient per analytic parameter"))
                    }
                })
                .collect::<Result<_>>()?;
            Ok((gp.log_marginal_likelihood(), grad))
        }
        Objective::SvgpElbo { .. } => {
            let model = Svgp::fit(hp, data)?;
            Ok((model.elbo(), model.elbo_gradient(params)?))
        }
    }
}

fn needs_fd(hp: &Hyperparameters, p: HyperParam) -> bool {
    matches!((hp.kernel.family(), p), (KernelFamily::Matern32, HyperParam::Lengthscale(_)))
}

fn lml_fd(hp: &Hyperparameters, data: &Dataset, p: HyperParam) -> Result<f64> {
    let theta = hp.get(p)?;
    let h = LML_FD_STEP * theta;
    let up = ExactGp::fit(&hp.with_param(p, theta + h)?, data)?.log_marginal_likelihood();
    let down = ExactGp::fit(&hp.with_param(p, theta - h)?, data)?.log_marginal_likelihood();
    Ok((up - down) / (2.0 * h))
}

/// Sum of local objectives and of their raw-parameter gradients, evaluated
/// in parallel and reduced in shard order.
fn summed_objective(
    shards: &[Dataset],
    hp: &Hyperparameters,
    objective: Objective,
    params: &[SvgpParam],
) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<(f64, Vec<f64>)> = shards
        .par_iter()
        .map(|s| local_objective(s, hp, objective, params))
        .collect::<Result<_>>()?;
    let mut value = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (v, g) in parts {
        value += v;
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc += x;
        }
    }
    Ok((value, grad))
}

/// Objective value and gradient of the sum of independent local exact log
/// marginal likelihoods, with gradients ordered as [`Hyperparameters::params`].
pub fn fact_objective(shards: &[Dataset], hp: &Hyperparameters) -> Result<(f64, Vec<f64>)> {
    let params: Vec<SvgpParam> = hp.params().into_iter().map(SvgpParam::Hyper).collect();
    summed_objective(shards, hp, Objective::ExactLml, &params)
}

/// Parameter values after one round of training.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    /// Raw (not log) parameter values.
    pub values: Vec<f64>,
    /// Summed objective at the start of the round.
    pub objective: f64,
    /// Largest per-parameter range across experts before averaging; zero
    /// for centralized training.
    pub spread: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub hyperparameters: Hyperparameters,
    pub parameter_names: Vec<String>,
    pub trace: Vec<TraceRow>,
}

/// Trains shared hyperparameters over the given shards.
pub fn train(
    shards: &[Dataset],
    initial: &Hyperparameters,
    config: &TrainConfig,
    objective: Objective,
) -> Result<TrainResult> {
    config.validate()?;
    initial.validate()?;
    if shards.is_empty() {
        return Err(Error::TooFewExperts {
            rule: "training",
            required: 1,
            experts: 0,
        });
    }
    if matches!(objective, Objective::SvgpElbo { .. }) && initial.inducing_inputs.is_none() {
        return Err(Error::InvalidHyperparameters("SVGP training needs inducing inputs".into()));
    }
    let param = Parameterization::new(initial, objective);
    let mut theta = param.encode(initial)?;
    let mut trace = Vec::with_capacity(config.rounds());

    match config.method {
        TrainMethod::Fact => {
            let mut adam = Adam::new(theta.len(), config);
            for step in 0..config.iterations {
                let hp = param.decode(initial, &theta)?;
                let (value, raw) = summed_objective(shards, &hp, objective, &param.params)?;
                let grad = param.chain(&hp, &raw)?;
                check_finite(step, value, &grad)?;
                adam.ascend(&mut theta, &grad);
                check_finite(step, value, &theta)?;
                let hp = param.decode(initial, &theta)?;
                trace.push(TraceRow {
                    round: step + 1,
                    values: raw_values(&param, &hp)?,
                    objective: value,
                    spread: 0.0,
                });
                debug!("FACT step {}: objective {value:.6}", step + 1);
            }
        }
        TrainMethod::FedAvg => {
            let mut states: Vec<Adam> = shards.iter().map(|_| Adam::new(theta.len(), config)).collect();
            for round in 0..config.rounds() {
                let start = theta.clone();
                let results: Vec<(f64, DVector<f64>, Adam)> = shards
                    .par_iter()
                    .zip(states.par_iter())
                    .map(|(shard, state)| {
                        let mut local = start.clone();
                        let mut adam = state.clone();
                        let mut first = f64::NAN;
                        for k in 0..config.local_steps_per_round {
                            let step = round * config.local_steps_per_round + k;
                            let hp = param.decode(initial, &local)?;
                            let (value, raw) =
                                local_objective(shard, &hp, objective, &param.params)?;
                            let grad = param.chain(&hp, &raw)?;
                            check_finite(step, value, &grad)?;
                            if k == 0 {
                                first = value;
                            }
                            adam.ascend(&mut local, &grad);
                            check_finite(step, value, &local)?;
                        }
                        Ok((first, local, adam))
                    })
                    .collect::<Result<_>>()?;
                let mut sum = DVector::zeros(theta.len());
                let mut value = 0.0;
                let mut lo = DVector::from_element(theta.len(), f64::INFINITY);
                let mut hi = DVector::from_element(theta.len(), f64::NEG_INFINITY);
                for (i, (v, local, adam)) in results.into_iter().enumerate() {
                    value += v;
                    sum += &local;
                    lo = lo.zip_map(&local, f64::min);
                    hi = hi.zip_map(&local, f64::max);
                    states[i] = adam;
                }
                theta = sum / shards.len() as f64;
                let spread = (hi - lo).amax();
                let hp = param.decode(initial, &theta)?;
                trace.push(TraceRow {
                    round: round + 1,
                    values: raw_values(&param, &hp)?,
                    objective: value,
                    spread,
                });
                debug!("FedAvg round {}: objective {value:.6}, spread {spread:e}", round + 1);
            }
        }
    }
    Ok(TrainResult {
        hyperparameters: param.decode(initial, &theta)?,
        parameter_names: param.names(),
        trace,
    })
}

fn raw_values(param: &Parameterization, hp: &Hyperparameters) -> Result<Vec<f64>> {
    param
        .params
        .iter()
        .map(|&p| match p {
            SvgpParam::Hyper(h) => hp.get(h),
            SvgpParam::Inducing { row, col } => {
                Ok(hp.inducing_inputs.as_ref().expect("inducing inputs present")[(row, col)])
            }
        })
        .collect()
}

fn check_finite(step: usize, value: f64, v: &DVector<f64>) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::Diverged {
            step,
            detail: format!("objective is {value}"),
        });
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::Diverged {
            step,
            detail: format!("parameter became {x}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use distgp_testkit::{random_points, random_vector};

    #[test]
    fn contiguous_split() {
        let p = Partition::new(10, 2, PartitionStrategy::Contiguous, 0).unwrap();
        assert_eq!(p.shards, vec![(0..5).collect::<Vec<_>>(), (5..10).collect()]);
        let p = Partition::new(10, 10, PartitionStrategy::Contiguous, 0).unwrap();
        assert!(p.shards.iter().enumerate().all(|(i, s)| s == &vec![i]));
    }

    #[test]
    fn random_split_sizes() {
        let p = Partition::new(10, 3, PartitionStrategy::Random, 1).unwrap();
        let mut sizes: Vec<usize> = p.shards.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
        let mut all: Vec<usize> = p.shards.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(p, Partition::new(10, 3, PartitionStrategy::Random, 1).unwrap());
        assert!(matches!(
            Partition::new(3, 4, PartitionStrategy::Random, 1),
            Err(Error::TooManyExperts { .. })
        ));
    }

    #[test]
    fn central_subset_draws_from_each_shard() {
        let p = Partition::new(50, 5, PartitionStrategy::Random, 3).unwrap();
        let c = CentralSubset::select(&p, 8);
        assert_eq!(c.indices.len(), 5);
        for (i, s) in c.indices.iter().zip(&p.shards) {
            assert!(s.contains(i));
        }
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig {
            method: TrainMethod::FedAvg,
            iterations: 10,
            local_steps_per_round: 3,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        c.local_steps_per_round = 5;
        assert!(c.validate().is_ok());
        assert_eq!(c.rounds(), 2);
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(2, &cfg);
        let mut theta = DVector::from_vec(vec![0.0, 1.0]);
        adam.ascend(&mut theta, &DVector::from_vec(vec![3.0, -0.5]));
        assert!((theta[0] - 0.1).abs() < 1e-8);
        assert!((theta[1] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn trace_length_matches_rounds() {
        let x = random_points(30, 1, 0.0, 1.0, 1);
        let data = Dataset::new(x, random_vector(30, 2)).unwrap();
        let shards = Partition::new(30, 3, PartitionStrategy::Contiguous, 0)
            .unwrap()
            .shard_data(&data)
            .unwrap();
        let hp = Hyperparameters::new(KernelSpec::rbf(vec![0.5], 1.0).unwrap(), 0.1).unwrap();
        let cfg = TrainConfig {
            method: TrainMethod::FedAvg,
            iterations: 12,
            local_steps_per_round: 4,
            ..TrainConfig::default()
        };
        let r = train(&shards, &hp, &cfg, Objective::ExactLml).unwrap();
        assert_eq!(r.trace.len(), 3);
        assert_eq!(r.parameter_names, vec!["lengthscale_0", "signal_variance", "noise_variance"]);
    }
}
