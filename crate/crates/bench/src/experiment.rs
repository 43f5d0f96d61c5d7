//! Experiment orchestration: data generation, model fitting, prediction and
//! metric collection for every configured cell.

use std::fs;
use std::path::Path;
use std::time::Instant;

use distgp_core::aggregation::{aggregate, optimal_weights, aggregate_opt, Expert};
use distgp_core::data::sample_gp_prior;
use distgp_core::experts::{train, Objective, TrainResult};
use distgp_core::sparse_grid::opticom_coefficients;
use distgp_core::{
    Aggregator, CentralSubset, Dataset, ExpertEnsemble, GaussianPrediction, HyperParam, Hyperparameters,
    InducingInit, KernelFamily, KernelSpec, ModelKind, Partition, PartitionStrategy, TrainConfig, TrainMethod,
};
use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, SourceFunction, SyntheticSpec, Task};
use crate::error::{BenchError, Result};
use crate::ingest::{ingest_csv, Standardization};
use crate::metrics;

/// One evaluated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub aggregator: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub n_i: usize,
    pub seed: u64,
    pub lengthscale: f64,
    pub rmse: f64,
    pub nlpd: f64,
    pub predict_seconds: f64,
    pub train_seconds: f64,
}

pub const METRIC_COLUMNS: [&str; 9] = [
    "aggregator",
    "M",
    "n_i",
    "seed",
    "lengthscale",
    "rmse",
    "nlpd",
    "predict_seconds",
    "train_seconds",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellError {
    pub aggregator: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    pub lengthscale: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub method: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    pub round: usize,
    pub parameter: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<MetricRow>,
    pub errors: Vec<CellError>,
    pub traces: Vec<TraceRecord>,
}

/// Training inputs and targets plus test inputs with their reference values.
#[derive(Debug, Clone)]
pub struct Problem {
    pub train: Dataset,
    pub test_x: DMatrix<f64>,
    pub test_y: DVector<f64>,
    pub bounds: Vec<(f64, f64)>,
    pub standardization: Option<Standardization>,
}

/// Independent seed for one purpose derived from a cell seed.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const DATA_STREAM: u64 = 1;
const PARTITION_STREAM: u64 = 2;
const CENTRAL_STREAM: u64 = 3;
const INDUCING_STREAM: u64 = 4;
const SPLIT_STREAM: u64 = 5;

/// Evenly spaced grid with `per_dim` points per axis, endpoints included,
/// first coordinate varying slowest.
pub fn lattice(per_dim: usize, bounds: &[(f64, f64)]) -> DMatrix<f64> {
    let d = bounds.len();
    let total = per_dim.pow(d as u32);
    let coord = |k: usize, (lo, hi): (f64, f64)| {
        if per_dim == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * k as f64 / (per_dim - 1) as f64
        }
    };
    DMatrix::from_fn(total, d, |i, j| {
        let k = (i / per_dim.pow((d - 1 - j) as u32)) % per_dim;
        coord(k, bounds[j])
    })
}

fn uniform_points(n: usize, bounds: &[(f64, f64)], rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, bounds.len());
    for i in 0..n {
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            x[(i, j)] = rng.random_range(lo..hi);
        }
    }
    x
}

fn truth_hyperparameters(spec: &SyntheticSpec, kernel: KernelFamily) -> Result<Hyperparameters> {
    Ok(Hyperparameters::new(
        KernelSpec::new(kernel, spec.truth_lengthscales.clone(), spec.truth_signal_variance)?,
        spec.truth_noise_variance,
    )?)
}

/// Builds the synthetic problem for one seed.
pub fn synthetic_problem(spec: &SyntheticSpec, kernel: KernelFamily, seed: u64) -> Result<Problem> {
    let bounds = spec.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, DATA_STREAM));
    let train_x = uniform_points(spec.n, &bounds, &mut rng);
    let test_x = if spec.test_lattice {
        let per_dim = (spec.n_test as f64).powf(1.0 / spec.dim as f64).round().max(1.0) as usize;
        let grid = lattice(per_dim, &bounds);
        if grid.nrows() != spec.n_test {
            warn!("test lattice has {} points (requested {})", grid.nrows(), spec.n_test);
        }
        grid
    } else {
        uniform_points(spec.n_test, &bounds, &mut rng)
    };
    let (train_f, test_y) = match spec.function {
        SourceFunction::Test(f) => (f.eval_rows(&train_x), f.eval_rows(&test_x)),
        SourceFunction::GpSample => {
            // One joint latent draw; noise is added to the training part below.
            let truth = truth_hyperparameters(spec, kernel)?;
            let latent = truth.with_param(HyperParam::NoiseVariance, 1e-8 * spec.truth_signal_variance)?;
            let all = DMatrix::from_fn(train_x.nrows() + test_x.nrows(), spec.dim, |i, j| {
                if i < train_x.nrows() {
                    train_x[(i, j)]
                } else {
                    test_x[(i - train_x.nrows(), j)]
                }
            });
            let f = sample_gp_prior(&latent, &all, rng.next_u64())?;
            (f.rows(0, spec.n).into_owned(), f.rows(spec.n, test_x.nrows()).into_owned())
        }
    };
    let noise_var = match spec.function {
        SourceFunction::GpSample => spec.truth_noise_variance,
        SourceFunction::Test(_) => spec.noise_variance,
    };
    let noise = Normal::new(0.0, noise_var.sqrt()).map_err(|e| BenchError::Config(e.to_string()))?;
    let train_y = train_f.map(|v| v + noise.sample(&mut rng));
    Ok(Problem {
        train: Dataset::new(train_x, train_y)?,
        test_x,
        test_y,
        bounds,
        standardization: None,
    })
}

fn data_bounds(x: &DMatrix<f64>) -> Vec<(f64, f64)> {
    (0..x.ncols())
        .map(|j| {
            let col = x.column(j);
            let (lo, hi) = (col.min(), col.max());
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        })
        .collect()
}

/// Loads or generates the problem for one seed.
pub fn load_problem(cfg: &ExperimentConfig, seed: u64) -> Result<Problem> {
    match &cfg.data {
        DataSource::Synthetic(spec) => synthetic_problem(spec, cfg.kernel, seed),
        DataSource::Csv {
            path,
            target,
            split,
            standardize,
        } => {
            let d = ingest_csv(path, target, *split, sub_seed(seed, SPLIT_STREAM), *standardize)?;
            Ok(Problem {
                bounds: data_bounds(&d.train.x),
                test_x: d.test.x,
                test_y: d.test.y,
                train: d.train,
                standardization: d.standardization,
            })
        }
    }
}

/// Shared hyperparameters for one cell: isotropic `lengthscale`, configured
/// variances and, for sparse models, seeded inducing inputs in the data box.
pub fn cell_hyperparameters(cfg: &ExperimentConfig, problem: &Problem, lengthscale: f64, seed: u64) -> Result<Hyperparameters> {
    let kernel = KernelSpec::isotropic(cfg.kernel, problem.train.dim(), lengthscale, cfg.signal_variance)?;
    let hp = Hyperparameters::new(kernel, cfg.noise_variance)?;
    match cfg.model {
        ModelKind::Exact => Ok(hp),
        ModelKind::Svgp => {
            let z = InducingInit::UniformBox {
                m: cfg.inducing,
                bounds: problem.bounds.clone(),
                seed: sub_seed(seed, INDUCING_STREAM),
            }
            .generate(&problem.train.x)?;
            Ok(hp.with_inducing(z)?)
        }
    }
}

/// Rescales a prediction made in standardized units.
fn to_data_units(pred: GaussianPrediction, s: Option<&Standardization>) -> GaussianPrediction {
    match s {
        None => pred,
        Some(s) => GaussianPrediction {
            mean: s.restore_y(&pred.mean),
            variance: s.restore_variance(&pred.variance),
            covariance: pred.covariance.map(|c| c * (s.y_std * s.y_std)),
            ..pred
        },
    }
}

fn truth_in_data_units(problem: &Problem) -> DVector<f64> {
    match &problem.standardization {
        None => problem.test_y.clone(),
        Some(s) => s.restore_y(&problem.test_y),
    }
}

fn noise_in_data_units(cfg: &ExperimentConfig, problem: &Problem) -> f64 {
    match &problem.standardization {
        None => cfg.noise_variance,
        Some(s) => cfg.noise_variance * s.y_std * s.y_std,
    }
}

struct Scored {
    rmse: f64,
    nlpd: f64,
}

fn score(cfg: &ExperimentConfig, problem: &Problem, pred: GaussianPrediction) -> Result<(Scored, GaussianPrediction)> {
    let pred = to_data_units(pred, problem.standardization.as_ref());
    let truth = truth_in_data_units(problem);
    let rmse = metrics::rmse(&pred.mean, &truth)?;
    let nlpd = metrics::nlpd(&pred, &truth, noise_in_data_units(cfg, problem), cfg.add_noise_to_nlpd)?;
    Ok((Scored { rmse, nlpd }, pred))
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

/// Result of one prediction run.
#[derive(Debug, Clone)]
pub struct PredictOutcome {
    pub row: MetricRow,
    /// Prediction in data units.
    pub prediction: GaussianPrediction,
}

/// Fits the ensemble for `experts` shards and predicts with each rule in
/// `rules`. Entries are in the order of `rules`.
pub fn predict_rules(
    cfg: &ExperimentConfig,
    problem: &Problem,
    hp: &Hyperparameters,
    experts: usize,
    seed: u64,
    rules: &[Aggregator],
) -> Vec<(Aggregator, Result<PredictOutcome>)> {
    let n = problem.train.len();
    let lengthscale = hp.kernel.lengthscales()[0];
    let row = |rule: Aggregator, m: usize, n_i: usize, s: Scored, predict: f64, train: f64| MetricRow {
        aggregator: rule.name().to_string(),
        m,
        n_i,
        seed,
        lengthscale,
        rmse: s.rmse,
        nlpd: s.nlpd,
        predict_seconds: predict,
        train_seconds: train,
    };

    let mut out = Vec::with_capacity(rules.len());
    let fused: Vec<Aggregator> = rules.iter().copied().filter(|r| *r != Aggregator::Full).collect();
    let ensemble = if fused.is_empty() {
        None
    } else {
        Some(timed(|| {
            let partition = Partition::new(n, experts, PartitionStrategy::Random, sub_seed(seed, PARTITION_STREAM))?;
            let central = CentralSubset::select(&partition, sub_seed(seed, CENTRAL_STREAM));
            Ok(ExpertEnsemble::fit(&problem.train, hp, cfg.model, partition, central)?)
        }))
    };

    for &rule in rules {
        let result = if rule == Aggregator::Full {
            (|| {
                let (model, fit_s) = timed(|| Ok(Expert::fit(cfg.model, hp, &problem.train)?))?;
                let (pred, pred_s) = timed(|| Ok(model.predict(&problem.test_x)?))?;
                let (s, prediction) = score(cfg, problem, pred)?;
                Ok(PredictOutcome {
                    row: row(rule, 1, n, s, pred_s, fit_s),
                    prediction,
                })
            })()
        } else {
            match ensemble.as_ref().expect("ensemble fitted for fused rules") {
                Err(e) => Err(BenchError::Config(format!("ensemble fit failed: {e}"))),
                Ok((ens, fit_s)) => (|| {
                    let n_i = n / experts;
                    let (pred, pred_s, extra) = if rule == Aggregator::Opt {
                        let (w, w_s) = timed(|| Ok(optimal_weights(ens)?))?;
                        let (pred, pred_s) = timed(|| Ok(aggregate_opt(ens, &w, &problem.test_x)?))?;
                        (pred, pred_s, w_s)
                    } else {
                        let (pred, pred_s) = timed(|| Ok(aggregate(ens, rule, &problem.test_x)?))?;
                        (pred, pred_s, 0.0)
                    };
                    let (s, prediction) = score(cfg, problem, pred)?;
                    Ok(PredictOutcome {
                        row: row(rule, experts, n_i, s, pred_s, fit_s + extra),
                        prediction,
                    })
                })(),
            }
        };
        out.push((rule, result));
    }
    out
}

fn failed_row(aggregator: &str, m: usize, n_i: usize, seed: u64, lengthscale: f64) -> MetricRow {
    MetricRow {
        aggregator: aggregator.to_string(),
        m,
        n_i,
        seed,
        lengthscale,
        rmse: f64::NAN,
        nlpd: f64::NAN,
        predict_seconds: f64::NAN,
        train_seconds: f64::NAN,
    }
}

fn record(out: &mut ExperimentOutput, result: Result<MetricRow>, fallback: MetricRow) {
    match result {
        Ok(row) => out.rows.push(row),
        Err(e) => {
            warn!("cell {} M={} seed={} failed: {e}", fallback.aggregator, fallback.m, fallback.seed);
            out.errors.push(CellError {
                aggregator: fallback.aggregator.clone(),
                m: fallback.m,
                seed: fallback.seed,
                lengthscale: fallback.lengthscale,
                message: e.to_string(),
            });
            out.rows.push(fallback);
        }
    }
}

fn run_sweep(cfg: &ExperimentConfig, out: &mut ExperimentOutput) {
    let has_full = cfg.aggregators.contains(&Aggregator::Full);
    let fused: Vec<Aggregator> = cfg.aggregators.iter().copied().filter(|a| *a != Aggregator::Full).collect();
    for &seed in &cfg.seeds {
        let problem = match load_problem(cfg, seed) {
            Ok(p) => p,
            Err(e) => {
                for &a in &cfg.aggregators {
                    record(out, Err(BenchError::Config(format!("data: {e}"))), failed_row(a.name(), 0, 0, seed, f64::NAN));
                }
                continue;
            }
        };
        let n = problem.train.len();
        for &l in &cfg.lengthscales {
            let hp = match cell_hyperparameters(cfg, &problem, l, seed) {
                Ok(hp) => hp,
                Err(e) => {
                    let msg = e.to_string();
                    for &a in &cfg.aggregators {
                        record(out, Err(BenchError::Config(msg.clone())), failed_row(a.name(), 0, 0, seed, l));
                    }
                    continue;
                }
            };
            if has_full {
                let (_, r) = predict_rules(cfg, &problem, &hp, 1, seed, &[Aggregator::Full]).remove(0);
                record(out, r.map(|o| o.row), failed_row("full", 1, n, seed, l));
                info!("seed {seed} lengthscale {l}: full model done");
            }
            for &m in &cfg.experts {
                for (rule, r) in predict_rules(cfg, &problem, &hp, m, seed, &fused) {
                    record(out, r.map(|o| o.row), failed_row(rule.name(), m, n / m.max(1), seed, l));
                }
                info!("seed {seed} lengthscale {l}: M={m} done");
            }
        }
    }
}

fn run_opticom(cfg: &ExperimentConfig, out: &mut ExperimentOutput) {
    for &seed in &cfg.seeds {
        let problem = match load_problem(cfg, seed) {
            Ok(p) => p,
            Err(e) => {
                record(out, Err(e), failed_row("opticom", 0, 0, seed, f64::NAN));
                continue;
            }
        };
        let n = problem.train.len();
        for &l in &cfg.lengthscales {
            for &level in &cfg.levels {
                let cell = || -> Result<(MetricRow, MetricRow)> {
                    let kernel = KernelSpec::isotropic(cfg.kernel, problem.train.dim(), l, cfg.signal_variance)?;
                    let hp = Hyperparameters::new(kernel, cfg.noise_variance)?;
                    let (sol, fit_s) = timed(|| Ok(opticom_coefficients(&problem.train, &hp, level, &problem.bounds)?))?;
                    let full = sol.posterior(&problem.test_x)?;
                    let (opt_mean, opt_s) = timed(|| Ok(sol.mean_with(&problem.test_x, &sol.coefficients)?))?;
                    let (ct_mean, ct_s) = timed(|| Ok(sol.mean_with(&problem.test_x, &sol.ct_coefficients())?))?;
                    let make = |name: &str, mean: DVector<f64>, secs: f64| -> Result<MetricRow> {
                        let pred = GaussianPrediction {
                            mean,
                            ..full.clone()
                        };
                        let (s, _) = score(cfg, &problem, pred)?;
                        Ok(MetricRow {
                            aggregator: name.into(),
                            m: level as usize,
                            n_i: n,
                            seed,
                            lengthscale: l,
                            rmse: s.rmse,
                            nlpd: s.nlpd,
                            predict_seconds: secs,
                            train_seconds: fit_s,
                        })
                    };
                    Ok((make("opticom", opt_mean, opt_s)?, make("ct", ct_mean, ct_s)?))
                };
                match cell() {
                    Ok((a, b)) => {
                        out.rows.push(a);
                        out.rows.push(b);
                    }
                    Err(e) => {
                        let msg = e.to_string();
                        record(out, Err(e), failed_row("opticom", level as usize, n, seed, l));
                        record(out, Err(BenchError::Config(msg)), failed_row("ct", level as usize, n, seed, l));
                    }
                }
            }
            info!("seed {seed} lengthscale {l}: all levels done");
        }
    }
}

pub fn method_name(m: TrainMethod) -> &'static str {
    match m {
        TrainMethod::Fact => "fact",
        TrainMethod::FedAvg => "fedavg",
    }
}

/// Initial hyperparameters for training runs.
pub fn initial_hyperparameters(cfg: &ExperimentConfig, problem: &Problem, seed: u64) -> Result<Hyperparameters> {
    let d = problem.train.dim();
    let ls = cfg
        .train
        .initial_lengthscales
        .clone()
        .unwrap_or_else(|| vec![cfg.lengthscales[0]; d]);
    let kernel = KernelSpec::new(cfg.kernel, ls, cfg.train.initial_signal_variance)?;
    let hp = Hyperparameters::new(kernel, cfg.train.initial_noise_variance)?;
    Ok(match cfg.model {
        ModelKind::Exact => hp,
        ModelKind::Svgp => {
            let z = InducingInit::UniformBox {
                m: cfg.inducing,
                bounds: problem.bounds.clone(),
                seed: sub_seed(seed, INDUCING_STREAM),
            }
            .generate(&problem.train.x)?;
            hp.with_inducing(z)?
        }
    })
}

pub fn train_config(cfg: &ExperimentConfig, method: TrainMethod) -> TrainConfig {
    TrainConfig {
        method,
        iterations: cfg.train.iterations,
        learning_rate: cfg.train.learning_rate,
        local_steps_per_round: cfg.train.local_steps,
        ..TrainConfig::default()
    }
}

pub fn objective(cfg: &ExperimentConfig) -> Objective {
    match cfg.model {
        ModelKind::Exact => Objective::ExactLml,
        ModelKind::Svgp => Objective::SvgpElbo {
            train_inducing: cfg.train.train_inducing,
        },
    }
}

/// Runs one distributed training job.
pub fn train_once(
    cfg: &ExperimentConfig,
    problem: &Problem,
    experts: usize,
    method: TrainMethod,
    seed: u64,
) -> Result<(TrainResult, f64)> {
    let partition = Partition::new(problem.train.len(), experts, PartitionStrategy::Random, sub_seed(seed, PARTITION_STREAM))?;
    let shards = partition.shard_data(&problem.train)?;
    let initial = initial_hyperparameters(cfg, problem, seed)?;
    timed(|| Ok(train(&shards, &initial, &train_config(cfg, method), objective(cfg))?))
}

/// Root mean square log-ratio between trained and reference kernel and
/// noise parameters.
pub fn parameter_error(trained: &Hyperparameters, truth: &Hyperparameters) -> Result<f64> {
    let params = truth.params();
    let mut sum = 0.0;
    for &p in &params {
        let r = (trained.get(p)? / truth.get(p)?).ln();
        sum += r * r;
    }
    Ok((sum / params.len() as f64).sqrt())
}

fn run_train_compare(cfg: &ExperimentConfig, out: &mut ExperimentOutput) {
    for &seed in &cfg.seeds {
        let problem = match load_problem(cfg, seed) {
            Ok(p) => p,
            Err(e) => {
                record(out, Err(e), failed_row("train", 0, 0, seed, f64::NAN));
                continue;
            }
        };
        let n = problem.train.len();
        let truth = match &cfg.data {
            DataSource::Synthetic(spec) => truth_hyperparameters(spec, cfg.kernel).ok(),
            DataSource::Csv { .. } => None,
        };
        for &m in &cfg.experts {
            for &method in &cfg.train.methods {
                let name = method_name(method);
                let r = (|| {
                    let (result, secs) = train_once(cfg, &problem, m, method, seed)?;
                    for row in &result.trace {
                        for (p, v) in result.parameter_names.iter().zip(&row.values) {
                            out.traces.push(TraceRecord {
                                method: name.into(),
                                m,
                                seed,
                                round: row.round,
                                parameter: p.clone(),
                                value: *v,
                            });
                        }
                    }
                    let hp = &result.hyperparameters;
                    let last = result.trace.last().map(|r| r.objective).unwrap_or(f64::NAN);
                    Ok(MetricRow {
                        aggregator: name.into(),
                        m,
                        n_i: n / m,
                        seed,
                        lengthscale: hp.kernel.lengthscales()[0],
                        rmse: match &truth {
                            Some(t) => parameter_error(hp, t)?,
                            None => f64::NAN,
                        },
                        nlpd: -last / n as f64,
                        predict_seconds: 0.0,
                        train_seconds: secs,
                    })
                })();
                record(out, r, failed_row(name, m, n / m.max(1), seed, f64::NAN));
                info!("seed {seed}: {name} with M={m} done");
            }
        }
    }
}

/// Runs every cell of the configured task. Failing cells become rows with
/// NaN metrics plus an entry in `errors`; the run continues.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let mut out = ExperimentOutput::default();
    match cfg.task {
        Task::AggregationSweep | Task::Predict => run_sweep(cfg, &mut out),
        Task::OptiComVsCt => run_opticom(cfg, &mut out),
        Task::TrainCompare => run_train_compare(cfg, &mut out),
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation of the finite values.
    pub fn of(values: impl Iterator<Item = f64>) -> Stat {
        let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Stat {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub aggregator: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub count: usize,
    pub failed: usize,
    pub rmse: Stat,
    pub nlpd: Stat,
    pub predict_seconds: Stat,
    pub train_seconds: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub groups: Vec<GroupSummary>,
    pub errors: Vec<CellError>,
}

/// Mean and standard deviation per (aggregator, M), in order of first
/// appearance.
pub fn summarize(out: &ExperimentOutput) -> Summary {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in &out.rows {
        let k = (r.aggregator.clone(), r.m);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let groups = keys
        .into_iter()
        .map(|(a, m)| {
            let rows: Vec<&MetricRow> = out.rows.iter().filter(|r| r.aggregator == a && r.m == m).collect();
            GroupSummary {
                count: rows.len(),
                failed: rows.iter().filter(|r| !r.rmse.is_finite()).count(),
                rmse: Stat::of(rows.iter().map(|r| r.rmse)),
                nlpd: Stat::of(rows.iter().map(|r| r.nlpd)),
                predict_seconds: Stat::of(rows.iter().map(|r| r.predict_seconds)),
                train_seconds: Stat::of(rows.iter().map(|r| r.train_seconds)),
                aggregator: a,
                m,
            }
        })
        .collect();
    Summary {
        groups,
        errors: out.errors.clone(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))
}

/// Writes `metrics.csv`, `summary.json` and, for training tasks, `trace.csv`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let metrics = dir.join("metrics.csv");
    if out.rows.is_empty() {
        fs::write(&metrics, METRIC_COLUMNS.join(",") + "\n").map_err(|e| BenchError::io(&metrics, e))?;
    } else {
        write_rows(&metrics, &out.rows)?;
    }
    let summary = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summarize(out))?;
    fs::write(&summary, text).map_err(|e| BenchError::io(&summary, e))?;
    if !out.traces.is_empty() {
        write_rows(&dir.join("trace.csv"), &out.traces)?;
    }
    Ok(())
}

/// Hyperparameter file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterFile {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inducing_inputs: Option<Vec<Vec<f64>>>,
}

impl HyperparameterFile {
    pub fn from_hyperparameters(hp: &Hyperparameters) -> Self {
        HyperparameterFile {
            lengthscales: hp.kernel.lengthscales().to_vec(),
            signal_variance: hp.kernel.signal_variance(),
            noise_variance: hp.noise_variance,
            inducing_inputs: hp
                .inducing_inputs
                .as_ref()
                .map(|z| z.row_iter().map(|r| r.iter().copied().collect()).collect()),
        }
    }

    pub fn to_hyperparameters(&self, family: KernelFamily) -> Result<Hyperparameters> {
        let hp = Hyperparameters::new(
            KernelSpec::new(family, self.lengthscales.clone(), self.signal_variance)?,
            self.noise_variance,
        )?;
        match &self.inducing_inputs {
            None => Ok(hp),
            Some(rows) => {
                let d = self.lengthscales.len();
                if rows.iter().any(|r| r.len() != d) {
                    return Err(BenchError::Config("inducing input rows must match the lengthscale count".into()));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Ok(hp.with_inducing(DMatrix::from_row_slice(rows.len(), d, &flat))?)
            }
        }
    }
}

/// Writes test inputs, predictive mean and variance, and reference values.
pub fn write_predictions(path: &Path, x: &DMatrix<f64>, pred: &GaussianPrediction, truth: &DVector<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
    header.extend(["mean", "variance", "truth"].map(String::from));
    w.write_record(&header)?;
    for i in 0..x.nrows() {
        let mut rec: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(pred.mean[i].to_string());
        rec.push(pred.variance[i].to_string());
        rec.push(truth[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))
}

/// Reference test values in data units.
pub fn reference_values(problem: &Problem) -> DVector<f64> {
    truth_in_data_units(problem)
}
