//! TOML experiment configuration.
//!
//! The file is parsed into [`RawConfig`] and then checked and resolved into
//! an [`ExperimentConfig`]. See the README for the full schema.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use distgp_core::{Aggregator, KernelFamily, ModelKind, TrainMethod};
use serde::Deserialize;

use crate::error::{BenchError, Result};
use crate::functions::TestFunction;
use crate::ingest::TargetColumn;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    OptiComVsCt,
    AggregationSweep,
    TrainCompare,
    Predict,
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "opticom_vs_ct" => Ok(Task::OptiComVsCt),
            "aggregation_sweep" => Ok(Task::AggregationSweep),
            "train_compare" => Ok(Task::TrainCompare),
            "predict" => Ok(Task::Predict),
            other => Err(format!(
                "unknown task `{other}` (expected opticom_vs_ct, aggregation_sweep, train_compare or predict)"
            )),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub task: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_kernel")]
    pub kernel: String,
    #[serde(default)]
    pub aggregators: Vec<String>,
    #[serde(default = "default_experts")]
    pub experts: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_lengthscales")]
    pub lengthscales: Vec<f64>,
    #[serde(default = "one")]
    pub signal_variance: f64,
    #[serde(default = "default_noise")]
    pub noise_variance: f64,
    #[serde(default = "default_inducing")]
    pub inducing: usize,
    #[serde(default = "yes")]
    pub add_noise_to_nlpd: bool,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub data: RawData,
    #[serde(default)]
    pub sparse_grid: Option<RawSparseGrid>,
    #[serde(default)]
    pub train: Option<RawTrain>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawData {
    pub source: String,
    // synthetic
    pub function: Option<String>,
    pub dim: Option<usize>,
    pub n: Option<usize>,
    pub n_test: Option<usize>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub noise_variance: Option<f64>,
    pub test_lattice: Option<bool>,
    pub truth_lengthscales: Option<Vec<f64>>,
    pub truth_signal_variance: Option<f64>,
    pub truth_noise_variance: Option<f64>,
    // csv
    pub path: Option<PathBuf>,
    pub target: Option<toml::Value>,
    pub split: Option<f64>,
    pub standardize: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSparseGrid {
    pub levels: Vec<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTrain {
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "one_usize")]
    pub local_steps: usize,
    #[serde(default)]
    pub train_inducing: bool,
    pub initial_lengthscales: Option<Vec<f64>>,
    pub initial_signal_variance: Option<f64>,
    pub initial_noise_variance: Option<f64>,
}

fn default_model() -> String {
    "exact".into()
}
fn default_kernel() -> String {
    "rbf".into()
}
fn default_experts() -> Vec<usize> {
    vec![4]
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_lengthscales() -> Vec<f64> {
    vec![0.3]
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_noise() -> f64 {
    0.025
}
fn default_inducing() -> usize {
    128
}
fn yes() -> bool {
    true
}
fn default_output() -> PathBuf {
    PathBuf::from("results")
}
fn default_methods() -> Vec<String> {
    vec!["fact".into(), "fedavg".into()]
}
fn default_iterations() -> usize {
    200
}
fn default_lr() -> f64 {
    0.1
}

/// Where the data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv {
        path: PathBuf,
        target: TargetColumn,
        split: f64,
        standardize: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceFunction {
    Test(TestFunction),
    /// Draws from a GP prior with the given hyperparameters.
    GpSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub function: SourceFunction,
    pub dim: usize,
    pub n: usize,
    pub n_test: usize,
    pub lower: f64,
    pub upper: f64,
    /// Variance of the Gaussian noise added to training targets.
    pub noise_variance: f64,
    /// Evenly spaced test lattice instead of uniform random test inputs.
    pub test_lattice: bool,
    pub truth_lengthscales: Vec<f64>,
    pub truth_signal_variance: f64,
    pub truth_noise_variance: f64,
}

impl SyntheticSpec {
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(self.lower, self.upper); self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub methods: Vec<TrainMethod>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub local_steps: usize,
    pub train_inducing: bool,
    pub initial_lengthscales: Option<Vec<f64>>,
    pub initial_signal_variance: f64,
    pub initial_noise_variance: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            methods: vec![TrainMethod::Fact, TrainMethod::FedAvg],
            iterations: default_iterations(),
            learning_rate: default_lr(),
            local_steps: 1,
            train_inducing: false,
            initial_lengthscales: None,
            initial_signal_variance: 1.5,
            initial_noise_variance: 1.0,
        }
    }
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub model: ModelKind,
    pub kernel: KernelFamily,
    pub aggregators: Vec<Aggregator>,
    pub experts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub inducing: usize,
    pub add_noise_to_nlpd: bool,
    pub output: PathBuf,
    pub data: DataSource,
    pub levels: Vec<u32>,
    pub train: TrainSettings,
}

fn bad(msg: impl Into<String>) -> BenchError {
    BenchError::Config(msg.into())
}

pub fn parse_train_method(s: &str) -> Result<TrainMethod> {
    match s.to_ascii_lowercase().as_str() {
        "fact" => Ok(TrainMethod::Fact),
        "fedavg" => Ok(TrainMethod::FedAvg),
        other => Err(bad(format!("unknown training method `{other}` (expected fact or fedavg)"))),
    }
}

pub fn parse_kernel(s: &str) -> Result<KernelFamily> {
    match s.to_ascii_lowercase().as_str() {
        "rbf" => Ok(KernelFamily::Rbf),
        "matern32" => Ok(KernelFamily::Matern32),
        other => Err(bad(format!("unknown kernel `{other}` (expected rbf or matern32)"))),
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(format!("{name} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        Self::resolve(raw)
    }

    pub fn resolve(raw: RawConfig) -> Result<Self> {
        let task: Task = raw.task.parse().map_err(bad)?;
        let model: ModelKind = raw.model.parse().map_err(|e: distgp_core::Error| bad(e.to_string()))?;
        let kernel = parse_kernel(&raw.kernel)?;
        let aggregators = raw
            .aggregators
            .iter()
            .map(|a| a.parse::<Aggregator>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let data = resolve_data(&raw.data, &raw)?;
        let levels = raw
            .sparse_grid
            .as_ref()
            .map(|s| s.levels.clone())
            .unwrap_or_else(|| vec![1, 2, 3, 4, 5]);
        let train = match &raw.train {
            None => TrainSettings::default(),
            Some(t) => TrainSettings {
                methods: t.methods.iter().map(|m| parse_train_method(m)).collect::<Result<_>>()?,
                iterations: t.iterations,
                learning_rate: t.learning_rate,
                local_steps: t.local_steps,
                train_inducing: t.train_inducing,
                initial_lengthscales: t.initial_lengthscales.clone(),
                initial_signal_variance: t.initial_signal_variance.unwrap_or(1.5),
                initial_noise_variance: t.initial_noise_variance.unwrap_or(1.0),
            },
        };
        let cfg = ExperimentConfig {
            task,
            model,
            kernel,
            aggregators,
            experts: raw.experts,
            seeds: raw.seeds,
            lengthscales: raw.lengthscales,
            signal_variance: raw.signal_variance,
            noise_variance: raw.noise_variance,
            inducing: raw.inducing,
            add_noise_to_nlpd: raw.add_noise_to_nlpd,
            output: raw.output,
            data,
            levels,
            train,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks cross-field constraints. Called by the constructors and again
    /// by the runner after command-line overrides.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(bad("`seeds` must not be empty"));
        }
        if self.lengthscales.is_empty() {
            return Err(bad("`lengthscales` must not be empty"));
        }
        for &l in &self.lengthscales {
            positive("lengthscale", l)?;
        }
        positive("signal_variance", self.signal_variance)?;
        positive("noise_variance", self.noise_variance)?;
        if self.model == ModelKind::Svgp && self.inducing == 0 {
            return Err(bad("`inducing` must be at least 1 for svgp"));
        }
        if let Some(&m) = self.experts.iter().find(|&&m| m == 0) {
            return Err(bad(format!("expert count {m} must be at least 1")));
        }
        for a in &self.aggregators {
            if !a.supports(self.model) {
                return Err(bad(format!("aggregator `{a}` is not available for {} models", self.model)));
            }
        }
        match self.task {
            Task::AggregationSweep | Task::Predict => {
                if self.aggregators.is_empty() {
                    return Err(bad("`aggregators` must not be empty for this task"));
                }
                if self.experts.is_empty() {
                    return Err(bad("`experts` must not be empty"));
                }
            }
            Task::OptiComVsCt => {
                if self.levels.is_empty() || self.levels.contains(&0) {
                    return Err(bad("sparse grid levels must be nonempty and at least 1"));
                }
                if !matches!(self.data, DataSource::Synthetic(_)) {
                    return Err(bad("opticom_vs_ct needs synthetic data (the grid box comes from its bounds)"));
                }
            }
            Task::TrainCompare => {
                if self.train.methods.is_empty() {
                    return Err(bad("`train.methods` must not be empty"));
                }
                if self.experts.is_empty() {
                    return Err(bad("`experts` must not be empty"));
                }
            }
        }
        if self.train.iterations == 0 {
            return Err(bad("`train.iterations` must be at least 1"));
        }
        positive("train.learning_rate", self.train.learning_rate)?;
        if self.train.local_steps == 0 || !self.train.iterations.is_multiple_of(self.train.local_steps) {
            return Err(bad("`train.local_steps` must divide `train.iterations`"));
        }
        if let DataSource::Synthetic(s) = &self.data {
            if s.n_test == 0 {
                return Err(bad("`data.n_test` must be at least 1"));
            }
            for &m in &self.experts {
                if m > s.n {
                    return Err(bad(format!("{m} experts for {} training points", s.n)));
                }
            }
            if let Some(ls) = &self.train.initial_lengthscales {
                if ls.len() != s.dim {
                    return Err(bad("`train.initial_lengthscales` needs one value per dimension"));
                }
            }
        }
        Ok(())
    }
}

fn resolve_data(d: &RawData, raw: &RawConfig) -> Result<DataSource> {
    match d.source.as_str() {
        "synthetic" => {
            let function = match d.function.as_deref().unwrap_or("ackley") {
                "gp_sample" => SourceFunction::GpSample,
                other => SourceFunction::Test(other.parse().map_err(bad)?),
            };
            let dim = d.dim.unwrap_or(1);
            if dim == 0 {
                return Err(bad("`data.dim` must be at least 1"));
            }
            let n = d.n.ok_or_else(|| bad("`data.n` is required for synthetic data"))?;
            if n == 0 {
                return Err(bad("`data.n` must be at least 1"));
            }
            let lower = d.lower.unwrap_or(-1.0);
            let upper = d.upper.unwrap_or(1.0);
            if lower >= upper {
                return Err(bad(format!("`data.lower` ({lower}) must be below `data.upper` ({upper})")));
            }
            let truth_lengthscales = d.truth_lengthscales.clone().unwrap_or_else(|| vec![raw.lengthscales[0]; dim]);
            if truth_lengthscales.len() != dim {
                return Err(bad("`data.truth_lengthscales` needs one value per dimension"));
            }
            let noise_variance = d.noise_variance.unwrap_or(raw.noise_variance);
            if noise_variance < 0.0 {
                return Err(bad("`data.noise_variance` must be nonnegative"));
            }
            Ok(DataSource::Synthetic(SyntheticSpec {
                function,
                dim,
                n,
                n_test: d.n_test.unwrap_or(100),
                lower,
                upper,
                noise_variance,
                test_lattice: d.test_lattice.unwrap_or(false),
                truth_lengthscales,
                truth_signal_variance: d.truth_signal_variance.unwrap_or(raw.signal_variance),
                truth_noise_variance: d.truth_noise_variance.unwrap_or(noise_variance),
            }))
        }
        "csv" => {
            let path = d.path.clone().ok_or_else(|| bad("`data.path` is required for csv data"))?;
            let target = match &d.target {
                None => TargetColumn::Last,
                Some(toml::Value::Integer(i)) if *i >= 0 => TargetColumn::Index(*i as usize),
                Some(toml::Value::String(s)) => TargetColumn::Name(s.clone()),
                Some(other) => return Err(bad(format!("`data.target` must be a column name or index, got {other}"))),
            };
            let split = d.split.unwrap_or(0.8);
            if !(split > 0.0 && split < 1.0) {
                return Err(bad("`data.split` must lie in (0, 1)"));
            }
            Ok(DataSource::Csv {
                path,
                target,
                split,
                standardize: d.standardize.unwrap_or(true),
            })
        }
        other => Err(bad(format!("unknown data source `{other}` (expected synthetic or csv)"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SWEEP: &str = r#"
task = "aggregation_sweep"
model = "svgp"
aggregators = ["poe", "gpoe", "opt"]
experts = [2, 4]
seeds = [1, 2]
lengthscales = [0.2, 0.6]

[data]
source = "synthetic"
function = "ackley"
dim = 2
n = 400
n_test = 100
test_lattice = true
"#;

    #[test]
    fn parses_sweep() {
        let c = ExperimentConfig::from_toml_str(SWEEP).unwrap();
        assert_eq!(c.task, Task::AggregationSweep);
        assert_eq!(c.model, ModelKind::Svgp);
        assert_eq!(c.aggregators, vec![Aggregator::Poe, Aggregator::GPoe, Aggregator::Opt]);
        match c.data {
            DataSource::Synthetic(s) => {
                assert_eq!(s.function, SourceFunction::Test(TestFunction::Ackley));
                assert_eq!(s.bounds(), vec![(-1.0, 1.0); 2]);
                assert_eq!(s.noise_variance, 0.025);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_npae_for_svgp() {
        let text = SWEEP.replace(r#"["poe", "gpoe", "opt"]"#, r#"["npae"]"#);
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("npae"), "{err}");
    }

    #[test]
    fn rejects_unknown_keys_and_empty_seeds() {
        assert!(ExperimentConfig::from_toml_str(&format!("colour = 1\n{SWEEP}")).is_err());
        let text = SWEEP.replace("seeds = [1, 2]", "seeds = []");
        assert!(ExperimentConfig::from_toml_str(&text).unwrap_err().to_string().contains("seeds"));
    }

    #[test]
    fn csv_target_forms() {
        let text = r#"
task = "predict"
aggregators = ["gpoe"]
[data]
source = "csv"
path = "x.csv"
target = 2
"#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        assert!(matches!(c.data, DataSource::Csv { target: TargetColumn::Index(2), .. }));
        let c = ExperimentConfig::from_toml_str(&text.replace("target = 2", r#"target = "price""#)).unwrap();
        assert!(matches!(c.data, DataSource::Csv { target: TargetColumn::Name(ref s), .. } if s == "price"));
    }

    #[test]
    fn train_steps_must_divide() {
        let text = format!("{SWEEP}\n[train]\niterations = 10\nlocal_steps = 3\n");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }
}
