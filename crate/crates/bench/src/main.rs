use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use distgp_bench::config::{parse_train_method, DataSource, ExperimentConfig};
use distgp_bench::experiment::{
    self, cell_hyperparameters, load_problem, method_name, predict_rules, reference_values, train_once,
    write_outputs, write_predictions, write_rows, HyperparameterFile, TraceRecord,
};
use distgp_bench::{BenchError, Result};
use distgp_core::{Aggregator, ModelKind};
use log::info;
use nalgebra::{DMatrix, DVector};

#[derive(Parser)]
#[command(name = "distgp", version, about = "Distributed Gaussian-process regression benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic training and test sets as CSV.
    Synth(Common),
    /// Train hyperparameters across experts; writes hyperparameters.json and trace.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training method (fact or fedavg); defaults to the first configured one.
        #[arg(long)]
        method: Option<String>,
    },
    /// Single prediction run; writes predictions.csv and metrics.csv.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Hyperparameter JSON as written by `train`; overrides the configured values.
        #[arg(long)]
        hyperparameters: Option<PathBuf>,
    },
    /// Full sweep over every configured cell; writes metrics.csv and summary.json.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Replaces the configured seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `output` from the configuration.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads for linear algebra and expert fitting.
    #[arg(long)]
    threads: Option<usize>,
    /// exact or svgp.
    #[arg(long)]
    model: Option<String>,
    /// Aggregation rule; repeat or comma-separate for several.
    #[arg(long, value_delimiter = ',')]
    aggregator: Vec<String>,
    /// Number of experts; repeat or comma-separate for several.
    #[arg(long = "experts", value_delimiter = ',')]
    experts: Vec<usize>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        if let Some(t) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
        }
        let mut cfg = ExperimentConfig::from_path(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(m) = &self.model {
            cfg.model = m.parse::<ModelKind>()?;
        }
        if !self.aggregator.is_empty() {
            cfg.aggregators = self
                .aggregator
                .iter()
                .map(|a| a.parse::<Aggregator>())
                .collect::<std::result::Result<_, _>>()?;
        }
        if !self.experts.is_empty() {
            cfg.experts = self.experts.clone();
        }
        cfg.validate()?;
        let dir = self.out_dir.clone().unwrap_or_else(|| cfg.output.clone());
        fs::create_dir_all(&dir).map_err(|e| BenchError::io(&dir, e))?;
        Ok((cfg, dir))
    }
}

fn write_dataset(path: &Path, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..x.nrows() {
        let mut rec: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(y[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))
}

fn synth(common: &Common) -> Result<()> {
    let (cfg, dir) = common.load()?;
    if !matches!(cfg.data, DataSource::Synthetic(_)) {
        return Err(BenchError::Config("synth needs a synthetic data source".into()));
    }
    for &seed in &cfg.seeds {
        let p = load_problem(&cfg, seed)?;
        let suffix = if cfg.seeds.len() > 1 { format!("_seed{seed}") } else { String::new() };
        write_dataset(&dir.join(format!("train{suffix}.csv")), &p.train.x, &p.train.y)?;
        write_dataset(&dir.join(format!("test{suffix}.csv")), &p.test_x, &p.test_y)?;
    }
    info!("wrote synthetic data to {}", dir.display());
    Ok(())
}

fn train_cmd(common: &Common, method: Option<&str>) -> Result<()> {
    let (cfg, dir) = common.load()?;
    let method = match method {
        Some(m) => parse_train_method(m)?,
        None => cfg.train.methods[0],
    };
    let (seed, m) = (cfg.seeds[0], cfg.experts[0]);
    let problem = load_problem(&cfg, seed)?;
    let (result, secs) = train_once(&cfg, &problem, m, method, seed)?;
    info!("trained with {} on {m} experts in {secs:.2}s", method_name(method));
    let file = HyperparameterFile::from_hyperparameters(&result.hyperparameters);
    let path = dir.join("hyperparameters.json");
    fs::write(&path, serde_json::to_string_pretty(&file)?).map_err(|e| BenchError::io(&path, e))?;
    let trace: Vec<TraceRecord> = result
        .trace
        .iter()
        .flat_map(|row| {
            result.parameter_names.iter().zip(&row.values).map(move |(p, v)| TraceRecord {
                method: method_name(method).into(),
                m,
                seed,
                round: row.round,
                parameter: p.clone(),
                value: *v,
            })
        })
        .collect();
    write_rows(&dir.join("trace.csv"), &trace)
}

fn predict_cmd(common: &Common, hyperparameters: Option<&Path>) -> Result<()> {
    let (cfg, dir) = common.load()?;
    let (seed, m, rule) = (cfg.seeds[0], cfg.experts[0], cfg.aggregators[0]);
    let problem = load_problem(&cfg, seed)?;
    let hp = match hyperparameters {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
            let file: HyperparameterFile = serde_json::from_str(&text)?;
            file.to_hyperparameters(cfg.kernel)?
        }
        None => cell_hyperparameters(&cfg, &problem, cfg.lengthscales[0], seed)?,
    };
    let (_, outcome) = predict_rules(&cfg, &problem, &hp, m, seed, &[rule]).remove(0);
    let outcome = outcome?;
    write_predictions(&dir.join("predictions.csv"), &problem.test_x, &outcome.prediction, &reference_values(&problem))?;
    write_rows(&dir.join("metrics.csv"), &[outcome.row])
}

fn bench(common: &Common) -> Result<()> {
    let (cfg, dir) = common.load()?;
    let out = experiment::run_experiment(&cfg)?;
    write_outputs(&out, &dir)?;
    info!("{} rows, {} failed cells, written to {}", out.rows.len(), out.errors.len(), dir.display());
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(c) => synth(c),
        Command::Train { common, method } => train_cmd(common, method.as_deref()),
        Command::Predict { common, hyperparameters } => predict_cmd(common, hyperparameters.as_deref()),
        Command::Bench(c) => bench(c),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
