use std::fs;

use distgp_bench::config::ExperimentConfig;
use distgp_bench::experiment::{
    run_experiment, summarize, write_outputs, HyperparameterFile, MetricRow, METRIC_COLUMNS,
};
use distgp_core::{Hyperparameters, KernelFamily, KernelSpec};
use nalgebra::DMatrix;

fn config(body: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(body).unwrap()
}

const ONE_CELL: &str = r#"
task = "aggregation_sweep"
aggregators = ["full"]
experts = [1]

[data]
source = "synthetic"
function = "ackley"
n = 50
n_test = 20
"#;

const SMALL_SWEEP: &str = r#"
task = "aggregation_sweep"
aggregators = ["full", "poe", "gpoe", "bcm", "rbcm", "grbcm", "npae", "opt"]
experts = [2, 3]
seeds = [4, 5]
lengthscales = [0.3, 0.8]

[data]
source = "synthetic"
function = "ackley"
dim = 2
n = 120
n_test = 36
test_lattice = true
"#;

fn without_timing(rows: &[MetricRow]) -> Vec<(String, usize, usize, u64, u64, u64, u64)> {
    rows.iter()
        .map(|r| {
            (
                r.aggregator.clone(),
                r.m,
                r.n_i,
                r.seed,
                r.lengthscale.to_bits(),
                r.rmse.to_bits(),
                r.nlpd.to_bits(),
            )
        })
        .collect()
}

#[test]
fn single_full_cell() {
    let out = run_experiment(&config(ONE_CELL)).unwrap();
    assert_eq!(out.rows.len(), 1);
    let r = &out.rows[0];
    assert_eq!((r.aggregator.as_str(), r.m, r.n_i), ("full", 1, 50));
    assert!(r.rmse.is_finite() && r.rmse >= 0.0);
    assert!(r.predict_seconds >= 0.0);
    assert!(out.errors.is_empty());
}

#[test]
fn runs_are_deterministic() {
    let cfg = config(SMALL_SWEEP);
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.rows.len(), 2 * 2 * (1 + 2 * 7));
    assert_eq!(without_timing(&a.rows), without_timing(&b.rows));
}

#[test]
fn shard_sizes_follow_expert_count() {
    let out = run_experiment(&config(SMALL_SWEEP)).unwrap();
    for r in out.rows.iter().filter(|r| r.aggregator != "full") {
        assert_eq!(r.n_i, 120 / r.m);
        assert!(r.rmse >= 0.0 && r.nlpd.is_finite());
    }
}

#[test]
fn failing_cells_become_error_rows() {
    let cfg = config(&SMALL_SWEEP.replace("experts = [2, 3]", "experts = [1, 2]"));
    let out = run_experiment(&cfg).unwrap();
    let bad: Vec<&MetricRow> = out.rows.iter().filter(|r| r.rmse.is_nan()).collect();
    // grBCM needs two experts: one failure per (seed, lengthscale).
    assert_eq!(bad.len(), 4);
    assert!(bad.iter().all(|r| r.aggregator == "grbcm" && r.m == 1));
    assert_eq!(out.errors.len(), 4);
    assert!(out.errors[0].message.contains("expert"));
    assert!(out.rows.iter().filter(|r| r.aggregator == "grbcm" && r.m == 2).all(|r| r.rmse.is_finite()));
}

#[test]
fn output_files_have_the_documented_layout() {
    let out = run_experiment(&config(SMALL_SWEEP)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&out, dir.path()).unwrap();

    let mut reader = csv::Reader::from_path(dir.path().join("metrics.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, METRIC_COLUMNS);
    let rows: Vec<MetricRow> = reader.deserialize().collect::<Result<_, _>>().unwrap();
    assert_eq!(without_timing(&rows), without_timing(&out.rows));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let groups = summary["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 1 + 2 * 7);
    for g in groups {
        for metric in ["rmse", "nlpd", "predict_seconds", "train_seconds"] {
            assert!(g[metric]["mean"].is_number(), "{metric}");
            assert!(g[metric]["std"].is_number(), "{metric}");
        }
    }
    let poe2 = summarize(&out).groups.into_iter().find(|g| g.aggregator == "poe" && g.m == 2).unwrap();
    assert_eq!(poe2.count, 4);
    let mean = out.rows.iter().filter(|r| r.aggregator == "poe" && r.m == 2).map(|r| r.rmse).sum::<f64>() / 4.0;
    assert!((poe2.rmse.mean - mean).abs() <= 1e-15);
}

#[test]
fn opticom_rows_per_level() {
    let cfg = config(
        r#"
task = "opticom_vs_ct"
kernel = "matern32"
lengthscales = [0.5, 1.0]

[data]
source = "synthetic"
function = "griewank"
dim = 2
n = 200
n_test = 50
lower = -5.0
upper = 5.0

[sparse_grid]
levels = [1, 2, 3]
"#,
    );
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.rows.len(), 2 * 3 * 2);
    for pair in out.rows.chunks(2) {
        assert_eq!(pair[0].aggregator, "opticom");
        assert_eq!(pair[1].aggregator, "ct");
        assert_eq!(pair[0].m, pair[1].m);
    }
    // A single combination term: both rules coincide.
    let level1: Vec<&MetricRow> = out.rows.iter().filter(|r| r.m == 1).collect();
    assert!((level1[0].rmse - level1[1].rmse).abs() <= 1e-12);
}

#[test]
fn train_compare_records_traces() {
    let cfg = config(
        r#"
task = "train_compare"
experts = [2]
lengthscales = [1.0]

[data]
source = "synthetic"
function = "gp_sample"
dim = 2
n = 60
n_test = 10
truth_lengthscales = [0.5, 1.0]
truth_signal_variance = 0.5
truth_noise_variance = 0.05

[train]
methods = ["fact", "fedavg"]
iterations = 12
local_steps = 3
"#,
    );
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.rows.len(), 2);
    assert!(out.rows.iter().all(|r| r.rmse.is_finite() && r.nlpd.is_finite()));
    let fact = out.traces.iter().filter(|t| t.method == "fact").count();
    let fedavg = out.traces.iter().filter(|t| t.method == "fedavg").count();
    // Four parameters: two lengthscales, signal and noise variance.
    assert_eq!(fact, 12 * 4);
    assert_eq!(fedavg, 4 * 4);
}

#[test]
fn csv_source_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let mut text = String::from("a,b,target\n");
    for i in 0..80 {
        let (a, b) = ((i as f64 * 0.37).sin() * 3.0, (i as f64 * 0.11).cos());
        text.push_str(&format!("{a},{b},{}\n", 10.0 + 2.0 * a.sin() + b));
    }
    fs::write(&path, text).unwrap();
    let cfg = config(&format!(
        r#"
task = "aggregation_sweep"
model = "svgp"
aggregators = ["poe", "opt"]
experts = [2]
lengthscales = [1.0]
inducing = 10

[data]
source = "csv"
path = "{}"
target = "target"
"#,
        path.display()
    ));
    let out = run_experiment(&cfg).unwrap();
    assert!(out.errors.is_empty(), "{:?}", out.errors);
    assert_eq!(out.rows.len(), 2);
    // Metrics are reported in data units.
    assert!(out.rows.iter().all(|r| r.rmse.is_finite() && r.rmse < 5.0));
}

#[test]
fn hyperparameter_file_round_trip() {
    let z = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, -0.3, 0.4]);
    let hp = Hyperparameters::new(KernelSpec::rbf(vec![0.3, 1.3], 0.04).unwrap(), 0.01)
        .unwrap()
        .with_inducing(z)
        .unwrap();
    let file = HyperparameterFile::from_hyperparameters(&hp);
    let text = serde_json::to_string(&file).unwrap();
    let back: HyperparameterFile = serde_json::from_str(&text).unwrap();
    assert_eq!(back.to_hyperparameters(KernelFamily::Rbf).unwrap(), hp);

    let plain: HyperparameterFile =
        serde_json::from_str(r#"{"lengthscales": [0.5], "signal_variance": 1.0, "noise_variance": 0.1}"#).unwrap();
    assert!(plain.to_hyperparameters(KernelFamily::Matern32).unwrap().inducing_inputs.is_none());
    let ragged: HyperparameterFile = serde_json::from_str(
        r#"{"lengthscales": [0.5], "signal_variance": 1.0, "noise_variance": 0.1, "inducing_inputs": [[0.0, 1.0]]}"#,
    )
    .unwrap();
    assert!(ragged.to_hyperparameters(KernelFamily::Rbf).is_err());
}
