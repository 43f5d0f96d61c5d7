use std::fs;
use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
task = "aggregation_sweep"
model = "svgp"
aggregators = ["full", "poe", "opt"]
experts = [2]
seeds = [3]
lengthscales = [0.5]
inducing = 12

[data]
source = "synthetic"
function = "ackley"
dim = 2
n = 100
n_test = 25
test_lattice = true

[train]
methods = ["fedavg"]
iterations = 6
local_steps = 2
"#;

fn distgp(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_distgp"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &std::process::Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn subcommands_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let cfg = cfg.to_str().unwrap();
    let out_dir = dir.path().join("out");
    let out = out_dir.to_str().unwrap();

    ok(&distgp(&["synth", "--config", cfg, "--out-dir", out]));
    assert_eq!(header(&out_dir.join("train.csv")), "x0,x1,y");
    assert_eq!(fs::read_to_string(out_dir.join("train.csv")).unwrap().lines().count(), 101);
    assert_eq!(fs::read_to_string(out_dir.join("test.csv")).unwrap().lines().count(), 26);

    ok(&distgp(&["train", "--config", cfg, "--out-dir", out, "--threads", "1"]));
    let hp: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("hyperparameters.json")).unwrap()).unwrap();
    assert_eq!(hp["lengthscales"].as_array().unwrap().len(), 2);
    assert_eq!(hp["inducing_inputs"].as_array().unwrap().len(), 12);
    assert_eq!(header(&out_dir.join("trace.csv")), "method,M,seed,round,parameter,value");

    let hp_path = out_dir.join("hyperparameters.json");
    ok(&distgp(&[
        "predict",
        "--config",
        cfg,
        "--out-dir",
        out,
        "--aggregator",
        "opt",
        "--hyperparameters",
        hp_path.to_str().unwrap(),
    ]));
    assert_eq!(header(&out_dir.join("predictions.csv")), "x0,x1,mean,variance,truth");
    assert_eq!(fs::read_to_string(out_dir.join("predictions.csv")).unwrap().lines().count(), 26);
    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(metrics.lines().nth(1).unwrap().starts_with("opt,2,50,3,"));

    ok(&distgp(&["bench", "--config", cfg, "--out-dir", out, "--experts", "2,4", "--seed", "9"]));
    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(
        metrics.lines().next().unwrap(),
        "aggregator,M,n_i,seed,lengthscale,rmse,nlpd,predict_seconds,train_seconds"
    );
    assert_eq!(metrics.lines().count(), 1 + 1 + 2 * 2);
    assert!(metrics.lines().skip(1).all(|l| l.split(',').nth(3) == Some("9")));
    assert!(out_dir.join("summary.json").exists());
}

#[test]
fn invalid_configuration_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, CONFIG.replace("aggregators = [\"full\", \"poe\", \"opt\"]", "aggregators = [\"npae\"]")).unwrap();
    let out = distgp(&["bench", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("npae"), "{err}");

    let out = distgp(&["bench", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));
}
