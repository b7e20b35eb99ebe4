//! The whole experiment through the command-line runner: write the synthetic
//! dataset, then run every stage into a temporary directory.

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let out = dir.path().to_str().expect("utf-8 path");
    let config = format!("{out}/experiment.toml");
    assert_eq!(tailcast::cli::main_with_args(["tailcast", "synth", "--out", out]), 0);
    let code = tailcast::cli::main_with_args(["tailcast", "all", "--config", &config]);
    println!("exit code {code}");
    let agg = std::fs::read_to_string(dir.path().join("out/backtest/aggregate.csv")).expect("aggregate report");
    for line in agg.lines().filter(|l| l.starts_with("model") || l.contains(",0,0.5,")) {
        println!("{line}");
    }
    let top = std::fs::read_to_string(dir.path().join("out/importance/top_predictors.csv")).expect("importance");
    for line in top.lines().take(6) {
        println!("{line}");
    }
}
