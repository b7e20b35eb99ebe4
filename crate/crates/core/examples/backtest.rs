//! Expanding-window backtest against the quantile AR(1) benchmark.

use tailcast::eval::{build_forecaster, run_backtest, BacktestConfig, Forecaster, ModelKind, ModelSettings};
use tailcast::ingest::PredictorMode;
use tailcast::synth::{generate, SynthConfig, SYNTH_TARGET};
use tailcast::YearMonth;

fn main() -> tailcast::Result<()> {
    let data = generate(&SynthConfig::default())?;
    let mut settings = ModelSettings::default();
    settings.qrf.n_trees = 100;
    let kinds = [ModelKind::BqrHorseshoe, ModelKind::Qrf];
    let models: Vec<Box<dyn Forecaster>> = kinds.iter().map(|&k| build_forecaster(k, &settings)).collect();
    let cfg = BacktestConfig {
        quantile_grid: vec![0.1, 0.5, 0.9],
        horizons: vec![0, 1],
        eval_start: YearMonth::new(2013, 1).expect("valid month"),
        eval_end: YearMonth::new(2014, 12).expect("valid month"),
        estimation_start: YearMonth::new(2003, 1).expect("valid month"),
        predictor_modes: vec![PredictorMode::Fred],
        targets: vec![SYNTH_TARGET.into()],
        n_lags: 2,
        seed: 1,
        ..Default::default()
    };
    let report = run_backtest(&cfg, &data.panel, None, &models)?;
    println!("{} forecasts, {} failures", report.records.len(), report.failures.len());
    print!("{}", report.aggregate_csv());
    Ok(())
}
