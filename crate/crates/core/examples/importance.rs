//! Lasso surrogate of a forecast path: which predictors drive the forecasts.

use tailcast::eval::{build_forecaster, run_backtest, BacktestConfig, Forecaster, ModelKind, ModelSettings};
use tailcast::ingest::PredictorMode;
use tailcast::synth::{generate, SynthConfig, SYNTH_TARGET};
use tailcast::varimp::{count_selected, fit_surrogate, top_predictors, SurrogateConfig};
use tailcast::YearMonth;

fn main() -> tailcast::Result<()> {
    let data = generate(&SynthConfig::default())?;
    let models: Vec<Box<dyn Forecaster>> = vec![build_forecaster(ModelKind::BqrRidge, &ModelSettings::default())];
    let cfg = BacktestConfig {
        quantile_grid: vec![0.1, 0.5, 0.9],
        horizons: vec![0],
        eval_start: YearMonth::new(2012, 1).expect("valid month"),
        eval_end: YearMonth::new(2014, 12).expect("valid month"),
        estimation_start: YearMonth::new(2000, 1).expect("valid month"),
        predictor_modes: vec![PredictorMode::Fred],
        targets: vec![SYNTH_TARGET.into()],
        n_lags: 2,
        ..Default::default()
    };
    let report = run_backtest(&cfg, &data.panel, None, &models)?;
    for tau in cfg.quantile_grid.clone() {
        let (_, path, x, cols) = report.surrogate_inputs("bqr-ridge", SYNTH_TARGET, PredictorMode::Fred, 0, tau)?;
        let fit = fit_surrogate(&path, &x, &cols, &SurrogateConfig::default())?;
        let c = count_selected(&fit);
        println!("tau = {tau}: lambda {:.4}, {} nonzero ({} FRED, {} TEXT)", fit.lambda, fit.nonzero_count, c.fred, c.text);
        for p in top_predictors(&fit, 5) {
            println!("  {:<12} {} {:.4}", p.name, p.source, p.abs_coef);
        }
    }
    Ok(())
}
