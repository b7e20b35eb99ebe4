//! Forecast evaluation: pinball loss, the quantile AR(1) benchmark,
//! Diebold-Mariano tests and the expanding-window backtest.

mod ar1;
mod dm;
mod score;

pub use ar1::{fit_ar1_benchmark, fit_lag_pairs, Ar1Model, AR1_MIN_LEN};
pub use dm::{dm_test, DmResult, DM_MIN_LEN};
pub(crate) use score::quantile_score_raw;
pub use score::{mean_quantile_score, quantile_score, rearrange_quantiles};
mod backtest;
pub use backtest::{
    aggregate, build_forecaster, derive_seed, run_backtest, AggregateRow, BacktestConfig, BacktestReport,
    BqrForecaster, FailureRecord, ForecastRecord, Forecaster, GpForecaster, ModelKind, ModelSettings,
    PredictorRow, QrfForecaster, BENCHMARK, DEFAULT_GRID, DM_LEVEL,
};
