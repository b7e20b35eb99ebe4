use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ar1::{fit_ar1_benchmark, AR1_MIN_LEN};
use super::dm::{dm_test, DM_MIN_LEN};
use super::score::{quantile_score, rearrange_quantiles};
use crate::bqr::{fit_bqr, BqrConfig, PriorKind, ShrinkagePrior};
use crate::date::YearMonth;
use crate::error::{Error, Result};
use crate::gpqr::{fit_gpqr, GpConfig};
use crate::ingest::{
    apply_transform, assemble_design, realized_target, Column, DesignMatrix, DesignOptions, MonthlyFrame,
    PredictorMode, RealizationVintage, VintagePanel,
};
use crate::qrf::{grow_forest, QrfConfig};

/// Name of the quantile AR(1) benchmark in reports.
pub const BENCHMARK: &str = "ar1";

/// p-value below which a model counts as significantly better than the benchmark.
pub const DM_LEVEL: f64 = 0.10;

pub const DEFAULT_GRID: [f64; 7] = [0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95];

/// A model that maps a design to quantile forecasts for its forecast row.
pub trait Forecaster: Send + Sync {
    fn name(&self) -> String;

    /// Forecasts for each level in `taus` (ascending), before rearrangement.
    fn forecast(&self, design: &DesignMatrix, taus: &[f64], seed: u64) -> Result<Vec<f64>>;
}

pub struct BqrForecaster {
    pub prior: ShrinkagePrior,
    pub cfg: BqrConfig,
}

impl Forecaster for BqrForecaster {
    fn name(&self) -> String {
        match self.prior.kind() {
            Some(k) => format!("bqr-{}", k.as_str()),
            None => "bqr-fixed".into(),
        }
    }

    fn forecast(&self, design: &DesignMatrix, taus: &[f64], seed: u64) -> Result<Vec<f64>> {
        let x = design.x_new().as_slice().to_vec();
        taus.iter()
            .map(|&tau| fit_bqr(design, tau, self.prior, &self.cfg, seed)?.predict(&x))
            .collect()
    }
}

pub struct GpForecaster {
    pub cfg: GpConfig,
}

impl Forecaster for GpForecaster {
    fn name(&self) -> String {
        "gp".into()
    }

    fn forecast(&self, design: &DesignMatrix, taus: &[f64], seed: u64) -> Result<Vec<f64>> {
        let x = design.x_new().as_slice().to_vec();
        taus.iter()
            .map(|&tau| fit_gpqr(design, tau, &self.cfg, seed)?.predict(&x))
            .collect()
    }
}

pub struct QrfForecaster {
    pub cfg: QrfConfig,
}

impl Forecaster for QrfForecaster {
    fn name(&self) -> String {
        "qrf".into()
    }

    fn forecast(&self, design: &DesignMatrix, taus: &[f64], seed: u64) -> Result<Vec<f64>> {
        grow_forest(design, &self.cfg, seed)?.estimate_quantiles(design.x_new().as_slice(), taus)
    }
}

/// Model families selectable from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "bqr-ridge")]
    BqrRidge,
    #[serde(rename = "bqr-horseshoe")]
    BqrHorseshoe,
    #[serde(rename = "bqr-lasso")]
    BqrLasso,
    #[serde(rename = "gp")]
    Gp,
    #[serde(rename = "qrf")]
    Qrf,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::BqrRidge => "bqr-ridge",
            ModelKind::BqrHorseshoe => "bqr-horseshoe",
            ModelKind::BqrLasso => "bqr-lasso",
            ModelKind::Gp => "gp",
            ModelKind::Qrf => "qrf",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bqr-ridge" => Ok(ModelKind::BqrRidge),
            "bqr-horseshoe" => Ok(ModelKind::BqrHorseshoe),
            "bqr-lasso" => Ok(ModelKind::BqrLasso),
            "gp" => Ok(ModelKind::Gp),
            "qrf" => Ok(ModelKind::Qrf),
            _ => Err(Error::validation("models", format!("unknown model `{s}`"))),
        }
    }
}

/// Per-family settings used when building forecasters from [`ModelKind`]s.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub bqr: BqrConfig,
    pub gp: GpConfig,
    pub qrf: QrfConfig,
}

pub fn build_forecaster(kind: ModelKind, settings: &ModelSettings) -> Box<dyn Forecaster> {
    let bqr = |k| {
        Box::new(BqrForecaster {
            prior: crate::bqr::make_prior(k, Default::default()).expect("default hyperparameters are valid"),
            cfg: settings.bqr.clone(),
        }) as Box<dyn Forecaster>
    };
    match kind {
        ModelKind::BqrRidge => bqr(PriorKind::Ridge),
        ModelKind::BqrHorseshoe => bqr(PriorKind::Horseshoe),
        ModelKind::BqrLasso => bqr(PriorKind::Lasso),
        ModelKind::Gp => Box::new(GpForecaster { cfg: settings.gp.clone() }),
        ModelKind::Qrf => Box::new(QrfForecaster { cfg: settings.qrf.clone() }),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub quantile_grid: Vec<f64>,
    pub horizons: Vec<usize>,
    pub eval_start: YearMonth,
    pub eval_end: YearMonth,
    pub estimation_start: YearMonth,
    pub models: Vec<ModelKind>,
    pub predictor_modes: Vec<PredictorMode>,
    pub targets: Vec<String>,
    /// Sort each origin's forecasts across the grid before scoring.
    pub rearrange: bool,
    pub realization: RealizationVintage,
    pub n_lags: usize,
    pub min_rows: usize,
    pub seed: u64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            quantile_grid: DEFAULT_GRID.to_vec(),
            horizons: vec![0, 1],
            eval_start: YearMonth::new(1999, 10).expect("valid month"),
            eval_end: YearMonth::new(2021, 12).expect("valid month"),
            estimation_start: YearMonth::new(1980, 6).expect("valid month"),
            models: vec![ModelKind::BqrHorseshoe, ModelKind::Gp, ModelKind::Qrf],
            predictor_modes: vec![PredictorMode::Fred, PredictorMode::Text, PredictorMode::Both],
            targets: Vec::new(),
            rearrange: true,
            realization: RealizationVintage::Final,
            n_lags: 12,
            min_rows: 24,
            seed: 0,
        }
    }
}

impl BacktestConfig {
    /// Every violated constraint, in field order.
    pub fn problems(&self) -> Vec<Error> {
        let mut errs = Vec::new();
        if !(self.estimation_start < self.eval_start) {
            errs.push(Error::validation(
                "estimation_start, eval_start",
                format!("estimation_start {} must precede eval_start {}", self.estimation_start, self.eval_start),
            ));
        }
        if self.eval_start > self.eval_end {
            errs.push(Error::validation(
                "eval_start, eval_end",
                format!("eval_start {} is after eval_end {}", self.eval_start, self.eval_end),
            ));
        }
        let grid = &self.quantile_grid;
        if grid.is_empty()
            || grid.iter().any(|t| !(*t > 0.0 && *t < 1.0))
            || grid.windows(2).any(|w| w[0] >= w[1])
        {
            errs.push(Error::validation("quantile_grid", "levels must be strictly increasing inside (0, 1)"));
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|&h| h > 1) {
            errs.push(Error::validation("horizons", "horizons must be a non-empty subset of {0, 1}"));
        }
        if self.models.is_empty() {
            errs.push(Error::validation("models", "no models selected"));
        }
        if self.predictor_modes.is_empty() {
            errs.push(Error::validation("predictor_modes", "no predictor modes selected"));
        }
        if self.targets.is_empty() {
            errs.push(Error::validation("targets", "no target series"));
        }
        if self.min_rows == 0 {
            errs.push(Error::validation("min_rows", "must be positive"));
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn origins(&self) -> Vec<YearMonth> {
        self.eval_start.range_inclusive(self.eval_end).collect()
    }

    fn design_options(&self) -> DesignOptions {
        DesignOptions {
            n_lags: self.n_lags,
            estimation_start: Some(self.estimation_start),
            min_rows: self.min_rows,
        }
    }
}

/// One quantile forecast and, once realized, its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub model: String,
    pub target: String,
    /// `None` for the benchmark, which ignores the predictor set.
    pub mode: Option<PredictorMode>,
    pub h: usize,
    pub tau: f64,
    pub origin: YearMonth,
    pub date: YearMonth,
    pub forecast: f64,
    pub realized: Option<f64>,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub model: String,
    pub target: String,
    pub mode: Option<PredictorMode>,
    pub h: usize,
    pub origin: YearMonth,
    pub message: String,
}

/// Mean score of one model relative to the benchmark over the dates both scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub target: String,
    pub mode: Option<PredictorMode>,
    pub h: usize,
    pub tau: f64,
    pub n: usize,
    pub mean_score: f64,
    pub benchmark_score: f64,
    pub ratio: f64,
    pub dm_stat: Option<f64>,
    pub dm_p: Option<f64>,
    pub significant: bool,
    pub degenerate: bool,
}

/// Forecast-row predictors for one (target, mode, h, origin), kept unstandardized
/// for the variable-importance surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorRow {
    pub target: String,
    pub mode: PredictorMode,
    pub h: usize,
    pub origin: YearMonth,
    pub columns: Vec<Column>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub quantile_grid: Vec<f64>,
    pub records: Vec<ForecastRecord>,
    pub failures: Vec<FailureRecord>,
    #[serde(skip)]
    pub aggregates: Vec<AggregateRow>,
    pub predictors: Vec<PredictorRow>,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed for one unit of work.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(master), |acc, &p| mix(acc ^ mix(p)))
}

fn mode_label(mode: Option<PredictorMode>) -> &'static str {
    mode.map_or("none", PredictorMode::as_str)
}

type TaskOutput = (Vec<ForecastRecord>, Vec<FailureRecord>, Option<PredictorRow>);

/// Run the expanding-window backtest with the given forecasters.
///
/// Origins are independent units of work; the result does not depend on the
/// number of threads.
pub fn run_backtest(
    cfg: &BacktestConfig,
    panel: &VintagePanel,
    text: Option<&MonthlyFrame>,
    models: &[Box<dyn Forecaster>],
) -> Result<BacktestReport> {
    // `cfg.models` only names what a runner should build; `models` is what runs.
    if let Some(e) = cfg
        .problems()
        .into_iter()
        .find(|e| !matches!(e, Error::Validation { field, .. } if field == "models"))
    {
        return Err(e);
    }
    if models.is_empty() {
        return Err(Error::validation("models", "no models selected"));
    }
    if cfg.predictor_modes.iter().any(|m| m.uses_text()) && text.is_none() {
        return Err(Error::validation("predictor_modes", "text predictors requested but no topic series supplied"));
    }
    for t in &cfg.targets {
        panel.series_index(t).ok_or_else(|| Error::Lookup(t.clone()))?;
    }
    let origins = cfg.origins();
    let mut tasks = Vec::new();
    for (ti, target) in cfg.targets.iter().enumerate() {
        for &h in &cfg.horizons {
            for (oi, &origin) in origins.iter().enumerate() {
                tasks.push((ti, target.as_str(), None, h, oi, origin));
                for &mode in &cfg.predictor_modes {
                    tasks.push((ti, target.as_str(), Some(mode), h, oi, origin));
                }
            }
        }
    }
    let outputs: Vec<Result<TaskOutput>> = tasks
        .par_iter()
        .map(|&(ti, target, mode, h, oi, origin)| {
            let realized: Option<f64> = realized_target(panel, target, origin.add_months(h as i64), cfg.realization)?;
            match mode {
                None => Ok(benchmark_task(cfg, panel, target, h, origin, realized)),
                Some(mode) => {
                    let seed_parts = [ti as u64, mode as u64, h as u64, oi as u64];
                    Ok(model_task(cfg, panel, text, models, target, mode, h, origin, realized, &seed_parts))
                }
            }
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut predictors = Vec::new();
    for out in outputs {
        let (r, f, p) = out?;
        records.extend(r);
        failures.extend(f);
        predictors.extend(p);
    }
    let aggregates = aggregate(&records, &cfg.quantile_grid)?;
    Ok(BacktestReport { quantile_grid: cfg.quantile_grid.clone(), records, failures, aggregates, predictors })
}

fn make_records(
    model: &str,
    target: &str,
    mode: Option<PredictorMode>,
    h: usize,
    origin: YearMonth,
    taus: &[f64],
    forecasts: &[f64],
    realized: Option<f64>,
) -> Vec<ForecastRecord> {
    taus.iter()
        .zip(forecasts)
        .map(|(&tau, &q)| ForecastRecord {
            model: model.to_string(),
            target: target.to_string(),
            mode,
            h,
            tau,
            origin,
            date: origin.add_months(h as i64),
            forecast: q,
            realized,
            score: realized.map(|y| quantile_score(y, q, tau)),
        })
        .collect()
}

/// Quantile AR(1) forecasts from the origin vintage's transformed target.
fn benchmark_task(
    cfg: &BacktestConfig,
    panel: &VintagePanel,
    target: &str,
    h: usize,
    origin: YearMonth,
    realized: Option<f64>,
) -> TaskOutput {
    let fail = |message: String| FailureRecord {
        model: BENCHMARK.into(),
        target: target.into(),
        mode: None,
        h,
        origin,
        message,
    };
    let run = || -> Result<Vec<f64>> {
        let vintage = panel.vintage(origin).ok_or(Error::MissingVintage(origin))?;
        let j = panel.series_index(target).ok_or_else(|| Error::Lookup(target.into()))?;
        let series = apply_transform(vintage.column(j), panel.specs()[j].transform)?;
        let start = vintage.row_index(cfg.estimation_start).unwrap_or(0);
        let last = (start..series.len())
            .rev()
            .find(|&i| series[i].is_finite())
            .ok_or_else(|| Error::Precondition("target has no observations".into()))?;
        let mut first = last;
        while first > start && series[first - 1].is_finite() {
            first -= 1;
        }
        let block = &series[first..=last];
        if block.len() < AR1_MIN_LEN {
            return Err(Error::Precondition(format!("only {} contiguous target observations", block.len())));
        }
        let last_month = vintage.month_of(last);
        let gap = last_month.months_until(origin.add_months(h as i64));
        if gap < 1 {
            return Err(Error::Precondition("target already observed at the forecast date".into()));
        }
        let mut qs = cfg
            .quantile_grid
            .iter()
            .map(|&tau| Ok(fit_ar1_benchmark(block, tau, gap as usize)?.predict(block[block.len() - 1])))
            .collect::<Result<Vec<f64>>>()?;
        if cfg.rearrange {
            qs = rearrange_quantiles(&qs);
        }
        Ok(qs)
    };
    match run() {
        Ok(qs) => (
            make_records(BENCHMARK, target, None, h, origin, &cfg.quantile_grid, &qs, realized),
            Vec::new(),
            None,
        ),
        Err(e) => (Vec::new(), vec![fail(e.to_string())], None),
    }
}

#[allow(clippy::too_many_arguments)]
fn model_task(
    cfg: &BacktestConfig,
    panel: &VintagePanel,
    text: Option<&MonthlyFrame>,
    models: &[Box<dyn Forecaster>],
    target: &str,
    mode: PredictorMode,
    h: usize,
    origin: YearMonth,
    realized: Option<f64>,
    seed_parts: &[u64],
) -> TaskOutput {
    let fail = |model: String, message: String| FailureRecord {
        model,
        target: target.into(),
        mode: Some(mode),
        h,
        origin,
        message,
    };
    let design = match assemble_design(panel, text, target, origin, h, mode, &cfg.design_options()) {
        Ok(d) => d,
        Err(e) => {
            let failures = models.iter().map(|m| fail(m.name(), format!("design: {e}"))).collect();
            return (Vec::new(), failures, None);
        }
    };
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (mi, m) in models.iter().enumerate() {
        let mut parts = seed_parts.to_vec();
        parts.push(mi as u64);
        let seed = derive_seed(cfg.seed, &parts);
        let out = m.forecast(&design, &cfg.quantile_grid, seed).and_then(|qs| {
            if qs.len() != cfg.quantile_grid.len() {
                return Err(Error::Dimension { expected: cfg.quantile_grid.len(), got: qs.len() });
            }
            if qs.iter().any(|q| !q.is_finite()) {
                return Err(Error::numerical(0, "non-finite forecast"));
            }
            Ok(qs)
        });
        match out {
            Ok(mut qs) => {
                if cfg.rearrange {
                    qs = rearrange_quantiles(&qs);
                }
                records.extend(make_records(&m.name(), target, Some(mode), h, origin, &cfg.quantile_grid, &qs, realized));
            }
            Err(e) => failures.push(fail(m.name(), e.to_string())),
        }
    }
    let row = PredictorRow {
        target: target.into(),
        mode,
        h,
        origin,
        columns: design.columns().to_vec(),
        values: design.raw_x_new().as_slice().to_vec(),
    };
    (records, failures, Some(row))
}

type SeriesKey = (String, String, Option<PredictorMode>, usize);

fn tau_key(grid: &[f64], tau: f64) -> usize {
    grid.iter().position(|&t| t == tau).expect("tau comes from the grid")
}

/// Relative scores and DM tests for every model series, including the
/// benchmark against itself.
pub fn aggregate(records: &[ForecastRecord], grid: &[f64]) -> Result<Vec<AggregateRow>> {
    let mut scores: BTreeMap<(SeriesKey, usize), BTreeMap<YearMonth, f64>> = BTreeMap::new();
    for r in records {
        if let Some(s) = r.score {
            let key = ((r.model.clone(), r.target.clone(), r.mode, r.h), tau_key(grid, r.tau));
            scores.entry(key).or_default().insert(r.date, s);
        }
    }
    let mut rows = Vec::new();
    for (((model, target, mode, h), ti), series) in &scores {
        let bench_key = ((BENCHMARK.to_string(), target.clone(), None, *h), *ti);
        let Some(bench) = scores.get(&bench_key) else { continue };
        let (a, b): (Vec<f64>, Vec<f64>) =
            series.iter().filter_map(|(d, s)| bench.get(d).map(|bs| (*s, *bs))).unzip();
        if a.is_empty() {
            continue;
        }
        let n = a.len();
        let mean_score = a.iter().sum::<f64>() / n as f64;
        let benchmark_score = b.iter().sum::<f64>() / n as f64;
        let ratio = if model == BENCHMARK && mode.is_none() {
            1.0
        } else if benchmark_score > 0.0 {
            mean_score / benchmark_score
        } else {
            f64::NAN
        };
        let dm = if n >= DM_MIN_LEN { Some(dm_test(&a, &b, *h)?) } else { None };
        rows.push(AggregateRow {
            model: model.clone(),
            target: target.clone(),
            mode: *mode,
            h: *h,
            tau: grid[*ti],
            n,
            mean_score,
            benchmark_score,
            ratio,
            dm_stat: dm.map(|d| d.stat),
            dm_p: dm.map(|d| d.p_value),
            significant: dm.is_some_and(|d| !d.degenerate && d.p_value < DM_LEVEL),
            degenerate: dm.is_some_and(|d| d.degenerate),
        });
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl BacktestReport {
    pub fn forecasts_csv(&self) -> String {
        let mut s = String::from("model,target,mode,h,tau,origin,date,forecast,realized,score\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{:?},{},{},{:?},{},{}",
                r.model,
                r.target,
                mode_label(r.mode),
                r.h,
                r.tau,
                r.origin,
                r.date,
                r.forecast,
                opt(r.realized),
                opt(r.score)
            );
        }
        s
    }

    pub fn aggregate_csv(&self) -> String {
        let mut s = String::from(
            "model,target,mode,h,tau,n,mean_score,benchmark_score,ratio,dm_stat,dm_p,significant,degenerate\n",
        );
        for a in &self.aggregates {
            let _ = writeln!(
                s,
                "{},{},{},{},{:?},{},{:?},{:?},{:?},{},{},{},{}",
                a.model,
                a.target,
                mode_label(a.mode),
                a.h,
                a.tau,
                a.n,
                a.mean_score,
                a.benchmark_score,
                a.ratio,
                opt(a.dm_stat),
                opt(a.dm_p),
                a.significant,
                a.degenerate
            );
        }
        s
    }

    pub fn failures_csv(&self) -> String {
        let mut s = String::from("model,target,mode,h,origin,message\n");
        for f in &self.failures {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                f.model,
                f.target,
                mode_label(f.mode),
                f.h,
                f.origin,
                csv_text(&f.message)
            );
        }
        s
    }

    pub fn aggregate_row(
        &self,
        model: &str,
        target: &str,
        mode: Option<PredictorMode>,
        h: usize,
        tau: f64,
    ) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.model == model && a.target == target && a.mode == mode && a.h == h && a.tau == tau)
    }

    /// Forecast path of one model series with the standardized forecast-row
    /// predictors of the same origins. Only columns present at every origin
    /// are kept; standardization uses the moments over the returned rows.
    pub fn surrogate_inputs(
        &self,
        model: &str,
        target: &str,
        mode: PredictorMode,
        h: usize,
        tau: f64,
    ) -> Result<(Vec<YearMonth>, Vec<f64>, DMatrix<f64>, Vec<Column>)> {
        let path: BTreeMap<YearMonth, f64> = self
            .records
            .iter()
            .filter(|r| r.model == model && r.target == target && r.mode == Some(mode) && r.h == h && r.tau == tau)
            .map(|r| (r.origin, r.forecast))
            .collect();
        let rows: Vec<&PredictorRow> = self
            .predictors
            .iter()
            .filter(|p| p.target == target && p.mode == mode && p.h == h && path.contains_key(&p.origin))
            .collect();
        if rows.is_empty() {
            return Err(Error::Precondition(format!("no forecasts recorded for {model}/{target}/{}/h={h}/τ={tau}", mode.as_str())));
        }
        let mut common: Vec<Column> = rows[0].columns.clone();
        for r in &rows[1..] {
            let names: BTreeSet<&str> = r.columns.iter().map(|c| c.name.as_str()).collect();
            common.retain(|c| names.contains(c.name.as_str()));
        }
        let n = rows.len();
        let mut x = DMatrix::zeros(n, common.len());
        for (i, r) in rows.iter().enumerate() {
            for (j, c) in common.iter().enumerate() {
                let k = r.columns.iter().position(|rc| rc.name == c.name).expect("column is common");
                x[(i, j)] = r.values[k];
            }
        }
        let mut keep = Vec::new();
        for j in 0..x.ncols() {
            let mean = x.column(j).mean();
            let sd = (x.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            if sd > 1e-12 {
                for i in 0..n {
                    x[(i, j)] = (x[(i, j)] - mean) / sd;
                }
                keep.push(j);
            }
        }
        let x = x.select_columns(&keep);
        let columns = keep.iter().map(|&j| common[j].clone()).collect();
        let dates = rows.iter().map(|r| r.origin).collect();
        let y = rows.iter().map(|r| path[&r.origin]).collect();
        Ok((dates, y, x, columns))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{SeriesSpec, TransformCode, Vintage};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn panel() -> VintagePanel {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 120;
        let mut y = vec![0.0; n];
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        for t in 1..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            y[t] = 0.4 * y[t - 1] + 0.5 * x[t - 1] + e;
        }
        let specs = vec![
            SeriesSpec { id: "Y".into(), transform: TransformCode::Level, is_financial: false },
            SeriesSpec { id: "X".into(), transform: TransformCode::Level, is_financial: false },
        ];
        let first = YearMonth::new(2000, 1).unwrap();
        let full = Vintage::new(first, vec![y, x]).unwrap();
        let last = first.add_months(n as i64 - 1);
        VintagePanel::from_final(specs, &full, first.add_months(90), last.succ()).unwrap()
    }

    fn config() -> BacktestConfig {
        BacktestConfig {
            quantile_grid: vec![0.1, 0.5, 0.9],
            horizons: vec![0],
            eval_start: YearMonth::new(2007, 7).unwrap(),
            eval_end: YearMonth::new(2009, 6).unwrap(),
            estimation_start: YearMonth::new(2000, 3).unwrap(),
            models: vec![],
            predictor_modes: vec![PredictorMode::Fred],
            targets: vec!["Y".into()],
            n_lags: 1,
            ..Default::default()
        }
    }

    /// Replays the AR(1) benchmark as an ordinary model.
    struct Replay(Vec<ForecastRecord>);

    impl Forecaster for Replay {
        fn name(&self) -> String {
            "replay".into()
        }
        fn forecast(&self, d: &DesignMatrix, taus: &[f64], _seed: u64) -> Result<Vec<f64>> {
            let o = d.origin().unwrap();
            Ok(taus
                .iter()
                .map(|&t| self.0.iter().find(|r| r.origin == o && r.tau == t).unwrap().forecast)
                .collect())
        }
    }

    /// Knows the realized value.
    struct Oracle(VintagePanel);

    impl Forecaster for Oracle {
        fn name(&self) -> String {
            "oracle".into()
        }
        fn forecast(&self, d: &DesignMatrix, taus: &[f64], _seed: u64) -> Result<Vec<f64>> {
            let date = d.origin().unwrap().add_months(d.horizon() as i64);
            let y = realized_target(&self.0, "Y", date, RealizationVintage::Final)?.unwrap();
            Ok(vec![y; taus.len()])
        }
    }

    struct Failing;

    impl Forecaster for Failing {
        fn name(&self) -> String {
            "failing".into()
        }
        fn forecast(&self, _: &DesignMatrix, _: &[f64], _: u64) -> Result<Vec<f64>> {
            Err(Error::numerical(3, "boom"))
        }
    }

    #[test]
    fn config_validation_collects_everything() {
        let mut c = config();
        c.eval_start = YearMonth::new(2010, 1).unwrap();
        c.quantile_grid = vec![0.5, 0.1];
        c.horizons = vec![2];
        let p = c.problems();
        assert_eq!(p.len(), 4);
        assert!(p[0].to_string().contains("eval_start") && p[0].to_string().contains("eval_end"));
    }

    #[test]
    fn benchmark_replay_and_oracle_bounds() {
        let p = panel();
        let cfg = config();
        let base = run_backtest(&cfg, &p, None, &[Box::new(Failing) as Box<dyn Forecaster>]).unwrap();
        assert_eq!(base.failures.len(), 24);
        let bench: Vec<ForecastRecord> = base.records.iter().filter(|r| r.model == BENCHMARK).cloned().collect();
        assert_eq!(bench.len(), 24 * 3);
        let models: Vec<Box<dyn Forecaster>> = vec![Box::new(Replay(bench)), Box::new(Oracle(p.clone()))];
        let rep = run_backtest(&cfg, &p, None, &models).unwrap();
        assert!(rep.failures.is_empty());
        for &tau in &cfg.quantile_grid {
            let fred = Some(PredictorMode::Fred);
            let a = rep.aggregate_row("replay", "Y", fred, 0, tau).unwrap();
            assert_eq!(a.ratio, 1.0);
            assert_eq!(a.n, 24);
            let b = rep.aggregate_row(BENCHMARK, "Y", None, 0, tau).unwrap();
            assert_eq!(b.ratio, 1.0);
            let o = rep.aggregate_row("oracle", "Y", fred, 0, tau).unwrap();
            assert_eq!(o.mean_score, 0.0);
            assert_eq!(o.ratio, 0.0);
            assert!(o.significant);
        }
    }

    #[test]
    fn aggregates_match_recomputation_from_csv() {
        let p = panel();
        let mut cfg = config();
        cfg.horizons = vec![0, 1];
        let models: Vec<Box<dyn Forecaster>> =
            vec![build_forecaster(ModelKind::BqrRidge, &ModelSettings::default())];
        let rep = run_backtest(&cfg, &p, None, &models).unwrap();
        // Re-read forecasts, recompute scores and means independently.
        let csv = rep.forecasts_csv();
        let mut sums: BTreeMap<(String, String, String, String), (f64, usize)> = BTreeMap::new();
        for line in csv.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let tau: f64 = f[4].parse().unwrap();
            let q: f64 = f[7].parse().unwrap();
            let y: f64 = f[8].parse().unwrap();
            let u = y - q;
            let s = u * (tau - if u < 0.0 { 1.0 } else { 0.0 });
            let e = sums.entry((f[0].into(), f[2].into(), f[3].into(), f[4].into())).or_default();
            e.0 += s;
            e.1 += 1;
        }
        for a in &rep.aggregates {
            let key = (a.model.clone(), mode_label(a.mode).into(), a.h.to_string(), format!("{:?}", a.tau));
            let (s, n) = sums[&key];
            assert_eq!(n, a.n);
            assert!((s / n as f64 - a.mean_score).abs() < 1e-12);
        }
        // Same config, same bytes.
        let again = run_backtest(&cfg, &p, None, &models).unwrap();
        assert_eq!(again.forecasts_csv(), csv);
        assert_eq!(again.aggregate_csv(), rep.aggregate_csv());
    }

    #[test]
    fn surrogate_inputs_are_aligned() {
        let p = panel();
        let cfg = config();
        let models: Vec<Box<dyn Forecaster>> = vec![build_forecaster(ModelKind::Qrf, &ModelSettings::default())];
        let rep = run_backtest(&cfg, &p, None, &models).unwrap();
        let (dates, y, x, cols) = rep.surrogate_inputs("qrf", "Y", PredictorMode::Fred, 0, 0.5).unwrap();
        assert_eq!(dates.len(), 24);
        assert_eq!(y.len(), x.nrows());
        assert_eq!(cols.len(), x.ncols());
        for j in 0..x.ncols() {
            assert!(x.column(j).mean().abs() < 1e-12);
        }
    }
}
