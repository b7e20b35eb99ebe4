//! Timing-aligned, standardized predictor matrices.
//!
//! For an origin month `O` the forecast row uses non-financial series dated
//! `O-1` (one-month publication lag), financial series and text predictors
//! dated `O`, and lags `1..=n_lags` of the transformed target. Historical rows
//! follow the same dating relative to their own month. Everything is read from
//! the vintage published at `O`, so nothing dated after the origin can enter.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::frame::MonthlyFrame;
use super::panel::VintagePanel;
use super::transform::apply_transform;
use crate::date::YearMonth;
use crate::error::{Error, Result};

/// Which predictor blocks enter the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorMode {
    Fred,
    Text,
    Both,
}

impl PredictorMode {
    pub fn uses_fred(self) -> bool {
        matches!(self, PredictorMode::Fred | PredictorMode::Both)
    }

    pub fn uses_text(self) -> bool {
        matches!(self, PredictorMode::Text | PredictorMode::Both)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PredictorMode::Fred => "fred",
            PredictorMode::Text => "text",
            PredictorMode::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Fred,
    Text,
    /// Lags of the variable being forecast.
    TargetLag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub provenance: Provenance,
}

impl Column {
    pub fn new(name: impl Into<String>, provenance: Provenance) -> Self {
        Self {
            name: name.into(),
            provenance,
        }
    }
}

/// Column moments below this are treated as constant and dropped.
const MIN_SD: f64 = 1e-12;

/// A standardized regression problem for one (target, horizon, origin).
///
/// Standardization constants come from the estimation rows only and are
/// reused for the forecast row.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
    y: DVector<f64>,
    x_new: DVector<f64>,
    raw_x: DMatrix<f64>,
    raw_x_new: DVector<f64>,
    columns: Vec<Column>,
    means: Vec<f64>,
    sds: Vec<f64>,
    dropped: Vec<String>,
    h: usize,
    origin: Option<YearMonth>,
    rows: Vec<YearMonth>,
    x_new_dates: Vec<YearMonth>,
    target_id: String,
}

impl DesignMatrix {
    /// Standardize raw estimation rows and a raw forecast row. Constant
    /// columns are dropped and listed in [`DesignMatrix::dropped`].
    pub fn from_raw(
        raw_x: DMatrix<f64>,
        y: DVector<f64>,
        raw_x_new: DVector<f64>,
        columns: Vec<Column>,
    ) -> Result<Self> {
        let (n, k) = raw_x.shape();
        if y.len() != n {
            return Err(Error::Dimension { expected: n, got: y.len() });
        }
        if raw_x_new.len() != k {
            return Err(Error::Dimension { expected: k, got: raw_x_new.len() });
        }
        if columns.len() != k {
            return Err(Error::Dimension { expected: k, got: columns.len() });
        }
        if n < 2 {
            return Err(Error::Length(format!("need at least 2 estimation rows, got {n}")));
        }
        if raw_x.iter().chain(y.iter()).chain(raw_x_new.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Precondition("design contains missing or non-finite values".into()));
        }
        let mut keep = Vec::new();
        let mut means = Vec::new();
        let mut sds = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..k {
            let col = raw_x.column(j);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let sd = var.sqrt();
            if sd <= MIN_SD * mean.abs().max(1.0) {
                dropped.push(columns[j].name.clone());
            } else {
                keep.push(j);
                means.push(mean);
                sds.push(sd);
            }
        }
        let raw_x = raw_x.select_columns(&keep);
        let raw_x_new = DVector::from_iterator(keep.len(), keep.iter().map(|&j| raw_x_new[j]));
        let columns: Vec<Column> = keep.iter().map(|&j| columns[j].clone()).collect();
        let mut x = raw_x.clone();
        for (j, mut col) in x.column_iter_mut().enumerate() {
            col.apply(|v| *v = (*v - means[j]) / sds[j]);
        }
        let x_new = DVector::from_iterator(
            keep.len(),
            raw_x_new.iter().enumerate().map(|(j, v)| (v - means[j]) / sds[j]),
        );
        Ok(Self {
            x,
            y,
            x_new,
            raw_x,
            raw_x_new,
            columns,
            means,
            sds,
            dropped,
            h: 0,
            origin: None,
            rows: Vec::new(),
            x_new_dates: Vec::new(),
            target_id: String::new(),
        })
    }

    /// Convenience for synthetic problems: all columns are labelled `x{j}`
    /// with FRED provenance and the forecast row is the column means.
    pub fn from_matrix(raw_x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let k = raw_x.ncols();
        let columns = (0..k).map(|j| Column::new(format!("x{j}"), Provenance::Fred)).collect();
        let x_new = DVector::from_iterator(k, raw_x.column_iter().map(|c| c.mean()));
        Self::from_raw(raw_x, y, x_new, columns)
    }

    /// Standardized estimation rows.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Standardized predictor row at the origin.
    pub fn x_new(&self) -> &DVector<f64> {
        &self.x_new
    }

    pub fn raw_x(&self) -> &DMatrix<f64> {
        &self.raw_x
    }

    pub fn raw_x_new(&self) -> &DVector<f64> {
        &self.raw_x_new
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn sds(&self) -> &[f64] {
        &self.sds
    }

    /// Names of columns removed for having zero variance.
    pub fn dropped(&self) -> &[String] {
        &self.dropped
    }

    pub fn horizon(&self) -> usize {
        self.h
    }

    pub fn origin(&self) -> Option<YearMonth> {
        self.origin
    }

    /// Month `t` of each estimation row; the target of row `t` is dated `t+h`.
    pub fn row_dates(&self) -> &[YearMonth] {
        &self.rows
    }

    /// Month each forecast-row value was observed in.
    pub fn x_new_dates(&self) -> &[YearMonth] {
        &self.x_new_dates
    }

    pub fn target_id(&self) -> &str {
        &self.target_id
    }

    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_predictors(&self) -> usize {
        self.x.ncols()
    }

    /// Apply the stored standardization constants to a raw predictor row.
    pub fn standardize(&self, raw: &[f64]) -> Result<DVector<f64>> {
        if raw.len() != self.means.len() {
            return Err(Error::Dimension { expected: self.means.len(), got: raw.len() });
        }
        Ok(DVector::from_iterator(
            raw.len(),
            raw.iter().enumerate().map(|(j, v)| (v - self.means[j]) / self.sds[j]),
        ))
    }
}

/// Tunables for [`assemble_design`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignOptions {
    pub n_lags: usize,
    /// First admissible estimation month (`None`: earliest available).
    pub estimation_start: Option<YearMonth>,
    /// Fewer complete estimation rows than this is an error.
    pub min_rows: usize,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            n_lags: 12,
            estimation_start: None,
            min_rows: 24,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Source {
    /// Transformed panel series `j` observed `lag` months before the row month.
    Panel { series: usize, lag: i64 },
    /// Text predictor `k` observed in the row month.
    Text { k: usize },
}

/// Assemble the design for forecasting `target_id` at `origin + h` using
/// information available at the end of `origin`.
pub fn assemble_design(
    panel: &VintagePanel,
    text: Option<&MonthlyFrame>,
    target_id: &str,
    origin: YearMonth,
    h: usize,
    mode: PredictorMode,
    opts: &DesignOptions,
) -> Result<DesignMatrix> {
    let vintage = panel.vintage(origin).ok_or(Error::MissingVintage(origin))?;
    let target = panel
        .series_index(target_id)
        .ok_or_else(|| Error::Lookup(target_id.to_string()))?;
    let text = if mode.uses_text() {
        let t = text.ok_or_else(|| {
            Error::Precondition(format!("predictor mode `{}` requires a text matrix", mode.as_str()))
        })?;
        if t.get(origin).is_none() {
            return Err(Error::Precondition(format!("text matrix does not cover origin {origin}")));
        }
        Some(t)
    } else {
        None
    };

    let specs = panel.specs();
    let mut transformed = Vec::with_capacity(specs.len());
    for (j, spec) in specs.iter().enumerate() {
        let col = apply_transform(vintage.column(j), spec.transform)
            .map_err(|e| Error::validation(&spec.id, format!("vintage {origin}: {e}")))?;
        transformed.push(col);
    }
    let panel_value = |series: usize, month: YearMonth| -> f64 {
        vintage.row_index(month).map_or(f64::NAN, |i| transformed[series][i])
    };

    let mut sources = Vec::new();
    let mut columns = Vec::new();
    if mode.uses_fred() {
        for (j, spec) in specs.iter().enumerate() {
            if j == target {
                continue;
            }
            let lag = if spec.is_financial { 0 } else { 1 };
            sources.push(Source::Panel { series: j, lag });
            columns.push(Column::new(spec.id.clone(), Provenance::Fred));
        }
    }
    if let Some(t) = text {
        for (k, name) in t.names().iter().enumerate() {
            sources.push(Source::Text { k });
            columns.push(Column::new(name.clone(), Provenance::Text));
        }
    }
    for l in 1..=opts.n_lags {
        sources.push(Source::Panel { series: target, lag: l as i64 });
        columns.push(Column::new(format!("{}_lag{l}", specs[target].id), Provenance::TargetLag));
    }

    // Forecast row: fall back to each series' latest observation (ragged edge).
    let mut x_new = Vec::with_capacity(sources.len());
    let mut x_new_dates = Vec::with_capacity(sources.len());
    let mut keep = Vec::with_capacity(sources.len());
    let mut dropped = Vec::new();
    for (c, src) in sources.iter().enumerate() {
        let found = match *src {
            Source::Panel { series, lag } => {
                let mut d = origin.add_months(-lag);
                let mut hit = None;
                while d >= vintage.first() {
                    let v = panel_value(series, d);
                    if v.is_finite() {
                        hit = Some((v, d));
                        break;
                    }
                    d = d.pred();
                }
                hit
            }
            Source::Text { k } => text
                .and_then(|t| t.get(origin))
                .map(|r| (r[k], origin))
                .filter(|(v, _)| v.is_finite()),
        };
        match found {
            Some((v, d)) => {
                keep.push(c);
                x_new.push(v);
                x_new_dates.push(d);
            }
            None => dropped.push(columns[c].name.clone()),
        }
    }
    let sources: Vec<Source> = keep.iter().map(|&c| sources[c]).collect();
    let columns: Vec<Column> = keep.iter().map(|&c| columns[c].clone()).collect();

    let row_values = |t: YearMonth| -> Vec<f64> {
        sources
            .iter()
            .map(|src| match *src {
                Source::Panel { series, lag } => panel_value(series, t.add_months(-lag)),
                Source::Text { k } => text
                    .and_then(|tx| tx.get(t))
                    .map_or(f64::NAN, |r| r[k]),
            })
            .collect()
    };

    // Latest month whose target value is known in this vintage.
    let mut target_last = None;
    for i in (0..vintage.n_rows()).rev() {
        if transformed[target][i].is_finite() {
            target_last = Some(vintage.month_of(i));
            break;
        }
    }
    let target_last = target_last.ok_or_else(|| Error::Length(format!("target `{target_id}` has no observations")))?;
    let last_row = target_last.add_months(-(h as i64)).min(origin.pred());
    let first_row = opts
        .estimation_start
        .map_or(vintage.first(), |s| s.max(vintage.first()));

    // Walk backwards from the latest row, keeping the contiguous block of
    // complete rows; the earliest incomplete row truncates the sample.
    let mut rows = Vec::new();
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys = Vec::new();
    let mut t = last_row;
    while t >= first_row {
        let y = panel_value(target, t.add_months(h as i64));
        let r = row_values(t);
        let complete = y.is_finite() && r.iter().all(|v| v.is_finite());
        if !complete {
            if rows.is_empty() {
                t = t.pred();
                continue;
            }
            break;
        }
        rows.push(t);
        xs.push(r);
        ys.push(y);
        t = t.pred();
    }
    if rows.len() < opts.min_rows.max(2) {
        return Err(Error::Length(format!(
            "origin {origin}: only {} complete estimation rows for `{target_id}` with {} lags (need {})",
            rows.len(),
            opts.n_lags,
            opts.min_rows.max(2)
        )));
    }
    rows.reverse();
    xs.reverse();
    ys.reverse();

    let n = rows.len();
    let k = columns.len();
    let raw_x = DMatrix::from_fn(n, k, |i, j| xs[i][j]);
    let mut design = DesignMatrix::from_raw(
        raw_x,
        DVector::from_vec(ys),
        DVector::from_vec(x_new),
        columns.clone(),
    )?;
    let kept: Vec<usize> = design
        .columns
        .iter()
        .map(|c| columns.iter().position(|o| o.name == c.name).expect("column retained"))
        .collect();
    design.x_new_dates = kept.iter().map(|&j| x_new_dates[j]).collect();
    dropped.extend(design.dropped.drain(..));
    design.dropped = dropped;
    design.h = h;
    design.origin = Some(origin);
    design.rows = rows;
    design.target_id = target_id.to_string();
    Ok(design)
}

/// Which vintage supplies realized target values for scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RealizationVintage {
    /// The latest vintage in the panel.
    #[default]
    Final,
    /// The first vintage in which the month was published.
    FirstRelease,
}

/// Transformed value of `target_id` in `month`, as seen in the chosen vintage.
pub fn realized_target(
    panel: &VintagePanel,
    target_id: &str,
    month: YearMonth,
    which: RealizationVintage,
) -> Result<Option<f64>> {
    let target = panel
        .series_index(target_id)
        .ok_or_else(|| Error::Lookup(target_id.to_string()))?;
    let code = panel.specs()[target].transform;
    let lookup = |v: &super::panel::Vintage| -> Result<Option<f64>> {
        let Some(i) = v.row_index(month) else { return Ok(None) };
        let col = apply_transform(v.column(target), code)
            .map_err(|e| Error::validation(target_id, e.to_string()))?;
        Ok(Some(col[i]).filter(|x| x.is_finite()))
    };
    match which {
        RealizationVintage::Final => match panel.latest() {
            Some((_, v)) => lookup(v),
            None => Ok(None),
        },
        RealizationVintage::FirstRelease => {
            for (date, v) in panel.vintages() {
                if *date <= month {
                    continue;
                }
                if let Some(x) = lookup(v)? {
                    return Ok(Some(x));
                }
            }
            Ok(None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::panel::{SeriesSpec, Vintage};
    use crate::ingest::transform::TransformCode;
    use std::collections::BTreeMap;

    fn ym(s: &str) -> YearMonth {
        s.parse().unwrap()
    }

    fn small_panel() -> VintagePanel {
        let specs = vec![
            SeriesSpec { id: "Y".into(), transform: TransformCode::Level, is_financial: false },
            SeriesSpec { id: "M".into(), transform: TransformCode::Level, is_financial: false },
            SeriesSpec { id: "F".into(), transform: TransformCode::Level, is_financial: true },
        ];
        let n = 120;
        let full = Vintage::new(
            ym("1990-01"),
            vec![
                (0..n).map(|i| ((i * 7) % 11) as f64).collect(),
                (0..n).map(|i| ((i * 5) % 13) as f64 + 0.5).collect(),
                (0..n).map(|i| ((i * 3) % 17) as f64 - 1.0).collect(),
            ],
        )
        .unwrap();
        VintagePanel::from_final(specs, &full, ym("1997-01"), ym("1999-12")).unwrap()
    }

    #[test]
    fn standardization_moments() {
        let panel = small_panel();
        let d = assemble_design(&panel, None, "Y", ym("1999-12"), 0, PredictorMode::Fred, &DesignOptions::default()).unwrap();
        let n = d.n_obs() as f64;
        for col in d.x().column_iter() {
            let mean = col.sum() / n;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!(mean.abs() < 1e-10);
            assert!((sd - 1.0).abs() < 1e-10);
        }
        for i in 0..d.n_obs() {
            let raw: Vec<f64> = d.raw_x().row(i).iter().copied().collect();
            let z = d.standardize(&raw).unwrap();
            for j in 0..d.n_predictors() {
                assert!((z[j] - d.x()[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn text_mode_without_text_is_rejected() {
        let panel = small_panel();
        let err = assemble_design(&panel, None, "Y", ym("1999-12"), 0, PredictorMode::Text, &DesignOptions::default());
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn unknown_target_and_short_history() {
        let panel = small_panel();
        assert!(matches!(
            assemble_design(&panel, None, "nope", ym("1999-12"), 0, PredictorMode::Fred, &DesignOptions::default()),
            Err(Error::Lookup(_))
        ));
        let opts = DesignOptions { n_lags: 12, estimation_start: Some(ym("1999-01")), min_rows: 24 };
        assert!(matches!(
            assemble_design(&panel, None, "Y", ym("1999-12"), 0, PredictorMode::Fred, &opts),
            Err(Error::Length(_))
        ));
        assert!(matches!(
            assemble_design(&panel, None, "Y", ym("2005-12"), 0, PredictorMode::Fred, &DesignOptions::default()),
            Err(Error::MissingVintage(_))
        ));
    }

    #[test]
    fn rows_align_with_horizon() {
        let panel = small_panel();
        for h in [0usize, 1] {
            let d = assemble_design(&panel, None, "Y", ym("1999-12"), h, PredictorMode::Fred, &DesignOptions::default()).unwrap();
            let last = *d.row_dates().last().unwrap();
            assert_eq!(last.add_months(h as i64), ym("1999-11"));
            let full = panel.latest().unwrap().1;
            for (i, t) in d.row_dates().iter().enumerate() {
                assert_eq!(d.y()[i], full.value(0, t.add_months(h as i64)));
                let lag1 = d.column_index("Y_lag1").unwrap();
                assert_eq!(d.raw_x()[(i, lag1)], full.value(0, t.pred()));
            }
        }
    }

    #[test]
    fn ragged_edge_uses_latest_observation() {
        let specs = vec![
            SeriesSpec { id: "Y".into(), transform: TransformCode::Level, is_financial: false },
            SeriesSpec { id: "SLOW".into(), transform: TransformCode::Level, is_financial: false },
        ];
        let n = 60;
        let mut slow: Vec<f64> = (0..n).map(|i| (i % 7) as f64).collect();
        slow[n - 2] = f64::NAN; // month O-1 not yet published
        slow[n - 1] = f64::NAN;
        let v = Vintage::new(ym("1995-01"), vec![(0..n).map(|i| (i % 5) as f64).collect(), slow]).unwrap();
        let origin = v.last();
        let panel = VintagePanel::new(specs, BTreeMap::from([(origin, v)])).unwrap();
        let opts = DesignOptions { n_lags: 2, estimation_start: None, min_rows: 10 };
        let d = assemble_design(&panel, None, "Y", origin, 0, PredictorMode::Fred, &opts).unwrap();
        let j = d.column_index("SLOW").unwrap();
        assert_eq!(d.x_new_dates()[j], origin.add_months(-2));
    }
}
