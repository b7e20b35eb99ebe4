//! Stationarity transformations for monthly macro series.
//!
//! Missing observations are represented as `NaN` throughout; differencing
//! produces leading `NaN`s for the consumed lags and propagates interior gaps.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the seven transformation codes used by monthly macro databases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum TransformCode {
    /// No transformation.
    Level = 1,
    /// First difference.
    Diff = 2,
    /// Second difference.
    Diff2 = 3,
    /// Natural log.
    Log = 4,
    /// First difference of logs.
    DiffLog = 5,
    /// Second difference of logs.
    Diff2Log = 6,
    /// First difference of the gross growth rate minus one.
    DiffPctChange = 7,
}

impl TransformCode {
    pub fn code(self) -> u8 {
        self as u8
    }

    /// Number of leading observations consumed by the transformation.
    pub fn order(self) -> usize {
        match self {
            TransformCode::Level | TransformCode::Log => 0,
            TransformCode::Diff | TransformCode::DiffLog => 1,
            TransformCode::Diff2 | TransformCode::Diff2Log | TransformCode::DiffPctChange => 2,
        }
    }

    fn uses_log(self) -> bool {
        matches!(
            self,
            TransformCode::Log
                | TransformCode::DiffLog
                | TransformCode::Diff2Log
                | TransformCode::DiffPctChange
        )
    }
}

impl TryFrom<u8> for TransformCode {
    type Error = String;

    fn try_from(code: u8) -> Result<Self, String> {
        Ok(match code {
            1 => TransformCode::Level,
            2 => TransformCode::Diff,
            3 => TransformCode::Diff2,
            4 => TransformCode::Log,
            5 => TransformCode::DiffLog,
            6 => TransformCode::Diff2Log,
            7 => TransformCode::DiffPctChange,
            other => return Err(format!("transformation code must be in 1..=7, got {other}")),
        })
    }
}

impl From<TransformCode> for u8 {
    fn from(code: TransformCode) -> u8 {
        code.code()
    }
}

impl fmt::Display for TransformCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

fn diff(x: &[f64]) -> Vec<f64> {
    let mut out = vec![f64::NAN; x.len()];
    for t in 1..x.len() {
        out[t] = x[t] - x[t - 1];
    }
    out
}

/// Apply a transformation code to a series. The output has the same length as
/// the input, with `NaN` in the positions whose lags were consumed.
///
/// Codes 4 to 7 require strictly positive observed values; `NaN` inputs are
/// passed through as missing.
pub fn apply_transform(series: &[f64], code: TransformCode) -> Result<Vec<f64>> {
    if series.len() < code.order() {
        return Err(Error::Length(format!(
            "transformation code {code} needs at least {} observations, got {}",
            code.order(),
            series.len()
        )));
    }
    if code.uses_log() {
        if let Some((index, &value)) = series
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_nan() && **v <= 0.0)
        {
            return Err(Error::Domain { index, value });
        }
    }
    let out = match code {
        TransformCode::Level => series.to_vec(),
        TransformCode::Diff => diff(series),
        TransformCode::Diff2 => diff(&diff(series)),
        TransformCode::Log => series.iter().map(|v| v.ln()).collect(),
        TransformCode::DiffLog => diff(&series.iter().map(|v| v.ln()).collect::<Vec<_>>()),
        TransformCode::Diff2Log => diff(&diff(&series.iter().map(|v| v.ln()).collect::<Vec<_>>())),
        TransformCode::DiffPctChange => {
            let mut growth = vec![f64::NAN; series.len()];
            for t in 1..series.len() {
                growth[t] = series[t] / series[t - 1] - 1.0;
            }
            diff(&growth)
        }
    };
    Ok(out)
}
