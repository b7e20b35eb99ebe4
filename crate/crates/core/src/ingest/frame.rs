use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::date::YearMonth;
use crate::error::{Error, Result};

/// Named monthly predictors, such as averaged topic proportions.
/// Months need not be contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthlyFrame {
    names: Vec<String>,
    rows: BTreeMap<YearMonth, Vec<f64>>,
}

impl MonthlyFrame {
    pub fn new(names: Vec<String>, rows: BTreeMap<YearMonth, Vec<f64>>) -> Result<Self> {
        for (m, r) in &rows {
            if r.len() != names.len() {
                return Err(Error::validation(
                    m.to_string(),
                    format!("row has {} values, expected {}", r.len(), names.len()),
                ));
            }
        }
        Ok(Self { names, rows })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, month: YearMonth) -> Option<&[f64]> {
        self.rows.get(&month).map(Vec::as_slice)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&YearMonth, &Vec<f64>)> {
        self.rows.iter()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Copy keeping only months up to and including `last`.
    pub fn truncated(&self, last: YearMonth) -> Self {
        Self {
            names: self.names.clone(),
            rows: self.rows.range(..=last).map(|(k, v)| (*k, v.clone())).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("date");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (m, r) in &self.rows {
            out.push_str(&m.to_string());
            for v in r {
                out.push_str(&format!(",{v:?}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
        let names: Vec<String> = header.split(',').skip(1).map(|s| s.trim().to_string()).collect();
        let mut rows = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut cells = line.split(',');
            let m: YearMonth = cells
                .next()
                .unwrap_or("")
                .parse()
                .map_err(|e| Error::parse(path, i + 2, format!("{e}")))?;
            let vals = cells
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
            rows.insert(m, vals);
        }
        Self::new(names, rows)
    }
}
