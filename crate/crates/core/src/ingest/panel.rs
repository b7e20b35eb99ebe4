//! Vintage panels: dated snapshots of raw monthly series.
//!
//! A vintage file is a CSV whose first row holds `date` followed by series
//! ids, an optional `transform` row holding the codes, an optional
//! `financial` row holding 0/1 flags, and then one row per observation month
//! in chronological order. Empty cells and `NA` are missing values.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::transform::TransformCode;
use crate::date::YearMonth;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSpec {
    pub id: String,
    pub transform: TransformCode,
    /// Financial series are observed without publication lag.
    pub is_financial: bool,
}

/// Where series metadata comes from when reading a vintage file.
#[derive(Debug, Clone)]
pub enum SpecSource {
    /// Codes (and optional financial flags) are rows inside the CSV itself.
    HeaderRow,
    /// A TOML sidecar with one `[series.<id>]` table per series.
    Sidecar(PathBuf),
}

#[derive(Debug, Deserialize)]
struct SidecarFile {
    series: BTreeMap<String, SidecarEntry>,
}

#[derive(Debug, Deserialize)]
struct SidecarEntry {
    transform: u8,
    #[serde(default)]
    financial: bool,
}

/// One snapshot: contiguous monthly observations starting at `first`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vintage {
    first: YearMonth,
    n_rows: usize,
    /// Column-major storage, one vector per series.
    columns: Vec<Vec<f64>>,
}

impl Vintage {
    pub fn new(first: YearMonth, columns: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, Vec::len);
        if let Some((j, c)) = columns.iter().enumerate().find(|(_, c)| c.len() != n_rows) {
            return Err(Error::Dimension {
                expected: n_rows,
                got: c.len(),
            })
            .map_err(|e| Error::validation(format!("column {j}"), e.to_string()));
        }
        Ok(Self {
            first,
            n_rows,
            columns,
        })
    }

    pub fn first(&self) -> YearMonth {
        self.first
    }

    /// Month of the final observation row.
    pub fn last(&self) -> YearMonth {
        self.first.add_months(self.n_rows as i64 - 1)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn row_index(&self, month: YearMonth) -> Option<usize> {
        let k = self.first.months_until(month);
        (k >= 0 && (k as usize) < self.n_rows).then_some(k as usize)
    }

    pub fn month_of(&self, row: usize) -> YearMonth {
        self.first.add_months(row as i64)
    }

    pub fn value(&self, j: usize, month: YearMonth) -> f64 {
        self.row_index(month).map_or(f64::NAN, |i| self.columns[j][i])
    }

    /// Drop every row dated after `last`.
    pub fn truncated(&self, last: YearMonth) -> Vintage {
        let keep = (self.first.months_until(last) + 1).clamp(0, self.n_rows as i64) as usize;
        Vintage {
            first: self.first,
            n_rows: keep,
            columns: self.columns.iter().map(|c| c[..keep].to_vec()).collect(),
        }
    }
}

/// An ordered collection of vintages sharing one set of series.
#[derive(Debug, Clone, PartialEq)]
pub struct VintagePanel {
    specs: Vec<SeriesSpec>,
    vintages: BTreeMap<YearMonth, Vintage>,
}

impl VintagePanel {
    pub fn new(specs: Vec<SeriesSpec>, vintages: BTreeMap<YearMonth, Vintage>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &specs {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::validation(&s.id, "duplicate series id"));
            }
        }
        let mut prev_rows = 0;
        for (date, v) in &vintages {
            if v.columns.len() != specs.len() {
                return Err(Error::validation(
                    format!("vintage {date}"),
                    format!("has {} series, expected {}", v.columns.len(), specs.len()),
                ));
            }
            if v.n_rows < prev_rows {
                return Err(Error::validation(
                    format!("vintage {date}"),
                    format!("has {} rows, fewer than the {prev_rows} of an earlier vintage", v.n_rows),
                ));
            }
            prev_rows = v.n_rows;
        }
        Ok(Self { specs, vintages })
    }

    /// Build real-time views from a single fully revised panel.
    ///
    /// The view for vintage month `v` holds observations through `v`, with the
    /// month-`v` cells of non-financial series blanked to mimic their
    /// one-month publication lag.
    pub fn from_final(
        specs: Vec<SeriesSpec>,
        full: &Vintage,
        first_vintage: YearMonth,
        last_vintage: YearMonth,
    ) -> Result<Self> {
        let mut vintages = BTreeMap::new();
        for v in first_vintage.range_inclusive(last_vintage) {
            let mut view = full.truncated(v);
            if view.last() == v {
                let last_row = view.n_rows - 1;
                for (col, spec) in view.columns.iter_mut().zip(&specs) {
                    if !spec.is_financial {
                        col[last_row] = f64::NAN;
                    }
                }
            }
            vintages.insert(v, view);
        }
        Self::new(specs, vintages)
    }

    /// Read every `YYYY-MM.csv` file in `dir` as one vintage.
    pub fn load_dir(dir: &Path, source: &SpecSource) -> Result<Self> {
        let mut entries: Vec<(YearMonth, PathBuf)> = Vec::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("csv") {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            if let Ok(date) = stem.parse::<YearMonth>() {
                entries.push((date, path));
            }
        }
        if entries.is_empty() {
            return Err(Error::validation(
                dir.display().to_string(),
                "no YYYY-MM.csv vintage files found",
            ));
        }
        entries.sort();
        let mut specs: Option<Vec<SeriesSpec>> = None;
        let mut vintages = BTreeMap::new();
        for (date, path) in entries {
            let (s, v) = read_vintage_csv(&path, source)?;
            match &specs {
                None => specs = Some(s),
                Some(existing) if *existing != s => {
                    return Err(Error::validation(
                        path.display().to_string(),
                        "series ids or codes differ from earlier vintages",
                    ))
                }
                Some(_) => {}
            }
            vintages.insert(date, v);
        }
        Self::new(specs.unwrap_or_default(), vintages)
    }

    pub fn specs(&self) -> &[SeriesSpec] {
        &self.specs
    }

    pub fn series_index(&self, id: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.id == id)
    }

    pub fn vintage(&self, date: YearMonth) -> Option<&Vintage> {
        self.vintages.get(&date)
    }

    pub fn vintages(&self) -> impl Iterator<Item = (&YearMonth, &Vintage)> {
        self.vintages.iter()
    }

    pub fn latest(&self) -> Option<(&YearMonth, &Vintage)> {
        self.vintages.iter().next_back()
    }

    pub fn len(&self) -> usize {
        self.vintages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vintages.is_empty()
    }
}

/// Parse a single vintage file into a one-vintage panel dated by the file name
/// (`YYYY-MM.csv`), or by the month after its last observation otherwise.
pub fn parse_panel(file: &Path, source: &SpecSource) -> Result<VintagePanel> {
    let (specs, vintage) = read_vintage_csv(file, source)?;
    let date = file
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse::<YearMonth>().ok())
        .unwrap_or_else(|| vintage.last().succ());
    VintagePanel::new(specs, BTreeMap::from([(date, vintage)]))
}

fn parse_cell(cell: &str) -> Option<f64> {
    let c = cell.trim();
    if c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan") {
        Some(f64::NAN)
    } else {
        c.parse().ok()
    }
}

/// Read one vintage CSV, returning the series metadata and observations.
pub fn read_vintage_csv(path: &Path, source: &SpecSource) -> Result<(Vec<SeriesSpec>, Vintage)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        records.push(rec.map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    let header = records
        .first()
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let n_cols = ids.len();

    let mut codes: Option<Vec<String>> = None;
    let mut financial: Option<Vec<String>> = None;
    let mut row = 1;
    while row < records.len() {
        let label = records[row].get(0).unwrap_or("").trim().to_ascii_lowercase();
        let cells = || records[row].iter().skip(1).map(|s| s.trim().to_string()).collect();
        match label.as_str() {
            "transform" | "tcode" | "transform:" => codes = Some(cells()),
            "financial" => financial = Some(cells()),
            _ => break,
        }
        row += 1;
    }

    let specs = match source {
        SpecSource::HeaderRow => {
            let codes = codes.ok_or_else(|| Error::parse(path, 2, "missing transform row"))?;
            if codes.len() != n_cols {
                return Err(Error::parse(path, 2, "transform row length differs from header"));
            }
            let flags = financial.unwrap_or_else(|| vec!["0".to_string(); n_cols]);
            let mut specs = Vec::with_capacity(n_cols);
            for (j, id) in ids.iter().enumerate() {
                let code = codes[j]
                    .parse::<u8>()
                    .ok()
                    .and_then(|c| TransformCode::try_from(c).ok())
                    .ok_or_else(|| {
                        Error::validation(id, format!("unknown transformation code `{}`", codes[j]))
                    })?;
                let is_financial = matches!(
                    flags.get(j).map(|s| s.to_ascii_lowercase()).as_deref(),
                    Some("1" | "x" | "true" | "yes")
                );
                specs.push(SeriesSpec {
                    id: id.clone(),
                    transform: code,
                    is_financial,
                });
            }
            specs
        }
        SpecSource::Sidecar(sidecar) => {
            let text = fs::read_to_string(sidecar)?;
            let parsed: SidecarFile = toml::from_str(&text)
                .map_err(|e| Error::parse(sidecar, 0, e.to_string()))?;
            let mut specs = Vec::with_capacity(n_cols);
            for id in &ids {
                let entry = parsed
                    .series
                    .get(id)
                    .ok_or_else(|| Error::validation(id, "series missing from sidecar"))?;
                let code = TransformCode::try_from(entry.transform).map_err(|m| Error::validation(id, m))?;
                specs.push(SeriesSpec {
                    id: id.clone(),
                    transform: code,
                    is_financial: entry.financial,
                });
            }
            specs
        }
    };

    let mut seen = HashMap::new();
    for (j, id) in ids.iter().enumerate() {
        if let Some(prev) = seen.insert(id.as_str(), j) {
            return Err(Error::validation(id, format!("duplicate id in columns {prev} and {j}")));
        }
    }

    let mut first: Option<YearMonth> = None;
    let mut columns = vec![Vec::new(); n_cols];
    for (offset, rec) in records[row..].iter().enumerate() {
        let line = row + offset + 1;
        let date_cell = rec.get(0).unwrap_or("");
        if date_cell.trim().is_empty() && rec.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let date: YearMonth = date_cell
            .parse()
            .map_err(|e| Error::parse(path, line, format!("{e}")))?;
        match first {
            None => first = Some(date),
            Some(f) => {
                let expected = f.add_months(columns[0].len() as i64);
                if n_cols > 0 && date != expected {
                    return Err(Error::parse(
                        path,
                        line,
                        format!("expected month {expected}, got {date} (rows must be contiguous)"),
                    ));
                }
            }
        }
        if rec.len() > n_cols + 1 {
            return Err(Error::parse(path, line, "more cells than header columns"));
        }
        for (j, col) in columns.iter_mut().enumerate() {
            let cell = rec.get(j + 1).unwrap_or("");
            let v = parse_cell(cell)
                .ok_or_else(|| Error::parse(path, line, format!("bad number `{cell}` for `{}`", ids[j])))?;
            col.push(v);
        }
    }
    let first = first.ok_or_else(|| Error::parse(path, row + 1, "no observation rows"))?;
    Ok((specs, Vintage::new(first, columns)?))
}

/// Write a vintage in the CSV layout understood by [`read_vintage_csv`].
pub fn write_vintage_csv(path: &Path, specs: &[SeriesSpec], vintage: &Vintage) -> Result<()> {
    let mut out = String::from("date");
    for s in specs {
        out.push(',');
        out.push_str(&s.id);
    }
    out.push_str("\ntransform");
    for s in specs {
        out.push_str(&format!(",{}", s.transform));
    }
    out.push_str("\nfinancial");
    for s in specs {
        out.push_str(if s.is_financial { ",1" } else { ",0" });
    }
    out.push('\n');
    for i in 0..vintage.n_rows() {
        out.push_str(&vintage.month_of(i).to_string());
        for col in vintage.columns() {
            let v = col[i];
            if v.is_nan() {
                out.push(',');
            } else {
                out.push_str(&format!(",{v:?}"));
            }
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn codes_row_is_echoed() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "2000-01.csv",
            "date,A,B,C\ntransform,1,2,5\n1999-11,1,2,3\n1999-12,1.5,,4\n",
        );
        let panel = parse_panel(&p, &SpecSource::HeaderRow).unwrap();
        let codes: Vec<u8> = panel.specs().iter().map(|s| s.transform.code()).collect();
        assert_eq!(codes, vec![1, 2, 5]);
        let (date, v) = panel.latest().unwrap();
        assert_eq!(date.to_string(), "2000-01");
        assert_eq!(v.n_rows(), 2);
        assert!(v.column(1)[1].is_nan());
        assert_eq!(v.last().to_string(), "1999-12");
    }

    #[test]
    fn out_of_range_code_names_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "2000-01.csv", "date,A,B\ntransform,1,9\n1999-12,1,2\n");
        match parse_panel(&p, &SpecSource::HeaderRow) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "B"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_date_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "2000-01.csv",
            "date,A\ntransform,1\n1999-11,1\n1999-1x,2\n",
        );
        match parse_panel(&p, &SpecSource::HeaderRow) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        let p = write(dir.path(), "2000-02.csv", "date,A\ntransform,1\n1999-11,1\n2000-01,2\n");
        assert!(matches!(parse_panel(&p, &SpecSource::HeaderRow), Err(Error::Parse { row: 4, .. })));
    }

    #[test]
    fn two_vintages_with_growing_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("date,A\ntransform,5\nfinancial,0\n");
        let start = YearMonth::new(1983, 5).unwrap();
        for i in 0..201 {
            body.push_str(&format!("{},{}\n", start.add_months(i), 100.0 + i as f64));
        }
        let lines: Vec<&str> = body.lines().collect();
        write(dir.path(), "2000-01.csv", &(lines[..203].join("\n") + "\n"));
        write(dir.path(), "2000-02.csv", &body);
        write(dir.path(), "notes.txt", "ignored");
        let panel = VintagePanel::load_dir(dir.path(), &SpecSource::HeaderRow).unwrap();
        assert_eq!(panel.len(), 2);
        let rows: Vec<usize> = panel.vintages().map(|(_, v)| v.n_rows()).collect();
        assert_eq!(rows, vec![200, 201]);
    }

    #[test]
    fn shrinking_vintage_is_rejected() {
        let specs = vec![SeriesSpec {
            id: "A".into(),
            transform: TransformCode::Level,
            is_financial: false,
        }];
        let ym = |s: &str| s.parse::<YearMonth>().unwrap();
        let vintages = BTreeMap::from([
            (ym("2000-01"), Vintage::new(ym("1999-01"), vec![vec![1.0; 5]]).unwrap()),
            (ym("2000-02"), Vintage::new(ym("1999-01"), vec![vec![1.0; 4]]).unwrap()),
        ]);
        assert!(VintagePanel::new(specs, vintages).is_err());
    }

    #[test]
    fn sidecar_specs() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "2000-01.csv", "date,A,SP500\n1999-12,1,2\n");
        let side = write(
            dir.path(),
            "specs.toml",
            "[series.A]\ntransform = 2\n[series.SP500]\ntransform = 5\nfinancial = true\n",
        );
        let panel = parse_panel(&p, &SpecSource::Sidecar(side)).unwrap();
        assert_eq!(panel.specs()[1].transform, TransformCode::DiffLog);
        assert!(panel.specs()[1].is_financial);
        assert!(!panel.specs()[0].is_financial);

        let bad = write(dir.path(), "bad.toml", "[series.A]\ntransform = 8\n");
        assert!(parse_panel(&p, &SpecSource::Sidecar(bad)).is_err());
    }

    #[test]
    fn final_panel_views_blank_macro_edge() {
        let ym = |s: &str| s.parse::<YearMonth>().unwrap();
        let specs = vec![
            SeriesSpec { id: "M".into(), transform: TransformCode::Level, is_financial: false },
            SeriesSpec { id: "F".into(), transform: TransformCode::Level, is_financial: true },
        ];
        let full = Vintage::new(ym("1999-01"), vec![(0..24).map(f64::from).collect(), (0..24).map(f64::from).collect()]).unwrap();
        let panel = VintagePanel::from_final(specs, &full, ym("1999-10"), ym("1999-12")).unwrap();
        let v = panel.vintage(ym("1999-12")).unwrap();
        assert_eq!(v.last(), ym("1999-12"));
        assert!(v.value(0, ym("1999-12")).is_nan());
        assert_eq!(v.value(0, ym("1999-11")), 10.0);
        assert_eq!(v.value(1, ym("1999-12")), 11.0);
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ym = |s: &str| s.parse::<YearMonth>().unwrap();
        let specs = vec![
            SeriesSpec { id: "M".into(), transform: TransformCode::DiffLog, is_financial: false },
            SeriesSpec { id: "F".into(), transform: TransformCode::Diff, is_financial: true },
        ];
        let v = Vintage::new(ym("1999-01"), vec![vec![1.0, 2.5, f64::NAN], vec![0.1, 0.2, 0.3]]).unwrap();
        let p = dir.path().join("1999-04.csv");
        write_vintage_csv(&p, &specs, &v).unwrap();
        let (s2, v2) = read_vintage_csv(&p, &SpecSource::HeaderRow).unwrap();
        assert_eq!(s2, specs);
        assert_eq!(v2.first(), v.first());
        assert_eq!(v2.column(1), v.column(1));
        assert!(v2.column(0)[2].is_nan());
    }
}
