use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use nalgebra::DVector;
use rayon::prelude::*;

use super::model::{CtmModel, DocPosterior};
use crate::date::YearMonth;
use crate::error::Result;
use crate::ingest::MonthlyFrame;
use crate::textpipe::DocumentTermMatrix;

/// Monthly means of document topic proportions.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicSeries {
    months: Vec<YearMonth>,
    rows: Vec<DVector<f64>>,
    doc_counts: Vec<usize>,
    missing: Vec<YearMonth>,
}

impl TopicSeries {
    pub fn months(&self) -> &[YearMonth] {
        &self.months
    }

    pub fn rows(&self) -> &[DVector<f64>] {
        &self.rows
    }

    pub fn row(&self, month: YearMonth) -> Option<&DVector<f64>> {
        self.months.binary_search(&month).ok().map(|i| &self.rows[i])
    }

    /// Documents averaged in each month.
    pub fn doc_counts(&self) -> &[usize] {
        &self.doc_counts
    }

    /// Months inside the covered span that had no documents.
    pub fn missing(&self) -> &[YearMonth] {
        &self.missing
    }

    pub fn k(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    pub fn column_names(&self) -> Vec<String> {
        (0..self.k()).map(|k| format!("topic_{k:02}")).collect()
    }

    pub fn to_frame(&self) -> MonthlyFrame {
        let rows: BTreeMap<YearMonth, Vec<f64>> = self
            .months
            .iter()
            .zip(&self.rows)
            .map(|(m, r)| (*m, r.iter().copied().collect()))
            .collect();
        MonthlyFrame::new(self.column_names(), rows).expect("rows have equal width")
    }

    pub fn to_csv(&self) -> String {
        self.to_frame().to_csv()
    }
}

/// Average topic proportions by calendar month with equal document weights.
pub fn aggregate_monthly<'a, I>(posteriors: I) -> TopicSeries
where
    I: IntoIterator<Item = (NaiveDate, &'a DocPosterior)>,
{
    let mut acc: BTreeMap<YearMonth, (DVector<f64>, usize)> = BTreeMap::new();
    for (date, post) in posteriors {
        let e = acc
            .entry(YearMonth::from_date(date))
            .or_insert_with(|| (DVector::zeros(post.theta.len()), 0));
        e.0 += &post.theta;
        e.1 += 1;
    }
    let missing = match (acc.keys().next(), acc.keys().next_back()) {
        (Some(&a), Some(&b)) => a.range_inclusive(b).filter(|m| !acc.contains_key(m)).collect(),
        _ => Vec::new(),
    };
    if !missing.is_empty() {
        log::warn!("{} months have no documents", missing.len());
    }
    let mut months = Vec::with_capacity(acc.len());
    let mut rows = Vec::with_capacity(acc.len());
    let mut doc_counts = Vec::with_capacity(acc.len());
    for (m, (sum, n)) in acc {
        months.push(m);
        rows.push(sum / n as f64);
        doc_counts.push(n);
    }
    TopicSeries { months, rows, doc_counts, missing }
}

/// Held-out inference for every row of `dtm`. Terms outside the model
/// vocabulary are ignored.
pub fn infer_corpus(model: &CtmModel, dtm: &DocumentTermMatrix) -> Result<Vec<DocPosterior>> {
    let index: HashMap<&str, u32> = model
        .vocab()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i as u32))
        .collect();
    let remap: Vec<Option<u32>> = dtm.vocab().iter().map(|t| index.get(t.as_str()).copied()).collect();
    dtm.rows()
        .par_iter()
        .map(|row| {
            let mut words: Vec<(u32, u32)> = row
                .iter()
                .filter_map(|&(v, c)| remap[v as usize].map(|m| (m, c)))
                .collect();
            words.sort_unstable();
            model.infer_sparse(&words)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(theta: &[f64]) -> DocPosterior {
        DocPosterior {
            eta_mean: DVector::zeros(theta.len() - 1),
            eta_var: DVector::zeros(theta.len() - 1),
            zeta: 1.0,
            theta: DVector::from_column_slice(theta),
            prior_fallback: false,
        }
    }

    fn day(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn averages_within_month() {
        let a = post(&[1.0, 0.0]);
        let b = post(&[0.0, 1.0]);
        let c = post(&[0.3, 0.7]);
        let s = aggregate_monthly([(day(2001, 1, 3), &a), (day(2001, 1, 28), &b), (day(2001, 3, 1), &c)]);
        assert_eq!(s.months().len(), 2);
        assert_eq!(s.rows()[0].as_slice(), &[0.5, 0.5]);
        assert_eq!(s.rows()[1], c.theta);
        assert_eq!(s.missing(), &[YearMonth::new(2001, 2).unwrap()]);
        assert_eq!(s.doc_counts(), &[2, 1]);
    }

    #[test]
    fn csv_has_month_index() {
        let a = post(&[0.25, 0.75]);
        let s = aggregate_monthly([(day(2010, 12, 31), &a)]);
        let csv = s.to_csv();
        assert!(csv.starts_with("date,topic_00,topic_01\n2010-12,"));
    }
}
