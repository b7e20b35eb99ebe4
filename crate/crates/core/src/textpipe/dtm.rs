use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::corpus::TokenizedCorpus;
use crate::date::YearMonth;
use crate::error::{Error, Result};

/// Sparse document-term counts. Each row is a list of `(term index, count)`
/// pairs sorted by term index with positive counts.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentTermMatrix {
    rows: Vec<Vec<(u32, u32)>>,
    vocab: Vec<String>,
    doc_ids: Vec<String>,
    doc_dates: Vec<NaiveDate>,
}

impl DocumentTermMatrix {
    /// Build from parts, checking sortedness, bounds and the no-empty-column rule.
    pub fn new(
        rows: Vec<Vec<(u32, u32)>>,
        vocab: Vec<String>,
        doc_ids: Vec<String>,
        doc_dates: Vec<NaiveDate>,
    ) -> Result<Self> {
        if rows.len() != doc_ids.len() || rows.len() != doc_dates.len() {
            return Err(Error::Dimension { expected: rows.len(), got: doc_ids.len().min(doc_dates.len()) });
        }
        if vocab.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation("vocab", "must be sorted and duplicate-free"));
        }
        let mut col_used = vec![false; vocab.len()];
        for (d, row) in rows.iter().enumerate() {
            if row.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(Error::validation(format!("row {d}"), "term indices must be increasing"));
            }
            for &(t, c) in row {
                let t = t as usize;
                if t >= vocab.len() || c == 0 {
                    return Err(Error::validation(format!("row {d}"), "term index out of range or zero count"));
                }
                col_used[t] = true;
            }
        }
        if let Some(t) = col_used.iter().position(|u| !u) {
            return Err(Error::validation(&vocab[t], "term never occurs"));
        }
        Ok(Self { rows, vocab, doc_ids, doc_dates })
    }

    pub fn n_docs(&self) -> usize {
        self.rows.len()
    }

    pub fn n_terms(&self) -> usize {
        self.vocab.len()
    }

    pub fn row(&self, d: usize) -> &[(u32, u32)] {
        &self.rows[d]
    }

    pub fn rows(&self) -> &[Vec<(u32, u32)>] {
        &self.rows
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_dates(&self) -> &[NaiveDate] {
        &self.doc_dates
    }

    pub fn row_total(&self, d: usize) -> u64 {
        self.rows[d].iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn total_count(&self) -> u64 {
        (0..self.n_docs()).map(|d| self.row_total(d)).sum()
    }

    /// Dense count vector of one row.
    pub fn dense_row(&self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab.len()];
        for &(t, c) in &self.rows[d] {
            out[t as usize] = c as f64;
        }
        out
    }

    /// Subset of rows dated in or before `cutoff`.
    pub fn up_to(&self, cutoff: YearMonth) -> Result<Self> {
        self.filter_rows(|date| YearMonth::from_date(date) <= cutoff)
    }

    /// Rows satisfying `keep`, with columns that become empty removed.
    pub fn filter_rows(&self, keep: impl Fn(NaiveDate) -> bool) -> Result<Self> {
        let idx: Vec<usize> = (0..self.n_docs()).filter(|&d| keep(self.doc_dates[d])).collect();
        let mut used = vec![false; self.vocab.len()];
        for &d in &idx {
            for &(t, _) in &self.rows[d] {
                used[t as usize] = true;
            }
        }
        let mut remap = vec![u32::MAX; self.vocab.len()];
        let mut vocab = Vec::new();
        for (t, term) in self.vocab.iter().enumerate() {
            if used[t] {
                remap[t] = vocab.len() as u32;
                vocab.push(term.clone());
            }
        }
        let rows = idx
            .iter()
            .map(|&d| self.rows[d].iter().map(|&(t, c)| (remap[t as usize], c)).collect())
            .collect();
        Self::new(
            rows,
            vocab,
            idx.iter().map(|&d| self.doc_ids[d].clone()).collect(),
            idx.iter().map(|&d| self.doc_dates[d]).collect(),
        )
    }

    /// Persist as `dtm.triplets` (`doc term count` per line, zero-based),
    /// `vocab.txt` and `docs.txt` (`date<TAB>id`).
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut trip = format!("# docs={} terms={}\n", self.n_docs(), self.n_terms());
        for (d, row) in self.rows.iter().enumerate() {
            for &(t, c) in row {
                trip.push_str(&format!("{d} {t} {c}\n"));
            }
        }
        fs::write(dir.join("dtm.triplets"), trip)?;
        fs::write(dir.join("vocab.txt"), self.vocab.join("\n") + "\n")?;
        let docs: String = self
            .doc_ids
            .iter()
            .zip(&self.doc_dates)
            .map(|(id, date)| format!("{date}\t{id}\n"))
            .collect();
        fs::write(dir.join("docs.txt"), docs)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let vocab: Vec<String> = fs::read_to_string(dir.join("vocab.txt"))?
            .lines()
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        let docs_path = dir.join("docs.txt");
        let mut doc_ids = Vec::new();
        let mut doc_dates = Vec::new();
        for (i, line) in fs::read_to_string(&docs_path)?.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (date, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&docs_path, i + 1, "expected `date<TAB>id`"))?;
            doc_dates.push(
                date.parse()
                    .map_err(|e: chrono::ParseError| Error::parse(&docs_path, i + 1, e.to_string()))?,
            );
            doc_ids.push(id.to_string());
        }
        let trip_path = dir.join("dtm.triplets");
        let mut rows = vec![Vec::new(); doc_ids.len()];
        for (i, line) in fs::read_to_string(&trip_path)?.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let nums: Vec<u64> = line
                .split_whitespace()
                .map(|s| s.parse::<u64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(&trip_path, i + 1, e.to_string()))?;
            let [d, t, c] = nums[..] else {
                return Err(Error::parse(&trip_path, i + 1, "expected three integers"));
            };
            let row = rows
                .get_mut(d as usize)
                .ok_or_else(|| Error::parse(&trip_path, i + 1, "document index out of range"))?;
            row.push((t as u32, c as u32));
        }
        for row in &mut rows {
            row.sort_unstable();
        }
        Self::new(rows, vocab, doc_ids, doc_dates)
    }
}

/// Result of [`build_dtm`]: the matrix plus ids of documents dropped for
/// having no in-vocabulary tokens.
#[derive(Debug, Clone)]
pub struct DtmBuild {
    pub dtm: DocumentTermMatrix,
    pub dropped_docs: Vec<String>,
    /// Vocabulary terms that never occurred and were removed.
    pub unused_terms: Vec<String>,
}

/// Count in-vocabulary tokens per document.
pub fn build_dtm(corpus: &TokenizedCorpus, vocab: &BTreeSet<String>) -> Result<DtmBuild> {
    if vocab.is_empty() {
        return Err(Error::Precondition("vocabulary is empty".into()));
    }
    let index: HashMap<&str, u32> = vocab.iter().enumerate().map(|(i, t)| (t.as_str(), i as u32)).collect();
    let mut counts_per_doc = Vec::new();
    let mut dropped_docs = Vec::new();
    let mut used = vec![false; vocab.len()];
    for doc in &corpus.docs {
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for tok in &doc.tokens {
            if let Some(&t) = index.get(tok.as_str()) {
                *counts.entry(t).or_default() += 1;
                used[t as usize] = true;
            }
        }
        if counts.is_empty() {
            dropped_docs.push(doc.id.clone());
        } else {
            counts_per_doc.push((doc, counts));
        }
    }
    let mut remap = vec![u32::MAX; vocab.len()];
    let mut terms = Vec::new();
    let mut unused_terms = Vec::new();
    for (t, term) in vocab.iter().enumerate() {
        if used[t] {
            remap[t] = terms.len() as u32;
            terms.push(term.clone());
        } else {
            unused_terms.push(term.clone());
        }
    }
    let mut rows = Vec::with_capacity(counts_per_doc.len());
    let mut ids = Vec::with_capacity(counts_per_doc.len());
    let mut dates = Vec::with_capacity(counts_per_doc.len());
    for (doc, counts) in counts_per_doc {
        rows.push(counts.into_iter().map(|(t, c)| (remap[t as usize], c)).collect());
        ids.push(doc.id.clone());
        dates.push(doc.date);
    }
    Ok(DtmBuild {
        dtm: DocumentTermMatrix::new(rows, terms, ids, dates)?,
        dropped_docs,
        unused_terms,
    })
}

/// How per-document tf-idf values are reduced to one relevance score per term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TfIdfAggregate {
    #[default]
    Max,
    Mean,
    Sum,
}

#[derive(Debug, Clone)]
pub struct VocabSelection {
    pub terms: BTreeSet<String>,
    /// Set when fewer than the requested number of terms were available.
    pub short: bool,
}

/// Relevance score of every term over the documents dated up to `cutoff`,
/// with `tf = count / document length` and `idf = ln(N / df)`.
pub fn tfidf_scores(dtm: &DocumentTermMatrix, cutoff: YearMonth, agg: TfIdfAggregate) -> Vec<(String, f64)> {
    let docs: Vec<usize> = (0..dtm.n_docs())
        .filter(|&d| YearMonth::from_date(dtm.doc_dates[d]) <= cutoff)
        .collect();
    let n = docs.len() as f64;
    let mut df = vec![0u32; dtm.n_terms()];
    for &d in &docs {
        for &(t, _) in &dtm.rows[d] {
            df[t as usize] += 1;
        }
    }
    let mut score = vec![0.0f64; dtm.n_terms()];
    for &d in &docs {
        let len = dtm.row_total(d) as f64;
        for &(t, c) in &dtm.rows[d] {
            let t = t as usize;
            let v = (c as f64 / len) * (n / df[t] as f64).ln();
            match agg {
                TfIdfAggregate::Max => score[t] = score[t].max(v),
                TfIdfAggregate::Mean | TfIdfAggregate::Sum => score[t] += v,
            }
        }
    }
    if agg == TfIdfAggregate::Mean && n > 0.0 {
        score.iter_mut().for_each(|s| *s /= n);
    }
    (0..dtm.n_terms())
        .filter(|&t| df[t] > 0)
        .map(|t| (dtm.vocab[t].clone(), score[t]))
        .collect()
}

/// Keep the `v_max` terms with the highest tf-idf relevance computed only
/// from documents dated in or before `cutoff`. Ties go to the
/// lexicographically smaller term.
pub fn select_vocabulary(
    dtm: &DocumentTermMatrix,
    cutoff: YearMonth,
    v_max: usize,
    agg: TfIdfAggregate,
) -> Result<VocabSelection> {
    let earliest = dtm.doc_dates.iter().min().map(|d| YearMonth::from_date(*d));
    match earliest {
        None => return Err(Error::Precondition("document-term matrix is empty".into())),
        Some(e) if cutoff < e => {
            return Err(Error::Precondition(format!("cutoff {cutoff} precedes the first document ({e})")))
        }
        _ => {}
    }
    let mut scored = tfidf_scores(dtm, cutoff, agg);
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let short = scored.len() < v_max;
    if short {
        log::warn!("only {} distinct terms available, fewer than the requested {v_max}", scored.len());
    }
    Ok(VocabSelection {
        terms: scored.into_iter().take(v_max).map(|(t, _)| t).collect(),
        short,
    })
}
