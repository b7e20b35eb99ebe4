use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub date: NaiveDate,
    #[serde(default)]
    pub source: String,
    pub text: String,
}

/// A dated collection of raw documents with unique ids.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &documents {
            if !seen.insert(d.id.as_str()) {
                return Err(Error::validation("id", format!("duplicate document id `{}`", d.id)));
            }
        }
        Ok(Self { documents })
    }

    /// Read newline-delimited JSON records `{id, date, source, text}`.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut docs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document =
                serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            docs.push(doc);
        }
        Self::new(docs)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for d in &self.documents {
            out.push_str(&serde_json::to_string(d)?);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedDoc {
    pub id: String,
    pub date: NaiveDate,
    pub tokens: Vec<String>,
}

impl TokenizedDoc {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct TokenizedCorpus {
    pub docs: Vec<TokenizedDoc>,
}

impl TokenizedCorpus {
    /// Ids of documents left without tokens.
    pub fn empty_ids(&self) -> Vec<&str> {
        self.docs.iter().filter(|d| d.is_empty()).map(|d| d.id.as_str()).collect()
    }

    /// Every distinct token, sorted.
    pub fn vocabulary(&self) -> BTreeSet<String> {
        self.docs.iter().flat_map(|d| d.tokens.iter().cloned()).collect()
    }
}

const STOPWORDS_EN: &str = include_str!("stopwords_en.txt");

/// The bundled English stopword list.
pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_EN
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// Read a keep-list: one term per line, blank lines and `#` comments ignored.
pub fn read_keep_list(path: &Path) -> Result<BTreeSet<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

/// Lowercased alphabetic tokens of one text with stopwords removed.
pub fn tokenize_text(text: &str, keep: Option<&BTreeSet<String>>) -> Vec<String> {
    let stop = stopwords();
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && t.chars().all(|c| c.is_alphabetic()))
        .map(str::to_lowercase)
        .filter(|t| !stop.contains(t.as_str()))
        .filter(|t| keep.is_none_or(|k| k.contains(t)))
        .collect()
}

/// Tokenize every document. Tokens mixing letters and digits, numbers,
/// punctuation and symbols are discarded. When `keep` is given only listed
/// terms survive.
pub fn tokenize(corpus: &Corpus, keep: Option<&BTreeSet<String>>) -> TokenizedCorpus {
    let docs = corpus
        .documents
        .par_iter()
        .map(|d| TokenizedDoc {
            id: d.id.clone(),
            date: d.date,
            tokens: tokenize_text(&d.text, keep),
        })
        .collect();
    TokenizedCorpus { docs }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            id: id.into(),
            date: NaiveDate::from_ymd_opt(2000, 5, 1).unwrap(),
            source: "test".into(),
            text: text.into(),
        }
    }

    #[test]
    fn strips_numbers_punctuation_and_stopwords() {
        assert_eq!(tokenize_text("Prices rose 3% in May.", None), vec!["prices", "rose"]);
        assert_eq!(tokenize_text("GDP-growth, 2nd quarter!", None), vec!["gdp", "growth", "quarter"]);
    }

    #[test]
    fn empty_documents_are_flagged() {
        let c = Corpus::new(vec![doc("a", ""), doc("b", "bank lending")]).unwrap();
        let t = tokenize(&c, None);
        assert_eq!(t.empty_ids(), vec!["a"]);
        assert_eq!(t.docs[1].tokens, vec!["bank", "lending"]);
    }

    #[test]
    fn keep_list_filters() {
        let keep: BTreeSet<String> = ["inflation".to_string()].into();
        assert_eq!(tokenize_text("inflation fears rise", Some(&keep)), vec!["inflation"]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(Corpus::new(vec![doc("a", "x"), doc("a", "y")]).is_err());
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let c = Corpus::new(vec![doc("a", "oil prices"), doc("b", "bank \"crisis\"")]).unwrap();
        c.write_jsonl(&p).unwrap();
        let back = Corpus::read_jsonl(&p).unwrap();
        assert_eq!(back.documents(), c.documents());
        std::fs::write(&p, "{\"id\":\"x\",\"date\":\"2000-13-01\",\"text\":\"\"}\n").unwrap();
        assert!(matches!(Corpus::read_jsonl(&p), Err(Error::Parse { row: 1, .. })));
    }
}
