//! Synthetic data: planted topic corpora, quantile regression designs and a
//! small vintage panel with a matching news corpus, so the whole pipeline
//! runs without external data.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ctm::softmax_with_reference;
use crate::date::YearMonth;
use crate::error::{Error, Result};
use crate::ingest::{write_vintage_csv, SeriesSpec, TransformCode, Vintage, VintagePanel};
use crate::textpipe::{stopwords, Corpus, Document, DocumentTermMatrix};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Pronounceable pseudo-words, none of them stopwords.
pub fn pseudo_words(n: usize) -> Vec<String> {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let stop = stopwords();
    let mut out = Vec::with_capacity(n);
    'outer: for a in C {
        for b in V {
            for c in C {
                for d in V {
                    for e in C {
                        let w: String = [*a, *b, *c, *d, *e].iter().map(|&x| x as char).collect();
                        if !stop.contains(w.as_str()) {
                            out.push(w);
                            if out.len() == n {
                                break 'outer;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// A corpus drawn from the correlated topic model's generative process.
#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub dtm: DocumentTermMatrix,
    pub beta: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub thetas: Vec<DVector<f64>>,
}

/// Topics concentrated on disjoint word blocks: `1 - spill` of each topic's
/// mass sits on its own block with Dirichlet(1) weights, `spill` is spread
/// uniformly over the whole vocabulary.
pub fn planted_topics(k: usize, v: usize, spill: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = Gamma::new(1.0, 1.0).expect("valid gamma");
    let mut beta = DMatrix::from_element(k, v, spill / v as f64);
    for t in 0..k {
        let lo = t * v / k;
        let hi = (t + 1) * v / k;
        let draws: Vec<f64> = (lo..hi).map(|_| g.sample(rng)).collect();
        let s: f64 = draws.iter().sum();
        for (i, d) in draws.into_iter().enumerate() {
            beta[(t, lo + i)] += (1.0 - spill) * d / s;
        }
    }
    beta
}

/// Draw `n_docs` documents of `doc_len` words: `η ~ N(μ, Σ)` on the first
/// `K-1` logits, `θ = softmax(η, 0)`, `z ~ θ`, `w ~ β_z`.
pub fn planted_ctm_corpus(
    beta: &DMatrix<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    n_docs: usize,
    doc_len: usize,
    seed: u64,
) -> Result<PlantedCorpus> {
    let (k, v) = beta.shape();
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::validation("sigma", "must be positive definite"))?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let word_dists: Vec<WeightedIndex<f64>> = (0..k)
        .map(|t| WeightedIndex::new(beta.row(t).iter().copied()).expect("valid topic"))
        .collect();
    let vocab: Vec<String> = pseudo_words(v);
    let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    let mut rows = Vec::with_capacity(n_docs);
    let mut thetas = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let e = DVector::from_fn(k - 1, |_, _| normal(&mut rng));
        let eta = mu + &l * e;
        let theta = softmax_with_reference(&eta);
        let topic = WeightedIndex::new(theta.iter().copied()).expect("valid proportions");
        let mut counts = vec![0u32; v];
        for _ in 0..doc_len {
            let z = topic.sample(&mut rng);
            counts[word_dists[z].sample(&mut rng)] += 1;
        }
        rows.push(
            counts
                .into_iter()
                .enumerate()
                .filter(|(_, c)| *c > 0)
                .map(|(w, c)| (w as u32, c))
                .collect(),
        );
        thetas.push(theta);
    }
    let ids = (0..n_docs).map(|i| format!("d{i:05}")).collect();
    let dates = (0..n_docs).map(|i| start + chrono::Days::new(i as u64 % 365)).collect();
    Ok(PlantedCorpus {
        dtm: DocumentTermMatrix::new(rows, vocab, ids, dates)?,
        beta: beta.clone(),
        mu: mu.clone(),
        sigma: sigma.clone(),
        thetas,
    })
}

/// Sparse linear quantile design: `x ~ U(-√3, √3)`, `β = (2, -1.5, 1, 0, …)`,
/// `y = 1 + xβ + (1 + 0.3·x₁)·ε`, `ε ~ N(0, 1)`. Every conditional quantile
/// is linear and only the first three slopes are nonzero.
pub fn sparse_linear_dgp(t: usize, k: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s3 = 3f64.sqrt();
    let x = DMatrix::from_fn(t, k, |_, _| rng.random_range(-s3..s3));
    let beta: Vec<f64> = (0..k).map(|j| [2.0, -1.5, 1.0].get(j).copied().unwrap_or(0.0)).collect();
    let y = DVector::from_fn(t, |i, _| {
        let mean: f64 = 1.0 + (0..k).map(|j| x[(i, j)] * beta[j]).sum::<f64>();
        mean + (1.0 + 0.3 * x[(i, 0)]) * normal(&mut rng)
    });
    (x, y, beta)
}

/// Smooth median: `y = sin(2x) + 0.3ε`, `x ~ U(-3, 3)`.
pub fn sinusoidal_dgp(t: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: DMatrix<f64> = DMatrix::from_fn(t, 1, |_, _| rng.random_range(-3.0..3.0));
    let y = DVector::from_fn(t, |i, _| (2.0 * x[(i, 0)]).sin() + 0.3 * normal(&mut rng));
    (x, y)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub start: YearMonth,
    pub n_months: usize,
    /// First month with a published vintage.
    pub first_vintage: YearMonth,
    /// Irrelevant non-financial predictors.
    pub n_noise: usize,
    pub docs_per_month: usize,
    pub n_topics: usize,
    pub words_per_topic: usize,
    pub doc_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            start: YearMonth::new(1995, 1).expect("valid month"),
            n_months: 240,
            first_vintage: YearMonth::new(2012, 1).expect("valid month"),
            n_noise: 2,
            docs_per_month: 8,
            n_topics: 3,
            words_per_topic: 15,
            doc_len: 40,
        }
    }
}

/// Target id of the synthetic panel.
pub const SYNTH_TARGET: &str = "OUTPUT";

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub specs: Vec<SeriesSpec>,
    pub full: Vintage,
    pub panel: VintagePanel,
    pub corpus: Corpus,
    pub keep_list: BTreeSet<String>,
}

/// Monthly panel and news corpus. The target is
/// `y_t = 0.5·a_{t-1} + 0.3·f_t + (0.25 + 0.5·a_{t-1}²)·ε_t`
/// with `a` a published activity indicator and `f` a latent news factor that
/// drives both a financial spread and the topic mix of the month's
/// documents. The median is linear while the tails bend quadratically.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    let n = cfg.n_months;
    let last = cfg.start.add_months(n as i64 - 1);
    if n < 24 || cfg.first_vintage <= cfg.start || cfg.first_vintage > last.succ() {
        return Err(Error::validation("synth", "vintage window must lie inside the sample"));
    }
    if cfg.n_topics < 2 || cfg.docs_per_month == 0 {
        return Err(Error::validation("synth", "need at least 2 topics and 1 document per month"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut activity = vec![0.0; n];
    let mut factor = vec![0.0; n];
    let mut noise: Vec<Vec<f64>> = vec![vec![0.0; n]; cfg.n_noise];
    let mut price = vec![0.0; n];
    let mut spread = vec![0.0; n];
    let mut target = vec![0.0; n];
    let (mut a, mut f, mut lp) = (0.0, 0.0, 4.6);
    for t in 0..n {
        a = 0.3 * a + 0.95 * normal(&mut rng);
        f = 0.8 * f + 0.6 * normal(&mut rng);
        lp += 0.002 + 0.01 * normal(&mut rng);
        activity[t] = a;
        factor[t] = f;
        price[t] = lp.exp();
        spread[t] = 1.0 + 0.5 * f + 0.2 * normal(&mut rng);
        for s in noise.iter_mut() {
            let prev = if t > 0 { s[t - 1] } else { 0.0 };
            s[t] = 0.5 * prev + 0.85 * normal(&mut rng);
        }
        let prev_a = if t > 0 { activity[t - 1] } else { 0.0 };
        target[t] = 0.5 * prev_a + 0.3 * f + (0.25 + 0.5 * prev_a * prev_a) * normal(&mut rng);
    }

    let mut specs = vec![
        SeriesSpec { id: SYNTH_TARGET.into(), transform: TransformCode::Level, is_financial: false },
        SeriesSpec { id: "ACTIVITY".into(), transform: TransformCode::Level, is_financial: false },
        SeriesSpec { id: "PRICES".into(), transform: TransformCode::DiffLog, is_financial: false },
        SeriesSpec { id: "SPREAD".into(), transform: TransformCode::Level, is_financial: true },
    ];
    let mut columns = vec![target, activity, price, spread];
    for (i, s) in noise.into_iter().enumerate() {
        specs.push(SeriesSpec { id: format!("NOISE{}", i + 1), transform: TransformCode::Level, is_financial: false });
        columns.push(s);
    }
    let full = Vintage::new(cfg.start, columns)?;
    let panel = VintagePanel::from_final(specs.clone(), &full, cfg.first_vintage, last.succ())?;

    // News: topic 0 gains share with the factor, topic 1 loses it.
    let vocab = pseudo_words(cfg.n_topics * cfg.words_per_topic + 20);
    let topic_vocab = &vocab[..cfg.n_topics * cfg.words_per_topic];
    let beta = planted_topics(cfg.n_topics, topic_vocab.len(), 0.05, &mut rng);
    let word_dists: Vec<WeightedIndex<f64>> = (0..cfg.n_topics)
        .map(|t| WeightedIndex::new(beta.row(t).iter().copied()).expect("valid topic"))
        .collect();
    let rare = &vocab[topic_vocab.len()..];
    let mut docs = Vec::new();
    for t in 0..n {
        let month = cfg.start.add_months(t as i64);
        for d in 0..cfg.docs_per_month {
            let eta = DVector::from_fn(cfg.n_topics - 1, |k, _| {
                let load = match k {
                    0 => 1.2,
                    1 => -1.2,
                    _ => 0.0,
                };
                load * factor[t] + 0.5 * normal(&mut rng)
            });
            let theta = softmax_with_reference(&eta);
            let topic = WeightedIndex::new(theta.iter().copied()).expect("valid proportions");
            let mut words: Vec<String> = (0..cfg.doc_len)
                .map(|_| topic_vocab[word_dists[topic.sample(&mut rng)].sample(&mut rng)].clone())
                .collect();
            if rng.random::<f64>() < 0.3 {
                words.push(rare[rng.random_range(0..rare.len())].clone());
            }
            let day = rng.random_range(1..=28);
            let date = NaiveDate::from_ymd_opt(month.year(), month.month(), day).expect("valid day");
            let text = format!(
                "The {} report, {}. Figures rose {:.1}% in the month.",
                words[..words.len() / 2].join(" "),
                words[words.len() / 2..].join(" "),
                rng.random_range(0.0..5.0)
            );
            docs.push(Document { id: format!("{month}-{d:03}"), date, source: "synthwire".into(), text });
        }
    }
    let corpus = Corpus::new(docs)?;
    let keep_list = vocab.iter().cloned().collect();
    Ok(SynthDataset { specs, full, panel, corpus, keep_list })
}

impl SynthDataset {
    /// Write `panel/YYYY-MM.csv` vintages, `corpus.jsonl` and `keep_list.txt`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let panel_dir = dir.join("panel");
        fs::create_dir_all(&panel_dir)?;
        for (date, v) in self.panel.vintages() {
            write_vintage_csv(&panel_dir.join(format!("{date}.csv")), &self.specs, v)?;
        }
        self.corpus.write_jsonl(&dir.join("corpus.jsonl"))?;
        let mut keep = String::new();
        for w in &self.keep_list {
            keep.push_str(w);
            keep.push('\n');
        }
        fs::write(dir.join("keep_list.txt"), keep)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::tokenize_text;

    #[test]
    fn pseudo_words_are_tokens() {
        let w = pseudo_words(300);
        assert_eq!(w.len(), 300);
        assert_eq!(w.iter().collect::<BTreeSet<_>>().len(), 300);
        for word in &w {
            assert_eq!(tokenize_text(word, None), vec![word.clone()]);
        }
    }

    #[test]
    fn planted_corpus_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let beta = planted_topics(3, 30, 0.05, &mut rng);
        for r in beta.row_iter() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
        let c = planted_ctm_corpus(&beta, &DVector::zeros(2), &DMatrix::identity(2, 2), 20, 50, 3).unwrap();
        assert_eq!(c.dtm.n_docs(), 20);
        assert!((0..20).all(|d| c.dtm.row_total(d) == 50));
    }

    #[test]
    fn synthetic_dataset_is_deterministic() {
        let cfg = SynthConfig { n_months: 60, first_vintage: YearMonth::new(1998, 1).unwrap(), ..Default::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.full, b.full);
        assert_eq!(a.corpus.documents(), b.corpus.documents());
        assert_eq!(a.panel.len(), 25);
        let v = a.panel.vintage(YearMonth::new(1998, 1).unwrap()).unwrap();
        assert!(v.value(0, YearMonth::new(1998, 1).unwrap()).is_nan());
        assert!(v.value(3, YearMonth::new(1998, 1).unwrap()).is_finite());
    }
}
