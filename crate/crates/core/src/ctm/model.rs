use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::estep::{doc_bound, optimize_doc, softmax_with_reference, DocState, Snapshot};
use crate::error::{Error, Result};
use crate::textpipe::DocumentTermMatrix;

/// Tunables for [`fit_ctm`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CtmConfig {
    /// Number of topics.
    pub k: usize,
    pub seed: u64,
    /// Relative ELBO change that ends EM.
    pub tol: f64,
    pub max_iter: usize,
    /// Dirichlet concentration for the random topic initialization.
    pub gamma: f64,
    pub estep_max_iter: usize,
    pub estep_tol: f64,
}

impl Default for CtmConfig {
    fn default() -> Self {
        Self {
            k: 80,
            seed: 0,
            tol: 1e-6,
            max_iter: 500,
            gamma: 0.1,
            estep_max_iter: 50,
            estep_tol: 1e-7,
        }
    }
}

/// Allowed ELBO decrease between EM iterations, relative to its magnitude.
pub const ELBO_SLACK: f64 = 1e-6;

const SIGMA_JITTER: f64 = 1e-8;

/// A fitted correlated topic model.
#[derive(Debug, Clone, PartialEq)]
pub struct CtmModel {
    beta: DMatrix<f64>,
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    vocab: Vec<String>,
    seed: u64,
    elbo_trace: Vec<f64>,
    converged: bool,
}

/// Variational posterior of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocPosterior {
    pub eta_mean: DVector<f64>,
    pub eta_var: DVector<f64>,
    pub zeta: f64,
    pub theta: DVector<f64>,
    /// Set when the document had no counts and the prior mean was returned.
    pub prior_fallback: bool,
}

impl CtmModel {
    /// Assemble a model from parameters, checking the simplex and covariance
    /// invariants.
    pub fn from_parts(beta: DMatrix<f64>, mu: DVector<f64>, sigma: DMatrix<f64>, vocab: Vec<String>) -> Result<Self> {
        let k = beta.nrows();
        if k < 2 {
            return Err(Error::Parameter(format!("need at least 2 topics, got {k}")));
        }
        if beta.ncols() != vocab.len() {
            return Err(Error::Dimension { expected: vocab.len(), got: beta.ncols() });
        }
        if mu.len() != k - 1 || sigma.shape() != (k - 1, k - 1) {
            return Err(Error::Dimension { expected: k - 1, got: mu.len() });
        }
        for (i, row) in beta.row_iter().enumerate() {
            if row.iter().any(|v| *v < 0.0 || !v.is_finite()) || (row.sum() - 1.0).abs() > 1e-8 {
                return Err(Error::validation(format!("beta row {i}"), "not on the simplex"));
            }
        }
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-10 || sigma.clone().cholesky().is_none() {
            return Err(Error::validation("sigma", "must be symmetric positive definite"));
        }
        Ok(Self {
            beta,
            mu,
            sigma,
            vocab,
            seed: 0,
            elbo_trace: Vec::new(),
            converged: false,
        })
    }

    pub fn k(&self) -> usize {
        self.beta.nrows()
    }

    pub fn beta(&self) -> &DMatrix<f64> {
        &self.beta
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn elbo_trace(&self) -> &[f64] {
        &self.elbo_trace
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Most probable terms of topic `k`.
    pub fn top_terms(&self, k: usize, n: usize) -> Vec<&str> {
        let mut idx: Vec<usize> = (0..self.vocab.len()).collect();
        idx.sort_by(|&a, &b| self.beta[(k, b)].total_cmp(&self.beta[(k, a)]).then(a.cmp(&b)));
        idx.into_iter().take(n).map(|v| self.vocab[v].as_str()).collect()
    }

    fn snapshot(&self) -> Result<Snapshot<'_>> {
        Snapshot::new(&self.beta, &self.mu, &self.sigma)
            .ok_or_else(|| Error::numerical(0, "topic covariance is not positive definite"))
    }

    /// Infer topic proportions of a held-out document given as a dense count
    /// vector over the model vocabulary. Model parameters are not modified.
    pub fn infer_theta(&self, counts: &[f64]) -> Result<DocPosterior> {
        if counts.len() != self.vocab.len() {
            return Err(Error::Dimension { expected: self.vocab.len(), got: counts.len() });
        }
        let mut words = Vec::new();
        for (v, &c) in counts.iter().enumerate() {
            if c < 0.0 || c.fract() != 0.0 {
                return Err(Error::validation(format!("count {v}"), "counts must be nonnegative integers"));
            }
            if c > 0.0 {
                words.push((v as u32, c as u32));
            }
        }
        self.infer_sparse(&words)
    }

    /// As [`CtmModel::infer_theta`] for a sparse `(term, count)` row.
    pub fn infer_sparse(&self, words: &[(u32, u32)]) -> Result<DocPosterior> {
        if words.iter().any(|&(v, _)| v as usize >= self.vocab.len()) {
            return Err(Error::Dimension { expected: self.vocab.len(), got: words.len() });
        }
        let snap = self.snapshot()?;
        let mut state = DocState::init(&snap, &self.sigma);
        if words.iter().all(|&(_, c)| c == 0) {
            return Ok(DocPosterior {
                theta: softmax_with_reference(&self.mu),
                eta_mean: self.mu.clone(),
                eta_var: state.nu2,
                zeta: state.zeta,
                prior_fallback: true,
            });
        }
        optimize_doc(&snap, words, &mut state, 500, 1e-12);
        Ok(posterior_from(state))
    }

    pub fn to_bundle(&self) -> CtmBundle {
        CtmBundle {
            format_version: CtmBundle::VERSION,
            k: self.k(),
            seed: self.seed,
            vocab: self.vocab.clone(),
            beta: self.beta.row_iter().map(|r| r.iter().copied().collect()).collect(),
            mu: self.mu.iter().copied().collect(),
            sigma: self.sigma.row_iter().map(|r| r.iter().copied().collect()).collect(),
            elbo_trace: self.elbo_trace.clone(),
            converged: self.converged,
        }
    }

    pub fn from_bundle(b: CtmBundle) -> Result<Self> {
        if b.format_version != CtmBundle::VERSION {
            return Err(Error::validation("format_version", format!("unsupported version {}", b.format_version)));
        }
        let v = b.vocab.len();
        let k = b.k;
        if b.beta.len() != k || b.beta.iter().any(|r| r.len() != v) || b.sigma.len() != k.saturating_sub(1) {
            return Err(Error::validation("bundle", "inconsistent dimensions"));
        }
        let beta = DMatrix::from_fn(k, v, |i, j| b.beta[i][j]);
        let sigma = DMatrix::from_fn(k - 1, k - 1, |i, j| b.sigma[i][j]);
        let mut m = Self::from_parts(beta, DVector::from_vec(b.mu), sigma, b.vocab)?;
        m.seed = b.seed;
        m.elbo_trace = b.elbo_trace;
        m.converged = b.converged;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(&self.to_bundle())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let b: CtmBundle = serde_json::from_str(&fs::read_to_string(path)?)?;
        Self::from_bundle(b)
    }
}

fn posterior_from(state: DocState) -> DocPosterior {
    DocPosterior {
        theta: state.theta(),
        eta_mean: state.lambda,
        eta_var: state.nu2,
        zeta: state.zeta,
        prior_fallback: false,
    }
}

/// Versioned, structured-text form of a fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CtmBundle {
    pub format_version: u32,
    pub k: usize,
    pub seed: u64,
    pub vocab: Vec<String>,
    pub beta: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
}

impl CtmBundle {
    pub const VERSION: u32 = 1;
}

/// Share of the uniform distribution blended into the initial topics.
const INIT_UNIFORM_SHARE: f64 = 0.5;

/// Random topics drawn from a symmetric Dirichlet, blended with the uniform
/// distribution so that no word starts with negligible mass.
fn init_beta(k: usize, v: usize, gamma: f64, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Gamma::new(gamma, 1.0).map_err(|e| Error::Parameter(format!("gamma: {e}")))?;
    let mut beta = DMatrix::zeros(k, v);
    for i in 0..k {
        let draws: Vec<f64> = (0..v).map(|_| g.sample(&mut rng)).collect();
        let s: f64 = draws.iter().sum();
        for (j, d) in draws.into_iter().enumerate() {
            beta[(i, j)] = (1.0 - INIT_UNIFORM_SHARE) * d / s + INIT_UNIFORM_SHARE / v as f64;
        }
    }
    Ok(beta)
}

/// Fit by variational EM. The E-step runs in parallel over documents against
/// a read-only snapshot; results are reduced in document order so the fit is
/// deterministic for a given seed.
pub fn fit_ctm(dtm: &DocumentTermMatrix, cfg: &CtmConfig) -> Result<CtmModel> {
    let k = cfg.k;
    if k < 2 {
        return Err(Error::Parameter(format!("need at least 2 topics, got {k}")));
    }
    let d = dtm.n_docs();
    if d == 0 {
        return Err(Error::Precondition("document-term matrix has no rows".into()));
    }
    if k - 1 > d {
        return Err(Error::Precondition(format!("{k} topics need at least {} documents, got {d}", k - 1)));
    }
    if let Some(empty) = (0..d).find(|&i| dtm.row(i).is_empty()) {
        return Err(Error::Precondition(format!("document `{}` has no counts", dtm.doc_ids()[empty])));
    }
    let v = dtm.n_terms();

    let mut beta = init_beta(k, v, cfg.gamma, cfg.seed)?;
    let mut mu = DVector::zeros(k - 1);
    let mut sigma = DMatrix::identity(k - 1, k - 1);
    let mut states: Vec<DocState> = {
        let snap = Snapshot::new(&beta, &mu, &sigma).expect("identity is positive definite");
        (0..d).map(|_| DocState::init(&snap, &sigma)).collect()
    };

    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    for iter in 0..cfg.max_iter {
        // E-step.
        {
            let snap = Snapshot::new(&beta, &mu, &sigma)
                .ok_or_else(|| Error::numerical(iter, "topic covariance lost positive definiteness"))?;
            states.par_iter_mut().enumerate().for_each(|(i, st)| {
                optimize_doc(&snap, dtm.row(i), st, cfg.estep_max_iter, cfg.estep_tol);
            });
        }

        // M-step: topics from expected word-topic counts.
        let mut ss = DMatrix::<f64>::zeros(k, v);
        {
            let snap = Snapshot::new(&beta, &mu, &sigma).expect("checked above");
            for (i, st) in states.iter().enumerate() {
                accumulate_topic_counts(&snap, dtm.row(i), &st.lambda, &mut ss);
            }
        }
        for mut row in ss.row_iter_mut() {
            let s = row.sum();
            if s > 0.0 {
                row /= s;
            } else {
                row.fill(1.0 / v as f64);
            }
        }
        beta = ss;

        // M-step: logistic-normal mean and covariance.
        let n = d as f64;
        mu = states.iter().fold(DVector::zeros(k - 1), |acc, st| acc + &st.lambda) / n;
        let mut cov = DMatrix::zeros(k - 1, k - 1);
        for st in &states {
            let diff = &st.lambda - &mu;
            cov += &diff * diff.transpose();
            for j in 0..k - 1 {
                cov[(j, j)] += st.nu2[j];
            }
        }
        cov /= n;
        cov = 0.5 * (&cov + cov.transpose());
        let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if min_eig < SIGMA_JITTER {
            for j in 0..k - 1 {
                cov[(j, j)] += SIGMA_JITTER;
            }
        }
        sigma = cov;

        // ELBO under the updated model.
        let snap = Snapshot::new(&beta, &mu, &sigma)
            .ok_or_else(|| Error::numerical(iter, "topic covariance is not positive definite"))?;
        let bounds: Vec<f64> = states
            .par_iter()
            .enumerate()
            .map(|(i, st)| doc_bound(&snap, dtm.row(i), st))
            .collect();
        let elbo: f64 = bounds.iter().sum();
        if !elbo.is_finite() {
            return Err(Error::numerical(iter, "non-finite evidence lower bound"));
        }
        if let Some(&prev) = trace.last() {
            if elbo < prev - ELBO_SLACK * prev.abs().max(1.0) {
                return Err(Error::numerical(iter, format!("evidence lower bound decreased from {prev} to {elbo}")));
            }
            trace.push(elbo);
            if ((elbo - prev) / prev.abs().max(1.0)).abs() < cfg.tol {
                converged = true;
                break;
            }
        } else {
            trace.push(elbo);
        }
    }

    Ok(CtmModel {
        beta,
        mu,
        sigma,
        vocab: dtm.vocab().to_vec(),
        seed: cfg.seed,
        elbo_trace: trace,
        converged,
    })
}

fn accumulate_topic_counts(snap: &Snapshot<'_>, words: &[(u32, u32)], lambda: &DVector<f64>, ss: &mut DMatrix<f64>) {
    let k = snap.k();
    let m = lambda.iter().copied().fold(0.0f64, f64::max);
    let weights: Vec<f64> = (0..k)
        .map(|i| if i + 1 < k { (lambda[i] - m).exp() } else { (-m).exp() })
        .collect();
    let mut phi = vec![0.0; k];
    for &(v, n) in words {
        let v = v as usize;
        let mut s = 0.0;
        for i in 0..k {
            phi[i] = weights[i] * snap.beta[(i, v)];
            s += phi[i];
        }
        if s > 0.0 {
            for i in 0..k {
                ss[(i, v)] += n as f64 * phi[i] / s;
            }
        }
    }
}

/// Greedy alignment of estimated topics to reference topics by total
/// variation distance. Returns `(estimated, reference, distance)` triples
/// sorted by reference index.
pub fn align_topics(estimated: &DMatrix<f64>, reference: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let tv = |a: usize, b: usize| {
        0.5 * estimated
            .row(a)
            .iter()
            .zip(reference.row(b).iter())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
    };
    let mut pairs = Vec::new();
    for a in 0..estimated.nrows() {
        for b in 0..reference.nrows() {
            pairs.push((tv(a, b), a, b));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; estimated.nrows()];
    let mut used_b = vec![false; reference.nrows()];
    let mut out = Vec::new();
    for (dist, a, b) in pairs {
        if !used_a[a] && !used_b[b] {
            used_a[a] = true;
            used_b[b] = true;
            out.push((a, b, dist));
        }
    }
    out.sort_by_key(|p| p.1);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::DocumentTermMatrix;
    use chrono::NaiveDate;

    fn toy_dtm() -> DocumentTermMatrix {
        let rows = vec![
            vec![(0, 5), (1, 3)],
            vec![(0, 4), (1, 4), (2, 1)],
            vec![(2, 6), (3, 5)],
            vec![(2, 3), (3, 7), (4, 1)],
            vec![(4, 6), (5, 5)],
            vec![(4, 4), (5, 3), (0, 1)],
        ];
        let rows = rows.into_iter().map(|mut r: Vec<(u32, u32)>| { r.sort(); r }).collect();
        let vocab = ["a", "b", "c", "d", "e", "f"].iter().map(|s| s.to_string()).collect();
        let d = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        DocumentTermMatrix::new(rows, vocab, (0..6).map(|i| i.to_string()).collect(), vec![d; 6]).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        let dtm = toy_dtm();
        let cfg = CtmConfig { k: 1, ..Default::default() };
        assert!(matches!(fit_ctm(&dtm, &cfg), Err(Error::Parameter(_))));
        let cfg = CtmConfig { k: 9, ..Default::default() };
        assert!(matches!(fit_ctm(&dtm, &cfg), Err(Error::Precondition(_))));
        let empty = DocumentTermMatrix::new(vec![], vec![], vec![], vec![]).unwrap();
        let cfg = CtmConfig { k: 2, ..Default::default() };
        assert!(matches!(fit_ctm(&empty, &cfg), Err(Error::Precondition(_))));
    }

    #[test]
    fn fit_is_deterministic_and_monotone() {
        let dtm = toy_dtm();
        let cfg = CtmConfig { k: 3, seed: 7, max_iter: 60, ..Default::default() };
        let a = fit_ctm(&dtm, &cfg).unwrap();
        let b = fit_ctm(&dtm, &cfg).unwrap();
        assert_eq!(a.beta(), b.beta());
        assert_eq!(a.elbo_trace(), b.elbo_trace());
        for w in a.elbo_trace().windows(2) {
            assert!(w[1] >= w[0] - ELBO_SLACK * w[0].abs());
        }
        for row in a.beta().row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-8);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
        let s = a.sigma();
        assert!((s - s.transpose()).amax() < 1e-12);
        assert!(SymmetricEigen::new(s.clone()).eigenvalues.min() > 0.0);
    }

    #[test]
    fn bundle_roundtrip() {
        let dtm = toy_dtm();
        let cfg = CtmConfig { k: 2, seed: 1, max_iter: 10, ..Default::default() };
        let m = fit_ctm(&dtm, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ctm.json");
        m.save(&p).unwrap();
        assert_eq!(CtmModel::load(&p).unwrap(), m);
    }

    #[test]
    fn held_out_inference_leaves_model_untouched() {
        let dtm = toy_dtm();
        let cfg = CtmConfig { k: 3, seed: 3, max_iter: 30, ..Default::default() };
        let m = fit_ctm(&dtm, &cfg).unwrap();
        let before = m.clone();
        let post = m.infer_theta(&[0.0, 0.0, 2.0, 5.0, 0.0, 0.0]).unwrap();
        assert_eq!(m, before);
        assert!((post.theta.sum() - 1.0).abs() < 1e-10);
        assert!(!post.prior_fallback);
        let zero = m.infer_theta(&[0.0; 6]).unwrap();
        assert!(zero.prior_fallback);
        assert_eq!(zero.theta, softmax_with_reference(m.mu()));
        assert!(m.infer_theta(&[1.0; 5]).is_err());
    }
}
