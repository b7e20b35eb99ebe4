//! Per-document variational inference for the correlated topic model.
//!
//! `q(η_d)` is a diagonal Gaussian over the first `K-1` logits (the last
//! logit is pinned at zero). Topic assignments are collapsed into expected
//! counts, and the log-sum-exp normalizer is bounded with an auxiliary `ζ_d`.
//! Every block update below maximizes the document bound exactly (or by a
//! monotone Newton ascent), so the bound never decreases.

use nalgebra::{DMatrix, DVector};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Model quantities held fixed while a document is optimized.
pub(crate) struct Snapshot<'a> {
    /// K × V topic-word probabilities.
    pub beta: &'a DMatrix<f64>,
    pub mu: &'a DVector<f64>,
    pub sigma_inv: DMatrix<f64>,
    pub log_det_sigma_inv: f64,
}

impl<'a> Snapshot<'a> {
    pub fn new(beta: &'a DMatrix<f64>, mu: &'a DVector<f64>, sigma: &DMatrix<f64>) -> Option<Self> {
        let chol = sigma.clone().cholesky()?;
        let log_det_sigma = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Some(Self {
            beta,
            mu,
            sigma_inv: chol.inverse(),
            log_det_sigma_inv: -log_det_sigma,
        })
    }

    pub fn k(&self) -> usize {
        self.beta.nrows()
    }
}

/// Variational parameters of one document.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DocState {
    pub lambda: DVector<f64>,
    pub nu2: DVector<f64>,
    pub zeta: f64,
}

impl DocState {
    pub fn init(snap: &Snapshot<'_>, sigma: &DMatrix<f64>) -> Self {
        let lambda = snap.mu.clone();
        let nu2 = DVector::from_iterator(lambda.len(), (0..lambda.len()).map(|k| sigma[(k, k)].clamp(1e-4, 10.0)));
        let mut s = Self { lambda, nu2, zeta: 1.0 };
        s.update_zeta();
        s
    }

    /// `Σ_k exp(λ_k + ν²_k / 2)` including the pinned reference coordinate.
    fn expected_exp_sum(&self) -> f64 {
        1.0 + self
            .lambda
            .iter()
            .zip(self.nu2.iter())
            .map(|(l, v)| (l + 0.5 * v).exp())
            .sum::<f64>()
    }

    fn update_zeta(&mut self) {
        self.zeta = self.expected_exp_sum();
    }

    /// Topic proportions: softmax of the variational mean augmented with 0.
    pub fn theta(&self) -> DVector<f64> {
        softmax_with_reference(&self.lambda)
    }
}

/// Softmax of `eta` augmented with a trailing zero logit.
pub fn softmax_with_reference(eta: &DVector<f64>) -> DVector<f64> {
    let k = eta.len() + 1;
    let m = eta.iter().copied().fold(0.0f64, f64::max);
    let mut out = DVector::from_iterator(k, eta.iter().map(|e| (e - m).exp()).chain(std::iter::once((-m).exp())));
    let s = out.sum();
    out /= s;
    out
}

/// `log Σ_k exp(λ_k) β_kv` per word, and the expected topic counts.
fn collapsed_assignments(snap: &Snapshot<'_>, words: &[(u32, u32)], lambda: &DVector<f64>) -> (f64, DVector<f64>) {
    let k = snap.k();
    let m = lambda.iter().copied().fold(0.0f64, f64::max);
    let weights: Vec<f64> = (0..k)
        .map(|i| if i + 1 < k { (lambda[i] - m).exp() } else { (-m).exp() })
        .collect();
    let mut counts = DVector::zeros(k);
    let mut loglik = 0.0;
    let mut phi = vec![0.0; k];
    for &(v, n) in words {
        let v = v as usize;
        let n = n as f64;
        let mut s = 0.0;
        for i in 0..k {
            phi[i] = weights[i] * snap.beta[(i, v)];
            s += phi[i];
        }
        if s <= 0.0 {
            loglik += n * (f64::MIN_POSITIVE.ln());
            continue;
        }
        loglik += n * (m + s.ln());
        for i in 0..k {
            counts[i] += n * phi[i] / s;
        }
    }
    (loglik, counts)
}

/// Evidence lower bound contribution of one document with assignments at
/// their optimum given `state`.
pub(crate) fn doc_bound(snap: &Snapshot<'_>, words: &[(u32, u32)], state: &DocState) -> f64 {
    let km1 = state.lambda.len() as f64;
    let n_total: f64 = words.iter().map(|&(_, c)| c as f64).sum();
    let diff = &state.lambda - snap.mu;
    let quad = diff.dot(&(&snap.sigma_inv * &diff));
    let trace: f64 = (0..state.nu2.len()).map(|i| state.nu2[i] * snap.sigma_inv[(i, i)]).sum();
    let prior = 0.5 * snap.log_det_sigma_inv - 0.5 * km1 * LN_2PI - 0.5 * trace - 0.5 * quad;
    let (words_term, _) = collapsed_assignments(snap, words, &state.lambda);
    let normalizer = n_total * (state.expected_exp_sum() / state.zeta - 1.0 + state.zeta.ln());
    let entropy: f64 = state.nu2.iter().map(|v| 0.5 * (1.0 + LN_2PI + v.ln())).sum();
    prior + words_term - normalizer + entropy
}

/// Objective in λ with assignment counts `c` and `ζ` held fixed.
fn lambda_objective(snap: &Snapshot<'_>, c: &DVector<f64>, n_total: f64, state: &DocState, lambda: &DVector<f64>) -> f64 {
    let diff = lambda - snap.mu;
    let mut f = -0.5 * diff.dot(&(&snap.sigma_inv * &diff));
    for i in 0..lambda.len() {
        f += c[i] * lambda[i] - n_total / state.zeta * (lambda[i] + 0.5 * state.nu2[i]).exp();
    }
    if f.is_finite() {
        f
    } else {
        f64::NEG_INFINITY
    }
}

fn newton_lambda(snap: &Snapshot<'_>, c: &DVector<f64>, n_total: f64, state: &mut DocState) {
    let km1 = state.lambda.len();
    let mut f = lambda_objective(snap, c, n_total, state, &state.lambda);
    for _ in 0..50 {
        let e = DVector::from_iterator(km1, (0..km1).map(|i| (state.lambda[i] + 0.5 * state.nu2[i]).exp()));
        let scale = n_total / state.zeta;
        let grad = -(&snap.sigma_inv * (&state.lambda - snap.mu)) + c.rows(0, km1) - &e * scale;
        if grad.amax() < 1e-10 * (1.0 + n_total) {
            break;
        }
        let mut hess = snap.sigma_inv.clone();
        for i in 0..km1 {
            hess[(i, i)] += scale * e[i];
        }
        let Some(chol) = hess.cholesky() else { break };
        let step = chol.solve(&grad);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand = &state.lambda + &step * t;
            let fc = lambda_objective(snap, c, n_total, state, &cand);
            if fc >= f {
                improved = fc > f;
                state.lambda = cand;
                f = fc;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
}

/// Exact maximization of the bound in each `ν²_k` with everything else fixed.
fn update_nu2(snap: &Snapshot<'_>, n_total: f64, state: &mut DocState) {
    let scale = n_total / state.zeta;
    for i in 0..state.nu2.len() {
        let p = snap.sigma_inv[(i, i)];
        let lam = state.lambda[i];
        let deriv = |v: f64| -0.5 * p - 0.5 * scale * (lam + 0.5 * v).exp() + 0.5 / v;
        // The derivative is decreasing, positive near 0 and negative at 1/p.
        let mut lo = 0.0;
        let mut hi = 1.0 / p;
        let mut v = state.nu2[i].clamp(1e-300, hi);
        for _ in 0..200 {
            let d = deriv(v);
            if d > 0.0 {
                lo = v;
            } else {
                hi = v;
            }
            let curv = -0.25 * scale * (lam + 0.5 * v).exp() - 0.5 / (v * v);
            let mut next = v - d / curv;
            if !(next > lo && next < hi) {
                next = if lo > 0.0 { 0.5 * (lo + hi) } else { 0.5 * hi.min(v) };
            }
            if (next - v).abs() <= 1e-14 * v {
                v = next;
                break;
            }
            v = next;
        }
        state.nu2[i] = v;
    }
}

/// Coordinate ascent on one document's variational parameters. Returns the
/// final bound and the expected topic counts used for the topic update.
pub(crate) fn optimize_doc(
    snap: &Snapshot<'_>,
    words: &[(u32, u32)],
    state: &mut DocState,
    max_iter: usize,
    tol: f64,
) -> (f64, DVector<f64>) {
    let n_total: f64 = words.iter().map(|&(_, c)| c as f64).sum();
    let mut bound = doc_bound(snap, words, state);
    for _ in 0..max_iter {
        let (_, c) = collapsed_assignments(snap, words, &state.lambda);
        state.update_zeta();
        newton_lambda(snap, &c, n_total, state);
        state.update_zeta();
        update_nu2(snap, n_total, state);
        state.update_zeta();
        let next = doc_bound(snap, words, state);
        let change = (next - bound).abs() / bound.abs().max(1.0);
        bound = next;
        if change < tol {
            break;
        }
    }
    let (_, counts) = collapsed_assignments(snap, words, &state.lambda);
    (bound, counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snapshot_parts(k: usize, v: usize) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let beta = DMatrix::from_fn(k, v, |i, j| 1.0 + ((i * 7 + j * 3) % 5) as f64);
        let beta = DMatrix::from_fn(k, v, |i, j| beta[(i, j)] / beta.row(i).sum());
        let mu = DVector::from_iterator(k - 1, (0..k - 1).map(|i| 0.1 * i as f64));
        let sigma = DMatrix::from_fn(k - 1, k - 1, |i, j| if i == j { 1.0 } else { 0.3 });
        (beta, mu, sigma)
    }

    #[test]
    fn each_update_step_increases_the_bound() {
        let (beta, mu, sigma) = snapshot_parts(4, 9);
        let snap = Snapshot::new(&beta, &mu, &sigma).unwrap();
        let words = vec![(0, 3), (2, 1), (5, 7), (8, 2)];
        let mut state = DocState::init(&snap, &sigma);
        let mut prev = doc_bound(&snap, &words, &state);
        for _ in 0..20 {
            let (_, c) = collapsed_assignments(&snap, &words, &state.lambda);
            state.update_zeta();
            let b = doc_bound(&snap, &words, &state);
            assert!(b >= prev - 1e-10, "zeta step: {b} < {prev}");
            prev = b;
            newton_lambda(&snap, &c, 13.0, &mut state);
            let b = doc_bound(&snap, &words, &state);
            assert!(b >= prev - 1e-10, "lambda step: {b} < {prev}");
            prev = b;
            update_nu2(&snap, 13.0, &mut state);
            let b = doc_bound(&snap, &words, &state);
            assert!(b >= prev - 1e-10, "nu2 step: {b} < {prev}");
            prev = b;
        }
    }

    #[test]
    fn nu2_update_is_stationary() {
        let (beta, mu, sigma) = snapshot_parts(3, 5);
        let snap = Snapshot::new(&beta, &mu, &sigma).unwrap();
        let mut state = DocState::init(&snap, &sigma);
        update_nu2(&snap, 40.0, &mut state);
        let scale = 40.0 / state.zeta;
        for i in 0..2 {
            let v = state.nu2[i];
            let d = -0.5 * snap.sigma_inv[(i, i)] - 0.5 * scale * (state.lambda[i] + 0.5 * v).exp() + 0.5 / v;
            assert!(d.abs() < 1e-8 * (1.0 / v), "derivative {d} at {v}");
        }
    }

    #[test]
    fn softmax_reference() {
        let t = softmax_with_reference(&DVector::from_vec(vec![0.0, 0.0]));
        for x in t.iter() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let t = softmax_with_reference(&DVector::from_vec(vec![800.0, -800.0]));
        assert!((t.sum() - 1.0).abs() < 1e-12);
        assert!(t[0] > 0.999);
    }
}
