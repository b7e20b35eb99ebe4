//! Coordinate-ascent variational Bayes for quantile regression under the
//! asymmetric-Laplace location-scale mixture
//! `y_t = α + x_tβ + θ z_t + κ √(σ z_t) u_t`, `z_t ~ Exp(scale σ)`.
//!
//! The factorization is `q(α, β) q(σ) Π q(z_t)` times the prior-specific
//! scale factors. The intercept has a flat prior. Every block update is the
//! exact conditional optimum, so the bound below never decreases.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use super::prior::{QuantileSpec, ShrinkagePrior};
use crate::error::{Error, Result};
use crate::ingest::DesignMatrix;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Floor on the GIG `b` parameter; only reached for exact fits.
const B_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    /// Full covariance up to `full_cov_max` predictors, diagonal above.
    Auto,
    Full,
    Diagonal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BqrConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub covariance: CovarianceMode,
    pub full_cov_max: usize,
    /// Inverse-Gamma shape and scale of the prior on `σ`.
    pub sigma_a0: f64,
    pub sigma_b0: f64,
}

impl Default for BqrConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 1000,
            covariance: CovarianceMode::Auto,
            full_cov_max: 2000,
            sigma_a0: 0.01,
            sigma_b0: 0.01,
        }
    }
}

pub const ELBO_SLACK: f64 = 1e-6;

/// Covariance of `q(α, β)`, intercept first.
#[derive(Debug, Clone, PartialEq)]
pub enum BetaCov {
    Full(DMatrix<f64>),
    Diagonal(DVector<f64>),
}

impl BetaCov {
    fn var(&self, j: usize) -> f64 {
        match self {
            BetaCov::Full(v) => v[(j, j)],
            BetaCov::Diagonal(d) => d[j],
        }
    }
}

#[derive(Debug, Clone)]
pub struct BqrPosterior {
    spec: QuantileSpec,
    prior: ShrinkagePrior,
    mean: DVector<f64>,
    cov: BetaCov,
    z_params: Vec<(f64, f64)>,
    sigma_params: (f64, f64),
    psi_means: DVector<f64>,
    lambda_mean: f64,
    elbo_trace: Vec<f64>,
    converged: bool,
}

impl BqrPosterior {
    pub fn spec(&self) -> &QuantileSpec {
        &self.spec
    }

    pub fn tau(&self) -> f64 {
        self.spec.tau()
    }

    pub fn prior(&self) -> &ShrinkagePrior {
        &self.prior
    }

    pub fn intercept(&self) -> f64 {
        self.mean[0]
    }

    pub fn beta_mean(&self) -> DVector<f64> {
        self.mean.rows(1, self.mean.len() - 1).into_owned()
    }

    /// Slope covariance, `K × K`.
    pub fn beta_cov(&self) -> DMatrix<f64> {
        let k = self.mean.len() - 1;
        match &self.cov {
            BetaCov::Full(v) => v.view((1, 1), (k, k)).into_owned(),
            BetaCov::Diagonal(d) => DMatrix::from_diagonal(&d.rows(1, k).into_owned()),
        }
    }

    /// Covariance of intercept and slopes together.
    pub fn joint_cov(&self) -> &BetaCov {
        &self.cov
    }

    /// GIG `(a_t, b_t)` of each latent scale, with `p = 1/2`.
    pub fn z_params(&self) -> &[(f64, f64)] {
        &self.z_params
    }

    /// Inverse-Gamma shape and scale of `q(σ)`.
    pub fn sigma_params(&self) -> (f64, f64) {
        self.sigma_params
    }

    /// Posterior means of the local scales (ones for Ridge).
    pub fn psi_means(&self) -> &DVector<f64> {
        &self.psi_means
    }

    pub fn lambda_mean(&self) -> f64 {
        self.lambda_mean
    }

    pub fn elbo_trace(&self) -> &[f64] {
        &self.elbo_trace
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Conditional quantile at standardized predictors `x`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let k = self.mean.len() - 1;
        if x.len() != k {
            return Err(Error::Dimension { expected: k, got: x.len() });
        }
        Ok(self.mean[0] + x.iter().zip(self.mean.iter().skip(1)).map(|(a, b)| a * b).sum::<f64>())
    }

    /// `name,mean,sd` rows, intercept first.
    pub fn coefficient_csv(&self, names: &[&str]) -> Result<String> {
        let k = self.mean.len() - 1;
        if names.len() != k {
            return Err(Error::Dimension { expected: k, got: names.len() });
        }
        let mut out = String::from("name,mean,sd\n");
        for j in 0..=k {
            let name = if j == 0 { "(intercept)" } else { names[j - 1] };
            out.push_str(&format!("{name},{:?},{:?}\n", self.mean[j], self.cov.var(j).sqrt()));
        }
        Ok(out)
    }
}

/// Point prediction from a fitted posterior.
pub fn predict_quantile(post: &BqrPosterior, x_new: &[f64]) -> Result<f64> {
    post.predict(x_new)
}

/// Fit on a design's standardized predictors. The fit is deterministic, so
/// `seed` only exists for interface symmetry with the other learners.
pub fn fit_bqr(design: &DesignMatrix, tau: f64, prior: ShrinkagePrior, cfg: &BqrConfig, _seed: u64) -> Result<BqrPosterior> {
    fit_bqr_xy(design.x(), design.y(), tau, prior, cfg)
}

fn ig_elog(a: f64, b: f64) -> f64 {
    b.ln() - digamma(a)
}

fn ig_entropy(a: f64, b: f64) -> f64 {
    a + b.ln() + ln_gamma(a) - (1.0 + a) * digamma(a)
}

fn gamma_elog(a: f64, b: f64) -> f64 {
    digamma(a) - b.ln()
}

fn gamma_entropy(a: f64, b: f64) -> f64 {
    a - b.ln() + ln_gamma(a) + (1.0 - a) * digamma(a)
}

/// `E[x]`, `E[1/x]` under GIG(1/2, a, b).
fn gig_half_moments(a: f64, b: f64) -> (f64, f64) {
    ((b / a).sqrt() + 1.0 / a, (a / b).sqrt())
}

/// GIG(1/2, a, b) entropy without its `½E[log x]` term, which cancels
/// against the matching likelihood term.
fn gig_half_entropy_part(a: f64) -> f64 {
    0.5 + 0.5 * LN_2PI - 0.5 * a.ln()
}

fn proper_norm(shape: f64, rate: f64) -> f64 {
    if shape > 0.0 && rate > 0.0 {
        shape * rate.ln() - ln_gamma(shape)
    } else {
        0.0
    }
}

/// Variational factors of the prior scales.
#[derive(Debug, Clone)]
enum Scales {
    Ridge { lam: (f64, f64) },
    Horseshoe { psi: Vec<(f64, f64)>, aux: Vec<(f64, f64)>, lam: (f64, f64), xi: (f64, f64) },
    Lasso { psi: Vec<(f64, f64)>, lam: (f64, f64) },
    Fixed,
}

impl Scales {
    fn init(prior: &ShrinkagePrior, k: usize) -> Self {
        match prior {
            ShrinkagePrior::Ridge { .. } => Scales::Ridge { lam: (1.0, 1.0) },
            ShrinkagePrior::Horseshoe => Scales::Horseshoe {
                psi: vec![(1.0, 1.0); k],
                aux: vec![(1.0, 1.0); k],
                lam: (1.0, 1.0),
                xi: (1.0, 1.0),
            },
            ShrinkagePrior::Lasso { .. } => Scales::Lasso { psi: vec![(1.0, 1.0); k], lam: (1.0, 1.0) },
            ShrinkagePrior::Fixed { .. } => Scales::Fixed,
        }
    }

    /// `E[1 / prior variance]` of each slope.
    fn inv_var(&self, prior: &ShrinkagePrior, k: usize) -> Vec<f64> {
        match self {
            Scales::Ridge { lam } => vec![lam.0 / lam.1; k],
            Scales::Horseshoe { psi, lam, .. } => psi.iter().map(|p| p.0 / p.1 * lam.0 / lam.1).collect(),
            Scales::Lasso { psi, .. } => psi.iter().map(|&(a, b)| gig_half_moments(a, b).1).collect(),
            Scales::Fixed => match prior {
                ShrinkagePrior::Fixed { variance } => vec![1.0 / variance; k],
                _ => unreachable!(),
            },
        }
    }

    fn update(&mut self, prior: &ShrinkagePrior, eb2: &[f64]) {
        let k = eb2.len() as f64;
        match (self, prior) {
            (Scales::Ridge { lam }, ShrinkagePrior::Ridge { e0, e1 }) => {
                *lam = (e0 + 0.5 * k, e1 + 0.5 * eb2.iter().sum::<f64>());
            }
            (Scales::Horseshoe { psi, aux, lam, xi }, ShrinkagePrior::Horseshoe) => {
                let inv_lam = lam.0 / lam.1;
                for j in 0..eb2.len() {
                    psi[j] = (1.0, aux[j].0 / aux[j].1 + 0.5 * eb2[j] * inv_lam);
                    aux[j] = (1.0, 1.0 + psi[j].0 / psi[j].1);
                }
                let s: f64 = eb2.iter().zip(psi.iter()).map(|(b, p)| b * p.0 / p.1).sum();
                *lam = (0.5 * (k + 1.0), xi.0 / xi.1 + 0.5 * s);
                *xi = (1.0, 1.0 + lam.0 / lam.1);
            }
            (Scales::Lasso { psi, lam }, ShrinkagePrior::Lasso { c0, d0 }) => {
                let e_lam = lam.0 / lam.1;
                for j in 0..eb2.len() {
                    psi[j] = (e_lam, eb2[j].max(B_FLOOR));
                }
                let s: f64 = psi.iter().map(|&(a, b)| gig_half_moments(a, b).0).sum();
                *lam = (c0 + k, d0 + 0.5 * s);
            }
            (Scales::Fixed, ShrinkagePrior::Fixed { .. }) => {}
            _ => unreachable!("scale factors match the prior"),
        }
    }

    /// Expected log prior of the slopes and scales plus the scale entropies.
    fn bound(&self, prior: &ShrinkagePrior, eb2: &[f64]) -> f64 {
        let k = eb2.len() as f64;
        let sum_b2: f64 = eb2.iter().sum();
        match (self, prior) {
            (Scales::Ridge { lam }, ShrinkagePrior::Ridge { e0, e1 }) => {
                let (el, ei) = (ig_elog(lam.0, lam.1), lam.0 / lam.1);
                -0.5 * k * (LN_2PI + el) - 0.5 * ei * sum_b2 + proper_norm(*e0, *e1) - (e0 + 1.0) * el - e1 * ei
                    + ig_entropy(lam.0, lam.1)
            }
            (Scales::Horseshoe { psi, aux, lam, xi }, ShrinkagePrior::Horseshoe) => {
                let lg_half = ln_gamma(0.5);
                let (ell, eil) = (ig_elog(lam.0, lam.1), lam.0 / lam.1);
                let (elx, eix) = (ig_elog(xi.0, xi.1), xi.0 / xi.1);
                let mut s = 0.0;
                for j in 0..eb2.len() {
                    let (elp, eip) = (ig_elog(psi[j].0, psi[j].1), psi[j].0 / psi[j].1);
                    let (ela, eia) = (ig_elog(aux[j].0, aux[j].1), aux[j].0 / aux[j].1);
                    s += -0.5 * (LN_2PI + elp + ell) - 0.5 * eip * eil * eb2[j];
                    s += -0.5 * ela - lg_half - 1.5 * elp - eia * eip;
                    s += -lg_half - 1.5 * ela - eia;
                    s += ig_entropy(psi[j].0, psi[j].1) + ig_entropy(aux[j].0, aux[j].1);
                }
                s += -0.5 * elx - lg_half - 1.5 * ell - eix * eil;
                s += -lg_half - 1.5 * elx - eix;
                s + ig_entropy(lam.0, lam.1) + ig_entropy(xi.0, xi.1)
            }
            (Scales::Lasso { psi, lam }, ShrinkagePrior::Lasso { c0, d0 }) => {
                let (el, e) = (gamma_elog(lam.0, lam.1), lam.0 / lam.1);
                let mut s = proper_norm(*c0, *d0) + (c0 - 1.0) * el - d0 * e + gamma_entropy(lam.0, lam.1);
                for j in 0..eb2.len() {
                    let (a, b) = psi[j];
                    let (ep, eip) = gig_half_moments(a, b);
                    s += -0.5 * LN_2PI - 0.5 * eip * eb2[j];
                    s += el - std::f64::consts::LN_2 - 0.5 * e * ep;
                    s += gig_half_entropy_part(a);
                }
                s
            }
            (Scales::Fixed, ShrinkagePrior::Fixed { variance }) => -0.5 * k * (LN_2PI + variance.ln()) - 0.5 * sum_b2 / variance,
            _ => unreachable!("scale factors match the prior"),
        }
    }

    fn psi_means(&self, k: usize) -> DVector<f64> {
        match self {
            Scales::Horseshoe { psi, .. } => DVector::from_iterator(k, psi.iter().map(|p| ig_mean(p.0, p.1))),
            Scales::Lasso { psi, .. } => DVector::from_iterator(k, psi.iter().map(|&(a, b)| gig_half_moments(a, b).0)),
            _ => DVector::from_element(k, 1.0),
        }
    }

    fn lambda_mean(&self) -> f64 {
        match self {
            Scales::Ridge { lam } | Scales::Horseshoe { lam, .. } => ig_mean(lam.0, lam.1),
            Scales::Lasso { lam, .. } => lam.0 / lam.1,
            Scales::Fixed => 1.0,
        }
    }
}

/// Inverse-Gamma mean, infinite when the shape is at most one.
fn ig_mean(a: f64, b: f64) -> f64 {
    if a > 1.0 {
        b / (a - 1.0)
    } else {
        f64::INFINITY
    }
}

/// Empirical `tau`-quantile (inverse ECDF).
pub(crate) fn empirical_quantile(values: &[f64], tau: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((tau * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    v[idx]
}

struct Work<'a> {
    xt: DMatrix<f64>,
    y: &'a DVector<f64>,
    spec: QuantileSpec,
    mean: DVector<f64>,
    cov: BetaCov,
    /// `x̃_tᵀ V x̃_t` per observation.
    quad: DVector<f64>,
    log_det_v: f64,
    z: Vec<(f64, f64)>,
    ez: DVector<f64>,
    einvz: DVector<f64>,
    sigma: (f64, f64),
}

impl Work<'_> {
    fn e_inv_sigma(&self) -> f64 {
        self.sigma.0 / self.sigma.1
    }

    fn update_beta_full(&mut self, inv_var: &[f64], iter: usize) -> Result<()> {
        let c = self.e_inv_sigma() / self.spec.kappa2();
        let theta = self.spec.theta();
        let p = self.xt.ncols();
        let mut wx = self.xt.clone();
        for (t, mut row) in wx.row_iter_mut().enumerate() {
            row *= c * self.einvz[t];
        }
        let mut q = self.xt.tr_mul(&wx);
        for j in 1..p {
            q[(j, j)] += inv_var[j - 1];
        }
        let rhs_t = DVector::from_iterator(self.y.len(), (0..self.y.len()).map(|t| c * (self.einvz[t] * self.y[t] - theta)));
        let h = self.xt.tr_mul(&rhs_t);
        let scale = q.diagonal().amax().max(1.0);
        let mut jitter = 0.0;
        let chol = loop {
            let mut qj = q.clone();
            for j in 0..p {
                qj[(j, j)] += jitter;
            }
            if let Some(ch) = qj.cholesky() {
                break ch;
            }
            jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 100.0 };
            if jitter > 1e-4 * scale {
                return Err(Error::numerical(iter, "coefficient precision is singular"));
            }
        };
        if jitter > 0.0 {
            log::warn!("added jitter {jitter:e} to the coefficient precision at iteration {iter}");
        }
        self.mean = chol.solve(&h);
        self.log_det_v = -2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let v = chol.inverse();
        let xv = &self.xt * &v;
        self.quad = DVector::from_iterator(
            self.y.len(),
            xv.row_iter().zip(self.xt.row_iter()).map(|(a, b)| a.dot(&b)),
        );
        self.cov = BetaCov::Full(v);
        Ok(())
    }

    fn update_beta_diag(&mut self, inv_var: &[f64]) {
        let c = self.e_inv_sigma() / self.spec.kappa2();
        let theta = self.spec.theta();
        let (n, p) = self.xt.shape();
        let mut fit = &self.xt * &self.mean;
        let mut var = DVector::zeros(p);
        for j in 0..p {
            let col = self.xt.column(j);
            let prior_prec = if j == 0 { 0.0 } else { inv_var[j - 1] };
            let mut qjj = prior_prec;
            let mut num = 0.0;
            for t in 0..n {
                let x = col[t];
                let partial = fit[t] - x * self.mean[j];
                qjj += c * self.einvz[t] * x * x;
                num += c * x * (self.einvz[t] * (self.y[t] - partial) - theta);
            }
            let m_new = num / qjj;
            for t in 0..n {
                fit[t] += col[t] * (m_new - self.mean[j]);
            }
            self.mean[j] = m_new;
            var[j] = 1.0 / qjj;
        }
        self.log_det_v = var.iter().map(|v| v.ln()).sum();
        let xsq = self.xt.map(|v| v * v);
        self.quad = &xsq * &var;
        self.cov = BetaCov::Diagonal(var);
    }

    /// `(E[r_t], E[r_t²])`.
    fn residual_moments(&self) -> (DVector<f64>, DVector<f64>) {
        let er = self.y - &self.xt * &self.mean;
        let er2 = er.zip_map(&self.quad, |r, q| r * r + q);
        (er, er2)
    }

    fn update_z(&mut self, er2: &DVector<f64>) {
        let s = self.e_inv_sigma();
        let k2 = self.spec.kappa2();
        let a = s * (self.spec.theta().powi(2) / k2 + 2.0);
        for t in 0..self.y.len() {
            let b = (s * er2[t] / k2).max(B_FLOOR);
            self.z[t] = (a, b);
            let (ez, einv) = gig_half_moments(a, b);
            self.ez[t] = ez;
            self.einvz[t] = einv;
        }
    }

    /// Per-observation `E[(r - θz)² / z]`.
    fn scaled_sq(&self, er: &DVector<f64>, er2: &DVector<f64>) -> DVector<f64> {
        let th = self.spec.theta();
        DVector::from_iterator(
            self.y.len(),
            (0..self.y.len()).map(|t| er2[t] * self.einvz[t] - 2.0 * th * er[t] + th * th * self.ez[t]),
        )
    }

    fn update_sigma(&mut self, er: &DVector<f64>, er2: &DVector<f64>, a0: f64, b0: f64) {
        let k2 = self.spec.kappa2();
        let qs = self.scaled_sq(er, er2);
        let b: f64 = qs.iter().zip(self.ez.iter()).map(|(q, z)| q / (2.0 * k2) + z).sum();
        self.sigma = (a0 + 1.5 * self.y.len() as f64, b0 + b);
    }

    fn likelihood_bound(&self, er: &DVector<f64>, er2: &DVector<f64>, a0: f64, b0: f64) -> f64 {
        let n = self.y.len() as f64;
        let k2 = self.spec.kappa2();
        let s = self.e_inv_sigma();
        let el_sigma = ig_elog(self.sigma.0, self.sigma.1);
        let qs = self.scaled_sq(er, er2);
        let mut l = -0.5 * n * (LN_2PI + k2.ln()) - 1.5 * n * el_sigma;
        for t in 0..self.y.len() {
            l += -s * qs[t] / (2.0 * k2) - s * self.ez[t];
            l += gig_half_entropy_part(self.z[t].0);
        }
        l += proper_norm(a0, b0) - (a0 + 1.0) * el_sigma - b0 * s + ig_entropy(self.sigma.0, self.sigma.1);
        let p = self.mean.len() as f64;
        l + 0.5 * p * (1.0 + LN_2PI) + 0.5 * self.log_det_v
    }

    fn slope_second_moments(&self) -> Vec<f64> {
        (1..self.mean.len()).map(|j| self.mean[j].powi(2) + self.cov.var(j)).collect()
    }
}

/// Fit on standardized predictors `x` (`T × K`) and target `y`.
pub fn fit_bqr_xy(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64, prior: ShrinkagePrior, cfg: &BqrConfig) -> Result<BqrPosterior> {
    let spec = QuantileSpec::new(tau)?;
    prior.validate()?;
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension { expected: n, got: y.len() });
    }
    if n == 0 {
        return Err(Error::Precondition("no observations".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Precondition("design contains missing or non-finite values".into()));
    }
    if !(cfg.sigma_a0 >= 0.0 && cfg.sigma_b0 >= 0.0) {
        return Err(Error::Parameter("sigma prior must be nonnegative".into()));
    }
    let full = match cfg.covariance {
        CovarianceMode::Full => true,
        CovarianceMode::Diagonal => false,
        CovarianceMode::Auto => k <= cfg.full_cov_max,
    };

    let mut xt = DMatrix::from_element(n, k + 1, 1.0);
    xt.view_mut((0, 1), (n, k)).copy_from(x);

    // Ridge warm start with the intercept at the residual quantile.
    let ybar = y.mean();
    let mut gram = x.tr_mul(x);
    for j in 0..k {
        gram[(j, j)] += 1.0;
    }
    let xty = x.tr_mul(&y.add_scalar(-ybar));
    let beta0 = gram.cholesky().map(|c| c.solve(&xty)).unwrap_or_else(|| DVector::zeros(k));
    let resid: Vec<f64> = (y - x * &beta0).iter().copied().collect();
    let alpha0 = empirical_quantile(&resid, tau);
    let mut mean = DVector::zeros(k + 1);
    mean[0] = alpha0;
    mean.rows_mut(1, k).copy_from(&beta0);
    let check: f64 = resid.iter().map(|r| crate::eval::quantile_score_raw(r - alpha0, tau)).sum::<f64>() / n as f64;
    let sigma0 = check.max(1e-8);

    let mut w = Work {
        xt,
        y,
        spec,
        mean,
        cov: BetaCov::Diagonal(DVector::zeros(k + 1)),
        quad: DVector::zeros(n),
        log_det_v: 0.0,
        z: vec![(1.0, 1.0); n],
        ez: DVector::from_element(n, 1.0),
        einvz: DVector::from_element(n, 1.0),
        sigma: (1.0, sigma0),
    };
    let mut scales = Scales::init(&prior, k);
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;

    for iter in 0..cfg.max_iter {
        let inv_var = scales.inv_var(&prior, k);
        if full {
            w.update_beta_full(&inv_var, iter)?;
        } else {
            w.update_beta_diag(&inv_var);
        }
        let (er, er2) = w.residual_moments();
        w.update_z(&er2);
        w.update_sigma(&er, &er2, cfg.sigma_a0, cfg.sigma_b0);
        let eb2 = w.slope_second_moments();
        scales.update(&prior, &eb2);

        let elbo = w.likelihood_bound(&er, &er2, cfg.sigma_a0, cfg.sigma_b0) + scales.bound(&prior, &eb2);
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
    if !converged {
        log::debug!("quantile regression at tau={tau} stopped after {} iterations", trace.len());
    }

    Ok(BqrPosterior {
        spec,
        prior,
        mean: w.mean,
        cov: w.cov,
        z_params: w.z,
        sigma_params: w.sigma,
        psi_means: scales.psi_means(k),
        lambda_mean: scales.lambda_mean(),
        elbo_trace: trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bqr::prior::{make_prior, Hyper, PriorKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ln_k_half(omega: f64) -> f64 {
        0.5 * (std::f64::consts::PI / (2.0 * omega)).ln() - omega
    }

    fn sample_xy(n: usize, k: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, k, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y = DVector::from_fn(n, |t, _| 1.0 + 2.0 * x[(t, 0)] - x[(t, 1)] + (rng.random::<f64>() - 0.5));
        (x, y)
    }

    #[test]
    fn gig_half_moments_match_quadrature() {
        let (a, b) = (1.7, 0.4);
        // Density ∝ x^{-1/2} exp(-(a x + b / x) / 2); integrate with the
        // substitution x = u² to remove the singularity at zero.
        let f = |u: f64| (-(a * u * u + b / (u * u)) / 2.0).exp();
        let h = 1e-4;
        let (mut z, mut m1, mut mi) = (0.0, 0.0, 0.0);
        let mut u = h / 2.0;
        while u < 20.0 {
            let w = 2.0 * f(u) * h;
            z += w;
            m1 += w * u * u;
            mi += w / (u * u);
            u += h;
        }
        let (ez, einv) = gig_half_moments(a, b);
        assert!((m1 / z - ez).abs() < 1e-6);
        assert!((mi / z - einv).abs() < 1e-6);
        // Normalizer: ∫ = 2 K_{1/2}(ω) (b/a)^{1/4}.
        let omega = (a * b).sqrt();
        let log_norm = std::f64::consts::LN_2 + ln_k_half(omega) + 0.25 * (b / a).ln();
        assert!((z.ln() - log_norm).abs() < 1e-6);
    }

    #[test]
    fn elbo_is_monotone_for_every_prior() {
        let (x, y) = sample_xy(120, 4, 1);
        let cfg = BqrConfig { max_iter: 200, tol: 1e-10, ..Default::default() };
        for kind in PriorKind::ALL {
            for tau in [0.1, 0.5, 0.9] {
                let prior = make_prior(kind, Hyper::default()).unwrap();
                let post = fit_bqr_xy(&x, &y, tau, prior, &cfg).unwrap();
                for w in post.elbo_trace().windows(2) {
                    assert!(w[1] >= w[0] - ELBO_SLACK * w[0].abs(), "{kind:?} {tau}: {} < {}", w[1], w[0]);
                }
            }
        }
    }

    #[test]
    fn diagonal_mode_is_monotone_and_close_to_full() {
        let (x, y) = sample_xy(200, 3, 2);
        let prior = ShrinkagePrior::Ridge { e0: 0.0, e1: 0.0 };
        let full = fit_bqr_xy(&x, &y, 0.5, prior, &BqrConfig::default()).unwrap();
        let cfg = BqrConfig { covariance: CovarianceMode::Diagonal, ..Default::default() };
        let diag = fit_bqr_xy(&x, &y, 0.5, prior, &cfg).unwrap();
        for w in diag.elbo_trace().windows(2) {
            assert!(w[1] >= w[0] - ELBO_SLACK * w[0].abs());
        }
        assert!((full.beta_mean() - diag.beta_mean()).amax() < 0.05);
    }

    #[test]
    fn zero_target_gives_zero_slopes() {
        let (x, _) = sample_xy(80, 3, 3);
        let y = DVector::zeros(80);
        let cfg = BqrConfig { max_iter: 50, ..Default::default() };
        let post = fit_bqr_xy(&x, &y, 0.5, ShrinkagePrior::Ridge { e0: 0.0, e1: 0.0 }, &cfg).unwrap();
        assert!(post.beta_mean().amax() < 1e-12);
    }

    #[test]
    fn ridge_local_scales_are_one() {
        let (x, y) = sample_xy(60, 3, 4);
        let post = fit_bqr_xy(&x, &y, 0.3, ShrinkagePrior::Ridge { e0: 0.0, e1: 0.0 }, &BqrConfig::default()).unwrap();
        assert!(post.psi_means().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn prediction_is_linear() {
        let (x, y) = sample_xy(60, 2, 5);
        let mut post = fit_bqr_xy(&x, &y, 0.5, ShrinkagePrior::Horseshoe, &BqrConfig::default()).unwrap();
        post.mean = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        assert_eq!(post.predict(&[2.0, 0.0]).unwrap(), 2.0);
        assert_eq!(post.predict(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(post.predict(&[1.0]).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let (x, mut y) = sample_xy(20, 2, 6);
        assert!(fit_bqr_xy(&x, &y, 1.2, ShrinkagePrior::Horseshoe, &BqrConfig::default()).is_err());
        y[3] = f64::NAN;
        assert!(matches!(
            fit_bqr_xy(&x, &y, 0.5, ShrinkagePrior::Horseshoe, &BqrConfig::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn recovers_median_line() {
        let (x, y) = sample_xy(400, 2, 7);
        let post = fit_bqr_xy(&x, &y, 0.5, ShrinkagePrior::Horseshoe, &BqrConfig::default()).unwrap();
        let b = post.beta_mean();
        assert!((b[0] - 2.0).abs() < 0.15 && (b[1] + 1.0).abs() < 0.15, "{b}");
        assert!((post.intercept() - 1.0).abs() < 0.1);
    }
}
