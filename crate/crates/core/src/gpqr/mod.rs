//! Gaussian-process quantile regression in weight space: with `K = ZZᵀ` the
//! latent function is `g = Zγ`, `γ ~ N(0, I)`, so the quantile regression
//! machinery runs unchanged on the regressor matrix `Z`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bqr::{fit_bqr_xy, BqrConfig, BqrPosterior, CovarianceMode, ShrinkagePrior};
use crate::error::{Error, Result};
use crate::ingest::DesignMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Signal variance.
    pub w1: f64,
    /// Inverse squared length-scale.
    pub w2: f64,
}

impl KernelParams {
    pub fn new(w1: f64, w2: f64) -> Result<Self> {
        let p = Self { w1, w2 };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if self.w1 > 0.0 && self.w2 > 0.0 && self.w1.is_finite() && self.w2.is_finite() {
            Ok(())
        } else {
            Err(Error::Parameter(format!("kernel parameters must be positive, got {self:?}")))
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.w1 * (-0.5 * self.w2 * d2).exp()
    }
}

pub const DEFAULT_JITTER: f64 = 1e-8;
pub const MAX_JITTER: f64 = 1e-4;
pub const W1_FLOOR: f64 = 1e-6;
pub const W2_CAP: f64 = 1e6;
const MAX_PAIRS: usize = 1000;

fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Squared-exponential kernel matrix with `jitter` added to the diagonal.
pub fn build_kernel(x: &DMatrix<f64>, params: KernelParams, jitter: f64) -> Result<DMatrix<f64>> {
    params.validate()?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("kernel inputs must be finite".into()));
    }
    let rows = rows_of(x);
    let n = rows.len();
    let entries: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..=i).map(|j| params.eval(&rows[i], &rows[j])).collect())
        .collect();
    let mut k = DMatrix::zeros(n, n);
    for (i, row) in entries.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += jitter;
    }
    Ok(k)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Signal variance from the sample variance of `y` and inverse length-scale
/// from the median pairwise squared distance (all pairs when there are at
/// most 1000, otherwise 1000 pairs drawn with `seed`).
pub fn default_hyperparams(x: &DMatrix<f64>, y: &DVector<f64>, seed: u64) -> Result<KernelParams> {
    let n = x.nrows();
    if n < 2 || y.len() != n {
        return Err(Error::Precondition(format!("need at least 2 matching observations, got {n}")));
    }
    let var = y.variance() * n as f64 / (n - 1) as f64;
    let w1 = if var > W1_FLOOR { var } else { W1_FLOOR };
    let rows = rows_of(x);
    let d2 = |i: usize, j: usize| rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let total = n * (n - 1) / 2;
    let dists: Vec<f64> = if total <= MAX_PAIRS {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| d2(i, j)).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..MAX_PAIRS)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                d2(i, j)
            })
            .collect()
    };
    let med = median(dists);
    let w2 = if med > 1.0 / W2_CAP { 1.0 / med } else { W2_CAP };
    Ok(KernelParams { w1, w2 })
}

/// Cholesky factor of the kernel, escalating the jitter tenfold from
/// `jitter` up to [`MAX_JITTER`] until the factorization succeeds.
pub fn kernel_cholesky(x: &DMatrix<f64>, params: KernelParams, jitter: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let base = build_kernel(x, params, 0.0)?;
    let mut j = jitter;
    loop {
        let mut k = base.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += j;
        }
        if let Some(ch) = k.cholesky() {
            if j > jitter {
                log::warn!("kernel factorized with jitter {j:e}");
            }
            return Ok((ch, j));
        }
        j *= 10.0;
        if j > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::numerical(0, format!("kernel not positive definite with jitter up to {MAX_JITTER:e}")));
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    /// Kernel parameters; the defaults from [`default_hyperparams`] when unset.
    pub kernel: Option<KernelParams>,
    pub jitter: f64,
    pub vb: BqrConfig,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            kernel: None,
            jitter: DEFAULT_JITTER,
            vb: BqrConfig { covariance: CovarianceMode::Full, tol: 1e-6, max_iter: 500, ..BqrConfig::default() },
        }
    }
}

#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: KernelParams,
    jitter: f64,
    x_train: DMatrix<f64>,
    z: DMatrix<f64>,
    gamma_mean: DVector<f64>,
    /// `K⁻¹ Z γ̂`, so predictions are one cross-kernel dot product.
    weights: DVector<f64>,
    posterior: BqrPosterior,
}

impl GpModel {
    pub fn kernel(&self) -> KernelParams {
        self.kernel
    }

    /// Jitter actually used for the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn x_train(&self) -> &DMatrix<f64> {
        &self.x_train
    }

    /// Lower Cholesky factor of the training kernel.
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn gamma_mean(&self) -> &DVector<f64> {
        &self.gamma_mean
    }

    pub fn intercept(&self) -> f64 {
        self.posterior.intercept()
    }

    /// Fitted latent function at the training inputs, `Zγ̂`.
    pub fn fitted(&self) -> DVector<f64> {
        &self.z * &self.gamma_mean
    }

    /// Conditional quantiles at the training inputs, intercept included.
    pub fn in_sample(&self) -> DVector<f64> {
        self.fitted().add_scalar(self.intercept())
    }

    pub fn posterior(&self) -> &BqrPosterior {
        &self.posterior
    }

    pub fn tau(&self) -> f64 {
        self.posterior.tau()
    }

    fn cross_kernel(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.x_train.ncols() {
            return Err(Error::Dimension { expected: self.x_train.ncols(), got: x.len() });
        }
        Ok(DVector::from_iterator(
            self.x_train.nrows(),
            self.x_train.row_iter().map(|r| {
                let r: Vec<f64> = r.iter().copied().collect();
                self.kernel.eval(&r, x)
            }),
        ))
    }

    /// Conditional quantile at a standardized query point.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.intercept() + self.cross_kernel(x)?.dot(&self.weights))
    }
}

pub fn predict_gpqr(model: &GpModel, x_new: &[f64]) -> Result<f64> {
    model.predict(x_new)
}

pub fn fit_gpqr(design: &DesignMatrix, tau: f64, cfg: &GpConfig, seed: u64) -> Result<GpModel> {
    fit_gpqr_xy(design.x(), design.y(), tau, cfg, seed)
}

pub fn fit_gpqr_xy(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64, cfg: &GpConfig, seed: u64) -> Result<GpModel> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension { expected: x.nrows(), got: y.len() });
    }
    if x.nrows() == 0 {
        return Err(Error::Precondition("no observations".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Precondition("design contains missing or non-finite values".into()));
    }
    let kernel = match cfg.kernel {
        Some(k) => {
            k.validate()?;
            k
        }
        None => default_hyperparams(x, y, seed)?,
    };
    let (chol, jitter) = kernel_cholesky(x, kernel, cfg.jitter)?;
    let z = chol.l();
    let posterior = fit_bqr_xy(&z, y, tau, ShrinkagePrior::Fixed { variance: 1.0 }, &cfg.vb)?;
    let gamma_mean = posterior.beta_mean();
    let g = &z * &gamma_mean;
    let u = z
        .solve_lower_triangular(&g)
        .ok_or_else(|| Error::numerical(0, "singular Cholesky factor"))?;
    let weights = z
        .tr_solve_lower_triangular(&u)
        .ok_or_else(|| Error::numerical(0, "singular Cholesky factor"))?;
    Ok(GpModel {
        kernel,
        jitter,
        x_train: x.clone(),
        z,
        gamma_mean,
        weights,
        posterior,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_kernel() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 3.0, 3.0]);
        let p = KernelParams::new(2.0, 0.5).unwrap();
        let k = build_kernel(&x, p, 1e-8).unwrap();
        let pts = [0.0f64, 1.0, 3.0, 3.0];
        for i in 0..4 {
            for j in 0..4 {
                let d: f64 = pts[i] - pts[j];
                let want = 2.0 * (-0.25 * d * d).exp() + if i == j { 1e-8 } else { 0.0 };
                assert_eq!(k[(i, j)], want);
            }
        }
        assert_eq!(k[(2, 3)], 2.0);
    }

    #[test]
    fn far_apart_points_decorrelate() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 10.0, 20.0]);
        let k = build_kernel(&x, KernelParams::new(1.5, 1e3).unwrap(), 1e-8).unwrap();
        assert!((k - DMatrix::identity(3, 3) * (1.5 + 1e-8)).amax() < 1e-300);
    }

    #[test]
    fn hyperparameter_defaults() {
        let x = DMatrix::from_fn(10, 2, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * i as f64);
        let y = DVector::from_fn(10, |i, _| i as f64);
        let p = default_hyperparams(&x, &y, 0).unwrap();
        let mut d = Vec::new();
        for i in 0..10 {
            for j in i + 1..10 {
                d.push((x.row(i) - x.row(j)).norm_squared());
            }
        }
        d.sort_by(f64::total_cmp);
        assert_eq!(d.len(), 45);
        assert_eq!(p.w2, 1.0 / d[22]);
        assert!((p.w1 - 110.0 / 12.0).abs() < 1e-12);

        let same = DMatrix::from_element(5, 1, 2.0);
        let flat = DVector::from_element(5, 3.0);
        let p = default_hyperparams(&same, &flat, 0).unwrap();
        assert_eq!((p.w1, p.w2), (W1_FLOOR, W2_CAP));
    }

    #[test]
    fn kernel_scale_identity() {
        let x = DMatrix::from_fn(6, 2, |i, j| (i as f64 - j as f64) * 0.3);
        let p = KernelParams::new(1.2, 0.7).unwrap();
        let c = 4.0;
        let k1 = build_kernel(&x, p, 1e-8).unwrap();
        let k2 = build_kernel(&(&x * c), KernelParams::new(1.2, 0.7 / (c * c)).unwrap(), 1e-8).unwrap();
        assert!((k1 - k2).amax() < 1e-15);
    }

    #[test]
    fn single_observation() {
        let x = DMatrix::from_element(1, 1, 0.5);
        let y = DVector::from_element(1, 2.0);
        let cfg = GpConfig { kernel: Some(KernelParams::new(1.0, 1.0).unwrap()), ..Default::default() };
        let m = fit_gpqr_xy(&x, &y, 0.5, &cfg, 0).unwrap();
        assert!((m.z()[(0, 0)] - (1.0f64 + 1e-8).sqrt()).abs() < 1e-15);
        let at = m.predict(&[0.5]).unwrap();
        let want = m.intercept() + m.z()[(0, 0)] * m.gamma_mean()[0];
        assert!((at - want).abs() < 1e-6);
    }

    #[test]
    fn triangular_prediction_matches_dense_inverse() {
        let x = DMatrix::from_fn(5, 1, |i, _| i as f64 * 0.4);
        let y = DVector::from_fn(5, |i, _| (i as f64).sin());
        let m = fit_gpqr_xy(&x, &y, 0.5, &GpConfig::default(), 0).unwrap();
        let k = build_kernel(&x, m.kernel(), m.jitter()).unwrap();
        let kinv = k.try_inverse().unwrap();
        let g = m.fitted();
        for q in [0.3, 1.1, 5.0] {
            let ks = DVector::from_fn(5, |i, _| m.kernel().eval(&[x[(i, 0)]], &[q]));
            let dense = m.intercept() + (ks.transpose() * &kinv * &g)[(0, 0)];
            assert!((m.predict(&[q]).unwrap() - dense).abs() < 1e-6);
        }
        let far = m.predict(&[1e6]).unwrap();
        assert!((far - m.intercept()).abs() < 1e-12);
        assert!(m.predict(&[1.0, 2.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn kernel_is_symmetric_positive_definite(pts in proptest::collection::vec(-3.0f64..3.0, 2..20), w2 in 0.01f64..5.0) {
            let x = DMatrix::from_column_slice(pts.len(), 1, &pts);
            let k = build_kernel(&x, KernelParams::new(1.0, w2).unwrap(), 0.0).unwrap();
            prop_assert_eq!(&k, &k.transpose());
            let (ch, _) = kernel_cholesky(&x, KernelParams::new(1.0, w2).unwrap(), DEFAULT_JITTER).unwrap();
            let l = ch.l();
            prop_assert!(l.diagonal().iter().all(|d| *d > 0.0));
        }
    }
}
