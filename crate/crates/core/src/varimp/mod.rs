//! Variable importance through a linear Lasso surrogate of a forecast path:
//! `min_β Σ_t (q_t - c - x_tβ)² + λ Σ_j |β_j|`, with λ picked by blocked
//! cross-validation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Column, Provenance};

pub const NONZERO_EPS: f64 = 1e-10;
const CD_TOL: f64 = 1e-14;
const CD_MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub n_lambda: usize,
    /// Smallest grid value relative to `λ_max`.
    pub lambda_min_ratio: f64,
    pub cv_folds: usize,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self { n_lambda: 100, lambda_min_ratio: 1e-4, cv_folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurrogateFit {
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub nonzero_count: usize,
    pub columns: Vec<Column>,
    /// Set when the forecast path is constant and nothing was fitted.
    pub constant_path: bool,
    pub lambda_grid: Vec<f64>,
    /// Nonzero count of the full-sample fit at each grid value.
    pub path_nonzero: Vec<usize>,
    pub cv_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedPredictor {
    pub name: String,
    pub source: &'static str,
    pub abs_coef: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub struct SelectionCount {
    pub fred: usize,
    pub text: usize,
}

fn source_label(p: Provenance) -> &'static str {
    match p {
        Provenance::Text => "TEXT",
        Provenance::Fred | Provenance::TargetLag => "FRED",
    }
}

/// Centered copies of `x` and `y` with their means.
fn center(x: &DMatrix<f64>, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, f64) {
    let xm = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.mean()));
    let ym = y.mean();
    let mut xc = x.clone();
    for (j, mut c) in xc.column_iter_mut().enumerate() {
        c.add_scalar_mut(-xm[j]);
    }
    (xc, y.add_scalar(-ym), xm, ym)
}

fn soft(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on centered data, warm-started from `beta`.
fn coordinate_descent(xc: &DMatrix<f64>, yc: &DVector<f64>, lambda: f64, beta: &mut DVector<f64>) {
    let norms: Vec<f64> = xc.column_iter().map(|c| c.norm_squared()).collect();
    let mut r = yc - xc * &*beta;
    let scale = yc.norm_squared().max(1e-300);
    for _ in 0..CD_MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        for j in 0..xc.ncols() {
            if norms[j] == 0.0 {
                continue;
            }
            let col = xc.column(j);
            let rho = col.dot(&r) + norms[j] * beta[j];
            let new = soft(rho, lambda / 2.0) / norms[j];
            let d = new - beta[j];
            if d != 0.0 {
                r.axpy(-d, &col, 1.0);
                beta[j] = new;
                max_change = max_change.max(d * d * norms[j]);
            }
        }
        if max_change <= CD_TOL * scale {
            break;
        }
    }
}

/// Lasso solution at a single penalty (intercept unpenalized).
pub fn lasso(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<(f64, DVector<f64>)> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension { expected: x.nrows(), got: y.len() });
    }
    if !(lambda >= 0.0) {
        return Err(Error::Parameter(format!("penalty {lambda} must be nonnegative")));
    }
    let (xc, yc, xm, ym) = center(x, y);
    let mut beta = DVector::zeros(x.ncols());
    coordinate_descent(&xc, &yc, lambda, &mut beta);
    Ok((ym - xm.dot(&beta), beta))
}

/// Smallest penalty with an all-zero solution, `2 max_j |x_jᵀ(y - ȳ)|`
/// on centered columns.
pub fn lambda_max(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let (xc, yc, _, _) = center(x, y);
    2.0 * xc.tr_mul(&yc).amax()
}

/// Decreasing log-spaced grid from `λ_max` to `ratio·λ_max`.
pub fn lambda_grid(lmax: f64, n: usize, ratio: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lmax];
    }
    let (hi, lo) = (lmax.ln(), (lmax * ratio).ln());
    (0..n).map(|i| (hi + (lo - hi) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Largest KKT violation of a solution, scaled like the penalty.
pub fn kkt_residual(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    let (xc, yc, _, _) = center(x, y);
    let r = yc - &xc * beta;
    let g = xc.tr_mul(&r) * 2.0;
    (0..beta.len())
        .map(|j| {
            if beta[j].abs() > NONZERO_EPS {
                (g[j] - lambda * beta[j].signum()).abs()
            } else {
                (g[j].abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Fit the surrogate of `path` on the row-aligned predictor matrix `x`.
pub fn fit_surrogate(path: &[f64], x: &DMatrix<f64>, columns: &[Column], cfg: &SurrogateConfig) -> Result<SurrogateFit> {
    let n = path.len();
    if x.nrows() != n {
        return Err(Error::Dimension { expected: n, got: x.nrows() });
    }
    if columns.len() != x.ncols() {
        return Err(Error::Dimension { expected: x.ncols(), got: columns.len() });
    }
    if cfg.cv_folds < 2 || n < cfg.cv_folds * 2 {
        return Err(Error::Precondition(format!("{n} rows cannot be split into {} folds", cfg.cv_folds)));
    }
    if cfg.n_lambda == 0 || !(cfg.lambda_min_ratio > 0.0 && cfg.lambda_min_ratio < 1.0) {
        return Err(Error::Parameter("invalid penalty grid".into()));
    }
    if path.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Precondition("surrogate inputs contain non-finite values".into()));
    }
    let y = DVector::from_column_slice(path);
    let k = x.ncols();
    let ym = y.mean();
    let lmax = lambda_max(x, &y);
    if y.iter().all(|v| *v == path[0]) || lmax == 0.0 {
        return Ok(SurrogateFit {
            beta: vec![0.0; k],
            intercept: ym,
            lambda: 0.0,
            nonzero_count: 0,
            columns: columns.to_vec(),
            constant_path: true,
            lambda_grid: Vec::new(),
            path_nonzero: Vec::new(),
            cv_error: Vec::new(),
        });
    }
    let grid = lambda_grid(lmax, cfg.n_lambda, cfg.lambda_min_ratio);

    // Blocked folds: contiguous, sizes differing by at most one.
    let mut cv_error = vec![0.0; grid.len()];
    for f in 0..cfg.cv_folds {
        let lo = f * n / cfg.cv_folds;
        let hi = (f + 1) * n / cfg.cv_folds;
        let train: Vec<usize> = (0..n).filter(|&i| i < lo || i >= hi).collect();
        let xt = x.select_rows(&train);
        let yt = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
        let (xc, yc, xm, ymt) = center(&xt, &yt);
        let mut beta = DVector::zeros(k);
        for (g, &lam) in grid.iter().enumerate() {
            coordinate_descent(&xc, &yc, lam, &mut beta);
            let c = ymt - xm.dot(&beta);
            cv_error[g] += (lo..hi).map(|i| (y[i] - c - x.row(i).transpose().dot(&beta)).powi(2)).sum::<f64>();
        }
    }
    for e in &mut cv_error {
        *e /= n as f64;
    }
    let best = cv_error
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("nonempty grid");

    let (xc, yc, xm, _) = center(x, &y);
    let mut beta = DVector::zeros(k);
    let mut path_nonzero = Vec::with_capacity(grid.len());
    let mut chosen = beta.clone();
    for (g, &lam) in grid.iter().enumerate() {
        coordinate_descent(&xc, &yc, lam, &mut beta);
        path_nonzero.push(beta.iter().filter(|b| b.abs() > NONZERO_EPS).count());
        if g == best {
            chosen = beta.clone();
        }
    }
    Ok(SurrogateFit {
        intercept: ym - xm.dot(&chosen),
        nonzero_count: chosen.iter().filter(|b| b.abs() > NONZERO_EPS).count(),
        beta: chosen.iter().copied().collect(),
        lambda: grid[best],
        columns: columns.to_vec(),
        constant_path: false,
        lambda_grid: grid,
        path_nonzero,
        cv_error,
    })
}

/// The `k` predictors with the largest absolute coefficients, ties broken by
/// name. Zero coefficients are never listed.
pub fn top_predictors(fit: &SurrogateFit, k: usize) -> Vec<RankedPredictor> {
    let mut idx: Vec<usize> = (0..fit.beta.len()).filter(|&j| fit.beta[j].abs() > NONZERO_EPS).collect();
    idx.sort_by(|&a, &b| {
        fit.beta[b]
            .abs()
            .total_cmp(&fit.beta[a].abs())
            .then_with(|| fit.columns[a].name.cmp(&fit.columns[b].name))
    });
    idx.into_iter()
        .take(k)
        .map(|j| RankedPredictor {
            name: fit.columns[j].name.clone(),
            source: source_label(fit.columns[j].provenance),
            abs_coef: fit.beta[j].abs(),
        })
        .collect()
}

/// Nonzero coefficients split by origin; target lags count as FRED.
pub fn count_selected(fit: &SurrogateFit) -> SelectionCount {
    let mut c = SelectionCount::default();
    for (b, col) in fit.beta.iter().zip(&fit.columns) {
        if b.abs() > NONZERO_EPS {
            match col.provenance {
                Provenance::Text => c.text += 1,
                Provenance::Fred | Provenance::TargetLag => c.fred += 1,
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cols(k: usize) -> Vec<Column> {
        (0..k)
            .map(|j| Column::new(format!("c{j}"), if j % 2 == 0 { Provenance::Fred } else { Provenance::Text }))
            .collect()
    }

    fn random(n: usize, k: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, k, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] * 1.5 - x[(i, 2)] + 0.3 * (rng.random::<f64>() - 0.5));
        (x, y)
    }

    #[test]
    fn exact_column_is_selected() {
        let (x, _) = random(80, 4, 1);
        let path: Vec<f64> = x.column(2).iter().copied().collect();
        let fit = fit_surrogate(&path, &x, &cols(4), &SurrogateConfig::default()).unwrap();
        assert!((fit.beta[2] - 1.0).abs() < 1e-3);
        assert!(fit.beta.iter().enumerate().all(|(j, b)| j == 2 || b.abs() < 1e-3));
    }

    #[test]
    fn large_penalty_zeroes_everything() {
        let (x, y) = random(50, 3, 2);
        let (_, b) = lasso(&x, &y, lambda_max(&x, &y) * 1.0001).unwrap();
        assert!(b.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_path_is_flagged() {
        let (x, _) = random(30, 3, 3);
        let fit = fit_surrogate(&[2.0; 30], &x, &cols(3), &SurrogateConfig::default()).unwrap();
        assert!(fit.constant_path);
        assert_eq!(fit.nonzero_count, 0);
        assert_eq!(count_selected(&fit), SelectionCount::default());
        assert!(top_predictors(&fit, 5).is_empty());
    }

    #[test]
    fn ranking_and_counts() {
        let mut fit = fit_surrogate(&[1.0; 20], &DMatrix::zeros(20, 3), &cols(3), &SurrogateConfig::default()).unwrap();
        fit.beta = vec![0.5, -0.9, 0.0];
        let top = top_predictors(&fit, 2);
        assert_eq!(top.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(), vec!["c1", "c0"]);
        assert_eq!(top[0].source, "TEXT");
        assert_eq!(count_selected(&fit), SelectionCount { fred: 1, text: 1 });
        fit.beta = vec![0.5, -0.5, 0.2];
        let names: Vec<String> = top_predictors(&fit, 3).into_iter().map(|p| p.name).collect();
        assert_eq!(names, vec!["c0", "c1", "c2"]);
    }

    #[test]
    fn rescaling_a_raw_column_keeps_the_ranking() {
        let (x, y) = random(100, 4, 4);
        let standardize = |m: &DMatrix<f64>| {
            let mut s = m.clone();
            for mut c in s.column_iter_mut() {
                let mean = c.mean();
                let sd = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (c.len() - 1) as f64).sqrt();
                c.iter_mut().for_each(|v| *v = (*v - mean) / sd);
            }
            s
        };
        let mut raw2 = x.clone();
        raw2.column_mut(1).scale_mut(37.0);
        let path: Vec<f64> = y.iter().copied().collect();
        let a = fit_surrogate(&path, &standardize(&x), &cols(4), &SurrogateConfig::default()).unwrap();
        let b = fit_surrogate(&path, &standardize(&raw2), &cols(4), &SurrogateConfig::default()).unwrap();
        let names = |f: &SurrogateFit| top_predictors(f, 4).into_iter().map(|p| p.name).collect::<Vec<_>>();
        assert_eq!(names(&a), names(&b));
    }
}
