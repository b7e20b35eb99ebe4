use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantreg::check_loss_fit;

/// Linear quantile autoregression `Q_τ(y_{t+gap}) = a + b·y_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1Model {
    pub tau: f64,
    pub intercept: f64,
    pub slope: f64,
    pub gap: usize,
}

impl Ar1Model {
    pub fn predict(&self, y_last: f64) -> f64 {
        self.intercept + self.slope * y_last
    }
}

pub const AR1_MIN_LEN: usize = 30;

/// Fit the quantile AR(1) benchmark on a gap-free series, pairing `y_t`
/// with `y_{t+gap}`.
pub fn fit_ar1_benchmark(series: &[f64], tau: f64, gap: usize) -> Result<Ar1Model> {
    if gap == 0 {
        return Err(Error::Parameter("gap must be at least 1".into()));
    }
    if series.len() < AR1_MIN_LEN {
        return Err(Error::Precondition(format!(
            "series has {} observations, need at least {AR1_MIN_LEN}",
            series.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("series contains missing values".into()));
    }
    if series.len() <= gap + 1 {
        return Err(Error::Precondition("series shorter than the gap".into()));
    }
    let n = series.len() - gap;
    let x: Vec<f64> = series[..n].to_vec();
    let y: Vec<f64> = series[gap..].to_vec();
    fit_lag_pairs(&x, &y, tau).map(|(intercept, slope)| Ar1Model { tau, intercept, slope, gap })
}

/// Quantile regression of `y` on an intercept and `x`.
pub fn fit_lag_pairs(x: &[f64], y: &[f64], tau: f64) -> Result<(f64, f64)> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Precondition("lagged regressor is constant".into()));
    }
    let xm = DMatrix::from_column_slice(x.len(), 1, x);
    let fit = check_loss_fit(&xm, &DVector::from_column_slice(y), tau)?;
    Ok((fit.intercept, fit.coef[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_pairs_give_unit_slope() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let (a, b) = fit_lag_pairs(&x, &x, 0.3).unwrap();
        assert!(a.abs() < 1e-9 && (b - 1.0).abs() < 1e-9);
    }

    #[test]
    fn iid_series_has_flat_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let m = fit_ar1_benchmark(&y, 0.25, 1).unwrap();
        let mut sorted = y.clone();
        sorted.sort_by(f64::total_cmp);
        let q = sorted[(0.25 * 2000.0) as usize - 1];
        assert!(m.slope.abs() < 0.05);
        assert!((m.intercept + m.slope * 0.5 - q).abs() < 0.05);
        assert!((m.intercept - q).abs() < 0.05);
    }

    #[test]
    fn guards() {
        assert!(fit_ar1_benchmark(&[1.0; 10], 0.5, 1).is_err());
        assert!(fit_ar1_benchmark(&[1.0; 40], 0.5, 1).is_err());
    }
}
