use crate::error::{Error, Result};

/// Pinball loss `(y - q)(τ - 1{y ≤ q})`.
pub fn quantile_score(y: f64, q: f64, tau: f64) -> f64 {
    let ind = if y <= q { 1.0 } else { 0.0 };
    (y - q) * (tau - ind)
}

/// Check function `ρ_τ(u) = u(τ - 1{u ≤ 0})` of a residual.
pub(crate) fn quantile_score_raw(u: f64, tau: f64) -> f64 {
    quantile_score(u, 0.0, tau)
}

/// Mean pinball loss of a forecast path.
pub fn mean_quantile_score(y: &[f64], q: &[f64], tau: f64) -> Result<f64> {
    if y.len() != q.len() {
        return Err(Error::Length(format!("{} realizations against {} forecasts", y.len(), q.len())));
    }
    if y.is_empty() {
        return Err(Error::Length("no forecasts to score".into()));
    }
    Ok(y.iter().zip(q).map(|(a, b)| quantile_score(*a, *b, tau)).sum::<f64>() / y.len() as f64)
}

/// Sort a forecast vector given over ascending quantile levels, removing any
/// quantile crossing.
pub fn rearrange_quantiles(forecasts: &[f64]) -> Vec<f64> {
    let mut v = forecasts.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        assert_eq!(quantile_score(2.0, 1.0, 0.9), 0.9);
        assert!((quantile_score(0.0, 1.0, 0.9) - 0.1).abs() < 1e-15);
        assert_eq!(quantile_score(1.5, 1.5, 0.3), 0.0);
    }

    #[test]
    fn rearrangement() {
        assert_eq!(rearrange_quantiles(&[1.0, 0.9]), vec![0.9, 1.0]);
        assert_eq!(rearrange_quantiles(&[0.1, 0.2, 0.3]), vec![0.1, 0.2, 0.3]);
    }

    proptest! {
        #[test]
        fn score_is_nonnegative(y in -1e3f64..1e3, q in -1e3f64..1e3, tau in 0.001f64..0.999) {
            prop_assert!(quantile_score(y, q, tau) >= 0.0);
        }

        #[test]
        fn rearrangement_is_idempotent(v in proptest::collection::vec(-10.0f64..10.0, 7)) {
            let once = rearrange_quantiles(&v);
            prop_assert_eq!(rearrange_quantiles(&once), once.clone());
            prop_assert!(once.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
