use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DmResult {
    pub stat: f64,
    /// One-tailed p-value against "a is more accurate than b".
    pub p_value: f64,
    /// Set when the loss differential has zero variance.
    pub degenerate: bool,
}

pub const DM_MIN_LEN: usize = 10;

/// Diebold-Mariano test on `d_t = loss_a - loss_b` with a rectangular-kernel
/// long-run variance truncated at `h` lags. Small p-values favour `a`.
pub fn dm_test(loss_a: &[f64], loss_b: &[f64], h: usize) -> Result<DmResult> {
    if loss_a.len() != loss_b.len() {
        return Err(Error::Length(format!("loss series of length {} and {}", loss_a.len(), loss_b.len())));
    }
    let n = loss_a.len();
    if n < DM_MIN_LEN {
        return Err(Error::Length(format!("need at least {DM_MIN_LEN} losses, got {n}")));
    }
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let autocov = |j: usize| (j..n).map(|t| (d[t] - mean) * (d[t - j] - mean)).sum::<f64>() / nf;
    let g0 = autocov(0);
    if !(g0 > 0.0) {
        return Ok(DmResult { stat: 0.0, p_value: 0.5, degenerate: true });
    }
    let mut lrv = g0 + 2.0 * (1..=h.min(n - 1)).map(autocov).sum::<f64>();
    if lrv <= 0.0 {
        lrv = g0;
    }
    let stat = mean / (lrv / nf).sqrt();
    let p_value = Normal::standard().cdf(stat);
    Ok(DmResult { stat, p_value, degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal as NormalDist};

    #[test]
    fn identical_losses() {
        let a: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let r = dm_test(&a, &a, 1).unwrap();
        assert_eq!((r.stat, r.p_value, r.degenerate), (0.0, 0.5, true));
    }

    #[test]
    fn strongly_better_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nd = NormalDist::new(-1.0, 0.1).unwrap();
        let d: Vec<f64> = (0..200).map(|_| nd.sample(&mut rng)).collect();
        let zeros = vec![0.0; 200];
        let r = dm_test(&d, &zeros, 0).unwrap();
        assert!(r.p_value < 1e-6);
        let flipped = dm_test(&zeros, &d, 0).unwrap();
        assert_eq!(flipped.stat, -r.stat);
    }

    #[test]
    fn length_checks() {
        assert!(dm_test(&[1.0; 5], &[1.0; 5], 0).is_err());
        assert!(dm_test(&[1.0; 12], &[1.0; 11], 0).is_err());
    }
}
