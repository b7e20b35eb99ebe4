//! Frequentist linear quantile regression by check-loss minimization,
//! solved as a linear program.

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLossFit {
    pub intercept: f64,
    pub coef: DVector<f64>,
    /// Minimized total check loss.
    pub objective: f64,
}

impl CheckLossFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(self.coef.iter()).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Minimize `Σ ρ_τ(y_t - α - x_tβ)` over `(α, β)`:
///
/// `min Σ τu⁺ + (1-τ)u⁻  s.t.  α + x_tβ + u⁺_t - u⁻_t = y_t,  u± ≥ 0`.
pub fn check_loss_fit(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> Result<CheckLossFit> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Parameter(format!("quantile level {tau} is outside (0, 1)")));
    }
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension { expected: n, got: y.len() });
    }
    if n == 0 {
        return Err(Error::Precondition("no observations".into()));
    }
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let free = (f64::NEG_INFINITY, f64::INFINITY);
    let alpha = lp.add_var(0.0, free);
    let beta: Vec<_> = (0..k).map(|_| lp.add_var(0.0, free)).collect();
    for t in 0..n {
        let up = lp.add_var(tau, (0.0, f64::INFINITY));
        let dn = lp.add_var(1.0 - tau, (0.0, f64::INFINITY));
        let mut e = LinearExpr::empty();
        e.add(alpha, 1.0);
        for (j, b) in beta.iter().enumerate() {
            e.add(*b, x[(t, j)]);
        }
        e.add(up, 1.0);
        e.add(dn, -1.0);
        lp.add_constraint(e, ComparisonOp::Eq, y[t]);
    }
    let sol = lp
        .solve()
        .map_err(|e| Error::numerical(0, format!("check-loss program failed: {e}")))?;
    Ok(CheckLossFit {
        intercept: sol[alpha],
        coef: DVector::from_iterator(k, beta.iter().map(|b| sol[*b])),
        objective: sol.objective(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_model_hits_empirical_quantile() {
        let y = DVector::from_vec(vec![5.0, 1.0, 3.0, 2.0, 4.0]);
        let x = DMatrix::zeros(5, 0);
        let f = check_loss_fit(&x, &y, 0.5).unwrap();
        assert!((f.intercept - 3.0).abs() < 1e-9);
        let f = check_loss_fit(&x, &y, 0.2).unwrap();
        assert!(f.intercept >= 1.0 - 1e-9 && f.intercept <= 2.0 + 1e-9);
    }

    #[test]
    fn exact_line_is_recovered() {
        let x = DMatrix::from_fn(20, 1, |i, _| i as f64);
        let y = x.column(0).map(|v| 2.0 - 0.5 * v);
        let f = check_loss_fit(&x, &y, 0.7).unwrap();
        assert!((f.intercept - 2.0).abs() < 1e-8 && (f.coef[0] + 0.5).abs() < 1e-8);
        assert!(f.objective.abs() < 1e-8);
    }
}
