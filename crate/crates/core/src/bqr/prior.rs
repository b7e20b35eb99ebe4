use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Asymmetric-Laplace mixture constants for quantile level `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSpec {
    tau: f64,
    theta: f64,
    kappa2: f64,
}

impl QuantileSpec {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Parameter(format!("quantile level {tau} is outside (0, 1)")));
        }
        let v = tau * (1.0 - tau);
        Ok(Self {
            tau,
            theta: (1.0 - 2.0 * tau) / v,
            kappa2: 2.0 / v,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }

    pub fn kappa(&self) -> f64 {
        self.kappa2.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Ridge,
    Horseshoe,
    Lasso,
}

impl PriorKind {
    pub const ALL: [PriorKind; 3] = [PriorKind::Ridge, PriorKind::Horseshoe, PriorKind::Lasso];

    pub fn as_str(self) -> &'static str {
        match self {
            PriorKind::Ridge => "ridge",
            PriorKind::Horseshoe => "horseshoe",
            PriorKind::Lasso => "lasso",
        }
    }
}

impl std::str::FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ridge" => Ok(PriorKind::Ridge),
            "horseshoe" => Ok(PriorKind::Horseshoe),
            "lasso" => Ok(PriorKind::Lasso),
            _ => Err(Error::validation("prior", format!("unknown prior `{s}`"))),
        }
    }
}

/// Global-local shrinkage prior on the slope coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ShrinkagePrior {
    /// `ψ_j = 1`, `λ ~ IG(e0, e1)`.
    Ridge { e0: f64, e1: f64 },
    /// Half-Cauchy local and global scales through inverse-Gamma auxiliaries.
    Horseshoe,
    /// `β_j | ψ_j ~ N(0, ψ_j)`, `ψ_j ~ Exp(rate λ/2)`, `λ ~ G(c0, d0)`.
    Lasso { c0: f64, d0: f64 },
    /// Independent `N(0, variance)` slopes with no hyperprior.
    Fixed { variance: f64 },
}

/// Hyperparameters passed to [`make_prior`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Hyper {
    pub a: Option<f64>,
    pub b: Option<f64>,
}

/// Build a shrinkage prior. Ridge reads `(e0, e1)` and Lasso `(c0, d0)` from
/// `hyper`, both defaulting to zero. Horseshoe accepts none.
pub fn make_prior(kind: PriorKind, hyper: Hyper) -> Result<ShrinkagePrior> {
    let a = hyper.a.unwrap_or(0.0);
    let b = hyper.b.unwrap_or(0.0);
    if !(a >= 0.0 && b >= 0.0) {
        return Err(Error::Parameter(format!("hyperparameters must be nonnegative, got ({a}, {b})")));
    }
    match kind {
        PriorKind::Ridge => Ok(ShrinkagePrior::Ridge { e0: a, e1: b }),
        PriorKind::Lasso => Ok(ShrinkagePrior::Lasso { c0: a, d0: b }),
        PriorKind::Horseshoe => {
            if hyper.a.is_some() || hyper.b.is_some() {
                return Err(Error::Parameter("the horseshoe prior takes no hyperparameters".into()));
            }
            Ok(ShrinkagePrior::Horseshoe)
        }
    }
}

impl ShrinkagePrior {
    pub fn kind(&self) -> Option<PriorKind> {
        match self {
            ShrinkagePrior::Ridge { .. } => Some(PriorKind::Ridge),
            ShrinkagePrior::Horseshoe => Some(PriorKind::Horseshoe),
            ShrinkagePrior::Lasso { .. } => Some(PriorKind::Lasso),
            ShrinkagePrior::Fixed { .. } => None,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let ok = match *self {
            ShrinkagePrior::Ridge { e0, e1 } => e0 >= 0.0 && e1 >= 0.0,
            ShrinkagePrior::Lasso { c0, d0 } => c0 >= 0.0 && d0 >= 0.0,
            ShrinkagePrior::Horseshoe => true,
            ShrinkagePrior::Fixed { variance } => variance > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid prior hyperparameters {self:?}")))
        }
    }
}

impl Default for ShrinkagePrior {
    fn default() -> Self {
        ShrinkagePrior::Horseshoe
    }
}
