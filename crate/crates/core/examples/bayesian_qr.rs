//! Variational Bayesian quantile regression under three shrinkage priors,
//! against the exact check-loss solution.

use tailcast::bqr::{fit_bqr_xy, make_prior, BqrConfig, Hyper, PriorKind};
use tailcast::quantreg::check_loss_fit;
use tailcast::synth::sparse_linear_dgp;

fn main() -> tailcast::Result<()> {
    let (x, y, truth) = sparse_linear_dgp(500, 5, 1);
    println!("true slopes {truth:?}");
    for tau in [0.1, 0.5, 0.9] {
        let lp = check_loss_fit(&x, &y, tau)?;
        println!("tau = {tau}: check-loss LP {:.3?}", lp.coef.as_slice());
        for kind in PriorKind::ALL {
            let prior = make_prior(kind, Hyper::default())?;
            let post = fit_bqr_xy(&x, &y, tau, prior, &BqrConfig::default())?;
            println!(
                "  {:<9} {:.3?}  ({} iterations)",
                kind.as_str(),
                post.beta_mean().as_slice(),
                post.elbo_trace().len()
            );
        }
    }
    Ok(())
}
