//! Gaussian-process quantile regression on a sinusoidal median.

use tailcast::bqr::{fit_bqr_xy, make_prior, BqrConfig, Hyper, PriorKind};
use tailcast::eval::mean_quantile_score;
use tailcast::gpqr::{fit_gpqr_xy, GpConfig};
use tailcast::synth::sinusoidal_dgp;

fn main() -> tailcast::Result<()> {
    let (x, y) = sinusoidal_dgp(300, 3);
    let ys = y.as_slice();
    for tau in [0.1, 0.5, 0.9] {
        let gp = fit_gpqr_xy(&x, &y, tau, &GpConfig::default(), 0)?;
        let ridge = fit_bqr_xy(&x, &y, tau, make_prior(PriorKind::Ridge, Hyper::default())?, &BqrConfig::default())?;
        let lin: Vec<f64> = (0..x.nrows()).map(|i| ridge.predict(&[x[(i, 0)]])).collect::<Result<_, _>>()?;
        println!(
            "tau = {tau}: in-sample pinball GP {:.4}, linear {:.4} (kernel {:?}, jitter {:e})",
            mean_quantile_score(ys, gp.in_sample().as_slice(), tau)?,
            mean_quantile_score(ys, &lin, tau)?,
            gp.kernel(),
            gp.jitter()
        );
    }
    let gp = fit_gpqr_xy(&x, &y, 0.5, &GpConfig::default(), 0)?;
    for v in [-2.0, -1.0, 0.0, 1.0, 2.0] {
        println!("  median at x = {v:+.1}: {:+.3} (sin 2x = {:+.3})", gp.predict(&[v])?, (2.0 * v).sin());
    }
    Ok(())
}
