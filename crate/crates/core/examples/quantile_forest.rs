//! Quantile regression forest: conditional quantiles and the weighted CDF.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tailcast::qrf::{grow_forest_xy, QrfConfig};

fn main() -> tailcast::Result<()> {
    // Spread grows with |x|.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 400;
    let x: DMatrix<f64> = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-2.0..2.0));
    let y = DVector::from_fn(n, |i, _| x[(i, 0)] + (0.2 + x[(i, 0)].abs()) * rng.sample::<f64, _>(StandardNormal));
    let forest = grow_forest_xy(&x, &y, &QrfConfig { n_trees: 200, ..Default::default() }, 9)?;
    let alphas = [0.05, 0.25, 0.5, 0.75, 0.95];
    for x0 in [-1.5, 0.0, 1.5] {
        let q = forest.estimate_quantiles(&[x0, 0.0], &alphas)?;
        println!("x1 = {x0:+.1}: quantiles {q:.3?}");
    }
    let cdf = forest.estimate_cdf(&[0.0, 0.0], &[-1.0, 0.0, 1.0])?;
    println!("F(-1, 0, 1 | x = 0) = {cdf:.3?}");
    Ok(())
}
