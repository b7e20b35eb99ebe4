//! Fit a correlated topic model to a planted corpus and compare topics.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tailcast::ctm::{align_topics, fit_ctm, CtmConfig};
use tailcast::synth::{planted_ctm_corpus, planted_topics};

fn main() -> tailcast::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let beta = planted_topics(3, 200, 0.02, &mut rng);
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
    let corpus = planted_ctm_corpus(&beta, &DVector::zeros(2), &sigma, 500, 120, 12)?;

    let model = fit_ctm(&corpus.dtm, &CtmConfig { k: 3, seed: 1, ..Default::default() })?;
    println!("{} EM iterations, converged: {}", model.elbo_trace().len(), model.converged());
    for (est, reference, tv) in align_topics(model.beta(), &beta) {
        println!("planted topic {reference} <- fitted {est}: total variation {tv:.4}");
        println!("  top terms {:?}", model.top_terms(est, 5));
    }
    let post = model.infer_sparse(corpus.dtm.row(0))?;
    println!("document 0: planted {:.3?}, inferred {:.3?}", corpus.thetas[0].as_slice(), post.theta.as_slice());
    Ok(())
}
