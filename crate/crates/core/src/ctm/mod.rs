//! Correlated topic model: variational EM fit, held-out inference and
//! monthly aggregation of topic proportions.

mod estep;
mod model;
mod series;

pub use estep::softmax_with_reference;
pub use model::{align_topics, fit_ctm, CtmBundle, CtmConfig, CtmModel, DocPosterior, ELBO_SLACK};
pub use series::{aggregate_monthly, infer_corpus, TopicSeries};
