//! Corpus to document-term matrix with a tf-idf selected vocabulary.

use tailcast::synth::{generate, SynthConfig};
use tailcast::textpipe::{build_dtm, select_vocabulary, tokenize, tokenize_text, TfIdfAggregate};
use tailcast::YearMonth;

fn main() -> tailcast::Result<()> {
    println!("{:?}", tokenize_text("Prices rose 3% in May.", None));

    let data = generate(&SynthConfig::default())?;
    let tokens = tokenize(&data.corpus, Some(&data.keep_list));
    println!("{} documents, {} empty after filtering", tokens.docs.len(), tokens.empty_ids().len());

    let full = build_dtm(&tokens, &tokens.vocabulary())?;
    let cutoff = YearMonth::new(2011, 12).expect("valid month");
    let sel = select_vocabulary(&full.dtm, cutoff, 40, TfIdfAggregate::Max)?;
    let dtm = build_dtm(&tokens, &sel.terms)?;
    println!(
        "kept {} of {} terms; dtm {} x {}, {} tokens, {} documents dropped",
        sel.terms.len(),
        full.dtm.n_terms(),
        dtm.dtm.n_docs(),
        dtm.dtm.n_terms(),
        dtm.dtm.total_count(),
        dtm.dropped_docs.len()
    );
    Ok(())
}
