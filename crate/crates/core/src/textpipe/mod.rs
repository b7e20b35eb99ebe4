//! Raw documents to document-term matrices with a tf-idf selected vocabulary.

mod corpus;
mod dtm;

pub use corpus::{
    read_keep_list, stopwords, tokenize, tokenize_text, Corpus, Document, TokenizedCorpus,
    TokenizedDoc,
};
pub use dtm::{
    build_dtm, select_vocabulary, tfidf_scores, DocumentTermMatrix, DtmBuild, TfIdfAggregate,
    VocabSelection,
};
