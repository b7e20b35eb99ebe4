pub mod bqr;
pub mod cli;
pub mod ctm;
pub mod date;
pub mod error;
pub mod eval;
pub mod gpqr;
pub mod ingest;
pub mod qrf;
pub mod quantreg;
pub mod synth;
pub mod textpipe;
pub mod varimp;

pub use date::YearMonth;
pub use error::{Error, Result};
