//! Next-action prediction over student event logs.
//!
//! The crate turns tab-separated activity logs into per-student action
//! sequences and fits several next-action predictors over them:
//!
//! * [`ngram`]: count tables for every gram order with recursive backoff,
//! * [`lstm`]: a stacked LSTM (or simple RNN) trained from scratch with
//!   truncated BPTT and RMSprop,
//! * [`baselines`]: repeat-last, syllabus-successor and their combination.
//!
//! [`eval`] holds the student-level cross-validation protocol shared by all
//! models, and [`synth`] generates seeded corpora whose Bayes-optimal
//! accuracy is known, so the whole pipeline can be checked end to end.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod kv;
pub mod lstm;
pub mod ngram;
pub mod synth;
pub mod util;

pub use error::{Error, Result};
pub use eval::{EvalReport, FoldPlan, Predictor};
pub use ingest::{Corpus, StudentSequence, Vocabulary};
