//! Action timing context (ATC) analysis.
//!
//! The pipeline turns timestamped user action logs into an interpretable
//! per-action score:
//!
//! 1. [`ingest`] parses event logs into per-user chronological streams and
//!    computes inter-action intervals.
//! 2. [`mixture`] fits a mixture of exponentials to the intervals with EM,
//!    selects the component count by codelength and maps every interval to a
//!    time bin `T0..TK`.
//! 3. [`sequence`] interleaves actions with bin tokens, extracts trigrams and
//!    enumerates (word, context) training pairs.
//! 4. [`sgns`] trains skip-gram negative-sampling embeddings over the pairs.
//! 5. [`analysis`] builds long/short reference vectors from `Tb|A|Tb`
//!    trigrams and scores each action, plus the downstream statistics
//!    (standardization, bootstrap CIs, cohort differences, windowed
//!    dynamics and covariate correlation).
//! 6. [`pipeline`] wires the stages into reproducible batch runs with
//!    persisted intermediates and a synthetic log generator.

pub mod analysis;
pub mod error;
pub mod ingest;
pub mod mixture;
pub mod pipeline;
pub mod seed;
pub mod sequence;
pub mod sgns;

pub use error::{Error, ErrorClass, Result};
