//! Constrained top-k decoding for marker-based cross-lingual label projection.
//!
//! A labeled source sentence is split into one single-span problem per label
//! span. For each problem the engine inserts one `[`/`]` pair into a fixed,
//! marker-free translation template, searching the placements with a
//! depth-first branch-and-bound that keeps the `k` most probable hypotheses
//! under an arbitrary [`Scorer`]. The winners are re-ranked by a reverse
//! span-level score and recombined into labeled target spans.
//!
//! The pipeline has three stages, each usable on its own:
//!
//! 1. [`pruning`]: opening-marker candidates from log-prob deltas between
//!    marked and plain conditioning.
//! 2. [`search`]: the top-k DFS with exact or length-indexed bounds, plus a
//!    brute-force oracle and a constrained beam-search baseline.
//! 3. [`rerank`]: span-level re-ranking and lexical filtering.
//!
//! [`pipeline`] chains them per example and [`suite`] builds synthetic
//! instances with planted gold placements.

pub mod error;
pub mod pipeline;
pub mod pruning;
pub mod rerank;
pub mod scorer;
pub mod search;
pub mod suite;
pub mod types;

pub use error::{CodecError, Result};
pub use scorer::{sequence_logprob, PlantedAlignmentScorer, Scorer, TableScorer};
pub use types::{
    Hypothesis, LabeledSpan, MarkedSource, Placement, SourceExample, Template, TokenId, TokenSeq, Vocabulary, CLOSE,
    EOS, OPEN, PREFIX,
};
