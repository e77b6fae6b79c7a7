//! Command-line front end: JSONL projection, suite generation and the
//! ablation benchmark.

pub mod bench;
pub mod cli;
pub mod records;
pub mod scorers;

pub use cli::run;
