//! Budget-constrained passage re-ranking with LLM backends.
//!
//! A [`pipeline::PipelineConfig`] chains prompting strategies, each on a
//! priced backend with a share of a per-query budget. Every call goes
//! through a [`budget::Ledger`] that refuses anything it cannot afford.

pub mod backends;
pub mod budget;
pub mod corpus;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod prompts;
pub mod strategies;
pub mod synth;
pub mod textproc;
pub mod types;

pub use error::{Error, Result};
pub use types::{Passage, Provenance, RankedList, RankingTask, RelevanceJudgments};
