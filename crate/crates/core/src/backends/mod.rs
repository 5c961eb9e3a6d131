//! LLM backends: one trait, four implementations.
//!
//! * [`OracleBackend`] answers from relevance judgments, optionally with keyed
//!   noise so that "cheap" and "expensive" tiers can be simulated.
//! * [`ScriptedBackend`] replays fixture outputs keyed by prompt hash.
//! * [`HttpBackend`] posts to a chat-completion style endpoint.
//!
//! Every completion reports token usage; simulated backends count prompt
//! tokens with [`count_tokens`](crate::textproc::count_tokens) and never
//! exceed the requested output cap.

mod http;
mod oracle;
mod scripted;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::{Pricing, PricingTable};
use crate::error::{Error, Result};
use crate::prompts::PromptRecord;
use crate::types::RelevanceJudgments;

pub use http::{HttpBackend, HttpConfig};
pub use oracle::{noisy_answer, DrawKey, OracleBackend, OracleConfig};
pub use scripted::{prompt_hash, FixtureEntry, ScriptedBackend};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{backend}: transport failure after {attempts} attempt(s): {message}")]
    Transport {
        backend: String,
        attempts: usize,
        message: String,
    },
    #[error("{backend}: malformed response: {message}")]
    InvalidResponse { backend: String, message: String },
    #[error("{backend}: no fixture for prompt hash {hash}")]
    MissingFixture { backend: String, hash: String },
    #[error("{0}")]
    Config(String),
}

/// Identifies the call for keyed randomness and lets simulated backends see
/// which query they are answering.
#[derive(Debug, Clone, Copy)]
pub struct RequestContext<'a> {
    pub query_id: &'a str,
    pub query_text: &'a str,
    /// Index of this call within the query's run.
    pub ordinal: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub output: String,
    pub prompt_tokens: usize,
    pub output_tokens: usize,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn pricing(&self) -> &Pricing;

    fn complete(&self, ctx: &RequestContext<'_>, prompt: &PromptRecord) -> Result<Completion, BackendError>;

    /// Whether a call that ultimately failed is still billed for its prompt.
    fn bills_failures(&self) -> bool {
        false
    }
}

pub type SharedBackend = Arc<dyn Backend>;

/// Backends by name.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    backends: BTreeMap<String, SharedBackend>,
}

impl std::fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.backends.keys()).finish()
    }
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, backend: SharedBackend) {
        self.backends.insert(backend.name().to_string(), backend);
    }

    pub fn with(mut self, backend: impl Backend + 'static) -> Self {
        self.insert(Arc::new(backend));
        self
    }

    pub fn get(&self, name: &str) -> Result<&SharedBackend> {
        self.backends
            .get(name)
            .ok_or_else(|| Error::UnknownBackend(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.backends.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }

    pub fn pricing_table(&self) -> PricingTable {
        let mut t = PricingTable::default();
        for (name, b) in &self.backends {
            t.insert(name.clone(), b.pricing().clone());
        }
        t
    }
}

/// Declarative backend description, as found in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// Judgment-driven simulator; `accuracy < 1` makes it noisy.
    Oracle {
        pricing: Pricing,
        #[serde(default = "one")]
        accuracy: f64,
        /// Mixed with the run seed.
        #[serde(default)]
        seed: u64,
        #[serde(default = "one_u32")]
        relevance_threshold: u32,
    },
    Scripted {
        pricing: Pricing,
        fixture: PathBuf,
        #[serde(default)]
        default_output: Option<String>,
    },
    Http {
        pricing: Pricing,
        #[serde(flatten)]
        config: HttpConfig,
    },
}

fn one() -> f64 {
    1.0
}

fn one_u32() -> u32 {
    1
}

impl BackendSpec {
    pub fn pricing(&self) -> &Pricing {
        match self {
            BackendSpec::Oracle { pricing, .. }
            | BackendSpec::Scripted { pricing, .. }
            | BackendSpec::Http { pricing, .. } => pricing,
        }
    }

    /// Instantiates the backend. Oracles need the judgments they answer from.
    pub fn build(&self, name: &str, judgments: &Arc<RelevanceJudgments>, run_seed: u64) -> Result<SharedBackend> {
        self.pricing().validate()?;
        Ok(match self {
            BackendSpec::Oracle {
                pricing,
                accuracy,
                seed,
                relevance_threshold,
            } => {
                let cfg = OracleConfig::new(Arc::clone(judgments), *accuracy, seed ^ run_seed)?
                    .with_relevance_threshold(*relevance_threshold);
                Arc::new(OracleBackend::new(name, pricing.clone(), cfg))
            }
            BackendSpec::Scripted {
                pricing,
                fixture,
                default_output,
            } => {
                let mut b = ScriptedBackend::load(name, pricing.clone(), fixture)?;
                if let Some(d) = default_output {
                    b = b.with_default(d.clone());
                }
                Arc::new(b)
            }
            BackendSpec::Http { pricing, config } => Arc::new(HttpBackend::new(name, pricing.clone(), config.clone())?),
        })
    }
}
