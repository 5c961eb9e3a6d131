use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, Completion, RequestContext};
use crate::budget::Pricing;
use crate::error::{Error, Result};
use crate::prompts::PromptRecord;
use crate::textproc::{count_tokens, truncate_tokens};

/// Hex SHA-256 of the prompt text.
pub fn prompt_hash(prompt: &str) -> String {
    Sha256::digest(prompt.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// One recorded exchange. Either the full prompt or its hash identifies it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash: Option<String>,
    pub output: String,
}

/// Replays canned outputs keyed by prompt hash.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    name: String,
    pricing: Pricing,
    outputs: HashMap<String, String>,
    default_output: Option<String>,
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>, pricing: Pricing) -> Self {
        Self {
            name: name.into(),
            pricing,
            outputs: HashMap::new(),
            default_output: None,
        }
    }

    pub fn from_entries(
        name: impl Into<String>,
        pricing: Pricing,
        entries: impl IntoIterator<Item = FixtureEntry>,
    ) -> Result<Self> {
        let mut b = Self::new(name, pricing);
        for e in entries {
            let hash = match (&e.hash, &e.prompt) {
                (Some(h), _) => h.to_lowercase(),
                (None, Some(p)) => prompt_hash(p),
                (None, None) => {
                    return Err(Error::Config(format!(
                        "{}: fixture entry needs a prompt or a hash",
                        b.name
                    )))
                }
            };
            b.outputs.insert(hash, e.output);
        }
        Ok(b)
    }

    /// Loads a JSON array of [`FixtureEntry`].
    pub fn load(name: &str, pricing: Pricing, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<FixtureEntry> = serde_json::from_str(&text)?;
        Self::from_entries(name, pricing, entries)
    }

    pub fn with_response(mut self, prompt: &str, output: impl Into<String>) -> Self {
        self.outputs.insert(prompt_hash(prompt), output.into());
        self
    }

    /// Output used for prompts without a fixture; without one they error.
    pub fn with_default(mut self, output: impl Into<String>) -> Self {
        self.default_output = Some(output.into());
        self
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn pricing(&self) -> &Pricing {
        &self.pricing
    }

    fn complete(&self, _ctx: &RequestContext<'_>, prompt: &PromptRecord) -> Result<Completion, BackendError> {
        let hash = prompt_hash(&prompt.text);
        let raw = self
            .outputs
            .get(&hash)
            .or(self.default_output.as_ref())
            .ok_or_else(|| BackendError::MissingFixture {
                backend: self.name.clone(),
                hash,
            })?;
        let output = truncate_tokens(raw, prompt.max_output_tokens);
        Ok(Completion {
            output_tokens: count_tokens(&output),
            prompt_tokens: count_tokens(&prompt.text),
            output,
        })
    }
}
