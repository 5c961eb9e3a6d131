//! Whitespace tokenization and token-level F1.
//!
//! Token counts here are what the ledger charges for simulated backends, so the
//! rule has to stay deterministic: lowercase, split on Unicode whitespace, no
//! punctuation stripping.

use std::collections::HashMap;

/// Lowercased whitespace tokens; never contains an empty string.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    tokens: Vec<String>,
}

impl TokenSequence {
    pub fn new(text: &str) -> Self {
        Self {
            tokens: text.split_whitespace().map(str::to_lowercase).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    fn counts(&self) -> HashMap<&str, usize> {
        let mut m = HashMap::new();
        for t in &self.tokens {
            *m.entry(t.as_str()).or_insert(0) += 1;
        }
        m
    }
}

pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Keeps at most `max_tokens` whitespace tokens, joined by single spaces.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    text.split_whitespace().take(max_tokens).collect::<Vec<_>>().join(" ")
}

/// Multiset token F1 between a generated and a reference string.
pub fn token_f1(generated: &str, reference: &str) -> f64 {
    let gen = TokenSequence::new(generated);
    let reference = TokenSequence::new(reference);
    if gen.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let gc = gen.counts();
    let rc = reference.counts();
    let overlap: usize = gc
        .iter()
        .map(|(tok, n)| (*n).min(rc.get(tok).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / gen.len() as f64;
    let r = overlap as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}
