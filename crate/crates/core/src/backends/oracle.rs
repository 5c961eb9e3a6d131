use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, Completion, RequestContext};
use crate::budget::Pricing;
use crate::error::{Error, Result};
use crate::prompts::{format_listwise, BinaryAnswer, LikertAnswer, PairwiseAnswer, PromptKind, PromptRecord};
use crate::textproc::{count_tokens, truncate_tokens};
use crate::types::RelevanceJudgments;

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub judgments: Arc<RelevanceJudgments>,
    pub accuracy: f64,
    pub seed: u64,
    /// Grades at or above this count as relevant for yes/no style answers.
    pub relevance_threshold: u32,
}

impl OracleConfig {
    pub fn new(judgments: Arc<RelevanceJudgments>, accuracy: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::Config(format!("oracle accuracy {accuracy} outside [0, 1]")));
        }
        Ok(Self {
            judgments,
            accuracy,
            seed,
            relevance_threshold: 1,
        })
    }

    pub fn perfect(judgments: Arc<RelevanceJudgments>) -> Self {
        Self::new(judgments, 1.0, 0).expect("1.0 is a valid accuracy")
    }

    pub fn with_relevance_threshold(mut self, threshold: u32) -> Self {
        self.relevance_threshold = threshold.max(1);
        self
    }
}

/// Everything a noisy draw is keyed on. Identical keys give identical draws
/// regardless of which thread asks or in what order.
#[derive(Debug, Clone, Copy)]
pub struct DrawKey<'a> {
    pub kind: PromptKind,
    pub query_id: &'a str,
    pub passage_ids: &'a [String],
    pub ordinal: usize,
}

impl DrawKey<'_> {
    fn rng(&self, seed: u64) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(format!("{:?}", self.kind).as_bytes());
        h.update([0]);
        h.update(self.query_id.as_bytes());
        for id in self.passage_ids {
            h.update([0]);
            h.update(id.as_bytes());
        }
        h.update([0]);
        h.update((self.ordinal as u64).to_le_bytes());
        let digest = h.finalize();
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&digest[..32]);
        ChaCha8Rng::from_seed(bytes)
    }
}

/// Returns `correct` with probability `accuracy`, otherwise a uniform pick
/// from `alternatives` (or `correct` when there are none).
pub fn noisy_answer<T: Clone>(config: &OracleConfig, key: &DrawKey<'_>, correct: T, alternatives: &[T]) -> T {
    if config.accuracy >= 1.0 || alternatives.is_empty() {
        return correct;
    }
    let mut rng = key.rng(config.seed);
    if rng.random::<f64>() < config.accuracy {
        correct
    } else {
        alternatives[rng.random_range(0..alternatives.len())].clone()
    }
}

/// Judgment-driven simulated LLM.
///
/// Pairwise ties (equal grades) go to passage A, which the strategies always
/// fill with the passage currently ranked higher.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    name: String,
    pricing: Pricing,
    config: OracleConfig,
}

impl OracleBackend {
    pub fn new(name: impl Into<String>, pricing: Pricing, config: OracleConfig) -> Self {
        Self {
            name: name.into(),
            pricing,
            config,
        }
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    fn grade(&self, query_id: &str, passage_id: &str) -> u32 {
        self.config.judgments.grade(query_id, passage_id)
    }

    fn answer(&self, ctx: &RequestContext<'_>, prompt: &PromptRecord) -> String {
        let key = DrawKey {
            kind: prompt.kind,
            query_id: ctx.query_id,
            passage_ids: &prompt.passage_ids,
            ordinal: ctx.ordinal,
        };
        let threshold = self.config.relevance_threshold;
        let ids = &prompt.passage_ids;
        match prompt.kind {
            PromptKind::Binary => {
                let correct = if self.grade(ctx.query_id, &ids[0]) >= threshold {
                    BinaryAnswer::Yes
                } else {
                    BinaryAnswer::No
                };
                let flipped = match correct {
                    BinaryAnswer::Yes => BinaryAnswer::No,
                    _ => BinaryAnswer::Yes,
                };
                noisy_answer(&self.config, &key, correct, &[flipped])
                    .canonical()
                    .to_string()
            }
            PromptKind::Likert => {
                use LikertAnswer::*;
                let g = self.grade(ctx.query_id, &ids[0]);
                let correct = if g >= threshold {
                    VeryRelated
                } else if g > 0 {
                    SomewhatRelated
                } else {
                    Unrelated
                };
                let others: Vec<_> = [VeryRelated, SomewhatRelated, Unrelated]
                    .into_iter()
                    .filter(|a| *a != correct)
                    .collect();
                noisy_answer(&self.config, &key, correct, &others)
                    .canonical()
                    .to_string()
            }
            PromptKind::QueryGen => {
                // A relevant passage "regenerates" the query; anything else
                // yields text unrelated to it.
                let relevant = self.grade(ctx.query_id, &ids[0]) >= threshold;
                let correct = noisy_answer(&self.config, &key, relevant, &[!relevant]);
                if correct {
                    ctx.query_text.to_string()
                } else {
                    format!("what is passage {}", ids[0])
                }
            }
            PromptKind::Pairwise => {
                let (ga, gb) = (self.grade(ctx.query_id, &ids[0]), self.grade(ctx.query_id, &ids[1]));
                let correct = if gb > ga { PairwiseAnswer::B } else { PairwiseAnswer::A };
                let other = match correct {
                    PairwiseAnswer::A => PairwiseAnswer::B,
                    _ => PairwiseAnswer::A,
                };
                noisy_answer(&self.config, &key, correct, &[other])
                    .canonical()
                    .to_string()
            }
            PromptKind::Listwise => {
                let mut correct: Vec<usize> = (1..=ids.len()).collect();
                // stable: equal grades keep window order
                correct.sort_by_key(|&i| std::cmp::Reverse(self.grade(ctx.query_id, &ids[i - 1])));
                let perm = if self.config.accuracy >= 1.0 {
                    correct
                } else {
                    let mut rng = key.rng(self.config.seed);
                    if rng.random::<f64>() < self.config.accuracy {
                        correct
                    } else {
                        let mut p: Vec<usize> = (1..=ids.len()).collect();
                        p.shuffle(&mut rng);
                        p
                    }
                };
                format_listwise(&perm)
            }
        }
    }
}

impl Backend for OracleBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn pricing(&self) -> &Pricing {
        &self.pricing
    }

    fn complete(&self, ctx: &RequestContext<'_>, prompt: &PromptRecord) -> Result<Completion, BackendError> {
        let output = truncate_tokens(&self.answer(ctx, prompt), prompt.max_output_tokens);
        Ok(Completion {
            output_tokens: count_tokens(&output),
            prompt_tokens: count_tokens(&prompt.text),
            output,
        })
    }
}
