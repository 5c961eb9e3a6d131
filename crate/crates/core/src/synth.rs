//! Seeded synthetic corpora for simulations and tests.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::RankingTask;

/// Where the single gold passage lands in the initial ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GoldPlacement {
    Uniform,
    /// Position `i` with probability proportional to `(1 - p)^i`, truncated at N.
    Geometric {
        p: f64,
    },
    Fixed {
        position: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub queries: usize,
    pub passages: usize,
    pub placement: GoldPlacement,
    /// Share of queries with no gold passage at all.
    pub no_gold_fraction: f64,
    /// Inclusive range of passage lengths in tokens.
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            queries: 100,
            passages: 50,
            placement: GoldPlacement::Uniform,
            no_gold_fraction: 0.0,
            min_tokens: 20,
            max_tokens: 40,
            seed: 0,
        }
    }
}

const VOCAB: &[&str] = &[
    "river", "stone", "harbor", "engine", "violet", "market", "signal", "forest", "copper", "lantern", "meadow",
    "circuit", "glacier", "orbit", "quartz", "saddle", "timber", "vessel", "whistle", "canyon", "falcon", "granite",
    "island", "jasmine", "kettle", "ledger", "marble", "nectar", "oyster", "pepper",
];

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.passages == 0 {
            return bad("synthetic corpus needs at least one passage per query".into());
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad(format!(
                "passage length range {}..={} is empty or zero",
                self.min_tokens, self.max_tokens
            ));
        }
        if !(0.0..=1.0).contains(&self.no_gold_fraction) {
            return bad(format!("no_gold_fraction {} outside [0, 1]", self.no_gold_fraction));
        }
        match self.placement {
            GoldPlacement::Geometric { p } if !(p > 0.0 && p <= 1.0) => bad(format!("geometric p {p} outside (0, 1]")),
            GoldPlacement::Fixed { position } if position >= self.passages => bad(format!(
                "fixed gold position {position} beyond {} passages",
                self.passages
            )),
            _ => Ok(()),
        }
    }

    fn gold_position(&self, rng: &mut ChaCha8Rng) -> usize {
        let n = self.passages;
        match self.placement {
            GoldPlacement::Uniform => rng.random_range(0..n),
            GoldPlacement::Fixed { position } => position,
            GoldPlacement::Geometric { p } => {
                let weights: Vec<f64> = (0..n).map(|i| (1.0 - p).powi(i as i32)).collect();
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        return i;
                    }
                    u -= w;
                }
                n - 1
            }
        }
    }

    fn text(&self, rng: &mut ChaCha8Rng) -> String {
        let len = rng.random_range(self.min_tokens..=self.max_tokens);
        (0..len)
            .map(|_| *VOCAB.choose(rng).expect("non-empty vocabulary"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Generates `queries` tasks with ids `q0000..`, passages `q0000-d00..`,
    /// and descending retriever scores. Same spec, same corpus.
    pub fn generate(&self) -> Result<Vec<RankingTask>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.queries)
            .map(|q| {
                let qid = format!("q{q:04}");
                let query = format!("{} {} {}", self.text_word(&mut rng), self.text_word(&mut rng), qid);
                let has_gold = rng.random::<f64>() >= self.no_gold_fraction;
                let gold_pos = self.gold_position(&mut rng);
                let spread = rng.random_range(0.05..3.0);
                let mut score = 30.0;
                let passages: Vec<_> = (0..self.passages)
                    .map(|i| {
                        let id = format!("{qid}-d{i:02}");
                        let text = self.text(&mut rng);
                        let s = score;
                        score -= spread * rng.random::<f64>();
                        (id, text, Some(s))
                    })
                    .collect();
                let gold = if has_gold {
                    vec![passages[gold_pos].0.clone()]
                } else {
                    Vec::new()
                };
                RankingTask::new(qid, query, passages, gold)
            })
            .collect()
    }

    fn text_word(&self, rng: &mut ChaCha8Rng) -> &'static str {
        VOCAB.choose(rng).expect("non-empty vocabulary")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::count_tokens;

    #[test]
    fn deterministic_and_shaped() {
        let spec = SyntheticSpec {
            queries: 20,
            passages: 7,
            seed: 5,
            ..Default::default()
        };
        let a = spec.generate().unwrap();
        assert_eq!(a, spec.generate().unwrap());
        assert_eq!(a.len(), 20);
        for t in &a {
            assert_eq!(t.len(), 7);
            assert_eq!(t.gold().len(), 1);
            for p in t.passages() {
                let n = count_tokens(&p.text);
                assert!((20..=40).contains(&n));
            }
            let scores: Vec<f64> = t.passages().iter().map(|p| p.initial_score.unwrap()).collect();
            assert!(scores.windows(2).all(|w| w[0] >= w[1]));
        }
        let other = SyntheticSpec { seed: 6, ..spec }.generate().unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn fixed_and_no_gold() {
        let spec = SyntheticSpec {
            queries: 10,
            passages: 5,
            placement: GoldPlacement::Fixed { position: 3 },
            ..Default::default()
        };
        for t in spec.generate().unwrap() {
            assert!(t.is_gold(&t.passages()[3].id));
        }
        let none = SyntheticSpec {
            no_gold_fraction: 1.0,
            ..spec
        };
        assert!(none.generate().unwrap().iter().all(|t| t.gold().is_empty()));
    }

    #[test]
    fn geometric_skews_to_top() {
        let spec = SyntheticSpec {
            queries: 2000,
            passages: 50,
            placement: GoldPlacement::Geometric { p: 0.2 },
            min_tokens: 1,
            max_tokens: 1,
            ..Default::default()
        };
        let tasks = spec.generate().unwrap();
        let top5 = tasks
            .iter()
            .filter(|t| t.passages()[..5].iter().any(|p| t.is_gold(&p.id)))
            .count() as f64
            / tasks.len() as f64;
        // 1 - 0.8^5
        assert!((top5 - 0.672).abs() < 0.04, "{top5}");
    }

    #[test]
    fn rejects_bad_specs() {
        let base = SyntheticSpec::default();
        assert!(SyntheticSpec {
            passages: 0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(SyntheticSpec {
            min_tokens: 5,
            max_tokens: 4,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(SyntheticSpec {
            placement: GoldPlacement::Fixed { position: 50 },
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(SyntheticSpec {
            placement: GoldPlacement::Geometric { p: 0.0 },
            ..base
        }
        .validate()
        .is_err());
    }
}
