use std::collections::HashMap;

use super::{CallOutcome, Stage, Working};
use crate::budget::Ledger;
use crate::error::Result;
use crate::prompts::{
    parse_binary, parse_likert, render_binary, render_likert, render_querygen, BinaryAnswer, LikertAnswer,
};
use crate::textproc::token_f1;
use crate::types::{Provenance, RankedList};

/// Binary answers already obtained for some passages, by passage id.
pub type BinaryLabels = HashMap<String, BinaryAnswer>;

impl Stage<'_> {
    /// Yes/No filtering. Output: Yes group, then everything unanswered or
    /// unparseable, then the No group, each in incoming order.
    pub fn binary(&self, input: &RankedList, ledger: &mut Ledger, prior: &BinaryLabels) -> Result<RankedList> {
        let mut w = Working::from_list(self.task, input)?;
        let ps = self.task.passages();
        let mut labels: HashMap<usize, BinaryAnswer> = HashMap::new();
        let mut exhausted = false;
        for &i in &w.order {
            if let Some(&a) = prior.get(&ps[i].id) {
                labels.insert(i, a);
                continue;
            }
            if exhausted {
                continue;
            }
            let prompt = render_binary(self.templates, &self.task.query_text, &ps[i]);
            match self.call(ledger, &prompt) {
                CallOutcome::Unaffordable => exhausted = true,
                CallOutcome::Failed => {
                    labels.insert(i, BinaryAnswer::Unparseable);
                }
                CallOutcome::Answered(out) => {
                    labels.insert(i, parse_binary(&out));
                }
            }
        }
        for (&i, &a) in &labels {
            w.mark(
                i,
                if a == BinaryAnswer::Unparseable {
                    Provenance::Fallback
                } else {
                    Provenance::Processed
                },
            );
        }
        let tier = |i: &usize| match labels.get(i) {
            Some(BinaryAnswer::Yes) => 0,
            Some(BinaryAnswer::No) => 2,
            _ => 1,
        };
        // stable sort keeps incoming order inside each tier
        w.order.sort_by_key(tier);
        Ok(w.into_list(self.task))
    }

    /// Four tiers: Very, Somewhat, unanswered/unparseable, Unrelated.
    pub fn likert(&self, input: &RankedList, ledger: &mut Ledger) -> Result<RankedList> {
        let mut w = Working::from_list(self.task, input)?;
        let ps = self.task.passages();
        let mut labels: HashMap<usize, LikertAnswer> = HashMap::new();
        for &i in &w.order {
            let prompt = render_likert(self.templates, &self.task.query_text, &ps[i]);
            match self.call(ledger, &prompt) {
                CallOutcome::Unaffordable => break,
                CallOutcome::Failed => {
                    labels.insert(i, LikertAnswer::Unparseable);
                }
                CallOutcome::Answered(out) => {
                    labels.insert(i, parse_likert(&out));
                }
            }
        }
        for (&i, &a) in &labels {
            w.mark(
                i,
                if a == LikertAnswer::Unparseable {
                    Provenance::Fallback
                } else {
                    Provenance::Processed
                },
            );
        }
        w.order.sort_by_key(|i| match labels.get(i) {
            Some(LikertAnswer::VeryRelated) => 0,
            Some(LikertAnswer::SomewhatRelated) => 1,
            Some(LikertAnswer::Unrelated) => 3,
            _ => 2,
        });
        Ok(w.into_list(self.task))
    }

    /// Query generation scored by token F1 against the real query. Only the
    /// processed prefix is re-sorted; later positions are left untouched.
    pub fn b_upr(&self, input: &RankedList, ledger: &mut Ledger) -> Result<RankedList> {
        let mut w = Working::from_list(self.task, input)?;
        let ps = self.task.passages();
        let mut scores: Vec<f64> = Vec::new();
        for pos in 0..w.order.len() {
            let i = w.order[pos];
            let prompt = render_querygen(self.templates, &ps[i]);
            let score = match self.call(ledger, &prompt) {
                CallOutcome::Unaffordable => break,
                CallOutcome::Failed => {
                    w.mark(i, Provenance::Fallback);
                    0.0
                }
                CallOutcome::Answered(out) => {
                    w.mark(i, Provenance::Processed);
                    token_f1(&out, &self.task.query_text)
                }
            };
            scores.push(score);
        }
        let m = scores.len();
        let mut prefix: Vec<(usize, f64)> = w.order[..m].iter().copied().zip(scores).collect();
        prefix.sort_by(|a, b| b.1.total_cmp(&a.1));
        for (slot, (i, _)) in w.order[..m].iter_mut().zip(prefix) {
            *slot = i;
        }
        Ok(w.into_list(self.task))
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::backends::ScriptedBackend;
    use crate::budget::Pricing;
    use crate::prompts::Templates;
    use crate::strategies::{rank_b_upr, rank_binary, rank_likert};
    use crate::types::RankingTask;

    fn binary_cost(task: &RankingTask) -> f64 {
        let t = Templates::default();
        let b = oracle(task);
        Stage::new(task, &b, &t).estimate(&render_binary(&t, &task.query_text, &task.passages()[0]))
    }

    #[test]
    fn binary_three_calls() {
        let task = task(5, &[2]);
        let mut ledger = Ledger::new(3.0 * binary_cost(&task));
        let out = rank_binary(&task, &oracle(&task), &mut ledger);
        assert_eq!(ids(&out), ["p2", "p4", "p5", "p1", "p3"]);
        assert_eq!(ledger.records().len(), 3);
        use Provenance::*;
        assert_eq!(
            out.provenance(),
            &[Processed, Unprocessed, Unprocessed, Processed, Processed]
        );
    }

    #[test]
    fn binary_zero_budget_is_identity() {
        let task = task(5, &[2]);
        let mut ledger = Ledger::new(0.0);
        let out = rank_binary(&task, &oracle(&task), &mut ledger);
        assert_eq!(out, task.initial_ranking());
        assert!(ledger.records().is_empty());
    }

    #[test]
    fn binary_all_no_keeps_order() {
        let task = task(4, &[]);
        let mut ledger = Ledger::new(1e9);
        let out = rank_binary(&task, &oracle(&task), &mut ledger);
        assert_eq!(ids(&out), ["p1", "p2", "p3", "p4"]);
        assert!(out.provenance().iter().all(|p| *p == Provenance::Processed));
    }

    #[test]
    fn binary_unparseable_sits_with_unprocessed() {
        let task = task(3, &[]);
        let b = ScriptedBackend::new("s", Pricing::per_token(1.0).unwrap()).with_default("dunno");
        let mut ledger = Ledger::new(1e9);
        let t = Templates::default();
        // p3 answered No by prior, p1/p2 unparseable
        let prior: BinaryLabels = [("p3".to_string(), BinaryAnswer::No)].into();
        let out = Stage::new(&task, &b, &t)
            .binary(&task.initial_ranking(), &mut ledger, &prior)
            .unwrap();
        assert_eq!(ids(&out), ["p1", "p2", "p3"]);
        assert_eq!(out.provenance()[0], Provenance::Fallback);
        assert_eq!(ledger.records().len(), 2, "prior answers are not re-queried");
    }

    #[test]
    fn binary_prior_yes_lifts_without_charge() {
        let task = task(4, &[]);
        let t = Templates::default();
        let b = oracle(&task);
        let prior: BinaryLabels = [("p4".to_string(), BinaryAnswer::Yes)].into();
        let mut ledger = Ledger::new(0.0);
        let out = Stage::new(&task, &b, &t)
            .binary(&task.initial_ranking(), &mut ledger, &prior)
            .unwrap();
        assert_eq!(ids(&out), ["p4", "p1", "p2", "p3"]);
    }

    #[test]
    fn perfect_oracle_separates_gold() {
        let task = task(9, &[3, 7, 9]);
        let mut ledger = Ledger::new(1e9);
        let out = rank_binary(&task, &oracle(&task), &mut ledger);
        assert_eq!(&ids(&out)[..3], ["p3", "p7", "p9"]);
    }

    #[test]
    fn likert_tiers() {
        // p1 Unrelated, p2 Very, p3 Somewhat, p4 unprocessed
        let task = task(4, &[]);
        let t = Templates::default();
        let render = |i: usize| render_likert(&t, &task.query_text, &task.passages()[i]).text;
        let b = ScriptedBackend::new("s", Pricing::per_token(1.0).unwrap())
            .with_response(&render(0), "Unrelated")
            .with_response(&render(1), "Very related")
            .with_response(&render(2), "Somewhat related");
        let cost = Stage::new(&task, &b, &t).estimate(&render_likert(&t, &task.query_text, &task.passages()[0]));
        let mut ledger = Ledger::new(3.0 * cost);
        let out = Stage::new(&task, &b, &t)
            .likert(&task.initial_ranking(), &mut ledger)
            .unwrap();
        assert_eq!(ids(&out), ["p2", "p3", "p4", "p1"]);
    }

    #[test]
    fn likert_zero_budget_and_all_very() {
        let task = task(4, &[1, 2, 3, 4]);
        let mut ledger = Ledger::new(0.0);
        assert_eq!(rank_likert(&task, &oracle(&task), &mut ledger), task.initial_ranking());
        let mut ledger = Ledger::new(1e9);
        let out = rank_likert(&task, &oracle(&task), &mut ledger);
        assert_eq!(ids(&out), ["p1", "p2", "p3", "p4"]);
    }

    #[test]
    fn b_upr_sorts_prefix_only() {
        // generated queries scoring 0.1, 0.9, 0.5 against the real one
        let task = RankingTask::new(
            "q",
            "a b c d e f g h i j",
            (1..=5).map(|i| (format!("p{i}"), format!("body {i}"), None)),
            Vec::<String>::new(),
        )
        .unwrap();
        let t = Templates::default();
        let render = |i: usize| render_querygen(&t, &task.passages()[i]).text;
        // F1("a x x x x x x x x x", ref) = 0.1; 9 of 10 = 0.9; 5 of 10 = 0.5
        let b = ScriptedBackend::new("s", Pricing::per_token(1.0).unwrap())
            .with_response(&render(0), "a x x x x x x x x x")
            .with_response(&render(1), "a b c d e f g h i x")
            .with_response(&render(2), "a b c d e x x x x x");
        let per_call = Stage::new(&task, &b, &t).estimate(&render_querygen(&t, &task.passages()[0]));
        let mut ledger = Ledger::new(3.0 * per_call);
        let out = rank_b_upr(&task, &b, &mut ledger);
        assert_eq!(ids(&out), ["p2", "p3", "p1", "p4", "p5"]);
    }

    #[test]
    fn b_upr_zero_budget_and_ties() {
        let task = task(4, &[]);
        let mut ledger = Ledger::new(0.0);
        assert_eq!(rank_b_upr(&task, &oracle(&task), &mut ledger), task.initial_ranking());
        // every passage non-gold: identical F1, stable order
        let mut ledger = Ledger::new(1e9);
        let out = rank_b_upr(&task, &oracle(&task), &mut ledger);
        assert_eq!(ids(&out), ["p1", "p2", "p3", "p4"]);
    }

    #[test]
    fn b_upr_oracle_promotes_gold_in_prefix() {
        let task = task(6, &[4]);
        let mut ledger = Ledger::new(1e9);
        let out = rank_b_upr(&task, &oracle(&task), &mut ledger);
        assert_eq!(ids(&out)[0], "p4");
    }

    #[test]
    fn noisy_binary_is_reproducible() {
        let task = task(12, &[5, 9]);
        let run = |seed| {
            let mut ledger = Ledger::new(1e9);
            rank_binary(&task, &noisy(&task, 0.6, seed), &mut ledger)
        };
        assert_eq!(run(3), run(3));
        let seeds_differ = (0..8).any(|s| run(s).ordering() != run(s + 100).ordering());
        assert!(seeds_differ);
    }
}
