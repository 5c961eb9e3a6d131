//! Shared domain types: passages, ranking tasks, ranked lists and graded judgments.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A candidate passage in a pre-ranked list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
    /// 0-based position in the retriever's ranking.
    pub initial_rank: usize,
    /// Retriever score, when the input carried one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_score: Option<f64>,
}

/// A query together with its pre-ranked candidates.
///
/// Constructed through [`RankingTask::new`], which assigns `initial_rank`
/// from the order the passages are given in, so ranks are always `0..N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingTask {
    pub query_id: String,
    pub query_text: String,
    passages: Vec<Passage>,
    gold: BTreeSet<String>,
}

impl RankingTask {
    /// Builds a task from `(id, text, score)` triples in retriever order.
    pub fn new<I>(
        query_id: impl Into<String>,
        query_text: impl Into<String>,
        passages: I,
        gold: impl IntoIterator<Item = String>,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String, Option<f64>)>,
    {
        let query_id = query_id.into();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (rank, (id, text, score)) in passages.into_iter().enumerate() {
            if text.trim().is_empty() {
                return Err(Error::InvalidTask(format!(
                    "query {query_id}: passage {id} has empty text"
                )));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::InvalidTask(format!(
                    "query {query_id}: duplicate passage id {id}"
                )));
            }
            out.push(Passage {
                id,
                text,
                initial_rank: rank,
                initial_score: score,
            });
        }
        let gold: BTreeSet<String> = gold.into_iter().collect();
        if let Some(stray) = gold.iter().find(|g| !seen.contains(*g)) {
            return Err(Error::InvalidTask(format!(
                "query {query_id}: gold id {stray} is not a candidate passage"
            )));
        }
        Ok(Self {
            query_id,
            query_text: query_text.into(),
            passages: out,
            gold,
        })
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn gold(&self) -> &BTreeSet<String> {
        &self.gold
    }

    pub fn is_gold(&self, id: &str) -> bool {
        self.gold.contains(id)
    }

    /// Replaces the gold set, e.g. after thresholding a fresh qrels file.
    pub fn with_gold(mut self, gold: impl IntoIterator<Item = String>) -> Result<Self> {
        let gold: BTreeSet<String> = gold.into_iter().collect();
        if let Some(stray) = gold.iter().find(|g| !self.passages.iter().any(|p| &p.id == *g)) {
            return Err(Error::InvalidTask(format!(
                "query {}: gold id {stray} is not a candidate passage",
                self.query_id
            )));
        }
        self.gold = gold;
        Ok(self)
    }

    /// The retriever ordering, everything tagged unprocessed.
    pub fn initial_ranking(&self) -> RankedList {
        RankedList {
            query_id: self.query_id.clone(),
            ordering: self.passages.iter().map(|p| p.id.clone()).collect(),
            provenance: vec![Provenance::Unprocessed; self.passages.len()],
        }
    }

    /// Position lookup from passage id to index into [`passages`](Self::passages).
    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.passages
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.as_str(), i))
            .collect()
    }
}

/// How a position in an output list was decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// An LLM answer placed this passage.
    Processed,
    /// No call was made for this passage; it kept its incoming position.
    Unprocessed,
    /// A call was made but its answer could not be used.
    Fallback,
}

impl Provenance {
    /// Combines tags from successive stages; an LLM decision anywhere wins.
    pub fn merge(self, later: Provenance) -> Provenance {
        use Provenance::*;
        match (self, later) {
            (Processed, _) | (_, Processed) => Processed,
            (Fallback, _) | (_, Fallback) => Fallback,
            _ => Unprocessed,
        }
    }
}

/// An output ordering of a task's passage ids, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    ordering: Vec<String>,
    provenance: Vec<Provenance>,
}

impl RankedList {
    /// Validates that `ordering` is a permutation of the task's passage ids.
    pub fn new(task: &RankingTask, ordering: Vec<String>, provenance: Vec<Provenance>) -> Result<Self> {
        if ordering.len() != provenance.len() {
            return Err(Error::NotAPermutation(format!(
                "query {}: {} ids but {} provenance tags",
                task.query_id,
                ordering.len(),
                provenance.len()
            )));
        }
        check_permutation(task, &ordering)?;
        Ok(Self {
            query_id: task.query_id.clone(),
            ordering,
            provenance,
        })
    }

    /// Builds a list from ids alone; every position is tagged unprocessed.
    pub fn from_ids(task: &RankingTask, ordering: Vec<String>) -> Result<Self> {
        let n = ordering.len();
        Self::new(task, ordering, vec![Provenance::Unprocessed; n])
    }

    pub fn ordering(&self) -> &[String] {
        &self.ordering
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.ordering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordering.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Provenance)> {
        self.ordering
            .iter()
            .map(String::as_str)
            .zip(self.provenance.iter().copied())
    }

    /// Unchecked constructor for strategies that only ever permute a valid list.
    pub(crate) fn from_parts(query_id: String, ordering: Vec<String>, provenance: Vec<Provenance>) -> Self {
        debug_assert_eq!(ordering.len(), provenance.len());
        Self {
            query_id,
            ordering,
            provenance,
        }
    }
}

fn check_permutation(task: &RankingTask, ordering: &[String]) -> Result<()> {
    if ordering.len() != task.len() {
        return Err(Error::NotAPermutation(format!(
            "query {}: expected {} ids, got {}",
            task.query_id,
            task.len(),
            ordering.len()
        )));
    }
    let index = task.index_of();
    let mut seen = vec![false; task.len()];
    for id in ordering {
        match index.get(id.as_str()) {
            Some(&i) if !seen[i] => seen[i] = true,
            Some(_) => {
                return Err(Error::NotAPermutation(format!(
                    "query {}: id {id} appears twice",
                    task.query_id
                )))
            }
            None => {
                return Err(Error::NotAPermutation(format!(
                    "query {}: unknown id {id}",
                    task.query_id
                )))
            }
        }
    }
    Ok(())
}

/// Graded judgments: query id → passage id → grade.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelevanceJudgments {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
}

impl RelevanceJudgments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, passage_id: impl Into<String>, grade: u32) {
        self.grades
            .entry(query_id.into())
            .or_default()
            .insert(passage_id.into(), grade);
    }

    /// Missing entries grade as 0.
    pub fn grade(&self, query_id: &str, passage_id: &str) -> u32 {
        self.grades
            .get(query_id)
            .and_then(|m| m.get(passage_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn queries(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, u32>)> {
        self.grades.iter().map(|(q, m)| (q.as_str(), m))
    }

    /// Binary grade 1 for every gold passage of every task.
    pub fn from_tasks<'a>(tasks: impl IntoIterator<Item = &'a RankingTask>) -> Self {
        let mut j = Self::new();
        for t in tasks {
            for g in t.gold() {
                j.insert(t.query_id.clone(), g.clone(), 1);
            }
        }
        j
    }
}

/// Per-query relevant sets: ids whose grade is at least `threshold`.
pub fn binarize_judgments(judgments: &RelevanceJudgments, threshold: u32) -> BTreeMap<String, BTreeSet<String>> {
    judgments
        .queries()
        .map(|(q, grades)| {
            let gold = grades
                .iter()
                .filter(|(_, &g)| g >= threshold)
                .map(|(id, _)| id.clone())
                .collect();
            (q.to_string(), gold)
        })
        .collect()
}
