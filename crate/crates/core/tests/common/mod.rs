#![allow(dead_code)]

use std::sync::Arc;

use rerank_core::backends::{OracleBackend, OracleConfig, ScriptedBackend, SharedBackend};
use rerank_core::budget::Pricing;
use rerank_core::prompts::{render_binary, render_pairwise, Templates};
use rerank_core::strategies::Stage;
use rerank_core::{RankedList, RankingTask, RelevanceJudgments};

/// `p1..pN` with equal-length bodies, so every prompt of a kind costs the same.
pub fn task(n: usize, gold: &[usize]) -> RankingTask {
    RankingTask::new(
        "q",
        "which passage is gold",
        (1..=n).map(|i| (format!("p{i}"), format!("passage number {i} body"), None)),
        gold.iter().map(|g| format!("p{g}")),
    )
    .unwrap()
}

pub fn oracle(name: &str, task: &RankingTask, price: f64, accuracy: f64, seed: u64) -> SharedBackend {
    let j = Arc::new(RelevanceJudgments::from_tasks([task]));
    Arc::new(OracleBackend::new(
        name,
        Pricing::per_token(price).unwrap(),
        OracleConfig::new(j, accuracy, seed).unwrap(),
    ))
}

pub fn scripted(name: &str, price: f64, output: &str) -> SharedBackend {
    Arc::new(ScriptedBackend::new(name, Pricing::per_token(price).unwrap()).with_default(output))
}

pub fn binary_cost(task: &RankingTask, backend: &SharedBackend) -> f64 {
    let t = Templates::default();
    Stage::new(task, backend.as_ref(), &t).estimate(&render_binary(&t, &task.query_text, &task.passages()[0]))
}

pub fn pairwise_cost(task: &RankingTask, backend: &SharedBackend) -> f64 {
    let t = Templates::default();
    let ps = task.passages();
    Stage::new(task, backend.as_ref(), &t).estimate(&render_pairwise(&t, &task.query_text, &ps[0], &ps[1]))
}

pub fn ids(list: &RankedList) -> Vec<&str> {
    list.ordering().iter().map(String::as_str).collect()
}
