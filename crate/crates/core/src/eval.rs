//! Reciprocal rank, hit-rate recall and corpus aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cut-offs reported by default.
pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];

/// `1 / r` for the 1-based position `r` of the first gold id, else 0.
pub fn reciprocal_rank<S: AsRef<str>>(ranked: &[S], gold: &BTreeSet<String>) -> f64 {
    ranked
        .iter()
        .position(|id| gold.contains(id.as_ref()))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

/// 1 if any gold id is in the top `k`, else 0.
pub fn recall_at_k<S: AsRef<str>>(ranked: &[S], gold: &BTreeSet<String>, k: usize) -> f64 {
    let hit = ranked.iter().take(k).any(|id| gold.contains(id.as_ref()));
    if hit {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub query_id: String,
    pub reciprocal_rank: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub spend: f64,
}

impl QueryEval {
    pub fn new<S: AsRef<str>>(
        query_id: impl Into<String>,
        ranked: &[S],
        gold: &BTreeSet<String>,
        ks: &[usize],
        spend: f64,
    ) -> Self {
        Self {
            query_id: query_id.into(),
            reciprocal_rank: reciprocal_rank(ranked, gold),
            recall_at: ks.iter().map(|&k| (k, recall_at_k(ranked, gold, k))).collect(),
            spend,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_query: Vec<QueryEval>,
    pub mrr: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub query_count: usize,
    pub total_spend: f64,
    pub mean_spend: f64,
    pub max_spend: f64,
}

impl EvalReport {
    /// Standard error of the mean reciprocal rank.
    pub fn mrr_standard_error(&self) -> f64 {
        let n = self.per_query.len();
        if n < 2 {
            return 0.0;
        }
        let var = self
            .per_query
            .iter()
            .map(|q| (q.reciprocal_rank - self.mrr).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        (var / n as f64).sqrt()
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_at.get(&k).copied()
    }
}

/// Means over queries; every query counts, including ones without gold.
pub fn aggregate(per_query: Vec<QueryEval>) -> Result<EvalReport> {
    if per_query.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = per_query.len() as f64;
    let mrr = per_query.iter().map(|q| q.reciprocal_rank).sum::<f64>() / n;
    let mut recall_at: BTreeMap<usize, f64> = BTreeMap::new();
    for q in &per_query {
        for (k, v) in &q.recall_at {
            *recall_at.entry(*k).or_insert(0.0) += v;
        }
    }
    for v in recall_at.values_mut() {
        *v /= n;
    }
    let total_spend: f64 = per_query.iter().map(|q| q.spend).sum();
    let max_spend = per_query.iter().map(|q| q.spend).fold(0.0, f64::max);
    Ok(EvalReport {
        query_count: per_query.len(),
        mrr,
        recall_at,
        total_spend,
        mean_spend: total_spend / n,
        max_spend,
        per_query,
    })
}

/// Aligned method × metric table, metrics shown as percentages.
pub fn render_table(rows: &[(String, &EvalReport)], ks: &[usize]) -> String {
    let mut header = vec!["Method".to_string(), "MRR".to_string()];
    header.extend(ks.iter().map(|k| format!("R@{k}")));
    header.push("Mean spend".into());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            let mut row = vec![name.clone(), format!("{:.2}", r.mrr * 100.0)];
            row.extend(
                ks.iter()
                    .map(|k| r.recall(*k).map_or("-".into(), |v| format!("{:.2}", v * 100.0))),
            );
            row.push(format!("{:.2}", r.mean_spend));
            row
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            std::iter::once(&header)
                .chain(&body)
                .map(|r| r[c].len())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, row: &[String]| {
        for (c, cell) in row.iter().enumerate() {
            if c == 0 {
                let _ = write!(out, "{cell:<w$}", w = widths[c]);
            } else {
                let _ = write!(out, "  {cell:>w$}", w = widths[c]);
            }
        }
        out.push('\n');
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut out, &rule);
    for row in &body {
        line(&mut out, row);
    }
    out
}
