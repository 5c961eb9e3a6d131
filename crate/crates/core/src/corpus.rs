//! Per-query fan-out over a corpus. Each query gets its own ledger, so
//! queries are independent and results come back in input order.

use crate::backends::BackendRegistry;
use crate::error::Result;
use crate::eval::{aggregate, EvalReport, QueryEval};
use crate::pipeline::{run_pipeline, PipelineConfig, PipelineOutcome};
use crate::prompts::Templates;
use crate::types::RankingTask;

/// Applies `f` to every item in order on the calling thread.
pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Applies `f` to every item, output order matching input order.
///
/// With the `parallel` feature, runs on a rayon pool of `jobs` threads
/// (`None` uses the global pool); `jobs == Some(1)` stays sequential.
#[cfg(feature = "parallel")]
pub fn map_tasks<T, R, F>(items: &[T], jobs: Option<usize>, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match jobs {
        Some(1) => map_sequential(items, f),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(e) => {
                log::warn!("thread pool of {n} unavailable ({e}); running sequentially");
                map_sequential(items, f)
            }
        },
        None => items.par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_tasks<T, R, F>(items: &[T], _jobs: Option<usize>, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_sequential(items, f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRun {
    pub outcomes: Vec<PipelineOutcome>,
    pub report: EvalReport,
}

/// Runs the pipeline on every task and scores against each task's gold set.
pub fn run_corpus(
    tasks: &[RankingTask],
    config: &PipelineConfig,
    registry: &BackendRegistry,
    templates: &Templates,
    ks: &[usize],
    jobs: Option<usize>,
) -> Result<CorpusRun> {
    config.validate(registry)?;
    let outcomes = map_tasks(tasks, jobs, |t| run_pipeline(t, config, registry, templates))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_outcomes(tasks, &outcomes, ks)?;
    Ok(CorpusRun { outcomes, report })
}

pub fn evaluate_outcomes(tasks: &[RankingTask], outcomes: &[PipelineOutcome], ks: &[usize]) -> Result<EvalReport> {
    aggregate(
        tasks
            .iter()
            .zip(outcomes)
            .map(|(t, o)| QueryEval::new(&t.query_id, o.ranked.ordering(), t.gold(), ks, o.ledger.spent()))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved_at_any_width() {
        let items: Vec<u64> = (0..500).collect();
        let seq = map_sequential(&items, |x| x * x);
        for jobs in [None, Some(1), Some(3)] {
            assert_eq!(map_tasks(&items, jobs, |x| x * x), seq);
        }
    }
}
