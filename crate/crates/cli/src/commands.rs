use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use rerank_core::corpus::run_corpus;
use rerank_core::dataio::{load_qrels, load_run, save_jsonl, save_run};
use rerank_core::eval::{aggregate, render_table, EvalReport, QueryEval};
use rerank_core::pipeline::{PipelineConfig, PipelineOutcome, Tier};
use rerank_core::types::binarize_judgments;
use rerank_core::{RankedList, RankingTask, RelevanceJudgments};
use serde::{Deserialize, Serialize};

use crate::config::{Order, Resolved};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpend {
    pub query_id: String,
    pub spent: f64,
    pub calls: usize,
    pub stage_spend: Vec<f64>,
    pub tier: Option<Tier>,
    pub overrun: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpendReport {
    pub budget: f64,
    pub total_spend: f64,
    pub max_spend: f64,
    pub overruns: usize,
    pub queries: Vec<QuerySpend>,
}

impl SpendReport {
    fn new(budget: f64, stages: usize, tasks: &[RankingTask], outcomes: &[PipelineOutcome]) -> Self {
        let queries: Vec<QuerySpend> = tasks
            .iter()
            .zip(outcomes)
            .map(|(t, o)| QuerySpend {
                query_id: t.query_id.clone(),
                spent: o.ledger.spent(),
                calls: o.ledger.records().len(),
                stage_spend: (0..stages).map(|i| o.ledger.stage_spent(i)).collect(),
                tier: o.tier,
                overrun: o.ledger.overrun(),
            })
            .collect();
        Self {
            budget,
            total_spend: queries.iter().map(|q| q.spent).sum(),
            max_spend: queries.iter().map(|q| q.spent).fold(0.0, f64::max),
            overruns: queries.iter().filter(|q| q.overrun).count(),
            queries,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutput {
    pub lists: Vec<RankedList>,
    pub spend: SpendReport,
    pub report: EvalReport,
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let f = File::create(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// Sorts tasks by query id so outputs never depend on input or thread order.
fn sorted(mut tasks: Vec<RankingTask>) -> Vec<RankingTask> {
    tasks.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    tasks
}

fn run_tasks(res: &Resolved, tasks: Vec<RankingTask>) -> CliResult<RerankOutput> {
    let pipeline = res.pipeline()?;
    let tasks = sorted(tasks);
    let judgments = Arc::new(RelevanceJudgments::from_tasks(&tasks));
    let registry = res.registry(&judgments, res.seed)?;
    let run = run_corpus(&tasks, &pipeline, &registry, &res.templates, &res.ks, res.jobs)?;
    let spend = SpendReport::new(pipeline.total_budget, pipeline.stages.len(), &tasks, &run.outcomes);
    let lists = run.outcomes.into_iter().map(|o| o.ranked).collect();
    Ok(RerankOutput {
        lists,
        spend,
        report: run.report,
    })
}

fn write_rerank(res: &Resolved, out: &RerankOutput) -> CliResult<()> {
    create_dir(&res.out)?;
    save_run(&out.lists, res.out.join("run.trec"), "rerank")?;
    write_json(&res.out.join("spend.json"), &out.spend)?;
    write_json(&res.out.join("report.json"), &out.report)?;
    print!("{}", render_table(&[("pipeline".into(), &out.report)], &res.ks));
    println!(
        "queries {}  max spend {:.6}  budget {:.6}  overruns {}",
        out.report.query_count, out.spend.max_spend, out.spend.budget, out.spend.overruns
    );
    Ok(())
}

/// Runs the configured pipeline over the dataset; writes `run.trec`,
/// `spend.json` and `report.json` under the output directory.
pub fn rerank(res: &Resolved) -> CliResult<RerankOutput> {
    let out = run_tasks(res, res.tasks()?)?;
    write_rerank(res, &out)?;
    Ok(out)
}

/// Generates the configured synthetic corpus, saves it as `tasks.jsonl`, then reranks it.
pub fn simulate(res: &Resolved) -> CliResult<RerankOutput> {
    let spec = res
        .raw
        .synthetic
        .as_ref()
        .ok_or_else(|| CliError::config("simulate needs a `synthetic` section"))?;
    let tasks = spec.generate()?;
    create_dir(&res.out)?;
    save_jsonl(&tasks, res.out.join("tasks.jsonl"))?;
    let out = run_tasks(res, tasks)?;
    write_rerank(res, &out)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs<'a> {
    pub run: &'a Path,
    /// Gold from qrels instead of the dataset's task gold.
    pub qrels: Option<&'a Path>,
    pub threshold: u32,
    /// `spend.json` from a rerank run, to report spend alongside quality.
    pub spend: Option<&'a Path>,
}

/// Scores a run file. Queries without a ranking in the run score zero.
pub fn evaluate(res: &Resolved, args: &EvaluateArgs<'_>) -> CliResult<EvalReport> {
    let run = load_run(args.run)?;
    let gold: BTreeMap<String, BTreeSet<String>> = match args.qrels {
        Some(q) => binarize_judgments(&load_qrels(q)?, args.threshold),
        None => res
            .tasks()?
            .into_iter()
            .map(|t| (t.query_id.clone(), t.gold().clone()))
            .collect(),
    };
    let spend: BTreeMap<String, f64> = match args.spend {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::runtime(format!("{}: {e}", p.display())))?;
            let s: SpendReport =
                serde_json::from_str(&text).map_err(|e| CliError::runtime(format!("{}: {e}", p.display())))?;
            s.queries.into_iter().map(|q| (q.query_id, q.spent)).collect()
        }
        None => BTreeMap::new(),
    };
    let empty = Vec::new();
    let per_query = gold
        .iter()
        .map(|(qid, g)| {
            let lines = run.get(qid).unwrap_or_else(|| {
                log::warn!("query {qid} missing from run");
                &empty
            });
            let ids: Vec<&str> = lines.iter().map(|l| l.doc_id.as_str()).collect();
            QueryEval::new(qid, &ids, g, &res.ks, spend.get(qid).copied().unwrap_or(0.0))
        })
        .collect();
    let report = aggregate(per_query)?;
    let label = args
        .run
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    print!("{}", render_table(&[(label, &report)], &res.ks));
    create_dir(&res.out)?;
    write_json(&res.out.join("eval.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub split_x: f64,
    pub split_y: f64,
    pub order: String,
    pub seed: u64,
    pub mrr: f64,
    pub r1: f64,
    pub r10: f64,
    pub mean_spend: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub split_x: f64,
    pub split_y: f64,
    pub order: String,
    pub seeds: usize,
    pub mrr_mean: f64,
    /// Standard error of reciprocal rank pooled over queries and seeds.
    pub mrr_se: f64,
    pub r1_mean: f64,
    pub r10_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

/// Binary filtering on the first tier with `x`, pairwise on the second with `y`.
pub fn sweep_pipeline(res: &Resolved, split: [f64; 2], order: Order, budget: f64) -> CliResult<PipelineConfig> {
    let sw = res.raw.sweep.clone().unwrap_or_default();
    let [x, y] = split;
    if !(0.0..=1.0).contains(&x) || (x + y - 1.0).abs() > 1e-9 {
        return Err(CliError::config(format!(
            "split ({x}, {y}) must be two fractions summing to 1"
        )));
    }
    let (first, second) = match order {
        Order::ExpensiveFirst => (&sw.expensive, &sw.cheap),
        Order::CheapFirst => (&sw.cheap, &sw.expensive),
    };
    let mut cfg = PipelineConfig::cascade(first, second, budget, x);
    cfg.stages[1].fraction = y;
    if let Some(k) = sw.k {
        cfg.stages[1].params.k = Some(k);
    }
    Ok(cfg)
}

fn recall(r: &EvalReport, k: usize) -> f64 {
    r.recall(k).unwrap_or(f64::NAN)
}

/// Splits × orders × seeds over noisy tiers; writes `sweep.csv` and `sweep_summary.csv`.
pub fn sweep(res: &Resolved) -> CliResult<SweepOutput> {
    let sw = res.raw.sweep.clone().unwrap_or_default();
    if sw.seeds.is_empty() || sw.splits.is_empty() || sw.orders.is_empty() {
        return Err(CliError::config("sweep needs at least one split, order and seed"));
    }
    let budget = res.budget()?;
    let tasks = sorted(res.tasks()?);
    let judgments = Arc::new(RelevanceJudgments::from_tasks(&tasks));
    let mut ks = res.ks.clone();
    for k in [1, 10] {
        if !ks.contains(&k) {
            ks.push(k);
        }
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &split in &sw.splits {
        for &order in &sw.orders {
            let cfg = sweep_pipeline(res, split, order, budget)?;
            let mut pooled: Vec<f64> = Vec::new();
            let mut reports = Vec::new();
            for &seed in &sw.seeds {
                let registry = res.registry(&judgments, seed)?;
                let run = run_corpus(&tasks, &cfg, &registry, &res.templates, &ks, res.jobs)?;
                pooled.extend(run.report.per_query.iter().map(|q| q.reciprocal_rank));
                rows.push(SweepRow {
                    split_x: split[0],
                    split_y: split[1],
                    order: order.as_str().into(),
                    seed,
                    mrr: run.report.mrr,
                    r1: recall(&run.report, 1),
                    r10: recall(&run.report, 10),
                    mean_spend: run.report.mean_spend,
                });
                reports.push(run.report);
            }
            let n = reports.len() as f64;
            let mean = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
            summary.push(SweepSummary {
                split_x: split[0],
                split_y: split[1],
                order: order.as_str().into(),
                seeds: reports.len(),
                mrr_mean: mean(&|r| r.mrr),
                mrr_se: standard_error(&pooled),
                r1_mean: mean(&|r| recall(r, 1)),
                r10_mean: mean(&|r| recall(r, 10)),
            });
        }
    }
    create_dir(&res.out)?;
    write_csv(&res.out.join("sweep.csv"), &rows)?;
    write_csv(&res.out.join("sweep_summary.csv"), &summary)?;
    for s in &summary {
        println!(
            "({:.1}, {:.1}) {:<15} MRR {:.2} ± {:.2}  R@1 {:.2}  R@10 {:.2}",
            s.split_x,
            s.split_y,
            s.order,
            s.mrr_mean * 100.0,
            s.mrr_se * 100.0,
            s.r1_mean * 100.0,
            s.r10_mean * 100.0
        );
    }
    Ok(SweepOutput { rows, summary })
}

/// Sample standard deviation over `sqrt(n)`.
pub fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)
}
