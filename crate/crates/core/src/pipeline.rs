//! Multi-stage orchestration under one per-query budget.
//!
//! A pipeline is an ordered list of stages, each a strategy bound to a backend
//! and a fraction of the budget. Stage `i` may spend up to the cumulative sum
//! of the first `i + 1` stage budgets, so whatever an earlier stage leaves
//! unspent rolls forward. Each stage consumes the previous stage's output as
//! its incoming order.
//!
//! The two-tier cascade (binary filtering on an expensive backend, then
//! pairwise refinement on a cheap one) is the two-stage instance built by
//! [`PipelineConfig::cascade`]. Routers pick a single tier per query before
//! the stages run.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendRegistry, SharedBackend};
use crate::budget::{split_budget, split_budget_tokens, BudgetSplit, Ledger, SPLIT_TOLERANCE};
use crate::error::{Error, Result};
use crate::prompts::{parse_binary, render_binary, BinaryAnswer, Templates};
use crate::strategies::{BinaryLabels, CallOutcome, Stage, StrategyKind, StrategyParams};
use crate::types::{RankedList, RankingTask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub strategy: StrategyKind,
    pub backend: String,
    pub fraction: f64,
    #[serde(default)]
    pub params: StrategyParams,
}

impl StageSpec {
    pub fn new(strategy: StrategyKind, backend: impl Into<String>, fraction: f64) -> Self {
        Self {
            strategy,
            backend: backend.into(),
            fraction,
            params: StrategyParams::default(),
        }
    }

    pub fn with_params(mut self, params: StrategyParams) -> Self {
        self.params = params;
        self
    }
}

/// Top-m probe on the cheap tier; `yes >= t` marks the query difficult.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Auto1Params {
    pub m: usize,
    pub t: usize,
}

impl Default for Auto1Params {
    fn default() -> Self {
        Self { m: 8, t: 4 }
    }
}

impl Auto1Params {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.t == 0 || self.t > self.m {
            return Err(Error::Config(format!(
                "auto1 needs m >= 1 and 1 <= t <= m, got m {} t {}",
                self.m, self.t
            )));
        }
        Ok(())
    }
}

/// Retriever score dispersion below `st` marks the query difficult.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Auto2Params {
    pub st: f64,
}

impl Default for Auto2Params {
    fn default() -> Self {
        Self { st: 1.5 }
    }
}

impl Auto2Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.st.is_finite() && self.st > 0.0) {
            return Err(Error::Config(format!(
                "auto2 threshold st must be > 0, got {}",
                self.st
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Router {
    #[default]
    None,
    Auto1 {
        #[serde(flatten, default)]
        params: Auto1Params,
        expensive: String,
        cheap: String,
    },
    Auto2 {
        #[serde(flatten, default)]
        params: Auto2Params,
        expensive: String,
        cheap: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Expensive,
    Cheap,
}

/// Which structural rules [`PipelineConfig::validate`] enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationFlags {
    /// Reject two consecutive stages with the same strategy.
    pub distinct_consecutive: bool,
    /// Require a repeated strategy to run on an equal or dearer backend.
    pub escalating_repeats: bool,
}

impl Default for ValidationFlags {
    fn default() -> Self {
        Self {
            distinct_consecutive: true,
            escalating_repeats: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub total_budget: f64,
    pub stages: Vec<StageSpec>,
    #[serde(default)]
    pub router: Router,
    #[serde(default)]
    pub validation: ValidationFlags,
}

impl PipelineConfig {
    pub fn new(total_budget: f64, stages: Vec<StageSpec>) -> Self {
        Self {
            total_budget,
            stages,
            router: Router::None,
            validation: ValidationFlags::default(),
        }
    }

    /// Binary filtering on `expensive` with fraction `x`, then full-depth
    /// pairwise on `cheap` with the rest.
    pub fn cascade(expensive: &str, cheap: &str, total_budget: f64, x: f64) -> Self {
        let full_depth = StrategyParams {
            k: Some(usize::MAX),
            ..StrategyParams::default()
        };
        Self::new(
            total_budget,
            vec![
                StageSpec::new(StrategyKind::Binary, expensive, x),
                StageSpec::new(StrategyKind::BPrp, cheap, 1.0 - x).with_params(full_depth),
            ],
        )
    }

    pub fn with_router(mut self, router: Router) -> Self {
        self.router = router;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn split(&self) -> Result<BudgetSplit> {
        BudgetSplit::new(self.stages.iter().map(|s| s.fraction).collect()).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks structure against the registry the pipeline will run with.
    pub fn validate(&self, registry: &BackendRegistry) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("pipeline has no stages".into()));
        }
        if !(self.total_budget.is_finite() && self.total_budget >= 0.0) {
            return Err(Error::Config(format!(
                "total_budget {} must be >= 0",
                self.total_budget
            )));
        }
        let sum: f64 = self.stages.iter().map(|s| s.fraction).sum();
        if (sum - 1.0).abs() > SPLIT_TOLERANCE {
            return Err(Error::Config(format!("stage fractions sum to {sum}, not 1")));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if !(0.0..=1.0).contains(&s.fraction) {
                return Err(Error::Config(format!(
                    "stage {i}: fraction {} outside [0, 1]",
                    s.fraction
                )));
            }
            registry.get(&s.backend)?;
            match s.strategy {
                StrategyKind::BPrp => {
                    s.params.pairwise()?;
                }
                StrategyKind::Listwise => {
                    s.params.listwise()?;
                }
                _ => {}
            }
        }
        if self.validation.distinct_consecutive {
            if let Some(w) = self.stages.windows(2).find(|w| w[0].strategy == w[1].strategy) {
                return Err(Error::Config(format!("consecutive stages both use {}", w[0].strategy)));
            }
        }
        if self.validation.escalating_repeats {
            for (i, later) in self.stages.iter().enumerate() {
                let later_level = registry.get(&later.backend)?.pricing().level();
                for earlier in self.stages[..i].iter().filter(|e| e.strategy == later.strategy) {
                    let earlier_level = registry.get(&earlier.backend)?.pricing().level();
                    if later_level < earlier_level {
                        return Err(Error::Config(format!(
                            "{} repeats on cheaper backend {} after {}",
                            later.strategy, later.backend, earlier.backend
                        )));
                    }
                }
            }
        }
        match &self.router {
            Router::None => {}
            Router::Auto1 {
                params,
                expensive,
                cheap,
            } => {
                params.validate()?;
                registry.get(expensive)?;
                registry.get(cheap)?;
            }
            Router::Auto2 {
                params,
                expensive,
                cheap,
            } => {
                params.validate()?;
                registry.get(expensive)?;
                registry.get(cheap)?;
            }
        }
        Ok(())
    }

    /// Cumulative spending cap per stage; the last equals the total budget.
    pub fn stage_caps(&self) -> Result<Vec<f64>> {
        let split = self.split()?;
        let parts: Vec<f64> = if self.total_budget.fract() == 0.0 && self.total_budget < u64::MAX as f64 {
            split_budget_tokens(self.total_budget as u64, &split)
                .into_iter()
                .map(|t| t as f64)
                .collect()
        } else {
            split_budget(self.total_budget, &split)?
        };
        let mut caps: Vec<f64> = parts
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        if let Some(last) = caps.last_mut() {
            *last = self.total_budget;
        }
        Ok(caps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub ranked: RankedList,
    pub ledger: Ledger,
    /// Set when a router chose the tier.
    pub tier: Option<Tier>,
}

/// Runs every stage for one query.
pub fn run_pipeline(
    task: &RankingTask,
    config: &PipelineConfig,
    registry: &BackendRegistry,
    templates: &Templates,
) -> Result<PipelineOutcome> {
    config.validate(registry)?;
    let caps = config.stage_caps()?;
    let mut ledger = Ledger::new(config.total_budget);
    ledger.enter_stage(0, caps[0]);

    let mut prior = BinaryLabels::new();
    let (tier, forced): (Option<Tier>, Option<&SharedBackend>) = match &config.router {
        Router::None => (None, None),
        Router::Auto1 {
            params,
            expensive,
            cheap,
        } => {
            let cheap_b = registry.get(cheap)?;
            let (labels, yes) = probe(task, cheap_b, templates, &mut ledger, params.m);
            prior = labels;
            let tier = if yes >= params.t { Tier::Expensive } else { Tier::Cheap };
            log::debug!("query {}: auto1 probe {yes} yes -> {tier:?}", task.query_id);
            (
                Some(tier),
                Some(registry.get(if tier == Tier::Expensive { expensive } else { cheap })?),
            )
        }
        Router::Auto2 {
            params,
            expensive,
            cheap,
        } => {
            let tier = if score_dispersion(task)? < params.st {
                Tier::Expensive
            } else {
                Tier::Cheap
            };
            (
                Some(tier),
                Some(registry.get(if tier == Tier::Expensive { expensive } else { cheap })?),
            )
        }
    };

    let mut list = task.initial_ranking();
    let no_prior = BinaryLabels::new();
    for (i, (spec, cap)) in config.stages.iter().zip(&caps).enumerate() {
        ledger.enter_stage(i, *cap);
        let backend = match forced {
            Some(b) => b,
            None => registry.get(&spec.backend)?,
        };
        let stage = Stage::new(task, backend.as_ref(), templates);
        let labels = if i == 0 { &prior } else { &no_prior };
        list = stage.run(spec.strategy, &spec.params, &list, &mut ledger, labels)?;
    }
    ledger.clear_stage_cap();
    Ok(PipelineOutcome {
        ranked: list,
        ledger,
        tier,
    })
}

/// Binary answers for the top `m` passages, charged to the current stage.
fn probe(
    task: &RankingTask,
    backend: &SharedBackend,
    templates: &Templates,
    ledger: &mut Ledger,
    m: usize,
) -> (BinaryLabels, usize) {
    let stage = Stage::new(task, backend.as_ref(), templates);
    let mut labels = BinaryLabels::new();
    for p in task.passages().iter().take(m) {
        let prompt = render_binary(templates, &task.query_text, p);
        let answer = match stage.call(ledger, &prompt) {
            CallOutcome::Unaffordable => break,
            CallOutcome::Failed => BinaryAnswer::Unparseable,
            CallOutcome::Answered(out) => parse_binary(&out),
        };
        labels.insert(p.id.clone(), answer);
    }
    let yes = labels.values().filter(|a| **a == BinaryAnswer::Yes).count();
    (labels, yes)
}

/// Population standard deviation of the retriever scores.
pub fn score_dispersion(task: &RankingTask) -> Result<f64> {
    let scores: Option<Vec<f64>> = task.passages().iter().map(|p| p.initial_score).collect();
    let scores = scores.ok_or_else(|| Error::MissingScores(task.query_id.clone()))?;
    if scores.is_empty() {
        return Err(Error::MissingScores(task.query_id.clone()));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    Ok((scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt())
}

fn pair_registry(expensive: &SharedBackend, cheap: &SharedBackend) -> BackendRegistry {
    let mut r = BackendRegistry::new();
    r.insert(Arc::clone(expensive));
    r.insert(Arc::clone(cheap));
    r
}

/// Binary on `expensive` with fraction `x`, then pairwise over the whole
/// intermediate list on `cheap`.
pub fn two_tier_cascade(
    task: &RankingTask,
    expensive: &SharedBackend,
    cheap: &SharedBackend,
    total_budget: f64,
    x: f64,
) -> Result<PipelineOutcome> {
    let config = PipelineConfig::cascade(expensive.name(), cheap.name(), total_budget, x);
    run_pipeline(task, &config, &pair_registry(expensive, cheap), &Templates::default())
}

/// The same two stages with one backend for both, at an equal split.
pub fn single_tier_cascade(task: &RankingTask, backend: &SharedBackend, total_budget: f64) -> Result<PipelineOutcome> {
    two_tier_cascade(task, backend, backend, total_budget, 0.5)
}

/// Cascade at an equal split, with the tier chosen by a top-m probe.
pub fn route_auto1(
    task: &RankingTask,
    expensive: &SharedBackend,
    cheap: &SharedBackend,
    params: Auto1Params,
    total_budget: f64,
) -> Result<PipelineOutcome> {
    let config =
        PipelineConfig::cascade(expensive.name(), cheap.name(), total_budget, 0.5).with_router(Router::Auto1 {
            params,
            expensive: expensive.name().into(),
            cheap: cheap.name().into(),
        });
    run_pipeline(task, &config, &pair_registry(expensive, cheap), &Templates::default())
}

/// Cascade at an equal split, with the tier chosen by score dispersion.
pub fn route_auto2(
    task: &RankingTask,
    expensive: &SharedBackend,
    cheap: &SharedBackend,
    params: Auto2Params,
    total_budget: f64,
) -> Result<PipelineOutcome> {
    let config =
        PipelineConfig::cascade(expensive.name(), cheap.name(), total_budget, 0.5).with_router(Router::Auto2 {
            params,
            expensive: expensive.name().into(),
            cheap: cheap.name().into(),
        });
    run_pipeline(task, &config, &pair_registry(expensive, cheap), &Templates::default())
}
