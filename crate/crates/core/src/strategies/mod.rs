//! Budget-aware ranking procedures.
//!
//! Every procedure takes the list produced so far (the retriever order for a
//! single-stage run), spends from the ledger while calls are affordable and
//! returns a permutation of the same ids. Running out of budget is normal
//! termination: whatever was not reached keeps its incoming position.

mod listwise;
mod pairwise;
mod pointwise;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::backends::{Backend, RequestContext};
use crate::budget::{call_cost, CostRecord, Ledger};
use crate::error::{Error, Result};
use crate::prompts::{PromptRecord, Templates};
use crate::types::{Provenance, RankedList, RankingTask};

pub use listwise::ListwiseParams;
pub use pairwise::PairwiseParams;
pub use pointwise::BinaryLabels;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Binary,
    Likert,
    BUpr,
    BPrp,
    Listwise,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Binary,
        StrategyKind::Likert,
        StrategyKind::BUpr,
        StrategyKind::BPrp,
        StrategyKind::Listwise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Binary => "binary",
            StrategyKind::Likert => "likert",
            StrategyKind::BUpr => "b_upr",
            StrategyKind::BPrp => "b_prp",
            StrategyKind::Listwise => "listwise",
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

/// What came back from one attempted call.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum CallOutcome {
    /// The ledger refused the reservation; nothing was sent.
    Unaffordable,
    /// The backend failed; see [`Backend::bills_failures`] for charging.
    Failed,
    Answered(String),
}

/// A task, its backend and the prompt wording, bound together for one stage.
pub struct Stage<'a> {
    pub task: &'a RankingTask,
    pub backend: &'a dyn Backend,
    pub templates: &'a Templates,
}

impl<'a> Stage<'a> {
    pub fn new(task: &'a RankingTask, backend: &'a dyn Backend, templates: &'a Templates) -> Self {
        Self {
            task,
            backend,
            templates,
        }
    }

    /// Upper bound on what `prompt` can cost: full prompt plus the output cap.
    pub fn estimate(&self, prompt: &PromptRecord) -> f64 {
        call_cost(prompt.prompt_tokens, prompt.max_output_tokens, self.backend.pricing())
    }

    pub(crate) fn call(&self, ledger: &mut Ledger, prompt: &PromptRecord) -> CallOutcome {
        let Ok(permit) = ledger.try_charge(self.estimate(prompt)) else {
            return CallOutcome::Unaffordable;
        };
        let ctx = RequestContext {
            query_id: &self.task.query_id,
            query_text: &self.task.query_text,
            ordinal: ledger.records().len(),
        };
        let pricing = self.backend.pricing();
        match self.backend.complete(&ctx, prompt) {
            Ok(c) => {
                let record = CostRecord::new(
                    c.prompt_tokens,
                    c.output_tokens,
                    pricing,
                    self.backend.name(),
                    ledger.stage(),
                );
                ledger.settle(permit, record);
                CallOutcome::Answered(c.output)
            }
            Err(e) => {
                log::warn!("query {}: {e}", self.task.query_id);
                if self.backend.bills_failures() {
                    let record = CostRecord::new(prompt.prompt_tokens, 0, pricing, self.backend.name(), ledger.stage());
                    ledger.settle(permit, record);
                } else {
                    ledger.release(permit);
                }
                CallOutcome::Failed
            }
        }
    }
}

/// Mutable ordering as passage indices, with provenance tracked per passage.
#[derive(Debug, Clone)]
pub(crate) struct Working {
    pub order: Vec<usize>,
    pub tags: Vec<Provenance>,
}

impl Working {
    pub fn from_list(task: &RankingTask, list: &RankedList) -> Result<Self> {
        if list.len() != task.len() || list.query_id != task.query_id {
            return Err(Error::NotAPermutation(format!(
                "list for query {} does not match task {}",
                list.query_id, task.query_id
            )));
        }
        let index = task.index_of();
        let mut tags = vec![Provenance::Unprocessed; task.len()];
        let mut order = Vec::with_capacity(task.len());
        let mut seen = vec![false; task.len()];
        for (id, tag) in list.iter() {
            let i = *index
                .get(id)
                .ok_or_else(|| Error::NotAPermutation(format!("unknown id {id}")))?;
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::NotAPermutation(format!("id {id} repeated")));
            }
            tags[i] = tag;
            order.push(i);
        }
        Ok(Self { order, tags })
    }

    pub fn mark(&mut self, passage: usize, tag: Provenance) {
        self.tags[passage] = self.tags[passage].merge(tag);
    }

    pub fn into_list(self, task: &RankingTask) -> RankedList {
        let ps = task.passages();
        let ordering = self.order.iter().map(|&i| ps[i].id.clone()).collect();
        let provenance = self.order.iter().map(|&i| self.tags[i]).collect();
        RankedList::from_parts(task.query_id.clone(), ordering, provenance)
    }
}

/// Parameters a stage may carry, keyed by strategy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyParams {
    /// B-PRP depth; defaults to 10.
    pub k: Option<usize>,
    /// Listwise window; defaults to 20.
    pub window: Option<usize>,
    /// Listwise step; defaults to 10.
    pub step: Option<usize>,
}

impl StrategyParams {
    pub fn pairwise(&self) -> Result<PairwiseParams> {
        PairwiseParams::new(self.k.unwrap_or(PairwiseParams::DEFAULT_K))
    }

    pub fn listwise(&self) -> Result<ListwiseParams> {
        ListwiseParams::new(
            self.window.unwrap_or(ListwiseParams::DEFAULT_WINDOW),
            self.step.unwrap_or(ListwiseParams::DEFAULT_STEP),
        )
    }
}

impl Stage<'_> {
    /// Runs any strategy by kind. `prior` answers (from a routing probe) are
    /// only consulted by the binary strategy.
    pub fn run(
        &self,
        kind: StrategyKind,
        params: &StrategyParams,
        input: &RankedList,
        ledger: &mut Ledger,
        prior: &BinaryLabels,
    ) -> Result<RankedList> {
        match kind {
            StrategyKind::Binary => self.binary(input, ledger, prior),
            StrategyKind::Likert => self.likert(input, ledger),
            StrategyKind::BUpr => self.b_upr(input, ledger),
            StrategyKind::BPrp => self.b_prp(input, ledger, params.pairwise()?),
            StrategyKind::Listwise => self.listwise(input, ledger, params.listwise()?),
        }
    }
}

pub fn rank_binary(task: &RankingTask, backend: &dyn Backend, ledger: &mut Ledger) -> RankedList {
    let t = Templates::default();
    Stage::new(task, backend, &t)
        .binary(&task.initial_ranking(), ledger, &HashMap::new())
        .expect("initial ranking always matches its task")
}

pub fn rank_likert(task: &RankingTask, backend: &dyn Backend, ledger: &mut Ledger) -> RankedList {
    let t = Templates::default();
    Stage::new(task, backend, &t)
        .likert(&task.initial_ranking(), ledger)
        .expect("initial ranking always matches its task")
}

pub fn rank_b_upr(task: &RankingTask, backend: &dyn Backend, ledger: &mut Ledger) -> RankedList {
    let t = Templates::default();
    Stage::new(task, backend, &t)
        .b_upr(&task.initial_ranking(), ledger)
        .expect("initial ranking always matches its task")
}

pub fn rank_b_prp(
    task: &RankingTask,
    backend: &dyn Backend,
    ledger: &mut Ledger,
    params: PairwiseParams,
) -> RankedList {
    let t = Templates::default();
    Stage::new(task, backend, &t)
        .b_prp(&task.initial_ranking(), ledger, params)
        .expect("initial ranking always matches its task")
}

pub fn rank_listwise(
    task: &RankingTask,
    backend: &dyn Backend,
    ledger: &mut Ledger,
    params: ListwiseParams,
) -> RankedList {
    let t = Templates::default();
    Stage::new(task, backend, &t)
        .listwise(&task.initial_ranking(), ledger, params)
        .expect("initial ranking always matches its task")
}
