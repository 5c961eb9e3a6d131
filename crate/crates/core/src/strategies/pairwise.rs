use super::{CallOutcome, Stage, Working};
use crate::budget::{call_cost, Ledger};
use crate::error::{Error, Result};
use crate::prompts::{parse_pairwise, render_pairwise, template_overhead, PairwiseAnswer, PAIRWISE_OUTPUT_CAP};
use crate::textproc::count_tokens;
use crate::types::{Provenance, RankedList};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairwiseParams {
    /// Deepest position a pass starts from.
    pub k: usize,
}

impl PairwiseParams {
    pub const DEFAULT_K: usize = 10;

    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("pairwise k must be >= 1".into()));
        }
        Ok(Self { k })
    }
}

impl Default for PairwiseParams {
    fn default() -> Self {
        Self { k: Self::DEFAULT_K }
    }
}

impl Stage<'_> {
    /// Cost of an average comparison for this task, used to size passes.
    pub fn mean_comparison_cost(&self) -> f64 {
        let ps = self.task.passages();
        if ps.is_empty() {
            return 0.0;
        }
        let mean = ps.iter().map(|p| count_tokens(&p.text)).sum::<usize>() as f64 / ps.len() as f64;
        let tokens = template_overhead(&self.templates.pairwise) as f64
            + count_tokens(&self.task.query_text) as f64
            + 2.0 * mean;
        let pricing = self.backend.pricing();
        pricing.c_p * tokens + call_cost(0, PAIRWISE_OUTPUT_CAP, pricing)
    }

    /// Budgeted bubble passes. Each pass sizes itself from the comparisons
    /// still affordable (`tau`), starts at `min(k, tau, N-1)` and walks up to
    /// the top swapping adjacent pairs the backend says are out of order.
    /// Passes repeat until nothing is affordable or a pass makes no swap
    /// (at most N passes).
    pub fn b_prp(&self, input: &RankedList, ledger: &mut Ledger, params: PairwiseParams) -> Result<RankedList> {
        let mut w = Working::from_list(self.task, input)?;
        let n = w.order.len();
        let ps = self.task.passages();
        let per_call = self.mean_comparison_cost();
        // N passes settle any consistent comparator; the bound only bites
        // for free backends or noisy answers under a huge budget.
        'passes: for _ in 0..n {
            let tau = if per_call > 0.0 {
                (ledger.remaining() / per_call).floor() as usize
            } else {
                usize::MAX
            };
            let start = params.k.min(tau).min(n.saturating_sub(1));
            if start == 0 {
                break;
            }
            let mut swapped = false;
            for i in (1..=start).rev() {
                let (upper, lower) = (w.order[i - 1], w.order[i]);
                let prompt = render_pairwise(self.templates, &self.task.query_text, &ps[upper], &ps[lower]);
                match self.call(ledger, &prompt) {
                    CallOutcome::Unaffordable => break 'passes,
                    CallOutcome::Failed => {
                        w.mark(upper, Provenance::Fallback);
                        w.mark(lower, Provenance::Fallback);
                    }
                    CallOutcome::Answered(out) => match parse_pairwise(&out) {
                        PairwiseAnswer::B => {
                            w.order.swap(i - 1, i);
                            swapped = true;
                            w.mark(upper, Provenance::Processed);
                            w.mark(lower, Provenance::Processed);
                        }
                        PairwiseAnswer::A => {
                            w.mark(upper, Provenance::Processed);
                            w.mark(lower, Provenance::Processed);
                        }
                        PairwiseAnswer::Unparseable => {
                            w.mark(upper, Provenance::Fallback);
                            w.mark(lower, Provenance::Fallback);
                        }
                    },
                }
            }
            if !swapped {
                break;
            }
        }
        Ok(w.into_list(self.task))
    }
}
