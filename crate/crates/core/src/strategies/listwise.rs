use super::{CallOutcome, Stage, Working};
use crate::budget::Ledger;
use crate::error::{Error, Result};
use crate::prompts::{parse_listwise, render_listwise};
use crate::types::{Provenance, RankedList};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ListwiseParams {
    pub window: usize,
    pub step: usize,
}

impl ListwiseParams {
    pub const DEFAULT_WINDOW: usize = 20;
    pub const DEFAULT_STEP: usize = 10;

    pub fn new(window: usize, step: usize) -> Result<Self> {
        if step == 0 || step > window {
            return Err(Error::Config(format!(
                "listwise needs 1 <= step <= window, got window {window}, step {step}"
            )));
        }
        Ok(Self { window, step })
    }
}

impl Default for ListwiseParams {
    fn default() -> Self {
        Self {
            window: Self::DEFAULT_WINDOW,
            step: Self::DEFAULT_STEP,
        }
    }
}

/// Window start positions, back of the list first. The last window always
/// starts at 0.
pub(crate) fn window_starts(n: usize, window: usize, step: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let window = window.min(n);
    let mut starts = Vec::new();
    let mut s = n - window;
    loop {
        starts.push(s);
        if s == 0 {
            break;
        }
        s = s.saturating_sub(step);
    }
    starts
}

impl Stage<'_> {
    /// Sliding-window permutation prompting, from the bottom of the list up.
    /// A window that is unaffordable or answered with an invalid permutation
    /// keeps its slice as it was; later (cheaper) windows may still run.
    pub fn listwise(&self, input: &RankedList, ledger: &mut Ledger, params: ListwiseParams) -> Result<RankedList> {
        let mut w = Working::from_list(self.task, input)?;
        let n = w.order.len();
        let width = params.window.min(n);
        let ps = self.task.passages();
        for start in window_starts(n, params.window, params.step) {
            let slice: Vec<usize> = w.order[start..start + width].to_vec();
            let window: Vec<_> = slice.iter().map(|&i| &ps[i]).collect();
            let prompt = render_listwise(self.templates, &self.task.query_text, &window);
            match self.call(ledger, &prompt) {
                CallOutcome::Unaffordable => continue,
                CallOutcome::Failed => slice.iter().for_each(|&i| w.mark(i, Provenance::Fallback)),
                CallOutcome::Answered(out) => match parse_listwise(&out, width) {
                    Some(perm) => {
                        for (slot, id) in perm.iter().enumerate() {
                            w.order[start + slot] = slice[id - 1];
                        }
                        slice.iter().for_each(|&i| w.mark(i, Provenance::Processed));
                    }
                    None => slice.iter().for_each(|&i| w.mark(i, Provenance::Fallback)),
                },
            }
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
    use crate::strategies::rank_listwise;

    #[test]
    fn starts_back_to_front() {
        assert_eq!(window_starts(4, 2, 1), vec![2, 1, 0]);
        assert_eq!(window_starts(50, 20, 10), vec![30, 20, 10, 0]);
        assert_eq!(window_starts(25, 20, 10), vec![5, 0]);
        assert_eq!(window_starts(5, 20, 10), vec![0]);
        assert_eq!(window_starts(0, 2, 1), Vec::<usize>::new());
    }

    #[test]
    fn gold_climbs_through_windows() {
        let task = task(4, &[4]);
        let mut ledger = Ledger::new(1e9);
        let out = rank_listwise(&task, &oracle(&task), &mut ledger, ListwiseParams::new(2, 1).unwrap());
        assert_eq!(ids(&out), ["p4", "p1", "p2", "p3"]);
        assert_eq!(ledger.records().len(), 3);
    }

    #[test]
    fn no_budget_is_identity() {
        let task = task(6, &[6]);
        let mut ledger = Ledger::new(0.0);
        let out = rank_listwise(&task, &oracle(&task), &mut ledger, ListwiseParams::new(3, 2).unwrap());
        assert_eq!(out, task.initial_ranking());
    }

    #[test]
    fn unparseable_windows_keep_order() {
        let task = task(6, &[6]);
        let b = ScriptedBackend::new("s", Pricing::per_token(1.0).unwrap()).with_default("[1] > [1]");
        let mut ledger = Ledger::new(1e9);
        let out = rank_listwise(&task, &b, &mut ledger, ListwiseParams::new(3, 2).unwrap());
        assert_eq!(out.ordering(), task.initial_ranking().ordering());
    }

    #[test]
    fn params_validated() {
        assert!(ListwiseParams::new(3, 0).is_err());
        assert!(ListwiseParams::new(3, 4).is_err());
        assert!(ListwiseParams::new(3, 3).is_ok());
    }
}
