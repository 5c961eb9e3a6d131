//! Cost model, per-query spend ledger and budget splitting.
//!
//! A call costs `c_p * prompt_tokens + c_o * output_tokens + c_f` in whatever
//! unit the pricing table uses. Budgets are expressed in the same unit. The
//! ledger never grants a reservation that could push `spent` above the active
//! cap, so `spent <= budget` holds after every settled call.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on `Σ fractions = 1`.
pub const SPLIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pricing {
    /// Cost per prompt token.
    pub c_p: f64,
    /// Cost per output token.
    pub c_o: f64,
    /// Fixed cost per call.
    #[serde(default)]
    pub c_f: f64,
    #[serde(default = "default_unit")]
    pub unit: String,
}

fn default_unit() -> String {
    "token-equivalents".to_string()
}

impl Pricing {
    pub fn new(c_p: f64, c_o: f64, c_f: f64) -> Result<Self> {
        let p = Self {
            c_p,
            c_o,
            c_f,
            unit: default_unit(),
        };
        p.validate()?;
        Ok(p)
    }

    /// Same price for prompt and output tokens, no fixed fee.
    pub fn per_token(cost: f64) -> Result<Self> {
        Self::new(cost, cost, 0.0)
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = unit.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c_p", self.c_p), ("c_o", self.c_o), ("c_f", self.c_f)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidPricing(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Rough price level used to order backends; prompt tokens dominate every
    /// re-ranking prompt, so this is `c_p`.
    pub fn level(&self) -> f64 {
        self.c_p
    }
}

pub fn call_cost(prompt_tokens: usize, output_tokens: usize, pricing: &Pricing) -> f64 {
    pricing.c_p * prompt_tokens as f64 + pricing.c_o * output_tokens as f64 + pricing.c_f
}

/// Pricing per backend name, as stored in the pricing JSON document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PricingTable(pub BTreeMap<String, Pricing>);

impl PricingTable {
    pub fn from_json(text: &str) -> Result<Self> {
        let t: PricingTable = serde_json::from_str(text)?;
        for (name, p) in &t.0 {
            p.validate()
                .map_err(|e| Error::InvalidPricing(format!("{name}: {e}")))?;
        }
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn get(&self, name: &str) -> Option<&Pricing> {
        self.0.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, pricing: Pricing) {
        self.0.insert(name.into(), pricing);
    }
}

/// One settled call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub prompt_tokens: usize,
    pub output_tokens: usize,
    pub cost: f64,
    pub backend_name: String,
    pub stage_index: usize,
}

impl CostRecord {
    pub fn new(
        prompt_tokens: usize,
        output_tokens: usize,
        pricing: &Pricing,
        backend_name: impl Into<String>,
        stage_index: usize,
    ) -> Self {
        Self {
            prompt_tokens,
            output_tokens,
            cost: call_cost(prompt_tokens, output_tokens, pricing),
            backend_name: backend_name.into(),
            stage_index,
        }
    }
}

/// A granted reservation. Must be handed back via [`Ledger::settle`] or
/// [`Ledger::release`].
#[derive(Debug)]
#[must_use = "a permit holds reserved budget until settled or released"]
pub struct Permit {
    estimated: f64,
}

impl Permit {
    pub fn estimated(&self) -> f64 {
        self.estimated
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Insufficient;

/// Per-query spend tracker with a hard cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    budget: f64,
    spent: f64,
    records: Vec<CostRecord>,
    #[serde(skip)]
    cap: f64,
    #[serde(skip)]
    reserved: f64,
    #[serde(skip)]
    stage: usize,
    /// Set when a backend reported more usage than was reserved.
    #[serde(default)]
    overrun: bool,
}

impl Ledger {
    pub fn new(budget: f64) -> Self {
        let budget = if budget.is_finite() && budget > 0.0 {
            budget
        } else {
            0.0
        };
        Self {
            budget,
            spent: 0.0,
            records: Vec::new(),
            cap: budget,
            reserved: 0.0,
            stage: 0,
            overrun: false,
        }
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn spent(&self) -> f64 {
        self.spent
    }

    pub fn records(&self) -> &[CostRecord] {
        &self.records
    }

    pub fn overrun(&self) -> bool {
        self.overrun
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    /// Budget still available under the active cap.
    pub fn remaining(&self) -> f64 {
        (self.cap - self.spent - self.reserved).max(0.0)
    }

    /// Restricts charging to a cumulative cap for the given stage. The cap is
    /// clamped to the total budget, and anything left unspent by earlier
    /// stages stays available because caps are cumulative.
    pub fn enter_stage(&mut self, stage_index: usize, cumulative_cap: f64) {
        self.stage = stage_index;
        self.cap = cumulative_cap.clamp(0.0, self.budget);
    }

    /// Lifts any stage cap back to the full budget.
    pub fn clear_stage_cap(&mut self) {
        self.cap = self.budget;
    }

    pub fn try_charge(&mut self, estimated: f64) -> Result<Permit, Insufficient> {
        if !(estimated.is_finite() && estimated >= 0.0) {
            return Err(Insufficient);
        }
        if self.spent + self.reserved + estimated <= self.cap {
            self.reserved += estimated;
            Ok(Permit { estimated })
        } else {
            Err(Insufficient)
        }
    }

    /// Converts a reservation into an actual charge.
    pub fn settle(&mut self, permit: Permit, record: CostRecord) {
        self.reserved = (self.reserved - permit.estimated).max(0.0);
        if record.cost > permit.estimated {
            log::warn!(
                "{} reported cost {} above reserved {}",
                record.backend_name,
                record.cost,
                permit.estimated
            );
            self.overrun = true;
        }
        self.spent += record.cost;
        self.records.push(record);
    }

    /// Drops a reservation without charging.
    pub fn release(&mut self, permit: Permit) {
        self.reserved = (self.reserved - permit.estimated).max(0.0);
    }

    /// Spend attributed to one stage.
    pub fn stage_spent(&self, stage_index: usize) -> f64 {
        self.records
            .iter()
            .filter(|r| r.stage_index == stage_index)
            .map(|r| r.cost)
            .sum()
    }
}

/// Fractions of a budget assigned to successive stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BudgetSplit {
    fractions: Vec<f64>,
}

impl BudgetSplit {
    pub fn new(fractions: Vec<f64>) -> Result<Self> {
        if fractions.is_empty() {
            return Err(Error::InvalidSplit("no fractions".into()));
        }
        if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::InvalidSplit(format!("fraction {f} outside [0, 1]")));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > SPLIT_TOLERANCE {
            return Err(Error::InvalidSplit(format!("fractions sum to {sum}, not 1")));
        }
        Ok(Self { fractions })
    }

    pub fn equal(stages: usize) -> Result<Self> {
        if stages == 0 {
            return Err(Error::InvalidSplit("no stages".into()));
        }
        Self::new(vec![1.0 / stages as f64; stages])
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }
}

impl TryFrom<Vec<f64>> for BudgetSplit {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BudgetSplit> for Vec<f64> {
    fn from(s: BudgetSplit) -> Self {
        s.fractions
    }
}

/// `total * fraction` per stage; the last stage absorbs rounding so the parts
/// sum back to `total`.
pub fn split_budget(total: f64, split: &BudgetSplit) -> Result<Vec<f64>> {
    if !(total.is_finite() && total >= 0.0) {
        return Err(Error::InvalidSplit(format!("total budget {total} must be >= 0")));
    }
    let n = split.fractions.len();
    let mut out: Vec<f64> = split.fractions.iter().map(|f| total * f).collect();
    let head: f64 = out[..n - 1].iter().sum();
    out[n - 1] = (total - head).max(0.0);
    Ok(out)
}

/// Integral variant: floor every stage, remainder goes to the last stage.
pub fn split_budget_tokens(total: u64, split: &BudgetSplit) -> Vec<u64> {
    let n = split.fractions.len();
    let mut out: Vec<u64> = split
        .fractions
        .iter()
        .map(|f| (total as f64 * f).floor() as u64)
        .collect();
    let head: u64 = out[..n - 1].iter().sum();
    out[n - 1] = total.saturating_sub(head);
    out
}

/// The three per-question money budgets (in US cents) of the reference setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BudgetCategory {
    B1,
    B2,
    B3,
}

impl BudgetCategory {
    pub const ALL: [BudgetCategory; 3] = [BudgetCategory::B1, BudgetCategory::B2, BudgetCategory::B3];

    pub fn cents(self) -> f64 {
        match self {
            BudgetCategory::B1 => 0.57,
            BudgetCategory::B2 => 0.11,
            BudgetCategory::B3 => 0.05,
        }
    }
}

/// Reference backend prices in cents per token: the 3B model at 20000 tokens
/// for 0.57c, a 3x cheaper sibling and a 10x dearer chat model.
pub fn reference_price_table() -> PricingTable {
    let base = BudgetCategory::B1.cents() / 20_000.0;
    let mut t = PricingTable::default();
    for (name, ratio) in [("t5-xl", 1.0), ("t5-large", 1.0 / 3.0), ("gpt-3.5", 10.0)] {
        let c = base * ratio;
        t.insert(
            name,
            Pricing {
                c_p: c,
                c_o: c,
                c_f: 0.0,
                unit: "USD-cents".into(),
            },
        );
    }
    t
}

/// Converts a money budget into a token allowance per backend.
///
/// The reference backend's allowance is `money / c_p`, rounded to
/// `significant_digits` when given (published budget categories are quoted
/// as round token counts). Every other backend scales that allowance by the
/// price ratio, so a backend three times cheaper gets three times the tokens.
pub fn tokens_for_budget(
    money: f64,
    prices: &PricingTable,
    reference: &str,
    significant_digits: Option<u32>,
) -> Result<BTreeMap<String, u64>> {
    let ref_price = prices
        .get(reference)
        .ok_or_else(|| Error::UnknownBackend(reference.to_string()))?
        .c_p;
    if ref_price <= 0.0 {
        return Err(Error::InvalidPricing(format!("{reference}: c_p must be positive")));
    }
    let mut ref_tokens = money / ref_price;
    if let Some(d) = significant_digits {
        ref_tokens = round_significant(ref_tokens, d);
    }
    prices
        .0
        .iter()
        .map(|(name, p)| {
            if p.c_p <= 0.0 {
                return Err(Error::InvalidPricing(format!("{name}: c_p must be positive")));
            }
            Ok((name.clone(), (ref_tokens * ref_price / p.c_p).round() as u64))
        })
        .collect()
}

fn round_significant(x: f64, digits: u32) -> f64 {
    if x == 0.0 || digits == 0 {
        return x;
    }
    let magnitude = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(digits as i32 - 1 - magnitude);
    (x * scale).round() / scale
}
