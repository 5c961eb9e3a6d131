//! Run configuration files and everything resolved from them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::ValueEnum;
use rerank_core::backends::{BackendRegistry, BackendSpec};
use rerank_core::budget::{BudgetCategory, PricingTable};
use rerank_core::dataio::{load_jsonl, load_trec, TrecSources, DEFAULT_RELEVANCE_THRESHOLD};
use rerank_core::eval::DEFAULT_KS;
use rerank_core::pipeline::PipelineConfig;
use rerank_core::prompts::Templates;
use rerank_core::synth::SyntheticSpec;
use rerank_core::{RankingTask, RelevanceJudgments};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Jsonl,
    Trec,
}

/// Either a path to a JSON file (relative to the config file) or the value inline.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// JSONL tasks, or the run file when `format` is `trec`.
    pub path: Option<PathBuf>,
    pub format: Format,
    pub qrels: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub relevance_threshold: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    ExpensiveFirst,
    CheapFirst,
}

impl Order {
    pub fn as_str(self) -> &'static str {
        match self {
            Order::ExpensiveFirst => "expensive_first",
            Order::CheapFirst => "cheap_first",
        }
    }
}

/// The nine stage-1/stage-2 splits from (1, 0) to (0, 1).
pub fn default_splits() -> Vec<[f64; 2]> {
    vec![
        [1.0, 0.0],
        [0.2, 0.8],
        [0.3, 0.7],
        [0.4, 0.6],
        [0.5, 0.5],
        [0.6, 0.4],
        [0.7, 0.3],
        [0.8, 0.2],
        [0.0, 1.0],
    ]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub expensive: String,
    pub cheap: String,
    pub splits: Vec<[f64; 2]>,
    pub orders: Vec<Order>,
    pub seeds: Vec<u64>,
    /// Pairwise depth for stage 2; full list when absent.
    pub k: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            expensive: "expensive".into(),
            cheap: "cheap".into(),
            splits: default_splits(),
            orders: vec![Order::ExpensiveFirst, Order::CheapFirst],
            seeds: (0..5).collect(),
            k: None,
        }
    }
}

/// On-disk run configuration.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: Option<Source<PipelineConfig>>,
    /// Backend name to spec; `pricing` may be omitted when `pricing_file` lists it.
    pub backends: BTreeMap<String, Value>,
    pub pricing_file: Option<PathBuf>,
    pub templates: Option<Source<Templates>>,
    pub data: Option<DataConfig>,
    pub synthetic: Option<SyntheticSpec>,
    /// Per-query budget when no pipeline sets one (sweeps).
    pub budget: Option<f64>,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub ks: Option<Vec<usize>>,
    pub sweep: Option<SweepConfig>,
}

/// A `--budget` value: a number in backend cost units, or a budget category
/// expressed in cents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetArg(pub f64);

impl FromStr for BudgetArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let cat = match s.to_ascii_uppercase().as_str() {
            "B1" => Some(BudgetCategory::B1),
            "B2" => Some(BudgetCategory::B2),
            "B3" => Some(BudgetCategory::B3),
            _ => None,
        };
        if let Some(c) = cat {
            return Ok(BudgetArg(c.cents()));
        }
        let v: f64 = s
            .parse()
            .map_err(|_| format!("`{s}` is neither a number nor B1/B2/B3"))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(format!("budget {v} must be a finite number >= 0"));
        }
        Ok(BudgetArg(v))
    }
}

/// Command-line values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub format: Option<Format>,
    pub budget: Option<f64>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Config with paths resolved and overrides applied.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub base: PathBuf,
    pub raw: RunConfig,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub out: PathBuf,
    pub ks: Vec<usize>,
    pub templates: Templates,
    pub pricing: PricingTable,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

impl Resolved {
    pub fn load(config: Option<&Path>, o: &Overrides) -> CliResult<Self> {
        let (raw, base) = match config {
            Some(p) => (
                read_json::<RunConfig>(p)?,
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (RunConfig::default(), PathBuf::new()),
        };
        Self::from_config(raw, base, o)
    }

    pub fn from_config(mut raw: RunConfig, base: PathBuf, o: &Overrides) -> CliResult<Self> {
        if o.data.is_some() || o.format.is_some() {
            let d = raw.data.get_or_insert_with(DataConfig::default);
            if let Some(p) = &o.data {
                // command-line paths are relative to the working directory
                d.path = Some(std::path::absolute(p).map_err(CliError::runtime)?);
            }
            if let Some(f) = o.format {
                d.format = f;
            }
        }
        let templates = match &raw.templates {
            None => Templates::default(),
            Some(Source::Inline(t)) => t.clone(),
            Some(Source::Path(p)) => read_json(&base.join(p))?,
        };
        templates.validate()?;
        let pricing = match &raw.pricing_file {
            Some(p) => read_json(&base.join(p))?,
            None => PricingTable::default(),
        };
        let ks = raw.ks.clone().unwrap_or_else(|| DEFAULT_KS.to_vec());
        if ks.is_empty() || ks.contains(&0) {
            return Err(CliError::config("ks must be a non-empty list of cut-offs >= 1"));
        }
        if o.jobs == Some(0) || raw.jobs == Some(0) {
            return Err(CliError::config("jobs must be >= 1"));
        }
        if let Some(b) = o.budget {
            raw.budget = Some(b);
        }
        Ok(Self {
            seed: o.seed.unwrap_or(raw.seed),
            jobs: o.jobs.or(raw.jobs),
            out: o
                .out
                .clone()
                .or_else(|| raw.out.as_ref().map(|p| base.join(p)))
                .unwrap_or_else(|| PathBuf::from("out")),
            ks,
            templates,
            pricing,
            base,
            raw,
        })
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    /// The pipeline with any budget override applied.
    pub fn pipeline(&self) -> CliResult<PipelineConfig> {
        let mut p = match &self.raw.pipeline {
            None => return Err(CliError::config("no pipeline configured")),
            Some(Source::Inline(p)) => p.clone(),
            Some(Source::Path(p)) => read_json(&self.path(p))?,
        };
        if let Some(b) = self.raw.budget {
            p.total_budget = b;
        }
        Ok(p)
    }

    /// Budget for commands that build their own pipelines.
    pub fn budget(&self) -> CliResult<f64> {
        if let Some(b) = self.raw.budget {
            return Ok(b);
        }
        match &self.raw.pipeline {
            Some(_) => Ok(self.pipeline()?.total_budget),
            None => Err(CliError::config(
                "no budget: pass --budget or set `budget` in the config",
            )),
        }
    }

    pub fn backend_specs(&self) -> CliResult<BTreeMap<String, BackendSpec>> {
        self.raw
            .backends
            .iter()
            .map(|(name, v)| {
                let mut v = v.clone();
                if let Value::Object(obj) = &mut v {
                    if !obj.contains_key("pricing") {
                        let p = self.pricing.get(name).ok_or_else(|| {
                            CliError::config(format!("backend {name} has no pricing and none in the pricing file"))
                        })?;
                        obj.insert("pricing".into(), serde_json::to_value(p).map_err(CliError::config)?);
                    }
                    if let Some(Value::String(f)) = obj.get("fixture") {
                        let full = self.path(Path::new(f));
                        obj.insert("fixture".into(), Value::String(full.to_string_lossy().into_owned()));
                    }
                }
                let spec: BackendSpec =
                    serde_json::from_value(v).map_err(|e| CliError::config(format!("backend {name}: {e}")))?;
                Ok((name.clone(), spec))
            })
            .collect()
    }

    /// Instantiates every backend for one run seed.
    pub fn registry(&self, judgments: &Arc<RelevanceJudgments>, run_seed: u64) -> CliResult<BackendRegistry> {
        let mut r = BackendRegistry::new();
        for (name, spec) in self.backend_specs()? {
            r.insert(spec.build(&name, judgments, run_seed)?);
        }
        Ok(r)
    }

    /// Tasks from the data section, or the synthetic generator when there is none.
    pub fn tasks(&self) -> CliResult<Vec<RankingTask>> {
        match (&self.raw.data, &self.raw.synthetic) {
            (Some(d), _) => self.load_data(d),
            (None, Some(s)) => Ok(s.generate()?),
            (None, None) => Err(CliError::config(
                "no data: pass --data or configure `data` or `synthetic`",
            )),
        }
    }

    fn load_data(&self, d: &DataConfig) -> CliResult<Vec<RankingTask>> {
        let path = d
            .path
            .as_ref()
            .map(|p| self.path(p))
            .ok_or_else(|| CliError::config("data section needs a `path`"))?;
        match d.format {
            Format::Jsonl => Ok(load_jsonl(&path)?),
            Format::Trec => {
                let need = |p: &Option<PathBuf>, what: &str| {
                    p.as_ref()
                        .map(|p| self.path(p))
                        .ok_or_else(|| CliError::config(format!("trec data needs `{what}`")))
                };
                let (qrels, queries, corpus) = (
                    need(&d.qrels, "qrels")?,
                    need(&d.queries, "queries")?,
                    need(&d.corpus, "corpus")?,
                );
                let src = TrecSources {
                    run: &path,
                    qrels: &qrels,
                    corpus: &corpus,
                    queries: &queries,
                };
                Ok(load_trec(
                    &src,
                    d.relevance_threshold.unwrap_or(DEFAULT_RELEVANCE_THRESHOLD),
                )?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_arg_accepts_numbers_and_categories() {
        assert_eq!("2000".parse::<BudgetArg>().unwrap().0, 2000.0);
        assert_eq!("b2".parse::<BudgetArg>().unwrap().0, 0.11);
        assert!("-1".parse::<BudgetArg>().is_err());
        assert!("lots".parse::<BudgetArg>().is_err());
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"pipelin": {}}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"pipeline": "p.json", "seed": 3}"#).unwrap();
        assert!(matches!(c.pipeline, Some(Source::Path(_))));
    }

    #[test]
    fn default_grid_has_nine_splits() {
        let s = default_splits();
        assert_eq!(s.len(), 9);
        assert!(s.iter().all(|[x, y]| (x + y - 1.0).abs() < 1e-12));
    }
}
