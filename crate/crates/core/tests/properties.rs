use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use rerank_core::backends::{BackendRegistry, OracleBackend, OracleConfig, SharedBackend};
use rerank_core::budget::{call_cost, Ledger, Pricing};
use rerank_core::pipeline::{run_pipeline, Auto1Params, Auto2Params, PipelineConfig, Router, StageSpec};
use rerank_core::prompts::Templates;
use rerank_core::strategies::{Stage, StrategyKind, StrategyParams};
use rerank_core::{RankedList, RankingTask, RelevanceJudgments};

const KINDS: [StrategyKind; 5] = [
    StrategyKind::Binary,
    StrategyKind::Likert,
    StrategyKind::BUpr,
    StrategyKind::BPrp,
    StrategyKind::Listwise,
];

fn arb_task() -> impl Strategy<Value = RankingTask> {
    (1usize..25)
        .prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec(1usize..30, n),
                proptest::collection::btree_set(0..n, 0..=n.min(4)),
                proptest::collection::vec(0.0f64..40.0, n),
            )
        })
        .prop_map(|(n, lens, gold, scores)| {
            RankingTask::new(
                "q",
                "alpha beta gamma delta",
                (0..n).map(|i| {
                    let text = (0..lens[i])
                        .map(|w| format!("w{}", (w * 7 + i) % 13))
                        .collect::<Vec<_>>()
                        .join(" ");
                    (format!("d{i}"), text, Some(scores[i]))
                }),
                gold.into_iter().map(|g| format!("d{g}")),
            )
            .unwrap()
        })
}

fn arb_pricing() -> impl Strategy<Value = Pricing> {
    (0.001f64..2.0, 0.0f64..4.0, 0.0f64..5.0).prop_map(|(p, o, f)| Pricing::new(p, o, f).unwrap())
}

fn backend(name: &str, task: &RankingTask, pricing: Pricing, accuracy: f64, seed: u64) -> SharedBackend {
    let j = Arc::new(RelevanceJudgments::from_tasks([task]));
    Arc::new(OracleBackend::new(
        name,
        pricing,
        OracleConfig::new(j, accuracy, seed).unwrap(),
    ))
}

fn params() -> StrategyParams {
    StrategyParams {
        k: Some(6),
        window: Some(4),
        step: Some(2),
    }
}

fn is_permutation(task: &RankingTask, list: &RankedList) -> bool {
    let a: BTreeSet<&str> = list.ordering().iter().map(String::as_str).collect();
    let b: BTreeSet<&str> = task.passages().iter().map(|p| p.id.as_str()).collect();
    a == b && list.len() == task.len()
}

fn accounting_holds(ledger: &Ledger, registry: &BackendRegistry) -> bool {
    let recomputed: f64 = ledger
        .records()
        .iter()
        .map(|r| {
            call_cost(
                r.prompt_tokens,
                r.output_tokens,
                registry.get(&r.backend_name).unwrap().pricing(),
            )
        })
        .sum();
    let recorded: f64 = ledger.records().iter().map(|r| r.cost).sum();
    (recomputed - ledger.spent()).abs() <= 1e-9 && (recorded - ledger.spent()).abs() <= 1e-9
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn strategies_respect_cap_and_permute(
        task in arb_task(),
        pricing in arb_pricing(),
        kind in 0usize..5,
        budget in 0.0f64..400.0,
        accuracy in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let b = backend("b", &task, pricing, accuracy, seed);
        let reg = { let mut r = BackendRegistry::new(); r.insert(b.clone()); r };
        let t = Templates::default();
        let stage = Stage::new(&task, b.as_ref(), &t);
        let mut ledger = Ledger::new(budget);
        let out = stage.run(KINDS[kind], &params(), &task.initial_ranking(), &mut ledger, &Default::default()).unwrap();
        prop_assert!(is_permutation(&task, &out));
        prop_assert!(ledger.spent() <= budget);
        prop_assert!(!ledger.overrun());
        prop_assert!(accounting_holds(&ledger, &reg));

        let mut again = Ledger::new(budget);
        let out2 = stage.run(KINDS[kind], &params(), &task.initial_ranking(), &mut again, &Default::default()).unwrap();
        prop_assert_eq!(out, out2);
        prop_assert_eq!(ledger, again);
    }

    #[test]
    fn zero_budget_is_identity(task in arb_task(), pricing in arb_pricing(), kind in 0usize..5) {
        let b = backend("b", &task, pricing, 1.0, 0);
        let t = Templates::default();
        let mut ledger = Ledger::new(0.0);
        let out = Stage::new(&task, b.as_ref(), &t)
            .run(KINDS[kind], &params(), &task.initial_ranking(), &mut ledger, &Default::default())
            .unwrap();
        let initial = task.initial_ranking();
        prop_assert_eq!(out.ordering(), initial.ordering());
        prop_assert!(ledger.records().is_empty());
    }

    #[test]
    fn pipelines_respect_cap_and_permute(
        task in arb_task(),
        cheap_price in arb_pricing(),
        ratio in 1.0f64..5.0,
        kinds in proptest::collection::vec(0usize..5, 1..4),
        fractions in proptest::collection::vec(0.0f64..1.0, 3),
        budget in 0.0f64..600.0,
        router in 0usize..3,
        seed in any::<u64>(),
    ) {
        // drop consecutive repeats so the config is structurally valid
        let mut ks: Vec<usize> = kinds;
        ks.dedup();
        let exp_price = Pricing::new(cheap_price.c_p * ratio, cheap_price.c_o * ratio, cheap_price.c_f * ratio).unwrap();
        let exp = backend("exp", &task, exp_price, 0.9, seed);
        let cheap = backend("cheap", &task, cheap_price, 0.7, seed);
        let mut reg = BackendRegistry::new();
        reg.insert(exp);
        reg.insert(cheap);
        let raw: Vec<f64> = fractions[..ks.len()].iter().map(|f| f + 0.01).collect();
        let sum: f64 = raw.iter().sum();
        let mut fr: Vec<f64> = raw.iter().map(|f| f / sum).collect();
        let head: f64 = fr[..fr.len() - 1].iter().sum();
        *fr.last_mut().unwrap() = 1.0 - head;
        let stages = ks
            .iter()
            .zip(&fr)
            .map(|(&k, &f)| StageSpec::new(KINDS[k], "exp", f).with_params(params()))
            .collect();
        let router = match router {
            0 => Router::None,
            1 => Router::Auto1 { params: Auto1Params::default(), expensive: "exp".into(), cheap: "cheap".into() },
            _ => Router::Auto2 { params: Auto2Params::default(), expensive: "exp".into(), cheap: "cheap".into() },
        };
        let cfg = PipelineConfig::new(budget, stages).with_router(router);
        let out = run_pipeline(&task, &cfg, &reg, &Templates::default()).unwrap();
        prop_assert!(is_permutation(&task, &out.ranked));
        prop_assert!(out.ledger.spent() <= budget);
        prop_assert!(accounting_holds(&out.ledger, &reg));
        let caps = cfg.stage_caps().unwrap();
        let mut cumulative = 0.0;
        for (i, cap) in caps.iter().enumerate() {
            cumulative += out.ledger.stage_spent(i);
            prop_assert!(cumulative <= cap + 1e-9);
        }
        let again = run_pipeline(&task, &cfg, &reg, &Templates::default()).unwrap();
        prop_assert_eq!(out, again);
    }
}
