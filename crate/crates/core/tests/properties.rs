use proptest::prelude::*;

use prefrules::baselines::{levenshtein, levenshtein_similarity};
use prefrules::forge::{unify_ambik, RawAmbikScenario, RuleChain};
use prefrules::inference::deterministic_shuffle;
use prefrules::model::{candidates_from_texts, RuleOrigin, RuleSet, Scenario, Tier};
use prefrules::prompts::{
    format_decision_blocks, parse_decision_blocks, parse_numbered_rules, DecisionBlock,
};

fn sentence() -> impl Strategy<Value = String> {
    "[A-Za-z][a-z]{0,7}( [a-z0-9;,()]{1,8}){0,6}\\.?"
}

fn blocks() -> impl Strategy<Value = Vec<DecisionBlock>> {
    prop::collection::vec((1usize..30, sentence(), prop::option::of(1u8..=10)), 1..10).prop_map(
        |v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (action, reasoning, confidence))| DecisionBlock {
                    scenario_ordinal: i + 1,
                    action,
                    reasoning,
                    confidence,
                })
                .collect()
        },
    )
}

fn tier() -> impl Strategy<Value = Tier> {
    prop_oneof![
        Just(Tier::InDistribution),
        Just(Tier::Ood),
        Just(Tier::Unknown)
    ]
}

fn origin() -> impl Strategy<Value = RuleOrigin> {
    prop_oneof![
        Just(RuleOrigin::Elicited),
        Just(RuleOrigin::CriticUpdate),
        Just(RuleOrigin::Contradicted),
        Just(RuleOrigin::Empty),
        Just(RuleOrigin::External),
    ]
}

fn raw_cases() -> Vec<RawAmbikScenario> {
    let text = include_str!("../fixtures/unification/ambik_cases.json");
    let cases: Vec<serde_json::Value> = serde_json::from_str(text).unwrap();
    cases
        .into_iter()
        .map(|c| serde_json::from_value(c["scenario"].clone()).unwrap())
        .collect()
}

proptest! {
    #[test]
    fn decision_blocks_round_trip(blocks in blocks(), seed in any::<u64>()) {
        // Block order in the reply does not matter.
        let mut shown = blocks.clone();
        let n = shown.len();
        shown.rotate_left(seed as usize % n);
        let parsed = parse_decision_blocks(&format_decision_blocks(&shown), n).unwrap();
        prop_assert_eq!(parsed, blocks);
    }

    #[test]
    fn missing_block_is_a_parse_error(blocks in blocks()) {
        let n = blocks.len();
        let text = format_decision_blocks(&blocks[..n - 1]);
        prop_assert!(parse_decision_blocks(&text, n).is_err());
    }

    #[test]
    fn numbered_rules_round_trip(rules in prop::collection::vec(sentence(), 1..12), version in 0u32..50, origin in origin()) {
        let set = RuleSet::new(rules.clone(), version, origin, "m1").unwrap();
        prop_assert_eq!(parse_numbered_rules(&set.to_numbered_text()).unwrap(), rules);
        let json = serde_json::to_string(&set).unwrap();
        prop_assert_eq!(serde_json::from_str::<RuleSet>(&json).unwrap(), set);
    }

    #[test]
    fn scenario_serde_round_trip(
        id in "[a-z][0-9]{1,3}",
        env in sentence(),
        req in sentence(),
        cands in prop::collection::vec(sentence(), 1..8),
        pref in prop::option::of(1usize..8),
        tier in tier(),
    ) {
        let s = Scenario {
            id,
            environment: env,
            request: req,
            preferred: pref.map(|p| p.min(cands.len())),
            candidates: candidates_from_texts(cands),
            tier,
        };
        let json = serde_json::to_string(&s).unwrap();
        prop_assert_eq!(serde_json::from_str::<Scenario>(&json).unwrap(), s);
    }

    #[test]
    fn shuffle_is_a_stable_permutation(sid in "[a-z0-9_]{0,12}", mid in "[a-z0-9.-]{0,12}", n in 0usize..40) {
        let p = deterministic_shuffle(&sid, &mid, n);
        let mut sorted = p.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (1..=n).collect::<Vec<_>>());
        prop_assert_eq!(p, deterministic_shuffle(&sid, &mid, n));
    }

    #[test]
    fn levenshtein_is_a_metric(a in "\\PC{0,12}", b in "\\PC{0,12}", c in "\\PC{0,12}") {
        let ab = levenshtein(&a, &b);
        prop_assert_eq!(ab, levenshtein(&b, &a));
        prop_assert_eq!(ab == 0, a == b);
        prop_assert!(ab <= a.chars().count().max(b.chars().count()));
        prop_assert!(levenshtein(&a, &c) <= ab + levenshtein(&b, &c));
        let sim = levenshtein_similarity(&a, &b);
        prop_assert!((0.0..=1.0).contains(&sim));
    }

    #[test]
    fn chain_outcome_depends_only_on_rank_order(seed in any::<u64>(), offset in -1000i64..1000, scale in 1i64..50) {
        let base = RuleChain::builtin();
        let mut specs = base.specs();
        for s in &mut specs {
            s.rank = s.rank * scale + offset;
        }
        let n = specs.len();
        specs.rotate_left(seed as usize % n);
        if seed & 1 == 1 {
            specs.reverse();
        }
        let remapped = RuleChain::new(specs).unwrap();
        for raw in raw_cases() {
            prop_assert_eq!(unify_ambik(&raw, &remapped), unify_ambik(&raw, &base));
        }
    }
}
