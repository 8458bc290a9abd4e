mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use somarl_core::assets;
use somarl_core::grid_env::{CellKind, GridEnv, GridMap, JointAction, TaskVariant};
use somarl_core::options::NegativeCountMode;
use somarl_core::planner::{Heuristic, MethodCost};
use somarl_core::{
    compile_tree, intrinsic_reward, parse_hddl, print_hddl, solve, IntrinsicRewardConfig, KnowledgeTree, OptionSet,
    PlannerConfig, RewardLedger, TieBreak,
};

use common::{brute_force_min, enumerate_plans, random_tree};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn tree_text_round_trips(seed in any::<u64>()) {
        let (tree, _) = random_tree(seed, 12);
        let back = KnowledgeTree::parse(&tree.to_text()).unwrap();
        prop_assert_eq!(back.to_text(), tree.to_text());
    }

    #[test]
    fn tree_shape(seed in any::<u64>()) {
        let (tree, _) = random_tree(seed, 12);
        prop_assert_eq!(tree.edges().len(), tree.nodes().len() - 1);
        prop_assert_eq!(tree.depth(&tree.root().id), Some(0));
        for n in tree.nodes() {
            let has_parent = tree.parent_edge(&n.id).is_some();
            prop_assert_eq!(has_parent, !n.is_root);
        }
        prop_assert!(tree.is_leaf(&tree.initial_leaf().id));
        for leaf in tree.leaves() {
            let path = tree.path_to_root(&leaf.id).unwrap();
            prop_assert_eq!(path.len(), tree.depth(&leaf.id).unwrap());
            prop_assert_eq!(&path.last().unwrap().parent, &tree.root().id);
            prop_assert_eq!(&path[0].child, &leaf.id);
        }
    }

    #[test]
    fn ids_agree_across_layers(seed in any::<u64>()) {
        let (tree, _) = random_tree(seed, 12);
        let edges: BTreeSet<String> = tree.edges().iter().map(|e| e.edge_id.clone()).collect();
        let p = compile_tree(&tree).unwrap();
        let compiled: BTreeSet<String> = p.domain.methods.iter().map(|m| m.id.clone())
            .chain(p.domain.primitive_tasks.iter().map(|a| a.name.clone()))
            .collect();
        let options: BTreeSet<String> = OptionSet::from_tree(&tree).ids().map(str::to_string).collect();
        prop_assert_eq!(&edges, &compiled);
        prop_assert_eq!(&edges, &options);
    }

    #[test]
    fn hddl_round_trips(seed in any::<u64>()) {
        let (tree, _) = random_tree(seed, 12);
        let p = compile_tree(&tree).unwrap();
        let (d, q) = print_hddl(&p);
        let back = parse_hddl(&d, &q).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn planner_matches_enumeration(seed in any::<u64>()) {
        let (tree, values) = random_tree(seed, 12);
        let p = compile_tree(&tree).unwrap();
        let ledger = RewardLedger::with_values(&p, &values).unwrap();
        let plan = solve(&p, &ledger, &PlannerConfig::default()).unwrap();
        let best = brute_force_min(&tree, &values);
        prop_assert_eq!(plan.cost.to_bits(), best.to_bits());
        let optimal: Vec<Vec<String>> = enumerate_plans(&tree, &values)
            .into_iter()
            .filter(|c| c.1 == best)
            .map(|c| c.0)
            .collect();
        prop_assert!(optimal.contains(&plan.execution_sequence));
        prop_assert_eq!(plan.ties, optimal.len());
    }

    #[test]
    fn seeded_tie_break_is_reproducible(seed in any::<u64>(), tie in any::<u64>()) {
        let (tree, _) = random_tree(seed, 12);
        let p = compile_tree(&tree).unwrap();
        // A zero ledger makes every equally deep leaf a tie.
        let ledger = RewardLedger::for_problem(&p);
        let cfg = PlannerConfig { tie_break: TieBreak::Seeded(tie), ..Default::default() };
        let a = solve(&p, &ledger, &cfg).unwrap();
        let b = solve(&p, &ledger, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
    }

    #[test]
    fn intrinsic_reward_zero_unless_terminated(r_e in -100.0f64..100.0, n in 0u32..500) {
        let cfg = IntrinsicRewardConfig::default();
        prop_assert_eq!(intrinsic_reward(r_e, n, &cfg, false), 0.0);
        let r = intrinsic_reward(r_e, n, &cfg, true);
        prop_assert!((r - (r_e + 5.0 - f64::from(n) * 0.01)).abs() < 1e-9);
    }

    #[test]
    fn per_step_count_never_exceeds_one(r in -1.0f64..1.0) {
        let cfg = IntrinsicRewardConfig { n_mode: NegativeCountMode::PerStep, ..Default::default() };
        let n = u32::from(r < 0.0);
        prop_assert!(intrinsic_reward(r, n, &cfg, true) >= r + 5.0 - 0.01 - 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// Raising one method's ledger entry strictly lowers its heuristic value.
    #[test]
    fn h_madd_decreases_with_reward(seed in any::<u64>(), pick in any::<prop::sample::Index>(), bump in 1e-3f64..10.0) {
        let (tree, values) = random_tree(seed, 12);
        let p = compile_tree(&tree).unwrap();
        prop_assume!(!p.domain.methods.is_empty());
        let m = &p.domain.methods[pick.index(p.domain.methods.len())].id;
        let low = RewardLedger::with_values(&p, &values).unwrap();
        let mut high = low.clone();
        high.add(m, bump).unwrap();
        let a = Heuristic::new(&p, &low, MethodCost::Unit).h_madd(m).unwrap();
        let b = Heuristic::new(&p, &high, MethodCost::Unit).h_madd(m).unwrap();
        prop_assert!(b < a, "{m}: {a} -> {b}");
    }
}

fn envs() -> Vec<GridEnv> {
    let ft = Arc::new(GridMap::parse(assets::FINDTREASURE_MAP).unwrap());
    let keys = Arc::new(GridMap::parse(assets::MOVEBOX_KEYS_MAP).unwrap());
    let t0 = Arc::new(GridMap::parse(assets::MOVEBOX_TASK0_MAP).unwrap());
    let mut out = vec![
        GridEnv::new(ft, TaskVariant::FindTreasure, 100).unwrap(),
        GridEnv::new(t0, TaskVariant::MoveBox(0), 300).unwrap(),
    ];
    for k in 1..=3 {
        out.push(GridEnv::new(keys.clone(), TaskVariant::MoveBox(k), 300).unwrap());
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Random play never puts anything inside a wall, never overlaps the
    /// agents, keeps the carried box flanked, and steps deterministically.
    #[test]
    fn env_invariants_under_random_play(which in 0usize..5, actions in prop::collection::vec(0usize..25, 1..300)) {
        let env = &envs()[which];
        let map = env.map().clone();
        let (mut s, _) = env.reset(0);
        for a in actions {
            if s.terminated() {
                break;
            }
            let a = JointAction::from_index(a);
            let (n, out) = env.step(&s, a).unwrap();
            let (n2, out2) = env.step(&s, a).unwrap();
            prop_assert_eq!(&n, &n2);
            prop_assert_eq!(&out, &out2);
            prop_assert_eq!(out.negative_flag != 0, out.reward < 0.0);
            for p in n.agent_pos {
                prop_assert_ne!(map.cell(p), CellKind::Wall);
            }
            prop_assert_ne!(n.agent_pos[0], n.agent_pos[1]);
            if let Some(b) = n.box_pos {
                prop_assert_ne!(map.cell(b), CellKind::Wall);
                prop_assert!(!n.agent_pos.contains(&b));
                if n.carrying {
                    let xs = [n.agent_pos[0].x - b.x, n.agent_pos[1].x - b.x];
                    prop_assert!(xs == [-1, 1] || xs == [1, -1]);
                    prop_assert!(n.agent_pos.iter().all(|p| p.y == b.y));
                }
            }
            prop_assert_eq!(n.step_count, s.step_count + 1);
            s = n;
        }
    }
}
