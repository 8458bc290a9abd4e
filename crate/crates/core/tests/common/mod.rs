#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use somarl_core::KnowledgeTree;

/// A random tree of 2..=max_nodes nodes with shuffled `so_N` edge ids,
/// together with ledger values in [0, 10] for every edge.
pub fn random_tree(seed: u64, max_nodes: usize) -> (KnowledgeTree, BTreeMap<String, f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_nodes);
    let parents: Vec<usize> = (1..n).map(|i| rng.random_range(0..i)).collect();
    let mut ids: Vec<usize> = (0..n - 1).collect();
    ids.shuffle(&mut rng);

    let is_leaf = |i: usize| !parents.contains(&i);
    let leaves: Vec<usize> = (1..n).filter(|&i| is_leaf(i)).collect();
    let initial = leaves[rng.random_range(0..leaves.len())];

    let mut text = String::from("predicate at_goal/0\npredicate p/1 thing\nobject");
    for i in 1..n {
        let _ = write!(text, " o{i}");
    }
    text.push_str(" : thing\nnode n0 { at_goal() } root\n");
    for i in 1..n {
        let tag = if i == initial { " initial" } else { "" };
        let _ = writeln!(text, "node n{i} {{ p(o{i}) }}{tag}");
    }
    let mut ledger = BTreeMap::new();
    for (k, &p) in parents.iter().enumerate() {
        let id = format!("so_{}", ids[k]);
        let _ = writeln!(text, "edge n{p} -> n{} : {id}", k + 1);
        ledger.insert(id, rng.random_range(0.0..=10.0));
    }
    (KnowledgeTree::parse(&text).expect("generated tree is valid"), ledger)
}

/// Every root-to-leaf decomposition with its cost, summed leaf first with
/// each edge costing `1 - R[edge]`. Sequences are leaf first.
pub fn enumerate_plans(tree: &KnowledgeTree, ledger: &BTreeMap<String, f64>) -> Vec<(Vec<String>, f64)> {
    tree.leaves()
        .filter(|l| !l.is_root)
        .map(|leaf| {
            let path = tree.path_to_root(&leaf.id).unwrap();
            let seq: Vec<String> = path.iter().map(|e| e.edge_id.clone()).collect();
            let cost = seq.iter().fold(0.0, |acc, id| acc + (1.0 - ledger[id]));
            (seq, cost)
        })
        .collect()
}

pub fn brute_force_min(tree: &KnowledgeTree, ledger: &BTreeMap<String, f64>) -> f64 {
    enumerate_plans(tree, ledger)
        .into_iter()
        .map(|p| p.1)
        .fold(f64::INFINITY, f64::min)
}
