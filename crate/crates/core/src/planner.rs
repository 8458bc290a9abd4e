//! Reward-augmented HTN planning over compiled tree domains.
//!
//! Method cost is `h_f(m) - R[m]`, actions cost 1. `h_add_max` of an
//! abstract task is the cheapest refinement, which on tree-shaped domains is
//! exact, so it doubles as the branch-and-bound lower bound in [`solve`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hddl::{HtnDomain, HtnProblem, Method, TaskInstance};
use crate::knowledge::natural_cmp;

pub const PRIMITIVE_COST: f64 = 1.0;

/// Slack added to the bound before pruning so near-ties survive float noise;
/// the final choice compares exact candidate costs.
const PRUNE_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("ledger has no entry for method {0:?}")]
    UnknownMethod(String),
    #[error("ledger has no entry for option {0:?}")]
    UnknownOption(String),
    #[error("task {0:?} cannot be refined to primitive tasks")]
    UnreachableTask(String),
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("domain is not tree-shaped: {0}")]
    NotTreeShaped(String),
}

/// Cumulative intrinsic reward per method/option id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardLedger {
    entries: BTreeMap<String, f64>,
    episode: u64,
}

impl RewardLedger {
    pub fn new<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            entries: ids.into_iter().map(|i| (i.into(), 0.0)).collect(),
            episode: 0,
        }
    }

    /// Zero entries for every method and every task-achieving action.
    pub fn for_problem(problem: &HtnProblem) -> Self {
        let d = &problem.domain;
        Self::new(
            d.methods
                .iter()
                .map(|m| m.id.clone())
                .chain(d.primitive_tasks.iter().filter(|p| p.achieves.is_some()).map(|p| p.name.clone())),
        )
    }

    /// Starts from [`Self::for_problem`] and overrides the given entries.
    pub fn with_values(problem: &HtnProblem, values: &BTreeMap<String, f64>) -> Result<Self, PlannerError> {
        let mut l = Self::for_problem(problem);
        for (k, v) in values {
            *l.entries.get_mut(k).ok_or_else(|| PlannerError::UnknownOption(k.clone()))? = *v;
        }
        Ok(l)
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.entries.get(id).copied()
    }

    /// `R[id] += r`.
    pub fn add(&mut self, id: &str, r: f64) -> Result<(), PlannerError> {
        let e = self
            .entries
            .get_mut(id)
            .ok_or_else(|| PlannerError::UnknownOption(id.to_string()))?;
        *e += r;
        Ok(())
    }

    /// Multiplies every entry by `factor` (off-by-default decay).
    pub fn scale(&mut self, factor: f64) {
        self.entries.values_mut().for_each(|v| *v *= factor);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn set_episode(&mut self, k: u64) {
        self.episode = k;
    }
}

/// The per-method term `h_f` of the heuristic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodCost {
    /// 1 per method application.
    #[default]
    Unit,
    /// Number of actions directly in the method's subnetwork.
    PrimitiveCount,
    /// Length of the longest ordered chain in the subnetwork.
    CriticalPath,
}

/// How equal-cost plans are ordered.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TieBreak {
    /// Smallest execution sequence under natural id order.
    #[default]
    Lexicographic,
    /// Uniform choice among the lexicographically sorted ties.
    Seeded(u64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub method_cost: MethodCost,
    pub tie_break: TieBreak,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub depth: usize,
    pub edge_id: String,
    /// The abstract task being refined.
    pub task: String,
    pub primitive: bool,
    pub cost: f64,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    /// Root first.
    pub steps: Vec<PlanStep>,
    /// Leaf first.
    pub execution_sequence: Vec<String>,
    pub cost: f64,
    /// Number of optimal plans the tie-break chose among.
    pub ties: usize,
}

impl Plan {
    /// One line per step: `<depth> <edge_id> <task> <cost> <R>`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let _ = writeln!(out, "{} {} {} {} {}", s.depth, s.edge_id, s.task, s.cost, s.reward);
        }
        out
    }
}

/// Sum of step costs folded leaf first. Candidates and reported plan costs
/// both use this order so equal plans compare bit-equal.
fn canonical_cost(steps_root_first: &[PlanStep]) -> f64 {
    steps_root_first.iter().rev().fold(0.0, |acc, s| acc + s.cost)
}

/// Heuristic evaluation over one problem and ledger.
pub struct Heuristic<'a> {
    domain: &'a HtnDomain,
    ledger: &'a RewardLedger,
    method_cost: MethodCost,
    memo: HashMap<String, f64>,
    active: BTreeSet<String>,
}

impl<'a> Heuristic<'a> {
    pub fn new(problem: &'a HtnProblem, ledger: &'a RewardLedger, method_cost: MethodCost) -> Self {
        Self {
            domain: &problem.domain,
            ledger,
            method_cost,
            memo: HashMap::new(),
            active: BTreeSet::new(),
        }
    }

    pub fn h_f(&self, m: &Method) -> f64 {
        match self.method_cost {
            MethodCost::Unit => 1.0,
            MethodCost::PrimitiveCount => m
                .subnetwork
                .alpha
                .values()
                .filter(|t| self.domain.primitive_task(&t.task).is_some())
                .count() as f64,
            MethodCost::CriticalPath => {
                let net = &m.subnetwork;
                // Longest chain: 1 + number of predecessors, maximised.
                net.task_ids
                    .iter()
                    .map(|id| 1 + net.ordering.iter().filter(|(_, b)| b == id).count())
                    .max()
                    .unwrap_or(0) as f64
            }
        }
    }

    /// An action's cost: [`PRIMITIVE_COST`] less its ledger entry, if any.
    pub fn action_cost(&self, name: &str) -> f64 {
        PRIMITIVE_COST - self.ledger.get(name).unwrap_or(0.0)
    }

    fn reward(&self, method_id: &str) -> Result<f64, PlannerError> {
        self.ledger
            .get(method_id)
            .ok_or_else(|| PlannerError::UnknownMethod(method_id.to_string()))
    }

    /// `h_f(m) + max over subtasks of h_add_max − R[m]`.
    pub fn h_madd(&mut self, method_id: &str) -> Result<f64, PlannerError> {
        let m = self
            .domain
            .method(method_id)
            .ok_or_else(|| PlannerError::UnknownMethod(method_id.to_string()))?;
        let r = self.reward(method_id)?;
        let mut worst = f64::NEG_INFINITY;
        for t in m.subnetwork.alpha.values() {
            worst = worst.max(self.h_add_max(&t.task)?);
        }
        if m.subnetwork.is_empty() {
            worst = 0.0;
        }
        Ok(self.h_f(m) + worst - r)
    }

    /// Actions cost [`Heuristic::action_cost`]; abstract tasks take the
    /// cheapest of their methods and directly achieving actions.
    pub fn h_add_max(&mut self, task: &str) -> Result<f64, PlannerError> {
        if self.domain.primitive_task(task).is_some() {
            return Ok(self.action_cost(task));
        }
        if let Some(&v) = self.memo.get(task) {
            return Ok(v);
        }
        if self.domain.abstract_task(task).is_none() {
            return Err(PlannerError::UnreachableTask(task.to_string()));
        }
        if !self.active.insert(task.to_string()) {
            return Err(PlannerError::NotTreeShaped(format!("task {task} is recursive")));
        }
        let mut best = f64::INFINITY;
        for p in self.domain.primitives_for(task) {
            best = best.min(self.action_cost(&p.name));
        }
        let ids: Vec<String> = self.domain.methods_for(task).map(|m| m.id.clone()).collect();
        for id in ids {
            match self.h_madd(&id) {
                Ok(v) => best = best.min(v),
                Err(PlannerError::UnreachableTask(_)) => {}
                Err(e) => {
                    self.active.remove(task);
                    return Err(e);
                }
            }
        }
        self.active.remove(task);
        if best.is_infinite() {
            return Err(PlannerError::UnreachableTask(task.to_string()));
        }
        self.memo.insert(task.to_string(), best);
        Ok(best)
    }
}

/// Partial decomposition explored by [`solve`].
#[derive(Clone, Debug)]
struct SearchNode {
    steps: Vec<PlanStep>,
    /// The single unrefined task, if any.
    flaw: Option<TaskInstance>,
    g_cost: f64,
}

struct Search<'a, 'h> {
    domain: &'a HtnDomain,
    heuristic: Heuristic<'h>,
    best: f64,
    found: Vec<Vec<PlanStep>>,
}

impl Search<'_, '_> {
    fn expand(&mut self, node: SearchNode) -> Result<(), PlannerError> {
        let Some(task) = node.flaw.clone() else {
            let cost = canonical_cost(&node.steps);
            match cost.partial_cmp(&self.best) {
                Some(Ordering::Less) => {
                    self.best = cost;
                    self.found = vec![node.steps];
                }
                Some(Ordering::Equal) => self.found.push(node.steps),
                _ => {}
            }
            return Ok(());
        };
        let h_value = match self.heuristic.h_add_max(&task.task) {
            Ok(h) => h,
            Err(PlannerError::UnreachableTask(_)) => return Ok(()),
            Err(e) => return Err(e),
        };
        if node.g_cost + h_value > self.best + PRUNE_SLACK {
            return Ok(());
        }
        let depth = node.steps.len();
        let domain = self.domain;
        for p in domain.primitives_for(&task.task) {
            let cost = self.heuristic.action_cost(&p.name);
            let mut steps = node.steps.clone();
            steps.push(PlanStep {
                depth,
                edge_id: p.name.clone(),
                task: task.task.clone(),
                primitive: true,
                cost,
                reward: self.heuristic.ledger.get(&p.name).unwrap_or(0.0),
            });
            self.expand(SearchNode {
                steps,
                flaw: None,
                g_cost: node.g_cost + cost,
            })?;
        }
        for m in domain.methods_for(&task.task) {
            let sub = match m.subnetwork.len() {
                1 => m.single_subtask().cloned(),
                0 => None,
                n => {
                    return Err(PlannerError::NotTreeShaped(format!(
                        "method {} has {n} subtasks",
                        m.id
                    )))
                }
            };
            let r = self.heuristic.reward(&m.id)?;
            let cost = self.heuristic.h_f(m) - r;
            let mut steps = node.steps.clone();
            steps.push(PlanStep {
                depth,
                edge_id: m.id.clone(),
                task: task.task.clone(),
                primitive: false,
                cost,
                reward: r,
            });
            // A subtask that is itself an action is placed directly.
            let (flaw, extra) = match sub {
                Some(t) if domain.primitive_task(&t.task).is_some() => {
                    let c = self.heuristic.action_cost(&t.task);
                    steps.push(PlanStep {
                        depth: depth + 1,
                        edge_id: t.task.clone(),
                        task: t.task.clone(),
                        primitive: true,
                        cost: c,
                        reward: self.heuristic.ledger.get(&t.task).unwrap_or(0.0),
                    });
                    (None, c)
                }
                other => (other, 0.0),
            };
            self.expand(SearchNode {
                steps,
                flaw,
                g_cost: node.g_cost + cost + extra,
            })?;
        }
        Ok(())
    }
}

fn natural_seq_cmp(a: &[String], b: &[String]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match natural_cmp(x, y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Minimum-cost decomposition of the problem's root task under `ledger`.
pub fn solve(problem: &HtnProblem, ledger: &RewardLedger, cfg: &PlannerConfig) -> Result<Plan, PlannerError> {
    let domain = &problem.domain;
    let root = match problem.initial_network.len() {
        0 => {
            return Ok(Plan {
                steps: Vec::new(),
                execution_sequence: Vec::new(),
                cost: 0.0,
                ties: 1,
            })
        }
        1 => problem.root_task().cloned().expect("single task"),
        n => return Err(PlannerError::NotTreeShaped(format!("initial network has {n} tasks"))),
    };
    if domain.methods_for(&root.task).next().is_none() && domain.primitives_for(&root.task).next().is_none() {
        return Err(PlannerError::NoSolution(format!("root task {} has no refinements", root.task)));
    }
    let mut search = Search {
        domain,
        heuristic: Heuristic::new(problem, ledger, cfg.method_cost),
        best: f64::INFINITY,
        found: Vec::new(),
    };
    search.expand(SearchNode {
        steps: Vec::new(),
        flaw: Some(root.clone()),
        g_cost: 0.0,
    })?;
    if search.found.is_empty() {
        return Err(PlannerError::NoSolution(format!("root task {} cannot be refined", root.task)));
    }
    let mut candidates: Vec<(Vec<String>, Vec<PlanStep>)> = search
        .found
        .into_iter()
        .map(|steps| (steps.iter().rev().map(|s| s.edge_id.clone()).collect(), steps))
        .collect();
    candidates.sort_by(|a, b| natural_seq_cmp(&a.0, &b.0));
    candidates.dedup_by(|a, b| a.0 == b.0);
    let ties = candidates.len();
    let pick = match cfg.tie_break {
        TieBreak::Lexicographic => 0,
        TieBreak::Seeded(seed) => ChaCha8Rng::seed_from_u64(seed).random_range(0..ties),
    };
    let (execution_sequence, steps) = candidates.swap_remove(pick);
    Ok(Plan {
        cost: canonical_cost(&steps),
        steps,
        execution_sequence,
        ties,
    })
}
