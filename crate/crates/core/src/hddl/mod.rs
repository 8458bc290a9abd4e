//! A totally-ordered HDDL subset: model, text format and the tree compiler.

mod compile;
mod text;

pub use compile::compile_tree;
pub use text::{parse_domain, parse_hddl, parse_problem, print_domain, print_hddl, print_problem};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symbolic::{Objects, SymbolicState, Vocabulary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HddlError {
    #[error("HDDL parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported HDDL feature at line {line}, column {column}: {feature}")]
    UnsupportedFeature {
        line: usize,
        column: usize,
        feature: String,
    },
    #[error("cannot compile tree: {0}")]
    Compile(String),
    #[error("invalid HDDL model: {0}")]
    Validation(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypedParam {
    pub name: String,
    pub ty: String,
}

impl TypedParam {
    pub fn new(name: impl Into<String>, ty: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ty: ty.into(),
        }
    }
}

/// A task name applied to arguments (constants or `?variables`).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task: String,
    pub args: Vec<String>,
}

impl TaskInstance {
    pub fn new(task: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            task: task.into(),
            args,
        }
    }
}

impl fmt::Display for TaskInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.task)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimitiveTask {
    pub name: String,
    pub parameters: Vec<TypedParam>,
    pub pre_pos: SymbolicState,
    pub pre_neg: SymbolicState,
    pub eff_pos: SymbolicState,
    pub eff_neg: SymbolicState,
    /// The abstract task this action directly refines, if any. Compiled
    /// leaf edges always set it.
    pub achieves: Option<TaskInstance>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractTask {
    pub name: String,
    pub parameters: Vec<TypedParam>,
}

/// Only equality constraints are representable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableConstraint {
    pub lhs: String,
    pub rhs: String,
    pub equal: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskNetwork {
    pub task_ids: Vec<String>,
    /// Pairs `(a, b)` meaning `a` precedes `b`.
    pub ordering: BTreeSet<(String, String)>,
    pub alpha: BTreeMap<String, TaskInstance>,
    pub variable_constraints: Vec<VariableConstraint>,
}

impl TaskNetwork {
    /// A totally ordered network with ids `t0, t1, ...`.
    pub fn sequence(tasks: Vec<TaskInstance>) -> Self {
        let task_ids: Vec<String> = (0..tasks.len()).map(|i| format!("t{i}")).collect();
        Self::labelled_sequence(task_ids.into_iter().zip(tasks).collect())
    }

    pub fn labelled_sequence(tasks: Vec<(String, TaskInstance)>) -> Self {
        let task_ids: Vec<String> = tasks.iter().map(|(id, _)| id.clone()).collect();
        let mut ordering = BTreeSet::new();
        for i in 0..task_ids.len() {
            for j in i + 1..task_ids.len() {
                ordering.insert((task_ids[i].clone(), task_ids[j].clone()));
            }
        }
        Self {
            task_ids,
            ordering,
            alpha: tasks.into_iter().collect(),
            variable_constraints: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.task_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.task_ids.is_empty()
    }

    /// α total, ids unique, ≺ irreflexive and transitive over known ids.
    pub fn is_well_formed(&self) -> bool {
        let ids: BTreeSet<&String> = self.task_ids.iter().collect();
        if ids.len() != self.task_ids.len() || self.alpha.len() != ids.len() {
            return false;
        }
        if !self.task_ids.iter().all(|i| self.alpha.contains_key(i)) {
            return false;
        }
        for (a, b) in &self.ordering {
            if a == b || !ids.contains(a) || !ids.contains(b) {
                return false;
            }
            for (c, d) in &self.ordering {
                if b == c && !self.ordering.contains(&(a.clone(), d.clone())) {
                    return false;
                }
            }
        }
        true
    }

    /// Whether every pair of distinct tasks is ordered.
    pub fn is_total(&self) -> bool {
        let n = self.task_ids.len();
        self.ordering.len() == n * n.saturating_sub(1) / 2 && self.is_well_formed()
    }

    /// Tasks in a linear extension of ≺ (stable with respect to `task_ids`).
    pub fn ordered_tasks(&self) -> Vec<(&str, &TaskInstance)> {
        let mut ids: Vec<&String> = self.task_ids.iter().collect();
        let preds = |id: &String| self.ordering.iter().filter(|(_, b)| b == id).count();
        ids.sort_by_key(|id| preds(id));
        ids.into_iter().map(|id| (id.as_str(), &self.alpha[id])).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Method {
    pub id: String,
    pub abstract_task: TaskInstance,
    pub parameters: Vec<TypedParam>,
    pub subnetwork: TaskNetwork,
}

impl Method {
    /// The single subtask of a tree-shaped method.
    pub fn single_subtask(&self) -> Option<&TaskInstance> {
        match self.subnetwork.task_ids.as_slice() {
            [only] => self.subnetwork.alpha.get(only),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HtnDomain {
    pub name: String,
    pub types: Vec<String>,
    pub constants: Objects,
    pub predicates: Vocabulary,
    pub primitive_tasks: Vec<PrimitiveTask>,
    pub abstract_tasks: Vec<AbstractTask>,
    pub methods: Vec<Method>,
}

impl HtnDomain {
    pub fn abstract_task(&self, name: &str) -> Option<&AbstractTask> {
        self.abstract_tasks.iter().find(|t| t.name == name)
    }

    pub fn primitive_task(&self, name: &str) -> Option<&PrimitiveTask> {
        self.primitive_tasks.iter().find(|t| t.name == name)
    }

    pub fn method(&self, id: &str) -> Option<&Method> {
        self.methods.iter().find(|m| m.id == id)
    }

    /// Methods decomposing `task`, in declaration order.
    pub fn methods_for<'a>(&'a self, task: &'a str) -> impl Iterator<Item = &'a Method> + 'a {
        self.methods.iter().filter(move |m| m.abstract_task.task == task)
    }

    /// Actions that directly achieve `task`, in declaration order.
    pub fn primitives_for<'a>(&'a self, task: &'a str) -> impl Iterator<Item = &'a PrimitiveTask> + 'a {
        self.primitive_tasks
            .iter()
            .filter(move |p| p.achieves.as_ref().is_some_and(|a| a.task == task))
    }

    pub fn validate(&self) -> Result<(), HddlError> {
        let bad = |m: String| Err(HddlError::Validation(m));
        let mut names = BTreeSet::new();
        for n in self
            .abstract_tasks
            .iter()
            .map(|t| &t.name)
            .chain(self.primitive_tasks.iter().map(|t| &t.name))
        {
            if !names.insert(n) {
                return bad(format!("task name {n:?} declared twice"));
            }
        }
        let mut ids = BTreeSet::new();
        for m in &self.methods {
            if !ids.insert(&m.id) {
                return bad(format!("method {:?} declared twice", m.id));
            }
            if self.abstract_task(&m.abstract_task.task).is_none() {
                return bad(format!("method {} decomposes undeclared task {}", m.id, m.abstract_task.task));
            }
            if !m.subnetwork.is_well_formed() {
                return bad(format!("method {} has a malformed task network", m.id));
            }
            for t in m.subnetwork.alpha.values() {
                if !names.contains(&t.task) {
                    return bad(format!("method {} uses undeclared task {}", m.id, t.task));
                }
            }
        }
        for p in &self.primitive_tasks {
            if let Some(a) = p.eff_pos.iter().find(|a| p.eff_neg.contains(a)) {
                return bad(format!("action {} both adds and deletes {a}", p.name));
            }
            if let Some(t) = &p.achieves {
                if self.abstract_task(&t.task).is_none() {
                    return bad(format!("action {} achieves undeclared task {}", p.name, t.task));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HtnProblem {
    pub name: String,
    pub domain: HtnDomain,
    pub objects: Objects,
    pub initial_state: SymbolicState,
    pub initial_network: TaskNetwork,
}

impl HtnProblem {
    /// The single task of tn_I.
    pub fn root_task(&self) -> Option<&TaskInstance> {
        match self.initial_network.task_ids.as_slice() {
            [only] => self.initial_network.alpha.get(only),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), HddlError> {
        self.domain.validate()?;
        if !self.initial_network.is_well_formed() {
            return Err(HddlError::Validation("initial task network is malformed".into()));
        }
        for t in self.initial_network.alpha.values() {
            if self.domain.abstract_task(&t.task).is_none() && self.domain.primitive_task(&t.task).is_none() {
                return Err(HddlError::Validation(format!("initial network uses undeclared task {}", t.task)));
            }
        }
        Ok(())
    }
}
