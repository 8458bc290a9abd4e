use std::collections::BTreeMap;

use super::{AbstractTask, HddlError, HtnDomain, HtnProblem, Method, PrimitiveTask, TaskInstance, TaskNetwork, TypedParam};
use crate::knowledge::{KnowledgeTree, TreeNode};
use crate::symbolic::{Objects, SymbolicState};

/// Task name derived from a subgoal, e.g. `at_r2_lever` or `at_goal`.
fn subgoal_task_name(subgoal: &SymbolicState) -> String {
    if subgoal.is_empty() {
        return "empty".into();
    }
    subgoal
        .iter()
        .map(|a| {
            let mut s = a.predicate.clone();
            for x in &a.args {
                s.push('_');
                s.push_str(x.trim_start_matches('?'));
            }
            s
        })
        .collect::<Vec<_>>()
        .join("__")
}

/// Objects mentioned by a subgoal, first occurrence order.
fn subgoal_arguments(subgoal: &SymbolicState) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for a in subgoal.iter() {
        for x in &a.args {
            if !out.contains(x) {
                out.push(x.clone());
            }
        }
    }
    out
}

/// Compiles a knowledge tree into an HTN problem.
///
/// Every non-leaf node becomes an abstract task named after its subgoal.
/// Edges into leaves become actions named by the edge id that achieve the
/// parent's task; all other edges become single-subtask methods with the
/// edge id as method id.
pub fn compile_tree(tree: &KnowledgeTree) -> Result<HtnProblem, HddlError> {
    let vocab = tree.vocabulary();
    let objects = tree.objects();
    for n in tree.nodes() {
        for a in n.subgoal.iter() {
            a.check(vocab, objects)
                .map_err(|e| HddlError::Compile(format!("node {}: {e}", n.id)))?;
        }
    }

    let mut task_of: BTreeMap<&str, TaskInstance> = BTreeMap::new();
    let mut abstract_tasks: Vec<AbstractTask> = Vec::new();
    for n in tree.nodes().iter().filter(|n| !tree.is_leaf(&n.id)) {
        let mut name = subgoal_task_name(&n.subgoal);
        if abstract_tasks.iter().any(|t| t.name == name) || tree.edge(&name).is_some() {
            name = format!("{name}__{}", n.id);
        }
        let args = subgoal_arguments(&n.subgoal);
        let parameters = args
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let ty = objects
                    .type_of(x)
                    .ok_or_else(|| HddlError::Compile(format!("node {}: undeclared object {x}", n.id)))?;
                Ok(TypedParam::new(format!("?p{i}"), ty))
            })
            .collect::<Result<Vec<_>, HddlError>>()?;
        abstract_tasks.push(AbstractTask {
            name: name.clone(),
            parameters,
        });
        task_of.insert(n.id.as_str(), TaskInstance::new(name, args));
    }

    let node = |id: &str| -> &TreeNode { tree.node(id).expect("validated tree") };
    let mut methods = Vec::new();
    let mut primitive_tasks = Vec::new();
    for e in tree.edges() {
        let parent_task = task_of[e.parent.as_str()].clone();
        if tree.is_leaf(&e.child) {
            let child = &node(&e.child).subgoal;
            let parent = &node(&e.parent).subgoal;
            primitive_tasks.push(PrimitiveTask {
                name: e.edge_id.clone(),
                parameters: Vec::new(),
                pre_pos: child.clone(),
                pre_neg: SymbolicState::new(),
                eff_pos: parent.clone(),
                eff_neg: child.difference(parent),
                achieves: Some(parent_task),
            });
        } else {
            methods.push(Method {
                id: e.edge_id.clone(),
                abstract_task: parent_task,
                parameters: Vec::new(),
                subnetwork: TaskNetwork::sequence(vec![task_of[e.child.as_str()].clone()]),
            });
        }
    }

    let mut types: Vec<String> = Vec::new();
    let mut add_type = |t: &str| {
        if !types.iter().any(|x| x == t) {
            types.push(t.to_string());
        }
    };
    for p in vocab.predicates() {
        p.arg_types.iter().for_each(|t| add_type(t));
    }
    for (_, t) in objects.iter() {
        add_type(t);
    }

    let root = tree.root();
    let domain = HtnDomain {
        name: "somarl".into(),
        types,
        constants: objects.clone(),
        predicates: vocab.clone(),
        primitive_tasks,
        abstract_tasks,
        methods,
    };
    let initial_network = match task_of.get(root.id.as_str()) {
        Some(t) => TaskNetwork::sequence(vec![t.clone()]),
        // A single-node tree has nothing to decompose.
        None => TaskNetwork::default(),
    };
    let problem = HtnProblem {
        name: "tree".into(),
        domain,
        objects: Objects::new(),
        initial_state: tree.initial_leaf().subgoal.clone(),
        initial_network,
    };
    problem.validate()?;
    Ok(problem)
}
