//! Subgoal knowledge trees.
//!
//! The root is the goal state and at least one leaf is the initial state.
//! Each edge id names both a decomposition method and a symbolic option.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symbolic::{GroundAtom, Objects, Predicate, SymbolicError, SymbolicState, Vocabulary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KnowledgeError {
    #[error("knowledge parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("edges form a cycle through node {0:?}")]
    Cycle(String),
    #[error("tree must have exactly one root: {0}")]
    MultipleRoots(String),
    #[error(transparent)]
    Symbol(#[from] SymbolicError),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("node {0:?} is not a leaf")]
    NotALeaf(String),
    #[error("binding error: {0}")]
    BindingType(String),
    #[error("invalid knowledge tree: {0}")]
    Validation(String),
}

impl KnowledgeError {
    /// Convenience for callers that only care about predicate errors.
    pub fn is_unknown_predicate(&self) -> bool {
        matches!(self, Self::Symbol(SymbolicError::UnknownPredicate(_)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: String,
    pub subgoal: SymbolicState,
    pub is_root: bool,
    pub is_initial_leaf: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeEdge {
    pub parent: String,
    pub child: String,
    pub edge_id: String,
}

/// Object substitution applied to a node's subgoal. Keys are variables
/// (`?x`) or declared objects; values are declared objects.
pub type Binding = BTreeMap<String, String>;

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeTree {
    vocabulary: Vocabulary,
    objects: Objects,
    nodes: Vec<TreeNode>,
    edges: Vec<TreeEdge>,
    node_index: BTreeMap<String, usize>,
    parent_edge: BTreeMap<String, usize>,
    children: BTreeMap<String, Vec<usize>>,
}

impl KnowledgeTree {
    /// Builds and validates a tree.
    pub fn from_parts(
        vocabulary: Vocabulary,
        objects: Objects,
        nodes: Vec<TreeNode>,
        edges: Vec<TreeEdge>,
    ) -> Result<Self, KnowledgeError> {
        let mut tree = Self {
            vocabulary,
            objects,
            nodes,
            edges,
            node_index: BTreeMap::new(),
            parent_edge: BTreeMap::new(),
            children: BTreeMap::new(),
        };
        tree.validate()?;
        Ok(tree)
    }

    fn validate(&mut self) -> Result<(), KnowledgeError> {
        let invalid = |m: String| Err(KnowledgeError::Validation(m));
        if self.nodes.is_empty() {
            return invalid("tree has no nodes".into());
        }
        self.node_index.clear();
        for (i, n) in self.nodes.iter().enumerate() {
            if self.node_index.insert(n.id.clone(), i).is_some() {
                return invalid(format!("node {:?} declared twice", n.id));
            }
        }
        let mut edge_ids = BTreeSet::new();
        self.parent_edge.clear();
        self.children.clear();
        for (i, e) in self.edges.iter().enumerate() {
            if !edge_ids.insert(e.edge_id.as_str()) {
                return invalid(format!("edge id {:?} used twice", e.edge_id));
            }
            for end in [&e.parent, &e.child] {
                if !self.node_index.contains_key(end) {
                    return Err(KnowledgeError::UnknownNode(end.clone()));
                }
            }
            if e.parent == e.child {
                return Err(KnowledgeError::Cycle(e.child.clone()));
            }
            if self.parent_edge.insert(e.child.clone(), i).is_some() {
                return invalid(format!("node {:?} has more than one parent", e.child));
            }
            self.children.entry(e.parent.clone()).or_default().push(i);
        }

        // Walking parent pointers from every node must end at a parentless node.
        for n in &self.nodes {
            let mut seen = BTreeSet::new();
            let mut cur = n.id.as_str();
            while let Some(&ei) = self.parent_edge.get(cur) {
                if !seen.insert(cur) {
                    return Err(KnowledgeError::Cycle(cur.to_string()));
                }
                cur = &self.edges[ei].parent;
            }
        }

        let marked: Vec<&str> = self.nodes.iter().filter(|n| n.is_root).map(|n| n.id.as_str()).collect();
        if marked.len() != 1 {
            return Err(KnowledgeError::MultipleRoots(format!(
                "{} nodes marked root",
                marked.len()
            )));
        }
        let parentless: Vec<&str> = self
            .nodes
            .iter()
            .filter(|n| !self.parent_edge.contains_key(&n.id))
            .map(|n| n.id.as_str())
            .collect();
        if parentless != marked {
            return Err(KnowledgeError::MultipleRoots(format!(
                "parentless nodes {parentless:?}, root {marked:?}"
            )));
        }

        if !self.nodes.iter().any(|n| n.is_initial_leaf) {
            return invalid("no node is marked initial".into());
        }
        for n in self.nodes.iter().filter(|n| n.is_initial_leaf) {
            if self.children.contains_key(&n.id) {
                return invalid(format!("initial node {:?} is not a leaf", n.id));
            }
        }

        let mut subgoals = BTreeMap::new();
        for n in &self.nodes {
            for atom in n.subgoal.iter() {
                atom.check(&self.vocabulary, &self.objects)?;
            }
            if let Some(other) = subgoals.insert(&n.subgoal, &n.id) {
                return invalid(format!("nodes {other:?} and {:?} have identical subgoals", n.id));
            }
        }
        if self.vocabulary.get("at_goal").is_some_and(|p| p.arity() == 0) {
            let root = self.root();
            if !root.subgoal.contains(&GroundAtom::new("at_goal", &[])) {
                return invalid(format!("root {:?} does not entail at_goal()", root.id));
            }
        }
        Ok(())
    }

    /// Parses the line-oriented knowledge format.
    pub fn parse(text: &str) -> Result<Self, KnowledgeError> {
        let mut vocabulary = Vocabulary::default();
        let mut objects = Objects::new();
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let perr = |message: String| KnowledgeError::Parse { line: line_no, message };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            match keyword {
                "predicate" => {
                    let mut parts = rest.split_whitespace();
                    let sig = parts.next().ok_or_else(|| perr("expected `name/arity`".into()))?;
                    let (name, arity) = sig
                        .split_once('/')
                        .ok_or_else(|| perr(format!("expected `name/arity`, got {sig:?}")))?;
                    let arity: usize = arity.parse().map_err(|_| perr(format!("bad arity in {sig:?}")))?;
                    let types: Vec<&str> = parts.collect();
                    if types.len() != arity {
                        return Err(perr(format!(
                            "predicate {name} has arity {arity} but {} argument types",
                            types.len()
                        )));
                    }
                    vocabulary
                        .add(Predicate::new(name, &types))
                        .map_err(|e| perr(e.to_string()))?;
                }
                "object" => {
                    let (names, ty) = rest
                        .split_once(':')
                        .ok_or_else(|| perr("expected `object <name>... : <type>`".into()))?;
                    let ty = ty.trim();
                    if ty.is_empty() || ty.contains(char::is_whitespace) {
                        return Err(perr("object type must be a single identifier".into()));
                    }
                    let names: Vec<&str> = names.split_whitespace().collect();
                    if names.is_empty() {
                        return Err(perr("object declaration names nothing".into()));
                    }
                    for n in names {
                        if !objects.add(n, ty) {
                            return Err(perr(format!("object {n:?} declared twice")));
                        }
                    }
                }
                "node" => {
                    let open = rest.find('{').ok_or_else(|| perr("expected `{`".into()))?;
                    let close = rest.rfind('}').ok_or_else(|| perr("expected `}`".into()))?;
                    if close < open {
                        return Err(perr("`}` before `{`".into()));
                    }
                    let id = rest[..open].trim();
                    if id.is_empty() || id.contains(char::is_whitespace) {
                        return Err(perr("node id must be a single identifier".into()));
                    }
                    let mut subgoal = SymbolicState::new();
                    for tok in split_atoms(&rest[open + 1..close]).map_err(perr)? {
                        subgoal.insert(tok.parse().map_err(|e: SymbolicError| perr(e.to_string()))?);
                    }
                    let (mut is_root, mut is_initial_leaf) = (false, false);
                    for flag in rest[close + 1..].split_whitespace() {
                        match flag {
                            "root" => is_root = true,
                            "initial" => is_initial_leaf = true,
                            other => return Err(perr(format!("unknown node flag {other:?}"))),
                        }
                    }
                    nodes.push(TreeNode {
                        id: id.to_string(),
                        subgoal,
                        is_root,
                        is_initial_leaf,
                    });
                }
                "edge" => {
                    let (arrow, edge_id) = rest
                        .split_once(':')
                        .ok_or_else(|| perr("expected `edge <parent> -> <child> : <id>`".into()))?;
                    let (parent, child) = arrow
                        .split_once("->")
                        .ok_or_else(|| perr("expected `->`".into()))?;
                    let (parent, child, edge_id) = (parent.trim(), child.trim(), edge_id.trim());
                    if [parent, child, edge_id].iter().any(|s| s.is_empty() || s.contains(char::is_whitespace)) {
                        return Err(perr("edge endpoints and id must be single identifiers".into()));
                    }
                    edges.push(TreeEdge {
                        parent: parent.into(),
                        child: child.into(),
                        edge_id: edge_id.into(),
                    });
                }
                other => return Err(perr(format!("unknown keyword {other:?}"))),
            }
        }
        Self::from_parts(vocabulary, objects, nodes, edges)
    }

    /// Serializes back to the knowledge format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in self.vocabulary.predicates() {
            let _ = writeln!(out, "predicate {}/{} {}", p.name, p.arity(), p.arg_types.join(" "));
        }
        for (n, t) in self.objects.iter() {
            let _ = writeln!(out, "object {n} : {t}");
        }
        for n in &self.nodes {
            let atoms: Vec<String> = n.subgoal.iter().map(|a| a.to_string()).collect();
            let mut flags = String::new();
            if n.is_root {
                flags.push_str(" root");
            }
            if n.is_initial_leaf {
                flags.push_str(" initial");
            }
            let _ = writeln!(out, "node {} {{ {} }}{}", n.id, atoms.join(" "), flags);
        }
        for e in &self.edges {
            let _ = writeln!(out, "edge {} -> {} : {}", e.parent, e.child, e.edge_id);
        }
        out
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn objects(&self) -> &Objects {
        &self.objects
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[TreeEdge] {
        &self.edges
    }

    pub fn node(&self, id: &str) -> Option<&TreeNode> {
        self.node_index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn edge(&self, edge_id: &str) -> Option<&TreeEdge> {
        self.edges.iter().find(|e| e.edge_id == edge_id)
    }

    pub fn root(&self) -> &TreeNode {
        self.nodes.iter().find(|n| n.is_root).expect("validated tree has a root")
    }

    /// First node marked initial, in declaration order.
    pub fn initial_leaf(&self) -> &TreeNode {
        self.nodes
            .iter()
            .find(|n| n.is_initial_leaf)
            .expect("validated tree has an initial leaf")
    }

    pub fn is_leaf(&self, id: &str) -> bool {
        !self.children.contains_key(id)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| self.is_leaf(&n.id))
    }

    /// Edges from `id` to its children, in declaration order.
    pub fn child_edges(&self, id: &str) -> impl Iterator<Item = &TreeEdge> {
        self.children
            .get(id)
            .into_iter()
            .flatten()
            .map(|&i| &self.edges[i])
    }

    pub fn parent_edge(&self, id: &str) -> Option<&TreeEdge> {
        self.parent_edge.get(id).map(|&i| &self.edges[i])
    }

    pub fn depth(&self, id: &str) -> Option<usize> {
        self.node(id)?;
        let mut d = 0;
        let mut cur = id;
        while let Some(e) = self.parent_edge(cur) {
            d += 1;
            cur = &e.parent;
        }
        Some(d)
    }

    /// The unique leaf-to-root edge sequence, leaf side first.
    pub fn path_to_root(&self, leaf: &str) -> Result<Vec<&TreeEdge>, KnowledgeError> {
        if self.node(leaf).is_none() {
            return Err(KnowledgeError::UnknownNode(leaf.to_string()));
        }
        if !self.is_leaf(leaf) {
            return Err(KnowledgeError::NotALeaf(leaf.to_string()));
        }
        let mut path = Vec::new();
        let mut cur = leaf;
        while let Some(e) = self.parent_edge(cur) {
            path.push(e);
            cur = &e.parent;
        }
        Ok(path)
    }

    /// Horizontal expansion: grounds `node`'s subgoal under each binding and
    /// adds a sibling for every grounding not already in the tree, with a copy
    /// of the parent edge under a fresh edge id. Returns the node ids of all
    /// groundings, existing ones included, without duplicates.
    pub fn instantiate_subgoal(&mut self, node: &str, bindings: &[Binding]) -> Result<Vec<String>, KnowledgeError> {
        let source = self
            .node(node)
            .cloned()
            .ok_or_else(|| KnowledgeError::UnknownNode(node.to_string()))?;
        let parent = self
            .parent_edge(node)
            .cloned()
            .ok_or_else(|| KnowledgeError::BindingType("the root cannot be instantiated".into()))?;

        let mut result: Vec<String> = Vec::new();
        for binding in bindings {
            for (from, to) in binding {
                let to_ty = self
                    .objects
                    .type_of(to)
                    .ok_or_else(|| KnowledgeError::BindingType(format!("unknown object {to:?}")))?;
                if !from.starts_with('?') {
                    let from_ty = self
                        .objects
                        .type_of(from)
                        .ok_or_else(|| KnowledgeError::BindingType(format!("unknown object {from:?}")))?;
                    if from_ty != to_ty {
                        return Err(KnowledgeError::BindingType(format!(
                            "{from} is a {from_ty} but {to} is a {to_ty}"
                        )));
                    }
                }
            }
            let subgoal: SymbolicState = source
                .subgoal
                .iter()
                .map(|a| GroundAtom {
                    predicate: a.predicate.clone(),
                    args: a
                        .args
                        .iter()
                        .map(|x| binding.get(x).cloned().unwrap_or_else(|| x.clone()))
                        .collect(),
                })
                .collect();
            for a in subgoal.iter() {
                a.check(&self.vocabulary, &self.objects)
                    .map_err(|e| KnowledgeError::BindingType(e.to_string()))?;
            }
            let id = match self.nodes.iter().find(|n| n.subgoal == subgoal) {
                Some(existing) => existing.id.clone(),
                None => {
                    let id = self.fresh_node_id(&source.id);
                    let edge_id = self.fresh_edge_id(&parent.edge_id);
                    self.nodes.push(TreeNode {
                        id: id.clone(),
                        subgoal,
                        is_root: false,
                        is_initial_leaf: false,
                    });
                    self.edges.push(TreeEdge {
                        parent: parent.parent.clone(),
                        child: id.clone(),
                        edge_id,
                    });
                    self.validate()?;
                    id
                }
            };
            if !result.contains(&id) {
                result.push(id);
            }
        }
        Ok(result)
    }

    fn fresh_node_id(&self, base: &str) -> String {
        (1..)
            .map(|k| format!("{base}_{k}"))
            .find(|id| self.node(id).is_none())
            .expect("unbounded search")
    }

    fn fresh_edge_id(&self, base: &str) -> String {
        let prefix = base.trim_end_matches(|c: char| c.is_ascii_digit());
        if prefix.len() < base.len() {
            let next = self
                .edges
                .iter()
                .filter_map(|e| e.edge_id.strip_prefix(prefix)?.parse::<u64>().ok())
                .max()
                .map_or(0, |m| m + 1);
            return format!("{prefix}{next}");
        }
        (1..)
            .map(|k| format!("{base}_{k}"))
            .find(|id| self.edge(id).is_none())
            .expect("unbounded search")
    }
}

/// Splits `at(r1, lever) carrying()` into atom tokens.
fn split_atoms(body: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut depth = 0usize;
    for c in body.chars() {
        match c {
            '(' => {
                depth += 1;
                cur.push(c);
            }
            ')' => {
                depth = depth.checked_sub(1).ok_or("unbalanced `)`")?;
                cur.push(c);
                if depth == 0 {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c if c.is_whitespace() && depth == 0 => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if depth != 0 {
        return Err("unbalanced `(`".into());
    }
    if !cur.trim().is_empty() {
        out.push(cur);
    }
    Ok(out)
}

/// Natural ordering for identifiers with numeric suffixes, so `so_2 < so_10`.
pub fn natural_cmp(a: &str, b: &str) -> std::cmp::Ordering {
    let split = |s: &str| {
        let head = s.trim_end_matches(|c: char| c.is_ascii_digit());
        (head.to_string(), s[head.len()..].parse::<u64>().ok())
    };
    let (ha, na) = split(a);
    let (hb, nb) = split(b);
    ha.cmp(&hb).then(na.cmp(&nb)).then_with(|| a.cmp(b))
}
