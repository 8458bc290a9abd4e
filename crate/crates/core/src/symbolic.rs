//! Ground-atom symbolic states and the abstraction from environment states.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid_env::{EnvState, GridMap, Region};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymbolicError {
    #[error("malformed atom {0:?}")]
    MalformedAtom(String),
    #[error("predicate {0:?} declared twice")]
    DuplicatePredicate(String),
    #[error("unknown predicate {0:?}")]
    UnknownPredicate(String),
    #[error("atom {atom} has {got} arguments, predicate expects {expected}")]
    Arity {
        atom: String,
        expected: usize,
        got: usize,
    },
    #[error("atom {atom}: argument {arg:?} is not a declared object of type {expected}")]
    ArgumentType {
        atom: String,
        arg: String,
        expected: String,
    },
    #[error("evaluator error: {0}")]
    Evaluator(String),
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub name: String,
    pub arg_types: Vec<String>,
}

impl Predicate {
    pub fn new(name: impl Into<String>, arg_types: &[&str]) -> Self {
        Self {
            name: name.into(),
            arg_types: arg_types.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn arity(&self) -> usize {
        self.arg_types.len()
    }
}

/// Predicates keyed by name, in declaration order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    predicates: Vec<Predicate>,
}

impl Vocabulary {
    pub fn new(predicates: Vec<Predicate>) -> Result<Self, SymbolicError> {
        let mut v = Self::default();
        for p in predicates {
            v.add(p)?;
        }
        Ok(v)
    }

    /// at(agent, region), in_room(agent, room), box_in(region), carrying(),
    /// has_key(key), at_goal().
    pub fn standard() -> Self {
        Self {
            predicates: vec![
                Predicate::new("at", &["agent", "region"]),
                Predicate::new("in_room", &["agent", "room"]),
                Predicate::new("box_in", &["region"]),
                Predicate::new("carrying", &[]),
                Predicate::new("has_key", &["key"]),
                Predicate::new("at_goal", &[]),
            ],
        }
    }

    pub fn add(&mut self, p: Predicate) -> Result<(), SymbolicError> {
        if self.get(&p.name).is_some() {
            return Err(SymbolicError::DuplicatePredicate(p.name));
        }
        self.predicates.push(p);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Predicate> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn predicates(&self) -> &[Predicate] {
        &self.predicates
    }
}

/// Typed object universe, in declaration order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Objects {
    entries: Vec<(String, String)>,
}

impl Objects {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false if the name was already declared.
    pub fn add(&mut self, name: impl Into<String>, ty: impl Into<String>) -> bool {
        let name = name.into();
        if self.type_of(&name).is_some() {
            return false;
        }
        self.entries.push((name, ty.into()));
        true
    }

    pub fn type_of(&self, name: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.as_str())
    }

    pub fn of_type<'a>(&'a self, ty: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .iter()
            .filter(move |(_, t)| t == ty)
            .map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t.as_str()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroundAtom {
    pub predicate: String,
    pub args: Vec<String>,
}

impl GroundAtom {
    pub fn new(predicate: impl Into<String>, args: &[&str]) -> Self {
        Self {
            predicate: predicate.into(),
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Checks arity and argument types against a vocabulary and universe.
    /// Arguments starting with `?` are variables and skip the type check.
    pub fn check(&self, vocabulary: &Vocabulary, objects: &Objects) -> Result<(), SymbolicError> {
        let pred = vocabulary
            .get(&self.predicate)
            .ok_or_else(|| SymbolicError::UnknownPredicate(self.predicate.clone()))?;
        if pred.arity() != self.args.len() {
            return Err(SymbolicError::Arity {
                atom: self.to_string(),
                expected: pred.arity(),
                got: self.args.len(),
            });
        }
        for (arg, ty) in self.args.iter().zip(&pred.arg_types) {
            if arg.starts_with('?') {
                continue;
            }
            if objects.type_of(arg) != Some(ty.as_str()) {
                return Err(SymbolicError::ArgumentType {
                    atom: self.to_string(),
                    arg: arg.clone(),
                    expected: ty.clone(),
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.predicate, self.args.join(","))
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    let first_ok = chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_' || c == '?');
    first_ok && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl FromStr for GroundAtom {
    type Err = SymbolicError;

    /// `name(a, b)`, `name()` or bare `name`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SymbolicError::MalformedAtom(s.to_string());
        let s_trim = s.trim();
        let (name, args) = match s_trim.find('(') {
            None => (s_trim, Vec::new()),
            Some(open) => {
                let inner = s_trim[open + 1..].strip_suffix(')').ok_or_else(bad)?;
                let args = if inner.trim().is_empty() {
                    Vec::new()
                } else {
                    inner.split(',').map(|a| a.trim().to_string()).collect()
                };
                (s_trim[..open].trim(), args)
            }
        };
        if !is_ident(name) || args.iter().any(|a| !is_ident(a)) {
            return Err(bad());
        }
        Ok(Self {
            predicate: name.to_string(),
            args,
        })
    }
}

/// A closed-world set of ground atoms.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SymbolicState(BTreeSet<GroundAtom>);

impl SymbolicState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, atom: GroundAtom) -> bool {
        self.0.insert(atom)
    }

    pub fn contains(&self, atom: &GroundAtom) -> bool {
        self.0.contains(atom)
    }

    pub fn is_subset(&self, other: &SymbolicState) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = &GroundAtom> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn difference(&self, other: &SymbolicState) -> SymbolicState {
        Self(self.0.difference(&other.0).cloned().collect())
    }
}

impl FromIterator<GroundAtom> for SymbolicState {
    fn from_iter<T: IntoIterator<Item = GroundAtom>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl fmt::Display for SymbolicState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str("}")
    }
}

/// How a subgoal is compared with the abstraction of the current state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchMode {
    /// Every subgoal atom holds; other atoms are ignored.
    #[default]
    Subset,
    /// The abstraction equals the subgoal exactly.
    Exact,
}

/// Subgoal matching over a fixed vocabulary.
#[derive(Clone, Debug)]
pub struct Matcher {
    vocabulary: Vocabulary,
    mode: MatchMode,
}

impl Matcher {
    pub fn new(vocabulary: Vocabulary, mode: MatchMode) -> Self {
        Self { vocabulary, mode }
    }

    pub fn mode(&self) -> MatchMode {
        self.mode
    }

    pub fn matches(&self, target: &SymbolicState, current: &SymbolicState) -> Result<bool, SymbolicError> {
        for atom in target.iter().chain(current.iter()) {
            if self.vocabulary.get(&atom.predicate).is_none() {
                return Err(SymbolicError::VocabularyMismatch(format!(
                    "{atom} uses a predicate outside the vocabulary"
                )));
            }
        }
        Ok(match self.mode {
            MatchMode::Subset => target.is_subset(current),
            MatchMode::Exact => target == current,
        })
    }
}

/// Built-in evaluation procedures, selected by predicate name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Evaluator {
    /// `at` / `in_room`: agent position inside a named region.
    AgentIn,
    /// `box_in`: box position inside a named region.
    BoxIn,
    Carrying,
    /// `has_key(kN)` tests key N; any other key object tests "some key".
    HasKey,
    /// Box on a goal cell when a box exists, otherwise an agent on treasure.
    AtGoal,
}

impl Evaluator {
    fn for_predicate(name: &str) -> Option<Self> {
        Some(match name {
            "at" | "in_room" => Self::AgentIn,
            "box_in" => Self::BoxIn,
            "carrying" => Self::Carrying,
            "has_key" => Self::HasKey,
            "at_goal" => Self::AtGoal,
            _ => return None,
        })
    }
}

/// The abstraction F from environment states to symbolic states.
#[derive(Clone, Debug)]
pub struct AbstractionFn {
    map: Arc<GridMap>,
    vocabulary: Vocabulary,
    objects: Objects,
    evaluators: BTreeMap<String, Evaluator>,
    agents: BTreeMap<String, usize>,
    groundings: Vec<GroundAtom>,
}

impl AbstractionFn {
    /// Builds F for a map. Agent objects bind to agents 0 and 1 in declaration
    /// order; region and room objects must name map regions.
    pub fn new(map: Arc<GridMap>, vocabulary: Vocabulary, objects: Objects) -> Result<Self, SymbolicError> {
        let mut evaluators = BTreeMap::new();
        for p in vocabulary.predicates() {
            let ev = Evaluator::for_predicate(&p.name).ok_or_else(|| {
                SymbolicError::Evaluator(format!("no evaluator for predicate {:?}", p.name))
            })?;
            evaluators.insert(p.name.clone(), ev);
        }
        let agents: BTreeMap<String, usize> = objects
            .of_type("agent")
            .enumerate()
            .map(|(i, n)| (n.to_string(), i))
            .collect();
        if agents.len() > 2 {
            return Err(SymbolicError::Evaluator(format!(
                "{} agent objects declared, the environment has 2",
                agents.len()
            )));
        }
        for (name, ty) in objects.iter() {
            if (ty == "region" || ty == "room") && map.region(name).is_none() {
                return Err(SymbolicError::Evaluator(format!(
                    "{ty} object {name:?} is not a region of the map"
                )));
            }
        }

        let mut groundings = Vec::new();
        for p in vocabulary.predicates() {
            let mut partial: Vec<Vec<String>> = vec![Vec::new()];
            for ty in &p.arg_types {
                let candidates: Vec<&str> = objects.of_type(ty).collect();
                partial = partial
                    .into_iter()
                    .flat_map(|prefix| {
                        candidates.iter().map(move |c| {
                            let mut v = prefix.clone();
                            v.push(c.to_string());
                            v
                        })
                    })
                    .collect();
            }
            groundings.extend(partial.into_iter().map(|args| GroundAtom {
                predicate: p.name.clone(),
                args,
            }));
        }

        Ok(Self {
            map,
            vocabulary,
            objects,
            evaluators,
            agents,
            groundings,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn objects(&self) -> &Objects {
        &self.objects
    }

    fn region(&self, name: &str) -> Result<&Region, SymbolicError> {
        self.map
            .region(name)
            .ok_or_else(|| SymbolicError::Evaluator(format!("unknown region {name:?}")))
    }

    fn arg<'a>(&self, atom: &'a GroundAtom, i: usize) -> Result<&'a str, SymbolicError> {
        atom.args
            .get(i)
            .map(String::as_str)
            .ok_or_else(|| SymbolicError::Evaluator(format!("{atom} is missing argument {i}")))
    }

    /// Truth value of one atom in `state`.
    pub fn holds(&self, atom: &GroundAtom, state: &EnvState) -> Result<bool, SymbolicError> {
        let ev = self
            .evaluators
            .get(&atom.predicate)
            .ok_or_else(|| SymbolicError::UnknownPredicate(atom.predicate.clone()))?;
        Ok(match ev {
            Evaluator::AgentIn => {
                let agent = self.arg(atom, 0)?;
                let idx = *self
                    .agents
                    .get(agent)
                    .ok_or_else(|| SymbolicError::Evaluator(format!("unknown agent {agent:?}")))?;
                self.region(self.arg(atom, 1)?)?.contains(state.agent_pos[idx])
            }
            Evaluator::BoxIn => {
                let region = self.region(self.arg(atom, 0)?)?;
                state.box_pos.is_some_and(|p| region.contains(p))
            }
            Evaluator::Carrying => state.carrying,
            Evaluator::HasKey => {
                let key = self.arg(atom, 0)?;
                let specific = key
                    .strip_prefix("key")
                    .or_else(|| key.strip_prefix('k'))
                    .and_then(|d| d.parse::<u8>().ok());
                match specific {
                    Some(k) => state.has_key(k),
                    None => state.keys_collected != 0,
                }
            }
            Evaluator::AtGoal => match state.box_pos {
                Some(p) => self.region("goal")?.contains(p),
                None => {
                    let treasure = self.region("treasure")?;
                    state.agent_pos.iter().any(|&p| treasure.contains(p))
                }
            },
        })
    }

    /// Every ground atom of the vocabulary that holds in `state`.
    pub fn abstract_state(&self, state: &EnvState) -> Result<SymbolicState, SymbolicError> {
        let mut out = SymbolicState::new();
        for atom in &self.groundings {
            if self.holds(atom, state)? {
                out.insert(atom.clone());
            }
        }
        Ok(out)
    }

    /// Whether `target` is satisfied under `mode`. In subset mode only the
    /// target's atoms are evaluated.
    pub fn satisfies(&self, target: &SymbolicState, state: &EnvState, mode: MatchMode) -> Result<bool, SymbolicError> {
        match mode {
            MatchMode::Subset => {
                for atom in target.iter() {
                    if !self.holds(atom, state)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            MatchMode::Exact => Ok(&self.abstract_state(state)? == target),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_env::{GridEnv, Pos, TaskVariant};

    const ROOMS: &str = "\
#######
#..T..#
###C###
#L...P#
#..r.b#
#######
[regions]
upper: (1,1)-(5,1)
lower: (1,3)-(5,4)
";

    fn setup() -> (GridEnv, AbstractionFn) {
        let map = Arc::new(GridMap::parse(ROOMS).unwrap());
        let mut objects = Objects::new();
        for (n, t) in [
            ("r1", "agent"),
            ("r2", "agent"),
            ("lever", "region"),
            ("trap", "region"),
            ("upper", "room"),
            ("lower", "room"),
        ] {
            objects.add(n, t);
        }
        let vocab = Vocabulary::new(vec![
            Predicate::new("at", &["agent", "region"]),
            Predicate::new("in_room", &["agent", "room"]),
            Predicate::new("at_goal", &[]),
        ])
        .unwrap();
        let f = AbstractionFn::new(map.clone(), vocab, objects).unwrap();
        (GridEnv::new(map, TaskVariant::FindTreasure, 100).unwrap(), f)
    }

    fn atom(s: &str) -> GroundAtom {
        s.parse().unwrap()
    }

    #[test]
    fn atom_syntax() {
        assert_eq!(atom("at(r1, lever)"), GroundAtom::new("at", &["r1", "lever"]));
        assert_eq!(atom("carrying()"), GroundAtom::new("carrying", &[]));
        assert_eq!(atom("at_goal"), GroundAtom::new("at_goal", &[]));
        assert_eq!(atom("at(r1,lever)").to_string(), "at(r1,lever)");
        assert!("at(r1".parse::<GroundAtom>().is_err());
        assert!("at(r1,)".parse::<GroundAtom>().is_err());
    }

    #[test]
    fn initial_state_abstraction() {
        let (env, f) = setup();
        let (s, _) = env.reset(0);
        let abs = f.abstract_state(&s).unwrap();
        let expected: SymbolicState = [atom("in_room(r1,lower)"), atom("in_room(r2,lower)")]
            .into_iter()
            .collect();
        assert_eq!(abs, expected);
        assert_eq!(f.abstract_state(&s).unwrap(), abs);
    }

    #[test]
    fn agent_on_lever() {
        let (env, f) = setup();
        let (mut s, _) = env.reset(0);
        s.agent_pos[1] = Pos::new(1, 3);
        let abs = f.abstract_state(&s).unwrap();
        assert!(abs.contains(&atom("at(r2,lever)")));
        assert!(!abs.contains(&atom("at(r1,lever)")));
    }

    #[test]
    fn subset_and_exact_matching() {
        let m = Matcher::new(Vocabulary::standard(), MatchMode::Subset);
        let current: SymbolicState = [atom("at(r2,lever)"), atom("in_room(r1,lower)")].into_iter().collect();
        let target: SymbolicState = [atom("at(r2,lever)")].into_iter().collect();
        assert!(m.matches(&target, &current).unwrap());
        assert!(m.matches(&SymbolicState::new(), &current).unwrap());
        let missing: SymbolicState = [atom("at(r1,treasure)")].into_iter().collect();
        assert!(!m.matches(&missing, &current).unwrap());

        let exact = Matcher::new(Vocabulary::standard(), MatchMode::Exact);
        assert!(!exact.matches(&target, &current).unwrap());
        assert!(exact.matches(&current, &current).unwrap());

        let alien: SymbolicState = [atom("flying(r1)")].into_iter().collect();
        assert!(matches!(
            m.matches(&alien, &current),
            Err(SymbolicError::VocabularyMismatch(_))
        ));
    }

    #[test]
    fn unknown_region_object_rejected() {
        let map = Arc::new(GridMap::parse(ROOMS).unwrap());
        let mut objects = Objects::new();
        objects.add("r1", "agent");
        objects.add("attic", "region");
        let err = AbstractionFn::new(map, Vocabulary::standard(), objects).unwrap_err();
        assert!(matches!(err, SymbolicError::Evaluator(_)));
    }

    #[test]
    fn holds_rejects_unknown_region_at_evaluation() {
        let (env, f) = setup();
        let (s, _) = env.reset(0);
        let err = f.holds(&atom("at(r1,attic)"), &s).unwrap_err();
        assert!(matches!(err, SymbolicError::Evaluator(_)));
    }

    #[test]
    fn type_checking() {
        let mut objects = Objects::new();
        objects.add("r1", "agent");
        objects.add("lever", "region");
        let v = Vocabulary::standard();
        assert!(atom("at(r1,lever)").check(&v, &objects).is_ok());
        assert!(matches!(
            atom("at(lever,r1)").check(&v, &objects),
            Err(SymbolicError::ArgumentType { .. })
        ));
        assert!(matches!(atom("at(r1)").check(&v, &objects), Err(SymbolicError::Arity { .. })));
    }
}
