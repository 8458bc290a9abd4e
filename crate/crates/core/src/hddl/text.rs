//! S-expression reader and writer for the supported HDDL subset.

use std::fmt::Write as _;

use super::{
    AbstractTask, HddlError, HtnDomain, HtnProblem, Method, PrimitiveTask, TaskInstance, TaskNetwork, TypedParam,
};
use crate::symbolic::{GroundAtom, Objects, Predicate, SymbolicState, Vocabulary};

#[derive(Clone, Debug)]
enum Sexp {
    Atom { text: String, line: usize, column: usize },
    List { items: Vec<Sexp>, line: usize, column: usize },
}

impl Sexp {
    fn pos(&self) -> (usize, usize) {
        match self {
            Sexp::Atom { line, column, .. } | Sexp::List { line, column, .. } => (*line, *column),
        }
    }

    fn atom(&self) -> Option<&str> {
        match self {
            Sexp::Atom { text, .. } => Some(text),
            Sexp::List { .. } => None,
        }
    }

    fn list(&self) -> Option<&[Sexp]> {
        match self {
            Sexp::List { items, .. } => Some(items),
            Sexp::Atom { .. } => None,
        }
    }

    fn err(&self, message: impl Into<String>) -> HddlError {
        let (line, column) = self.pos();
        HddlError::Parse {
            line,
            column,
            message: message.into(),
        }
    }

    fn unsupported(&self, feature: impl Into<String>) -> HddlError {
        let (line, column) = self.pos();
        HddlError::UnsupportedFeature {
            line,
            column,
            feature: feature.into(),
        }
    }

    fn expect_atom(&self, what: &str) -> Result<&str, HddlError> {
        self.atom().ok_or_else(|| self.err(format!("expected {what}")))
    }

    fn expect_list(&self, what: &str) -> Result<&[Sexp], HddlError> {
        self.list().ok_or_else(|| self.err(format!("expected {what}")))
    }

    /// Head keyword of a list, lowercased.
    fn head(&self) -> Option<String> {
        self.list()?.first()?.atom().map(str::to_ascii_lowercase)
    }
}

fn read_sexp(text: &str) -> Result<Sexp, HddlError> {
    let mut stack: Vec<(Vec<Sexp>, usize, usize)> = Vec::new();
    let mut top: Option<Sexp> = None;
    let mut chars = text.chars().peekable();
    let (mut line, mut column) = (1usize, 0usize);
    let err = |line, column, message: &str| HddlError::Parse {
        line,
        column,
        message: message.to_string(),
    };
    let push = |stack: &mut Vec<(Vec<Sexp>, usize, usize)>, s: Sexp, top: &mut Option<Sexp>| -> Result<(), HddlError> {
        match stack.last_mut() {
            Some((items, _, _)) => items.push(s),
            None if top.is_none() => *top = Some(s),
            None => {
                let (l, c) = s.pos();
                return Err(err(l, c, "unexpected content after the top-level form"));
            }
        }
        Ok(())
    };
    while let Some(c) = chars.next() {
        column += 1;
        match c {
            '\n' => {
                line += 1;
                column = 0;
            }
            ';' => {
                while chars.peek().is_some_and(|&c| c != '\n') {
                    chars.next();
                }
            }
            '(' => stack.push((Vec::new(), line, column)),
            ')' => {
                let (items, l, c) = stack.pop().ok_or_else(|| err(line, column, "unbalanced `)`"))?;
                push(&mut stack, Sexp::List { items, line: l, column: c }, &mut top)?;
            }
            c if c.is_whitespace() => {}
            c => {
                let (l, col) = (line, column);
                let mut text = String::from(c);
                while let Some(&n) = chars.peek() {
                    if n.is_whitespace() || n == '(' || n == ')' || n == ';' {
                        break;
                    }
                    text.push(n);
                    chars.next();
                    column += 1;
                }
                push(&mut stack, Sexp::Atom { text, line: l, column: col }, &mut top)?;
            }
        }
    }
    if let Some((_, l, c)) = stack.last() {
        return Err(err(*l, *c, "unbalanced `(`"));
    }
    top.ok_or_else(|| err(line, column, "empty input"))
}

/// `?a ?b - type ?c - other`; untyped names default to `object`.
fn typed_list(items: &[Sexp]) -> Result<Vec<TypedParam>, HddlError> {
    let mut out = Vec::new();
    let mut pending: Vec<String> = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let tok = items[i].expect_atom("a name")?;
        if tok == "-" {
            let ty = items
                .get(i + 1)
                .ok_or_else(|| items[i].err("`-` without a type"))?
                .expect_atom("a type name")?;
            if pending.is_empty() {
                return Err(items[i].err("type without names"));
            }
            out.extend(pending.drain(..).map(|n| TypedParam::new(n, ty)));
            i += 2;
        } else {
            pending.push(tok.to_string());
            i += 1;
        }
    }
    out.extend(pending.into_iter().map(|n| TypedParam::new(n, "object")));
    Ok(out)
}

fn plain_atom(s: &Sexp) -> Result<GroundAtom, HddlError> {
    let items = s.expect_list("an atom")?;
    let (head, args) = items.split_first().ok_or_else(|| s.err("empty atom"))?;
    let name = head.expect_atom("a predicate name")?;
    if matches!(name, "and" | "not" | "or" | "forall" | "exists" | "when" | "imply" | "=") {
        return Err(head.unsupported(format!("`{name}` inside a literal")));
    }
    Ok(GroundAtom {
        predicate: name.to_string(),
        args: args
            .iter()
            .map(|a| a.expect_atom("an argument").map(str::to_string))
            .collect::<Result<_, _>>()?,
    })
}

/// A conjunction of literals, split into positive and negative atoms.
fn literals(s: &Sexp) -> Result<(SymbolicState, SymbolicState), HddlError> {
    let mut pos = SymbolicState::new();
    let mut neg = SymbolicState::new();
    let items = s.expect_list("a condition")?;
    if items.is_empty() {
        return Ok((pos, neg));
    }
    let conjuncts: Vec<&Sexp> = match s.head().as_deref() {
        Some("and") => items[1..].iter().collect(),
        _ => vec![s],
    };
    for c in conjuncts {
        match c.head().as_deref() {
            Some("not") => {
                let inner = c.list().unwrap();
                if inner.len() != 2 {
                    return Err(c.err("`not` takes one atom"));
                }
                neg.insert(plain_atom(&inner[1])?);
            }
            Some(kw @ ("or" | "forall" | "exists" | "when" | "imply" | "=" | "and")) => {
                return Err(c.unsupported(format!("`{kw}` conditions")));
            }
            _ => {
                pos.insert(plain_atom(c)?);
            }
        }
    }
    Ok((pos, neg))
}

fn task_instance(s: &Sexp) -> Result<TaskInstance, HddlError> {
    let a = plain_atom(s)?;
    Ok(TaskInstance::new(a.predicate, a.args))
}

/// `()`, `(and e...)` or a single entry; entries are `(id (task ...))` or
/// `(task ...)`.
fn ordered_network(s: &Sexp) -> Result<TaskNetwork, HddlError> {
    let items = s.expect_list("a task list")?;
    if items.is_empty() {
        return Ok(TaskNetwork::default());
    }
    let entries: Vec<&Sexp> = match s.head().as_deref() {
        Some("and") => items[1..].iter().collect(),
        _ => vec![s],
    };
    let mut tasks = Vec::new();
    for (i, e) in entries.into_iter().enumerate() {
        let parts = e.expect_list("a subtask")?;
        match parts {
            [id, inner @ Sexp::List { .. }] if id.atom().is_some() => {
                tasks.push((id.atom().unwrap().to_string(), task_instance(inner)?));
            }
            _ => tasks.push((format!("t{i}"), task_instance(e)?)),
        }
    }
    let net = TaskNetwork::labelled_sequence(tasks);
    if !net.is_well_formed() {
        return Err(s.err("duplicate subtask ids"));
    }
    Ok(net)
}

/// Keyword/value pairs after a name, e.g. `:parameters (...) :task (...)`.
fn keyword_pairs(items: &[Sexp]) -> Result<Vec<(String, &Sexp)>, HddlError> {
    let mut out = Vec::new();
    let mut it = items.iter();
    while let Some(k) = it.next() {
        let key = k.expect_atom("a keyword")?;
        if !key.starts_with(':') {
            return Err(k.err(format!("expected a keyword, got {key:?}")));
        }
        let v = it.next().ok_or_else(|| k.err(format!("{key} without a value")))?;
        out.push((key.to_ascii_lowercase(), v));
    }
    Ok(out)
}

fn define_header<'a>(top: &'a Sexp, kind: &str) -> Result<(String, &'a [Sexp]), HddlError> {
    let items = top.expect_list("`(define ...)`")?;
    if top.head().as_deref() != Some("define") {
        return Err(top.err("expected `(define ...)`"));
    }
    let header = items.get(1).ok_or_else(|| top.err(format!("missing `({kind} <name>)`")))?;
    match header.expect_list(kind)? {
        [k, name] if k.atom().is_some_and(|k| k.eq_ignore_ascii_case(kind)) => {
            Ok((name.expect_atom("a name")?.to_string(), &items[2..]))
        }
        _ => Err(header.err(format!("expected `({kind} <name>)`"))),
    }
}

fn objects_from(params: Vec<TypedParam>, at: &Sexp) -> Result<Objects, HddlError> {
    let mut objects = Objects::new();
    for p in params {
        if !objects.add(p.name.clone(), p.ty) {
            return Err(at.err(format!("object {:?} declared twice", p.name)));
        }
    }
    Ok(objects)
}

/// Parses a domain file.
pub fn parse_domain(text: &str) -> Result<HtnDomain, HddlError> {
    let top = read_sexp(text)?;
    let (name, sections) = define_header(&top, "domain")?;
    let mut domain = HtnDomain {
        name,
        types: Vec::new(),
        constants: Objects::new(),
        predicates: Vocabulary::default(),
        primitive_tasks: Vec::new(),
        abstract_tasks: Vec::new(),
        methods: Vec::new(),
    };
    for sec in sections {
        let items = sec.expect_list("a domain section")?;
        let body = &items[1..];
        match sec.head().as_deref() {
            Some(":requirements") => {}
            Some(":types") => {
                for t in typed_list(body)? {
                    for n in [t.name, t.ty] {
                        if n != "object" && !domain.types.contains(&n) {
                            domain.types.push(n);
                        }
                    }
                }
            }
            Some(":constants") => domain.constants = objects_from(typed_list(body)?, sec)?,
            Some(":predicates") => {
                for p in body {
                    let parts = p.expect_list("a predicate declaration")?;
                    let (head, params) = parts.split_first().ok_or_else(|| p.err("empty predicate"))?;
                    let params = typed_list(params)?;
                    let types: Vec<&str> = params.iter().map(|t| t.ty.as_str()).collect();
                    domain
                        .predicates
                        .add(Predicate::new(head.expect_atom("a predicate name")?, &types))
                        .map_err(|e| p.err(e.to_string()))?;
                }
            }
            Some(":task") => {
                let (name, rest) = body.split_first().ok_or_else(|| sec.err("task without a name"))?;
                let mut parameters = Vec::new();
                for (k, v) in keyword_pairs(rest)? {
                    match k.as_str() {
                        ":parameters" => parameters = typed_list(v.expect_list("parameters")?)?,
                        other => return Err(v.unsupported(format!("task keyword {other}"))),
                    }
                }
                domain.abstract_tasks.push(AbstractTask {
                    name: name.expect_atom("a task name")?.to_string(),
                    parameters,
                });
            }
            Some(":method") => {
                let (name, rest) = body.split_first().ok_or_else(|| sec.err("method without a name"))?;
                let mut parameters = Vec::new();
                let mut task = None;
                let mut network = TaskNetwork::default();
                for (k, v) in keyword_pairs(rest)? {
                    match k.as_str() {
                        ":parameters" => parameters = typed_list(v.expect_list("parameters")?)?,
                        ":task" => task = Some(task_instance(v)?),
                        ":ordered-subtasks" | ":ordered-tasks" => network = ordered_network(v)?,
                        ":subtasks" | ":tasks" => {
                            return Err(v.unsupported("partially ordered :subtasks (use :ordered-subtasks)"))
                        }
                        other => return Err(v.unsupported(format!("method keyword {other}"))),
                    }
                }
                domain.methods.push(Method {
                    id: name.expect_atom("a method name")?.to_string(),
                    abstract_task: task.ok_or_else(|| sec.err("method without :task"))?,
                    parameters,
                    subnetwork: network,
                });
            }
            Some(":action") => {
                let (name, rest) = body.split_first().ok_or_else(|| sec.err("action without a name"))?;
                let mut a = PrimitiveTask {
                    name: name.expect_atom("an action name")?.to_string(),
                    parameters: Vec::new(),
                    pre_pos: SymbolicState::new(),
                    pre_neg: SymbolicState::new(),
                    eff_pos: SymbolicState::new(),
                    eff_neg: SymbolicState::new(),
                    achieves: None,
                };
                for (k, v) in keyword_pairs(rest)? {
                    match k.as_str() {
                        ":parameters" => a.parameters = typed_list(v.expect_list("parameters")?)?,
                        ":precondition" => (a.pre_pos, a.pre_neg) = literals(v)?,
                        ":effect" => (a.eff_pos, a.eff_neg) = literals(v)?,
                        other => return Err(v.unsupported(format!("action keyword {other}"))),
                    }
                }
                domain.primitive_tasks.push(a);
            }
            Some(other) => return Err(sec.unsupported(format!("domain section {other}"))),
            None => return Err(sec.err("expected a section keyword")),
        }
    }
    fold_attachment_methods(&mut domain);
    domain.validate()?;
    Ok(domain)
}

/// A method that shares its name with an action and whose only subtask is
/// that action marks the action as directly achieving the method's task.
fn fold_attachment_methods(domain: &mut HtnDomain) {
    let mut kept = Vec::new();
    for m in std::mem::take(&mut domain.methods) {
        let target = domain.primitive_tasks.iter_mut().find(|p| p.name == m.id);
        let folds = match (&target, m.single_subtask()) {
            (Some(p), Some(sub)) => {
                sub.task == p.name
                    && p.achieves.is_none()
                    && m.parameters == p.parameters
                    && sub.args.iter().eq(p.parameters.iter().map(|x| &x.name))
            }
            _ => false,
        };
        if folds {
            target.unwrap().achieves = Some(m.abstract_task);
        } else {
            kept.push(m);
        }
    }
    domain.methods = kept;
}

/// Parses a problem file against an already parsed domain.
pub fn parse_problem(text: &str, domain: HtnDomain) -> Result<HtnProblem, HddlError> {
    let top = read_sexp(text)?;
    let (name, sections) = define_header(&top, "problem")?;
    let mut objects = Objects::new();
    let mut initial_state = SymbolicState::new();
    let mut initial_network = TaskNetwork::default();
    for sec in sections {
        let items = sec.expect_list("a problem section")?;
        let body = &items[1..];
        match sec.head().as_deref() {
            Some(":domain") => {
                let d = body.first().ok_or_else(|| sec.err("missing domain name"))?;
                if d.expect_atom("a domain name")? != domain.name {
                    return Err(d.err(format!("problem is for domain {:?}, not {:?}", d.atom().unwrap(), domain.name)));
                }
            }
            Some(":requirements") => {}
            Some(":objects") => objects = objects_from(typed_list(body)?, sec)?,
            Some(":htn") => {
                for (k, v) in keyword_pairs(body)? {
                    match k.as_str() {
                        ":parameters" => {
                            if !v.expect_list("parameters")?.is_empty() {
                                return Err(v.unsupported("parameterised :htn"));
                            }
                        }
                        ":ordered-subtasks" | ":ordered-tasks" => initial_network = ordered_network(v)?,
                        ":subtasks" | ":tasks" => {
                            return Err(v.unsupported("partially ordered :subtasks (use :ordered-subtasks)"))
                        }
                        other => return Err(v.unsupported(format!("htn keyword {other}"))),
                    }
                }
            }
            Some(":init") => {
                for a in body {
                    initial_state.insert(plain_atom(a)?);
                }
            }
            Some(other) => return Err(sec.unsupported(format!("problem section {other}"))),
            None => return Err(sec.err("expected a section keyword")),
        }
    }
    let problem = HtnProblem {
        name,
        domain,
        objects,
        initial_state,
        initial_network,
    };
    problem.validate()?;
    Ok(problem)
}

/// Parses a domain and problem pair.
pub fn parse_hddl(domain_text: &str, problem_text: &str) -> Result<HtnProblem, HddlError> {
    parse_problem(problem_text, parse_domain(domain_text)?)
}

fn write_typed(out: &mut String, params: impl IntoIterator<Item = (String, String)>) {
    let mut first = true;
    for (n, t) in params {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{n} - {t}");
    }
}

fn write_atom(out: &mut String, a: &GroundAtom) {
    let _ = write!(out, "({}", a.predicate);
    for x in &a.args {
        let _ = write!(out, " {x}");
    }
    out.push(')');
}

fn write_conjunction(out: &mut String, pos: &SymbolicState, neg: &SymbolicState) {
    out.push_str("(and");
    for a in pos.iter() {
        out.push(' ');
        write_atom(out, a);
    }
    for a in neg.iter() {
        out.push_str(" (not ");
        write_atom(out, a);
        out.push(')');
    }
    out.push(')');
}

fn write_network(out: &mut String, net: &TaskNetwork) {
    out.push_str("(and");
    for (id, t) in net.ordered_tasks() {
        let _ = write!(out, " ({id} {t})");
    }
    out.push(')');
}

fn params_of(ps: &[TypedParam]) -> impl Iterator<Item = (String, String)> + '_ {
    ps.iter().map(|p| (p.name.clone(), p.ty.clone()))
}

/// Prints a domain. Actions that achieve a task get an attachment method of
/// the same name so that the text stays plain HDDL.
pub fn print_domain(d: &HtnDomain) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "(define (domain {})", d.name);
    o.push_str("  (:requirements :hierarchy :typing :negative-preconditions)\n");
    let _ = writeln!(o, "  (:types {})", d.types.join(" "));
    o.push_str("  (:constants ");
    write_typed(&mut o, d.constants.iter().map(|(n, t)| (n.to_string(), t.to_string())));
    o.push_str(")\n  (:predicates");
    for p in d.predicates.predicates() {
        let _ = write!(o, "\n    ({}", p.name);
        if p.arity() > 0 {
            o.push(' ');
        }
        write_typed(&mut o, p.arg_types.iter().enumerate().map(|(i, t)| (format!("?x{i}"), t.clone())));
        o.push(')');
    }
    o.push_str(")\n");
    for t in &d.abstract_tasks {
        let _ = write!(o, "  (:task {} :parameters (", t.name);
        write_typed(&mut o, params_of(&t.parameters));
        o.push_str("))\n");
    }
    let method = |o: &mut String, id: &str, params: &[TypedParam], task: &TaskInstance, net: &TaskNetwork| {
        let _ = write!(o, "  (:method {id}\n    :parameters (");
        write_typed(o, params_of(params));
        let _ = write!(o, ")\n    :task {task}\n    :ordered-subtasks ");
        write_network(o, net);
        o.push_str(")\n");
    };
    for m in &d.methods {
        method(&mut o, &m.id, &m.parameters, &m.abstract_task, &m.subnetwork);
    }
    for a in &d.primitive_tasks {
        if let Some(task) = &a.achieves {
            let call = TaskInstance::new(a.name.clone(), a.parameters.iter().map(|p| p.name.clone()).collect());
            method(&mut o, &a.name, &a.parameters, task, &TaskNetwork::sequence(vec![call]));
        }
    }
    for a in &d.primitive_tasks {
        let _ = write!(o, "  (:action {}\n    :parameters (", a.name);
        write_typed(&mut o, params_of(&a.parameters));
        o.push_str(")\n    :precondition ");
        write_conjunction(&mut o, &a.pre_pos, &a.pre_neg);
        o.push_str("\n    :effect ");
        write_conjunction(&mut o, &a.eff_pos, &a.eff_neg);
        o.push_str(")\n");
    }
    o.push_str(")\n");
    o
}

pub fn print_problem(p: &HtnProblem) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "(define (problem {})", p.name);
    let _ = writeln!(o, "  (:domain {})", p.domain.name);
    o.push_str("  (:objects ");
    write_typed(&mut o, p.objects.iter().map(|(n, t)| (n.to_string(), t.to_string())));
    o.push_str(")\n  (:htn\n    :parameters ()\n    :ordered-subtasks ");
    write_network(&mut o, &p.initial_network);
    o.push_str(")\n  (:init");
    for a in p.initial_state.iter() {
        o.push(' ');
        write_atom(&mut o, a);
    }
    o.push_str("))\n");
    o
}

/// Domain and problem text.
pub fn print_hddl(p: &HtnProblem) -> (String, String) {
    (print_domain(&p.domain), print_problem(p))
}
