//! Constraint evaluation over partial models.
//!
//! Safety evaluation only reports violations that no further refinement can
//! repair, so it is safe to use as a decoding mask. Completion evaluation
//! runs on fully decided models and is exact.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rustc_hash::{FxHashMap, FxHashSet};
use serde::Serialize;

use crate::grammar::Grammar;
use crate::metamodel::{
    Constraint, ConstraintKind, ConstraintSet, GraphPattern, LiteralOp, Metamodel, TypeId,
};
use crate::partial_model::{EdgeKey, ElementRef, PartialModel, Truth};
use crate::projector::{project_text, Projector};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub constraint: String,
    pub witness: Vec<ElementRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Admissible,
    Violated,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub violations: Vec<Violation>,
}

impl Verdict {
    pub fn status(&self) -> Status {
        if self.violations.is_empty() {
            Status::Admissible
        } else {
            Status::Violated
        }
    }

    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Name used for violations caused by ERROR elements.
pub const ERROR_CONSTRAINT: &str = "error";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SemanticsError {
    #[error("model still has {0} undecided element(s)")]
    NotComplete(usize),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Safety,
    Final,
}

/// Violations of `cs.safety` that hold in every completion of `pm`.
/// ERROR elements always count as a violation.
pub fn eval_safety(pm: &PartialModel, cs: &ConstraintSet) -> Verdict {
    let mut v = Verdict::default();
    push_errors(pm, &mut v);
    let ctx = Context::new(cs);
    for c in &cs.safety {
        eval_one(pm, c, &ctx, Mode::Safety, &mut v.violations);
    }
    v
}

/// Exact evaluation of both lists on a model with no POSSIBLE elements.
pub fn eval_completion(pm: &PartialModel, cs: &ConstraintSet) -> Result<Verdict, SemanticsError> {
    let open = pm.nodes().filter(|(_, n)| n.truth == Truth::Possible).count()
        + pm.edges().filter(|(_, t)| *t == Truth::Possible).count();
    if open > 0 {
        return Err(SemanticsError::NotComplete(open));
    }
    let mut v = Verdict::default();
    push_errors(pm, &mut v);
    let ctx = Context::new(cs);
    for c in cs.all() {
        eval_one(pm, c, &ctx, Mode::Final, &mut v.violations);
    }
    Ok(v)
}

fn push_errors(pm: &PartialModel, v: &mut Verdict) {
    let witness: Vec<ElementRef> = pm.error_elements().collect();
    if !witness.is_empty() {
        v.violations.push(Violation {
            constraint: ERROR_CONSTRAINT.to_string(),
            witness,
        });
    }
}

/// CERTAIN edges of one type.
struct EdgeView<'a> {
    certain: Vec<&'a EdgeKey>,
}

impl<'a> EdgeView<'a> {
    fn new(pm: &'a PartialModel, ty: &str) -> Self {
        Self {
            certain: pm
                .edges()
                .filter(|(k, t)| *t == Truth::Certain && &*k.ty == ty)
                .map(|(k, _)| k)
                .collect(),
        }
    }
}

/// Which edge types the rest of the constraint set orders or types. Arity
/// reasoning uses it to bound what an open input slot can still receive.
struct Context<'a> {
    ordered: FxHashSet<&'a str>,
    typed: FxHashSet<&'a str>,
}

impl<'a> Context<'a> {
    fn new(cs: &'a ConstraintSet) -> Self {
        let mut ordered = FxHashSet::default();
        let mut typed = FxHashSet::default();
        for c in cs.all() {
            match &c.kind {
                ConstraintKind::DefinedBeforeUse { edge } => {
                    ordered.insert(edge.as_str());
                }
                ConstraintKind::TypeConsistency { edge } => {
                    typed.insert(edge.as_str());
                }
                _ => {}
            }
        }
        Self { ordered, typed }
    }
}

/// Distinct nodes before `id` that could still become its `edge` targets.
fn fillers(pm: &PartialModel, edge: &str, id: &str, typed: bool) -> usize {
    let meta = pm.metamodel();
    let (Some(pos), Some(src)) = (pm.node_index(id), pm.node(id)) else {
        return 0;
    };
    let want = if typed { meta.accepts(src.ty) } else { None };
    pm.nodes()
        .take(pos)
        .filter(|(_, n)| matches!(n.truth, Truth::Certain | Truth::Possible))
        .filter(|(_, n)| match (want, meta.produces(n.ty)) {
            (Some(w), Some(p)) => w == p,
            _ => true,
        })
        .filter(|(t, _)| pm.edge_truth(edge, id, t) != Truth::Certain)
        .count()
}

/// Reports at most one violation per constraint: the first one found in
/// model insertion order. Completion-only kinds never fire in safety mode.
fn eval_one(pm: &PartialModel, c: &Constraint, ctx: &Context, mode: Mode, out: &mut Vec<Violation>) {
    let meta = pm.metamodel();
    let mut found = false;
    let mut violate = |witness: Vec<ElementRef>| {
        if !found {
            found = true;
            out.push(Violation {
                constraint: c.name.clone(),
                witness,
            })
        }
    };
    match &c.kind {
        ConstraintKind::TypeConsistency { edge } => {
            for k in EdgeView::new(pm, edge).certain {
                let (Some(s), Some(t)) = (pm.node(&k.source), pm.node(&k.target)) else {
                    continue;
                };
                if let (Some(want), Some(got)) = (meta.accepts(s.ty), meta.produces(t.ty)) {
                    if want != got {
                        violate(vec![
                            ElementRef::Edge(k.clone()),
                            ElementRef::Node(k.source.to_string()),
                            ElementRef::Node(k.target.to_string()),
                        ]);
                    }
                }
            }
        }
        ConstraintKind::ExactArity { edge, arity } => {
            // (certain, possible) outgoing edges per source
            let mut counts: FxHashMap<&str, (u32, u32)> = FxHashMap::default();
            for (k, t) in pm.edges().filter(|(k, _)| *k.ty == **edge) {
                let e = counts.entry(&*k.source).or_default();
                match t {
                    Truth::Certain => e.0 += 1,
                    Truth::Possible => e.1 += 1,
                    _ => {}
                }
            }
            for (id, n) in pm.nodes() {
                if n.truth != Truth::Certain && n.truth != Truth::Possible {
                    continue;
                }
                let Some(want) = declared_arity(meta, arity, n.ty) else {
                    continue;
                };
                let (have, open) = counts.get(id).copied().unwrap_or((0, 0));
                let broken = match mode {
                    // extra inputs can never be retracted; missing ones are
                    // final once the node has no open slot left
                    // and with ordered edges they can only come from earlier nodes
                    Mode::Safety => {
                        have > want
                            || (have < want
                                && (open == 0
                                    || (ctx.ordered.contains(edge.as_str())
                                        && fillers(pm, edge, id, ctx.typed.contains(edge.as_str()))
                                            < (want - have) as usize)))
                    }
                    Mode::Final => have != want,
                };
                if broken {
                    let mut w = vec![ElementRef::Node(id.to_string())];
                    w.extend(
                        pm.out_edges(edge, id)
                            .filter(|(_, t)| *t == Truth::Certain)
                            .map(|(k, _)| ElementRef::Edge(k.clone())),
                    );
                    violate(w);
                }
            }
        }
        ConstraintKind::Acyclic { edge } => {
            if let Some(cycle) = find_cycle(pm, &EdgeView::new(pm, edge).certain) {
                violate(cycle.into_iter().map(ElementRef::Node).collect());
            }
        }
        ConstraintKind::DefinedBeforeUse { edge } => {
            for k in EdgeView::new(pm, edge).certain {
                let (Some(s), Some(t)) = (pm.node_index(&k.source), pm.node_index(&k.target)) else {
                    continue;
                };
                if t >= s {
                    violate(vec![
                        ElementRef::Edge(k.clone()),
                        ElementRef::Node(k.target.to_string()),
                    ]);
                }
            }
        }
        ConstraintKind::SingleSink { edge } => {
            if mode == Mode::Final {
                let sinks = sinks(pm, edge);
                if sinks.len() != 1 {
                    violate(sinks.into_iter().map(ElementRef::Node).collect());
                }
            }
        }
        ConstraintKind::SinkType { edge, types } => {
            if mode == Mode::Final {
                for s in sinks(pm, edge) {
                    let ty = pm.node(&s).map(|n| n.ty);
                    let ok = ty
                        .and_then(|t| meta.produces(t))
                        .is_some_and(|p| types.iter().any(|x| x == p));
                    if !ok {
                        violate(vec![ElementRef::Node(s)]);
                    }
                }
            }
        }
        ConstraintKind::ForbiddenPattern { pattern } => {
            if let Some(m) = match_pattern(pm, meta, pattern) {
                violate(m.into_iter().map(ElementRef::Node).collect());
            }
        }
    }
}

/// Arity declared for `ty` or its nearest supertype.
fn declared_arity(meta: &Metamodel, arity: &BTreeMap<String, u32>, ty: TypeId) -> Option<u32> {
    let mut cur = Some(ty);
    while let Some(t) = cur {
        let nt = meta.node_type(t);
        if let Some(&n) = arity.get(&nt.name) {
            return Some(n);
        }
        cur = nt.supertype;
    }
    None
}

fn sinks(pm: &PartialModel, edge: &str) -> Vec<String> {
    let used: FxHashSet<&str> = pm
        .edges()
        .filter(|(k, t)| &*k.ty == edge && *t == Truth::Certain)
        .map(|(k, _)| &*k.target)
        .collect();
    pm.nodes()
        .filter(|(id, n)| n.truth == Truth::Certain && !used.contains(id))
        .map(|(id, _)| id.to_string())
        .collect()
}

/// Returns the nodes of some cycle, in edge order, if one exists.
fn find_cycle(pm: &PartialModel, edges: &[&EdgeKey]) -> Option<Vec<String>> {
    // edges that all point to earlier nodes respect a topological order
    let backward = edges.iter().all(|k| match (pm.node_index(&k.source), pm.node_index(&k.target)) {
        (Some(s), Some(t)) => t < s,
        _ => true,
    });
    if backward {
        return None;
    }
    let ids: Vec<&str> = pm.nodes().map(|(id, _)| id).collect();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); ids.len()];
    for k in edges {
        if let (Some(s), Some(t)) = (pm.node_index(&k.source), pm.node_index(&k.target)) {
            adj[s].push(t);
        }
    }
    // 0 unvisited, 1 on stack, 2 done
    let mut color = vec![0u8; ids.len()];
    let mut parent = vec![usize::MAX; ids.len()];
    for root in 0..ids.len() {
        if color[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        color[root] = 1;
        while let Some(&mut (u, ref mut next)) = stack.last_mut() {
            if let Some(&v) = adj[u].get(*next) {
                *next += 1;
                match color[v] {
                    0 => {
                        color[v] = 1;
                        parent[v] = u;
                        stack.push((v, 0));
                    }
                    1 => {
                        let mut cycle = vec![ids[u].to_string()];
                        let mut w = u;
                        while w != v {
                            w = parent[w];
                            cycle.push(ids[w].to_string());
                        }
                        cycle.reverse();
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                color[u] = 2;
                stack.pop();
            }
        }
    }
    None
}

/// Injective match of `pattern` against CERTAIN nodes and edges. Returns the
/// matched node ids in pattern order.
fn match_pattern(pm: &PartialModel, meta: &Metamodel, pattern: &GraphPattern) -> Option<Vec<String>> {
    let candidates: Vec<Vec<&str>> = pattern
        .nodes
        .iter()
        .map(|pn| {
            let ty = meta.node_type_id(&pn.r#type);
            pm.nodes()
                .filter(|(_, n)| n.truth == Truth::Certain)
                .filter(|(_, n)| ty.is_some_and(|t| meta.is_subtype(n.ty, t)))
                .filter(|(_, n)| {
                    pn.attrs.iter().all(|lit| match (n.attrs.get(&lit.slot), &lit.op) {
                        (Some(v), LiteralOp::Eq) => *v == lit.value,
                        (Some(v), LiteralOp::Ne) => *v != lit.value,
                        (None, _) => false,
                    })
                })
                .map(|(id, _)| id)
                .collect()
        })
        .collect();
    let var_index: HashMap<&str, usize> = pattern
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.var.as_str(), i))
        .collect();
    let edges: Vec<(&str, usize, usize)> = pattern
        .edges
        .iter()
        .map(|e| (e.r#type.as_str(), var_index[e.source.as_str()], var_index[e.target.as_str()]))
        .collect();
    let mut chosen: Vec<&str> = Vec::with_capacity(pattern.nodes.len());
    if extend_match(pm, &candidates, &edges, &mut chosen) {
        Some(chosen.into_iter().map(String::from).collect())
    } else {
        None
    }
}

fn extend_match<'a>(
    pm: &PartialModel,
    candidates: &[Vec<&'a str>],
    edges: &[(&str, usize, usize)],
    chosen: &mut Vec<&'a str>,
) -> bool {
    let i = chosen.len();
    if i == candidates.len() {
        return true;
    }
    for &c in &candidates[i] {
        if chosen.contains(&c) {
            continue;
        }
        chosen.push(c);
        let consistent = edges.iter().all(|&(ty, s, t)| {
            if s > i || t > i {
                return true;
            }
            pm.edge_truth(ty, chosen[s], chosen[t]) == Truth::Certain
        });
        if consistent && extend_match(pm, candidates, edges, chosen) {
            return true;
        }
        chosen.pop();
    }
    false
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub syntactic: bool,
    pub semantic: bool,
    pub violations: Vec<Violation>,
}

/// Full check of a finished text: grammar membership, then projection and
/// exact constraint evaluation.
pub fn validate_complete<P: Projector>(
    text: &[u8],
    grammar: &Arc<Grammar>,
    metamodel: &Arc<Metamodel>,
    constraints: &ConstraintSet,
    projector: &P,
) -> ValidationReport {
    if !grammar.accepts(text) {
        return ValidationReport {
            syntactic: false,
            semantic: false,
            violations: Vec::new(),
        };
    }
    let violations = match project_text(projector, grammar, metamodel, text) {
        Ok((_, pm)) => match eval_completion(&pm, constraints) {
            Ok(v) => v.violations,
            Err(e) => vec![Violation {
                constraint: format!("projection: {e}"),
                witness: Vec::new(),
            }],
        },
        Err(e) => vec![Violation {
            constraint: format!("projection: {e}"),
            witness: Vec::new(),
        }],
    };
    ValidationReport {
        syntactic: true,
        semantic: violations.is_empty(),
        violations,
    }
}
