//! Partial models: typed graphs whose elements carry a four-valued truth.
//!
//! Elements are only ever refined, never rewritten. A stored element is
//! CERTAIN, POSSIBLE or ERROR; ABSENT elements are simply not stored.
//! Contradictory refinements land in ERROR, which absorbs everything after.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::sync::Arc;

use indexmap::IndexMap;
use rustc_hash::FxBuildHasher;
use serde::{Deserialize, Serialize};

use crate::metamodel::{AttrValue, Metamodel, TypeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Truth {
    Certain,
    Possible,
    Absent,
    Error,
}

impl Truth {
    /// POSSIBLE may settle either way; anything else may only stay put.
    pub fn refine(self, to: Truth) -> Truth {
        match (self, to) {
            (a, b) if a == b => a,
            (Truth::Error, _) | (_, Truth::Error) => Truth::Error,
            (Truth::Possible, b) => b,
            _ => Truth::Error,
        }
    }

    pub fn is_definite(self) -> bool {
        matches!(self, Truth::Certain | Truth::Absent)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Truth::Certain => "CERTAIN",
            Truth::Possible => "POSSIBLE",
            Truth::Absent => "ABSENT",
            Truth::Error => "ERROR",
        }
    }
}

impl fmt::Display for Truth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub ty: Arc<str>,
    pub source: Arc<str>,
    pub target: Arc<str>,
}

impl EdgeKey {
    pub fn new(ty: impl Into<Arc<str>>, source: impl Into<Arc<str>>, target: impl Into<Arc<str>>) -> Self {
        Self {
            ty: ty.into(),
            source: source.into(),
            target: target.into(),
        }
    }
}

/// Borrowed form of [`EdgeKey`] for lookups; hashes identically.
#[derive(Hash)]
struct EdgeRef<'a> {
    ty: &'a str,
    source: &'a str,
    target: &'a str,
}

impl indexmap::Equivalent<EdgeKey> for EdgeRef<'_> {
    fn equivalent(&self, k: &EdgeKey) -> bool {
        self.ty == &*k.ty && self.source == &*k.source && self.target == &*k.target
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({} -> {})", self.ty, self.source, self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ElementRef {
    Node(String),
    Edge(EdgeKey),
}

impl fmt::Display for ElementRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementRef::Node(id) => f.write_str(id),
            ElementRef::Edge(k) => k.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Refinement {
    AddNode { id: String, ty: String, truth: Truth },
    AddEdge { key: EdgeKey, truth: Truth },
    RefineNode { id: String, truth: Truth },
    RefineEdge { key: EdgeKey, truth: Truth },
    SetAttribute { id: String, slot: String, value: AttrValue },
}

impl fmt::Display for Refinement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Refinement::AddNode { id, ty, truth } => write!(f, "+node {id}:{ty} {truth}"),
            Refinement::AddEdge { key, truth } => write!(f, "+edge {key} {truth}"),
            Refinement::RefineNode { id, truth } => write!(f, "node {id} := {truth}"),
            Refinement::RefineEdge { key, truth } => write!(f, "edge {key} := {truth}"),
            Refinement::SetAttribute { id, slot, value } => write!(f, "{id}.{slot} = {value}"),
        }
    }
}

/// An ordered batch of refinements produced for one token.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDelta(pub Vec<Refinement>);

impl ModelDelta {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn push(&mut self, r: Refinement) {
        self.0.push(r);
    }

    pub fn extend(&mut self, other: ModelDelta) {
        self.0.extend(other.0);
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("unknown element {0}")]
    UnknownElement(ElementRef),
    #[error("undeclared type {0:?}")]
    UnknownType(String),
    #[error("edge {0} has an endpoint that is not in the model")]
    DanglingEdge(EdgeKey),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub ty: TypeId,
    pub attrs: Arc<BTreeMap<String, AttrValue>>,
    pub truth: Truth,
}

#[derive(Debug, Clone)]
pub struct PartialModel {
    meta: Arc<Metamodel>,
    nodes: IndexMap<Arc<str>, Node, FxBuildHasher>,
    edges: IndexMap<EdgeKey, Truth, FxBuildHasher>,
}

/// Structural equality, insertion order included; the metamodel is compared
/// by identity-free value.
impl PartialEq for PartialModel {
    fn eq(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.meta, &other.meta) || self.meta == other.meta)
            && self.nodes.len() == other.nodes.len()
            && self.edges.len() == other.edges.len()
            && self.nodes.iter().eq(other.nodes.iter())
            && self.edges.iter().eq(other.edges.iter())
    }
}

impl Eq for PartialModel {}

impl PartialModel {
    pub fn new(meta: Arc<Metamodel>) -> Self {
        Self {
            meta,
            nodes: IndexMap::default(),
            edges: IndexMap::default(),
        }
    }

    pub fn metamodel(&self) -> &Arc<Metamodel> {
        &self.meta
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&str, &Node)> + '_ {
        self.nodes.iter().map(|(k, v)| (&**k, v))
    }

    pub fn edges(&self) -> impl Iterator<Item = (&EdgeKey, Truth)> + '_ {
        self.edges.iter().map(|(k, &t)| (k, t))
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }


    /// Insertion rank of a stored node.
    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.get_index_of(id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn truth_of(&self, el: &ElementRef) -> Truth {
        match el {
            ElementRef::Node(id) => self.nodes.get(id.as_str()).map_or(Truth::Absent, |n| n.truth),
            ElementRef::Edge(k) => self.edges.get(k).copied().unwrap_or(Truth::Absent),
        }
    }

    /// Truth of the edge `ty(source -> target)` without building a key.
    pub fn edge_truth(&self, ty: &str, source: &str, target: &str) -> Truth {
        self.edges
            .get(&EdgeRef { ty, source, target })
            .copied()
            .unwrap_or(Truth::Absent)
    }

    pub fn has_error(&self) -> bool {
        self.error_elements().next().is_some()
    }

    pub fn error_elements(&self) -> impl Iterator<Item = ElementRef> + '_ {
        let nodes = self
            .nodes
            .iter()
            .filter(|(_, n)| n.truth == Truth::Error)
            .map(|(id, _)| ElementRef::Node(id.to_string()));
        let edges = self
            .edges
            .iter()
            .filter(|(_, &t)| t == Truth::Error)
            .map(|(k, _)| ElementRef::Edge(k.clone()));
        nodes.chain(edges)
    }

    /// True when nothing is left undecided.
    pub fn is_complete(&self) -> bool {
        self.nodes.values().all(|n| n.truth != Truth::Possible)
            && self.edges.values().all(|&t| t != Truth::Possible)
    }

    /// Applies `delta` to a copy. On error the receiver is untouched.
    pub fn apply_delta(&self, delta: &ModelDelta) -> Result<PartialModel, ModelError> {
        let mut next = self.clone();
        next.apply_in_place(delta)?;
        Ok(next)
    }

    /// Applies `delta` in place. On error the model may be partly updated.
    pub fn apply_in_place(&mut self, delta: &ModelDelta) -> Result<(), ModelError> {
        for r in &delta.0 {
            self.apply_one(r)?;
        }
        Ok(())
    }

    fn apply_one(&mut self, r: &Refinement) -> Result<(), ModelError> {
        match r {
            Refinement::AddNode { id, ty, truth } => {
                let ty = self
                    .meta
                    .node_type_id(ty)
                    .ok_or_else(|| ModelError::UnknownType(ty.clone()))?;
                if let Some(n) = self.nodes.get_mut(id.as_str()) {
                    n.truth = Truth::Error;
                } else if *truth != Truth::Absent {
                    self.nodes.insert(
                        Arc::from(id.as_str()),
                        Node {
                            ty,
                            attrs: Arc::default(),
                            truth: *truth,
                        },
                    );
                }
            }
            Refinement::AddEdge { key, truth } => {
                let Some(et) = self.meta.edge_type(&key.ty) else {
                    return Err(ModelError::UnknownType(key.ty.to_string()));
                };
                let (Some(src), Some(dst)) = (self.nodes.get(&*key.source), self.nodes.get(&*key.target))
                else {
                    return Err(ModelError::DanglingEdge(key.clone()));
                };
                let conforms =
                    self.meta.is_subtype(src.ty, et.source) && self.meta.is_subtype(dst.ty, et.target);
                if let Some(t) = self.edges.get_mut(key) {
                    *t = Truth::Error;
                } else if *truth != Truth::Absent {
                    let t = if !conforms || (*truth == Truth::Certain && self.over_capacity(key)) {
                        Truth::Error
                    } else {
                        *truth
                    };
                    self.edges.insert(key.clone(), t);
                }
            }
            Refinement::RefineNode { id, truth } => {
                let Some(n) = self.nodes.get(id.as_str()) else {
                    return Err(ModelError::UnknownElement(ElementRef::Node(id.clone())));
                };
                let next = n.truth.refine(*truth);
                if next == Truth::Absent {
                    let pinned = self.edges.iter().any(|(k, &t)| {
                        (*k.source == **id || *k.target == **id) && t != Truth::Possible
                    });
                    if pinned {
                        self.nodes[id.as_str()].truth = Truth::Error;
                    } else {
                        self.edges.retain(|k, _| *k.source != **id && *k.target != **id);
                        self.nodes.shift_remove(id.as_str());
                    }
                } else {
                    self.nodes[id.as_str()].truth = next;
                }
            }
            Refinement::RefineEdge { key, truth } => {
                let Some(&cur) = self.edges.get(key) else {
                    return Err(ModelError::UnknownElement(ElementRef::Edge(key.clone())));
                };
                let mut next = cur.refine(*truth);
                if cur == Truth::Possible && next == Truth::Certain && self.over_capacity(key) {
                    next = Truth::Error;
                }
                if next == Truth::Absent {
                    self.edges.shift_remove(key);
                } else {
                    self.edges[key] = next;
                }
            }
            Refinement::SetAttribute { id, slot, value } => {
                let meta = Arc::clone(&self.meta);
                let Some(n) = self.nodes.get_mut(id.as_str()) else {
                    return Err(ModelError::UnknownElement(ElementRef::Node(id.clone())));
                };
                let in_domain = meta.slot(n.ty, slot).is_some_and(|d| d.contains(value));
                match n.attrs.get(slot) {
                    _ if !in_domain => n.truth = Truth::Error,
                    Some(old) if old != value => n.truth = Truth::Error,
                    Some(_) => {}
                    None => {
                        Arc::make_mut(&mut n.attrs).insert(slot.clone(), value.clone());
                    }
                }
            }
        }
        Ok(())
    }

    /// Whether one more CERTAIN edge like `key` exceeds its upper bound.
    fn over_capacity(&self, key: &EdgeKey) -> bool {
        let Some(upper) = self.meta.edge_type(&key.ty).and_then(|et| et.multiplicity.upper) else {
            return false;
        };
        let used = self
            .edges
            .iter()
            .filter(|(k, &t)| {
                t == Truth::Certain && k.ty == key.ty && k.source == key.source && *k != key
            })
            .count();
        used as u64 >= upper as u64
    }

    /// Outgoing edges of type `ty` from `source`, in insertion order.
    pub fn out_edges<'a>(&'a self, ty: &'a str, source: &'a str) -> impl Iterator<Item = (&'a EdgeKey, Truth)> + 'a {
        self.edges
            .iter()
            .filter(move |(k, _)| &*k.ty == ty && &*k.source == source)
            .map(|(k, &t)| (k, t))
    }

    /// Line-oriented dump used by `--explain`:
    ///
    /// ```text
    /// node <id> <type> <TRUTH> [slot=value ...]
    /// edge <type> <source> -> <target> <TRUTH>
    /// ```
    ///
    /// Nodes come first, both sections in insertion order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (id, n) in &self.nodes {
            let _ = write!(out, "node {id} {} {}", self.meta.node_type(n.ty).name, n.truth);
            for (slot, v) in n.attrs.iter() {
                let _ = write!(out, " {slot}={v}");
            }
            out.push('\n');
        }
        for (k, t) in &self.edges {
            let _ = writeln!(out, "edge {} {} -> {} {t}", k.ty, k.source, k.target);
        }
        out
    }
}
