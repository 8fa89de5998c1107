//! Typed-graph domain declarations and the constraint sets evaluated over
//! partial models.
//!
//! Both documents are JSON. A metamodel document carries `node_types` and
//! `edge_types`; a constraint document carries `safety` and `completion`
//! lists. The two may live in one file since each loader ignores the other's
//! keys. See `assets/clevr/` for the normative examples.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetamodelError {
    #[error("malformed document: {0}")]
    Json(String),
    #[error("undeclared type {0:?}")]
    UndeclaredType(String),
    #[error("malformed multiplicity {0:?}")]
    MalformedMultiplicity(String),
    #[error("duplicate declaration {0:?}")]
    Duplicate(String),
    #[error("constraint {constraint:?}: {msg}")]
    BadConstraint { constraint: String, msg: String },
    #[error("unknown constraint kind {0:?}")]
    UnknownKind(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainDoc {
    Enum { r#enum: Vec<String> },
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValueDomain {
    Enum(Vec<String>),
    Int,
    Str,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Str(String),
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Int(i) => write!(f, "{i}"),
            AttrValue::Str(s) => f.write_str(s),
        }
    }
}

impl ValueDomain {
    pub fn contains(&self, v: &AttrValue) -> bool {
        match (self, v) {
            (ValueDomain::Enum(vals), AttrValue::Str(s)) => vals.iter().any(|x| x == s),
            (ValueDomain::Int, AttrValue::Int(_)) => true,
            (ValueDomain::Str, AttrValue::Str(_)) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeTypeDoc {
    name: String,
    #[serde(default)]
    r#abstract: bool,
    #[serde(default)]
    extends: Option<String>,
    #[serde(default)]
    accepts: Option<String>,
    #[serde(default)]
    produces: Option<String>,
    #[serde(default)]
    attributes: BTreeMap<String, DomainDoc>,
    #[serde(default)]
    #[allow(dead_code)]
    doc: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeTypeDoc {
    name: String,
    source: String,
    target: String,
    #[serde(default = "default_multiplicity")]
    multiplicity: String,
}

fn default_multiplicity() -> String {
    "0..*".to_string()
}

#[derive(Debug, Deserialize)]
struct MetamodelDoc {
    node_types: Vec<NodeTypeDoc>,
    #[serde(default)]
    edge_types: Vec<EdgeTypeDoc>,
}

pub type TypeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeType {
    pub name: String,
    pub is_abstract: bool,
    pub supertype: Option<TypeId>,
    /// Value type this node consumes on its inputs, if it takes any.
    pub accepts: Option<String>,
    /// Value type this node produces.
    pub produces: Option<String>,
    pub attributes: BTreeMap<String, ValueDomain>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Multiplicity {
    pub lower: u32,
    pub upper: Option<u32>,
}

impl Multiplicity {
    pub fn parse(s: &str) -> Result<Self, MetamodelError> {
        let bad = || MetamodelError::MalformedMultiplicity(s.to_string());
        let bound = |t: &str| -> Result<Option<u32>, MetamodelError> {
            match t.trim() {
                "*" => Ok(None),
                n => n.parse().map(Some).map_err(|_| bad()),
            }
        };
        let (lower, upper) = match s.split_once("..") {
            Some((lo, hi)) => (bound(lo)?.ok_or_else(bad)?, bound(hi)?),
            None => match bound(s)? {
                None => (0, None),
                Some(n) => (n, Some(n)),
            },
        };
        if let Some(u) = upper {
            if lower > u {
                return Err(bad());
            }
        }
        Ok(Self { lower, upper })
    }
}

impl fmt::Display for Multiplicity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.upper {
            Some(u) => write!(f, "{}..{}", self.lower, u),
            None => write!(f, "{}..*", self.lower),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeType {
    pub name: String,
    pub source: TypeId,
    pub target: TypeId,
    /// Outgoing edges of this type per source node.
    pub multiplicity: Multiplicity,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metamodel {
    node_types: Vec<NodeType>,
    node_index: FxHashMap<String, TypeId>,
    edge_types: Vec<EdgeType>,
    edge_index: FxHashMap<String, usize>,
}

impl Metamodel {
    pub fn from_json(doc: &str) -> Result<Self, MetamodelError> {
        let doc: MetamodelDoc =
            serde_json::from_str(doc).map_err(|e| MetamodelError::Json(e.to_string()))?;
        let mut node_index = FxHashMap::default();
        for (i, nt) in doc.node_types.iter().enumerate() {
            if node_index.insert(nt.name.clone(), i).is_some() {
                return Err(MetamodelError::Duplicate(nt.name.clone()));
            }
        }
        let lookup = |name: &str| {
            node_index
                .get(name)
                .copied()
                .ok_or_else(|| MetamodelError::UndeclaredType(name.to_string()))
        };
        let mut node_types = Vec::with_capacity(doc.node_types.len());
        for nt in &doc.node_types {
            let supertype = nt.extends.as_deref().map(lookup).transpose()?;
            let attributes = nt
                .attributes
                .iter()
                .map(|(slot, d)| {
                    let dom = match d {
                        DomainDoc::Enum { r#enum } => ValueDomain::Enum(r#enum.clone()),
                        DomainDoc::Named(n) if n == "int" => ValueDomain::Int,
                        DomainDoc::Named(n) if n == "string" => ValueDomain::Str,
                        DomainDoc::Named(n) => {
                            return Err(MetamodelError::Json(format!(
                                "unknown attribute domain {n:?} for {}.{slot}",
                                nt.name
                            )))
                        }
                    };
                    Ok((slot.clone(), dom))
                })
                .collect::<Result<_, _>>()?;
            node_types.push(NodeType {
                name: nt.name.clone(),
                is_abstract: nt.r#abstract,
                supertype,
                accepts: nt.accepts.clone(),
                produces: nt.produces.clone(),
                attributes,
            });
        }
        // reject inheritance cycles
        for start in 0..node_types.len() {
            let mut seen = HashSet::new();
            let mut cur = Some(start);
            while let Some(t) = cur {
                if !seen.insert(t) {
                    return Err(MetamodelError::Json(format!(
                        "inheritance cycle through {:?}",
                        node_types[start].name
                    )));
                }
                cur = node_types[t].supertype;
            }
        }
        let mut edge_types = Vec::new();
        let mut edge_index = FxHashMap::default();
        for et in &doc.edge_types {
            if edge_index.insert(et.name.clone(), edge_types.len()).is_some() {
                return Err(MetamodelError::Duplicate(et.name.clone()));
            }
            edge_types.push(EdgeType {
                name: et.name.clone(),
                source: lookup(&et.source)?,
                target: lookup(&et.target)?,
                multiplicity: Multiplicity::parse(&et.multiplicity)?,
            });
        }
        Ok(Self {
            node_types,
            node_index,
            edge_types,
            edge_index,
        })
    }

    pub fn node_types(&self) -> &[NodeType] {
        &self.node_types
    }

    pub fn edge_types(&self) -> &[EdgeType] {
        &self.edge_types
    }

    pub fn node_type_id(&self, name: &str) -> Option<TypeId> {
        self.node_index.get(name).copied()
    }

    pub fn node_type(&self, id: TypeId) -> &NodeType {
        &self.node_types[id]
    }

    pub fn edge_type(&self, name: &str) -> Option<&EdgeType> {
        self.edge_index.get(name).map(|&i| &self.edge_types[i])
    }

    /// Reflexive-transitive subtype test.
    pub fn is_subtype(&self, sub: TypeId, sup: TypeId) -> bool {
        let mut cur = Some(sub);
        while let Some(t) = cur {
            if t == sup {
                return true;
            }
            cur = self.node_types[t].supertype;
        }
        false
    }

    /// Attribute slot lookup that walks the supertype chain.
    pub fn slot(&self, ty: TypeId, slot: &str) -> Option<&ValueDomain> {
        let mut cur = Some(ty);
        while let Some(t) = cur {
            if let Some(d) = self.node_types[t].attributes.get(slot) {
                return Some(d);
            }
            cur = self.node_types[t].supertype;
        }
        None
    }

    pub fn accepts(&self, ty: TypeId) -> Option<&str> {
        self.inherited(ty, |n| n.accepts.as_deref())
    }

    pub fn produces(&self, ty: TypeId) -> Option<&str> {
        self.inherited(ty, |n| n.produces.as_deref())
    }

    fn inherited<'a>(&'a self, ty: TypeId, f: impl Fn(&'a NodeType) -> Option<&'a str>) -> Option<&'a str> {
        let mut cur = Some(ty);
        while let Some(t) = cur {
            if let Some(v) = f(&self.node_types[t]) {
                return Some(v);
            }
            cur = self.node_types[t].supertype;
        }
        None
    }

    /// Concrete node types, in declaration order.
    pub fn concrete_types(&self) -> impl Iterator<Item = (TypeId, &NodeType)> + '_ {
        self.node_types
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.is_abstract)
    }
}

// ---------------------------------------------------------------------------
// constraints

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiteralOp {
    Eq,
    Ne,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttrLiteral {
    pub slot: String,
    pub op: LiteralOp,
    pub value: AttrValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternNode {
    pub var: String,
    pub r#type: String,
    #[serde(default)]
    pub attrs: Vec<AttrLiteral>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternEdge {
    pub r#type: String,
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphPattern {
    pub nodes: Vec<PatternNode>,
    #[serde(default)]
    pub edges: Vec<PatternEdge>,
}

/// The closed set of constraint kinds. Every kind but `ForbiddenPattern`
/// is parameterised by the edge type it ranges over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ConstraintKind {
    /// Each edge's target produces the value type its source accepts.
    TypeConsistency { edge: String },
    /// Listed node types must have exactly this many outgoing edges.
    ExactArity { edge: String, arity: BTreeMap<String, u32> },
    Acyclic { edge: String },
    /// Exactly one node is not the target of any edge.
    SingleSink { edge: String },
    /// Every sink produces one of the listed value types.
    SinkType { edge: String, types: Vec<String> },
    /// Every edge points at a node inserted strictly before its source.
    DefinedBeforeUse { edge: String },
    ForbiddenPattern { pattern: GraphPattern },
}

impl ConstraintKind {
    pub fn label(&self) -> &'static str {
        match self {
            ConstraintKind::TypeConsistency { .. } => "TypeConsistency",
            ConstraintKind::ExactArity { .. } => "ExactArity",
            ConstraintKind::Acyclic { .. } => "Acyclic",
            ConstraintKind::SingleSink { .. } => "SingleSink",
            ConstraintKind::SinkType { .. } => "SinkType",
            ConstraintKind::DefinedBeforeUse { .. } => "DefinedBeforeUse",
            ConstraintKind::ForbiddenPattern { .. } => "ForbiddenPattern",
        }
    }

    fn edge(&self) -> Option<&str> {
        match self {
            ConstraintKind::TypeConsistency { edge }
            | ConstraintKind::ExactArity { edge, .. }
            | ConstraintKind::Acyclic { edge }
            | ConstraintKind::SingleSink { edge }
            | ConstraintKind::SinkType { edge, .. }
            | ConstraintKind::DefinedBeforeUse { edge } => Some(edge),
            ConstraintKind::ForbiddenPattern { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    #[serde(flatten)]
    pub kind: ConstraintKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    #[serde(default)]
    pub safety: Vec<Constraint>,
    #[serde(default)]
    pub completion: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Loads and checks a constraint document against `m`. A blank document
    /// is the empty set.
    pub fn from_json(doc: &str, m: &Metamodel) -> Result<Self, MetamodelError> {
        if doc.trim().is_empty() {
            return Ok(Self::empty());
        }
        let value: serde_json::Value =
            serde_json::from_str(doc).map_err(|e| MetamodelError::Json(e.to_string()))?;
        // surface unknown kinds by name rather than as a serde enum mismatch
        for list in ["safety", "completion"] {
            if let Some(items) = value.get(list).and_then(|v| v.as_array()) {
                for c in items {
                    if let Some(kind) = c.get("kind").and_then(|k| k.as_str()) {
                        if !KINDS.contains(&kind) {
                            return Err(MetamodelError::UnknownKind(kind.to_string()));
                        }
                    }
                }
            }
        }
        let set: ConstraintSet =
            serde_json::from_value(value).map_err(|e| MetamodelError::Json(e.to_string()))?;
        set.check(m)?;
        Ok(set)
    }

    fn check(&self, m: &Metamodel) -> Result<(), MetamodelError> {
        let mut names = HashSet::new();
        for c in self.all() {
            if !names.insert(c.name.as_str()) {
                return Err(MetamodelError::Duplicate(c.name.clone()));
            }
            let bad = |msg: String| MetamodelError::BadConstraint {
                constraint: c.name.clone(),
                msg,
            };
            if let Some(edge) = c.kind.edge() {
                if m.edge_type(edge).is_none() {
                    return Err(MetamodelError::UndeclaredType(edge.to_string()));
                }
            }
            match &c.kind {
                ConstraintKind::ExactArity { arity, .. } => {
                    for ty in arity.keys() {
                        if m.node_type_id(ty).is_none() {
                            return Err(MetamodelError::UndeclaredType(ty.clone()));
                        }
                    }
                }
                ConstraintKind::ForbiddenPattern { pattern } => {
                    let mut vars = HashSet::new();
                    for n in &pattern.nodes {
                        let Some(ty) = m.node_type_id(&n.r#type) else {
                            return Err(MetamodelError::UndeclaredType(n.r#type.clone()));
                        };
                        if !vars.insert(n.var.as_str()) {
                            return Err(bad(format!("pattern variable {:?} bound twice", n.var)));
                        }
                        for lit in &n.attrs {
                            if m.slot(ty, &lit.slot).is_none() {
                                return Err(bad(format!(
                                    "type {:?} has no attribute {:?}",
                                    n.r#type, lit.slot
                                )));
                            }
                        }
                    }
                    if pattern.nodes.is_empty() {
                        return Err(bad("pattern has no nodes".into()));
                    }
                    for e in &pattern.edges {
                        if m.edge_type(&e.r#type).is_none() {
                            return Err(MetamodelError::UndeclaredType(e.r#type.clone()));
                        }
                        for v in [&e.source, &e.target] {
                            if !vars.contains(v.as_str()) {
                                return Err(bad(format!("unbound pattern variable {v:?}")));
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn all(&self) -> impl Iterator<Item = &Constraint> + '_ {
        self.safety.iter().chain(self.completion.iter())
    }

    pub fn is_empty(&self) -> bool {
        self.safety.is_empty() && self.completion.is_empty()
    }
}

const KINDS: &[&str] = &[
    "TypeConsistency",
    "ExactArity",
    "Acyclic",
    "SingleSink",
    "SinkType",
    "DefinedBeforeUse",
    "ForbiddenPattern",
];
