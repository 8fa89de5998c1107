//! Projector for the line-oriented CLEVR program syntax
//! `v<i> = op[param](arg, arg)\n`.
//!
//! Each statement becomes a node named by its identifier, each argument a
//! `CERTAIN` input edge from the statement to the referenced node. While a
//! statement is open its node is `POSSIBLE` and carries a `POSSIBLE` hole
//! node plus edge standing for the arguments not yet written; the hole is
//! retracted when the argument list closes and the node becomes `CERTAIN`
//! when the statement completes.
//!
//! References are resolved as soon as the text pins them down. A partial
//! identifier that can only ever name undefined statements is attached to a
//! placeholder node inserted after the statement, so use-before-definition
//! is visible immediately. Diffs are taken after every byte, which makes the
//! projection independent of how the text is split into tokens.

use std::sync::Arc;

use crate::grammar::ParseEvent;
use crate::metamodel::{AttrValue, Metamodel};
use crate::partial_model::{EdgeKey, ModelDelta, PartialModel, Refinement, Truth};

use super::{check_events, ProjectError, Projector};

#[derive(Debug, Clone)]
struct OpSpec {
    name: String,
    slot: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ClevrProjector {
    ops: Vec<OpSpec>,
    edge: String,
    open_type: String,
    statement_rule: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Arg {
    Defined(String),
    Placeholder(String),
}

impl Arg {
    fn target(&self) -> &str {
        match self {
            Arg::Defined(id) | Arg::Placeholder(id) => id,
        }
    }
}

/// What the open line currently contributes to the model.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct LineProjection {
    node: Option<(String, usize)>,
    attr: Option<String>,
    args: Vec<Arg>,
    hole: bool,
    certain: bool,
    duplicate: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClevrState {
    pos: usize,
    line: Vec<u8>,
    defined: Arc<Vec<String>>,
    emitted: LineProjection,
}

impl ClevrState {
    pub fn position(&self) -> usize {
        self.pos
    }

    /// Statement ids completed so far, in order.
    pub fn defined(&self) -> &[String] {
        &self.defined
    }
}

impl ClevrProjector {
    /// Derives the operator table from the metamodel: every concrete node
    /// type is an operator keyword, and a type with a single attribute slot
    /// takes that slot as its bracketed parameter.
    pub fn new(m: &Metamodel) -> Self {
        let ops = m
            .concrete_types()
            .map(|(_, t)| OpSpec {
                name: t.name.clone(),
                slot: if t.attributes.len() == 1 {
                    t.attributes.keys().next().cloned()
                } else {
                    None
                },
            })
            .collect();
        let et = m.edge_types().first().expect("CLEVR metamodel declares an input edge");
        Self {
            ops,
            edge: et.name.clone(),
            open_type: m.node_type(et.target).name.clone(),
            statement_rule: "stmt".to_string(),
        }
    }

    fn hole_id(id: &str) -> String {
        format!("{id}?")
    }

    fn find_op(&self, name: &[u8], complete: bool) -> Option<usize> {
        let exact = self.ops.iter().position(|o| o.name.as_bytes() == name)?;
        if complete {
            return Some(exact);
        }
        let extendable = self
            .ops
            .iter()
            .any(|o| o.name.len() > name.len() && o.name.as_bytes().starts_with(name));
        (!extendable).then_some(exact)
    }

    /// Reads the open line. Grammar validity of the prefix is assumed, so the
    /// reader only has to find where each part ends.
    fn read_line(&self, line: &[u8], defined: &[String], certain: bool) -> LineProjection {
        let mut out = LineProjection::default();
        let id_len = line.iter().take_while(|b| b.is_ascii_alphanumeric()).count();
        if id_len < line.len() {
            let id = String::from_utf8_lossy(&line[..id_len]).into_owned();
            if defined.contains(&id) {
                out.duplicate = Some(id);
            }
        }
        let Some(eq) = find(line, b" = ") else {
            return out;
        };
        let id = String::from_utf8_lossy(&line[..eq]).into_owned();
        let rest = &line[eq + 3..];
        let name_len = rest
            .iter()
            .take_while(|b| b.is_ascii_lowercase() || **b == b'_')
            .count();
        let Some(op) = self.find_op(&rest[..name_len], name_len < rest.len()) else {
            return out;
        };
        out.node = Some((id.clone(), op));
        out.certain = certain;
        out.hole = !certain;
        let mut i = name_len;
        if self.ops[op].slot.is_some() {
            if rest.get(i) != Some(&b'[') {
                return out;
            }
            let Some(close) = rest[i..].iter().position(|&b| b == b']') else {
                return out;
            };
            out.attr = Some(String::from_utf8_lossy(&rest[i + 1..i + close]).into_owned());
            i += close + 1;
        }
        if rest.get(i) != Some(&b'(') {
            return out;
        }
        i += 1;
        loop {
            let start = i;
            while i < rest.len() && rest[i].is_ascii_alphanumeric() {
                i += 1;
            }
            let text = String::from_utf8_lossy(&rest[start..i]).into_owned();
            if i == rest.len() {
                if !text.is_empty() {
                    if let Some(arg) = resolve_partial(&text, defined, &id, out.args.len()) {
                        out.args.push(arg);
                    }
                }
                return out;
            }
            if !text.is_empty() {
                let arg = resolve(&text, defined, &id, out.args.len());
                out.args.push(arg);
            }
            match rest[i] {
                b')' => {
                    out.hole = false;
                    return out;
                }
                b',' => {
                    i += 1;
                    if rest.get(i) == Some(&b' ') {
                        i += 1;
                    }
                }
                _ => return out,
            }
        }
    }

    fn diff(&self, old: &LineProjection, new: &LineProjection, delta: &mut ModelDelta) {
        // a second definition collides with the first, which is an error
        if let (None, Some(id)) = (&old.duplicate, &new.duplicate) {
            delta.push(Refinement::AddNode {
                id: id.clone(),
                ty: self.open_type.clone(),
                truth: Truth::Certain,
            });
        }
        let Some((id, op)) = &new.node else {
            return;
        };
        let edge = |target: &str| EdgeKey::new(self.edge.as_str(), id.as_str(), target);
        let hole = Self::hole_id(id);
        let added_now = old.node.is_none();
        if added_now {
            delta.push(Refinement::AddNode {
                id: id.clone(),
                ty: self.ops[*op].name.clone(),
                truth: if new.certain { Truth::Certain } else { Truth::Possible },
            });
        }
        if let (None, Some(v), Some(slot)) = (&old.attr, &new.attr, &self.ops[*op].slot) {
            delta.push(Refinement::SetAttribute {
                id: id.clone(),
                slot: slot.clone(),
                value: AttrValue::Str(v.clone()),
            });
        }
        if !old.hole && new.hole {
            delta.push(Refinement::AddNode {
                id: hole.clone(),
                ty: self.open_type.clone(),
                truth: Truth::Possible,
            });
            delta.push(Refinement::AddEdge {
                key: edge(&hole),
                truth: Truth::Possible,
            });
        }
        let keep = old
            .args
            .iter()
            .zip(&new.args)
            .take_while(|(a, b)| a == b)
            .count();
        for a in &old.args[keep..] {
            delta.push(Refinement::RefineEdge {
                key: edge(a.target()),
                truth: Truth::Absent,
            });
            if let Arg::Placeholder(p) = a {
                delta.push(Refinement::RefineNode {
                    id: p.clone(),
                    truth: Truth::Absent,
                });
            }
        }
        for a in &new.args[keep..] {
            if let Arg::Placeholder(p) = a {
                delta.push(Refinement::AddNode {
                    id: p.clone(),
                    ty: self.open_type.clone(),
                    truth: Truth::Certain,
                });
            }
            delta.push(Refinement::AddEdge {
                key: edge(a.target()),
                truth: Truth::Certain,
            });
        }
        if old.hole && !new.hole {
            delta.push(Refinement::RefineEdge {
                key: edge(&hole),
                truth: Truth::Absent,
            });
            delta.push(Refinement::RefineNode {
                id: hole,
                truth: Truth::Absent,
            });
        }
        if !added_now && !old.certain && new.certain {
            delta.push(Refinement::RefineNode {
                id: id.clone(),
                truth: Truth::Certain,
            });
        }
    }
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

/// Undefined references point at a placeholder named after the argument
/// slot, so it survives the reference growing (`v1` to `v10`) and never
/// collides with a statement id.
fn placeholder(line: &str, k: usize) -> Arg {
    Arg::Placeholder(format!("{line}.arg{k}"))
}

fn resolve(text: &str, defined: &[String], line: &str, k: usize) -> Arg {
    if defined.iter().any(|d| d == text) {
        Arg::Defined(text.to_string())
    } else {
        placeholder(line, k)
    }
}

/// A reference still being typed. Resolved once every valid way of
/// finishing it agrees: no defined id extends it, or exactly one does.
fn resolve_partial(prefix: &str, defined: &[String], line: &str, k: usize) -> Option<Arg> {
    let mut matches = defined.iter().filter(|d| d.starts_with(prefix));
    match (matches.next(), matches.next()) {
        (None, _) => Some(placeholder(line, k)),
        (Some(only), None) => Some(Arg::Defined(only.clone())),
        _ => None,
    }
}

impl Projector for ClevrProjector {
    type State = ClevrState;

    fn name(&self) -> &str {
        "clevr"
    }

    fn init(&self) -> (ClevrState, ModelDelta) {
        (
            ClevrState {
                pos: 0,
                line: Vec::new(),
                defined: Arc::default(),
                emitted: LineProjection::default(),
            },
            ModelDelta::default(),
        )
    }

    fn project_token(
        &self,
        state: &ClevrState,
        events: &[ParseEvent],
        token: &[u8],
    ) -> Result<(ClevrState, ModelDelta), ProjectError> {
        let completed = check_events(events, state.pos, token.len(), &self.statement_rule)?;
        let mut st = state.clone();
        let mut delta = ModelDelta::default();
        for &b in token {
            st.line.push(b);
            st.pos += 1;
            let done = completed.contains(&st.pos);
            let target = self.read_line(&st.line, &st.defined, done);
            self.diff(&st.emitted, &target, &mut delta);
            if done {
                if let Some((id, _)) = target.node {
                    Arc::make_mut(&mut st.defined).push(id);
                }
                st.line.clear();
                st.emitted = LineProjection::default();
            } else {
                st.emitted = target;
            }
        }
        Ok((st, delta))
    }
}

/// Renders the CERTAIN statements of a model back to program text.
pub fn render(pm: &PartialModel, edge: &str) -> String {
    let meta = pm.metamodel();
    let mut out = String::new();
    for (id, n) in pm.nodes() {
        let ty = meta.node_type(n.ty);
        if ty.is_abstract || n.truth != Truth::Certain {
            continue;
        }
        out.push_str(id);
        out.push_str(" = ");
        out.push_str(&ty.name);
        for v in n.attrs.values() {
            out.push('[');
            out.push_str(&v.to_string());
            out.push(']');
        }
        out.push('(');
        let args: Vec<&str> = pm
            .out_edges(edge, id)
            .filter(|(_, t)| *t == Truth::Certain)
            .map(|(k, _)| &*k.target)
            .collect();
        out.push_str(&args.join(", "));
        out.push_str(")\n");
    }
    out
}
