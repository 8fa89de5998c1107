//! Tiny languages and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use semdec::decoder::{Assets, Candidate, Decoder, DecoderConfig, DecodeState, Mode};
use semdec::grammar::{Grammar, ParseEvent};
use semdec::lm_provider::RandomProvider;
use semdec::metamodel::{AttrValue, Constraint, ConstraintKind, ConstraintSet, LiteralOp, Metamodel};
use semdec::partial_model::{EdgeKey, ModelDelta, PartialModel, Refinement, Truth};
use semdec::projector::{check_events, ClevrProjector, ProjectError, Projector};
use semdec::vocab::{TokenId, Vocabulary};

// ---------------------------------------------------------------------------
// arrows: `a>b;` statements over single-letter nodes

pub const ARROWS_GRAMMAR: &str = r#"
prog := edge | prog edge
edge := node ">" node ";"
node := "a" | "b" | "c"
"#;

pub const ARROWS_METAMODEL: &str = r#"{
  "node_types": [{"name": "Node", "attributes": {"name": {"enum": ["a", "b", "c"]}}}],
  "edge_types": [{"name": "arrow", "source": "Node", "target": "Node"}]
}"#;

pub const ARROWS_DAG: &str = r#"{
  "safety": [{"name": "acyclic", "kind": "Acyclic", "edge": "arrow"}],
  "completion": [{"name": "one_root", "kind": "SingleSink", "edge": "arrow"}]
}"#;

/// No arrow from `c` into `a`, and no arrow out of `b` at all.
pub const ARROWS_FORBIDDEN: &str = r#"{
  "safety": [
    {"name": "no_c_to_a", "kind": "ForbiddenPattern", "pattern": {
      "nodes": [
        {"var": "x", "type": "Node", "attrs": [{"slot": "name", "op": "eq", "value": "c"}]},
        {"var": "y", "type": "Node", "attrs": [{"slot": "name", "op": "eq", "value": "a"}]}
      ],
      "edges": [{"type": "arrow", "source": "x", "target": "y"}]}},
    {"name": "b_is_terminal", "kind": "ForbiddenPattern", "pattern": {
      "nodes": [
        {"var": "x", "type": "Node", "attrs": [{"slot": "name", "op": "eq", "value": "b"}]},
        {"var": "y", "type": "Node", "attrs": [{"slot": "name", "op": "ne", "value": "q"}]}
      ],
      "edges": [{"type": "arrow", "source": "x", "target": "y"}]}}
  ]
}"#;

#[derive(Debug, Clone)]
pub struct ArrowsProjector;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ArrowsState {
    pos: usize,
    source: Option<u8>,
    seen: Vec<u8>,
}

impl Projector for ArrowsProjector {
    type State = ArrowsState;

    fn name(&self) -> &str {
        "arrows"
    }

    fn init(&self) -> (ArrowsState, ModelDelta) {
        (ArrowsState::default(), ModelDelta::default())
    }

    fn project_token(
        &self,
        state: &ArrowsState,
        events: &[ParseEvent],
        token: &[u8],
    ) -> Result<(ArrowsState, ModelDelta), ProjectError> {
        check_events(events, state.pos, token.len(), "edge")?;
        let mut st = state.clone();
        let mut delta = ModelDelta::default();
        for &b in token {
            st.pos += 1;
            if !b.is_ascii_lowercase() {
                continue;
            }
            let id = (b as char).to_string();
            if !st.seen.contains(&b) {
                st.seen.push(b);
                delta.push(Refinement::AddNode {
                    id: id.clone(),
                    ty: "Node".into(),
                    truth: Truth::Certain,
                });
                delta.push(Refinement::SetAttribute {
                    id: id.clone(),
                    slot: "name".into(),
                    value: AttrValue::Str(id.clone()),
                });
            }
            match st.source.take() {
                None => st.source = Some(b),
                Some(s) => delta.push(Refinement::AddEdge {
                    key: EdgeKey::new("arrow", (s as char).to_string(), id),
                    truth: Truth::Certain,
                }),
            }
        }
        Ok((st, delta))
    }
}

fn tokens(list: &[&str]) -> Vocabulary {
    let mut t: Vec<Vec<u8>> = vec![Vec::new()];
    t.extend(list.iter().map(|s| s.as_bytes().to_vec()));
    Vocabulary::new(t, 0).unwrap()
}

pub fn arrows(constraints: &str) -> Assets<ArrowsProjector> {
    let vocab = tokens(&["a", "b", "c", ">", ";", "a>b;", "b>c;", "c>a;"]);
    let grammar = Arc::new(Grammar::parse(ARROWS_GRAMMAR).unwrap());
    let meta = Arc::new(Metamodel::from_json(ARROWS_METAMODEL).unwrap());
    let cs = ConstraintSet::from_json(constraints, &meta).unwrap();
    Assets::new(vocab, grammar, meta, cs, ArrowsProjector)
}

// ---------------------------------------------------------------------------
// a three-operator slice of the CLEVR language

pub const MINI_GRAMMAR: &str = r#"
program := stmt | program stmt
stmt := ident " = " call "\n"
call := op "(" args ")"
op := "scene" | "count" | "union"
args := "" | arglist
arglist := ident | ident ", " arglist
ident := "v0" | "v1" | "v2"
"#;

pub const MINI_METAMODEL: &str = r#"{
  "node_types": [
    {"name": "Operator", "abstract": true},
    {"name": "scene", "extends": "Operator", "produces": "Set"},
    {"name": "union", "extends": "Operator", "accepts": "Set", "produces": "Set"},
    {"name": "count", "extends": "Operator", "accepts": "Set", "produces": "Int"}
  ],
  "edge_types": [{"name": "input", "source": "Operator", "target": "Operator", "multiplicity": "0..2"}]
}"#;

pub const MINI_CONSTRAINTS: &str = r#"{
  "safety": [
    {"name": "type_consistency", "kind": "TypeConsistency", "edge": "input"},
    {"name": "input_arity", "kind": "ExactArity", "edge": "input", "arity": {"scene": 0, "union": 2, "count": 1}},
    {"name": "acyclic", "kind": "Acyclic", "edge": "input"},
    {"name": "defined_before_use", "kind": "DefinedBeforeUse", "edge": "input"}
  ],
  "completion": [
    {"name": "single_sink", "kind": "SingleSink", "edge": "input"},
    {"name": "answer_sink", "kind": "SinkType", "edge": "input", "types": ["Int"]}
  ]
}"#;

pub fn mini_clevr() -> Assets<ClevrProjector> {
    let vocab = tokens(&[
        "v0 = ", "v1 = ", "v2 = ", "scene()\n", "count(", "union(", "v0", "v1", ", ", ")\n",
    ]);
    let grammar = Arc::new(Grammar::parse(MINI_GRAMMAR).unwrap());
    let meta = Arc::new(Metamodel::from_json(MINI_METAMODEL).unwrap());
    let cs = ConstraintSet::from_json(MINI_CONSTRAINTS, &meta).unwrap();
    let projector = ClevrProjector::new(&meta);
    Assets::new(vocab, grammar, meta, cs, projector)
}

// ---------------------------------------------------------------------------
// brute-force constraint checking on the CERTAIN part of a model

struct Certain {
    ids: Vec<String>,
    edges: Vec<(String, usize, usize)>,
}

fn certain_part(pm: &PartialModel) -> Certain {
    let ids: Vec<String> = pm
        .nodes()
        .filter(|(_, n)| n.truth == Truth::Certain)
        .map(|(id, _)| id.to_string())
        .collect();
    let pos = |id: &str| ids.iter().position(|x| x == id);
    let edges = pm
        .edges()
        .filter(|(_, t)| *t == Truth::Certain)
        .filter_map(|(k, _)| Some((k.ty.to_string(), pos(&k.source)?, pos(&k.target)?)))
        .collect();
    Certain { ids, edges }
}

fn reaches(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut r = vec![vec![false; n]; n];
    for &(s, t) in edges {
        r[s][t] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if r[i][k] && r[k][j] {
                    r[i][j] = true;
                }
            }
        }
    }
    r
}

fn all_injections(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for prefix in all_injections(n, k - 1) {
        for v in 0..n {
            if !prefix.contains(&v) {
                let mut p = prefix.clone();
                p.push(v);
                out.push(p);
            }
        }
    }
    out
}

/// Names of constraints violated by CERTAIN elements alone, in a way no
/// addition of elements can undo. ERROR elements count as `error`.
pub fn definite_violations(pm: &PartialModel, cs: &ConstraintSet) -> Vec<String> {
    let meta = pm.metamodel();
    let mut out = Vec::new();
    if pm.nodes().any(|(_, n)| n.truth == Truth::Error) || pm.edges().any(|(_, t)| t == Truth::Error) {
        out.push("error".to_string());
    }
    let c = certain_part(pm);
    let node = |i: usize| pm.node(&c.ids[i]).unwrap();
    for con in &cs.safety {
        let hit = match &con.kind {
            ConstraintKind::TypeConsistency { edge } => c.edges.iter().any(|(ty, s, t)| {
                ty == edge
                    && matches!(
                        (meta.accepts(node(*s).ty), meta.produces(node(*t).ty)),
                        (Some(a), Some(p)) if a != p
                    )
            }),
            ConstraintKind::ExactArity { edge, arity } => (0..c.ids.len()).any(|i| {
                let ty = &meta.node_type(node(i).ty).name;
                let out_degree = c.edges.iter().filter(|(e, s, _)| e == edge && *s == i).count();
                arity.get(ty).is_some_and(|&want| out_degree > want as usize)
            }),
            ConstraintKind::Acyclic { edge } => {
                let es: Vec<(usize, usize)> =
                    c.edges.iter().filter(|(e, _, _)| e == edge).map(|&(_, s, t)| (s, t)).collect();
                let r = reaches(c.ids.len(), &es);
                (0..c.ids.len()).any(|i| r[i][i])
            }
            ConstraintKind::DefinedBeforeUse { edge } => c.edges.iter().any(|(e, s, t)| {
                e == edge && pm.node_index(&c.ids[*t]).unwrap() >= pm.node_index(&c.ids[*s]).unwrap()
            }),
            ConstraintKind::ForbiddenPattern { pattern } => {
                all_injections(c.ids.len(), pattern.nodes.len()).into_iter().any(|m| {
                    let nodes_ok = pattern.nodes.iter().zip(&m).all(|(pn, &i)| {
                        let n = node(i);
                        meta.node_type_id(&pn.r#type).is_some_and(|t| meta.is_subtype(n.ty, t))
                            && pn.attrs.iter().all(|lit| match (n.attrs.get(&lit.slot), &lit.op) {
                                (Some(v), LiteralOp::Eq) => *v == lit.value,
                                (Some(v), LiteralOp::Ne) => *v != lit.value,
                                (None, _) => false,
                            })
                    });
                    let var = |v: &str| m[pattern.nodes.iter().position(|n| n.var == v).unwrap()];
                    nodes_ok
                        && pattern.edges.iter().all(|pe| {
                            c.edges
                                .iter()
                                .any(|(e, s, t)| *e == pe.r#type && *s == var(&pe.source) && *t == var(&pe.target))
                        })
                })
            }
            _ => false,
        };
        if hit {
            out.push(con.name.clone());
        }
    }
    out
}

/// Exact check of a finished model: no POSSIBLE or ERROR elements, no
/// definite violation, exact arities and every completion constraint.
pub fn final_ok(pm: &PartialModel, cs: &ConstraintSet) -> bool {
    let meta = pm.metamodel();
    if pm.nodes().any(|(_, n)| n.truth != Truth::Certain) || pm.edges().any(|(_, t)| t != Truth::Certain) {
        return false;
    }
    if !definite_violations(pm, cs).is_empty() {
        return false;
    }
    let c = certain_part(pm);
    let exact = |con: &Constraint| match &con.kind {
        ConstraintKind::ExactArity { edge, arity } => (0..c.ids.len()).all(|i| {
            let ty = &meta.node_type(pm.node(&c.ids[i]).unwrap().ty).name;
            let d = c.edges.iter().filter(|(e, s, _)| e == edge && *s == i).count();
            arity.get(ty).is_none_or(|&want| d == want as usize)
        }),
        _ => true,
    };
    let sinks = |edge: &str| -> Vec<usize> {
        (0..c.ids.len())
            .filter(|&i| !c.edges.iter().any(|(e, _, t)| e == edge && *t == i))
            .collect()
    };
    cs.safety.iter().all(exact)
        && cs.completion.iter().all(|con| match &con.kind {
            ConstraintKind::SingleSink { edge } => sinks(edge).len() == 1,
            ConstraintKind::SinkType { edge, types } => sinks(edge).iter().all(|&i| {
                meta.produces(pm.node(&c.ids[i]).unwrap().ty)
                    .is_some_and(|p| types.iter().any(|t| t == p))
            }),
            _ => exact(con),
        })
}

// ---------------------------------------------------------------------------
// decoding helpers

pub fn decoder<'a, P: Projector>(assets: &'a Assets<P>, provider: &'a RandomProvider, mode: Mode) -> Decoder<'a, P, RandomProvider> {
    Decoder::new(assets, provider, DecoderConfig::greedy(mode))
}

/// The state after committing `t`, if the decoder accepts it.
pub fn commit<P: Projector, L: semdec::lm_provider::LmProvider + ?Sized>(
    d: &Decoder<'_, P, L>,
    assets: &Assets<P>,
    st: &DecodeState<P::State>,
    t: TokenId,
) -> Option<DecodeState<P::State>> {
    match d.check(st, t) {
        Candidate::Accept {
            recognizer,
            projector,
            model,
        } => {
            let mut tokens = st.tokens.clone();
            tokens.push(t);
            let mut text = st.text.clone();
            text.extend_from_slice(assets.vocab.bytes(t).unwrap());
            Some(DecodeState {
                tokens,
                text,
                recognizer,
                projector,
                model,
            })
        }
        _ => None,
    }
}

pub fn text_of(vocab: &Vocabulary, ids: &[TokenId]) -> Vec<u8> {
    vocab.decode(ids).unwrap()
}

// ---------------------------------------------------------------------------
// exhaustive mask check

#[derive(Debug, Default)]
pub struct OracleReport {
    pub prefixes: usize,
    pub sentences: usize,
    /// Prefixes whose semantic mask equals the completable set exactly.
    pub tight: usize,
    /// Syntactically allowed tokens the semantic mask removed.
    pub pruned: usize,
    pub failures: Vec<String>,
}

fn sentence_ok<P: Projector>(assets: &Assets<P>, text: &[u8]) -> bool {
    assets.grammar.accepts(text) && assets.project(text).is_ok_and(|pm| final_ok(&pm, &assets.constraints))
}

/// Enumerates every token sequence of at most `max_len` tokens, then walks
/// every prefix the semantic decoder can reach and compares its masks with
/// the oracle bounds: completable tokens below, definitely-violating ones
/// above.
pub fn mask_oracle<P: Projector>(assets: &Assets<P>, max_len: usize) -> OracleReport {
    use std::collections::HashSet;
    let vocab = &assets.vocab;
    let eos = vocab.eos();
    let n = vocab.len() as TokenId;
    let mut report = OracleReport::default();
    let mut valid: HashSet<Vec<TokenId>> = HashSet::new();
    let mut completable: HashSet<Vec<TokenId>> = HashSet::new();
    let mut stack: Vec<Vec<TokenId>> = vec![Vec::new()];
    while let Some(seq) = stack.pop() {
        let text = text_of(vocab, &seq);
        if !assets.grammar.initial_state().advance(&text).is_dead() {
            let ok = sentence_ok(assets, &text);
            if ok != assets.validate(&text).semantic {
                report.failures.push(format!("validator disagrees on {:?}", String::from_utf8_lossy(&text)));
            }
            if ok {
                for k in 0..=seq.len() {
                    completable.insert(seq[..k].to_vec());
                }
                valid.insert(seq.clone());
            }
            if seq.len() < max_len {
                for t in (0..n).filter(|&t| t != eos) {
                    let mut next = seq.clone();
                    next.push(t);
                    stack.push(next);
                }
            }
        }
    }
    report.sentences = valid.len();

    let provider = RandomProvider::new(vocab.len(), 0);
    let d = decoder(assets, &provider, Mode::Semantic);
    let mut states = vec![d.initial_state().unwrap()];
    while let Some(st) = states.pop() {
        report.prefixes += 1;
        let (syn, sem, _) = d.masks(&st);
        let shown = String::from_utf8_lossy(&st.text).into_owned();
        if !sem.is_subset(&syn) {
            report.failures.push(format!("{shown:?}: semantic mask exceeds syntactic mask"));
        }
        let mut tight = true;
        for t in 0..n {
            let allowed = sem.is_allowed(t);
            let (lower, upper_ok) = if t == eos {
                let ok = valid.contains(&st.tokens);
                (ok, ok)
            } else {
                let mut seq = st.tokens.clone();
                seq.push(t);
                let text = text_of(vocab, &seq);
                let clean = assets
                    .project(&text)
                    .is_ok_and(|pm| definite_violations(&pm, &assets.constraints).is_empty());
                (completable.contains(&seq), syn.is_allowed(t) && clean)
            };
            if lower && !allowed {
                report.failures.push(format!("{shown:?}: completable token {} masked", vocab.display(t)));
            }
            if allowed && !upper_ok {
                report.failures.push(format!("{shown:?}: token {} allowed despite a definite violation", vocab.display(t)));
            }
            tight &= lower == allowed;
            report.pruned += (syn.is_allowed(t) && !allowed) as usize;
            if allowed && t != eos && st.tokens.len() + 1 < max_len {
                states.push(commit(&d, assets, &st, t).expect("allowed tokens commit"));
            }
        }
        report.tight += tight as usize;
    }
    report
}

pub mod algebra;
pub mod programs;
