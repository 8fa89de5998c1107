//! The bundled CLEVR case study: assets, program parsing and an executor
//! over scene graphs.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::Deserialize;

use crate::decoder::Assets;
use crate::grammar::Grammar;
use crate::metamodel::{ConstraintSet, Metamodel};
use crate::projector::ClevrProjector;
use crate::vocab::Vocabulary;

pub const GRAMMAR: &str = include_str!("../assets/clevr/grammar.ebnf");
pub const VOCAB: &str = include_str!("../assets/clevr/vocab.txt");
pub const METAMODEL: &str = include_str!("../assets/clevr/metamodel.json");
pub const CONSTRAINTS: &str = include_str!("../assets/clevr/constraints.json");
pub const SUITE: &str = include_str!("../assets/clevr/suite.json");
pub const CORPUS: &str = include_str!("../assets/clevr/corpus.txt");

/// Scene documents referenced by the bundled suite, keyed by suite path.
pub const SCENES: [(&str, &str); 8] = [
    ("scenes/scene_00.json", include_str!("../assets/clevr/scenes/scene_00.json")),
    ("scenes/scene_01.json", include_str!("../assets/clevr/scenes/scene_01.json")),
    ("scenes/scene_02.json", include_str!("../assets/clevr/scenes/scene_02.json")),
    ("scenes/scene_03.json", include_str!("../assets/clevr/scenes/scene_03.json")),
    ("scenes/scene_04.json", include_str!("../assets/clevr/scenes/scene_04.json")),
    ("scenes/scene_05.json", include_str!("../assets/clevr/scenes/scene_05.json")),
    ("scenes/scene_06.json", include_str!("../assets/clevr/scenes/scene_06.json")),
    ("scenes/scene_07.json", include_str!("../assets/clevr/scenes/scene_07.json")),
];

/// Version of the bundled fixture set, bumped whenever an asset changes.
pub const FIXTURE_VERSION: &str = "clevr-fixtures-1";

pub const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "gray", "brown", "purple", "cyan"];
pub const SHAPES: [&str; 3] = ["cube", "sphere", "cylinder"];
pub const SIZES: [&str; 2] = ["small", "large"];
pub const MATERIALS: [&str; 2] = ["rubber", "metal"];
pub const RELATIONS: [&str; 4] = ["left", "right", "front", "behind"];

/// Loads the bundled assets. Panics only if the embedded files are broken,
/// which the test suite rules out.
pub fn clevr_assets() -> Assets<ClevrProjector> {
    let vocab = Vocabulary::parse(VOCAB).expect("bundled vocabulary");
    let grammar = Arc::new(Grammar::parse(GRAMMAR).expect("bundled grammar"));
    let metamodel = Arc::new(Metamodel::from_json(METAMODEL).expect("bundled metamodel"));
    let constraints = ConstraintSet::from_json(CONSTRAINTS, &metamodel).expect("bundled constraints");
    let projector = ClevrProjector::new(&metamodel);
    Assets::new(vocab, grammar, metamodel, constraints, projector)
}

// ---------------------------------------------------------------------------
// programs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueType {
    Set,
    Obj,
    Int,
    Bool,
    Val,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attr {
    Color,
    Shape,
    Size,
    Material,
}

impl Attr {
    const ALL: [Attr; 4] = [Attr::Color, Attr::Shape, Attr::Size, Attr::Material];

    fn name(self) -> &'static str {
        match self {
            Attr::Color => "color",
            Attr::Shape => "shape",
            Attr::Size => "size",
            Attr::Material => "material",
        }
    }

    fn domain(self) -> &'static [&'static str] {
        match self {
            Attr::Color => &COLORS,
            Attr::Shape => &SHAPES,
            Attr::Size => &SIZES,
            Attr::Material => &MATERIALS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpKind {
    Scene,
    Filter(Attr),
    Unique,
    Relate,
    Same(Attr),
    Intersect,
    Union,
    Count,
    Exist,
    Query(Attr),
    Equal(Attr),
    EqualInteger,
    GreaterThan,
    LessThan,
}

impl OpKind {
    pub fn parse(name: &str) -> Option<OpKind> {
        let attr = |suffix: &str| Attr::ALL.into_iter().find(|a| a.name() == suffix);
        Some(match name {
            "scene" => OpKind::Scene,
            "unique" => OpKind::Unique,
            "relate" => OpKind::Relate,
            "intersect" => OpKind::Intersect,
            "union" => OpKind::Union,
            "count" => OpKind::Count,
            "exist" => OpKind::Exist,
            "equal_integer" => OpKind::EqualInteger,
            "greater_than" => OpKind::GreaterThan,
            "less_than" => OpKind::LessThan,
            _ => {
                let (head, tail) = name.split_once('_')?;
                let a = attr(tail)?;
                match head {
                    "filter" => OpKind::Filter(a),
                    "same" => OpKind::Same(a),
                    "query" => OpKind::Query(a),
                    "equal" => OpKind::Equal(a),
                    _ => return None,
                }
            }
        })
    }

    pub fn name(&self) -> String {
        match self {
            OpKind::Scene => "scene".into(),
            OpKind::Filter(a) => format!("filter_{}", a.name()),
            OpKind::Unique => "unique".into(),
            OpKind::Relate => "relate".into(),
            OpKind::Same(a) => format!("same_{}", a.name()),
            OpKind::Intersect => "intersect".into(),
            OpKind::Union => "union".into(),
            OpKind::Count => "count".into(),
            OpKind::Exist => "exist".into(),
            OpKind::Query(a) => format!("query_{}", a.name()),
            OpKind::Equal(a) => format!("equal_{}", a.name()),
            OpKind::EqualInteger => "equal_integer".into(),
            OpKind::GreaterThan => "greater_than".into(),
            OpKind::LessThan => "less_than".into(),
        }
    }

    /// Input types and result type.
    pub fn signature(&self) -> (&'static [ValueType], ValueType) {
        use ValueType::*;
        match self {
            OpKind::Scene => (&[], Set),
            OpKind::Filter(_) => (&[Set], Set),
            OpKind::Unique => (&[Set], Obj),
            OpKind::Relate | OpKind::Same(_) => (&[Obj], Set),
            OpKind::Intersect | OpKind::Union => (&[Set, Set], Set),
            OpKind::Count => (&[Set], Int),
            OpKind::Exist => (&[Set], Bool),
            OpKind::Query(_) => (&[Obj], Val),
            OpKind::Equal(_) => (&[Val, Val], Bool),
            OpKind::EqualInteger | OpKind::GreaterThan | OpKind::LessThan => (&[Int, Int], Bool),
        }
    }

    /// Allowed bracketed parameter values, for operators that take one.
    pub fn param_domain(&self) -> Option<&'static [&'static str]> {
        match self {
            OpKind::Filter(a) => Some(a.domain()),
            OpKind::Relate => Some(&RELATIONS),
            _ => None,
        }
    }

    pub fn all() -> Vec<OpKind> {
        let mut v = vec![OpKind::Scene];
        v.extend(Attr::ALL.map(OpKind::Filter));
        v.extend([OpKind::Unique, OpKind::Relate]);
        v.extend(Attr::ALL.map(OpKind::Same));
        v.extend([OpKind::Intersect, OpKind::Union, OpKind::Count, OpKind::Exist]);
        v.extend(Attr::ALL.map(OpKind::Query));
        v.extend(Attr::ALL.map(OpKind::Equal));
        v.extend([OpKind::EqualInteger, OpKind::GreaterThan, OpKind::LessThan]);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub id: String,
    pub op: OpKind,
    pub param: Option<String>,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramDag {
    pub statements: Vec<Statement>,
}

impl ProgramDag {
    pub fn output(&self) -> Option<&Statement> {
        self.statements.last()
    }
}

impl fmt::Display for ProgramDag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.statements {
            write!(f, "{} = {}", s.id, s.op.name())?;
            if let Some(p) = &s.param {
                write!(f, "[{p}]")?;
            }
            writeln!(f, "({})", s.args.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ProgramError {
    #[error("line {line}: {msg}")]
    SyntaxError { line: usize, msg: String },
    #[error("line {line}: {id} is used before its definition")]
    UseBeforeDef { line: usize, id: String },
    #[error("line {line}: {id} is defined twice")]
    DuplicateId { line: usize, id: String },
}

/// Parses `v<i> = op[param](args)` lines. Every line, the last included,
/// must end with a newline.
pub fn parse_program(text: &str) -> Result<ProgramDag, ProgramError> {
    let mut statements = Vec::new();
    let mut seen = HashSet::new();
    if text.is_empty() {
        return Err(ProgramError::SyntaxError { line: 1, msg: "empty program".into() });
    }
    if !text.ends_with('\n') {
        let line = text.lines().count();
        return Err(ProgramError::SyntaxError { line, msg: "missing final newline".into() });
    }
    for (i, raw) in text[..text.len() - 1].split('\n').enumerate() {
        let line = i + 1;
        let err = |msg: &str| ProgramError::SyntaxError { line, msg: msg.into() };
        let (id, call) = raw.split_once(" = ").ok_or_else(|| err("expected \"<id> = <call>\""))?;
        if !is_ident(id) {
            return Err(err("malformed identifier"));
        }
        let open = call.find('(').ok_or_else(|| err("expected '('"))?;
        let body = call[open + 1..].strip_suffix(')').ok_or_else(|| err("expected ')' at end of line"))?;
        let head = &call[..open];
        let (name, param) = match head.split_once('[') {
            Some((n, p)) => (n, Some(p.strip_suffix(']').ok_or_else(|| err("expected ']'"))?)),
            None => (head, None),
        };
        let op = OpKind::parse(name).ok_or_else(|| err("unknown operator"))?;
        match (op.param_domain(), param) {
            (Some(dom), Some(p)) if dom.contains(&p) => {}
            (Some(_), Some(_)) => return Err(err("parameter outside its domain")),
            (Some(_), None) => return Err(err("operator needs a parameter")),
            (None, Some(_)) => return Err(err("operator takes no parameter")),
            (None, None) => {}
        }
        let args: Vec<String> = if body.is_empty() {
            Vec::new()
        } else {
            body.split(", ").map(String::from).collect()
        };
        for a in &args {
            if !is_ident(a) {
                return Err(err("malformed argument"));
            }
            if !seen.contains(a.as_str()) {
                return Err(ProgramError::UseBeforeDef { line, id: a.clone() });
            }
        }
        if !seen.insert(id.to_string()) {
            return Err(ProgramError::DuplicateId { line, id: id.into() });
        }
        statements.push(Statement {
            id: id.to_string(),
            op,
            param: param.map(String::from),
            args,
        });
    }
    Ok(ProgramDag { statements })
}

fn is_ident(s: &str) -> bool {
    let Some(digits) = s.strip_prefix('v') else {
        return false;
    };
    match digits.len() {
        1 => digits.as_bytes()[0].is_ascii_digit(),
        2 => digits.as_bytes()[0] != b'0' && digits.bytes().all(|b| b.is_ascii_digit()),
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// scenes

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Object {
    pub color: String,
    pub shape: String,
    pub size: String,
    pub material: String,
}

impl Object {
    fn get(&self, a: Attr) -> &str {
        match a {
            Attr::Color => &self.color,
            Attr::Shape => &self.shape,
            Attr::Size => &self.size,
            Attr::Material => &self.material,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scene {
    pub objects: Vec<Object>,
    /// `relations[r][i]`: objects standing in relation `RELATIONS[r]` to object i.
    pub relations: [Vec<Vec<usize>>; 4],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    objects: Vec<Object>,
    #[serde(default)]
    relationships: HashMap<String, Vec<Vec<usize>>>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum SceneError {
    #[error("malformed scene: {0}")]
    Malformed(String),
    #[error("relationship {relation:?} of object {object} refers to object {index}, but the scene has {count}")]
    IndexOutOfRange {
        relation: String,
        object: usize,
        index: usize,
        count: usize,
    },
    #[error("{relation:?} and its inverse disagree on objects {a} and {b}")]
    NotInverse { relation: String, a: usize, b: usize },
}

pub fn load_scene(doc: &str) -> Result<Scene, SceneError> {
    let doc: SceneDoc = serde_json::from_str(doc).map_err(|e| SceneError::Malformed(e.to_string()))?;
    let n = doc.objects.len();
    for (i, o) in doc.objects.iter().enumerate() {
        for a in Attr::ALL {
            if !a.domain().contains(&o.get(a)) {
                return Err(SceneError::Malformed(format!(
                    "object {i} has unknown {} {:?}",
                    a.name(),
                    o.get(a)
                )));
            }
        }
    }
    if let Some(k) = doc.relationships.keys().find(|k| !RELATIONS.contains(&k.as_str())) {
        return Err(SceneError::Malformed(format!("unknown relationship {k:?}")));
    }
    let mut relations: [Vec<Vec<usize>>; 4] = Default::default();
    for (r, name) in RELATIONS.iter().enumerate() {
        let lists = doc.relationships.get(*name).cloned().unwrap_or_else(|| vec![Vec::new(); n]);
        if lists.len() != n {
            return Err(SceneError::Malformed(format!(
                "relationship {name:?} has {} lists for {n} objects",
                lists.len()
            )));
        }
        for (object, l) in lists.iter().enumerate() {
            if let Some(&index) = l.iter().find(|&&j| j >= n) {
                return Err(SceneError::IndexOutOfRange {
                    relation: name.to_string(),
                    object,
                    index,
                    count: n,
                });
            }
        }
        relations[r] = lists;
    }
    // left/right and front/behind must mirror each other
    for (a, b) in [(0, 1), (2, 3)] {
        for i in 0..n {
            for &j in &relations[a][i] {
                if !relations[b][j].contains(&i) {
                    return Err(SceneError::NotInverse {
                        relation: RELATIONS[a].to_string(),
                        a: i,
                        b: j,
                    });
                }
            }
            for &j in &relations[b][i] {
                if !relations[a][j].contains(&i) {
                    return Err(SceneError::NotInverse {
                        relation: RELATIONS[b].to_string(),
                        a: i,
                        b: j,
                    });
                }
            }
        }
    }
    Ok(Scene {
        objects: doc.objects,
        relations,
    })
}

// ---------------------------------------------------------------------------
// execution

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Answer {
    Int(i64),
    Bool(bool),
    Val(String),
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Int(n) => write!(f, "{n}"),
            Answer::Bool(true) => f.write_str("yes"),
            Answer::Bool(false) => f.write_str("no"),
            Answer::Val(s) => f.write_str(s),
        }
    }
}

impl Answer {
    /// Parses the textual form used in suite files.
    pub fn parse(s: &str) -> Answer {
        match s {
            "yes" => Answer::Bool(true),
            "no" => Answer::Bool(false),
            _ => s.parse().map(Answer::Int).unwrap_or_else(|_| Answer::Val(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Value {
    Set(BTreeSet<usize>),
    Obj(usize),
    Int(i64),
    Bool(bool),
    Val(String),
}

impl Value {
    fn ty(&self) -> ValueType {
        match self {
            Value::Set(_) => ValueType::Set,
            Value::Obj(_) => ValueType::Obj,
            Value::Int(_) => ValueType::Int,
            Value::Bool(_) => ValueType::Bool,
            Value::Val(_) => ValueType::Val,
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("{id}: unique applied to a set of {size} objects")]
    RuntimeNonUnique { id: String, size: usize },
    #[error("{id}: {op} expects {expected:?} arguments")]
    TypeMismatch {
        id: String,
        op: String,
        expected: Vec<ValueType>,
    },
    #[error("{0}: unknown argument")]
    UnknownArgument(String),
    #[error("program is empty")]
    Empty,
    #[error("program output is a {0:?}, not an answer")]
    NotAnAnswer(ValueType),
}

/// Runs `p` on `s`. Arguments are checked against operator signatures as
/// they are consumed, so a program that slipped past validation fails with
/// `TypeMismatch` rather than computing nonsense.
pub fn execute(p: &ProgramDag, s: &Scene) -> Result<Answer, ExecError> {
    let mut env: HashMap<&str, Value> = HashMap::new();
    let mut last = None;
    for st in &p.statements {
        let args: Vec<&Value> = st
            .args
            .iter()
            .map(|a| env.get(a.as_str()).ok_or_else(|| ExecError::UnknownArgument(a.clone())))
            .collect::<Result<_, _>>()?;
        let (want, _) = st.op.signature();
        if args.len() != want.len() || args.iter().zip(want).any(|(v, t)| v.ty() != *t) {
            return Err(ExecError::TypeMismatch {
                id: st.id.clone(),
                op: st.op.name(),
                expected: want.to_vec(),
            });
        }
        let v = apply(st, &args, s)?;
        last = Some(v.clone());
        env.insert(&st.id, v);
    }
    match last.ok_or(ExecError::Empty)? {
        Value::Int(n) => Ok(Answer::Int(n)),
        Value::Bool(b) => Ok(Answer::Bool(b)),
        Value::Val(v) => Ok(Answer::Val(v)),
        other => Err(ExecError::NotAnAnswer(other.ty())),
    }
}

fn apply(st: &Statement, args: &[&Value], s: &Scene) -> Result<Value, ExecError> {
    let set = |i: usize| match args[i] {
        Value::Set(x) => x,
        _ => unreachable!("checked against the signature"),
    };
    let obj = |i: usize| match args[i] {
        Value::Obj(o) => *o,
        _ => unreachable!("checked against the signature"),
    };
    let int = |i: usize| match args[i] {
        Value::Int(n) => *n,
        _ => unreachable!("checked against the signature"),
    };
    let val = |i: usize| match args[i] {
        Value::Val(v) => v.as_str(),
        _ => unreachable!("checked against the signature"),
    };
    let param = st.param.as_deref().unwrap_or_default();
    Ok(match &st.op {
        OpKind::Scene => Value::Set((0..s.objects.len()).collect()),
        OpKind::Filter(a) => Value::Set(
            set(0)
                .iter()
                .copied()
                .filter(|&i| s.objects[i].get(*a) == param)
                .collect(),
        ),
        OpKind::Unique => {
            let x = set(0);
            if x.len() != 1 {
                return Err(ExecError::RuntimeNonUnique {
                    id: st.id.clone(),
                    size: x.len(),
                });
            }
            Value::Obj(*x.iter().next().unwrap())
        }
        OpKind::Relate => {
            let r = RELATIONS.iter().position(|x| *x == param).unwrap_or(0);
            Value::Set(s.relations[r][obj(0)].iter().copied().collect())
        }
        OpKind::Same(a) => {
            let o = obj(0);
            let want = s.objects[o].get(*a);
            Value::Set(
                (0..s.objects.len())
                    .filter(|&i| i != o && s.objects[i].get(*a) == want)
                    .collect(),
            )
        }
        OpKind::Intersect => Value::Set(set(0).intersection(set(1)).copied().collect()),
        OpKind::Union => Value::Set(set(0).union(set(1)).copied().collect()),
        OpKind::Count => Value::Int(set(0).len() as i64),
        OpKind::Exist => Value::Bool(!set(0).is_empty()),
        OpKind::Query(a) => Value::Val(s.objects[obj(0)].get(*a).to_string()),
        OpKind::Equal(_) => Value::Bool(val(0) == val(1)),
        OpKind::EqualInteger => Value::Bool(int(0) == int(1)),
        OpKind::GreaterThan => Value::Bool(int(0) > int(1)),
        OpKind::LessThan => Value::Bool(int(0) < int(1)),
    })
}
