//! Context-free grammars over bytes and an incremental Earley recognizer.
//!
//! Grammar documents hold one rule per line:
//!
//! ```text
//! # comment
//! program := stmt | program stmt
//! stmt    := ident " = " call "\n"
//!          | "pass\n"
//! ```
//!
//! An alternative is a whitespace separated sequence of rule names and
//! double-quoted literals (C escapes, `""` for the empty string). A line that
//! starts with `|` continues the previous rule. The first rule is the start
//! symbol. Literals are expanded to one terminal per byte, so the recognizer
//! never needs token and terminal boundaries to line up.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use rustc_hash::FxHashSet;

use crate::escape::parse_quoted;
use crate::vocab::{TokenMask, VocabTrie, Vocabulary};

pub type RuleId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    Byte(u8),
    Rule(RuleId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Production {
    pub lhs: RuleId,
    pub rhs: Vec<Symbol>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GrammarError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("undeclared symbol {0:?}")]
    UndeclaredSymbol(String),
    #[error("grammar has no rules")]
    Empty,
    #[error("recognizer state is dead")]
    DeadState,
}

#[derive(Clone, PartialEq, Eq)]
pub struct Grammar {
    names: Vec<Arc<str>>,
    index: HashMap<String, RuleId>,
    productions: Vec<Production>,
    by_lhs: Vec<Vec<u32>>,
    nullable: Vec<bool>,
    start: RuleId,
}

impl fmt::Debug for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grammar")
            .field("start", &self.names[self.start as usize])
            .field("rules", &self.names.len())
            .field("productions", &self.productions.len())
            .finish()
    }
}

enum RawSym {
    Name(String),
    Lit(Vec<u8>),
}

impl Grammar {
    pub fn parse(text: &str) -> Result<Self, GrammarError> {
        // (rule name, alternatives) in declaration order
        let mut rules: Vec<(String, Vec<Vec<RawSym>>, usize)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let trimmed = raw.trim_start();
            let indent = raw.len() - trimmed.len();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (body, body_col) = if let Some(rest) = trimmed.strip_prefix('|') {
                if rules.is_empty() {
                    return Err(GrammarError::Syntax {
                        line: line_no,
                        col: indent + 1,
                        msg: "continuation line before any rule".into(),
                    });
                }
                rules.last_mut().unwrap().1.push(Vec::new());
                (rest, indent + 2)
            } else {
                let Some(def) = trimmed.find(":=") else {
                    return Err(GrammarError::Syntax {
                        line: line_no,
                        col: indent + 1,
                        msg: "expected `name := ...`".into(),
                    });
                };
                let name = trimmed[..def].trim();
                if !is_ident(name) {
                    return Err(GrammarError::Syntax {
                        line: line_no,
                        col: indent + 1,
                        msg: format!("invalid rule name {name:?}"),
                    });
                }
                rules.push((name.to_string(), vec![Vec::new()], line_no));
                (&trimmed[def + 2..], indent + def + 3)
            };
            let alts = &mut rules.last_mut().unwrap().1;
            tokenize_body(body, line_no, body_col, alts)?;
        }
        if rules.is_empty() {
            return Err(GrammarError::Empty);
        }

        let mut names = Vec::new();
        let mut index = HashMap::new();
        for (name, _, _) in &rules {
            if !index.contains_key(name) {
                index.insert(name.clone(), names.len() as RuleId);
                names.push(name.clone());
            }
        }
        let mut productions = Vec::new();
        for (name, alts, _) in rules {
            let lhs = index[&name];
            for alt in alts {
                let mut rhs = Vec::new();
                for sym in alt {
                    match sym {
                        RawSym::Lit(bytes) => rhs.extend(bytes.into_iter().map(Symbol::Byte)),
                        RawSym::Name(n) => match index.get(&n) {
                            Some(&id) => rhs.push(Symbol::Rule(id)),
                            None => return Err(GrammarError::UndeclaredSymbol(n)),
                        },
                    }
                }
                productions.push(Production { lhs, rhs });
            }
        }
        Ok(Self::from_productions(names, productions, 0))
    }

    /// Builds a grammar from already-resolved productions. Productions that
    /// mention an unproductive rule are dropped so that a non-empty Earley
    /// set always has a completion.
    pub fn from_productions(names: Vec<String>, productions: Vec<Production>, start: RuleId) -> Self {
        let n = names.len();
        let mut productive = vec![false; n];
        loop {
            let mut changed = false;
            for p in &productions {
                if !productive[p.lhs as usize]
                    && p.rhs.iter().all(|s| match s {
                        Symbol::Byte(_) => true,
                        Symbol::Rule(r) => productive[*r as usize],
                    })
                {
                    productive[p.lhs as usize] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let productions: Vec<Production> = productions
            .into_iter()
            .filter(|p| {
                productive[p.lhs as usize]
                    && p.rhs.iter().all(|s| match s {
                        Symbol::Byte(_) => true,
                        Symbol::Rule(r) => productive[*r as usize],
                    })
            })
            .collect();
        let mut nullable = vec![false; n];
        loop {
            let mut changed = false;
            for p in &productions {
                if !nullable[p.lhs as usize]
                    && p.rhs.iter().all(|s| matches!(s, Symbol::Rule(r) if nullable[*r as usize]))
                {
                    nullable[p.lhs as usize] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let mut by_lhs = vec![Vec::new(); n];
        for (i, p) in productions.iter().enumerate() {
            by_lhs[p.lhs as usize].push(i as u32);
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as RuleId))
            .collect();
        Self {
            names: names.into_iter().map(Arc::from).collect(),
            index,
            productions,
            by_lhs,
            nullable,
            start,
        }
    }

    pub fn start(&self) -> RuleId {
        self.start
    }

    pub fn start_name(&self) -> &str {
        &self.names[self.start as usize]
    }

    pub fn rule_name(&self, id: RuleId) -> &str {
        &self.names[id as usize]
    }

    pub fn rule_id(&self, name: &str) -> Option<RuleId> {
        self.index.get(name).copied()
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn productions_of(&self, lhs: RuleId) -> impl Iterator<Item = &Production> + '_ {
        self.by_lhs[lhs as usize]
            .iter()
            .map(move |&p| &self.productions[p as usize])
    }

    pub fn is_nullable(&self, rule: RuleId) -> bool {
        self.nullable[rule as usize]
    }

    /// Recognizer state for the empty prefix.
    pub fn initial_state(self: &Arc<Self>) -> RecognizerState {
        let mut seed = Vec::new();
        for &p in &self.by_lhs[self.start as usize] {
            seed.push(Item {
                prod: p,
                dot: 0,
                origin: 0,
            });
        }
        let mut sets = Chart::default();
        let set = closure(self, &sets, 0, seed);
        sets.push(Arc::new(set));
        RecognizerState {
            grammar: Arc::clone(self),
            sets,
        }
    }

    /// Whole-text membership test.
    pub fn accepts(self: &Arc<Self>, text: &[u8]) -> bool {
        self.initial_state().advance(text).is_accepting()
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn tokenize_body(
    body: &str,
    line: usize,
    col0: usize,
    alts: &mut Vec<Vec<RawSym>>,
) -> Result<(), GrammarError> {
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let col = col0 + i;
        match c {
            b' ' | b'\t' => i += 1,
            b'#' => break,
            b'|' => {
                alts.push(Vec::new());
                i += 1;
            }
            b'"' => {
                let (lit, used) = parse_quoted(&body[i..]).map_err(|msg| GrammarError::Syntax {
                    line,
                    col,
                    msg,
                })?;
                alts.last_mut().unwrap().push(RawSym::Lit(lit));
                i += used;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                alts.last_mut()
                    .unwrap()
                    .push(RawSym::Name(body[start..i].to_string()));
            }
            _ => {
                return Err(GrammarError::Syntax {
                    line,
                    col,
                    msg: format!("unexpected character {:?}", c as char),
                })
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Item {
    prod: u32,
    dot: u32,
    origin: u32,
}

#[derive(Debug)]
struct EarleySet {
    items: Vec<Item>,
    accepting: bool,
}

fn next_symbol(g: &Grammar, it: Item) -> Option<Symbol> {
    g.productions[it.prod as usize].rhs.get(it.dot as usize).copied()
}

/// Per-thread scratch space reused across closures.
#[derive(Default)]
struct Scratch {
    seen: FxHashSet<Item>,
    /// `predicted[r] == stamp` once rule `r` was predicted in this set.
    predicted: Vec<u32>,
    stamp: u32,
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Scratch> = std::cell::RefCell::new(Scratch {
        seen: FxHashSet::with_capacity_and_hasher(256, Default::default()),
        ..Scratch::default()
    });
}

fn closure(g: &Grammar, sets: &Chart, k: u32, seed: Vec<Item>) -> EarleySet {
    SCRATCH.with(|s| {
        let s = &mut *s.borrow_mut();
        s.seen.clear();
        if s.predicted.len() < g.by_lhs.len() {
            s.predicted.resize(g.by_lhs.len(), 0);
        }
        s.stamp = s.stamp.wrapping_add(1);
        if s.stamp == 0 {
            s.predicted.iter_mut().for_each(|p| *p = 0);
            s.stamp = 1;
        }
        closure_with(g, sets, k, seed, s)
    })
}

fn closure_with(g: &Grammar, sets: &Chart, k: u32, seed: Vec<Item>, s: &mut Scratch) -> EarleySet {
    let Scratch { seen, predicted, stamp } = s;
    let mut items = Vec::with_capacity(seed.len() * 4);
    for it in seed {
        // a seed of fresh items is a whole prediction (the initial state)
        if it.dot == 0 && it.origin == k {
            predicted[g.productions[it.prod as usize].lhs as usize] = *stamp;
        }
        if seen.insert(it) {
            items.push(it);
        }
    }
    let mut i = 0;
    while i < items.len() {
        let it = items[i];
        i += 1;
        match next_symbol(g, it) {
            Some(Symbol::Rule(r)) => {
                if predicted[r as usize] != *stamp {
                    predicted[r as usize] = *stamp;
                    // dot-0 items only ever come from here, so no dedup
                    items.extend(g.by_lhs[r as usize].iter().map(|&p| Item {
                        prod: p,
                        dot: 0,
                        origin: k,
                    }));
                }
                if g.nullable[r as usize] {
                    let new = Item { dot: it.dot + 1, ..it };
                    if seen.insert(new) {
                        items.push(new);
                    }
                }
            }
            Some(Symbol::Byte(_)) => {}
            None => {
                // nullable completions inside this set are covered by the
                // prediction step above
                if it.origin == k {
                    continue;
                }
                let lhs = g.productions[it.prod as usize].lhs;
                let origin = sets.get(it.origin as usize);
                for &parent in &origin.items {
                    if next_symbol(g, parent) == Some(Symbol::Rule(lhs)) {
                        let new = Item {
                            dot: parent.dot + 1,
                            ..parent
                        };
                        if seen.insert(new) {
                            items.push(new);
                        }
                    }
                }
            }
        }
    }
    let accepting = items.iter().any(|it| {
        it.origin == 0
            && g.productions[it.prod as usize].lhs == g.start
            && it.dot as usize == g.productions[it.prod as usize].rhs.len()
    });
    EarleySet { items, accepting }
}

/// Parse events reported while advancing; positions are absolute byte
/// offsets into the recognized text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseEvent {
    StartedProduction { name: Arc<str>, at: usize },
    CompletedProduction { name: Arc<str>, span: Range<usize> },
    ConsumedBytes { span: Range<usize> },
}

/// Checkpoint of the recognizer after a byte prefix. Cloning is cheap and
/// advancing never mutates the receiver.
#[derive(Clone)]
pub struct RecognizerState {
    grammar: Arc<Grammar>,
    sets: Chart,
}

/// Earley sets by position: a shared frozen prefix plus a short owned tail,
/// so tentative advances copy only the tail.
#[derive(Clone, Default)]
struct Chart {
    base: Arc<Vec<Arc<EarleySet>>>,
    tail: Vec<Arc<EarleySet>>,
}

const TAIL_LIMIT: usize = 32;

impl Chart {
    fn len(&self) -> usize {
        self.base.len() + self.tail.len()
    }

    fn get(&self, i: usize) -> &EarleySet {
        match i.checked_sub(self.base.len()) {
            Some(j) => &self.tail[j],
            None => &self.base[i],
        }
    }

    fn last(&self) -> &EarleySet {
        self.get(self.len() - 1)
    }

    fn push(&mut self, set: Arc<EarleySet>) {
        if self.tail.len() >= TAIL_LIMIT {
            let mut base = Vec::with_capacity(self.len() + TAIL_LIMIT);
            base.extend(self.base.iter().cloned());
            base.append(&mut self.tail);
            self.base = Arc::new(base);
        }
        self.tail.push(set);
    }
}

impl fmt::Debug for RecognizerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RecognizerState")
            .field("position", &self.position())
            .field("dead", &self.is_dead())
            .field("accepting", &self.is_accepting())
            .finish()
    }
}

impl RecognizerState {
    pub fn grammar(&self) -> &Arc<Grammar> {
        &self.grammar
    }

    /// Number of bytes consumed so far.
    pub fn position(&self) -> usize {
        self.sets.len() - 1
    }

    fn last(&self) -> &EarleySet {
        self.sets.last()
    }

    pub fn is_dead(&self) -> bool {
        self.last().items.is_empty()
    }

    pub fn is_accepting(&self) -> bool {
        self.last().accepting
    }

    /// Whether some item in the current set scans `b` next.
    pub fn admits_byte(&self, b: u8) -> bool {
        let g = &*self.grammar;
        self.last()
            .items
            .iter()
            .any(|it| next_symbol(g, *it) == Some(Symbol::Byte(b)))
    }

    /// Advances by one byte.
    pub fn advance_byte(&self, b: u8) -> RecognizerState {
        let mut st = self.clone();
        st.push_byte(b);
        st
    }

    fn push_byte(&mut self, b: u8) {
        let g = &*self.grammar;
        let k = self.sets.len() as u32;
        let seed: Vec<Item> = self
            .last()
            .items
            .iter()
            .filter(|it| next_symbol(g, **it) == Some(Symbol::Byte(b)))
            .map(|it| Item {
                dot: it.dot + 1,
                ..*it
            })
            .collect();
        let set = if seed.is_empty() {
            EarleySet {
                items: Vec::new(),
                accepting: false,
            }
        } else {
            closure(g, &self.sets, k, seed)
        };
        self.sets.push(Arc::new(set));
    }

    pub fn advance(&self, bytes: &[u8]) -> RecognizerState {
        let mut st = self.clone();
        for &b in bytes {
            st.push_byte(b);
        }
        st
    }

    /// Advances and reports what the recognizer saw, in document order.
    pub fn advance_with_events(&self, bytes: &[u8]) -> (RecognizerState, Vec<ParseEvent>) {
        let g = &*self.grammar;
        let mut st = self.clone();
        let mut events: Vec<ParseEvent> = Vec::with_capacity(4 * bytes.len() + 4);
        for &b in bytes {
            let start = st.position();
            st.push_byte(b);
            push_consumed(&mut events, start..start + 1);
            if st.is_dead() {
                continue;
            }
            let end = st.position();
            let set = st.last();
            let mut done: Vec<(u32, RuleId)> = set
                .items
                .iter()
                .filter(|it| it.dot as usize == g.productions[it.prod as usize].rhs.len())
                .map(|it| (it.origin, g.productions[it.prod as usize].lhs))
                .collect();
            done.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            done.dedup();
            for (origin, lhs) in done {
                events.push(ParseEvent::CompletedProduction {
                    name: g.names[lhs as usize].clone(),
                    span: origin as usize..end,
                });
            }
            let mut started: Vec<RuleId> = set
                .items
                .iter()
                .filter(|it| it.dot == 0 && it.origin as usize == end)
                .map(|it| g.productions[it.prod as usize].lhs)
                .collect();
            started.sort_unstable();
            started.dedup();
            for lhs in started {
                events.push(ParseEvent::StartedProduction {
                    name: g.names[lhs as usize].clone(),
                    at: end,
                });
            }
        }
        (st, events)
    }

    /// Tokens allowed after this prefix: a non-eos token is allowed iff the
    /// recognizer survives its bytes, eos iff the prefix is a sentence.
    pub fn syntactic_mask(&self, vocab: &Vocabulary, trie: &VocabTrie) -> Result<TokenMask, GrammarError> {
        if self.is_dead() {
            return Err(GrammarError::DeadState);
        }
        let mut mask = TokenMask::none(vocab.len());
        if self.is_accepting() {
            mask.allow(vocab.eos());
        }
        let mut stack: Vec<(usize, RecognizerState)> = vec![(trie.root(), self.clone())];
        while let Some((node, st)) = stack.pop() {
            for &(b, child) in &trie.node(node).children {
                let next = st.advance_byte(b);
                if next.is_dead() {
                    continue;
                }
                if let Some(id) = trie.node(child).token {
                    mask.allow(id);
                }
                if !trie.node(child).children.is_empty() {
                    stack.push((child, next));
                }
            }
        }
        Ok(mask)
    }
}

fn push_consumed(events: &mut Vec<ParseEvent>, span: Range<usize>) {
    if let Some(ParseEvent::ConsumedBytes { span: last }) = events.last_mut() {
        if last.end == span.start {
            last.end = span.end;
            return;
        }
    }
    events.push(ParseEvent::ConsumedBytes { span });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(text: &str) -> Arc<Grammar> {
        Arc::new(Grammar::parse(text).unwrap())
    }

    #[test]
    fn parses_alternatives() {
        let gr = g(r#"S := "a" S | "b""#);
        assert_eq!(gr.productions().len(), 2);
        assert_eq!(gr.start_name(), "S");
    }

    #[test]
    fn reports_undeclared_and_syntax_errors() {
        assert_eq!(
            Grammar::parse(r#"S := "a" T"#),
            Err(GrammarError::UndeclaredSymbol("T".into()))
        );
        assert!(matches!(
            Grammar::parse("S := \"a\"\nT = \"b\""),
            Err(GrammarError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            Grammar::parse(r#"S := "a" $"#),
            Err(GrammarError::Syntax { line: 1, col: 10, .. })
        ));
        assert_eq!(Grammar::parse("# nothing\n"), Err(GrammarError::Empty));
    }

    #[test]
    fn continuation_lines_add_alternatives() {
        let gr = g("S := \"a\"\n  | \"b\" # trailing\n  | \"\"\n");
        assert_eq!(gr.productions().len(), 3);
        assert!(gr.accepts(b""));
        assert!(gr.accepts(b"b"));
    }

    #[test]
    fn initial_states() {
        assert!(g(r#"S := """#).initial_state().is_accepting());
        let s = g(r#"S := "a""#).initial_state();
        assert!(!s.is_accepting());
        assert!(!s.is_dead());
    }

    #[test]
    fn advance_examples() {
        let gr = g(r#"S := "ab""#);
        let init = gr.initial_state();
        let a = init.advance(b"a");
        assert!(!a.is_dead() && !a.is_accepting());
        assert!(init.advance(b"b").is_dead());
        assert!(a.advance(b"b").is_accepting());
        // the input state is untouched
        assert_eq!(init.position(), 0);
        assert!(init.advance(b"b").advance(b"ab").is_dead());
        assert_eq!(init.advance(b"bab").position(), 3);
    }

    #[test]
    fn left_and_right_recursion_and_nullables() {
        let gr = g("L := L \"x\" | \"\"\nR := \"y\" R | \"\"\nS := L R\n");
        // start is L, the first rule
        assert!(gr.accepts(b"xxx"));
        assert!(!gr.accepts(b"xy"));
        let gr = g("S := L R \"!\"\nL := L \"x\" | \"\"\nR := \"y\" R | \"\"\n");
        assert!(gr.accepts(b"xxyy!"));
        assert!(gr.accepts(b"!"));
        assert!(!gr.accepts(b"yx!"));
        let gr = g("S := A A \"z\"\nA := B\nB := \"\" | \"b\"\n");
        for s in [&b"z"[..], b"bz", b"bbz"] {
            assert!(gr.accepts(s), "{:?}", s);
        }
        assert!(!gr.accepts(b"bbbz"));
    }

    #[test]
    fn unproductive_rules_are_dead() {
        let gr = g("S := \"a\" T | \"b\"\nT := T \"c\"\n");
        assert!(gr.initial_state().advance(b"a").is_dead());
        assert!(gr.accepts(b"b"));
    }

    #[test]
    fn events_report_completions() {
        let gr = g("S := A \"!\"\nA := \"ab\"\n");
        let (st, ev) = gr.initial_state().advance_with_events(b"ab!");
        assert!(st.is_accepting());
        assert_eq!(ev[0], ParseEvent::ConsumedBytes { span: 0..2 });
        assert_eq!(
            ev[1],
            ParseEvent::CompletedProduction {
                name: "A".into(),
                span: 0..2
            }
        );
        assert!(ev.contains(&ParseEvent::CompletedProduction {
            name: "S".into(),
            span: 0..3
        }));
    }

    fn brute_mask(st: &RecognizerState, v: &Vocabulary) -> TokenMask {
        let mut m = TokenMask::none(v.len());
        for (id, bytes) in v.iter() {
            if !st.advance(bytes).is_dead() {
                m.allow(id);
            }
        }
        if st.is_accepting() {
            m.allow(v.eos());
        }
        m
    }

    #[test]
    fn mask_examples() {
        let gr = g(r#"S := "ab""#);
        let v = Vocabulary::parse("\"a\"\n\"b\"\n\"ab\"\n#eos\n").unwrap();
        let trie = VocabTrie::new(&v);
        let a = gr.initial_state().advance(b"a");
        let m = a.syntactic_mask(&v, &trie).unwrap();
        assert_eq!(m.iter_allowed().collect::<Vec<_>>(), vec![1]);
        assert_eq!(m, brute_mask(&a, &v));
        let ab = a.advance(b"b");
        let m = ab.syntactic_mask(&v, &trie).unwrap();
        assert_eq!(m.iter_allowed().collect::<Vec<_>>(), vec![v.eos()]);
        assert_eq!(
            gr.initial_state().advance(b"b").syntactic_mask(&v, &trie),
            Err(GrammarError::DeadState)
        );
    }
}
