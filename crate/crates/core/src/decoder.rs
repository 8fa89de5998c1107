//! The decoding loop: score, mask by grammar, mask by tentative model
//! refinement, sample, commit.
//!
//! Two mask strategies give the same tokens. `Eager` builds the full
//! syntactic and semantic masks every step and records why each rejected
//! token was rejected. `Lazy` walks candidates in sampling order and stops
//! at the first admissible one, which is much cheaper when the model's
//! favourite is usually fine.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::grammar::{Grammar, RecognizerState};
use crate::lm_provider::{derive_seed, Distribution, LmProvider, ProviderError};
use crate::metamodel::{ConstraintSet, Metamodel};
use crate::partial_model::PartialModel;
use crate::projector::{project_text, ProjectError, Projector};
use crate::semantics::{eval_completion, eval_safety, validate_complete, SemanticsError, ValidationReport};
use crate::vocab::{TokenId, TokenMask, VocabTrie, Vocabulary};

/// Everything the engine needs about one artifact language.
pub struct Assets<P: Projector> {
    pub vocab: Vocabulary,
    pub trie: VocabTrie,
    pub grammar: Arc<Grammar>,
    pub metamodel: Arc<Metamodel>,
    pub constraints: ConstraintSet,
    pub projector: P,
}

impl<P: Projector> Assets<P> {
    pub fn new(
        vocab: Vocabulary,
        grammar: Arc<Grammar>,
        metamodel: Arc<Metamodel>,
        constraints: ConstraintSet,
        projector: P,
    ) -> Self {
        let trie = VocabTrie::new(&vocab);
        Self {
            vocab,
            trie,
            grammar,
            metamodel,
            constraints,
            projector,
        }
    }

    pub fn validate(&self, text: &[u8]) -> ValidationReport {
        validate_complete(text, &self.grammar, &self.metamodel, &self.constraints, &self.projector)
    }

    /// Projects a complete or partial text from scratch.
    pub fn project(&self, text: &[u8]) -> Result<PartialModel, ProjectError> {
        project_text(&self.projector, &self.grammar, &self.metamodel, text).map(|(_, pm)| pm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    None,
    Syntactic,
    Semantic,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::None, Mode::Syntactic, Mode::Semantic];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::Syntactic => "syntactic",
            Mode::Semantic => "semantic",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Mode::None),
            "syntactic" => Ok(Mode::Syntactic),
            "semantic" => Ok(Mode::Semantic),
            other => Err(format!("unknown mode {other:?} (none, syntactic, semantic)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    Greedy,
    /// Softmax at temperature `tau` over the allowed tokens, optionally
    /// restricted to the `top_k` best-scoring allowed tokens.
    Temperature { tau: f64, seed: u64, top_k: Option<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskStrategy {
    Eager,
    #[default]
    Lazy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub mode: Mode,
    pub sampling: Sampling,
    pub max_tokens: usize,
    pub strategy: MaskStrategy,
}

impl DecoderConfig {
    pub fn greedy(mode: Mode) -> Self {
        Self {
            mode,
            sampling: Sampling::Greedy,
            max_tokens: 256,
            strategy: MaskStrategy::Lazy,
        }
    }

    /// Temperature 0 is greedy.
    pub fn with_temperature(mut self, tau: f64, seed: u64, top_k: Option<usize>) -> Self {
        self.sampling = if tau <= 0.0 {
            Sampling::Greedy
        } else {
            Sampling::Temperature { tau, seed, top_k }
        };
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Completed,
    NoValidToken,
    MaxTokens,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Completed => "Completed",
            Status::NoValidToken => "NoValidToken",
            Status::MaxTokens => "MaxTokens",
        })
    }
}

/// One decoding step. Sizes are only known under the eager strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTrace {
    pub prefix_len: usize,
    pub syntax_allowed: Option<usize>,
    pub semantic_allowed: Option<usize>,
    pub chosen: Option<TokenId>,
    /// Rejected tokens and the constraint names (or `syntax`) behind each.
    pub rejections: Vec<(TokenId, Vec<String>)>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl StepTrace {
    /// One-line rendering used by trace files.
    pub fn render(&self, vocab: &Vocabulary) -> String {
        let opt = |v: Option<usize>| v.map_or("-".to_string(), |n| n.to_string());
        let chosen = self.chosen.map_or("-".to_string(), |t| format!("{t}:{}", vocab.display(t)));
        let mut out = format!(
            "prefix={} syntax={} semantic={} chosen={}",
            self.prefix_len,
            opt(self.syntax_allowed),
            opt(self.semantic_allowed),
            chosen
        );
        let semantic: Vec<String> = self
            .rejections
            .iter()
            .filter(|(_, r)| r.iter().all(|x| x != SYNTAX))
            .map(|(t, r)| format!("{}:{}", vocab.display(*t), r.join("+")))
            .collect();
        if !semantic.is_empty() {
            out.push_str(" rejected=");
            out.push_str(&semantic.join(","));
        }
        out
    }
}

pub const SYNTAX: &str = "syntax";

#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub tokens: Vec<TokenId>,
    pub text: Vec<u8>,
    pub status: Status,
    pub final_model: PartialModel,
    pub steps: Vec<StepTrace>,
    pub elapsed: Duration,
}

impl DecodeResult {
    /// Tokens emitted, eos included.
    pub fn emitted(&self) -> usize {
        self.tokens.len()
    }

    pub fn text_lossy(&self) -> String {
        String::from_utf8_lossy(&self.text).into_owned()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("provider scores {got} tokens but the vocabulary has {expected}")]
    VocabMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Project(#[from] ProjectError),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SampleError {
    #[error("mask allows no token")]
    EmptyMask,
}

/// Candidate order for a step: the token the policy would choose comes
/// first among any allowed set.
struct Ranking {
    order: Vec<TokenId>,
    /// With top-k, the rank keys used after the k best allowed are known.
    keys: Option<Vec<f64>>,
    top_k: Option<usize>,
}

fn by_key_desc(keys: &[f64]) -> impl Fn(&TokenId, &TokenId) -> Ordering + '_ {
    move |a, b| {
        keys[*b as usize]
            .partial_cmp(&keys[*a as usize])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    }
}

fn rank(dist: &Distribution, sampling: &Sampling, step: usize) -> Ranking {
    let scores = dist.scores();
    let mut order: Vec<TokenId> = (0..scores.len() as TokenId).collect();
    match *sampling {
        Sampling::Greedy => {
            order.sort_by(by_key_desc(scores));
            Ranking {
                order,
                keys: None,
                top_k: None,
            }
        }
        Sampling::Temperature { tau, seed, top_k } => {
            // Gumbel-max: argmax of score/tau + G over any allowed set is a
            // draw from the renormalized softmax over that set
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, step as u64));
            let keys: Vec<f64> = scores
                .iter()
                .map(|s| {
                    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                    s / tau - (-u.ln()).ln()
                })
                .collect();
            match top_k {
                Some(k) => {
                    order.sort_by(by_key_desc(scores));
                    Ranking {
                        order,
                        keys: Some(keys),
                        top_k: Some(k.max(1)),
                    }
                }
                None => {
                    order.sort_by(by_key_desc(&keys));
                    Ranking {
                        order,
                        keys: None,
                        top_k: None,
                    }
                }
            }
        }
    }
}

impl Ranking {
    /// Picks from the candidates in order, consulting `admissible` lazily.
    fn choose(&self, mut admissible: impl FnMut(TokenId) -> bool) -> Option<TokenId> {
        match (self.top_k, &self.keys) {
            (Some(k), Some(keys)) => {
                let mut pool = Vec::with_capacity(k);
                for &t in &self.order {
                    if admissible(t) {
                        pool.push(t);
                        if pool.len() == k {
                            break;
                        }
                    }
                }
                pool.into_iter().min_by(by_key_desc(keys))
            }
            _ => self.order.iter().copied().find(|&t| admissible(t)),
        }
    }
}

/// Samples from `dist` restricted to `mask`.
pub fn sample(dist: &Distribution, mask: &TokenMask, sampling: &Sampling, step: usize) -> Result<TokenId, SampleError> {
    if !mask.any() {
        return Err(SampleError::EmptyMask);
    }
    rank(dist, sampling, step)
        .choose(|t| mask.is_allowed(t))
        .ok_or(SampleError::EmptyMask)
}

/// Committed decoding state.
#[derive(Debug, Clone)]
pub struct DecodeState<S> {
    pub tokens: Vec<TokenId>,
    pub text: Vec<u8>,
    pub recognizer: RecognizerState,
    pub projector: S,
    pub model: Arc<PartialModel>,
}

/// Result of checking one candidate token against the committed state.
pub enum Candidate<S> {
    Accept { recognizer: RecognizerState, projector: S, model: Arc<PartialModel> },
    AcceptEos,
    Reject(Vec<String>),
}

pub struct Decoder<'a, P: Projector, L: LmProvider + ?Sized> {
    assets: &'a Assets<P>,
    provider: &'a L,
    cfg: DecoderConfig,
}

impl<'a, P: Projector, L: LmProvider + ?Sized> Decoder<'a, P, L> {
    pub fn new(assets: &'a Assets<P>, provider: &'a L, cfg: DecoderConfig) -> Self {
        Self { assets, provider, cfg }
    }

    pub fn initial_state(&self) -> Result<DecodeState<P::State>, DecodeError> {
        let (ps, delta) = self.assets.projector.init();
        let model = Arc::new(
            PartialModel::new(Arc::clone(&self.assets.metamodel))
                .apply_delta(&delta)
                .map_err(ProjectError::from)?,
        );
        Ok(DecodeState {
            tokens: Vec::new(),
            text: Vec::new(),
            recognizer: self.assets.grammar.initial_state(),
            projector: ps,
            model,
        })
    }

    /// State after committing `text` in one piece, bypassing the provider.
    /// The token list is the vocabulary's encoding of `text`.
    pub fn state_from_prefix(&self, text: &[u8]) -> Result<DecodeState<P::State>, DecodeError> {
        let mut st = self.initial_state()?;
        st.tokens = self.assets.vocab.encode(text).unwrap_or_default();
        st.text = text.to_vec();
        let (rs, events) = st.recognizer.advance_with_events(text);
        if rs.is_dead() {
            return Err(ProjectError::DeadPrefix.into());
        }
        let (ps, delta) = self.assets.projector.project_token(&st.projector, &events, text)?;
        Arc::make_mut(&mut st.model).apply_in_place(&delta).map_err(ProjectError::from)?;
        st.recognizer = rs;
        st.projector = ps;
        Ok(st)
    }

    /// Checks `tok` against `st` under the configured mode.
    pub fn check(&self, st: &DecodeState<P::State>, tok: TokenId) -> Candidate<P::State> {
        let a = self.assets;
        let eos = tok == a.vocab.eos();
        match self.cfg.mode {
            Mode::None => {
                if eos {
                    Candidate::AcceptEos
                } else {
                    Candidate::Accept {
                        recognizer: st.recognizer.clone(),
                        projector: st.projector.clone(),
                        model: Arc::clone(&st.model),
                    }
                }
            }
            Mode::Syntactic | Mode::Semantic if eos => {
                if !st.recognizer.is_accepting() {
                    return Candidate::Reject(vec![SYNTAX.into()]);
                }
                if self.cfg.mode == Mode::Syntactic {
                    return Candidate::AcceptEos;
                }
                match eval_completion(&st.model, &a.constraints) {
                    Ok(v) if v.is_admissible() => Candidate::AcceptEos,
                    Ok(v) => Candidate::Reject(v.violations.into_iter().map(|v| v.constraint).collect()),
                    Err(SemanticsError::NotComplete(_)) => Candidate::Reject(vec!["incomplete".into()]),
                }
            }
            Mode::Syntactic => {
                let bytes = a.vocab.bytes(tok).unwrap_or_default();
                if bytes.first().is_some_and(|&b| !st.recognizer.admits_byte(b)) {
                    return Candidate::Reject(vec![SYNTAX.into()]);
                }
                let rs = st.recognizer.advance(bytes);
                if rs.is_dead() {
                    return Candidate::Reject(vec![SYNTAX.into()]);
                }
                Candidate::Accept {
                    recognizer: rs,
                    projector: st.projector.clone(),
                    model: Arc::clone(&st.model),
                }
            }
            Mode::Semantic => {
                let bytes = a.vocab.bytes(tok).unwrap_or_default();
                if bytes.first().is_some_and(|&b| !st.recognizer.admits_byte(b)) {
                    return Candidate::Reject(vec![SYNTAX.into()]);
                }
                let (rs, events) = st.recognizer.advance_with_events(bytes);
                if rs.is_dead() {
                    return Candidate::Reject(vec![SYNTAX.into()]);
                }
                let (ps, delta) = match a.projector.project_token(&st.projector, &events, bytes) {
                    Ok(x) => x,
                    Err(e) => return Candidate::Reject(vec![format!("projection: {e}")]),
                };
                // committed states are admissible, so an empty delta keeps them so
                let model = if delta.is_empty() {
                    Arc::clone(&st.model)
                } else {
                    let model = match st.model.apply_delta(&delta) {
                        Ok(m) => m,
                        Err(e) => return Candidate::Reject(vec![format!("model: {e}")]),
                    };
                    let v = eval_safety(&model, &a.constraints);
                    if !v.is_admissible() {
                        return Candidate::Reject(v.violations.into_iter().map(|v| v.constraint).collect());
                    }
                    Arc::new(model)
                };
                Candidate::Accept {
                    recognizer: rs,
                    projector: ps,
                    model,
                }
            }
        }
    }

    /// Full masks for a state. The first mask is syntactic, the second
    /// semantic; both equal the all-true mask in mode none.
    pub fn masks(&self, st: &DecodeState<P::State>) -> (TokenMask, TokenMask, Vec<(TokenId, Vec<String>)>) {
        let a = self.assets;
        let n = a.vocab.len();
        if self.cfg.mode == Mode::None {
            return (TokenMask::all(n), TokenMask::all(n), Vec::new());
        }
        let syntax = if st.recognizer.is_dead() {
            TokenMask::none(n)
        } else {
            st.recognizer
                .syntactic_mask(&a.vocab, &a.trie)
                .unwrap_or_else(|_| TokenMask::none(n))
        };
        let mut semantic = TokenMask::none(n);
        let mut rejections = Vec::new();
        for t in 0..n as TokenId {
            if !syntax.is_allowed(t) {
                rejections.push((t, vec![SYNTAX.to_string()]));
                continue;
            }
            match self.check(st, t) {
                Candidate::Reject(r) => rejections.push((t, r)),
                _ => semantic.allow(t),
            }
        }
        (syntax, semantic, rejections)
    }

    /// Runs one step. Returns the trace and, if a token was chosen, the
    /// state after committing it.
    pub fn step(
        &self,
        st: &DecodeState<P::State>,
    ) -> Result<(StepTrace, Option<(TokenId, Option<DecodeState<P::State>>)>), DecodeError> {
        let started = Instant::now();
        let dist = self.provider.next_distribution(&st.tokens)?;
        if dist.len() != self.assets.vocab.len() {
            return Err(DecodeError::VocabMismatch {
                expected: self.assets.vocab.len(),
                got: dist.len(),
            });
        }
        let step_no = st.tokens.len();
        let ranking = rank(&dist, &self.cfg.sampling, step_no);
        let eos = self.assets.vocab.eos();
        let mut trace = StepTrace {
            prefix_len: step_no,
            syntax_allowed: None,
            semantic_allowed: None,
            chosen: None,
            rejections: Vec::new(),
            elapsed: Duration::ZERO,
        };
        let mut next: Option<(TokenId, Option<DecodeState<P::State>>)> = None;
        match self.cfg.strategy {
            MaskStrategy::Eager => {
                let (syntax, semantic, rejections) = self.masks(st);
                trace.syntax_allowed = Some(syntax.count());
                trace.semantic_allowed = Some(semantic.count());
                trace.rejections = rejections;
                if let Some(t) = ranking.choose(|t| semantic.is_allowed(t)) {
                    next = Some((t, self.commit(st, t)));
                }
            }
            MaskStrategy::Lazy => {
                let mut accepted: Option<(TokenId, Candidate<P::State>)> = None;
                let mut memo: Vec<Option<bool>> = vec![None; self.assets.vocab.len()];
                let pick = ranking.choose(|t| {
                    if let Some(ok) = memo[t as usize] {
                        return ok;
                    }
                    let c = self.check(st, t);
                    let ok = !matches!(c, Candidate::Reject(_));
                    if let Candidate::Reject(r) = c {
                        trace.rejections.push((t, r));
                    } else if accepted.as_ref().is_none_or(|(a, _)| *a != t) {
                        // keep the most recent acceptance; with top-k the
                        // final choice may be an earlier one, handled below
                        accepted = Some((t, c));
                    }
                    memo[t as usize] = Some(ok);
                    ok
                });
                if let Some(t) = pick {
                    let state = match accepted {
                        Some((a, c)) if a == t => self.commit_candidate(st, t, c),
                        _ => self.commit(st, t),
                    };
                    next = Some((t, state));
                }
            }
        }
        trace.chosen = next.as_ref().map(|(t, _)| *t);
        if trace.chosen == Some(eos) {
            next = Some((eos, None));
        }
        trace.elapsed = started.elapsed();
        Ok((trace, next))
    }

    fn commit(&self, st: &DecodeState<P::State>, t: TokenId) -> Option<DecodeState<P::State>> {
        let c = self.check(st, t);
        self.commit_candidate(st, t, c)
    }

    fn commit_candidate(&self, st: &DecodeState<P::State>, t: TokenId, c: Candidate<P::State>) -> Option<DecodeState<P::State>> {
        match c {
            Candidate::Accept {
                recognizer,
                projector,
                model,
            } => {
                let mut tokens = st.tokens.clone();
                tokens.push(t);
                let mut text = st.text.clone();
                text.extend_from_slice(self.assets.vocab.bytes(t).unwrap_or_default());
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

    pub fn run(&self) -> Result<DecodeResult, DecodeError> {
        let started = Instant::now();
        let mut st = self.initial_state()?;
        let mut steps = Vec::new();
        let eos = self.assets.vocab.eos();
        let status = loop {
            if st.tokens.len() >= self.cfg.max_tokens {
                break Status::MaxTokens;
            }
            let (trace, next) = self.step(&st)?;
            steps.push(trace);
            match next {
                None => break Status::NoValidToken,
                Some((t, _)) if t == eos => {
                    st.tokens.push(eos);
                    break Status::Completed;
                }
                Some((_, Some(next))) => st = next,
                Some((_, None)) => unreachable!("accepted non-eos tokens carry a state"),
            }
        };
        let elapsed = started.elapsed();
        let final_model = match self.cfg.mode {
            Mode::Semantic => Arc::unwrap_or_clone(st.model),
            // the loop did not maintain a model; project what was written
            _ => self
                .assets
                .project(&st.text)
                .unwrap_or_else(|_| Arc::unwrap_or_clone(st.model)),
        };
        Ok(DecodeResult {
            tokens: st.tokens,
            text: st.text,
            status,
            final_model,
            steps,
            elapsed,
        })
    }
}

/// Convenience wrapper around [`Decoder::run`].
pub fn run_decode<P: Projector, L: LmProvider + ?Sized>(
    cfg: &DecoderConfig,
    assets: &Assets<P>,
    provider: &L,
) -> Result<DecodeResult, DecodeError> {
    Decoder::new(assets, provider, cfg.clone()).run()
}
