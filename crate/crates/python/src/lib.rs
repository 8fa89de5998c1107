//! Python bindings for the semdec decoding engine.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use semdec::bench::{bundled_suite, emit_report, run_suite, BenchConfig};
use semdec::clevr::{self, clevr_assets};
use semdec::decoder::{run_decode, Assets as CoreAssets, Decoder, DecoderConfig, Mode};
use semdec::grammar::Grammar;
use semdec::lm_provider::{ProviderConfig, RandomProvider};
use semdec::metamodel::{ConstraintSet, Metamodel};
use semdec::partial_model::Truth;
use semdec::projector::ClevrProjector;
use semdec::vocab::{TokenId, Vocabulary};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_mode(s: &str) -> PyResult<Mode> {
    s.parse().map_err(value_err)
}

fn parse_truth(s: &str) -> PyResult<Truth> {
    match s.to_ascii_uppercase().as_str() {
        "CERTAIN" => Ok(Truth::Certain),
        "POSSIBLE" => Ok(Truth::Possible),
        "ABSENT" => Ok(Truth::Absent),
        "ERROR" => Ok(Truth::Error),
        _ => Err(PyValueError::new_err(format!("unknown truth value {s:?}"))),
    }
}

/// Outcome of validating a complete text.
#[pyclass(frozen, get_all, module = "semdec")]
struct Report {
    syntactic: bool,
    semantic: bool,
    /// `(constraint, witnesses)` pairs.
    violations: Vec<(String, Vec<String>)>,
}

#[pymethods]
impl Report {
    fn __bool__(&self) -> bool {
        self.syntactic && self.semantic
    }

    fn __repr__(&self) -> String {
        format!(
            "Report(syntactic={}, semantic={}, violations={})",
            self.syntactic,
            self.semantic,
            self.violations.len()
        )
    }
}

#[pyclass(frozen, get_all, module = "semdec")]
struct Mask {
    syntactic: Vec<TokenId>,
    semantic: Vec<TokenId>,
    /// Syntactically allowed tokens dropped by the constraints, with the
    /// constraints that rejected them.
    rejected: Vec<(TokenId, Vec<String>)>,
}

#[pymethods]
impl Mask {
    fn __repr__(&self) -> String {
        format!("Mask(syntactic={}, semantic={})", self.syntactic.len(), self.semantic.len())
    }
}

#[pyclass(frozen, get_all, module = "semdec")]
struct Decoded {
    text: String,
    tokens: Vec<TokenId>,
    status: String,
    elapsed: f64,
}

#[pymethods]
impl Decoded {
    fn __repr__(&self) -> String {
        format!("Decoded(status={:?}, text={:?})", self.status, self.text)
    }
}

/// A vocabulary, grammar, metamodel and constraint set bound together.
#[pyclass(frozen, module = "semdec")]
struct Assets {
    inner: CoreAssets<ClevrProjector>,
}

#[pymethods]
impl Assets {
    /// Builds assets from document strings. The projector is the program
    /// projector, so the metamodel must describe the same node types.
    #[new]
    fn new(vocab: &str, grammar: &str, metamodel: &str, constraints: &str) -> PyResult<Self> {
        let vocab = Vocabulary::parse(vocab).map_err(value_err)?;
        let grammar = Arc::new(Grammar::parse(grammar).map_err(value_err)?);
        let metamodel = Arc::new(Metamodel::from_json(metamodel).map_err(value_err)?);
        let constraints = ConstraintSet::from_json(constraints, &metamodel).map_err(value_err)?;
        let projector = ClevrProjector::new(&metamodel);
        Ok(Self {
            inner: CoreAssets::new(vocab, grammar, metamodel, constraints, projector),
        })
    }

    /// The bundled program assets.
    #[staticmethod]
    fn clevr() -> Self {
        Self { inner: clevr_assets() }
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab.len()
    }

    #[getter]
    fn eos(&self) -> TokenId {
        self.inner.vocab.eos()
    }

    fn token(&self, id: TokenId) -> PyResult<String> {
        self.inner
            .vocab
            .bytes(id)
            .map(|b| String::from_utf8_lossy(b).into_owned())
            .ok_or_else(|| PyValueError::new_err(format!("no token {id}")))
    }

    fn encode(&self, text: &str) -> PyResult<Vec<TokenId>> {
        self.inner.vocab.encode(text.as_bytes()).map_err(value_err)
    }

    fn decode(&self, ids: Vec<TokenId>) -> PyResult<String> {
        let bytes = self.inner.vocab.decode(&ids).map_err(value_err)?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    fn validate(&self, text: &str) -> Report {
        let r = self.inner.validate(text.as_bytes());
        Report {
            syntactic: r.syntactic,
            semantic: r.semantic,
            violations: r
                .violations
                .into_iter()
                .map(|v| (v.constraint, v.witness.iter().map(|w| w.to_string()).collect()))
                .collect(),
        }
    }

    /// Text dump of the partial model projected from `text`.
    fn project(&self, text: &str) -> PyResult<String> {
        self.inner.project(text.as_bytes()).map(|pm| pm.dump()).map_err(value_err)
    }

    /// Token masks for the next position after `prefix`.
    #[pyo3(signature = (prefix=""))]
    fn mask(&self, prefix: &str) -> PyResult<Mask> {
        let rng = RandomProvider::new(self.inner.vocab.len(), 0);
        let d = Decoder::new(&self.inner, &rng, DecoderConfig::greedy(Mode::Semantic));
        let st = d.state_from_prefix(prefix.as_bytes()).map_err(value_err)?;
        let (syn, sem, rejected) = d.masks(&st);
        Ok(Mask {
            syntactic: syn.iter_allowed().collect(),
            semantic: sem.iter_allowed().collect(),
            rejected,
        })
    }

    /// Runs one decode. `gold` is the target text for gold-based providers.
    #[pyo3(signature = (provider="noisy-gold:eps=0.15", mode="semantic", *, gold=None, max_tokens=256, seed=0, temperature=0.0, top_k=None))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        &self,
        py: Python<'_>,
        provider: &str,
        mode: &str,
        gold: Option<&str>,
        max_tokens: usize,
        seed: u64,
        temperature: f64,
        top_k: Option<usize>,
    ) -> PyResult<Decoded> {
        let mode = parse_mode(mode)?;
        let gold = gold.map(|g| self.encode(g)).transpose()?;
        let p = ProviderConfig::parse(provider)
            .and_then(|c| c.build(&self.inner.vocab, gold.as_deref(), seed, clevr::CORPUS))
            .map_err(value_err)?;
        let mut cfg = DecoderConfig::greedy(mode).with_temperature(temperature, seed, top_k);
        cfg.max_tokens = max_tokens;
        let res = py
            .detach(|| run_decode(&cfg, &self.inner, p.as_ref()))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(Decoded {
            text: res.text_lossy(),
            tokens: res.tokens,
            status: res.status.to_string(),
            elapsed: res.elapsed.as_secs_f64(),
        })
    }
}

/// Executes a program on a scene document and returns the answer.
#[pyfunction]
fn execute(program: &str, scene: &str) -> PyResult<String> {
    let prog = clevr::parse_program(program).map_err(value_err)?;
    let scene = clevr::load_scene(scene).map_err(value_err)?;
    clevr::execute(&prog, &scene)
        .map(|a| a.to_string())
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Runs the bundled task suite and returns the CSV report.
#[pyfunction(name = "bench")]
#[pyo3(signature = (provider="noisy-gold:eps=0.15", seed=0, modes=None))]
fn run_bench(py: Python<'_>, provider: &str, seed: u64, modes: Option<Vec<String>>) -> PyResult<String> {
    let assets = clevr_assets();
    let tasks = bundled_suite(&assets);
    let mut cfg = BenchConfig::new(ProviderConfig::parse(provider).map_err(value_err)?, seed);
    if let Some(ms) = modes {
        cfg.modes = ms.iter().map(|m| parse_mode(m)).collect::<PyResult<_>>()?;
    }
    let (rows, _) = py
        .detach(|| run_suite(&tasks, &assets, &cfg))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(emit_report(&rows))
}

/// Refines truth value `a` by observation `b`.
#[pyfunction]
fn refine(a: &str, b: &str) -> PyResult<&'static str> {
    Ok(parse_truth(a)?.refine(parse_truth(b)?).as_str())
}

#[pymodule(name = "semdec")]
fn semdec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("FIXTURE_VERSION", clevr::FIXTURE_VERSION)?;
    m.add_class::<Assets>()?;
    m.add_class::<Report>()?;
    m.add_class::<Mask>()?;
    m.add_class::<Decoded>()?;
    m.add_function(wrap_pyfunction!(execute, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    m.add_function(wrap_pyfunction!(refine, m)?)?;
    Ok(())
}
