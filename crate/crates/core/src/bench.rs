//! The benchmark harness: decode a task suite under each mode and report
//! syntactic validity, semantic validity, accuracy and relative token time.

use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clevr::{execute, load_scene, parse_program, Answer, Scene, SceneError};
use crate::decoder::{run_decode, Assets, DecodeError, DecoderConfig, Mode, Status};
use crate::lm_provider::{derive_seed, ConfigError, ProviderConfig};
use crate::projector::ClevrProjector;
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub id: String,
    #[serde(default)]
    pub prompt: String,
    pub program: String,
    pub scene: String,
    pub answer: String,
}

#[derive(Debug, Clone)]
pub struct LoadedTask {
    pub task: Task,
    pub scene: Scene,
    pub gold: Vec<TokenId>,
    pub answer: Answer,
}

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error("malformed suite: {0}")]
    Malformed(String),
    #[error("suite has invalid tasks:\n{}", .0.join("\n"))]
    InvalidTasks(Vec<String>),
}

/// Loads and checks a suite. `scene_doc` maps a task's scene path to the
/// scene document. Every gold program must validate, encode, and reproduce
/// its answer.
pub fn load_suite(
    doc: &str,
    assets: &Assets<ClevrProjector>,
    mut scene_doc: impl FnMut(&str) -> Result<String, String>,
) -> Result<Vec<LoadedTask>, SuiteError> {
    let tasks: Vec<Task> = serde_json::from_str(doc).map_err(|e| SuiteError::Malformed(e.to_string()))?;
    let mut loaded = Vec::new();
    let mut problems = Vec::new();
    for task in tasks {
        let mut fail = |msg: String| problems.push(format!("{}: {msg}", task.id));
        let scene = match scene_doc(&task.scene).and_then(|d| load_scene(&d).map_err(|e: SceneError| e.to_string())) {
            Ok(s) => s,
            Err(e) => {
                fail(format!("scene {}: {e}", task.scene));
                continue;
            }
        };
        let report = assets.validate(task.program.as_bytes());
        if !report.semantic {
            fail(format!("gold program is invalid: {:?}", report.violations));
            continue;
        }
        let gold = match assets.vocab.encode(task.program.as_bytes()) {
            Ok(g) => g,
            Err(e) => {
                fail(format!("gold program does not encode: {e}"));
                continue;
            }
        };
        let answer = Answer::parse(&task.answer);
        match parse_program(&task.program).map_err(|e| e.to_string()).and_then(|p| {
            execute(&p, &scene).map_err(|e| e.to_string())
        }) {
            Ok(a) if a == answer => {}
            Ok(a) => {
                fail(format!("gold program answers {a}, suite says {answer}"));
                continue;
            }
            Err(e) => {
                fail(format!("gold program fails: {e}"));
                continue;
            }
        }
        loaded.push(LoadedTask {
            task,
            scene,
            gold,
            answer,
        });
    }
    if problems.is_empty() {
        Ok(loaded)
    } else {
        Err(SuiteError::InvalidTasks(problems))
    }
}

/// The bundled 60-task suite with its embedded scenes.
pub fn bundled_suite(assets: &Assets<ClevrProjector>) -> Vec<LoadedTask> {
    load_suite(crate::clevr::SUITE, assets, |path| {
        crate::clevr::SCENES
            .iter()
            .find(|(p, _)| *p == path)
            .map(|(_, d)| d.to_string())
            .ok_or_else(|| format!("no bundled scene {path}"))
    })
    .expect("bundled suite is valid")
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub modes: Vec<Mode>,
    pub provider: ProviderConfig,
    pub seed: u64,
    /// Template for every run; the mode is overwritten per row.
    pub decoder: DecoderConfig,
    /// Measure wall-clock time ratios. Off by default so that reports are
    /// byte-for-byte reproducible.
    pub timing: bool,
    /// Leading tasks left out of timing.
    pub warmup: usize,
}

impl BenchConfig {
    pub fn new(provider: ProviderConfig, seed: u64) -> Self {
        Self {
            modes: Mode::ALL.to_vec(),
            provider,
            seed,
            decoder: DecoderConfig::greedy(Mode::None),
            timing: false,
            warmup: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRecord {
    pub task: String,
    pub mode: Mode,
    pub status: Status,
    pub syntactic: bool,
    pub semantic: bool,
    pub correct: bool,
    pub answer: Option<String>,
    pub tokens: usize,
    pub text: String,
    #[serde(skip)]
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub mode: Mode,
    pub syn_pct: f64,
    pub sem_pct: f64,
    pub acc_pct: f64,
    /// Mean per-token time relative to mode none, when measured.
    pub time_ratio: Option<f64>,
    /// Mean per-token wall time in microseconds, when measured.
    pub micros_per_token: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("task {task}: {source}")]
    Decode {
        task: String,
        #[source]
        source: DecodeError,
    },
}

/// Runs every task under every mode. Only `Completed` outputs can count as
/// valid or correct; the denominators are always the full task count.
pub fn run_suite(
    tasks: &[LoadedTask],
    assets: &Assets<ClevrProjector>,
    cfg: &BenchConfig,
) -> Result<(Vec<MetricsRow>, Vec<TaskRecord>), BenchError> {
    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut baseline: Option<f64> = None;
    for &mode in &cfg.modes {
        let mut dc = cfg.decoder.clone();
        dc.mode = mode;
        let (mut syn, mut sem, mut acc) = (0usize, 0usize, 0usize);
        let (mut time, mut emitted) = (Duration::ZERO, 0usize);
        for (i, lt) in tasks.iter().enumerate() {
            let seed = derive_seed(cfg.seed, i as u64);
            let provider = cfg
                .provider
                .build(&assets.vocab, Some(&lt.gold), seed, crate::clevr::CORPUS)?;
            let res = run_decode(&dc, assets, &provider).map_err(|source| BenchError::Decode {
                task: lt.task.id.clone(),
                source,
            })?;
            let report = assets.validate(&res.text);
            let completed = res.status == Status::Completed;
            let syntactic = completed && report.syntactic;
            let semantic = completed && report.semantic;
            let answer = if semantic {
                let text = String::from_utf8_lossy(&res.text);
                parse_program(&text)
                    .ok()
                    .and_then(|p| execute(&p, &lt.scene).ok())
            } else {
                None
            };
            let correct = answer.as_ref() == Some(&lt.answer);
            syn += syntactic as usize;
            sem += semantic as usize;
            acc += correct as usize;
            if i >= cfg.warmup {
                time += res.elapsed;
                emitted += res.emitted();
            }
            records.push(TaskRecord {
                task: lt.task.id.clone(),
                mode,
                status: res.status,
                syntactic,
                semantic,
                correct,
                answer: answer.map(|a| a.to_string()),
                tokens: res.emitted(),
                text: res.text_lossy(),
                elapsed: res.elapsed,
            });
        }
        let n = tasks.len().max(1) as f64;
        let pct = |k: usize| 100.0 * k as f64 / n;
        let per_token = (cfg.timing && emitted > 0).then(|| time.as_secs_f64() * 1e6 / emitted as f64);
        if mode == Mode::None {
            baseline = per_token;
        }
        rows.push(MetricsRow {
            mode,
            syn_pct: pct(syn),
            sem_pct: pct(sem),
            acc_pct: pct(acc),
            time_ratio: None,
            micros_per_token: per_token,
        });
    }
    for r in &mut rows {
        r.time_ratio = match (r.mode, r.micros_per_token, baseline) {
            (Mode::None, _, _) => Some(1.0),
            (_, Some(t), Some(b)) if b > 0.0 => Some(t / b),
            _ => None,
        };
    }
    Ok((rows, records))
}

/// CSV with header `mode,syn,sem,acc,time_ratio`; `NA` marks an unmeasured
/// ratio.
pub fn emit_report(rows: &[MetricsRow]) -> String {
    let mut out = String::from("mode,syn,sem,acc,time_ratio\n");
    for r in rows {
        let t = r.time_ratio.map_or("NA".to_string(), |t| format!("{t:.2}"));
        let _ = writeln!(out, "{},{:.2},{:.2},{:.2},{t}", r.mode, r.syn_pct, r.sem_pct, r.acc_pct);
    }
    out
}
