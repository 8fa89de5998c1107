//! The `semdec` command line.
//!
//! Exit codes: 0 success; 1 I/O or configuration error; 2 syntactically
//! invalid input (`validate`) or dead prefix (`mask`); 3 semantically
//! invalid program (`validate`, `exec`); 4 decode stopped with no valid
//! token; 5 decode hit the token limit; 6 program failed at run time
//! (`exec`); 64 usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::bench::{emit_report, load_suite, run_suite, BenchConfig};
use crate::clevr::{self, execute, load_scene, parse_program};
use crate::decoder::{Assets, Decoder, DecoderConfig, MaskStrategy, Mode, Status, SYNTAX};
use crate::escape::{escape_bytes, unescape_plain};
use crate::grammar::Grammar;
use crate::lm_provider::ProviderConfig;
use crate::metamodel::{ConstraintSet, Metamodel};
use crate::projector::ClevrProjector;
use crate::semantics::ValidationReport;
use crate::vocab::Vocabulary;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_SYNTAX: i32 = 2;
pub const EXIT_SEMANTIC: i32 = 3;
pub const EXIT_NO_VALID_TOKEN: i32 = 4;
pub const EXIT_MAX_TOKENS: i32 = 5;
pub const EXIT_RUNTIME: i32 = 6;
pub const EXIT_USAGE: i32 = 64;

#[derive(Parser, Debug)]
#[command(name = "semdec", about = "Grammar- and metamodel-constrained decoding")]
struct Cli {
    /// Run seed; providers without an explicit seed use it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Suppress status lines on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a program token by token.
    Decode(DecodeArgs),
    /// Check a finished program against grammar and constraints.
    Validate(ValidateArgs),
    /// Show the syntactic and semantic masks after a prefix.
    Mask(MaskArgs),
    /// Run a CLEVR program on a scene.
    Exec(ExecArgs),
    /// Decode a task suite under several modes and report metrics.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
struct AssetArgs {
    /// Bundled asset set; individual files override its parts.
    #[arg(long, value_parser = ["clevr"])]
    preset: Option<String>,
    #[arg(long)]
    grammar: Option<PathBuf>,
    #[arg(long)]
    metamodel: Option<PathBuf>,
    #[arg(long)]
    constraints: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value = "clevr", value_parser = ["clevr"])]
    projector: String,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[command(flatten)]
    assets: AssetArgs,
    /// Provider spec, e.g. `noisy-gold:eps=0.1,gold=prog.txt` or `ngram:order=3`.
    #[arg(long)]
    provider: String,
    #[arg(long, default_value = "semantic")]
    mode: Mode,
    #[arg(long, default_value_t = 256)]
    max_tokens: usize,
    /// Sampling temperature; 0 is greedy.
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long)]
    top_k: Option<usize>,
    /// Build full masks every step (slower, records every rejection).
    #[arg(long)]
    eager: bool,
    /// Write one step trace per line.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[command(flatten)]
    assets: AssetArgs,
    /// Program file.
    program: PathBuf,
}

#[derive(Args, Debug)]
struct MaskArgs {
    #[command(flatten)]
    assets: AssetArgs,
    /// Prefix text; `\n` and other escapes are decoded.
    #[arg(long, default_value = "", conflicts_with = "prefix_file")]
    prefix: String,
    #[arg(long)]
    prefix_file: Option<PathBuf>,
    #[arg(long, default_value = "semantic")]
    mode: Mode,
    /// Also print the partial model after the prefix.
    #[arg(long)]
    explain: bool,
}

#[derive(Args, Debug)]
struct ExecArgs {
    /// Program file.
    program: PathBuf,
    /// Scene file.
    scene: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    assets: AssetArgs,
    /// Suite file; scene paths are relative to it. Defaults to the bundled suite.
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long)]
    provider: String,
    #[arg(long, value_delimiter = ',', default_value = "none,syntactic,semantic")]
    modes: Vec<Mode>,
    #[arg(long, default_value_t = 256)]
    max_tokens: usize,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-task JSON lines.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Measure per-token wall time (makes the report nondeterministic).
    #[arg(long)]
    timing: bool,
}

struct Fail {
    code: i32,
    msg: String,
}

impl Fail {
    fn io(msg: impl Into<String>) -> Self {
        Fail {
            code: EXIT_IO,
            msg: msg.into(),
        }
    }

    fn usage(msg: impl Into<String>) -> Self {
        Fail {
            code: EXIT_USAGE,
            msg: msg.into(),
        }
    }
}

type CliResult = Result<i32, Fail>;

pub fn version_line() -> String {
    format!("{} (fixtures {})", env!("CARGO_PKG_VERSION"), clevr::FIXTURE_VERSION)
}

/// Runs the CLI with explicit streams and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let version: &'static str = Box::leak(version_line().into_boxed_str());
    let matches = match Cli::command().version(version).try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return EXIT_USAGE;
        }
    };
    let res = match &cli.cmd {
        Command::Decode(a) => cmd_decode(&cli, a, out, err),
        Command::Validate(a) => cmd_validate(a, out),
        Command::Mask(a) => cmd_mask(a, out),
        Command::Exec(a) => cmd_exec(a, out),
        Command::Bench(a) => cmd_bench(&cli, a, out, err),
    };
    match res {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.msg);
            f.code
        }
    }
}

fn read(path: &Path) -> Result<String, Fail> {
    std::fs::read_to_string(path).map_err(|e| Fail::io(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, data: &[u8]) -> Result<(), Fail> {
    std::fs::write(path, data).map_err(|e| Fail::io(format!("{}: {e}", path.display())))
}

fn load_assets(a: &AssetArgs) -> Result<Assets<ClevrProjector>, Fail> {
    let preset = a.preset.is_some();
    let part = |file: &Option<PathBuf>, bundled: &str, flag: &str| -> Result<String, Fail> {
        match file {
            Some(p) => read(p),
            None if preset => Ok(bundled.to_string()),
            None => Err(Fail::usage(format!("--{flag} is required without --preset"))),
        }
    };
    let vocab = part(&a.vocab, clevr::VOCAB, "vocab")?;
    let grammar = part(&a.grammar, clevr::GRAMMAR, "grammar")?;
    let metamodel = part(&a.metamodel, clevr::METAMODEL, "metamodel")?;
    let constraints = part(&a.constraints, clevr::CONSTRAINTS, "constraints")?;
    let vocab = Vocabulary::parse(&vocab).map_err(|e| Fail::io(format!("vocabulary: {e}")))?;
    let grammar = Arc::new(Grammar::parse(&grammar).map_err(|e| Fail::io(format!("grammar: {e}")))?);
    let metamodel = Arc::new(Metamodel::from_json(&metamodel).map_err(|e| Fail::io(format!("metamodel: {e}")))?);
    let constraints =
        ConstraintSet::from_json(&constraints, &metamodel).map_err(|e| Fail::io(format!("constraints: {e}")))?;
    let projector = ClevrProjector::new(&metamodel);
    Ok(Assets::new(vocab, grammar, metamodel, constraints, projector))
}

fn write_report(out: &mut dyn Write, r: &ValidationReport) {
    let _ = writeln!(out, "syntactic: {}", r.syntactic);
    let _ = writeln!(out, "semantic: {}", r.semantic);
    for v in &r.violations {
        let w: Vec<String> = v.witness.iter().map(|e| e.to_string()).collect();
        let _ = writeln!(out, "violation: {} [{}]", v.constraint, w.join(", "));
    }
}

fn cmd_validate(a: &ValidateArgs, out: &mut dyn Write) -> CliResult {
    let assets = load_assets(&a.assets)?;
    let text = read(&a.program)?;
    let r = assets.validate(text.as_bytes());
    write_report(out, &r);
    Ok(if !r.syntactic {
        EXIT_SYNTAX
    } else if !r.semantic {
        EXIT_SEMANTIC
    } else {
        EXIT_OK
    })
}

fn cmd_decode(cli: &Cli, a: &DecodeArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let assets = load_assets(&a.assets)?;
    let spec = ProviderConfig::parse(&a.provider).map_err(|e| Fail::usage(e.to_string()))?;
    let provider = spec
        .build(&assets.vocab, None, cli.seed, clevr::CORPUS)
        .map_err(|e| Fail::io(e.to_string()))?;
    let mut cfg = DecoderConfig::greedy(a.mode).with_temperature(a.temperature, cli.seed, a.top_k);
    cfg.max_tokens = a.max_tokens;
    if a.eager {
        cfg.strategy = MaskStrategy::Eager;
    }
    let res = Decoder::new(&assets, &*provider, cfg)
        .run()
        .map_err(|e| Fail::io(e.to_string()))?;
    let _ = out.write_all(&res.text);
    if let Some(path) = &a.trace {
        let mut lines = String::new();
        for s in &res.steps {
            lines.push_str(&s.render(&assets.vocab));
            lines.push('\n');
        }
        write_file(path, lines.as_bytes())?;
    }
    if !cli.quiet {
        let _ = writeln!(err, "status: {} tokens: {}", res.status, res.emitted());
    }
    Ok(match res.status {
        Status::Completed => EXIT_OK,
        Status::NoValidToken => EXIT_NO_VALID_TOKEN,
        Status::MaxTokens => EXIT_MAX_TOKENS,
    })
}

fn cmd_mask(a: &MaskArgs, out: &mut dyn Write) -> CliResult {
    let assets = load_assets(&a.assets)?;
    let prefix = match &a.prefix_file {
        Some(p) => read(p)?.into_bytes(),
        None => unescape_plain(&a.prefix).map_err(|e| Fail::usage(format!("--prefix: {e}")))?,
    };
    let provider = crate::lm_provider::RandomProvider::new(assets.vocab.len(), 0);
    let dec = Decoder::new(&assets, &provider, DecoderConfig::greedy(a.mode));
    let st = match dec.state_from_prefix(&prefix) {
        Ok(st) => st,
        Err(e) => {
            return Err(Fail {
                code: EXIT_SYNTAX,
                msg: format!("prefix \"{}\" cannot be extended: {e}", escape_bytes(&prefix)),
            })
        }
    };
    let (syntax, semantic, rejections) = dec.masks(&st);
    let list = |m: &crate::vocab::TokenMask| -> String {
        m.iter_allowed().map(|t| assets.vocab.display(t)).collect::<Vec<_>>().join(" ")
    };
    let _ = writeln!(out, "prefix: \"{}\"", escape_bytes(&prefix));
    let _ = writeln!(out, "mode: {}", a.mode);
    let _ = writeln!(out, "syntax ({}): {}", syntax.count(), list(&syntax));
    let _ = writeln!(out, "semantic ({}): {}", semantic.count(), list(&semantic));
    for (t, reasons) in &rejections {
        if reasons.iter().any(|r| r == SYNTAX) {
            continue;
        }
        let _ = writeln!(out, "rejected {}: {}", assets.vocab.display(*t), reasons.join(", "));
    }
    if a.explain {
        let _ = writeln!(out, "model:");
        let _ = write!(out, "{}", st.model.dump());
    }
    Ok(EXIT_OK)
}

fn cmd_exec(a: &ExecArgs, out: &mut dyn Write) -> CliResult {
    let text = read(&a.program)?;
    let scene_doc = read(&a.scene)?;
    let assets = clevr::clevr_assets();
    let r = assets.validate(text.as_bytes());
    if !r.semantic {
        write_report(out, &r);
        return Ok(EXIT_SEMANTIC);
    }
    let scene = load_scene(&scene_doc).map_err(|e| Fail::io(format!("{}: {e}", a.scene.display())))?;
    let program = parse_program(&text).map_err(|e| Fail {
        code: EXIT_SEMANTIC,
        msg: e.to_string(),
    })?;
    match execute(&program, &scene) {
        Ok(ans) => {
            let _ = writeln!(out, "{ans}");
            Ok(EXIT_OK)
        }
        Err(e) => Err(Fail {
            code: EXIT_RUNTIME,
            msg: e.to_string(),
        }),
    }
}

fn cmd_bench(cli: &Cli, a: &BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let assets = load_assets(&a.assets)?;
    let provider = ProviderConfig::parse(&a.provider).map_err(|e| Fail::usage(e.to_string()))?;
    let tasks = match &a.suite {
        Some(path) => {
            let doc = read(path)?;
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            load_suite(&doc, &assets, |scene| {
                std::fs::read_to_string(dir.join(scene)).map_err(|e| e.to_string())
            })
        }
        None => load_suite(clevr::SUITE, &assets, |scene| {
            clevr::SCENES
                .iter()
                .find(|(p, _)| *p == scene)
                .map(|(_, d)| d.to_string())
                .ok_or_else(|| format!("no bundled scene {scene}"))
        }),
    }
    .map_err(|e| Fail::io(e.to_string()))?;
    let mut cfg = BenchConfig::new(provider, cli.seed);
    cfg.modes = a.modes.clone();
    cfg.decoder.max_tokens = a.max_tokens;
    cfg.timing = a.timing;
    let (rows, records) = run_suite(&tasks, &assets, &cfg).map_err(|e| Fail::io(e.to_string()))?;
    let csv = emit_report(&rows);
    match &a.out {
        Some(p) => write_file(p, csv.as_bytes())?,
        None => {
            let _ = out.write_all(csv.as_bytes());
        }
    }
    if let Some(p) = &a.records {
        let mut lines = String::new();
        for r in &records {
            lines.push_str(&serde_json::to_string(r).map_err(|e| Fail::io(e.to_string()))?);
            lines.push('\n');
        }
        write_file(p, lines.as_bytes())?;
    }
    if !cli.quiet {
        let _ = writeln!(err, "{} tasks x {} modes", tasks.len(), rows.len());
        for r in &rows {
            if let Some(us) = r.micros_per_token {
                let _ = writeln!(err, "{}: {us:.1} us/token", r.mode);
            }
        }
    }
    Ok(EXIT_OK)
}
