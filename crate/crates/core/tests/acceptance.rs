//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Run with `cargo test --test acceptance`.

mod common;

use std::time::Instant;

use proptest::test_runner::{Config, TestRunner};
use semdec::bench::{bundled_suite, run_suite, BenchConfig, LoadedTask, MetricsRow};
use semdec::clevr::clevr_assets;
use semdec::decoder::{run_decode, Assets, DecoderConfig, Mode, Status};
use semdec::lm_provider::{derive_seed, NoisyGoldProvider, ProviderConfig, RandomProvider};
use semdec::projector::ClevrProjector;

use common::algebra;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// The seeded decodes behind the soundness and syntax criteria: every task
/// under six noise levels, plus a random provider with and without
/// temperature.
fn sweep(assets: &Assets<ClevrProjector>, tasks: &[LoadedTask], mode: Mode) -> (usize, usize, Vec<String>) {
    let (mut runs, mut completed, mut bad) = (0, 0, Vec::new());
    let mut check = |res: semdec::decoder::DecodeResult| {
        runs += 1;
        if res.status != Status::Completed {
            return;
        }
        completed += 1;
        let r = assets.validate(&res.text);
        let ok = match mode {
            Mode::Semantic => r.syntactic && r.semantic,
            _ => r.syntactic,
        };
        if !ok {
            bad.push(res.text_lossy());
        }
    };
    for (i, lt) in tasks.iter().enumerate() {
        for (j, eps) in [0.05, 0.1, 0.15, 0.2, 0.3, 0.5].into_iter().enumerate() {
            let p = NoisyGoldProvider::new(lt.gold.clone(), &assets.vocab, eps, (i * 6 + j) as u64);
            check(run_decode(&DecoderConfig::greedy(mode), assets, &p).unwrap());
        }
    }
    for seed in 0..200u64 {
        let p = RandomProvider::new(assets.vocab.len(), seed);
        let cfg = if seed % 2 == 0 {
            DecoderConfig::greedy(mode)
        } else {
            DecoderConfig::greedy(mode).with_temperature(1.0, seed, None)
        };
        check(run_decode(&cfg, assets, &p).unwrap());
    }
    (runs, completed, bad)
}

fn soundness(assets: &Assets<ClevrProjector>, tasks: &[LoadedTask]) -> Outcome {
    let t = Instant::now();
    let (runs, completed, bad) = sweep(assets, tasks, Mode::Semantic);
    let secs = t.elapsed().as_secs_f64();
    let mut detail = format!("{runs} decodes, {completed} completed, {} invalid, {secs:.1}s", bad.len());
    if let Some(first) = bad.first() {
        detail.push_str(&format!("; first invalid: {first:?}"));
    }
    outcome(runs >= 500 && completed > 0 && bad.is_empty() && secs < 300.0, detail)
}

fn syntactic_guarantee(assets: &Assets<ClevrProjector>, tasks: &[LoadedTask]) -> Outcome {
    let (runs, completed, bad) = sweep(assets, tasks, Mode::Syntactic);
    let mut detail = format!("{runs} decodes, {completed} completed, {} unparseable", bad.len());
    if let Some(first) = bad.first() {
        detail.push_str(&format!("; first: {first:?}"));
    }
    outcome(completed > 0 && bad.is_empty(), detail)
}

fn mask_oracle() -> Outcome {
    let t = Instant::now();
    let reports = [
        ("arrows-dag", common::mask_oracle(&common::arrows(common::ARROWS_DAG), 8)),
        ("arrows-forbidden", common::mask_oracle(&common::arrows(common::ARROWS_FORBIDDEN), 8)),
        ("mini-clevr", common::mask_oracle(&common::mini_clevr(), 8)),
    ];
    let secs = t.elapsed().as_secs_f64();
    let mut pass = secs < 60.0;
    let mut parts = Vec::new();
    for (name, r) in &reports {
        pass &= r.failures.is_empty() && r.sentences > 0;
        parts.push(format!(
            "{name}: {} prefixes, {} tight, {} pruned, {} failures",
            r.prefixes,
            r.tight,
            r.pruned,
            r.failures.len()
        ));
        if let Some(f) = r.failures.first() {
            parts.push(format!("first failure: {f}"));
        }
    }
    parts.push(format!("{secs:.1}s"));
    outcome(pass, parts.join("; "))
}

fn row(rows: &[MetricsRow], mode: Mode) -> &MetricsRow {
    rows.iter().find(|r| r.mode == mode).unwrap()
}

fn ordering(assets: &Assets<ClevrProjector>, tasks: &[LoadedTask]) -> Outcome {
    let t = Instant::now();
    let cfg = BenchConfig::new(ProviderConfig::parse("noisy-gold:eps=0.15").unwrap(), 0);
    let (rows, _) = run_suite(tasks, assets, &cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let (n, sy, se) = (row(&rows, Mode::None), row(&rows, Mode::Syntactic), row(&rows, Mode::Semantic));
    let pass = tasks.len() == 60
        && se.sem_pct >= sy.sem_pct + 10.0
        && sy.sem_pct >= n.sem_pct
        && se.acc_pct >= sy.acc_pct
        && sy.acc_pct >= n.acc_pct
        && secs < 180.0;
    outcome(
        pass,
        format!(
            "Sem {:.2} / {:.2} / {:.2}, Acc {:.2} / {:.2} / {:.2} (semantic / syntactic / none), {secs:.1}s",
            se.sem_pct, sy.sem_pct, n.sem_pct, se.acc_pct, sy.acc_pct, n.acc_pct
        ),
    )
}

/// Mean per-token time of semantic over none. Each task is decoded under
/// both modes back to back several times and the fastest run of each is
/// kept, so machine noise and drift hit both modes alike.
fn overhead(assets: &Assets<ClevrProjector>, tasks: &[LoadedTask]) -> Outcome {
    let provider = ProviderConfig::parse("noisy-gold:eps=0.15").unwrap();
    let modes = [Mode::None, Mode::Semantic];
    let (mut time, mut tokens) = ([0.0f64; 2], [0usize; 2]);
    for (i, lt) in tasks.iter().enumerate() {
        let p = provider
            .build(&assets.vocab, Some(&lt.gold), derive_seed(0, i as u64), "")
            .unwrap();
        let mut best = [f64::INFINITY; 2];
        let mut emitted = [0usize; 2];
        for _ in 0..7 {
            for (m, &mode) in modes.iter().enumerate() {
                let res = run_decode(&DecoderConfig::greedy(mode), assets, &p).unwrap();
                best[m] = best[m].min(res.elapsed.as_secs_f64());
                emitted[m] = res.emitted();
            }
        }
        for m in 0..2 {
            time[m] += best[m];
            tokens[m] += emitted[m];
        }
    }
    let per = |m: usize| time[m] * 1e6 / tokens[m] as f64;
    let ratio = per(1) / per(0);
    outcome(
        ratio <= 3.0,
        format!("{:.2} us/token semantic vs {:.2} none, ratio {ratio:.2}", per(1), per(0)),
    )
}

fn refinement_algebra() -> Outcome {
    let cases = 10_000;
    let runner = || TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let mut failures = Vec::new();
    let mut record = |name: &str, r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };
    record(
        "transitions",
        runner()
            .run(&(algebra::truth(), algebra::truth()), |(a, b)| algebra::transitions_follow_the_table(a, b))
            .map_err(|e| e.to_string()),
    );
    record(
        "error absorption",
        runner()
            .run(&(algebra::refinements(12), algebra::refinements(12)), |(s, m)| algebra::error_absorbs(s, m))
            .map_err(|e| e.to_string()),
    );
    record(
        "monotone certainty",
        runner()
            .run(&(algebra::refinements(12), algebra::refinement()), |(s, r)| algebra::certainty_is_monotone(s, r))
            .map_err(|e| e.to_string()),
    );
    record(
        "purity",
        runner()
            .run(
                &(algebra::refinements(10), algebra::refinements(6), algebra::refinements(6)),
                |(s, a, b)| algebra::apply_delta_is_pure(s, a, b),
            )
            .map_err(|e| e.to_string()),
    );
    let detail = if failures.is_empty() {
        format!("4 properties x {cases} cases")
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn executor() -> Outcome {
    let fixtures = common::programs::check_fixtures();
    let enumeration = common::programs::check_enumeration();
    match (fixtures, enumeration) {
        (Ok(n), Ok(e)) => outcome(
            n >= 20 && e.programs > 0,
            format!(
                "{n} fixtures; {} enumerated programs: {} answered, {} non-unique; {} repeated-argument programs rejected",
                e.programs, e.answered, e.non_unique, e.repeated
            ),
        ),
        (Err(e), _) | (_, Err(e)) => outcome(false, e),
    }
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for k in 0..2 {
        let path = dir.path().join(format!("run{k}.csv"));
        let args = [
            "semdec",
            "--seed",
            "5",
            "bench",
            "--preset",
            "clevr",
            "--provider",
            "noisy-gold:eps=0.15",
            "--out",
            path.to_str().unwrap(),
        ];
        let code = semdec::cli::run(args, &mut Vec::new(), &mut Vec::new());
        if code != 0 {
            return outcome(false, format!("bench exited with {code}"));
        }
        csvs.push(std::fs::read(&path).unwrap());
    }
    outcome(
        csvs[0] == csvs[1] && !csvs[0].is_empty(),
        format!("{} bytes, identical: {}", csvs[0].len(), csvs[0] == csvs[1]),
    )
}

fn main() {
    let assets = clevr_assets();
    let tasks = bundled_suite(&assets);
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("soundness", Box::new(|| soundness(&assets, &tasks))),
        ("syntactic guarantee", Box::new(|| syntactic_guarantee(&assets, &tasks))),
        ("mask oracle", Box::new(mask_oracle)),
        ("mode ordering", Box::new(|| ordering(&assets, &tasks))),
        ("overhead", Box::new(|| overhead(&assets, &tasks))),
        ("refinement algebra", Box::new(refinement_algebra)),
        ("executor", Box::new(executor)),
        ("reproducibility", Box::new(reproducibility)),
    ];
    let started = Instant::now();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        failed += !o.pass as usize;
        println!("{} {}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    let total = started.elapsed();
    println!(
        "{} of {} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        total.as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
