use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use clientcheck::engine::{verify_session, Config, CostModel, LagVariant, MsgStatus, SessionVerdict, Verdict};
use clientcheck::files::{read_program, read_registry, read_trace, read_whitelist, write_trace};
use clientcheck::report::{bench_tsv, buckets_tsv, median, messages_tsv, size_cost_tsv, status_str, wall_tsv, BenchRow};
use clientcheck_core::minilang::pretty_print;
use clientcheck_core::protocols::{build_fixture, build_union_client, make_attack_trace, AttackKind, FixtureOptions, DEMOS};
use clientcheck_core::traceio::TimingProfile;

const EXIT_VALID: u8 = 0;
const EXIT_INVALID: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "clientcheck", version, about = "Check network traces against a client program")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct EngineOpts {
    #[arg(long)]
    program: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// Treat server application data as opaque.
    #[arg(long)]
    drop_s2c: bool,
    #[arg(long)]
    whitelist: Option<PathBuf>,
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Report costs as instructions retired per millisecond instead of wall-clock time.
    #[arg(long, value_name = "STEPS_PER_MS")]
    synthetic_cost: Option<u64>,
    /// First message waits for its own arrival.
    #[arg(long)]
    corrected_lag: bool,
    #[arg(long)]
    step_budget: Option<u64>,
    #[arg(long)]
    solver_bits: Option<u32>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Verify a trace and print one line per message.
    Verify {
        #[command(flatten)]
        engine: EngineOpts,
        /// Write a per-message TSV report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print engine events (passes, prohibitive calls, witnesses).
        #[arg(long)]
        events: bool,
    },
    /// Time repeated verification runs with one worker and each listed worker count.
    Bench {
        #[command(flatten)]
        engine: EngineOpts,
        /// Defaults to 8; a single-worker baseline is always included.
        #[arg(long, value_delimiter = ',')]
        worker_counts: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Directory for bench.tsv, wall.tsv and size_cost.tsv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a demo client, a benign trace and, where one exists, an attack trace.
    Gen {
        demo: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        pad: u32,
        #[arg(long, default_value_t = 20)]
        records: u32,
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<u16>>,
        #[arg(long, default_value_t = 10)]
        gap_ms: u64,
    },
    /// Lag quartiles per arrival bucket, plus message size against cost.
    Report {
        #[command(flatten)]
        engine: EngineOpts,
        #[arg(long, default_value_t = 1000)]
        bucket_ms: u64,
        /// Directory for buckets.tsv and size_cost.tsv; otherwise buckets go to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tamper with one message of a benign trace.
    Attack {
        kind: String,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge two client variants into one selected by a symbolic version.
    Union {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        max_regions: usize,
    },
}

fn config(o: &EngineOpts) -> Result<Config> {
    let mut cfg = Config { workers: o.workers.max(1), wall_clock_timeout_ms: o.timeout_ms, drop_s2c_appdata: o.drop_s2c, ..Default::default() };
    if let Some(p) = &o.whitelist {
        cfg.whitelist = read_whitelist(p)?;
    }
    if let Some(p) = &o.registry {
        cfg.registry = Arc::new(read_registry(p)?);
    }
    if let Some(k) = o.synthetic_cost {
        if k == 0 {
            bail!("--synthetic-cost must be positive");
        }
        cfg.cost_model = CostModel::Synthetic { steps_per_ms: k };
    }
    if o.corrected_lag {
        cfg.lag_variant = LagVariant::Corrected;
    }
    if let Some(b) = o.step_budget {
        cfg.step_budget = b;
    }
    if let Some(b) = o.solver_bits {
        cfg.solver_bits_budget = b;
    }
    Ok(cfg)
}

fn run_engine(o: &EngineOpts, record_events: bool) -> Result<SessionVerdict> {
    let program = read_program(&o.program)?;
    let trace = read_trace(&o.trace)?;
    let cfg = Config { record_events, ..config(o)? };
    Ok(verify_session(&program, &trace, &cfg)?)
}

fn verdict_line(v: &SessionVerdict) -> String {
    match &v.verdict {
        Verdict::Valid => "VERDICT VALID".into(),
        Verdict::Invalid(r) => match v.first_invalid {
            Some(i) => format!("VERDICT INVALID {} at {}", r.tag(), i),
            None => format!("VERDICT INVALID {}", r.tag()),
        },
    }
}

fn exit_for(v: &SessionVerdict) -> u8 {
    if v.verdict.is_valid() {
        EXIT_VALID
    } else {
        EXIT_INVALID
    }
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Verify { engine, out, events } => {
            let v = run_engine(&engine, events)?;
            for e in &v.events {
                println!("event {:?}", e);
            }
            for m in v.messages.iter().filter(|m| m.status != MsgStatus::Unverified) {
                println!("msg {} {} cost_ms={} lag_ms={}", m.index, status_str(m.status), m.cost_ms, m.lag_ms);
            }
            for a in &v.assumptions {
                println!("assume {}", a.text);
            }
            if let Verdict::Invalid(clientcheck::engine::InvalidReason::Whitelist { text, .. }) = &v.verdict {
                println!("unlisted {}", text);
            }
            println!("{}", verdict_line(&v));
            if let Some(p) = out {
                write_out(&p, &messages_tsv(&v))?;
            }
            Ok(exit_for(&v))
        }
        Cmd::Bench { engine, worker_counts, runs, out } => {
            let program = read_program(&engine.program)?;
            let trace = read_trace(&engine.trace)?;
            let base = config(&engine)?;
            let mut counts = vec![1];
            let listed = if worker_counts.is_empty() { vec![8] } else { worker_counts };
            for w in listed.into_iter().map(|w| w.max(1)) {
                if !counts.contains(&w) {
                    counts.push(w);
                }
            }
            let mut rows = Vec::new();
            let mut results = Vec::new();
            for &w in &counts {
                let cfg = Config { workers: w, ..base.clone() };
                let mut times = Vec::new();
                for run in 0..runs.max(1) {
                    let t = Instant::now();
                    let v = verify_session(&program, &trace, &cfg)?;
                    let ms = t.elapsed().as_secs_f64() * 1000.0;
                    times.push(ms);
                    rows.push(BenchRow { workers: w, run, wall_ms: ms, verdict: verdict_line(&v) });
                    results.push((w, run, v));
                }
                println!("workers {} median_ms {:.3}", w, median(&times));
            }
            if let Some(dir) = out {
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                write_out(&dir.join("bench.tsv"), &bench_tsv(&rows))?;
                let refs: Vec<_> = results.iter().map(|(w, r, v)| (*w, *r, v)).collect();
                write_out(&dir.join("wall.tsv"), &wall_tsv(&refs))?;
                write_out(&dir.join("size_cost.tsv"), &size_cost_tsv(&trace, &results[0].2))?;
            }
            let first = &results[0].2;
            if results.iter().any(|(_, _, v)| v.verdict != first.verdict || v.first_invalid != first.first_invalid) {
                eprintln!("error: verdicts differ across worker counts");
                return Ok(EXIT_INTERNAL);
            }
            println!("{}", verdict_line(first));
            Ok(EXIT_VALID)
        }
        Cmd::Gen { demo, out, seed, pad, records, sizes, gap_ms } => {
            if !DEMOS.contains(&demo.as_str()) {
                bail!("unknown demo `{}`; known: {}", demo, DEMOS.join(", "));
            }
            let mut opts = FixtureOptions { seed, pad, records, timing: TimingProfile::Uniform { gap_ms }, ..Default::default() };
            if let Some(s) = sizes {
                opts.sizes = s;
            }
            let f = build_fixture(&demo, &opts)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let prog = out.join(format!("{}.client", demo));
            let tr = out.join(format!("{}.trace", demo));
            write_out(&prog, &f.source)?;
            write_trace(&tr, &f.trace)?;
            println!("{}\n{}", prog.display(), tr.display());
            let attack = match demo.as_str() {
                "echo_heartbeat" => Some(AttackKind::Heartbleed),
                "keyex_statemachine" => Some(AttackKind::PrematureKey),
                _ => None,
            };
            if let Some((bad, _)) = attack.and_then(|k| make_attack_trace(k, &f.trace)) {
                let at = out.join(format!("{}.attack.trace", demo));
                write_trace(&at, &bad)?;
                println!("{}", at.display());
            }
            Ok(EXIT_VALID)
        }
        Cmd::Report { engine, bucket_ms, out } => {
            if bucket_ms == 0 {
                bail!("--bucket-ms must be positive");
            }
            let v = run_engine(&engine, false)?;
            let text = buckets_tsv(&v.messages, bucket_ms);
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                    write_out(&dir.join("buckets.tsv"), &text)?;
                    write_out(&dir.join("size_cost.tsv"), &size_cost_tsv(&read_trace(&engine.trace)?, &v))?;
                }
                None => print!("{}", text),
            }
            Ok(exit_for(&v))
        }
        Cmd::Attack { kind, trace, out } => {
            let k = AttackKind::parse(&kind).ok_or_else(|| anyhow::anyhow!("unknown attack `{}`; use heartbleed or statemachine", kind))?;
            let t = read_trace(&trace)?;
            let (bad, idx) = make_attack_trace(k, &t).ok_or_else(|| anyhow::anyhow!("trace has no message to tamper with"))?;
            write_trace(&out, &bad)?;
            println!("tampered {}", idx);
            Ok(EXIT_VALID)
        }
        Cmd::Union { a, b, out, max_regions } => {
            let pa = read_program(&a)?;
            let pb = read_program(&b)?;
            let u = build_union_client(&pa, &pb, "version", max_regions)?;
            write_out(&out, &pretty_print(&u))?;
            Ok(EXIT_VALID)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(c)) => c,
        Ok(Err(e)) => {
            eprintln!("error: {:#}", e);
            EXIT_INPUT
        }
        Err(_) => {
            eprintln!("internal error");
            EXIT_INTERNAL
        }
    };
    ExitCode::from(code)
}
