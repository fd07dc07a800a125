use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clientcheck::engine::{verify_session, Config, CostModel, EngineEvent, InvalidReason, SessionVerdict, Verdict};
use clientcheck::report::median;
use clientcheck_core::minilang::parse_program;
use clientcheck_core::prohibitive::{builtin_suite, default_whitelist, Concrete};
use clientcheck_core::protocols::random::random_client;
use clientcheck_core::protocols::{build_fixture, build_union_client, make_attack_trace, AttackKind, FixtureOptions, DEMOS};
use clientcheck_core::symcore::{mask, raw_binary, raw_not, BinOp, ConstraintSet, SatResult, Solver, Status, SymValue};
use clientcheck_core::symvm::VmEvent;
use clientcheck_core::traceio::{
    generate_trace, pearson, record_metrics, record_metrics_corrected, run_concrete, serialize_trace, Direction, MapInputs, MessageTrace, NoServer,
    TimingProfile,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const C1_MAX_RUNTIME: Duration = Duration::from_secs(1);
const C1_TRACE: &str = "C2S|0|12349dac\n";
const C2_MAX_RUNTIME: Duration = Duration::from_secs(10);
const C3_WORKERS: [usize; 3] = [1, 2, 8];
const C4_PAD: u32 = 64;
const C4_RECORDS: u32 = 200;
const C4_RUNS: usize = 5;
const C4_WORKERS: usize = 8;
const C4_MAX_RATIO: f64 = 0.7;
const C5_SIZES: [u16; 12] = [16, 32, 48, 64, 96, 128, 192, 256, 384, 512, 768, 1024];
const C5_STEPS_PER_MS: u64 = 10;
const C5_MIN_PEARSON: f64 = 0.9;
const C6_INSTANCES: usize = 1000;
const C7_INSTANCES: usize = 1000;
const C7_MAX_SYMS: u32 = 3;
const C7_MAX_BITS: u32 = 8;
const C9_MAX_OVERHEAD: f64 = 0.5;
const C10_PROGRAMS: usize = 50;
const C10_MAX_BRANCHES: u32 = 12;

fn report(n: u32, ok: bool, detail: String) {
    println!("criterion {}: {} {}", n, if ok { "PASS" } else { "FAIL" }, detail);
    assert!(ok, "criterion {} failed: {}", n, detail);
}

fn run(f: &clientcheck_core::protocols::Fixture, trace: &MessageTrace, cfg: &Config) -> (SessionVerdict, Duration) {
    let t = Instant::now();
    let v = verify_session(&f.program, trace, cfg).unwrap();
    (v, t.elapsed())
}

fn outcome(v: &SessionVerdict) -> (Verdict, Option<usize>) {
    (v.verdict.clone(), v.first_invalid)
}

#[test]
fn criterion_01_worked_example() {
    let f = build_fixture("paper_example", &FixtureOptions::default()).unwrap();
    let byte_exact = serialize_trace(&f.trace) == C1_TRACE;
    let (v, took) = run(&f, &f.trace, &Config { record_events: true, ..Default::default() });
    let forced_iv = v.events.iter().any(|e| match e {
        EngineEvent::PassEnd { msg: 0, pass: 1, statuses } => statuses.contains(&("iv".to_string(), Status::Forced(0x1234))),
        _ => false,
    });
    let executed = v.events.iter().any(|e| match e {
        EngineEvent::Prohibitive { msg: 0, pass: 2, event: VmEvent::Executed { name, output, .. } } => {
            &**name == "PAPERCIPHER" && *output == Concrete::Scalar { width: 16, value: 0x2343 }
        }
        _ => false,
    });
    let accepted = v.events.iter().find_map(|e| match e {
        EngineEvent::Accepted { msg: 0, pass, witness } => Some((*pass, witness.clone())),
        _ => None,
    });
    let (pass, witness) = accepted.unwrap_or_default();
    let get = |n: &str| witness.iter().find(|(k, _)| k == n).map(|(_, v)| *v).unwrap_or(0);
    let (x, y) = (get("x"), get("y"));
    let witness_ok = x.wrapping_mul(y) & 0xffff == 0xbeef && x % 2 == 1 && y % 2 == 1;
    let ok = byte_exact && v.verdict.is_valid() && forced_iv && executed && pass == 3 && witness_ok && took < C1_MAX_RUNTIME;
    report(
        1,
        ok,
        format!(
            "trace_byte_exact={} verdict={:?} iv_forced_pass1={} papercipher_0x2343_pass2={} fixpoint_pass={} witness=(x={:#x}, y={:#x}) runtime={:?}",
            byte_exact, v.verdict, forced_iv, executed, pass, x, y, took
        ),
    );
}

#[test]
fn criterion_02_attack_detection() {
    let mut details = Vec::new();
    let mut ok = true;
    for (name, kind) in [("echo_heartbeat", AttackKind::Heartbleed), ("keyex_statemachine", AttackKind::PrematureKey)] {
        let f = build_fixture(name, &FixtureOptions::default()).unwrap();
        let (good, t1) = run(&f, &f.trace, &Config::default());
        let (bad, idx) = make_attack_trace(kind, &f.trace).unwrap();
        let (v, t2) = run(&f, &bad, &Config::default());
        let this = good.verdict.is_valid() && !v.verdict.is_valid() && v.first_invalid == Some(idx) && t1 < C2_MAX_RUNTIME && t2 < C2_MAX_RUNTIME;
        ok &= this;
        details.push(format!("{}: benign={:?} ({:?}) tampered@{} -> {:?} at {:?} ({:?})", name, good.verdict, t1, idx, v.verdict, v.first_invalid, t2));
    }
    report(2, ok, details.join("; "));
}

#[test]
fn criterion_03_worker_invariance() {
    let opts = FixtureOptions::default();
    let mut cases = Vec::new();
    for name in DEMOS {
        let f = build_fixture(name, &opts).unwrap();
        for kind in [AttackKind::Heartbleed, AttackKind::PrematureKey] {
            if let Some((bad, _)) = make_attack_trace(kind, &f.trace) {
                cases.push((format!("{}+{:?}", name, kind), f.clone(), bad));
            }
        }
        let t = f.trace.clone();
        cases.push((name.to_string(), f, t));
    }
    let mut disagreements = Vec::new();
    for (label, f, trace) in &cases {
        let results: Vec<_> = C3_WORKERS.iter().map(|w| outcome(&run(f, trace, &Config { workers: *w, ..Default::default() }).0)).collect();
        if results.iter().any(|r| *r != results[0]) {
            disagreements.push(format!("{}: {:?}", label, results));
        }
    }
    report(3, disagreements.is_empty(), format!("{} sessions x workers {:?}; disagreements: {:?}", cases.len(), C3_WORKERS, disagreements));
}

#[test]
#[ignore = "needs at least 8 cores"]
fn criterion_04_padding_speedup() {
    let opts = FixtureOptions { pad: C4_PAD, records: C4_RECORDS, ..Default::default() };
    let f = build_fixture("padded_records", &opts).unwrap();
    let time = |w: usize| {
        let runs: Vec<f64> = (0..C4_RUNS)
            .map(|_| {
                let (v, took) = run(&f, &f.trace, &Config { workers: w, ..Default::default() });
                assert!(v.verdict.is_valid());
                took.as_secs_f64() * 1000.0
            })
            .collect();
        median(&runs)
    };
    let one = time(1);
    let many = time(C4_WORKERS);
    let ratio = many / one;
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    report(
        4,
        ratio <= C4_MAX_RATIO,
        format!("median_ms workers=1: {:.1}, workers={}: {:.1}, ratio={:.3} (limit {}), available cores={}", one, C4_WORKERS, many, ratio, C4_MAX_RATIO, cores),
    );
}

#[test]
fn criterion_05_size_cost_linearity() {
    let opts = FixtureOptions { sizes: C5_SIZES.to_vec(), ..Default::default() };
    let f = build_fixture("bulk_transfer", &opts).unwrap();
    let cfg = Config { cost_model: CostModel::Synthetic { steps_per_ms: C5_STEPS_PER_MS }, ..Default::default() };
    let (v, _) = run(&f, &f.trace, &cfg);
    let (sizes, costs): (Vec<f64>, Vec<f64>) = v
        .messages
        .iter()
        .filter(|m| m.direction == Direction::C2S)
        .map(|m| (f.trace.messages[m.index].payload.len() as f64, m.cost_ms as f64))
        .unzip();
    let r = pearson(&sizes, &costs).unwrap_or(f64::NAN);
    report(5, v.verdict.is_valid() && r >= C5_MIN_PEARSON, format!("{} records sized {}..{} bytes, pearson={:.4} (min {})", sizes.len(), sizes[0], sizes[sizes.len() - 1], r, C5_MIN_PEARSON));
}

#[test]
fn criterion_06_lag_recurrence_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for _ in 0..C6_INSTANCES {
        let n = rng.gen_range(1..60);
        let mut t = 0u64;
        let arrivals: Vec<u64> = (0..n).map(|_| { t += rng.gen_range(0..200); t }).collect();
        let costs: Vec<u64> = (0..n).map(|_| rng.gen_range(0..300)).collect();
        let verbatim = record_metrics(&arrivals, &costs).unwrap();
        let corrected = record_metrics_corrected(&arrivals, &costs).unwrap();
        for k in 0..n {
            let sum = |from: usize| costs[from..=k].iter().sum::<u64>();
            let v = (1..=k).map(|j| arrivals[j] + sum(j)).fold(sum(0), u64::max);
            let c = (0..=k).map(|j| arrivals[j] + sum(j)).max().unwrap();
            if verbatim[k].completion_ms != v || verbatim[k].lag_ms != v.saturating_sub(arrivals[k]) || corrected[k].completion_ms != c || corrected[k].lag_ms != c - arrivals[k] {
                mismatches += 1;
            }
        }
    }
    report(6, mismatches == 0, format!("{} instances, {} mismatching records", C6_INSTANCES, mismatches));
}

#[derive(Debug)]
enum E {
    Sym(u32),
    Const(u64),
    Not(Box<E>),
    Bin(BinOp, Box<E>, Box<E>),
}

const ARITH: [BinOp; 9] = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::And, BinOp::Or, BinOp::Xor, BinOp::Shl, BinOp::Shr, BinOp::Urem];
const PRED: [BinOp; 4] = [BinOp::Eq, BinOp::Ne, BinOp::Ult, BinOp::Ule];

fn gen_expr(rng: &mut ChaCha8Rng, syms: u32, depth: u32) -> E {
    match rng.gen_range(0..if depth == 0 { 2 } else { 5 }) {
        0 => E::Sym(rng.gen_range(0..syms)),
        1 => E::Const(if rng.gen_bool(0.5) { rng.gen_range(0..4) } else { rng.gen() }),
        2 => E::Not(Box::new(gen_expr(rng, syms, depth - 1))),
        _ => E::Bin(ARITH[rng.gen_range(0..ARITH.len())], Box::new(gen_expr(rng, syms, depth - 1)), Box::new(gen_expr(rng, syms, depth - 1))),
    }
}

fn eval(e: &E, w: u32, env: &[u64]) -> u64 {
    let m = mask(w);
    match e {
        E::Sym(i) => env[*i as usize],
        E::Const(v) => v & m,
        E::Not(a) => !eval(a, w, env) & m,
        E::Bin(op, a, b) => {
            let (x, y) = (eval(a, w, env), eval(b, w, env));
            match op {
                BinOp::Add => x.wrapping_add(y) & m,
                BinOp::Sub => x.wrapping_sub(y) & m,
                BinOp::Mul => x.wrapping_mul(y) & m,
                BinOp::And => x & y,
                BinOp::Or => x | y,
                BinOp::Xor => x ^ y,
                BinOp::Shl => if y >= w as u64 { 0 } else { (x << y) & m },
                BinOp::Shr => if y >= w as u64 { 0 } else { x >> y },
                BinOp::Urem => if y == 0 { x } else { x % y },
                _ => unreachable!(),
            }
        }
    }
}

fn holds(p: &(BinOp, E, E), w: u32, env: &[u64]) -> bool {
    let (x, y) = (eval(&p.1, w, env), eval(&p.2, w, env));
    match p.0 {
        BinOp::Eq => x == y,
        BinOp::Ne => x != y,
        BinOp::Ult => x < y,
        BinOp::Ule => x <= y,
        _ => unreachable!(),
    }
}

fn lower(e: &E, w: u32) -> SymValue {
    match e {
        E::Sym(i) => SymValue::symbol(*i, w),
        E::Const(v) => SymValue::constant(w, *v),
        E::Not(a) => raw_not(&lower(a, w)),
        E::Bin(op, a, b) => raw_binary(*op, &lower(a, w), &lower(b, w)).unwrap(),
    }
}

#[test]
fn criterion_07_solver_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let solver = Solver { bits_budget: C7_MAX_SYMS * C7_MAX_BITS, node_limit: 1 << 26 };
    let (mut mismatches, mut sat_sets, mut forced_seen, mut free_seen) = (Vec::new(), 0, 0, 0);
    for case in 0..C7_INSTANCES {
        let syms = rng.gen_range(1..=C7_MAX_SYMS);
        let w = rng.gen_range(1..=C7_MAX_BITS);
        let preds: Vec<(BinOp, E, E)> = (0..rng.gen_range(1..=4)).map(|_| (PRED[rng.gen_range(0..4)], gen_expr(&mut rng, syms, 3), gen_expr(&mut rng, syms, 2))).collect();
        let mut first: Option<Vec<u64>> = None;
        let mut varies = vec![false; syms as usize];
        for k in 0..1u64 << (w * syms) {
            let env: Vec<u64> = (0..syms).map(|i| (k >> (i * w)) & mask(w)).collect();
            if preds.iter().all(|p| holds(p, w, &env)) {
                match &first {
                    None => first = Some(env),
                    Some(f) => (0..syms as usize).for_each(|i| varies[i] |= f[i] != env[i]),
                }
            }
        }
        let c = ConstraintSet::from_exprs(preds.iter().map(|(op, a, b)| raw_binary(*op, &lower(a, w), &lower(b, w)).unwrap()));
        let sat_ok = match solver.check_sat(&c) {
            Ok(SatResult::Sat(m)) => {
                let env: Vec<u64> = (0..syms).map(|i| m.get(i).unwrap_or(0)).collect();
                first.is_some() && preds.iter().all(|p| holds(p, w, &env))
            }
            Ok(SatResult::Unsat) => first.is_none(),
            Err(_) => false,
        };
        let conc_ok = match &first {
            None => true,
            Some(f) => {
                sat_sets += 1;
                let ids: Vec<u32> = (0..syms).collect();
                let want: BTreeMap<u32, Status> = ids.iter().map(|i| (*i, if varies[*i as usize] { Status::Free } else { Status::Forced(f[*i as usize]) })).collect();
                forced_seen += want.values().filter(|s| **s != Status::Free).count();
                free_seen += want.values().filter(|s| **s == Status::Free).count();
                solver.concretize(&c, &ids).map(|got| got == want).unwrap_or(false)
            }
        };
        if !(sat_ok && conc_ok) {
            mismatches.push(case);
        }
    }
    report(
        7,
        mismatches.is_empty(),
        format!(
            "{} sets ({} satisfiable; {} forced and {} free symbol statuses), mismatches: {:?}",
            C7_INSTANCES, sat_sets, forced_seen, free_seen, mismatches
        ),
    );
}

#[test]
fn criterion_08_assumption_emission() {
    let f = build_fixture("toy_handshake", &FixtureOptions::default()).unwrap();
    let (v, _) = run(&f, &f.trace, &Config::default());
    let one = v.verdict.is_valid() && v.assumptions.len() == 1 && &*v.assumptions[0].function == "TOYDH";
    let mut wl = default_whitelist();
    wl.remove("TOYDH");
    let (v2, _) = run(&f, &f.trace, &Config { whitelist: wl, ..Default::default() });
    let flipped = matches!(&v2.verdict, Verdict::Invalid(InvalidReason::Whitelist { function, .. }) if function == "TOYDH");
    report(8, one && flipped, format!("assumptions={:?} verdict_without_entry={:?}", v.assumptions.iter().map(|a| &a.text).collect::<Vec<_>>(), v2.verdict));
}

#[test]
fn criterion_09_union_of_variants() {
    let opts = FixtureOptions::default();
    let a = build_fixture("toy_handshake", &opts).unwrap();
    let b = build_fixture("toy_handshake_v2", &opts).unwrap();
    let union = build_union_client(&a.program, &b.program, "version", 8).unwrap();
    let cfg = Config { cost_model: CostModel::Synthetic { steps_per_ms: 1 }, record_events: true, ..Default::default() };
    let (mut union_cost, mut matched_cost) = (0u64, 0u64);
    let mut details = Vec::new();
    let mut ok = true;
    for (want, f) in [(0u64, &a), (1, &b)] {
        let matched = verify_session(&f.program, &f.trace, &cfg).unwrap();
        let u = verify_session(&union, &f.trace, &cfg).unwrap();
        let forced = u.events.iter().any(|e| matches!(e, EngineEvent::PassEnd { statuses, .. } if statuses.contains(&("version".to_string(), Status::Forced(want)))));
        let wrong = u.events.iter().any(|e| matches!(e, EngineEvent::PassEnd { statuses, .. } if statuses.iter().any(|(n, s)| n == "version" && matches!(s, Status::Forced(v) if *v != want))));
        let cost = |v: &SessionVerdict| v.messages.iter().map(|m| m.cost_ms).sum::<u64>();
        union_cost += cost(&u);
        matched_cost += cost(&matched);
        ok &= u.verdict.is_valid() && matched.verdict.is_valid() && forced && !wrong;
        details.push(format!("{}: {:?} version_forced_{}={} cost {} vs {}", f.name, u.verdict, want, forced && !wrong, cost(&u), cost(&matched)));
    }
    let overhead = union_cost as f64 / matched_cost as f64 - 1.0;
    report(9, ok && overhead <= C9_MAX_OVERHEAD, format!("{}; overhead={:.1}% (limit {:.0}%)", details.join("; "), overhead * 100.0, C9_MAX_OVERHEAD * 100.0));
}

#[test]
fn criterion_10_backtracking_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let registry = builtin_suite();
    let mut mismatches = Vec::new();
    let (mut valid, mut invalid) = (0, 0);
    for case in 0..C10_PROGRAMS {
        let src = random_client(&mut rng, C10_MAX_BRANCHES);
        let program = parse_program(&src).unwrap();
        let runs: Vec<Vec<Vec<u8>>> = (0..1u64 << 16)
            .map(|k| {
                let mut inputs = MapInputs::new(0).with("a", k & 0xff).with("b", k >> 8);
                run_concrete(&program, &registry, &mut inputs, &mut NoServer, 1_000_000).unwrap().messages.into_iter().map(|(_, p)| p).collect()
            })
            .collect();
        let mut inputs = MapInputs::new(0).with("a", rng.gen_range(0..256)).with("b", rng.gen_range(0..256));
        let mut trace = generate_trace(&program, &registry, &mut inputs, &mut NoServer, TimingProfile::Uniform { gap_ms: 5 }).unwrap();
        if !trace.messages.is_empty() && rng.gen_bool(0.5) {
            let m = rng.gen_range(0..trace.messages.len());
            let p = &mut trace.messages[m].payload;
            let i = rng.gen_range(0..p.len());
            p[i] ^= rng.gen_range(1..=255u8);
        }
        let matched = runs
            .iter()
            .map(|r| trace.messages.iter().zip(r).take_while(|(t, r)| t.payload == **r).count().min(r.len()))
            .max()
            .unwrap();
        let expect = if matched == trace.messages.len() { (Verdict::Valid, None) } else { (Verdict::Invalid(InvalidReason::Exhausted), Some(matched)) };
        let got = outcome(&verify_session(&program, &trace, &Config::default()).unwrap());
        if expect.0.is_valid() {
            valid += 1;
        } else {
            invalid += 1;
        }
        if got != expect {
            mismatches.push((case, expect, got));
        }
    }
    report(10, mismatches.is_empty(), format!("{} programs ({} valid, {} invalid by brute force), mismatches: {:?}", C10_PROGRAMS, valid, invalid, mismatches));
}

#[test]
fn criterion_11_lazy_generator() {
    let f = build_fixture("cbc_blocks", &FixtureOptions::default()).unwrap();
    let (with, _) = run(&f, &f.trace, &Config::default());
    let reg = Arc::new(builtin_suite().without_generator("TOYBLOCK"));
    let (without, _) = run(&f, &f.trace, &Config { registry: reg, ..Default::default() });
    report(
        11,
        with.verdict.is_valid() && without.verdict == Verdict::Invalid(InvalidReason::Budget),
        format!("with generator: {:?}; without: {:?}", with.verdict, without.verdict),
    );
}
