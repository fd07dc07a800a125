use std::sync::Arc;

use clientcheck::engine::{verify_session, verify_source, Config, CostModel, EngineError, EngineEvent, InvalidReason, MsgStatus, Verdict};
use clientcheck_core::minilang::parse_program;
use clientcheck_core::prohibitive::{builtin_suite, default_whitelist};
use clientcheck_core::protocols::random::random_client;
use clientcheck_core::protocols::{build_fixture, make_attack_trace, AttackKind, FixtureOptions, DEMOS};
use clientcheck_core::traceio::{generate_trace, parse_trace, record_metrics, MapInputs, NoServer, TimingProfile};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> FixtureOptions {
    FixtureOptions { records: 4, sizes: vec![16, 40], ..Default::default() }
}

fn cfg(workers: usize) -> Config {
    Config { workers, ..Default::default() }
}

#[test]
fn demos_are_valid() {
    for name in DEMOS {
        let f = build_fixture(name, &small()).unwrap();
        for w in [1, 3] {
            let v = verify_session(&f.program, &f.trace, &cfg(w)).unwrap();
            assert_eq!(v.verdict, Verdict::Valid, "{} with {} workers", name, w);
            assert_eq!(v.first_invalid, None);
            assert!(v.messages.iter().all(|m| m.status == MsgStatus::Valid));
        }
    }
}

#[test]
fn attacks_rejected_at_tampered_message() {
    for (name, kind) in [("echo_heartbeat", AttackKind::Heartbleed), ("keyex_statemachine", AttackKind::PrematureKey)] {
        let f = build_fixture(name, &small()).unwrap();
        let (bad, idx) = make_attack_trace(kind, &f.trace).unwrap();
        for w in [1, 2, 4] {
            let v = verify_session(&f.program, &bad, &cfg(w)).unwrap();
            assert_eq!(v.verdict, Verdict::Invalid(InvalidReason::Exhausted), "{}", name);
            assert_eq!(v.first_invalid, Some(idx), "{}", name);
            assert_eq!(v.messages[idx].status, MsgStatus::Invalid);
            assert!(v.messages[..idx].iter().all(|m| m.status == MsgStatus::Valid));
            assert!(v.messages[idx + 1..].iter().all(|m| m.status == MsgStatus::Unverified));
        }
    }
}

#[test]
fn backtracks_into_earlier_message() {
    let src = "fn client() { let a = sym_input(8); if a < 128 { send(0x01u8); send(0x02u8); } else { send(0x01u8); send(0x03u8); } }";
    let mut backtracks = 0;
    for second in ["02", "03"] {
        let trace = parse_trace(&format!("C2S|0|01\nC2S|5|{}\n", second)).unwrap();
        let v = verify_source(src, &trace, &Config { record_events: true, ..Default::default() }).unwrap();
        assert_eq!(v.verdict, Verdict::Valid, "second byte {}", second);
        backtracks += v.stats.backtracks;
        assert_eq!(v.stats.backtracks as usize, v.events.iter().filter(|e| matches!(e, EngineEvent::Backtrack { .. })).count());
    }
    assert!(backtracks >= 1);
    let trace = parse_trace("C2S|0|01\nC2S|5|04\n").unwrap();
    let v = verify_source(src, &trace, &Config::default()).unwrap();
    assert_eq!((v.verdict, v.first_invalid), (Verdict::Invalid(InvalidReason::Exhausted), Some(1)));
}

#[test]
fn whitelist_controls_assumptions() {
    let f = build_fixture("toy_handshake", &small()).unwrap();
    let v = verify_session(&f.program, &f.trace, &Config::default()).unwrap();
    assert_eq!(v.assumptions.len(), 1);
    assert!(v.assumptions[0].text.starts_with("exists a: TOYDH(a) = 0x"));
    let mut wl = default_whitelist();
    wl.remove("TOYDH");
    let v = verify_session(&f.program, &f.trace, &Config { whitelist: wl, ..Default::default() }).unwrap();
    match v.verdict {
        Verdict::Invalid(InvalidReason::Whitelist { function, .. }) => assert_eq!(function, "TOYDH"),
        other => panic!("{:?}", other),
    }
}

#[test]
fn budgets_report_budget() {
    let f = build_fixture("cbc_blocks", &small()).unwrap();
    let reg = Arc::new(builtin_suite().without_generator("TOYBLOCK"));
    let v = verify_session(&f.program, &f.trace, &Config { registry: reg, ..Default::default() }).unwrap();
    assert_eq!(v.verdict, Verdict::Invalid(InvalidReason::Budget));

    let f = build_fixture("padded_records", &small()).unwrap();
    let v = verify_session(&f.program, &f.trace, &Config { wall_clock_timeout_ms: Some(0), ..Default::default() }).unwrap();
    assert_eq!((v.verdict, v.first_invalid), (Verdict::Invalid(InvalidReason::Budget), Some(0)));

    let src = "fn client() { let i: u32 = 0; while i < 5000 { i = i + 1; } send(1u8); }";
    let trace = parse_trace("C2S|0|01\n").unwrap();
    assert!(verify_source(src, &trace, &Config::default()).unwrap().verdict.is_valid());
    let v = verify_source(src, &trace, &Config { step_budget: 100, ..Default::default() }).unwrap();
    assert_eq!(v.verdict, Verdict::Invalid(InvalidReason::Budget));
    assert!(v.stats.budget_deaths >= 1);
}

#[test]
fn opaque_server_data() {
    let src = "fn client() { let r: buf[3] = zeros(3); recv(r); send(r[1]); }";
    let trace = parse_trace("S2C|0|17aabb\nC2S|1|55\n").unwrap();
    let v = verify_source(src, &trace, &Config::default()).unwrap();
    assert_eq!(v.first_invalid, Some(1));
    assert!(verify_source(src, &trace, &Config { drop_s2c_appdata: true, ..Default::default() }).unwrap().verdict.is_valid());
    let handshake = parse_trace("S2C|0|16aabb\nC2S|1|55\n").unwrap();
    assert!(!verify_source(src, &handshake, &Config { drop_s2c_appdata: true, ..Default::default() }).unwrap().verdict.is_valid());
}

#[test]
fn bad_programs_are_errors() {
    let trace = parse_trace("C2S|0|01\n").unwrap();
    assert!(matches!(verify_source("fn client() { send(", &trace, &Config::default()), Err(EngineError::Parse(_))));
    assert!(matches!(verify_source("fn client() { let x = NOPE(1u8); send(x); }", &trace, &Config::default()), Err(EngineError::Check(_))));
}

#[test]
fn costs_follow_lag_recurrence() {
    let f = build_fixture("bulk_transfer", &small()).unwrap();
    let k = 50;
    let v = verify_session(&f.program, &f.trace, &Config { cost_model: CostModel::Synthetic { steps_per_ms: k }, ..Default::default() }).unwrap();
    assert!(v.verdict.is_valid());
    let arrivals: Vec<u64> = v.messages.iter().map(|m| m.arrival_ms).collect();
    let costs: Vec<u64> = v.messages.iter().map(|m| m.steps / k).collect();
    let lag = record_metrics(&arrivals, &costs).unwrap();
    for (m, r) in v.messages.iter().zip(&lag) {
        assert_eq!((m.cost_ms, m.completion_ms, m.lag_ms), (r.cost_ms, r.completion_ms, r.lag_ms));
    }
}

#[test]
fn worked_example_multipass() {
    let f = build_fixture("paper_example", &small()).unwrap();
    let v = verify_session(&f.program, &f.trace, &Config { record_events: true, ..Default::default() }).unwrap();
    assert!(v.verdict.is_valid());
    assert_eq!(v.messages[0].passes, 3);
    let witness = v.events.iter().find_map(|e| match e {
        EngineEvent::Accepted { witness, .. } => Some(witness.clone()),
        _ => None,
    });
    let w = witness.unwrap();
    let get = |n: &str| w.iter().find(|(k, _)| k == n).map(|(_, v)| *v).unwrap();
    assert_eq!(get("x").wrapping_mul(get("y")) & 0xffff, 0xbeef);
    assert_eq!(get("iv"), 0x1234);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn concrete_runs_are_accepted(seed in any::<u64>(), a in any::<u8>(), b in any::<u8>(), workers in 1usize..4) {
        let src = random_client(&mut ChaCha8Rng::seed_from_u64(seed), 12);
        let p = parse_program(&src).unwrap();
        let mut inputs = MapInputs::new(0).with("a", a as u64).with("b", b as u64);
        let trace = generate_trace(&p, &builtin_suite(), &mut inputs, &mut NoServer, TimingProfile::Uniform { gap_ms: 3 }).unwrap();
        let v = verify_session(&p, &trace, &cfg(workers)).unwrap();
        prop_assert!(v.verdict.is_valid(), "{}\n{:?}", src, trace);
    }
}
