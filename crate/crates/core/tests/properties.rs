use std::collections::BTreeMap;

use clientcheck_core::minilang::{parse_program, pretty_print};
use clientcheck_core::prohibitive::toy::{toyblock, toyblock_inverse};
use clientcheck_core::protocols::random::random_client;
use clientcheck_core::symcore::{mask, raw_binary, raw_not, simplify, BinOp, ConstraintSet, SatResult, Solver, Status, SymValue};
use clientcheck_core::traceio::{parse_trace, record_metrics, record_metrics_corrected, serialize_trace, Direction, Message, MessageTrace, MetaEntry};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
enum E {
    Sym(u32),
    Const(u64),
    Not(Box<E>),
    Bin(BinOp, Box<E>, Box<E>),
}

const ARITH: [BinOp; 9] = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::And, BinOp::Or, BinOp::Xor, BinOp::Shl, BinOp::Shr, BinOp::Urem];
const PRED: [BinOp; 4] = [BinOp::Eq, BinOp::Ne, BinOp::Ult, BinOp::Ule];

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

fn eval_pred(op: BinOp, a: &E, b: &E, w: u32, env: &[u64]) -> bool {
    let (x, y) = (eval(a, w, env), eval(b, w, env));
    match op {
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
        E::Const(v) => SymValue::constant(w, v & mask(w)),
        E::Not(a) => raw_not(&lower(a, w)),
        E::Bin(op, a, b) => raw_binary(*op, &lower(a, w), &lower(b, w)).unwrap(),
    }
}

fn expr(syms: u32) -> impl Strategy<Value = E> {
    let leaf = prop_oneof![(0..syms).prop_map(E::Sym), any::<u64>().prop_map(E::Const), (0u64..4).prop_map(E::Const)];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|a| E::Not(Box::new(a))),
            (prop::sample::select(ARITH.to_vec()), inner.clone(), inner).prop_map(|(op, a, b)| E::Bin(op, Box::new(a), Box::new(b))),
        ]
    })
}

type Pred = (BinOp, E, E);

fn pred(syms: u32) -> impl Strategy<Value = Pred> {
    (prop::sample::select(PRED.to_vec()), expr(syms), expr(syms))
}

fn enumerate(syms: u32, w: u32, preds: &[Pred]) -> Vec<Vec<u64>> {
    let n = 1u64 << (w * syms);
    (0..n)
        .map(|k| (0..syms).map(|i| (k >> (i * w)) & mask(w)).collect::<Vec<_>>())
        .filter(|env| preds.iter().all(|(op, a, b)| eval_pred(*op, a, b, w, env)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn simplify_preserves_value(e in expr(2), w in prop::sample::select(vec![1u32, 3, 8, 16, 33, 64]), x in any::<u64>(), y in any::<u64>()) {
        let env = [x & mask(w), y & mask(w)];
        let raw = lower(&e, w);
        let lookup = |id: u32| Some(env[id as usize]);
        prop_assert_eq!(raw.eval(&lookup), Some(eval(&e, w, &env)));
        prop_assert_eq!(simplify(&raw).eval(&lookup), Some(eval(&e, w, &env)));
        prop_assert_eq!(lower(&e, w).substitute(&lookup).unwrap().eval(&|_| None), Some(eval(&e, w, &env)));
    }

    #[test]
    fn smart_constructors_match_raw(op in prop::sample::select(ARITH.to_vec()), a in expr(2), b in expr(2), x in any::<u8>(), y in any::<u8>()) {
        let env = [x as u64, y as u64];
        let lookup = |id: u32| Some(env[id as usize]);
        let smart = SymValue::binary(op, &lower(&a, 8), &lower(&b, 8)).unwrap();
        let raw = raw_binary(op, &lower(&a, 8), &lower(&b, 8)).unwrap();
        prop_assert_eq!(smart.eval(&lookup), raw.eval(&lookup));
    }

    #[test]
    fn solver_matches_enumeration(syms in 1u32..=2, w in 1u32..=6, preds in prop::collection::vec(pred(2), 1..4)) {
        let preds: Vec<Pred> = preds.into_iter().map(|(op, a, b)| (op, clamp(a, syms), clamp(b, syms))).collect();
        let models = enumerate(syms, w, &preds);
        let c = ConstraintSet::from_exprs(preds.iter().map(|(op, a, b)| raw_binary(*op, &lower(a, w), &lower(b, w)).unwrap()));
        let solver = Solver::default();
        match solver.check_sat(&c).unwrap() {
            SatResult::Sat(m) => {
                let env: Vec<u64> = (0..syms).map(|i| m.get(i).unwrap_or(0)).collect();
                prop_assert!(!models.is_empty());
                prop_assert!(preds.iter().all(|(op, a, b)| eval_pred(*op, a, b, w, &env)));
            }
            SatResult::Unsat => prop_assert!(models.is_empty()),
        }
        if !models.is_empty() {
            let ids: Vec<u32> = (0..syms).collect();
            let st = solver.concretize(&c, &ids).unwrap();
            for i in 0..syms as usize {
                let first = models[0][i];
                let want = if models.iter().all(|m| m[i] == first) { Status::Forced(first) } else { Status::Free };
                prop_assert_eq!(st[&(i as u32)], want);
            }
        }
    }

    #[test]
    fn lag_recurrence_matches_closed_form(rows in prop::collection::vec((0u64..50, 0u64..40), 0..40)) {
        let mut t = 0;
        let arrivals: Vec<u64> = rows.iter().map(|(gap, _)| { t += gap; t }).collect();
        let costs: Vec<u64> = rows.iter().map(|(_, c)| *c).collect();
        let verbatim = record_metrics(&arrivals, &costs).unwrap();
        let corrected = record_metrics_corrected(&arrivals, &costs).unwrap();
        for n in 0..arrivals.len() {
            let tail = |k: usize| costs[k..=n].iter().sum::<u64>();
            let v = (1..=n).map(|k| arrivals[k] + tail(k)).max().unwrap_or(0).max(tail(0));
            let c = (0..=n).map(|k| arrivals[k] + tail(k)).max().unwrap();
            prop_assert_eq!(verbatim[n].completion_ms, v);
            prop_assert_eq!(verbatim[n].lag_ms, v.saturating_sub(arrivals[n]));
            prop_assert_eq!(corrected[n].completion_ms, c);
            prop_assert_eq!(corrected[n].lag_ms, c - arrivals[n]);
            prop_assert!(corrected[n].lag_ms >= costs[n]);
            let idle = n == 0 || arrivals[n] >= corrected[n - 1].completion_ms;
            prop_assert!(!idle || corrected[n].lag_ms == costs[n]);
            if arrivals[0] == 0 {
                prop_assert_eq!(verbatim[n], corrected[n]);
            }
        }
    }

    #[test]
    fn trace_round_trip(
        msgs in prop::collection::vec((any::<bool>(), 0u64..1 << 40, prop::collection::vec(any::<u8>(), 0..20)), 0..10),
        meta in prop::collection::vec(("[a-z][a-z0-9_]{0,8}", prop::collection::vec(any::<u8>(), 1..6), 0usize..12), 0..3),
    ) {
        let mut at = 0;
        let messages: Vec<Message> = msgs
            .into_iter()
            .map(|(c2s, gap, p)| {
                at += gap;
                Message::new(if c2s { Direction::C2S } else { Direction::S2C }, at, p)
            })
            .collect();
        let mut metadata: Vec<MetaEntry> = meta
            .into_iter()
            .map(|(key, value, pos)| MetaEntry { key, value, position: pos.min(messages.len()) })
            .collect();
        metadata.sort_by_key(|m| m.position);
        let t = MessageTrace { messages, metadata };
        prop_assert_eq!(parse_trace(&serialize_trace(&t)).unwrap(), t);
    }

    #[test]
    fn toyblock_inverts(k in any::<u16>(), x in any::<u16>()) {
        prop_assert_eq!(toyblock_inverse(k, toyblock(k, x)), x);
    }

    #[test]
    fn pretty_print_round_trips(seed in any::<u64>()) {
        let src = random_client(&mut ChaCha8Rng::seed_from_u64(seed), 12);
        let p = parse_program(&src).unwrap();
        let printed = pretty_print(&p);
        let again = parse_program(&printed).unwrap();
        prop_assert_eq!(&again, &p);
        prop_assert_eq!(pretty_print(&again), printed);
    }
}

fn clamp(e: E, syms: u32) -> E {
    match e {
        E::Sym(i) => E::Sym(i % syms),
        E::Not(a) => E::Not(Box::new(clamp(*a, syms))),
        E::Bin(op, a, b) => E::Bin(op, Box::new(clamp(*a, syms)), Box::new(clamp(*b, syms))),
        c => c,
    }
}

#[test]
fn demo_sources_round_trip() {
    let mut seen = BTreeMap::new();
    for name in clientcheck_core::protocols::DEMOS {
        let src = clientcheck_core::protocols::demo_source(name, &Default::default()).unwrap();
        let p = parse_program(&src).unwrap();
        assert_eq!(parse_program(&pretty_print(&p)).unwrap(), p, "{}", name);
        seen.insert(*name, p.functions.len());
    }
    assert_eq!(seen.len(), clientcheck_core::protocols::DEMOS.len());
}
