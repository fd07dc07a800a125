use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering::SeqCst};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use clientcheck_core::minilang::{check_program, parse_program, Program};
use clientcheck_core::prohibitive::{collect_assumptions, late_concretize};
use clientcheck_core::symcore::ConstraintSet;
use clientcheck_core::symvm::{Code, ExecState, Vm};
use clientcheck_core::traceio::{record_metrics, record_metrics_corrected, MessageTrace};

use super::search::{search, MsgCtx, Outcome, Seed};
use super::{Config, CostModel, EngineError, EngineEvent, InvalidReason, LagVariant, MessageReport, MsgStatus, SessionVerdict, Stats, Verdict};

/// Substitutes symbols fixed by propagation into memory and keeps only the residual constraints.
fn compact(vm: &Vm, mut st: ExecState) -> ExecState {
    if let Ok((fixed, residual)) = vm.solver.residual(&st.cons) {
        if !fixed.is_empty() {
            let lookup = |id| fixed.get(&id).copied();
            st.map_values(&|v| if v.is_symbolic() { v.substitute_partial(&lookup) } else { v.clone() });
        }
        st.cons = ConstraintSet::from_exprs(residual);
    }
    st.start_message();
    st.steps = 0;
    st
}

fn build_vm(program: &Program, trace: &MessageTrace, cfg: &Config) -> Result<Vm, EngineError> {
    let diags = check_program(program, cfg.registry.as_ref());
    if !diags.is_empty() {
        return Err(EngineError::Check(diags));
    }
    let mut vm = Vm::new(Arc::new(Code::compile(program)?), cfg.registry.clone());
    vm.solver.bits_budget = cfg.solver_bits_budget;
    vm.solver.node_limit = cfg.solver_node_limit;
    vm.step_budget = cfg.step_budget;
    vm.metadata = Arc::new(trace.metadata.clone());
    Ok(vm)
}

pub fn verify_source(source: &str, trace: &MessageTrace, cfg: &Config) -> Result<SessionVerdict, EngineError> {
    verify_session(&parse_program(source)?, trace, cfg)
}

/// Verifies every message of `trace` in order, backtracking into earlier
/// messages when a later one cannot be matched.
pub fn verify_session(program: &Program, trace: &MessageTrace, cfg: &Config) -> Result<SessionVerdict, EngineError> {
    let vm = build_vm(program, trace, cfg)?;
    let deadline = cfg.wall_clock_timeout_ms.map(|ms| Instant::now() + Duration::from_millis(ms));
    let events = cfg.record_events.then(|| Mutex::new(Vec::new()));
    let total = trace.messages.len();
    let mut wall_us = vec![0u64; total];
    let mut steps = vec![0u64; total];
    let mut passes = vec![0u32; total];
    let mut stats = Stats::default();

    let mut initial = vm.initial_state();
    initial.start_message();
    let mut roots: Vec<Arc<ExecState>> = vec![Arc::new(initial)];
    let mut frontier: Vec<Vec<Seed>> = Vec::new();
    let mut seeds = vec![Seed::root()];
    let (mut n, mut max_reached) = (0usize, 0usize);
    let (mut budget, mut timed_out) = (false, false);

    while n < total {
        max_reached = max_reached.max(n);
        let started = Instant::now();
        let ctx = MsgCtx {
            vm: &vm,
            cfg,
            msg: &trace.messages[n],
            index: n,
            root: &roots[n],
            deadline,
            steps: AtomicU64::new(0),
            nodes: AtomicU64::new(0),
            budget_deaths: AtomicU64::new(0),
            panics: AtomicU64::new(0),
            max_live: AtomicUsize::new(0),
            seq: AtomicU64::new(0),
            events: events.as_ref(),
        };
        let outcome = search(&ctx, std::mem::take(&mut seeds));
        wall_us[max_reached] += started.elapsed().as_micros() as u64;
        steps[max_reached] += ctx.steps.load(SeqCst);
        stats.nodes += ctx.nodes.load(SeqCst);
        stats.budget_deaths += ctx.budget_deaths.load(SeqCst);
        stats.panics += ctx.panics.load(SeqCst);
        stats.max_live = stats.max_live.max(ctx.max_live.load(SeqCst));
        match outcome {
            Outcome::Found { state, pass, leftovers } => {
                passes[n] = pass;
                frontier.truncate(n);
                frontier.push(leftovers);
                roots.truncate(n + 1);
                roots.push(Arc::new(compact(&vm, *state)));
                n += 1;
                seeds = vec![Seed::root()];
            }
            Outcome::Exhausted { budget: b } => {
                budget |= b;
                let mut resumed = false;
                while n > 0 {
                    n -= 1;
                    let fs = frontier.pop().unwrap_or_default();
                    if !fs.is_empty() {
                        seeds = fs;
                        roots.truncate(n + 1);
                        stats.backtracks += 1;
                        if let Some(ev) = &events {
                            ev.lock().unwrap().push(EngineEvent::Backtrack { from: max_reached, to: n });
                        }
                        resumed = true;
                        break;
                    }
                }
                if !resumed {
                    break;
                }
            }
            Outcome::TimedOut => {
                timed_out = true;
                break;
            }
        }
    }

    let mut assumptions = Vec::new();
    let (verdict, first_invalid) = if n == total {
        let last = roots.last().unwrap();
        let mut c = last.cons.clone();
        match late_concretize(&vm, &last.skipped, &mut c) {
            Err(_) => (Verdict::Invalid(InvalidReason::Exhausted), total.checked_sub(1)),
            Ok(remaining) => {
                let labels = |id| last.symbol_label(id);
                match collect_assumptions(&vm, &remaining, &c, &cfg.whitelist, &labels) {
                    Ok(a) => {
                        assumptions = a;
                        (Verdict::Valid, None)
                    }
                    Err(v) => (Verdict::Invalid(InvalidReason::Whitelist { function: v.function.to_string(), text: v.text }), None),
                }
            }
        }
    } else if budget || timed_out {
        (Verdict::Invalid(InvalidReason::Budget), Some(max_reached))
    } else {
        (Verdict::Invalid(InvalidReason::Exhausted), Some(max_reached))
    };

    let status = |k: usize| match first_invalid {
        Some(f) if k == f => MsgStatus::Invalid,
        Some(f) if k > f => MsgStatus::Unverified,
        _ => MsgStatus::Valid,
    };
    let cost = |k: usize| match cfg.cost_model {
        CostModel::WallClock => wall_us[k].div_ceil(1000),
        CostModel::Synthetic { steps_per_ms } => steps[k] / steps_per_ms.max(1),
    };
    let verified: Vec<usize> = (0..total).filter(|k| status(*k) != MsgStatus::Unverified).collect();
    let arrivals: Vec<u64> = verified.iter().map(|k| trace.messages[*k].arrival_ms).collect();
    let costs: Vec<u64> = verified.iter().map(|k| cost(*k)).collect();
    let lag = match cfg.lag_variant {
        LagVariant::Verbatim => record_metrics(&arrivals, &costs),
        LagVariant::Corrected => record_metrics_corrected(&arrivals, &costs),
    }
    .expect("equal lengths");
    let messages = (0..total)
        .map(|k| {
            let m = &trace.messages[k];
            let rec = verified.iter().position(|v| *v == k).map(|p| lag[p]);
            MessageReport {
                index: k,
                direction: m.direction,
                arrival_ms: m.arrival_ms,
                status: status(k),
                wall_us: wall_us[k],
                steps: steps[k],
                passes: passes[k],
                cost_ms: rec.map_or(0, |r| r.cost_ms),
                completion_ms: rec.map_or(0, |r| r.completion_ms),
                lag_ms: rec.map_or(0, |r| r.lag_ms),
            }
        })
        .collect();
    Ok(SessionVerdict {
        verdict,
        first_invalid,
        messages,
        assumptions,
        events: events.map(|e| e.into_inner().unwrap()).unwrap_or_default(),
        stats,
    })
}
