use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering::SeqCst};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use clientcheck_core::prohibitive::skipped_sites;
use clientcheck_core::symcore::{ConstraintSet, SatResult, SolverError, Status, SymId};
use clientcheck_core::symvm::{ExecState, InstrId, NetInstr, Reconciled, ReplayPlan, Stop, Vm, VmError};
use clientcheck_core::traceio::{Direction, Message};

use super::{Config, EngineEvent};

const QUOTA: u64 = 1024;

/// An execution state waiting to be run against the current message.
pub(crate) struct Node {
    pub state: ExecState,
    /// Constraints of the previous pass (empty in pass 1).
    pub saved: Arc<ConstraintSet>,
    pub prev_skipped: Arc<Vec<(InstrId, u32)>>,
    pub pass: u32,
    pub branches: u32,
    pub seq: u64,
}

impl Node {
    fn key(&self) -> (u32, u64) {
        (self.branches, self.seq)
    }
}

impl PartialEq for Node {
    fn eq(&self, o: &Node) -> bool {
        self.key() == o.key()
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Node) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
// Max-heap: fewer symbolic branches first, then older.
impl Ord for Node {
    fn cmp(&self, o: &Node) -> Ordering {
        o.key().cmp(&self.key())
    }
}

/// A node reduced to its branch decisions, re-executable from the message root.
#[derive(Clone)]
pub(crate) struct Seed {
    plan: Option<Arc<ReplayPlan>>,
    saved: Arc<ConstraintSet>,
    prev_skipped: Arc<Vec<(InstrId, u32)>>,
    pass: u32,
    branches: u32,
}

impl Seed {
    pub fn root() -> Seed {
        Seed { plan: None, saved: Arc::new(ConstraintSet::new()), prev_skipped: Arc::new(Vec::new()), pass: 1, branches: 0 }
    }

    fn from_state(st: &ExecState, saved: &Arc<ConstraintSet>, prev: &Arc<Vec<(InstrId, u32)>>, pass: u32, branches: u32) -> Seed {
        let mut decisions = st.replay.as_ref().map(|p| p.decisions.clone()).unwrap_or_default();
        for k in 0..st.trail.len() {
            decisions.insert(k, st.trail.get(k).unwrap());
        }
        Seed { plan: Some(Arc::new(ReplayPlan { decisions })), saved: saved.clone(), prev_skipped: prev.clone(), pass, branches }
    }

    pub fn from_node(n: &Node) -> Seed {
        Seed::from_state(&n.state, &n.saved, &n.prev_skipped, n.pass, n.branches)
    }

    fn into_node(self, root: &ExecState, seq: u64) -> Node {
        let mut state = root.clone();
        state.replay = self.plan;
        Node { state, saved: self.saved, prev_skipped: self.prev_skipped, pass: self.pass, branches: self.branches, seq }
    }
}

pub(crate) enum Death {
    Exhausted,
    Budget,
}

pub(crate) enum Fate {
    Forked(Vec<Node>),
    NextPass(Node),
    Accepted { state: Box<ExecState>, pass: u32, seed: Seed },
    Dead(Death),
    Interrupted(Node),
}

pub(crate) struct MsgCtx<'a> {
    pub vm: &'a Vm,
    pub cfg: &'a Config,
    pub msg: &'a Message,
    pub index: usize,
    pub root: &'a ExecState,
    pub deadline: Option<Instant>,
    pub steps: AtomicU64,
    pub nodes: AtomicU64,
    pub budget_deaths: AtomicU64,
    pub panics: AtomicU64,
    pub max_live: AtomicUsize,
    pub seq: AtomicU64,
    pub events: Option<&'a Mutex<Vec<EngineEvent>>>,
}

impl MsgCtx<'_> {
    fn next_seq(&self) -> u64 {
        self.seq.fetch_add(1, SeqCst)
    }

    fn emit(&self, e: EngineEvent) {
        if let Some(ev) = self.events {
            ev.lock().unwrap().push(e);
        }
    }

    fn past_deadline(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }

    fn labelled_scalars(st: &ExecState) -> Vec<(SymId, String)> {
        st.symbols.allocations().into_iter().filter(|a| a.1 == 1).map(|a| (a.0, a.3.to_string())).collect()
    }

    fn statuses(&self, st: &ExecState, c: &ConstraintSet) -> Vec<(String, Status)> {
        let present = c.symbol_table();
        let syms: Vec<(SymId, String)> = Self::labelled_scalars(st).into_iter().filter(|s| present.contains_key(&s.0)).collect();
        let ids: Vec<SymId> = syms.iter().map(|s| s.0).collect();
        match self.vm.solver.concretize(c, &ids) {
            Ok(m) => syms.into_iter().filter_map(|(id, l)| m.get(&id).map(|s| (l, *s))).collect(),
            Err(_) => Vec::new(),
        }
    }

    fn witness(&self, st: &ExecState, c: &ConstraintSet) -> Vec<(String, u64)> {
        let model = match self.vm.solver.check_sat(c) {
            Ok(SatResult::Sat(m)) => m,
            _ => return Vec::new(),
        };
        let fixed = self.vm.solver.propagated(c).unwrap_or_default();
        Self::labelled_scalars(st)
            .into_iter()
            .filter_map(|(id, l)| model.get(id).or_else(|| fixed.get(&id).copied()).or_else(|| c.binding(id)).map(|v| (l, v)))
            .collect()
    }
}

fn death(e: &VmError) -> Death {
    match e {
        VmError::StepBudgetExceeded | VmError::Solver(SolverError::BudgetExceeded { .. }) => Death::Budget,
        _ => Death::Exhausted,
    }
}

fn same_statuses(vm: &Vm, a: &ConstraintSet, b: &ConstraintSet) -> Result<bool, SolverError> {
    let mut ids: Vec<SymId> = a.symbol_table().into_keys().collect();
    ids.extend(b.symbol_table().into_keys());
    ids.sort_unstable();
    ids.dedup();
    vm.solver.equisatisfiable_concretization(a, b, &ids)
}

fn at_send(ctx: &MsgCtx, node: Node, bytes: &[clientcheck_core::symcore::SymValue]) -> Result<Fate, VmError> {
    let vm = ctx.vm;
    let c = match vm.reconcile_bytes(&node.state, bytes, ctx.msg)? {
        Reconciled::Contradiction => return Ok(Fate::Dead(Death::Exhausted)),
        Reconciled::Consistent(c) => c,
    };
    let now = skipped_sites(&node.state.skipped, node.state.io_index);
    let fixed = if node.pass == 1 {
        now.is_empty() && !node.state.saved_dependent
    } else {
        now == *node.prev_skipped && same_statuses(vm, &c, &node.saved)?
    };
    if ctx.events.is_some() {
        ctx.emit(EngineEvent::PassEnd { msg: ctx.index, pass: node.pass, statuses: ctx.statuses(&node.state, &c) });
    }
    if fixed {
        if ctx.events.is_some() {
            ctx.emit(EngineEvent::Accepted { msg: ctx.index, pass: node.pass, witness: ctx.witness(&node.state, &c) });
        }
        let seed = Seed::from_node(&node);
        let mut st = node.state;
        vm.retire_send(&mut st, c);
        return Ok(Fate::Accepted { state: Box::new(st), pass: node.pass, seed });
    }
    if node.pass >= ctx.cfg.max_passes {
        return Ok(Fate::Dead(Death::Budget));
    }
    let mut state = ctx.root.clone();
    state.replay = Some(Arc::new(Vm::replay_plan(&node.state)));
    Ok(Fate::NextPass(Node {
        state,
        saved: Arc::new(c),
        prev_skipped: Arc::new(now),
        pass: node.pass + 1,
        branches: node.branches,
        seq: ctx.next_seq(),
    }))
}

fn at_recv(ctx: &MsgCtx, node: Node) -> Result<Fate, VmError> {
    let m = ctx.msg;
    if m.direction != Direction::S2C {
        return Ok(Fate::Dead(Death::Exhausted));
    }
    let opaque = ctx.cfg.drop_s2c_appdata && m.payload.first() == Some(&0x17);
    let next = if opaque { ctx.vm.apply_recv_opaque(&node.state, m)? } else { ctx.vm.apply_recv(&node.state, m)? };
    Ok(match next {
        Some(st) => {
            let seed = Seed::from_node(&node);
            Fate::Accepted { state: Box::new(st), pass: node.pass, seed }
        }
        None => Fate::Dead(Death::Exhausted),
    })
}

fn step_node(ctx: &MsgCtx, mut node: Node, stop: &dyn Fn() -> bool) -> Result<Fate, VmError> {
    let vm = ctx.vm;
    let (index, pass) = (ctx.index, node.pass);
    loop {
        if stop() {
            return Ok(Fate::Interrupted(node));
        }
        let before = node.state.steps;
        let r = {
            let mut on_event = |event| ctx.emit(EngineEvent::Prohibitive { msg: index, pass, event });
            vm.run(&mut node.state, &node.saved, QUOTA, &mut on_event)
        };
        ctx.steps.fetch_add(node.state.steps.saturating_sub(before), SeqCst);
        match r? {
            Stop::Yield => continue,
            Stop::Halt | Stop::Infeasible => return Ok(Fate::Dead(Death::Exhausted)),
            Stop::Branch(_) => {
                let (f, t) = vm.fork_branch(&node.state)?;
                let mut children = Vec::new();
                for st in [f, t].into_iter().flatten() {
                    children.push(Node {
                        state: st,
                        saved: node.saved.clone(),
                        prev_skipped: node.prev_skipped.clone(),
                        pass: node.pass,
                        branches: node.branches + 1,
                        seq: ctx.next_seq(),
                    });
                }
                return Ok(Fate::Forked(children));
            }
            Stop::Net(NetInstr::Send(bytes)) => return at_send(ctx, node, &bytes),
            Stop::Net(NetInstr::Recv { .. }) => return at_recv(ctx, node),
        }
    }
}

fn process(ctx: &MsgCtx, node: Node, stop: &dyn Fn() -> bool) -> Fate {
    ctx.nodes.fetch_add(1, SeqCst);
    let fate = match catch_unwind(AssertUnwindSafe(|| step_node(ctx, node, stop))) {
        Ok(Ok(f)) => f,
        Ok(Err(e)) => {
            log::debug!("message {}: node dropped: {}", ctx.index, e);
            Fate::Dead(death(&e))
        }
        Err(_) => {
            ctx.panics.fetch_add(1, SeqCst);
            log::error!("message {}: worker panicked; node dropped", ctx.index);
            Fate::Dead(Death::Exhausted)
        }
    };
    if let Fate::Dead(Death::Budget) = fate {
        ctx.budget_deaths.fetch_add(1, SeqCst);
    }
    fate
}

pub(crate) enum Outcome {
    Found { state: Box<ExecState>, pass: u32, leftovers: Vec<Seed> },
    Exhausted { budget: bool },
    TimedOut,
}

/// Searches for an execution that reproduces the message at `ctx.index`.
pub(crate) fn search(ctx: &MsgCtx, seeds: Vec<Seed>) -> Outcome {
    if ctx.cfg.workers <= 1 {
        search_single(ctx, seeds)
    } else {
        search_parallel(ctx, seeds)
    }
}

fn search_single(ctx: &MsgCtx, seeds: Vec<Seed>) -> Outcome {
    let mut heap: BinaryHeap<Node> = seeds.into_iter().map(|s| s.into_node(ctx.root, ctx.next_seq())).collect();
    let mut budget = false;
    let stop = || ctx.past_deadline();
    while let Some(node) = heap.pop() {
        match process(ctx, node, &stop) {
            Fate::Forked(children) => {
                heap.extend(children);
                ctx.max_live.fetch_max(heap.len(), SeqCst);
                if ctx.events.is_some() {
                    ctx.emit(EngineEvent::Fork { msg: ctx.index, live: heap.len() });
                }
            }
            Fate::NextPass(n) => heap.push(n),
            Fate::Accepted { state, pass, .. } => {
                let leftovers = heap.iter().map(Seed::from_node).collect();
                return Outcome::Found { state, pass, leftovers };
            }
            Fate::Dead(Death::Budget) => budget = true,
            Fate::Dead(Death::Exhausted) => {}
            Fate::Interrupted(_) => return Outcome::TimedOut,
        }
    }
    if ctx.past_deadline() {
        return Outcome::TimedOut;
    }
    Outcome::Exhausted { budget }
}

enum Envelope {
    Node(Box<Node>),
    Wake,
}

struct Shared {
    ready: Mutex<BinaryHeap<Node>>,
    cv: Condvar,
    outstanding: AtomicUsize,
    done: AtomicBool,
    exhausted: AtomicBool,
    timed_out: AtomicBool,
    budget: AtomicBool,
    result: Mutex<Option<(ExecState, u32)>>,
    leftovers: Mutex<Vec<Seed>>,
}

impl Shared {
    fn finished(&self) -> bool {
        self.done.load(SeqCst) || self.exhausted.load(SeqCst) || self.timed_out.load(SeqCst)
    }

    fn finish(&self, flag: &AtomicBool, tx: &mpsc::Sender<Envelope>) {
        flag.store(true, SeqCst);
        let _guard = self.ready.lock().unwrap();
        self.cv.notify_all();
        let _ = tx.send(Envelope::Wake);
    }
}

fn worker(ctx: &MsgCtx, sh: &Shared, tx: mpsc::Sender<Envelope>) {
    let stop = || sh.finished() || ctx.past_deadline();
    loop {
        let node = {
            let mut ready = sh.ready.lock().unwrap();
            loop {
                if sh.finished() {
                    return;
                }
                if let Some(n) = ready.pop() {
                    break n;
                }
                if ctx.past_deadline() {
                    drop(ready);
                    sh.finish(&sh.timed_out, &tx);
                    return;
                }
                ready = sh.cv.wait_timeout(ready, Duration::from_millis(20)).unwrap().0;
            }
        };
        match process(ctx, node, &stop) {
            Fate::Forked(children) => {
                let live = sh.outstanding.fetch_add(children.len(), SeqCst) + children.len();
                ctx.max_live.fetch_max(live, SeqCst);
                if ctx.events.is_some() {
                    ctx.emit(EngineEvent::Fork { msg: ctx.index, live });
                }
                for c in children {
                    let _ = tx.send(Envelope::Node(Box::new(c)));
                }
            }
            Fate::NextPass(n) => {
                sh.outstanding.fetch_add(1, SeqCst);
                let _ = tx.send(Envelope::Node(Box::new(n)));
            }
            Fate::Accepted { state, pass, seed } => {
                let mut r = sh.result.lock().unwrap();
                if r.is_none() {
                    *r = Some((*state, pass));
                    drop(r);
                    sh.finish(&sh.done, &tx);
                } else {
                    sh.leftovers.lock().unwrap().push(seed);
                }
            }
            Fate::Dead(Death::Budget) => sh.budget.store(true, SeqCst),
            Fate::Dead(Death::Exhausted) => {}
            Fate::Interrupted(n) => {
                sh.leftovers.lock().unwrap().push(Seed::from_node(&n));
                if ctx.past_deadline() {
                    sh.finish(&sh.timed_out, &tx);
                }
            }
        }
        if sh.outstanding.fetch_sub(1, SeqCst) == 1 {
            sh.finish(&sh.exhausted, &tx);
        }
    }
}

fn search_parallel(ctx: &MsgCtx, seeds: Vec<Seed>) -> Outcome {
    let sh = Shared {
        ready: Mutex::new(seeds.into_iter().map(|s| s.into_node(ctx.root, ctx.next_seq())).collect()),
        cv: Condvar::new(),
        outstanding: AtomicUsize::new(0),
        done: AtomicBool::new(false),
        exhausted: AtomicBool::new(false),
        timed_out: AtomicBool::new(false),
        budget: AtomicBool::new(false),
        result: Mutex::new(None),
        leftovers: Mutex::new(Vec::new()),
    };
    let initial = sh.ready.lock().unwrap().len();
    if initial == 0 {
        return Outcome::Exhausted { budget: false };
    }
    sh.outstanding.store(initial, SeqCst);
    let (tx, rx) = mpsc::channel::<Envelope>();
    std::thread::scope(|s| {
        let sh = &sh;
        s.spawn(move || {
            // Runs until every worker has dropped its sender.
            for env in rx {
                match env {
                    Envelope::Node(n) => {
                        sh.ready.lock().unwrap().push(*n);
                        sh.cv.notify_one();
                    }
                    Envelope::Wake => {
                        let _guard = sh.ready.lock().unwrap();
                        sh.cv.notify_all();
                    }
                }
            }
        });
        for _ in 0..ctx.cfg.workers {
            let tx = tx.clone();
            s.spawn(move || worker(ctx, sh, tx));
        }
        drop(tx);
    });
    let result = sh.result.lock().unwrap().take();
    match result {
        Some((state, pass)) => {
            let mut leftovers = std::mem::take(&mut *sh.leftovers.lock().unwrap());
            leftovers.extend(sh.ready.lock().unwrap().drain().map(|n| Seed::from_node(&n)));
            Outcome::Found { state: Box::new(state), pass, leftovers }
        }
        None if sh.timed_out.load(SeqCst) => Outcome::TimedOut,
        None => Outcome::Exhausted { budget: sh.budget.load(SeqCst) },
    }
}
