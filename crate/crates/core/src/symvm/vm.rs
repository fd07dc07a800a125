use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use thiserror::Error;

use super::code::{Builtin, CExpr, Callee, Code, InstrId, Op};
use super::state::{ExecState, Frame, ReplayPlan, Trail, Value};
use crate::minilang::{BinaryOp, Type};
use crate::prohibitive::{exec_step_prohibitive, fire_lazy_generators, Concrete, LazyError, ProhibitiveRegistry};
use crate::symcore::{BinOp, ConstraintSet, ExprError, SatResult, Solver, SolverError, SymValue, MAX_WIDTH};
use crate::traceio::{Direction, Message, MetaEntry};

pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VmError {
    #[error("step budget exceeded")]
    StepBudgetExceeded,
    #[error("division by zero in `{func}`")]
    DivisionByZeroOnConcrete { func: String },
    #[error("symbolic index into `{0}`")]
    SymbolicIndex(String),
    #[error("index {index} out of bounds for `{name}` of length {len}")]
    IndexOutOfBounds { name: String, index: u64, len: usize },
    #[error("variable `{0}` used before assignment")]
    Uninitialized(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("cannot send a {0}-bit scalar")]
    BadSendWidth(u32),
    #[error("`{builtin}` needs a concrete argument")]
    SymbolicLength { builtin: String },
    #[error("`{name}` argument {index} does not match its declared layout")]
    LengthMismatch { name: String, index: usize },
    #[error("injected value for `{name}` has {found} bytes, {expected} expected")]
    InjectionLength { name: String, expected: usize, found: usize },
    #[error("unknown prohibitive function `{0}`")]
    UnknownProhibitive(String),
    #[error("not at a {0} instruction")]
    WrongInstruction(&'static str),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetInstr {
    /// Serialized payload bytes.
    Send(Vec<SymValue>),
    Recv { slot: u32, capacity: usize },
}

impl NetInstr {
    pub fn direction(&self) -> Direction {
        match self {
            NetInstr::Send(_) => Direction::C2S,
            NetInstr::Recv { .. } => Direction::S2C,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NextInstrClass {
    Normal,
    Net(NetInstr),
    SymbolicBranch(SymValue),
    ProhibitiveCall { name: Arc<str>, args: Vec<Value>, dest: Option<u32> },
    Halt,
}

/// Where [`Vm::run`] stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stop {
    Net(NetInstr),
    Branch(SymValue),
    Halt,
    /// Step quota used up; call again to continue.
    Yield,
    /// A replayed decision turned out infeasible.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VmEvent {
    Executed { name: Arc<str>, site: InstrId, output: Concrete, saved_dependent: bool },
    Skipped { name: Arc<str>, site: InstrId },
    Injected { name: Arc<str>, site: InstrId },
}

#[derive(Debug, Clone)]
pub enum Reconciled {
    Consistent(ConstraintSet),
    Contradiction,
}

/// Symbolic interpreter for one compiled program.
#[derive(Debug, Clone)]
pub struct Vm {
    pub code: Arc<Code>,
    pub registry: Arc<ProhibitiveRegistry>,
    pub solver: Solver,
    pub step_budget: u64,
    pub metadata: Arc<Vec<MetaEntry>>,
}

fn map_op(op: BinaryOp) -> BinOp {
    match op {
        BinaryOp::Add => BinOp::Add,
        BinaryOp::Sub => BinOp::Sub,
        BinaryOp::Mul => BinOp::Mul,
        BinaryOp::Mod => BinOp::Urem,
        BinaryOp::And => BinOp::And,
        BinaryOp::Or => BinOp::Or,
        BinaryOp::Xor => BinOp::Xor,
        BinaryOp::Shl => BinOp::Shl,
        BinaryOp::Shr => BinOp::Shr,
        BinaryOp::Eq => BinOp::Eq,
        BinaryOp::Ne => BinOp::Ne,
        BinaryOp::Lt => BinOp::Ult,
        BinaryOp::Le => BinOp::Ule,
    }
}

/// Evaluation context for one frame.
struct Ctx<'a> {
    vm: &'a Vm,
    frame: &'a Frame,
    guards: Vec<SymValue>,
}

impl Ctx<'_> {
    fn slot_name(&self, slot: u32) -> String {
        self.vm.code.funcs[self.frame.func as usize].slots[slot as usize].name.clone()
    }

    fn read(&self, slot: u32) -> Result<&Value, VmError> {
        self.frame.slots[slot as usize].as_ref().ok_or_else(|| VmError::Uninitialized(self.slot_name(slot)))
    }

    fn value(&mut self, e: &CExpr, hint: Option<u32>) -> Result<Value, VmError> {
        match e {
            CExpr::Var(s) => Ok(self.read(*s)?.clone()),
            _ => Ok(Value::Scalar(self.scalar(e, hint)?)),
        }
    }

    fn concrete_u64(&mut self, e: &CExpr, what: &str) -> Result<u64, VmError> {
        self.scalar(e, Some(32))?.as_const().ok_or_else(|| VmError::SymbolicLength { builtin: what.into() })
    }

    fn scalar(&mut self, e: &CExpr, hint: Option<u32>) -> Result<SymValue, VmError> {
        Ok(match e {
            CExpr::Lit(v, w) => SymValue::constant(w.or(hint).unwrap_or(32), *v),
            CExpr::Var(s) => match self.read(*s)? {
                Value::Scalar(v) => v.clone(),
                Value::Buffer(_) => return Err(VmError::TypeMismatch(alloc::format!("buffer `{}` used as a scalar", self.slot_name(*s)))),
            },
            CExpr::Index(s, i) => {
                let idx = self.scalar(i, Some(32))?;
                let name = self.slot_name(*s);
                let idx = idx.as_const().ok_or(VmError::SymbolicIndex(name.clone()))?;
                match self.read(*s)? {
                    Value::Buffer(b) => b.get(idx as usize).cloned().ok_or(VmError::IndexOutOfBounds { name, index: idx, len: b.len() })?,
                    Value::Scalar(_) => return Err(VmError::TypeMismatch(alloc::format!("`{}` is not a buffer", name))),
                }
            }
            CExpr::Not(a) => self.scalar(a, hint)?.not(),
            CExpr::Bin(op, a, b) => {
                let operand_hint = if op.is_comparison() { None } else { hint };
                let (mut x, mut y) = if a.is_unsized_lit() && !b.is_unsized_lit() {
                    let y = self.scalar(b, operand_hint)?;
                    (self.scalar(a, Some(y.width()))?, y)
                } else {
                    let x = self.scalar(a, operand_hint)?;
                    (x.clone(), self.scalar(b, Some(x.width()))?)
                };
                if x.width() < y.width() {
                    x = x.resize(y.width());
                } else if y.width() < x.width() {
                    y = y.resize(x.width());
                }
                if *op == BinaryOp::Mod {
                    match y.as_const() {
                        Some(0) => return Err(VmError::DivisionByZeroOnConcrete { func: self.vm.code.funcs[self.frame.func as usize].name.clone() }),
                        Some(_) => {}
                        None => self.guards.push(y.ne_(&SymValue::constant(y.width(), 0))),
                    }
                }
                SymValue::binary(map_op(*op), &x, &y)?
            }
            CExpr::Concat(a, b) => {
                let (x, y) = (self.scalar(a, None)?, self.scalar(b, None)?);
                if x.width() + y.width() > MAX_WIDTH {
                    return Err(VmError::TypeMismatch("concatenation wider than 64 bits".into()));
                }
                x.concat(&y)
            }
            CExpr::Extract(a, lo, hi) => self.scalar(a, None)?.extract(*lo, hi - lo + 1)?,
        })
    }
}

fn coerce(v: Value, ty: Option<Type>) -> Result<Value, VmError> {
    match (ty, v) {
        (Some(Type::Buf(n)), Value::Buffer(b)) => {
            if b.len() != n as usize {
                return Err(VmError::TypeMismatch(alloc::format!("buffer of {} bytes assigned to buf[{}]", b.len(), n)));
            }
            Ok(Value::Buffer(b))
        }
        (Some(Type::Buf(_)), Value::Scalar(_)) => Err(VmError::TypeMismatch("scalar assigned to a buffer".into())),
        (Some(t), Value::Scalar(s)) => Ok(Value::Scalar(s.resize(t.scalar_width().unwrap_or(32)))),
        (Some(_), Value::Buffer(_)) => Err(VmError::TypeMismatch("buffer assigned to a scalar".into())),
        (None, v) => Ok(v),
    }
}

impl Vm {
    pub fn new(code: Arc<Code>, registry: Arc<ProhibitiveRegistry>) -> Vm {
        Vm { code, registry, solver: Solver::default(), step_budget: DEFAULT_STEP_BUDGET, metadata: Arc::new(Vec::new()) }
    }

    pub fn initial_state(&self) -> ExecState {
        let f = &self.code.funcs[self.code.entry as usize];
        ExecState {
            frames: alloc::vec![Frame { func: self.code.entry, pc: 0, slots: alloc::vec![None; f.slots.len()], ret_slot: None }],
            cons: ConstraintSet::new(),
            io_index: 0,
            steps: 0,
            next_sym: 0,
            branch_ordinal: 0,
            prohibitive_ordinal: 0,
            skipped: Vec::new(),
            symbols: Default::default(),
            trail: Trail::default(),
            replay: None,
            saved_dependent: false,
        }
    }

    /// Metadata value for `key` if it was logged at or before message `io_index`.
    pub fn metadata_value(&self, key: &str, io_index: usize) -> Option<&[u8]> {
        self.metadata.iter().rev().find(|m| m.key == key && m.position <= io_index).map(|m| m.value.as_slice())
    }

    fn current_op<'a>(&'a self, st: &ExecState) -> Option<(InstrId, Option<&'a Op>)> {
        let id = st.pc()?;
        Some((id, self.code.op(id)))
    }

    pub(crate) fn eval_value(&self, st: &ExecState, e: &CExpr, hint: Option<u32>) -> Result<(Value, Vec<SymValue>), VmError> {
        let frame = st.frames.last().expect("live state");
        let mut ctx = Ctx { vm: self, frame, guards: Vec::new() };
        let v = ctx.value(e, hint)?;
        Ok((v, ctx.guards))
    }

    fn eval_scalar(&self, st: &ExecState, e: &CExpr, hint: Option<u32>) -> Result<(SymValue, Vec<SymValue>), VmError> {
        let frame = st.frames.last().expect("live state");
        let mut ctx = Ctx { vm: self, frame, guards: Vec::new() };
        let v = ctx.scalar(e, hint)?;
        Ok((v, ctx.guards))
    }

    fn condition(&self, st: &ExecState, e: &CExpr) -> Result<(SymValue, Vec<SymValue>), VmError> {
        let (c, g) = self.eval_scalar(st, e, None)?;
        let c = if c.width() == 1 { c } else { c.ne_(&SymValue::constant(c.width(), 0)) };
        Ok((c, g))
    }

    fn send_bytes(&self, st: &ExecState, args: &[CExpr]) -> Result<(Vec<SymValue>, Vec<SymValue>), VmError> {
        let mut bytes = Vec::new();
        let mut guards = Vec::new();
        for a in args {
            let (v, g) = self.eval_value(st, a, None)?;
            guards.extend(g);
            match v.serialize() {
                Some(b) => bytes.extend(b),
                None => {
                    if let Value::Scalar(s) = v {
                        return Err(VmError::BadSendWidth(s.width()));
                    }
                }
            }
        }
        Ok((bytes, guards))
    }

    fn recv_capacity(&self, st: &ExecState, slot: u32) -> Result<usize, VmError> {
        let fr = st.frames.last().expect("live state");
        match &fr.slots[slot as usize] {
            Some(Value::Buffer(b)) => Ok(b.len()),
            Some(Value::Scalar(_)) => Err(VmError::TypeMismatch("recv into a scalar".into())),
            None => match self.code.funcs[fr.func as usize].slots[slot as usize].ty {
                Some(Type::Buf(n)) => Ok(n as usize),
                _ => Err(VmError::TypeMismatch("recv destination is not a buffer".into())),
            },
        }
    }

    /// Kind of the next instruction; pure in `st`.
    pub fn classify(&self, st: &ExecState) -> Result<NextInstrClass, VmError> {
        let (_, op) = match self.current_op(st) {
            None => return Ok(NextInstrClass::Halt),
            Some(x) => x,
        };
        Ok(match op {
            None => NextInstrClass::Normal,
            Some(Op::Branch { cond, .. }) => {
                let (c, _) = self.condition(st, cond)?;
                if c.is_symbolic() {
                    NextInstrClass::SymbolicBranch(c)
                } else {
                    NextInstrClass::Normal
                }
            }
            Some(Op::Send(args)) => NextInstrClass::Net(NetInstr::Send(self.send_bytes(st, args)?.0)),
            Some(Op::Recv(slot)) => NextInstrClass::Net(NetInstr::Recv { slot: *slot, capacity: self.recv_capacity(st, *slot)? }),
            Some(Op::Call { callee: Callee::Prohibitive(name), args, dest }) => {
                let mut vals = Vec::new();
                for a in args {
                    vals.push(self.eval_value(st, a, None)?.0);
                }
                NextInstrClass::ProhibitiveCall { name: name.clone(), args: vals, dest: *dest }
            }
            Some(_) => NextInstrClass::Normal,
        })
    }

    /// Retires one normal instruction.
    pub fn exec_step(&self, st: &ExecState) -> Result<ExecState, VmError> {
        let mut s = st.clone();
        match self.classify(&s)? {
            NextInstrClass::Normal => {}
            _ => return Err(VmError::WrongInstruction("normal")),
        }
        self.step_normal(&mut s)?;
        Ok(s)
    }

    fn bump(&self, st: &mut ExecState) -> Result<(), VmError> {
        st.steps += 1;
        if st.steps > self.step_budget {
            return Err(VmError::StepBudgetExceeded);
        }
        Ok(())
    }

    fn advance(st: &mut ExecState) {
        st.frames.last_mut().expect("live state").pc += 1;
    }

    fn do_return(&self, st: &mut ExecState, value: Option<Value>) {
        let fr = st.frames.pop().expect("live state");
        if let (Some(slot), Some(caller)) = (fr.ret_slot, st.frames.last_mut()) {
            let ty = self.code.funcs[caller.func as usize].slots[slot as usize].ty;
            let v = value.unwrap_or(Value::Scalar(SymValue::constant(32, 0)));
            caller.slots[slot as usize] = Some(coerce(v.clone(), ty).unwrap_or(v));
        }
    }

    /// Executes a normal (non-network, non-forking, non-prohibitive) instruction.
    fn step_normal(&self, st: &mut ExecState) -> Result<(), VmError> {
        self.bump(st)?;
        let code = self.code.clone();
        let (id, op) = self.current_op(st).ok_or(VmError::WrongInstruction("normal"))?;
        let fc = &code.funcs[id.func as usize];
        let op = match op {
            None => {
                self.do_return(st, None);
                return Ok(());
            }
            Some(op) => op,
        };
        match op {
            Op::Assign { slot, expr } => {
                let ty = fc.slots[*slot as usize].ty;
                let (v, g) = self.eval_value(st, expr, ty.and_then(Type::scalar_width))?;
                let v = coerce(v, ty)?;
                self.push_guards(st, g);
                st.frames.last_mut().unwrap().slots[*slot as usize] = Some(v);
                Self::advance(st);
            }
            Op::Store { slot, index, value } => {
                let (i, g1) = self.eval_scalar(st, index, Some(32))?;
                let (v, g2) = self.eval_scalar(st, value, Some(8))?;
                let name = &fc.slots[*slot as usize].name;
                let i = i.as_const().ok_or_else(|| VmError::SymbolicIndex(name.clone()))?;
                let fr = st.frames.last_mut().unwrap();
                match &mut fr.slots[*slot as usize] {
                    Some(Value::Buffer(b)) => {
                        let len = b.len();
                        let cell = Arc::make_mut(b).get_mut(i as usize).ok_or_else(|| VmError::IndexOutOfBounds { name: name.clone(), index: i, len })?;
                        *cell = v.resize(8);
                    }
                    Some(Value::Scalar(_)) => return Err(VmError::TypeMismatch(alloc::format!("`{}` is not a buffer", name))),
                    None => return Err(VmError::Uninitialized(name.clone())),
                }
                self.push_guards(st, g1);
                self.push_guards(st, g2);
                Self::advance(st);
            }
            Op::Branch { cond, else_to } => {
                let (c, g) = self.condition(st, cond)?;
                let taken = c.as_const().ok_or(VmError::WrongInstruction("concrete branch"))? == 1;
                self.push_guards(st, g);
                self.record_branch(st, taken, *else_to);
            }
            Op::Jump(t) => st.frames.last_mut().unwrap().pc = *t,
            Op::Call { callee: Callee::User(f), args, dest } => {
                let callee = &code.funcs[*f as usize];
                let mut slots = alloc::vec![None; callee.slots.len()];
                for (k, a) in args.iter().enumerate() {
                    let ty = callee.slots[k].ty;
                    let (v, g) = self.eval_value(st, a, ty.and_then(Type::scalar_width))?;
                    self.push_guards(st, g);
                    slots[k] = Some(coerce(v, ty)?);
                }
                Self::advance(st);
                st.frames.push(Frame { func: *f, pc: 0, slots, ret_slot: *dest });
            }
            Op::Call { callee: Callee::Builtin(b), args, dest } => {
                let label = dest.map(|d| fc.slots[d as usize].name.clone()).unwrap_or_default();
                let v = self.builtin(st, b, args, &label)?;
                if let Some(d) = dest {
                    let v = coerce(v, fc.slots[*d as usize].ty)?;
                    st.frames.last_mut().unwrap().slots[*d as usize] = Some(v);
                }
                Self::advance(st);
            }
            Op::Return(e) => {
                let v = match e {
                    Some(e) => {
                        let (v, g) = self.eval_value(st, e, None)?;
                        self.push_guards(st, g);
                        Some(v)
                    }
                    None => None,
                };
                self.do_return(st, v);
            }
            Op::Send(_) | Op::Recv(_) | Op::Call { callee: Callee::Prohibitive(_), .. } => return Err(VmError::WrongInstruction("normal")),
        }
        Ok(())
    }

    fn push_guards(&self, st: &mut ExecState, g: Vec<SymValue>) {
        for c in g {
            st.cons.push(c);
        }
    }

    fn record_branch(&self, st: &mut ExecState, taken: bool, else_to: u32) {
        st.trail.push(taken);
        st.branch_ordinal += 1;
        let fr = st.frames.last_mut().unwrap();
        if taken {
            fr.pc += 1;
        } else {
            fr.pc = else_to;
        }
    }

    fn builtin(&self, st: &mut ExecState, b: &Builtin, args: &[CExpr], label: &str) -> Result<Value, VmError> {
        let ints = |st: &ExecState, k: usize, what: &str| -> Result<u64, VmError> {
            let frame = st.frames.last().unwrap();
            let mut ctx = Ctx { vm: self, frame, guards: Vec::new() };
            ctx.concrete_u64(&args[k], what)
        };
        Ok(match b {
            Builtin::SymInput => {
                let w = ints(st, 0, "sym_input")? as u32;
                if !matches!(w, 8 | 16 | 32) {
                    return Err(VmError::TypeMismatch(alloc::format!("sym_input({})", w)));
                }
                let id = st.alloc_symbols(1, w, label);
                Value::Scalar(SymValue::symbol(id, w))
            }
            Builtin::SymBytes => {
                let n = ints(st, 0, "sym_bytes")? as u32;
                let first = st.alloc_symbols(n, 8, label);
                Value::bytes((first..first + n).map(|id| SymValue::symbol(id, 8)).collect())
            }
            Builtin::Zeros => {
                let n = ints(st, 0, "zeros")? as usize;
                Value::bytes(alloc::vec![SymValue::constant(8, 0); n])
            }
            Builtin::Slice => {
                let (v, _) = self.eval_value(st, &args[0], None)?;
                let start = ints(st, 1, "slice")? as usize;
                let len = ints(st, 2, "slice")? as usize;
                match v {
                    Value::Buffer(buf) => {
                        if start + len > buf.len() {
                            return Err(VmError::IndexOutOfBounds { name: "slice".into(), index: (start + len) as u64, len: buf.len() });
                        }
                        Value::bytes(buf[start..start + len].to_vec())
                    }
                    Value::Scalar(_) => return Err(VmError::TypeMismatch("slice of a scalar".into())),
                }
            }
        })
    }

    /// Runs until the next network instruction, unresolved symbolic branch, halt,
    /// or until `quota` instructions have retired.
    pub fn run(&self, st: &mut ExecState, saved: &ConstraintSet, quota: u64, on_event: &mut dyn FnMut(VmEvent)) -> Result<Stop, VmError> {
        let mut done = 0u64;
        loop {
            if done >= quota {
                return Ok(Stop::Yield);
            }
            let (id, op) = match self.current_op(st) {
                None => return Ok(Stop::Halt),
                Some(x) => x,
            };
            match op {
                Some(Op::Send(args)) => {
                    let (bytes, g) = self.send_bytes(st, args)?;
                    self.push_guards(st, g);
                    return Ok(Stop::Net(NetInstr::Send(bytes)));
                }
                Some(Op::Recv(slot)) => {
                    let capacity = self.recv_capacity(st, *slot)?;
                    return Ok(Stop::Net(NetInstr::Recv { slot: *slot, capacity }));
                }
                Some(Op::Branch { cond, else_to }) => {
                    let (c, g) = self.condition(st, cond)?;
                    if c.is_symbolic() {
                        self.push_guards(st, g);
                        let planned = st.replay.as_ref().and_then(|p| p.decisions.get(&st.branch_ordinal).copied());
                        match planned {
                            None => return Ok(Stop::Branch(c)),
                            Some(d) => {
                                let side = if d { c.clone() } else { c.not() };
                                if !self.solver.extension_sat(&st.cons, core::slice::from_ref(&side))? {
                                    return Ok(Stop::Infeasible);
                                }
                                self.bump(st)?;
                                st.cons.push(side);
                                self.record_branch(st, d, *else_to);
                            }
                        }
                    } else {
                        let taken = c.as_const() == Some(1);
                        if let Some(p) = &st.replay {
                            if p.decisions.get(&st.branch_ordinal).is_some_and(|d| *d != taken) {
                                st.replay = None;
                            }
                        }
                        self.step_normal(st)?;
                    }
                }
                Some(Op::Call { callee: Callee::Prohibitive(_), .. }) => {
                    self.bump(st)?;
                    exec_step_prohibitive(self, st, saved, on_event)?;
                    let _ = id;
                }
                _ => self.step_normal(st)?,
            }
            done += 1;
        }
    }

    /// Splits a state at a symbolic branch into its (false, true) successors;
    /// infeasible sides are `None`.
    pub fn fork_branch(&self, st: &ExecState) -> Result<(Option<ExecState>, Option<ExecState>), VmError> {
        let (c, g, else_to) = match self.current_op(st) {
            Some((_, Some(Op::Branch { cond, else_to }))) => {
                let (c, g) = self.condition(st, cond)?;
                (c, g, *else_to)
            }
            _ => return Err(VmError::WrongInstruction("branch")),
        };
        let mut base = st.clone();
        self.push_guards(&mut base, g);
        self.bump(&mut base)?;
        let side = |taken: bool| -> Result<Option<ExecState>, VmError> {
            let lit = if taken { c.clone() } else { c.not() };
            if lit.is_false() || !self.solver.extension_sat(&base.cons, core::slice::from_ref(&lit))? {
                return Ok(None);
            }
            let mut s = base.clone();
            s.cons.push(lit);
            self.record_branch(&mut s, taken, else_to);
            Ok(Some(s))
        };
        let f = side(false)?;
        let t = side(true)?;
        Ok((f, t))
    }

    /// Byte-wise equalities between a serialized send and a message payload.
    pub fn message_equalities(bytes: &[SymValue], payload: &[u8]) -> Option<Vec<SymValue>> {
        if bytes.len() != payload.len() {
            return None;
        }
        let mut out = Vec::new();
        for (b, m) in bytes.iter().zip(payload) {
            let e = b.eq_(&SymValue::constant(8, *m as u64));
            if e.is_false() {
                return None;
            }
            if !e.is_true() {
                out.push(e);
            }
        }
        Some(out)
    }

    /// Conjoins the pending send with `m`, fires lazy generators and checks satisfiability.
    pub fn reconcile_send(&self, st: &ExecState, m: &Message) -> Result<Reconciled, VmError> {
        let bytes = match self.classify(st)? {
            NextInstrClass::Net(NetInstr::Send(b)) => b,
            NextInstrClass::Net(_) => return Ok(Reconciled::Contradiction),
            _ => return Err(VmError::WrongInstruction("send")),
        };
        self.reconcile_bytes(st, &bytes, m)
    }

    pub fn reconcile_bytes(&self, st: &ExecState, bytes: &[SymValue], m: &Message) -> Result<Reconciled, VmError> {
        if m.direction != Direction::C2S {
            return Ok(Reconciled::Contradiction);
        }
        let eqs = match Self::message_equalities(bytes, &m.payload) {
            Some(e) => e,
            None => return Ok(Reconciled::Contradiction),
        };
        let mut c = st.cons.clone();
        for e in eqs {
            c.push(e);
        }
        match fire_lazy_generators(self, &st.skipped, &mut c) {
            Ok(_) => {}
            Err(LazyError::GeneratorContradiction) => return Ok(Reconciled::Contradiction),
            Err(LazyError::Solver(e)) => return Err(e.into()),
        }
        Ok(match self.solver.check_sat(&c)? {
            SatResult::Sat(_) => Reconciled::Consistent(c),
            SatResult::Unsat => Reconciled::Contradiction,
        })
    }

    /// Retires a send once its constraint set has been accepted.
    pub fn retire_send(&self, st: &mut ExecState, cons: ConstraintSet) {
        st.cons = cons;
        st.io_index += 1;
        Self::advance(st);
    }

    /// Binds a server message into the receive buffer. `None` on contradiction.
    pub fn apply_recv(&self, st: &ExecState, m: &Message) -> Result<Option<ExecState>, VmError> {
        let (slot, capacity) = match self.classify(st)? {
            NextInstrClass::Net(NetInstr::Recv { slot, capacity }) => (slot, capacity),
            NextInstrClass::Net(_) => return Ok(None),
            _ => return Err(VmError::WrongInstruction("recv")),
        };
        if m.direction != Direction::S2C || m.payload.len() > capacity {
            return Ok(None);
        }
        let mut s = st.clone();
        self.bump(&mut s)?;
        let fr = s.frames.last_mut().unwrap();
        let mut buf = match &fr.slots[slot as usize] {
            Some(Value::Buffer(b)) => b.as_ref().clone(),
            _ => alloc::vec![SymValue::constant(8, 0); capacity],
        };
        for (k, b) in m.payload.iter().enumerate() {
            buf[k] = SymValue::constant(8, *b as u64);
        }
        fr.slots[slot as usize] = Some(Value::bytes(buf));
        s.io_index += 1;
        Self::advance(&mut s);
        Ok(Some(s))
    }

    /// Like [`Vm::apply_recv`] but leaves the received bytes unknown.
    pub fn apply_recv_opaque(&self, st: &ExecState, m: &Message) -> Result<Option<ExecState>, VmError> {
        let mut s = match self.apply_recv(st, m)? {
            Some(s) => s,
            None => return Ok(None),
        };
        let n = m.payload.len() as u32;
        let first = s.alloc_symbols(n, 8, "recv");
        let fr = s.frames.last_mut().unwrap();
        let slot = match self.code.op(InstrId { func: fr.func, pc: fr.pc - 1 }) {
            Some(Op::Recv(slot)) => *slot,
            _ => return Ok(Some(s)),
        };
        if let Some(Value::Buffer(b)) = &mut fr.slots[slot as usize] {
            let b = Arc::make_mut(b);
            for k in 0..n {
                b[k as usize] = SymValue::symbol(first + k, 8);
            }
        }
        Ok(Some(s))
    }

    /// Replay plan following the branch outcomes recorded on `st`.
    pub fn replay_plan(st: &ExecState) -> ReplayPlan {
        let mut decisions = alloc::collections::BTreeMap::new();
        for k in 0..st.trail.len() {
            decisions.insert(k, st.trail.get(k).unwrap());
        }
        ReplayPlan { decisions }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::parse_program;
    use crate::prohibitive::builtin_suite;

    fn vm(src: &str) -> Vm {
        Vm::new(Arc::new(Code::compile(&parse_program(src).unwrap()).unwrap()), Arc::new(builtin_suite()))
    }

    fn run(vm: &Vm, st: &mut ExecState) -> Stop {
        vm.run(st, &ConstraintSet::new(), u64::MAX, &mut |_| {}).unwrap()
    }

    #[test]
    fn concrete_send() {
        let vm = vm("fn client() { let x: u16 = 0x1234; send(x, 7u8); }");
        let mut st = vm.initial_state();
        match run(&vm, &mut st) {
            Stop::Net(NetInstr::Send(b)) => {
                assert_eq!(b.iter().map(|x| x.as_const().unwrap()).collect::<Vec<_>>(), [0x12, 0x34, 7]);
            }
            s => panic!("{:?}", s),
        }
        let ok = Message::new(Direction::C2S, 0, alloc::vec![0x12, 0x34, 7]);
        assert!(matches!(vm.reconcile_send(&st, &ok).unwrap(), Reconciled::Consistent(_)));
        let short = Message::new(Direction::C2S, 0, alloc::vec![0x12, 0x34]);
        assert!(matches!(vm.reconcile_send(&st, &short).unwrap(), Reconciled::Contradiction));
        let wrong_dir = Message::new(Direction::S2C, 0, alloc::vec![0x12, 0x34, 7]);
        assert!(matches!(vm.reconcile_send(&st, &wrong_dir).unwrap(), Reconciled::Contradiction));
    }

    #[test]
    fn fork_and_replay() {
        let vm = vm("fn client() { let a = sym_input(8); if a < 10 { send(1u8); } else { send(2u8); } }");
        let mut st = vm.initial_state();
        assert!(matches!(run(&vm, &mut st), Stop::Branch(_)));
        let (f, t) = vm.fork_branch(&st).unwrap();
        let (mut f, mut t) = (f.unwrap(), t.unwrap());
        for (s, byte) in [(&mut f, 2u64), (&mut t, 1)] {
            match run(&vm, s) {
                Stop::Net(NetInstr::Send(b)) => assert_eq!(b[0].as_const(), Some(byte)),
                x => panic!("{:?}", x),
            }
        }
        let mut again = vm.initial_state();
        again.replay = Some(Arc::new(Vm::replay_plan(&t)));
        match run(&vm, &mut again) {
            Stop::Net(NetInstr::Send(b)) => assert_eq!(b[0].as_const(), Some(1)),
            x => panic!("{:?}", x),
        }
    }

    #[test]
    fn infeasible_side_pruned() {
        let vm = vm("fn client() { let a = sym_input(8); if a < 10 { if a > 20 { send(1u8); } } }");
        let mut st = vm.initial_state();
        run(&vm, &mut st);
        let (_, t) = vm.fork_branch(&st).unwrap();
        let mut t = t.unwrap();
        assert!(matches!(run(&vm, &mut t), Stop::Branch(_)));
        let (f, t2) = vm.fork_branch(&t).unwrap();
        assert!(f.is_some() && t2.is_none());
    }

    #[test]
    fn recv_and_budget() {
        let vm = vm("fn client() { let r: buf[2] = zeros(2); recv(r); send(r); }");
        let mut st = vm.initial_state();
        assert!(matches!(run(&vm, &mut st), Stop::Net(NetInstr::Recv { capacity: 2, .. })));
        assert!(vm.apply_recv(&st, &Message::new(Direction::S2C, 0, alloc::vec![1, 2, 3])).unwrap().is_none());
        let mut s = vm.apply_recv(&st, &Message::new(Direction::S2C, 0, alloc::vec![9])).unwrap().unwrap();
        match run(&vm, &mut s) {
            Stop::Net(NetInstr::Send(b)) => assert_eq!(b.iter().map(|x| x.as_const()).collect::<Vec<_>>(), [Some(9), Some(0)]),
            x => panic!("{:?}", x),
        }
        let mut o = vm.apply_recv_opaque(&st, &Message::new(Direction::S2C, 0, alloc::vec![9])).unwrap().unwrap();
        match run(&vm, &mut o) {
            Stop::Net(NetInstr::Send(b)) => assert!(b[0].is_symbolic()),
            x => panic!("{:?}", x),
        }

        let mut spin = self::vm("fn client() { let i: u32 = 0; while i < 100000 { i = i + 1; } }");
        spin.step_budget = 50;
        let mut st = spin.initial_state();
        assert_eq!(spin.run(&mut st, &ConstraintSet::new(), u64::MAX, &mut |_| {}), Err(VmError::StepBudgetExceeded));
        let mut st = spin.initial_state();
        assert_eq!(spin.run(&mut st, &ConstraintSet::new(), 10, &mut |_| {}), Ok(Stop::Yield));
    }

    #[test]
    fn concrete_division_by_zero() {
        let vm = vm("fn client() { let z: u8 = 0; let x = 5u8 % z; send(x); }");
        let mut st = vm.initial_state();
        assert!(matches!(vm.run(&mut st, &ConstraintSet::new(), u64::MAX, &mut |_| {}), Err(VmError::DivisionByZeroOnConcrete { .. })));
    }
}
