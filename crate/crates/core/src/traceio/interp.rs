//! Plain concrete interpreter over the syntax tree, used to produce fixtures
//! and as an oracle for the symbolic VM.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{Direction, Message, MessageTrace, MetaEntry};
use crate::minilang::{builtin_arity, walk_stmts, BinaryOp, Expr, ExprKind, FunctionDef, Program, Stmt, Type};
use crate::prohibitive::{Concrete, InputLayout, OutputShape, ProhibitiveRegistry};
use crate::symcore::mask;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterpError {
    #[error("step limit exceeded")]
    StepLimit,
    #[error("division by zero")]
    DivisionByZero,
    #[error("index {index} out of bounds (length {len})")]
    OutOfBounds { index: u64, len: usize },
    #[error("unknown variable `{0}`")]
    Unknown(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("recv with no server response")]
    NoResponse,
    #[error("server response of {len} bytes overflows a {capacity}-byte buffer")]
    RecvOverflow { len: usize, capacity: usize },
    #[error("unresolved call `{0}`")]
    UnresolvedCall(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CVal {
    Scalar(u32, u64),
    Buf(Vec<u8>),
}

/// Values for the client's unknowns, requested by the variable they initialize.
pub trait InputSource {
    fn scalar(&mut self, label: &str, width: u32) -> u64;
    fn bytes(&mut self, label: &str, n: usize) -> Vec<u8>;
}

/// Inputs taken from per-label queues, then from a seeded generator.
#[derive(Debug, Clone)]
pub struct MapInputs {
    pub scalars: BTreeMap<String, VecDeque<u64>>,
    pub buffers: BTreeMap<String, VecDeque<Vec<u8>>>,
    rng: ChaCha8Rng,
}

impl MapInputs {
    pub fn new(seed: u64) -> MapInputs {
        MapInputs { scalars: BTreeMap::new(), buffers: BTreeMap::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn with(mut self, label: &str, v: u64) -> Self {
        self.scalars.entry(label.into()).or_default().push_back(v);
        self
    }

    pub fn with_bytes(mut self, label: &str, v: Vec<u8>) -> Self {
        self.buffers.entry(label.into()).or_default().push_back(v);
        self
    }
}

impl InputSource for MapInputs {
    fn scalar(&mut self, label: &str, width: u32) -> u64 {
        match self.scalars.get_mut(label).and_then(|q| q.pop_front()) {
            Some(v) => v & mask(width),
            None => self.rng.gen::<u64>() & mask(width),
        }
    }

    fn bytes(&mut self, label: &str, n: usize) -> Vec<u8> {
        match self.buffers.get_mut(label).and_then(|q| q.pop_front()) {
            Some(mut v) => {
                v.resize(n, 0);
                v
            }
            None => (0..n).map(|_| self.rng.gen()).collect(),
        }
    }
}

/// Produces server-to-client payloads during fixture generation.
pub trait Server {
    fn respond(&mut self, history: &[(Direction, Vec<u8>)], capacity: usize) -> Option<Vec<u8>>;
}

pub struct NoServer;

impl Server for NoServer {
    fn respond(&mut self, _: &[(Direction, Vec<u8>)], _: usize) -> Option<Vec<u8>> {
        None
    }
}

/// Replies with canned payloads in order.
#[derive(Debug, Clone, Default)]
pub struct ScriptedServer(pub VecDeque<Vec<u8>>);

impl Server for ScriptedServer {
    fn respond(&mut self, _: &[(Direction, Vec<u8>)], _: usize) -> Option<Vec<u8>> {
        self.0.pop_front()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimingProfile {
    Uniform { gap_ms: u64 },
    /// `size` messages `intra_ms` apart, then a pause of `inter_ms`.
    Burst { size: usize, intra_ms: u64, inter_ms: u64 },
}

impl TimingProfile {
    pub fn arrival(&self, k: usize) -> u64 {
        match *self {
            TimingProfile::Uniform { gap_ms } => gap_ms * k as u64,
            TimingProfile::Burst { size, intra_ms, inter_ms } => {
                let size = size.max(1);
                let (b, i) = ((k / size) as u64, (k % size) as u64);
                b * ((size as u64 - 1) * intra_ms + inter_ms) + i * intra_ms
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConcreteRun {
    pub messages: Vec<(Direction, Vec<u8>)>,
    /// Injected secrets computed during the run, with the message count at the time.
    pub injected: Vec<MetaEntry>,
    pub steps: u64,
}

struct Interp<'a> {
    program: &'a Program,
    registry: &'a ProhibitiveRegistry,
    inputs: &'a mut dyn InputSource,
    server: &'a mut dyn Server,
    run: ConcreteRun,
    limit: u64,
    types: BTreeMap<&'a str, BTreeMap<String, Option<Type>>>,
}

enum Flow {
    Next,
    Return(Option<CVal>),
}

type Env = BTreeMap<String, CVal>;

fn resize(v: u64, w: u32) -> (u32, u64) {
    (w, v & mask(w))
}

fn coerce(v: CVal, ty: Option<Type>) -> Result<CVal, InterpError> {
    match (ty, v) {
        (None, v) => Ok(v),
        (Some(Type::Buf(n)), CVal::Buf(b)) if b.len() == n as usize => Ok(CVal::Buf(b)),
        (Some(Type::Buf(_)), _) => Err(InterpError::Type("buffer type mismatch".into())),
        (Some(t), CVal::Scalar(_, x)) => {
            let (w, x) = resize(x, t.scalar_width().unwrap());
            Ok(CVal::Scalar(w, x))
        }
        (Some(_), CVal::Buf(_)) => Err(InterpError::Type("buffer assigned to scalar".into())),
    }
}

fn declared_types(f: &FunctionDef) -> BTreeMap<String, Option<Type>> {
    let mut m: BTreeMap<String, Option<Type>> = BTreeMap::new();
    for p in &f.params {
        m.insert(p.name.clone(), Some(p.ty));
    }
    walk_stmts(&f.body, &mut |s| {
        let (name, ty) = match s {
            Stmt::Let { name, ty, .. } => (name, *ty),
            Stmt::Call { dest: Some(d), .. } if d.declare => (&d.name, d.ty),
            _ => return,
        };
        let e = m.entry(name.clone()).or_insert(None);
        if e.is_none() {
            *e = ty;
        }
    });
    m
}

fn is_unsized(e: &Expr) -> bool {
    matches!(e.kind, ExprKind::Lit { width: None, .. })
}

impl<'a> Interp<'a> {
    fn tick(&mut self) -> Result<(), InterpError> {
        self.run.steps += 1;
        if self.run.steps > self.limit {
            return Err(InterpError::StepLimit);
        }
        Ok(())
    }

    fn ty(&self, func: &str, name: &str) -> Option<Type> {
        self.types.get(func).and_then(|m| m.get(name)).copied().flatten()
    }

    fn value(&self, env: &Env, e: &Expr, hint: Option<u32>) -> Result<CVal, InterpError> {
        if let ExprKind::Var(n) = &e.kind {
            return env.get(n).cloned().ok_or_else(|| InterpError::Unknown(n.clone()));
        }
        let (w, v) = self.scalar(env, e, hint)?;
        Ok(CVal::Scalar(w, v))
    }

    fn scalar(&self, env: &Env, e: &Expr, hint: Option<u32>) -> Result<(u32, u64), InterpError> {
        match &e.kind {
            ExprKind::Lit { value, width } => Ok(resize(*value, width.or(hint).unwrap_or(32))),
            ExprKind::Var(n) => match env.get(n) {
                Some(CVal::Scalar(w, v)) => Ok((*w, *v)),
                Some(CVal::Buf(_)) => Err(InterpError::Type(alloc::format!("`{}` is a buffer", n))),
                None => Err(InterpError::Unknown(n.clone())),
            },
            ExprKind::Index(n, i) => {
                let (_, idx) = self.scalar(env, i, Some(32))?;
                match env.get(n) {
                    Some(CVal::Buf(b)) => b.get(idx as usize).map(|x| (8, *x as u64)).ok_or(InterpError::OutOfBounds { index: idx, len: b.len() }),
                    Some(_) => Err(InterpError::Type(alloc::format!("`{}` is not a buffer", n))),
                    None => Err(InterpError::Unknown(n.clone())),
                }
            }
            ExprKind::Not(a) => {
                let (w, v) = self.scalar(env, a, hint)?;
                Ok(resize(!v, w))
            }
            ExprKind::Binary(op, a, b) => {
                let cmp = matches!(op, BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Le);
                let oh = if cmp { None } else { hint };
                let ((wa, x), (wb, y)) = if is_unsized(a) && !is_unsized(b) {
                    let y = self.scalar(env, b, oh)?;
                    (self.scalar(env, a, Some(y.0))?, y)
                } else {
                    let x = self.scalar(env, a, oh)?;
                    (x, self.scalar(env, b, Some(x.0))?)
                };
                let w = wa.max(wb);
                let m = mask(w);
                Ok(match op {
                    BinaryOp::Add => (w, x.wrapping_add(y) & m),
                    BinaryOp::Sub => (w, x.wrapping_sub(y) & m),
                    BinaryOp::Mul => (w, x.wrapping_mul(y) & m),
                    BinaryOp::Mod => {
                        if y == 0 {
                            return Err(InterpError::DivisionByZero);
                        }
                        (w, x % y)
                    }
                    BinaryOp::And => (w, x & y),
                    BinaryOp::Or => (w, x | y),
                    BinaryOp::Xor => (w, x ^ y),
                    BinaryOp::Shl => (w, if y >= w as u64 { 0 } else { (x << y) & m }),
                    BinaryOp::Shr => (w, if y >= w as u64 { 0 } else { x >> y }),
                    BinaryOp::Eq => (1, (x == y) as u64),
                    BinaryOp::Ne => (1, (x != y) as u64),
                    BinaryOp::Lt => (1, (x < y) as u64),
                    BinaryOp::Le => (1, (x <= y) as u64),
                })
            }
            ExprKind::Concat(a, b) => {
                let (wa, x) = self.scalar(env, a, None)?;
                let (wb, y) = self.scalar(env, b, None)?;
                if wa + wb > 64 {
                    return Err(InterpError::Type("concat wider than 64 bits".into()));
                }
                Ok((wa + wb, if wb == 64 { y } else { (x << wb) | y }))
            }
            ExprKind::Extract(a, lo, hi) => {
                let (w, x) = self.scalar(env, a, None)?;
                if *hi >= w {
                    return Err(InterpError::Type("extract out of range".into()));
                }
                let n = hi - lo + 1;
                Ok((n, (x >> lo) & mask(n)))
            }
        }
    }

    fn cond(&self, env: &Env, e: &Expr) -> Result<bool, InterpError> {
        let (_, v) = self.scalar(env, e, None)?;
        Ok(v != 0)
    }

    fn to_concrete(v: &CVal) -> Concrete {
        match v {
            CVal::Scalar(w, x) => Concrete::Scalar { width: *w, value: *x },
            CVal::Buf(b) => Concrete::Bytes(b.clone()),
        }
    }

    fn call(&mut self, env: &mut Env, name: &str, args: &[Expr], label: &str) -> Result<Option<CVal>, InterpError> {
        if let Some(f) = self.program.function(name) {
            let mut callee_env = Env::new();
            for (p, a) in f.params.iter().zip(args) {
                let v = self.value(env, a, p.ty.scalar_width())?;
                callee_env.insert(p.name.clone(), coerce(v, Some(p.ty))?);
            }
            return self.exec_fn(f, callee_env);
        }
        if builtin_arity(name).is_some() {
            let int = |s: &Self, k: usize| -> Result<u64, InterpError> { Ok(s.scalar(env, &args[k], Some(32))?.1) };
            return Ok(Some(match name {
                "sym_input" => {
                    let w = int(self, 0)? as u32;
                    CVal::Scalar(w, self.inputs.scalar(label, w) & mask(w))
                }
                "sym_bytes" => {
                    let n = int(self, 0)? as usize;
                    CVal::Buf(self.inputs.bytes(label, n))
                }
                "zeros" => CVal::Buf(alloc::vec![0; int(self, 0)? as usize]),
                _ => {
                    let v = self.value(env, &args[0], None)?;
                    let (start, len) = (int(self, 1)? as usize, int(self, 2)? as usize);
                    match v {
                        CVal::Buf(b) if start + len <= b.len() => CVal::Buf(b[start..start + len].to_vec()),
                        CVal::Buf(b) => return Err(InterpError::OutOfBounds { index: (start + len) as u64, len: b.len() }),
                        _ => return Err(InterpError::Type("slice of a scalar".into())),
                    }
                }
            }));
        }
        let entry = self.registry.get(name).cloned().ok_or_else(|| InterpError::UnresolvedCall(name.into()))?;
        let mut vals = Vec::new();
        for (k, a) in args.iter().enumerate() {
            let hint = match entry.inputs.get(k) {
                Some(InputLayout::Scalar(w)) => Some(*w),
                _ => None,
            };
            vals.push(self.value(env, a, hint)?);
        }
        let cargs: Vec<Concrete> = vals.iter().map(Self::to_concrete).collect();
        let lens: Vec<u32> = vals
            .iter()
            .map(|v| match v {
                CVal::Scalar(w, _) => w / 8,
                CVal::Buf(b) => b.len() as u32,
            })
            .collect();
        let shape = entry.output_shape(&lens).ok_or_else(|| InterpError::Type("output length".into()))?;
        let out = (entry.implementation)(&cargs);
        if let Some(key) = self.registry.injection(name) {
            let position = self.run.messages.len();
            if !self.run.injected.iter().any(|m| m.key == key) {
                self.run.injected.push(MetaEntry { key: key.into(), value: out.to_bytes(), position });
            }
        }
        Ok(Some(match shape {
            OutputShape::Scalar(w) => CVal::Scalar(w, out.scalar() & mask(w)),
            OutputShape::Bytes(_) => CVal::Buf(out.to_bytes()),
        }))
    }

    fn exec_block(&mut self, f: &'a FunctionDef, env: &mut Env, stmts: &'a [Stmt]) -> Result<Flow, InterpError> {
        for s in stmts {
            self.tick()?;
            match s {
                Stmt::Let { name, value, .. } | Stmt::Assign { name, value, .. } => {
                    let ty = self.ty(&f.name, name);
                    let v = self.value(env, value, ty.and_then(Type::scalar_width))?;
                    env.insert(name.clone(), coerce(v, ty)?);
                }
                Stmt::Store { name, index, value, .. } => {
                    let (_, i) = self.scalar(env, index, Some(32))?;
                    let (_, v) = self.scalar(env, value, Some(8))?;
                    match env.get_mut(name) {
                        Some(CVal::Buf(b)) => {
                            let len = b.len();
                            *b.get_mut(i as usize).ok_or(InterpError::OutOfBounds { index: i, len })? = v as u8;
                        }
                        _ => return Err(InterpError::Type(alloc::format!("`{}` is not a buffer", name))),
                    }
                }
                Stmt::If { cond, then_block, else_block, .. } => {
                    let b = if self.cond(env, cond)? { then_block } else { else_block };
                    if let Flow::Return(v) = self.exec_block(f, env, b)? {
                        return Ok(Flow::Return(v));
                    }
                }
                Stmt::While { cond, body, .. } => {
                    while self.cond(env, cond)? {
                        self.tick()?;
                        if let Flow::Return(v) = self.exec_block(f, env, body)? {
                            return Ok(Flow::Return(v));
                        }
                    }
                }
                Stmt::Send { args, .. } => {
                    let mut bytes = Vec::new();
                    for a in args {
                        match self.value(env, a, None)? {
                            CVal::Buf(b) => bytes.extend(b),
                            CVal::Scalar(w, v) => {
                                if w % 8 != 0 {
                                    return Err(InterpError::Type(alloc::format!("cannot send a {}-bit scalar", w)));
                                }
                                for k in (0..w / 8).rev() {
                                    bytes.push((v >> (8 * k)) as u8);
                                }
                            }
                        }
                    }
                    self.run.messages.push((Direction::C2S, bytes));
                }
                Stmt::Recv { dest, .. } => {
                    let mut buf = match env.get(dest) {
                        Some(CVal::Buf(b)) => b.clone(),
                        Some(_) => return Err(InterpError::Type("recv into a scalar".into())),
                        None => match self.ty(&f.name, dest) {
                            Some(Type::Buf(n)) => alloc::vec![0; n as usize],
                            _ => return Err(InterpError::Unknown(dest.clone())),
                        },
                    };
                    let reply = self.server.respond(&self.run.messages, buf.len()).ok_or(InterpError::NoResponse)?;
                    if reply.len() > buf.len() {
                        return Err(InterpError::RecvOverflow { len: reply.len(), capacity: buf.len() });
                    }
                    buf[..reply.len()].copy_from_slice(&reply);
                    self.run.messages.push((Direction::S2C, reply));
                    env.insert(dest.clone(), CVal::Buf(buf));
                }
                Stmt::Call { name, args, dest, .. } => {
                    let label = dest.as_ref().map(|d| d.name.clone()).unwrap_or_default();
                    let v = self.call(env, name, args, &label)?;
                    if let (Some(d), Some(v)) = (dest, v) {
                        let is_prohibitive = self.program.function(name).is_none() && builtin_arity(name).is_none();
                        let v = if is_prohibitive { v } else { coerce(v, self.ty(&f.name, &d.name))? };
                        env.insert(d.name.clone(), v);
                    }
                }
                Stmt::Return { value, .. } => {
                    let v = match value {
                        Some(e) => Some(self.value(env, e, None)?),
                        None => None,
                    };
                    return Ok(Flow::Return(v));
                }
            }
        }
        Ok(Flow::Next)
    }

    fn exec_fn(&mut self, f: &'a FunctionDef, mut env: Env) -> Result<Option<CVal>, InterpError> {
        match self.exec_block(f, &mut env, &f.body)? {
            Flow::Return(v) => Ok(Some(v.unwrap_or(CVal::Scalar(32, 0)))),
            Flow::Next => Ok(Some(CVal::Scalar(32, 0))),
        }
    }
}

/// Runs `program` concretely, recording every message it sends or receives.
pub fn run_concrete(
    program: &Program,
    registry: &ProhibitiveRegistry,
    inputs: &mut dyn InputSource,
    server: &mut dyn Server,
    step_limit: u64,
) -> Result<ConcreteRun, InterpError> {
    let entry = program.function(&program.entry).ok_or_else(|| InterpError::Unknown(program.entry.clone()))?;
    let types = program.functions.iter().map(|f| (f.name.as_str(), declared_types(f))).collect();
    let mut it = Interp { program, registry, inputs, server, run: ConcreteRun::default(), limit: step_limit, types };
    it.exec_fn(entry, Env::new())?;
    Ok(it.run)
}

/// Concretely executes the client and timestamps its messages.
pub fn generate_trace(
    program: &Program,
    registry: &ProhibitiveRegistry,
    inputs: &mut dyn InputSource,
    server: &mut dyn Server,
    profile: TimingProfile,
) -> Result<MessageTrace, InterpError> {
    let run = run_concrete(program, registry, inputs, server, 10_000_000)?;
    let messages = run.messages.into_iter().enumerate().map(|(k, (d, p))| Message::new(d, profile.arrival(k), p)).collect();
    Ok(MessageTrace { messages, metadata: run.injected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::parse_program;
    use crate::prohibitive::{builtin_suite, toy};

    fn run(src: &str, inputs: &mut MapInputs, server: &mut dyn Server) -> Result<ConcreteRun, InterpError> {
        run_concrete(&parse_program(src).unwrap(), &builtin_suite(), inputs, server, 100_000)
    }

    #[test]
    fn worked_example_client() {
        let src = crate::protocols::PAPER_EXAMPLE;
        let r = run(src, &mut MapInputs::new(0).with("x", 9).with("y", 0x1537).with("iv", 0x1234), &mut NoServer).unwrap();
        assert_eq!(r.messages, [(Direction::C2S, alloc::vec![0x12, 0x34, 0x9d, 0xac])]);
        let r = run(src, &mut MapInputs::new(0).with("x", 8), &mut NoServer).unwrap();
        assert!(r.messages.is_empty());
    }

    #[test]
    fn recv_and_widths() {
        let src = "fn client() { let r: buf[3] = zeros(3); recv(r); let x: u8 = r[0] + 255; send(x, r); }";
        let mut server = ScriptedServer(VecDeque::from([alloc::vec![2u8, 5]]));
        let r = run(src, &mut MapInputs::new(0), &mut server).unwrap();
        assert_eq!(r.messages[1], (Direction::C2S, alloc::vec![1, 2, 5, 0]));
        let mut big = ScriptedServer(VecDeque::from([alloc::vec![0u8; 4]]));
        assert_eq!(run(src, &mut MapInputs::new(0), &mut big), Err(InterpError::RecvOverflow { len: 4, capacity: 3 }));
        assert_eq!(run(src, &mut MapInputs::new(0), &mut NoServer), Err(InterpError::NoResponse));
    }

    #[test]
    fn injection_logged() {
        let src = "fn client() { send(1u8); let s = sym_input(16); let k = MASTER(s); send(k); }";
        let r = run(src, &mut MapInputs::new(0).with("s", 77), &mut NoServer).unwrap();
        assert_eq!(r.injected, [MetaEntry { key: "master".into(), value: toy::master(77).to_be_bytes().to_vec(), position: 1 }]);
    }

    #[test]
    fn step_limit_and_timing() {
        let src = "fn client() { let i: u8 = 0; while 1 == 1 { i = i + 1; } }";
        let p = parse_program(src).unwrap();
        assert_eq!(run_concrete(&p, &builtin_suite(), &mut MapInputs::new(0), &mut NoServer, 1000), Err(InterpError::StepLimit));
        let b = TimingProfile::Burst { size: 3, intra_ms: 1, inter_ms: 100 };
        assert_eq!((0..7).map(|k| b.arrival(k)).collect::<Vec<_>>(), [0, 1, 2, 102, 103, 104, 204]);
    }
}
