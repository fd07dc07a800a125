//! Flattening of the syntax tree into per-function instruction lists.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::minilang::{builtin_arity, BinaryOp, Expr, ExprKind, Program, Stmt, Type};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstrId {
    pub func: u32,
    pub pc: u32,
}

#[derive(Debug, Clone)]
pub enum CExpr {
    Lit(u64, Option<u32>),
    Var(u32),
    Index(u32, Box<CExpr>),
    Not(Box<CExpr>),
    Bin(BinaryOp, Box<CExpr>, Box<CExpr>),
    Concat(Box<CExpr>, Box<CExpr>),
    Extract(Box<CExpr>, u32, u32),
}

impl CExpr {
    pub fn is_unsized_lit(&self) -> bool {
        matches!(self, CExpr::Lit(_, None))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Builtin {
    SymInput,
    SymBytes,
    Zeros,
    Slice,
}

#[derive(Debug, Clone)]
pub enum Callee {
    User(u32),
    Builtin(Builtin),
    Prohibitive(Arc<str>),
}

#[derive(Debug, Clone)]
pub enum Op {
    Assign { slot: u32, expr: CExpr },
    Store { slot: u32, index: CExpr, value: CExpr },
    /// Falls through when the condition holds, jumps to `else_to` otherwise.
    Branch { cond: CExpr, else_to: u32 },
    Jump(u32),
    Send(Vec<CExpr>),
    Recv(u32),
    Call { callee: Callee, args: Vec<CExpr>, dest: Option<u32> },
    Return(Option<CExpr>),
}

#[derive(Debug, Clone)]
pub struct SlotInfo {
    pub name: String,
    pub ty: Option<Type>,
}

#[derive(Debug, Clone)]
pub struct FuncCode {
    pub name: String,
    pub nparams: usize,
    pub slots: Vec<SlotInfo>,
    pub ops: Vec<Op>,
}

#[derive(Debug, Clone)]
pub struct Code {
    pub funcs: Vec<FuncCode>,
    pub entry: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CompileError {
    #[error("entry function `{0}` not found")]
    MissingEntry(String),
    #[error("unknown variable `{name}` in `{func}`")]
    UnknownVariable { func: String, name: String },
}

struct FnCompiler<'a> {
    func_index: &'a BTreeMap<&'a str, u32>,
    slots: Vec<SlotInfo>,
    by_name: BTreeMap<String, u32>,
    ops: Vec<Op>,
    fname: String,
}

impl FnCompiler<'_> {
    fn declare(&mut self, name: &str, ty: Option<Type>) -> u32 {
        if let Some(s) = self.by_name.get(name) {
            if self.slots[*s as usize].ty.is_none() {
                self.slots[*s as usize].ty = ty;
            }
            return *s;
        }
        let s = self.slots.len() as u32;
        self.slots.push(SlotInfo { name: name.into(), ty });
        self.by_name.insert(name.into(), s);
        s
    }

    fn slot(&self, name: &str) -> Result<u32, CompileError> {
        self.by_name.get(name).copied().ok_or_else(|| CompileError::UnknownVariable { func: self.fname.clone(), name: name.into() })
    }

    fn expr(&self, e: &Expr) -> Result<CExpr, CompileError> {
        Ok(match &e.kind {
            ExprKind::Lit { value, width } => CExpr::Lit(*value, *width),
            ExprKind::Var(n) => CExpr::Var(self.slot(n)?),
            ExprKind::Index(n, i) => CExpr::Index(self.slot(n)?, Box::new(self.expr(i)?)),
            ExprKind::Not(a) => CExpr::Not(Box::new(self.expr(a)?)),
            ExprKind::Binary(op, a, b) => CExpr::Bin(*op, Box::new(self.expr(a)?), Box::new(self.expr(b)?)),
            ExprKind::Concat(a, b) => CExpr::Concat(Box::new(self.expr(a)?), Box::new(self.expr(b)?)),
            ExprKind::Extract(a, lo, hi) => CExpr::Extract(Box::new(self.expr(a)?), *lo, *hi),
        })
    }

    fn block(&mut self, stmts: &[Stmt]) -> Result<(), CompileError> {
        for s in stmts {
            self.stmt(s)?;
        }
        Ok(())
    }

    fn here(&self) -> u32 {
        self.ops.len() as u32
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), CompileError> {
        match s {
            Stmt::Let { name, value, .. } | Stmt::Assign { name, value, .. } => {
                let slot = self.slot(name)?;
                let expr = self.expr(value)?;
                self.ops.push(Op::Assign { slot, expr });
            }
            Stmt::Store { name, index, value, .. } => {
                let slot = self.slot(name)?;
                let (index, value) = (self.expr(index)?, self.expr(value)?);
                self.ops.push(Op::Store { slot, index, value });
            }
            Stmt::If { cond, then_block, else_block, .. } => {
                let cond = self.expr(cond)?;
                let at = self.here();
                self.ops.push(Op::Branch { cond, else_to: 0 });
                self.block(then_block)?;
                if else_block.is_empty() {
                    let end = self.here();
                    self.patch_branch(at, end);
                } else {
                    let jump = self.here();
                    self.ops.push(Op::Jump(0));
                    let else_start = self.here();
                    self.patch_branch(at, else_start);
                    self.block(else_block)?;
                    let end = self.here();
                    self.ops[jump as usize] = Op::Jump(end);
                }
            }
            Stmt::While { cond, body, .. } => {
                let cond = self.expr(cond)?;
                let top = self.here();
                self.ops.push(Op::Branch { cond, else_to: 0 });
                self.block(body)?;
                self.ops.push(Op::Jump(top));
                let end = self.here();
                self.patch_branch(top, end);
            }
            Stmt::Send { args, .. } => {
                let args = args.iter().map(|a| self.expr(a)).collect::<Result<_, _>>()?;
                self.ops.push(Op::Send(args));
            }
            Stmt::Recv { dest, .. } => {
                let slot = self.slot(dest)?;
                self.ops.push(Op::Recv(slot));
            }
            Stmt::Call { name, args, dest, .. } => {
                let callee = if let Some(f) = self.func_index.get(name.as_str()) {
                    Callee::User(*f)
                } else if builtin_arity(name).is_some() {
                    Callee::Builtin(match name.as_str() {
                        "sym_input" => Builtin::SymInput,
                        "sym_bytes" => Builtin::SymBytes,
                        "zeros" => Builtin::Zeros,
                        _ => Builtin::Slice,
                    })
                } else {
                    Callee::Prohibitive(Arc::from(name.as_str()))
                };
                let args = args.iter().map(|a| self.expr(a)).collect::<Result<_, _>>()?;
                let dest = match dest {
                    Some(d) => Some(self.slot(&d.name)?),
                    None => None,
                };
                self.ops.push(Op::Call { callee, args, dest });
            }
            Stmt::Return { value, .. } => {
                let v = match value {
                    Some(v) => Some(self.expr(v)?),
                    None => None,
                };
                self.ops.push(Op::Return(v));
            }
        }
        Ok(())
    }

    fn patch_branch(&mut self, at: u32, target: u32) {
        if let Op::Branch { else_to, .. } = &mut self.ops[at as usize] {
            *else_to = target;
        }
    }
}

impl Code {
    pub fn compile(p: &Program) -> Result<Code, CompileError> {
        let func_index: BTreeMap<&str, u32> = p.functions.iter().enumerate().map(|(k, f)| (f.name.as_str(), k as u32)).collect();
        let entry = *func_index.get(p.entry.as_str()).ok_or_else(|| CompileError::MissingEntry(p.entry.clone()))?;
        let mut funcs = Vec::new();
        for f in &p.functions {
            let mut c = FnCompiler { func_index: &func_index, slots: Vec::new(), by_name: BTreeMap::new(), ops: Vec::new(), fname: f.name.clone() };
            for prm in &f.params {
                c.declare(&prm.name, Some(prm.ty));
            }
            crate::minilang::walk_stmts(&f.body, &mut |s| match s {
                Stmt::Let { name, ty, .. } => {
                    c.declare(name, *ty);
                }
                Stmt::Call { dest: Some(d), .. } if d.declare => {
                    c.declare(&d.name, d.ty);
                }
                _ => {}
            });
            c.block(&f.body)?;
            funcs.push(FuncCode { name: f.name.clone(), nparams: f.params.len(), slots: c.slots, ops: c.ops });
        }
        Ok(Code { funcs, entry })
    }

    pub fn op(&self, id: InstrId) -> Option<&Op> {
        self.funcs.get(id.func as usize).and_then(|f| f.ops.get(id.pc as usize))
    }

    /// Number of branch instructions in the whole program.
    pub fn branch_count(&self) -> usize {
        self.funcs.iter().map(|f| f.ops.iter().filter(|o| matches!(o, Op::Branch { .. })).count()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::parse_program;

    #[test]
    fn if_else_layout() {
        let p = parse_program("fn client() { let x = sym_input(8); if x == 1 { send(1u8); } else { send(2u8); } send(3u8); }").unwrap();
        let c = Code::compile(&p).unwrap();
        let ops = &c.funcs[0].ops;
        assert!(matches!(ops[1], Op::Branch { else_to: 4, .. }));
        assert!(matches!(ops[3], Op::Jump(5)));
        assert!(matches!(ops[5], Op::Send(_)));
    }

    #[test]
    fn while_layout() {
        let p = parse_program("fn client() { let i: u8 = 0; while i < 3 { i = i + 1; } }").unwrap();
        let c = Code::compile(&p).unwrap();
        let ops = &c.funcs[0].ops;
        assert!(matches!(ops[1], Op::Branch { else_to: 4, .. }));
        assert!(matches!(ops[3], Op::Jump(1)));
    }
}
