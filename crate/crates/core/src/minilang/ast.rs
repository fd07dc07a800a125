use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, Default)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

// Positions are diagnostics only; structural comparison ignores them.
impl PartialEq for Pos {
    fn eq(&self, _: &Pos) -> bool {
        true
    }
}
impl Eq for Pos {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Type {
    U8,
    U16,
    U32,
    Buf(u32),
}

impl Type {
    pub fn scalar_width(self) -> Option<u32> {
        match self {
            Type::U8 => Some(8),
            Type::U16 => Some(16),
            Type::U32 => Some(32),
            Type::Buf(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Mod,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Eq,
    Ne,
    Lt,
    Le,
}

impl BinaryOp {
    pub fn token(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Mod => "%",
            BinaryOp::And => "&",
            BinaryOp::Or => "|",
            BinaryOp::Xor => "^",
            BinaryOp::Shl => "<<",
            BinaryOp::Shr => ">>",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Le)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExprKind {
    /// Literal; without a width suffix it adopts the width of the other operand.
    Lit { value: u64, width: Option<u32> },
    Var(String),
    Index(String, Box<Expr>),
    Not(Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    /// `concat(high, low)`
    Concat(Box<Expr>, Box<Expr>),
    /// `extract(e, lo, hi)`: bits lo..=hi
    Extract(Box<Expr>, u32, u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expr {
    pub kind: ExprKind,
    pub pos: Pos,
}

impl Expr {
    pub fn new(kind: ExprKind, pos: Pos) -> Expr {
        Expr { kind, pos }
    }

    pub fn lit(value: u64, width: Option<u32>) -> Expr {
        Expr::new(ExprKind::Lit { value, width }, Pos::default())
    }

    pub fn var(name: &str) -> Expr {
        Expr::new(ExprKind::Var(name.into()), Pos::default())
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
        Expr::new(ExprKind::Binary(op, Box::new(a), Box::new(b)), Pos::default())
    }

    /// Calls `f` on every variable name read by the expression.
    pub fn visit_names(&self, f: &mut dyn FnMut(&str)) {
        match &self.kind {
            ExprKind::Lit { .. } => {}
            ExprKind::Var(n) => f(n),
            ExprKind::Index(n, i) => {
                f(n);
                i.visit_names(f);
            }
            ExprKind::Not(a) | ExprKind::Extract(a, _, _) => a.visit_names(f),
            ExprKind::Binary(_, a, b) | ExprKind::Concat(a, b) => {
                a.visit_names(f);
                b.visit_names(f);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallDest {
    pub name: String,
    /// `let name (: ty)? = f(..)` rather than `name = f(..)`
    pub declare: bool,
    pub ty: Option<Type>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Let { name: String, ty: Option<Type>, value: Expr, pos: Pos },
    Assign { name: String, value: Expr, pos: Pos },
    Store { name: String, index: Expr, value: Expr, pos: Pos },
    If { cond: Expr, then_block: Vec<Stmt>, else_block: Vec<Stmt>, pos: Pos },
    While { cond: Expr, body: Vec<Stmt>, pos: Pos },
    Send { args: Vec<Expr>, pos: Pos },
    Recv { dest: String, pos: Pos },
    Call { name: String, args: Vec<Expr>, dest: Option<CallDest>, pos: Pos },
    Return { value: Option<Expr>, pos: Pos },
}

impl Stmt {
    pub fn pos(&self) -> Pos {
        match self {
            Stmt::Let { pos, .. }
            | Stmt::Assign { pos, .. }
            | Stmt::Store { pos, .. }
            | Stmt::If { pos, .. }
            | Stmt::While { pos, .. }
            | Stmt::Send { pos, .. }
            | Stmt::Recv { pos, .. }
            | Stmt::Call { pos, .. }
            | Stmt::Return { pos, .. } => *pos,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub ty: Type,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDef {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub functions: Vec<FunctionDef>,
    pub entry: String,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| f.name == name)
    }
}

/// Walks statements depth-first.
pub fn walk_stmts<'a>(stmts: &'a [Stmt], f: &mut dyn FnMut(&'a Stmt)) {
    for s in stmts {
        f(s);
        match s {
            Stmt::If { then_block, else_block, .. } => {
                walk_stmts(then_block, f);
                walk_stmts(else_block, f);
            }
            Stmt::While { body, .. } => walk_stmts(body, f),
            _ => {}
        }
    }
}

pub const BUILTINS: &[(&str, usize)] = &[("sym_input", 1), ("sym_bytes", 1), ("zeros", 1), ("slice", 3)];

pub fn builtin_arity(name: &str) -> Option<usize> {
    BUILTINS.iter().find(|b| b.0 == name).map(|b| b.1)
}
