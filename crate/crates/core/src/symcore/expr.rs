//! Fixed-width bitvector expressions.
//!
//! Nodes are reference counted and immutable, so a value copied between
//! variables or states shares its whole subtree. Every constructor simplifies
//! locally, which keeps constant subtrees folded at all times.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::sync::Arc;
use core::cmp::Ordering;
use core::fmt;

use thiserror::Error;

pub type SymId = u32;

pub const MAX_WIDTH: u32 = 64;

/// All-ones mask of the given width.
#[inline]
pub fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Urem,
    Eq,
    Ne,
    Ult,
    Ule,
    Concat,
}

impl BinOp {
    pub fn is_commutative(self) -> bool {
        matches!(self, BinOp::Add | BinOp::Mul | BinOp::And | BinOp::Or | BinOp::Xor | BinOp::Eq | BinOp::Ne)
    }

    pub fn is_predicate(self) -> bool {
        matches!(self, BinOp::Eq | BinOp::Ne | BinOp::Ult | BinOp::Ule)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::And => "&",
            BinOp::Or => "|",
            BinOp::Xor => "^",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
            BinOp::Urem => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Ult => "<",
            BinOp::Ule => "<=",
            BinOp::Concat => "++",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 16
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("operand widths differ for {op:?}: {left} vs {right}")]
    WidthMismatch { op: BinOp, left: u32, right: u32 },
    #[error("width {0} outside 1..=64")]
    BadWidth(u32),
    #[error("extract [{lo}, {lo}+{width}) out of range for width {arg}")]
    BadExtract { lo: u32, width: u32, arg: u32 },
    #[error("symbol s{0} has no value")]
    MissingSymbol(SymId),
}

#[derive(Debug)]
pub enum Kind {
    Const(u64),
    Sym(SymId),
    Not(SymValue),
    Bin(BinOp, SymValue, SymValue),
    /// `width` bits starting at `lo` (the node width) of the argument.
    Extract(SymValue, u32),
}

#[derive(Debug)]
struct Node {
    kind: Kind,
    width: u32,
    hash: u64,
    symbolic: bool,
}

/// Shared handle to an expression node.
#[derive(Clone)]
pub struct SymValue(Arc<Node>);

fn mix(a: u64, b: u64) -> u64 {
    let mut x = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x ^= x >> 31;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 29;
    x
}

fn node_hash(kind: &Kind, width: u32) -> u64 {
    let base = mix(0x51_7cc1_b727_220a, width as u64);
    match kind {
        Kind::Const(v) => mix(mix(base, 1), *v),
        Kind::Sym(id) => mix(mix(base, 2), *id as u64),
        Kind::Not(a) => mix(mix(base, 3), a.hash()),
        Kind::Bin(op, a, b) => mix(mix(mix(base, op.tag()), a.hash()), b.hash()),
        Kind::Extract(a, lo) => mix(mix(mix(base, 4), a.hash()), *lo as u64),
    }
}

impl SymValue {
    fn make(kind: Kind, width: u32) -> SymValue {
        let symbolic = match &kind {
            Kind::Const(_) => false,
            Kind::Sym(_) => true,
            Kind::Not(a) | Kind::Extract(a, _) => a.is_symbolic(),
            Kind::Bin(_, a, b) => a.is_symbolic() || b.is_symbolic(),
        };
        let hash = node_hash(&kind, width);
        SymValue(Arc::new(Node { kind, width, hash, symbolic }))
    }

    /// A constant; the value is truncated to `width` bits.
    pub fn constant(width: u32, value: u64) -> SymValue {
        assert!((1..=MAX_WIDTH).contains(&width), "bad width {width}");
        Self::make(Kind::Const(value & mask(width)), width)
    }

    pub fn symbol(id: SymId, width: u32) -> SymValue {
        assert!((1..=MAX_WIDTH).contains(&width), "bad width {width}");
        Self::make(Kind::Sym(id), width)
    }

    pub fn bool(b: bool) -> SymValue {
        Self::constant(1, b as u64)
    }

    pub fn tru() -> SymValue {
        Self::bool(true)
    }

    pub fn kind(&self) -> &Kind {
        &self.0.kind
    }

    pub fn width(&self) -> u32 {
        self.0.width
    }

    pub fn hash(&self) -> u64 {
        self.0.hash
    }

    pub fn is_symbolic(&self) -> bool {
        self.0.symbolic
    }

    pub fn is_concrete(&self) -> bool {
        !self.0.symbolic
    }

    pub fn as_const(&self) -> Option<u64> {
        match self.0.kind {
            Kind::Const(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_sym(&self) -> Option<SymId> {
        match self.0.kind {
            Kind::Sym(id) => Some(id),
            _ => None,
        }
    }

    pub fn is_true(&self) -> bool {
        self.width() == 1 && self.as_const() == Some(1)
    }

    pub fn is_false(&self) -> bool {
        self.width() == 1 && self.as_const() == Some(0)
    }

    pub fn ptr_eq(&self, other: &SymValue) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    fn addr(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    // ---- constructors ----

    pub fn not(&self) -> SymValue {
        let w = self.width();
        match self.kind() {
            Kind::Const(v) => return SymValue::constant(w, !v),
            Kind::Not(a) => return a.clone(),
            Kind::Bin(BinOp::Ult, a, b) if w == 1 => return mk_bin(BinOp::Ule, b.clone(), a.clone()),
            Kind::Bin(BinOp::Ule, a, b) if w == 1 => return mk_bin(BinOp::Ult, b.clone(), a.clone()),
            _ => {}
        }
        Self::make(Kind::Not(self.clone()), w)
    }

    pub fn binary(op: BinOp, a: &SymValue, b: &SymValue) -> Result<SymValue, ExprError> {
        let (wa, wb) = (a.width(), b.width());
        if op == BinOp::Concat {
            if wa + wb > MAX_WIDTH {
                return Err(ExprError::BadWidth(wa + wb));
            }
        } else if wa != wb {
            return Err(ExprError::WidthMismatch { op, left: wa, right: wb });
        }
        Ok(mk_bin(op, a.clone(), b.clone()))
    }

    /// `width` bits of `self` starting at bit `lo`.
    pub fn extract(&self, lo: u32, width: u32) -> Result<SymValue, ExprError> {
        if width == 0 || lo + width > self.width() {
            return Err(ExprError::BadExtract { lo, width, arg: self.width() });
        }
        Ok(mk_extract(self.clone(), lo, width))
    }

    /// Zero-extends or truncates to `width`.
    pub fn resize(&self, width: u32) -> SymValue {
        let w = self.width();
        match width.cmp(&w) {
            Ordering::Equal => self.clone(),
            Ordering::Less => mk_extract(self.clone(), 0, width),
            Ordering::Greater => mk_bin(BinOp::Concat, SymValue::constant(width - w, 0), self.clone()),
        }
    }

    pub fn add(&self, o: &SymValue) -> SymValue {
        Self::binary(BinOp::Add, self, o).expect("width")
    }
    pub fn sub(&self, o: &SymValue) -> SymValue {
        Self::binary(BinOp::Sub, self, o).expect("width")
    }
    pub fn mul(&self, o: &SymValue) -> SymValue {
        Self::binary(BinOp::Mul, self, o).expect("width")
    }
    pub fn and(&self, o: &SymValue) -> SymValue {
        Self::binary(BinOp::And, self, o).expect("width")
    }
    pub fn or(&self, o: &SymValue) -> SymValue {
        Self::binary(BinOp::Or, self, o).expect("width")
    }
    pub fn xor(&self, o: &SymValue) -> SymValue {
        Self::binary(BinOp::Xor, self, o).expect("width")
    }
    pub fn urem(&self, o: &SymValue) -> SymValue {
        Self::binary(BinOp::Urem, self, o).expect("width")
    }
    pub fn eq_(&self, o: &SymValue) -> SymValue {
        Self::binary(BinOp::Eq, self, o).expect("width")
    }
    pub fn ne_(&self, o: &SymValue) -> SymValue {
        Self::binary(BinOp::Ne, self, o).expect("width")
    }
    pub fn ult(&self, o: &SymValue) -> SymValue {
        Self::binary(BinOp::Ult, self, o).expect("width")
    }
    pub fn ule(&self, o: &SymValue) -> SymValue {
        Self::binary(BinOp::Ule, self, o).expect("width")
    }
    pub fn concat(&self, low: &SymValue) -> SymValue {
        Self::binary(BinOp::Concat, self, low).expect("width")
    }

    // ---- traversal ----

    /// Symbol ids occurring in the expression.
    pub fn symbols(&self) -> BTreeSet<SymId> {
        let mut out = BTreeSet::new();
        let mut seen = BTreeSet::new();
        self.collect_symbols(&mut out, &mut seen);
        out
    }

    pub(crate) fn collect_symbols(&self, out: &mut BTreeSet<SymId>, seen: &mut BTreeSet<usize>) {
        if !self.is_symbolic() || !seen.insert(self.addr()) {
            return;
        }
        match self.kind() {
            Kind::Const(_) => {}
            Kind::Sym(id) => {
                out.insert(*id);
            }
            Kind::Not(a) | Kind::Extract(a, _) => a.collect_symbols(out, seen),
            Kind::Bin(_, a, b) => {
                a.collect_symbols(out, seen);
                b.collect_symbols(out, seen);
            }
        }
    }

    /// Symbols with their widths.
    pub fn symbol_widths(&self, out: &mut BTreeMap<SymId, u32>) {
        let mut seen = BTreeSet::new();
        self.collect_widths(out, &mut seen);
    }

    fn collect_widths(&self, out: &mut BTreeMap<SymId, u32>, seen: &mut BTreeSet<usize>) {
        if !self.is_symbolic() || !seen.insert(self.addr()) {
            return;
        }
        match self.kind() {
            Kind::Const(_) => {}
            Kind::Sym(id) => {
                out.insert(*id, self.width());
            }
            Kind::Not(a) | Kind::Extract(a, _) => a.collect_widths(out, seen),
            Kind::Bin(_, a, b) => {
                a.collect_widths(out, seen);
                b.collect_widths(out, seen);
            }
        }
    }

    /// Evaluates under a total assignment; `None` if a symbol is unassigned.
    pub fn eval(&self, lookup: &dyn Fn(SymId) -> Option<u64>) -> Option<u64> {
        let mut memo = BTreeMap::new();
        self.eval_memo(lookup, &mut memo)
    }

    fn eval_memo(&self, lookup: &dyn Fn(SymId) -> Option<u64>, memo: &mut BTreeMap<usize, u64>) -> Option<u64> {
        let w = self.width();
        match self.kind() {
            Kind::Const(v) => Some(*v),
            Kind::Sym(id) => lookup(*id).map(|v| v & mask(w)),
            _ => {
                if let Some(v) = memo.get(&self.addr()) {
                    return Some(*v);
                }
                let v = match self.kind() {
                    Kind::Not(a) => !a.eval_memo(lookup, memo)? & mask(w),
                    Kind::Extract(a, lo) => (a.eval_memo(lookup, memo)? >> lo) & mask(w),
                    Kind::Bin(op, a, b) => {
                        let x = a.eval_memo(lookup, memo)?;
                        let y = b.eval_memo(lookup, memo)?;
                        fold(*op, a.width(), b.width(), x, y)
                    }
                    _ => unreachable!(),
                };
                memo.insert(self.addr(), v);
                Some(v)
            }
        }
    }

    /// Replaces assigned symbols by constants, re-simplifying along the way.
    pub fn substitute_partial(&self, lookup: &dyn Fn(SymId) -> Option<u64>) -> SymValue {
        let mut memo = BTreeMap::new();
        self.subst_memo(lookup, &mut memo)
    }

    /// Full substitution; fails if any symbol is unassigned.
    pub fn substitute(&self, lookup: &dyn Fn(SymId) -> Option<u64>) -> Result<SymValue, ExprError> {
        let out = self.substitute_partial(lookup);
        match out.symbols().into_iter().next() {
            Some(id) => Err(ExprError::MissingSymbol(id)),
            None => Ok(out),
        }
    }

    fn subst_memo(&self, lookup: &dyn Fn(SymId) -> Option<u64>, memo: &mut BTreeMap<usize, SymValue>) -> SymValue {
        if !self.is_symbolic() {
            return match self.as_const() {
                Some(_) => self.clone(),
                None => SymValue::constant(self.width(), self.eval(&|_| None).expect("ground")),
            };
        }
        if let Some(v) = memo.get(&self.addr()) {
            return v.clone();
        }
        let out = match self.kind() {
            Kind::Const(_) => self.clone(),
            Kind::Sym(id) => match lookup(*id) {
                Some(v) => SymValue::constant(self.width(), v),
                None => self.clone(),
            },
            Kind::Not(a) => {
                let na = a.subst_memo(lookup, memo);
                if na.ptr_eq(a) {
                    self.clone()
                } else {
                    na.not()
                }
            }
            Kind::Extract(a, lo) => {
                let na = a.subst_memo(lookup, memo);
                if na.ptr_eq(a) {
                    self.clone()
                } else {
                    mk_extract(na, *lo, self.width())
                }
            }
            Kind::Bin(op, a, b) => {
                let na = a.subst_memo(lookup, memo);
                let nb = b.subst_memo(lookup, memo);
                if na.ptr_eq(a) && nb.ptr_eq(b) {
                    self.clone()
                } else {
                    mk_bin(*op, na, nb)
                }
            }
        };
        memo.insert(self.addr(), out.clone());
        out
    }

    /// Rewrites `self` with `f` applied to each symbol; `f` returns a replacement of equal width.
    pub fn map_symbols(&self, f: &dyn Fn(SymId, u32) -> Option<SymValue>) -> SymValue {
        let mut memo = BTreeMap::new();
        self.map_memo(f, &mut memo)
    }

    fn map_memo(&self, f: &dyn Fn(SymId, u32) -> Option<SymValue>, memo: &mut BTreeMap<usize, SymValue>) -> SymValue {
        if !self.is_symbolic() {
            return self.clone();
        }
        if let Some(v) = memo.get(&self.addr()) {
            return v.clone();
        }
        let out = match self.kind() {
            Kind::Const(_) => self.clone(),
            Kind::Sym(id) => f(*id, self.width()).unwrap_or_else(|| self.clone()),
            Kind::Not(a) => a.map_memo(f, memo).not(),
            Kind::Extract(a, lo) => mk_extract(a.map_memo(f, memo), *lo, self.width()),
            Kind::Bin(op, a, b) => mk_bin(*op, a.map_memo(f, memo), b.map_memo(f, memo)),
        };
        memo.insert(self.addr(), out.clone());
        out
    }

    /// Number of distinct nodes in the DAG.
    pub fn dag_size(&self) -> usize {
        fn walk(v: &SymValue, seen: &mut BTreeSet<usize>) {
            if !seen.insert(v.addr()) {
                return;
            }
            match v.kind() {
                Kind::Const(_) | Kind::Sym(_) => {}
                Kind::Not(a) | Kind::Extract(a, _) => walk(a, seen),
                Kind::Bin(_, a, b) => {
                    walk(a, seen);
                    walk(b, seen);
                }
            }
        }
        let mut seen = BTreeSet::new();
        walk(self, &mut seen);
        seen.len()
    }
}

impl PartialEq for SymValue {
    fn eq(&self, other: &SymValue) -> bool {
        if self.ptr_eq(other) {
            return true;
        }
        if self.hash() != other.hash() || self.width() != other.width() {
            return false;
        }
        match (self.kind(), other.kind()) {
            (Kind::Const(a), Kind::Const(b)) => a == b,
            (Kind::Sym(a), Kind::Sym(b)) => a == b,
            (Kind::Not(a), Kind::Not(b)) => a == b,
            (Kind::Extract(a, la), Kind::Extract(b, lb)) => la == lb && a == b,
            (Kind::Bin(oa, a1, a2), Kind::Bin(ob, b1, b2)) => oa == ob && a1 == b1 && a2 == b2,
            _ => false,
        }
    }
}

impl Eq for SymValue {}

impl core::hash::Hash for SymValue {
    fn hash<H: core::hash::Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.hash);
    }
}

/// Evaluates a binary operator on concrete operands of widths `wa`, `wb`.
pub fn fold(op: BinOp, wa: u32, wb: u32, x: u64, y: u64) -> u64 {
    let m = mask(wa);
    match op {
        BinOp::Add => x.wrapping_add(y) & m,
        BinOp::Sub => x.wrapping_sub(y) & m,
        BinOp::Mul => x.wrapping_mul(y) & m,
        BinOp::And => x & y,
        BinOp::Or => x | y,
        BinOp::Xor => x ^ y,
        BinOp::Shl => {
            if y >= wa as u64 {
                0
            } else {
                (x << y) & m
            }
        }
        BinOp::Shr => {
            if y >= wa as u64 {
                0
            } else {
                x >> y
            }
        }
        BinOp::Urem => {
            if y == 0 {
                x
            } else {
                x % y
            }
        }
        BinOp::Eq => (x == y) as u64,
        BinOp::Ne => (x != y) as u64,
        BinOp::Ult => (x < y) as u64,
        BinOp::Ule => (x <= y) as u64,
        BinOp::Concat => {
            if wb >= 64 {
                y
            } else {
                (x << wb) | y
            }
        }
    }
}

fn result_width(op: BinOp, wa: u32, wb: u32) -> u32 {
    if op.is_predicate() {
        1
    } else if op == BinOp::Concat {
        wa + wb
    } else {
        wa
    }
}

fn canonical_less(a: &SymValue, b: &SymValue) -> bool {
    (a.hash(), a.width()) < (b.hash(), b.width())
}

fn mk_raw(op: BinOp, a: SymValue, b: SymValue) -> SymValue {
    let w = result_width(op, a.width(), b.width());
    SymValue::make(Kind::Bin(op, a, b), w)
}

fn as_bin(v: &SymValue, want: BinOp) -> Option<(&SymValue, u64)> {
    match v.kind() {
        Kind::Bin(op, x, c) if *op == want => c.as_const().map(|k| (x, k)),
        _ => None,
    }
}

/// Local simplification of a binary node; operand widths are already valid.
fn mk_bin(op: BinOp, a: SymValue, b: SymValue) -> SymValue {
    let (wa, wb) = (a.width(), b.width());
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        return SymValue::constant(result_width(op, wa, wb), fold(op, wa, wb, x, y));
    }
    let (a, b) = if op.is_commutative() && (a.as_const().is_some() || (b.as_const().is_none() && canonical_less(&b, &a))) {
        (b, a)
    } else {
        (a, b)
    };
    let w = wa;
    let m = mask(w);
    let kb = b.as_const();
    match op {
        BinOp::Add => {
            if kb == Some(0) {
                return a;
            }
            if let (Some((x, c1)), Some(c2)) = (as_bin(&a, BinOp::Add), kb) {
                return mk_bin(BinOp::Add, x.clone(), SymValue::constant(w, c1.wrapping_add(c2)));
            }
        }
        BinOp::Sub => {
            if kb == Some(0) {
                return a;
            }
            if a == b {
                return SymValue::constant(w, 0);
            }
            if let Some(c) = kb {
                return mk_bin(BinOp::Add, a, SymValue::constant(w, c.wrapping_neg()));
            }
        }
        BinOp::Mul => {
            if kb == Some(0) {
                return SymValue::constant(w, 0);
            }
            if kb == Some(1) {
                return a;
            }
            if let (Some((x, c1)), Some(c2)) = (as_bin(&a, BinOp::Mul), kb) {
                return mk_bin(BinOp::Mul, x.clone(), SymValue::constant(w, c1.wrapping_mul(c2)));
            }
        }
        BinOp::And => {
            if kb == Some(0) {
                return SymValue::constant(w, 0);
            }
            if kb == Some(m) || a == b {
                return a;
            }
            if let (Some((x, c1)), Some(c2)) = (as_bin(&a, BinOp::And), kb) {
                return mk_bin(BinOp::And, x.clone(), SymValue::constant(w, c1 & c2));
            }
        }
        BinOp::Or => {
            if kb == Some(0) || a == b {
                return a;
            }
            if kb == Some(m) {
                return SymValue::constant(w, m);
            }
            if let (Some((x, c1)), Some(c2)) = (as_bin(&a, BinOp::Or), kb) {
                return mk_bin(BinOp::Or, x.clone(), SymValue::constant(w, c1 | c2));
            }
        }
        BinOp::Xor => {
            if kb == Some(0) {
                return a;
            }
            if a == b {
                return SymValue::constant(w, 0);
            }
            if w == 1 && kb == Some(1) {
                return a.not();
            }
            if let (Some((x, c1)), Some(c2)) = (as_bin(&a, BinOp::Xor), kb) {
                return mk_bin(BinOp::Xor, x.clone(), SymValue::constant(w, c1 ^ c2));
            }
        }
        BinOp::Shl | BinOp::Shr => {
            if kb == Some(0) || a.as_const() == Some(0) {
                return a;
            }
            if let Some(s) = kb {
                if s >= w as u64 {
                    return SymValue::constant(w, 0);
                }
            }
        }
        BinOp::Urem => {
            if kb == Some(0) {
                return a;
            }
            if kb == Some(1) {
                return SymValue::constant(w, 0);
            }
            if let Some(k) = kb {
                if k.is_power_of_two() {
                    return mk_bin(BinOp::And, a, SymValue::constant(w, k - 1));
                }
            }
        }
        BinOp::Eq => {
            if a == b {
                return SymValue::tru();
            }
            if let Some(c) = kb {
                if w == 1 {
                    return if c == 1 { a } else { a.not() };
                }
                if let Some((x, k)) = as_bin(&a, BinOp::Xor) {
                    return mk_bin(BinOp::Eq, x.clone(), SymValue::constant(w, c ^ k));
                }
                if let Some((x, k)) = as_bin(&a, BinOp::Add) {
                    return mk_bin(BinOp::Eq, x.clone(), SymValue::constant(w, c.wrapping_sub(k)));
                }
                match a.kind() {
                    Kind::Not(x) => return mk_bin(BinOp::Eq, x.clone(), SymValue::constant(w, !c)),
                    Kind::Bin(BinOp::Concat, h, l) => {
                        let wl = l.width();
                        let lo = mk_bin(BinOp::Eq, l.clone(), SymValue::constant(wl, c));
                        let hi = mk_bin(BinOp::Eq, h.clone(), SymValue::constant(h.width(), c >> wl));
                        return mk_bin(BinOp::And, hi, lo);
                    }
                    _ => {}
                }
            }
        }
        BinOp::Ne => return mk_bin(BinOp::Eq, a, b).not(),
        BinOp::Ult => {
            if a == b || kb == Some(0) || a.as_const() == Some(m) {
                return SymValue::bool(false);
            }
            if a.as_const() == Some(0) {
                return mk_bin(BinOp::Eq, b, SymValue::constant(w, 0)).not();
            }
            if kb == Some(1) {
                return mk_bin(BinOp::Eq, a, SymValue::constant(w, 0));
            }
            if let (Some(c), Some(x)) = (kb, zero_extended(&a)) {
                return if c > mask(x.width()) { SymValue::tru() } else { mk_bin(BinOp::Ult, x.clone(), SymValue::constant(x.width(), c)) };
            }
            if let (Some(c), Some(x)) = (a.as_const(), zero_extended(&b)) {
                return if c >= mask(x.width()) { SymValue::bool(false) } else { mk_bin(BinOp::Ult, SymValue::constant(x.width(), c), x.clone()) };
            }
        }
        BinOp::Ule => {
            if a == b || kb == Some(m) || a.as_const() == Some(0) {
                return SymValue::tru();
            }
            if kb == Some(0) {
                return mk_bin(BinOp::Eq, a, SymValue::constant(w, 0));
            }
            if let (Some(c), Some(x)) = (kb, zero_extended(&a)) {
                return if c >= mask(x.width()) { SymValue::tru() } else { mk_bin(BinOp::Ule, x.clone(), SymValue::constant(x.width(), c)) };
            }
            if let (Some(c), Some(x)) = (a.as_const(), zero_extended(&b)) {
                return if c > mask(x.width()) { SymValue::bool(false) } else { mk_bin(BinOp::Ule, SymValue::constant(x.width(), c), x.clone()) };
            }
        }
        BinOp::Concat => {
            if let (Kind::Extract(x, lo_h), Kind::Extract(y, lo_l)) = (a.kind(), b.kind()) {
                if x == y && *lo_h == lo_l + wb {
                    return mk_extract(x.clone(), *lo_l, wa + wb);
                }
            }
        }
    }
    mk_raw(op, a, b)
}

fn zero_extended(v: &SymValue) -> Option<&SymValue> {
    match v.kind() {
        Kind::Bin(BinOp::Concat, h, l) if h.as_const() == Some(0) => Some(l),
        _ => None,
    }
}

fn mk_extract(a: SymValue, lo: u32, width: u32) -> SymValue {
    let wa = a.width();
    if lo == 0 && width == wa {
        return a;
    }
    match a.kind() {
        Kind::Const(v) => return SymValue::constant(width, v >> lo),
        Kind::Extract(x, lo2) => return mk_extract(x.clone(), lo + lo2, width),
        Kind::Not(x) => return mk_extract(x.clone(), lo, width).not(),
        Kind::Bin(BinOp::Concat, h, l) => {
            let wl = l.width();
            if lo + width <= wl {
                return mk_extract(l.clone(), lo, width);
            }
            if lo >= wl {
                return mk_extract(h.clone(), lo - wl, width);
            }
            let high = mk_extract(h.clone(), 0, lo + width - wl);
            let low = mk_extract(l.clone(), lo, wl - lo);
            return mk_bin(BinOp::Concat, high, low);
        }
        Kind::Bin(op @ (BinOp::And | BinOp::Or | BinOp::Xor), x, y) => {
            return mk_bin(*op, mk_extract(x.clone(), lo, width), mk_extract(y.clone(), lo, width));
        }
        Kind::Bin(op @ (BinOp::Add | BinOp::Sub | BinOp::Mul), x, y) if lo == 0 => {
            return mk_bin(*op, mk_extract(x.clone(), 0, width), mk_extract(y.clone(), 0, width));
        }
        Kind::Bin(BinOp::Shl, x, s) => {
            if let Some(s) = s.as_const() {
                let s = s as u32;
                if lo >= s {
                    return mk_extract(x.clone(), lo - s, width);
                }
                if lo + width <= s {
                    return SymValue::constant(width, 0);
                }
            }
        }
        Kind::Bin(BinOp::Shr, x, s) => {
            if let Some(s) = s.as_const() {
                let s = s as u32;
                if lo + s + width <= wa {
                    return mk_extract(x.clone(), lo + s, width);
                }
                if lo + s >= wa {
                    return SymValue::constant(width, 0);
                }
            }
        }
        _ => {}
    }
    SymValue::make(Kind::Extract(a, lo), width)
}

/// Rebuilds `v` bottom-up through the simplifying constructors.
pub fn simplify(v: &SymValue) -> SymValue {
    fn go(v: &SymValue, memo: &mut BTreeMap<usize, SymValue>) -> SymValue {
        if let Some(r) = memo.get(&v.addr()) {
            return r.clone();
        }
        let out = match v.kind() {
            Kind::Const(_) | Kind::Sym(_) => v.clone(),
            Kind::Not(a) => go(a, memo).not(),
            Kind::Extract(a, lo) => mk_extract(go(a, memo), *lo, v.width()),
            Kind::Bin(op, a, b) => mk_bin(*op, go(a, memo), go(b, memo)),
        };
        memo.insert(v.addr(), out.clone());
        out
    }
    go(v, &mut BTreeMap::new())
}

/// Builds a node without simplification. Used to test `simplify`.
pub fn raw_binary(op: BinOp, a: &SymValue, b: &SymValue) -> Result<SymValue, ExprError> {
    let (wa, wb) = (a.width(), b.width());
    if op == BinOp::Concat {
        if wa + wb > MAX_WIDTH {
            return Err(ExprError::BadWidth(wa + wb));
        }
    } else if wa != wb {
        return Err(ExprError::WidthMismatch { op, left: wa, right: wb });
    }
    Ok(mk_raw(op, a.clone(), b.clone()))
}

pub fn raw_not(a: &SymValue) -> SymValue {
    SymValue::make(Kind::Not(a.clone()), a.width())
}

pub fn raw_extract(a: &SymValue, lo: u32, width: u32) -> Result<SymValue, ExprError> {
    if width == 0 || lo + width > a.width() {
        return Err(ExprError::BadExtract { lo, width, arg: a.width() });
    }
    Ok(SymValue::make(Kind::Extract(a.clone(), lo), width))
}

impl fmt::Display for SymValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind() {
            Kind::Const(v) => write!(f, "{:#x}:{}", v, self.width()),
            Kind::Sym(id) => write!(f, "s{}", id),
            Kind::Not(a) => write!(f, "~({})", a),
            Kind::Extract(a, lo) => write!(f, "({})[{}+:{}]", a, lo, self.width()),
            Kind::Bin(op, a, b) => write!(f, "({} {} {})", a, op.symbol(), b),
        }
    }
}

impl fmt::Debug for SymValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(w: u32, v: u64) -> SymValue {
        SymValue::constant(w, v)
    }

    #[test]
    fn constant_fold() {
        assert_eq!(c(16, 3).mul(&c(16, 5)).as_const(), Some(15));
        assert_eq!(c(8, 200).add(&c(8, 100)).as_const(), Some(44));
        assert_eq!(c(8, 7).urem(&c(8, 0)).as_const(), Some(7));
    }

    #[test]
    fn self_inverse_xor() {
        let a = SymValue::symbol(1, 16);
        assert_eq!(a.xor(&a).as_const(), Some(0));
        assert_eq!(a.and(&c(16, 0)).as_const(), Some(0));
        assert!(a.xor(&c(16, 0)).ptr_eq(&a));
    }

    #[test]
    fn xor_with_constant_keeps_shape() {
        let a = SymValue::symbol(1, 16);
        let v = c(16, 0x2343).xor(&a);
        match v.kind() {
            Kind::Bin(BinOp::Xor, x, k) => {
                assert_eq!(x.as_sym(), Some(1));
                assert_eq!(k.as_const(), Some(0x2343));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn concat_of_adjacent_extracts_reassembles() {
        let a = SymValue::symbol(3, 16);
        let hi = a.extract(8, 8).unwrap();
        let lo = a.extract(0, 8).unwrap();
        assert!(hi.concat(&lo).ptr_eq(&a));
    }

    #[test]
    fn eq_on_concat_splits() {
        let a = SymValue::symbol(0, 8);
        let b = SymValue::symbol(1, 8);
        let e = a.concat(&b).eq_(&c(16, 0x1234));
        assert_eq!(e.eval(&|id| Some(if id == 0 { 0x12 } else { 0x34 })), Some(1));
        assert_eq!(e.eval(&|_| Some(0x12)), Some(0));
    }

    #[test]
    fn substitute_examples() {
        let x = SymValue::symbol(0, 16);
        let y = SymValue::symbol(1, 16);
        let e = x.xor(&c(16, 0x2343));
        assert_eq!(e.substitute(&|_| Some(0xBEEF)).unwrap().as_const(), Some(0x9DAC));
        let p = x.mul(&y);
        let r = p.substitute(&|id| Some(if id == 0 { 0x9 } else { 0x1537 })).unwrap();
        assert_eq!(r.as_const(), Some(0xBEEF));
        assert_eq!(SymValue::symbol(5, 8).substitute(&|_| Some(7)).unwrap().as_const(), Some(7));
        assert_eq!(p.substitute(&|id| if id == 0 { Some(1) } else { None }), Err(ExprError::MissingSymbol(1)));
    }

    #[test]
    fn width_mismatch_rejected() {
        let r = SymValue::binary(BinOp::Add, &c(8, 1), &c(16, 1));
        assert!(matches!(r, Err(ExprError::WidthMismatch { .. })));
    }

    #[test]
    fn sharing_keeps_dag_linear() {
        let mut v = SymValue::symbol(0, 32);
        for _ in 0..200 {
            v = v.mul(&v).add(&v);
        }
        assert!(v.dag_size() < 1000);
        assert!(v.eval(&|_| Some(3)).is_some());
    }
}
