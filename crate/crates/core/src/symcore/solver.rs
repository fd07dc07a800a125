//! Exact bitvector satisfiability by propagation and enumeration.
//!
//! Constraints are first absorbed into per-symbol domains (known bits plus an
//! interval plus excluded values). Whatever remains is split into independent
//! components and searched depth first, lowest symbol id first and values in
//! ascending order, re-propagating after each choice.

use alloc::collections::btree_map::Entry;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use thiserror::Error;

use super::constraints::ConstraintSet;
use super::expr::{fold, mask, BinOp, Kind, SymId, SymValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SolverError {
    #[error("solver budget exceeded ({bits} bits of search)")]
    BudgetExceeded { bits: u32 },
    #[error("constraint set is unsatisfiable")]
    Unsatisfiable,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Model {
    pub values: BTreeMap<SymId, u64>,
}

impl Model {
    pub fn get(&self, id: SymId) -> Option<u64> {
        self.values.get(&id).copied()
    }

    pub fn lookup(&self) -> impl Fn(SymId) -> Option<u64> + '_ {
        move |id| self.values.get(&id).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SatResult {
    Sat(Model),
    Unsat,
}

impl SatResult {
    pub fn is_sat(&self) -> bool {
        matches!(self, SatResult::Sat(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Forced(u64),
    Free,
}

#[derive(Debug, Clone, Copy)]
pub struct Solver {
    /// Largest number of unknown bits a component may have before search is refused.
    pub bits_budget: u32,
    /// Cap on enumerated search nodes per query.
    pub node_limit: u64,
}

impl Default for Solver {
    fn default() -> Self {
        Solver { bits_budget: 64, node_limit: 1 << 21 }
    }
}

struct Conflict;

fn deposit(mut c: u64, free: u64) -> u64 {
    let mut out = 0u64;
    let mut f = free;
    while f != 0 && c != 0 {
        let bit = f & f.wrapping_neg();
        if c & 1 == 1 {
            out |= bit;
        }
        c >>= 1;
        f &= f - 1;
    }
    out
}

fn ceil_log2(n: u128) -> u32 {
    if n <= 1 {
        0
    } else {
        128 - (n - 1).leading_zeros()
    }
}

#[derive(Clone, Debug)]
struct Domain {
    width: u32,
    km: u64,
    kv: u64,
    lo: u64,
    hi: u64,
    excluded: Vec<u64>,
}

impl Domain {
    fn new(width: u32) -> Domain {
        Domain { width, km: 0, kv: 0, lo: 0, hi: mask(width), excluded: Vec::new() }
    }

    fn free(&self) -> u64 {
        !self.km & mask(self.width)
    }

    fn span(&self) -> u128 {
        1u128 << self.free().count_ones()
    }

    fn at(&self, c: u128) -> u64 {
        deposit(c as u64, self.free()) | self.kv
    }

    /// Smallest counter whose value is >= x, or `span` if none.
    fn counter_ge(&self, x: u64) -> u128 {
        let (mut lo, mut hi) = (0u128, self.span());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.at(mid) >= x {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }

    /// Largest counter whose value is <= x, or None.
    fn counter_le(&self, x: u64) -> Option<u128> {
        let c = self.counter_ge(x);
        if c < self.span() && self.at(c) == x {
            Some(c)
        } else if c == 0 {
            None
        } else {
            Some(c - 1)
        }
    }

    fn normalize(&mut self) -> Result<(), Conflict> {
        if self.lo > self.hi {
            return Err(Conflict);
        }
        let mut c = self.counter_ge(self.lo);
        loop {
            if c >= self.span() {
                return Err(Conflict);
            }
            let v = self.at(c);
            if v > self.hi {
                return Err(Conflict);
            }
            if !self.excluded.contains(&v) {
                self.lo = v;
                break;
            }
            c += 1;
        }
        let mut c = self.counter_le(self.hi).ok_or(Conflict)?;
        loop {
            let v = self.at(c);
            if v < self.lo {
                return Err(Conflict);
            }
            if !self.excluded.contains(&v) {
                self.hi = v;
                break;
            }
            if c == 0 {
                return Err(Conflict);
            }
            c -= 1;
        }
        let (lo, hi, km, kv) = (self.lo, self.hi, self.km, self.kv);
        self.excluded.retain(|v| *v >= lo && *v <= hi && v & km == kv);
        Ok(())
    }

    fn fixed(&self) -> Option<u64> {
        (self.lo == self.hi).then_some(self.lo)
    }

    fn count(&self) -> u128 {
        let a = self.counter_ge(self.lo);
        let b = match self.counter_le(self.hi) {
            Some(b) => b,
            None => return 0,
        };
        if b < a {
            return 0;
        }
        (b - a + 1).saturating_sub(self.excluded.len() as u128)
    }

    fn bits(&self) -> u32 {
        ceil_log2(self.count())
    }

    fn add_bits(&mut self, m: u64, v: u64) -> Result<(), Conflict> {
        let m = m & mask(self.width);
        let v = v & m;
        if (self.kv ^ v) & self.km & m != 0 {
            return Err(Conflict);
        }
        if self.km & m == m {
            return Ok(());
        }
        self.km |= m;
        self.kv |= v;
        self.normalize()
    }

    fn values(&self) -> DomainIter<'_> {
        DomainIter { d: self, c: self.counter_ge(self.lo) }
    }
}

struct DomainIter<'a> {
    d: &'a Domain,
    c: u128,
}

impl Iterator for DomainIter<'_> {
    type Item = u64;
    fn next(&mut self) -> Option<u64> {
        loop {
            if self.c >= self.d.span() {
                return None;
            }
            let v = self.d.at(self.c);
            if v > self.d.hi {
                return None;
            }
            self.c += 1;
            if !self.d.excluded.contains(&v) {
                return Some(v);
            }
        }
    }
}

/// Lowest bits of `m` that form a contiguous run starting at bit 0.
fn low_run(m: u64) -> u64 {
    m & !m.wrapping_add(1)
}

fn inverse_odd(o: u64) -> u64 {
    let mut inv = o;
    for _ in 0..6 {
        inv = inv.wrapping_mul(2u64.wrapping_sub(o.wrapping_mul(inv)));
    }
    inv
}

#[derive(Clone)]
struct Prop {
    domains: BTreeMap<SymId, Domain>,
    fixed: BTreeMap<SymId, u64>,
    residual: Vec<SymValue>,
    touched: Vec<SymId>,
}

impl Prop {
    fn new() -> Prop {
        Prop { domains: BTreeMap::new(), fixed: BTreeMap::new(), residual: Vec::new(), touched: Vec::new() }
    }

    fn domain(&mut self, id: SymId, width: u32) -> &mut Domain {
        self.touched.push(id);
        self.domains.entry(id).or_insert_with(|| Domain::new(width))
    }

    fn fix(&mut self, id: SymId, width: u32, v: u64) -> Result<(), Conflict> {
        let d = self.domain(id, width);
        if v < d.lo || v > d.hi || d.excluded.contains(&v) {
            return Err(Conflict);
        }
        d.add_bits(mask(width), v)
    }

    /// Fixed values plus the smallest admissible value of every other constrained symbol.
    fn assignment(&self) -> BTreeMap<SymId, u64> {
        let mut out = self.fixed.clone();
        for (id, d) in &self.domains {
            out.entry(*id).or_insert(d.lo);
        }
        out
    }

    fn propagate(&mut self, incoming: Vec<SymValue>) -> Result<(), Conflict> {
        let mut work = incoming;
        loop {
            let mut next = Vec::with_capacity(work.len());
            let fixed = &self.fixed;
            let work_now: Vec<SymValue> = if fixed.is_empty() {
                work
            } else {
                let lookup = |id: SymId| fixed.get(&id).copied();
                work.iter().map(|c| c.substitute_partial(&lookup)).collect()
            };
            for c in work_now {
                self.absorb(&c, &mut next)?;
            }
            let mut newly = false;
            let touched = core::mem::take(&mut self.touched);
            for id in touched {
                if self.fixed.contains_key(&id) {
                    continue;
                }
                if let Some(v) = self.domains[&id].fixed() {
                    self.fixed.insert(id, v);
                    newly = true;
                }
            }
            if !newly {
                self.residual = next;
                return Ok(());
            }
            work = next;
        }
    }

    fn absorb(&mut self, c: &SymValue, out: &mut Vec<SymValue>) -> Result<(), Conflict> {
        if let Some(v) = c.as_const().or_else(|| (!c.is_symbolic()).then(|| c.eval(&|_| None)).flatten()) {
            return if v == 1 { Ok(()) } else { Err(Conflict) };
        }
        match c.kind() {
            Kind::Bin(BinOp::And, x, y) => {
                self.absorb(x, out)?;
                self.absorb(y, out)
            }
            Kind::Sym(id) => self.fix(*id, 1, 1),
            Kind::Not(x) => match x.kind() {
                Kind::Sym(id) => self.fix(*id, 1, 0),
                Kind::Bin(BinOp::Eq, t, k) => match (t.kind(), k.as_const()) {
                    (Kind::Sym(id), Some(k)) => {
                        let d = self.domain(*id, t.width());
                        if !d.excluded.contains(&k) {
                            d.excluded.push(k);
                        }
                        d.normalize()
                    }
                    _ => {
                        out.push(c.clone());
                        Ok(())
                    }
                },
                _ => {
                    out.push(c.clone());
                    Ok(())
                }
            },
            Kind::Bin(BinOp::Eq, t, k) => {
                if let Some(k) = k.as_const() {
                    self.solve_bits(t, mask(t.width()), k)?;
                    if t.as_sym().is_none() {
                        out.push(c.clone());
                    }
                } else {
                    out.push(c.clone());
                }
                Ok(())
            }
            Kind::Bin(op @ (BinOp::Ult | BinOp::Ule), a, b) => {
                let strict = *op == BinOp::Ult;
                match (a.kind(), b.kind()) {
                    (Kind::Sym(id), Kind::Const(k)) => {
                        if strict && *k == 0 {
                            return Err(Conflict);
                        }
                        let hi = if strict { k - 1 } else { *k };
                        let d = self.domain(*id, a.width());
                        d.hi = d.hi.min(hi);
                        d.normalize()
                    }
                    (Kind::Const(k), Kind::Sym(id)) => {
                        if strict && *k == mask(b.width()) {
                            return Err(Conflict);
                        }
                        let lo = if strict { k + 1 } else { *k };
                        let d = self.domain(*id, b.width());
                        d.lo = d.lo.max(lo);
                        d.normalize()
                    }
                    _ => {
                        out.push(c.clone());
                        Ok(())
                    }
                }
            }
            _ => {
                out.push(c.clone());
                Ok(())
            }
        }
    }

    /// Records that the bits of `t` selected by `m` equal `v`.
    fn solve_bits(&mut self, t: &SymValue, m: u64, v: u64) -> Result<(), Conflict> {
        let w = t.width();
        let m = m & mask(w);
        let v = v & m;
        if m == 0 {
            return Ok(());
        }
        match t.kind() {
            Kind::Const(k) => {
                if (k ^ v) & m != 0 {
                    Err(Conflict)
                } else {
                    Ok(())
                }
            }
            Kind::Sym(id) => self.domain(*id, w).add_bits(m, v),
            Kind::Not(a) => self.solve_bits(a, m, !v),
            Kind::Extract(a, lo) => self.solve_bits(a, m << lo, v << lo),
            Kind::Bin(op, a, b) => {
                let kb = b.as_const();
                match (op, kb) {
                    (BinOp::Xor, Some(k)) => self.solve_bits(a, m, v ^ k),
                    (BinOp::And, Some(k)) => {
                        if v & !k != 0 {
                            return Err(Conflict);
                        }
                        self.solve_bits(a, m & k, v & k)
                    }
                    (BinOp::Or, Some(k)) => {
                        if !v & m & k != 0 {
                            return Err(Conflict);
                        }
                        self.solve_bits(a, m & !k, v & !k)
                    }
                    (BinOp::Add, Some(k)) => {
                        let low = low_run(m);
                        self.solve_bits(a, low, v.wrapping_sub(k))
                    }
                    (BinOp::Sub, None) => match a.as_const() {
                        Some(k) => {
                            let low = low_run(m);
                            self.solve_bits(b, low, k.wrapping_sub(v))
                        }
                        None => Ok(()),
                    },
                    (BinOp::Mul, Some(k)) => {
                        let tz = k.trailing_zeros().min(w);
                        if v & mask(tz) != 0 {
                            return Err(Conflict);
                        }
                        let run = low_run(m).count_ones();
                        if run > tz {
                            let o = k >> tz;
                            let bits = run - tz;
                            let target = (v >> tz).wrapping_mul(inverse_odd(o));
                            self.solve_bits(a, mask(bits), target)
                        } else {
                            Ok(())
                        }
                    }
                    (BinOp::Shl | BinOp::Shr, Some(s)) if s >= w as u64 => {
                        if v != 0 {
                            Err(Conflict)
                        } else {
                            Ok(())
                        }
                    }
                    (BinOp::Shl, Some(s)) => {
                        let s = s as u32;
                        if v & mask(s) != 0 {
                            return Err(Conflict);
                        }
                        self.solve_bits(a, m >> s, v >> s)
                    }
                    (BinOp::Shr, Some(s)) => {
                        let s = s as u32;
                        if v & !mask(w - s) != 0 {
                            return Err(Conflict);
                        }
                        self.solve_bits(a, m << s, v << s)
                    }
                    (BinOp::Concat, _) => {
                        let wl = b.width();
                        self.solve_bits(b, m & mask(wl), v & mask(wl))?;
                        self.solve_bits(a, m >> wl, v >> wl)
                    }
                    _ => Ok(()),
                }
            }
        }
    }
}

enum FOp {
    Const(u64),
    Sym,
    Not(usize, u64),
    Ext(usize, u32, u64),
    Bin(BinOp, usize, usize, u32, u32),
}

/// A set of constraints over a single symbol, compiled for fast repeated evaluation.
struct Flat {
    ops: Vec<FOp>,
    roots: Vec<usize>,
    buf: Vec<u64>,
}

impl Flat {
    fn compile(cs: &[SymValue]) -> Flat {
        fn go(v: &SymValue, ops: &mut Vec<FOp>, memo: &mut BTreeMap<usize, usize>) -> usize {
            let id = node_key(v);
            if let Some(i) = memo.get(&id) {
                return *i;
            }
            let op = match v.kind() {
                Kind::Const(c) => FOp::Const(*c),
                Kind::Sym(_) => FOp::Sym,
                Kind::Not(a) => FOp::Not(go(a, ops, memo), mask(v.width())),
                Kind::Extract(a, lo) => FOp::Ext(go(a, ops, memo), *lo, mask(v.width())),
                Kind::Bin(op, a, b) => {
                    let ia = go(a, ops, memo);
                    let ib = go(b, ops, memo);
                    FOp::Bin(*op, ia, ib, a.width(), b.width())
                }
            };
            ops.push(op);
            memo.insert(id, ops.len() - 1);
            ops.len() - 1
        }
        let mut ops = Vec::new();
        let mut memo = BTreeMap::new();
        let roots = cs.iter().map(|c| go(c, &mut ops, &mut memo)).collect();
        let n = ops.len();
        Flat { ops, roots, buf: alloc::vec![0; n] }
    }

    fn holds(&mut self, x: u64) -> bool {
        for i in 0..self.ops.len() {
            let r = match self.ops[i] {
                FOp::Const(c) => c,
                FOp::Sym => x,
                FOp::Not(a, m) => !self.buf[a] & m,
                FOp::Ext(a, lo, m) => (self.buf[a] >> lo) & m,
                FOp::Bin(op, a, b, wa, wb) => fold(op, wa, wb, self.buf[a], self.buf[b]),
            };
            self.buf[i] = r;
        }
        self.roots.iter().all(|r| self.buf[*r] == 1)
    }
}

fn node_key(v: &SymValue) -> usize {
    v.kind() as *const Kind as usize
}

struct Search<'a> {
    solver: &'a Solver,
    nodes: u64,
}

impl Search<'_> {
    fn tick(&mut self, bits: u32) -> Result<(), SolverError> {
        self.nodes += 1;
        if self.nodes > self.solver.node_limit {
            Err(SolverError::BudgetExceeded { bits })
        } else {
            Ok(())
        }
    }

    /// Finds an assignment for the symbols of `cs` given `prop`'s domains.
    fn dfs(&mut self, prop: &Prop, cs: &[SymValue], widths: &BTreeMap<SymId, u32>, bits: u32) -> Result<Option<BTreeMap<SymId, u64>>, SolverError> {
        let mut syms = BTreeSet::new();
        for c in cs {
            syms.extend(c.symbols());
        }
        if syms.is_empty() {
            return Ok(Some(prop.assignment()));
        }
        let first = *syms.iter().next().unwrap();
        let w = widths[&first];
        let dom = prop.domains.get(&first).cloned().unwrap_or_else(|| Domain::new(w));
        if syms.len() == 1 {
            let mut flat = Flat::compile(cs);
            for v in dom.values() {
                self.tick(bits)?;
                if flat.holds(v) {
                    let mut out = prop.assignment();
                    out.insert(first, v);
                    return Ok(Some(out));
                }
            }
            return Ok(None);
        }
        for v in dom.values() {
            self.tick(bits)?;
            let mut p = prop.clone();
            if p.fix(first, w, v).is_err() {
                continue;
            }
            if p.propagate(cs.to_vec()).is_err() {
                continue;
            }
            let residual = core::mem::take(&mut p.residual);
            if let Some(m) = self.dfs(&p, &residual, widths, bits)? {
                return Ok(Some(m));
            }
        }
        Ok(None)
    }
}

struct Prepared {
    prop: Prop,
    widths: BTreeMap<SymId, u32>,
}

impl Solver {
    fn prepare(&self, c: &ConstraintSet, extra: &[SymValue]) -> Option<Prepared> {
        let mut widths = c.symbol_table();
        for e in extra {
            e.symbol_widths(&mut widths);
        }
        let mut prop = Prop::new();
        for (id, w, v) in c.bindings() {
            if prop.fix(id, w, v).is_err() {
                return None;
            }
            prop.fixed.insert(id, v);
        }
        let mut all: Vec<SymValue> = c.exprs().cloned().collect();
        all.extend(extra.iter().cloned());
        if prop.propagate(all).is_err() {
            return None;
        }
        Some(Prepared { prop, widths })
    }

    /// Independent groups of residual constraints, ordered by their lowest symbol.
    fn components(residual: &[SymValue]) -> Vec<(Vec<SymValue>, BTreeSet<SymId>)> {
        let mut groups: Vec<(Vec<SymValue>, BTreeSet<SymId>)> = Vec::new();
        for c in residual {
            let syms = c.symbols();
            let mut merged = (alloc::vec![c.clone()], syms);
            let mut k = 0;
            while k < groups.len() {
                if groups[k].1.iter().any(|s| merged.1.contains(s)) {
                    let g = groups.swap_remove(k);
                    merged.0.extend(g.0);
                    merged.1.extend(g.1);
                } else {
                    k += 1;
                }
            }
            groups.push(merged);
        }
        groups.sort_by_key(|g| g.1.iter().next().copied());
        groups
    }

    fn component_bits(prep: &Prepared, syms: &BTreeSet<SymId>) -> u32 {
        syms.iter()
            .filter(|s| !prep.prop.fixed.contains_key(s))
            .map(|s| match prep.prop.domains.get(s) {
                Some(d) => d.bits(),
                None => prep.widths[s],
            })
            .sum()
    }

    fn solve_component(&self, prep: &Prepared, cs: &[SymValue], syms: &BTreeSet<SymId>) -> Result<Option<BTreeMap<SymId, u64>>, SolverError> {
        let bits = Self::component_bits(prep, syms);
        if bits > self.bits_budget {
            return Err(SolverError::BudgetExceeded { bits });
        }
        let mut search = Search { solver: self, nodes: 0 };
        search.dfs(&prep.prop, cs, &prep.widths, bits)
    }

    fn default_value(prep: &Prepared, id: SymId) -> u64 {
        match prep.prop.domains.get(&id) {
            Some(d) => d.lo,
            None => 0,
        }
    }

    fn solve_prepared(&self, prep: &Prepared) -> Result<SatResult, SolverError> {
        let mut values = BTreeMap::new();
        for (cs, syms) in Self::components(&prep.prop.residual) {
            match self.solve_component(prep, &cs, &syms)? {
                None => return Ok(SatResult::Unsat),
                Some(m) => {
                    for s in syms {
                        values.insert(s, m.get(&s).copied().unwrap_or_else(|| Self::default_value(prep, s)));
                    }
                }
            }
        }
        for id in prep.widths.keys() {
            if !values.contains_key(id) {
                let v = prep.prop.fixed.get(id).copied().unwrap_or_else(|| Self::default_value(prep, *id));
                values.insert(*id, v);
            }
        }
        Ok(SatResult::Sat(Model { values }))
    }

    pub fn check_sat(&self, c: &ConstraintSet) -> Result<SatResult, SolverError> {
        self.check_sat_with(c, &[])
    }

    /// Satisfiability of `c` conjoined with `extra`.
    pub fn check_sat_with(&self, c: &ConstraintSet, extra: &[SymValue]) -> Result<SatResult, SolverError> {
        let prep = match self.prepare(c, extra) {
            Some(p) => p,
            None => return Ok(SatResult::Unsat),
        };
        let r = self.solve_prepared(&prep)?;
        if let SatResult::Sat(m) = &r {
            debug_assert!(
                c.exprs().chain(extra.iter()).all(|e| e.eval(&m.lookup()) == Some(1)),
                "model does not satisfy constraints"
            );
        }
        Ok(r)
    }

    /// Satisfiability of `c ∧ extra` assuming `c` alone is satisfiable; only the
    /// part of `c` connected to `extra` is consulted.
    pub fn extension_sat(&self, c: &ConstraintSet, extra: &[SymValue]) -> Result<bool, SolverError> {
        let mut seeds = BTreeSet::new();
        for e in extra {
            seeds.extend(e.symbols());
        }
        let sliced = c.slice(&seeds);
        Ok(self.check_sat_with(&sliced, extra)?.is_sat())
    }

    /// Forced/Free status of each target symbol.
    pub fn concretize(&self, c: &ConstraintSet, targets: &[SymId]) -> Result<BTreeMap<SymId, Status>, SolverError> {
        let prep = self.prepare(c, &[]).ok_or(SolverError::Unsatisfiable)?;
        let comps = Self::components(&prep.prop.residual);
        let mut out = BTreeMap::new();
        let mut models: BTreeMap<usize, BTreeMap<SymId, u64>> = BTreeMap::new();
        let mut free_seen: BTreeSet<SymId> = BTreeSet::new();
        for t in targets {
            if let Some(v) = prep.prop.fixed.get(t) {
                out.insert(*t, Status::Forced(*v));
                continue;
            }
            let ci = match comps.iter().position(|g| g.1.contains(t)) {
                Some(ci) => ci,
                None => {
                    out.insert(*t, Status::Free);
                    continue;
                }
            };
            if free_seen.contains(t) {
                out.insert(*t, Status::Free);
                continue;
            }
            let (cs, syms) = &comps[ci];
            if let Entry::Vacant(e) = models.entry(ci) {
                e.insert(self.solve_component(&prep, cs, syms)?.ok_or(SolverError::Unsatisfiable)?);
            }
            let m = &models[&ci];
            let v = m.get(t).copied().unwrap_or_else(|| Self::default_value(&prep, *t));
            let w = prep.widths[t];
            let mut with = cs.clone();
            with.push(SymValue::symbol(*t, w).eq_(&SymValue::constant(w, v)).not());
            let mut p2 = prep.prop.clone();
            let alt = match p2.propagate(with) {
                Err(_) => None,
                Ok(()) => {
                    let residual = core::mem::take(&mut p2.residual);
                    let prep2 = Prepared { prop: p2, widths: prep.widths.clone() };
                    let mut all_syms = syms.clone();
                    for r in &residual {
                        all_syms.extend(r.symbols());
                    }
                    if residual.is_empty() {
                        Some(prep2.prop.assignment())
                    } else {
                        self.solve_component(&prep2, &residual, &all_syms)?
                    }
                }
            };
            match alt {
                None => {
                    out.insert(*t, Status::Forced(v));
                }
                Some(alt) => {
                    out.insert(*t, Status::Free);
                    for s in syms {
                        if let (Some(a), Some(b)) = (alt.get(s), m.get(s)) {
                            if a != b {
                                free_seen.insert(*s);
                            }
                        } else if !alt.contains_key(s) {
                            free_seen.insert(*s);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// The value `e` takes in every model of `c`, if unique.
    pub fn forced_value(&self, c: &ConstraintSet, e: &SymValue) -> Result<Option<u64>, SolverError> {
        let prep = self.prepare(c, &[]).ok_or(SolverError::Unsatisfiable)?;
        let fixed = &prep.prop.fixed;
        let e2 = e.substitute_partial(&|id| fixed.get(&id).copied());
        if let Some(v) = e2.as_const() {
            return Ok(Some(v));
        }
        let seeds = e2.symbols();
        let sliced = c.slice(&seeds);
        let m = match self.check_sat(&sliced)? {
            SatResult::Sat(m) => m,
            SatResult::Unsat => return Err(SolverError::Unsatisfiable),
        };
        let v = e2.eval(&m.lookup()).unwrap_or(0);
        let differs = e2.eq_(&SymValue::constant(e2.width(), v)).not();
        match self.check_sat_with(&sliced, &[differs])? {
            SatResult::Unsat => Ok(Some(v)),
            SatResult::Sat(_) => Ok(None),
        }
    }

    /// Symbols fixed by propagation alone (cheap, sound, not complete).
    pub fn propagated(&self, c: &ConstraintSet) -> Result<BTreeMap<SymId, u64>, SolverError> {
        let prep = self.prepare(c, &[]).ok_or(SolverError::Unsatisfiable)?;
        Ok(prep.prop.fixed)
    }

    /// Constraints left after propagation, with fixed symbols substituted.
    pub fn residual(&self, c: &ConstraintSet) -> Result<(BTreeMap<SymId, u64>, Vec<SymValue>), SolverError> {
        let prep = self.prepare(c, &[]).ok_or(SolverError::Unsatisfiable)?;
        let mut residual = prep.prop.residual;
        for (id, d) in &prep.prop.domains {
            if prep.prop.fixed.contains_key(id) {
                continue;
            }
            let w = d.width;
            let s = SymValue::symbol(*id, w);
            if d.km != 0 {
                residual.push(s.and(&SymValue::constant(w, d.km)).eq_(&SymValue::constant(w, d.kv)));
            }
            if d.lo > 0 {
                residual.push(SymValue::constant(w, d.lo).ule(&s));
            }
            if d.hi < mask(w) {
                residual.push(s.ule(&SymValue::constant(w, d.hi)));
            }
            for x in &d.excluded {
                residual.push(s.ne_(&SymValue::constant(w, *x)));
            }
        }
        Ok((prep.prop.fixed, residual))
    }

    /// True iff `a` and `b` give every listed symbol the same Forced/Free status.
    pub fn equisatisfiable_concretization(&self, a: &ConstraintSet, b: &ConstraintSet, symbols: &[SymId]) -> Result<bool, SolverError> {
        Ok(self.concretize(a, symbols)? == self.concretize(b, symbols)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(id: SymId, w: u32) -> SymValue {
        SymValue::symbol(id, w)
    }
    fn k(w: u32, v: u64) -> SymValue {
        SymValue::constant(w, v)
    }

    #[test]
    fn xor_inverse() {
        let c = ConstraintSet::from_exprs([s(0, 16).xor(&k(16, 0x2343)).eq_(&k(16, 0x9DAC))]);
        match Solver::default().check_sat(&c).unwrap() {
            SatResult::Sat(m) => assert_eq!(m.get(0), Some(0xBEEF)),
            SatResult::Unsat => panic!(),
        }
    }

    #[test]
    fn factor_constraint() {
        let (x, y) = (s(0, 16), s(1, 16));
        let c = ConstraintSet::from_exprs([
            x.mul(&y).eq_(&k(16, 0xBEEF)),
            x.urem(&k(16, 2)).eq_(&k(16, 1)),
            y.and(&k(16, 1)).eq_(&k(16, 1)),
        ]);
        let solver = Solver::default();
        let m = match solver.check_sat(&c).unwrap() {
            SatResult::Sat(m) => m,
            SatResult::Unsat => panic!(),
        };
        let (mx, my) = (m.get(0).unwrap(), m.get(1).unwrap());
        assert_eq!(mx.wrapping_mul(my) & 0xffff, 0xBEEF);
        assert_eq!(mx & 1, 1);
        let mut with = c.clone();
        with.push(x.eq_(&k(16, 0x9)));
        with.push(y.eq_(&k(16, 0x1537)));
        assert!(solver.check_sat(&with).unwrap().is_sat());
    }

    #[test]
    fn contradiction() {
        let x = s(0, 8);
        let c = ConstraintSet::from_exprs([x.and(&k(8, 1)).eq_(&k(8, 0)), x.and(&k(8, 1)).eq_(&k(8, 1))]);
        assert_eq!(Solver::default().check_sat(&c).unwrap(), SatResult::Unsat);
    }

    #[test]
    fn concretize_examples() {
        let solver = Solver::default();
        let iv = s(0, 16);
        let c = ConstraintSet::from_exprs([iv.eq_(&k(16, 0x1234))]);
        assert_eq!(solver.concretize(&c, &[0]).unwrap()[&0], Status::Forced(0x1234));
        let empty = ConstraintSet::new();
        assert_eq!(solver.concretize(&empty, &[0]).unwrap()[&0], Status::Free);
        let (x, y) = (s(0, 16), s(1, 16));
        let c = ConstraintSet::from_exprs([x.mul(&y).eq_(&k(16, 0xBEEF)), x.urem(&k(16, 2)).eq_(&k(16, 1))]);
        let odd_factors = (0u64..0x10000).filter(|x| x & 1 == 1).filter(|x| (0u64..0x10000).any(|y| (x * y) & 0xffff == 0xBEEF)).take(2).count();
        assert!(odd_factors >= 2);
        assert_eq!(solver.concretize(&c, &[0]).unwrap()[&0], Status::Free);
    }

    #[test]
    fn equisat_examples() {
        let solver = Solver::default();
        let a = ConstraintSet::from_exprs([s(0, 16).eq_(&k(16, 0x1234))]);
        assert!(solver.equisatisfiable_concretization(&a, &a, &[0]).unwrap());
        assert!(!solver.equisatisfiable_concretization(&ConstraintSet::new(), &a, &[0]).unwrap());
    }

    #[test]
    fn budget_exceeded_is_distinct() {
        let (a, b, c) = (s(0, 32), s(1, 32), s(2, 32));
        let cs = ConstraintSet::from_exprs([a.mul(&b).mul(&c).eq_(&k(32, 77))]);
        assert!(matches!(Solver::default().check_sat(&cs), Err(SolverError::BudgetExceeded { .. })));
    }

    #[test]
    fn intervals_and_exclusions() {
        let x = s(0, 8);
        let c = ConstraintSet::from_exprs([x.ult(&k(8, 10)), k(8, 7).ult(&x), x.ne_(&k(8, 8))]);
        let st = Solver::default().concretize(&c, &[0]).unwrap();
        assert_eq!(st[&0], Status::Forced(9));
    }

    #[test]
    fn domain_counting() {
        let mut d = Domain::new(8);
        d.add_bits(1, 1).ok().unwrap();
        assert_eq!(d.count(), 128);
        d.hi = 10;
        d.normalize().ok().unwrap();
        assert_eq!(d.hi, 9);
        assert_eq!(d.values().collect::<Vec<_>>(), alloc::vec![1, 3, 5, 7, 9]);
    }
}
