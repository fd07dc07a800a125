use alloc::collections::{BTreeMap, BTreeSet};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use super::expr::{mask, SymId, SymValue};

#[derive(Clone)]
struct Item {
    expr: SymValue,
    syms: Arc<[SymId]>,
}

/// Conjunction of width-1 constraints plus symbols bound to known values.
///
/// Bindings are equalities `sym == value` kept out of the expression list so
/// that compaction can substitute them without losing their values.
#[derive(Clone, Default)]
pub struct ConstraintSet {
    items: Vec<Item>,
    bindings: BTreeMap<SymId, (u32, u64)>,
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_exprs<I: IntoIterator<Item = SymValue>>(it: I) -> Self {
        let mut c = Self::new();
        for e in it {
            c.push(e);
        }
        c
    }

    /// Appends a boolean constraint. Trivially true constraints are dropped.
    pub fn push(&mut self, e: SymValue) {
        assert_eq!(e.width(), 1, "constraint must be boolean");
        let e = match (e.is_symbolic(), e.as_const()) {
            (false, None) => SymValue::bool(e.eval(&|_| None) == Some(1)),
            _ => e,
        };
        if e.is_true() {
            return;
        }
        let syms: Vec<SymId> = e.symbols().into_iter().collect();
        self.items.push(Item { expr: e, syms: syms.into() });
    }

    pub fn bind(&mut self, id: SymId, width: u32, value: u64) {
        self.bindings.insert(id, (width, value & mask(width)));
    }

    pub fn binding(&self, id: SymId) -> Option<u64> {
        self.bindings.get(&id).map(|b| b.1)
    }

    pub fn bindings(&self) -> impl Iterator<Item = (SymId, u32, u64)> + '_ {
        self.bindings.iter().map(|(id, (w, v))| (*id, *w, *v))
    }

    pub fn take_bindings(&mut self) -> BTreeMap<SymId, (u32, u64)> {
        core::mem::take(&mut self.bindings)
    }

    pub fn exprs(&self) -> impl Iterator<Item = &SymValue> + '_ {
        self.items.iter().map(|i| &i.expr)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty() && self.bindings.is_empty()
    }

    pub fn has_false(&self) -> bool {
        self.items.iter().any(|i| i.expr.is_false())
    }

    /// Conjunction of `self` and `other`.
    pub fn union(&self, other: &ConstraintSet) -> ConstraintSet {
        let mut out = self.clone();
        out.items.extend(other.items.iter().cloned());
        for (id, b) in &other.bindings {
            match out.bindings.get(id) {
                Some(mine) if mine.1 != b.1 => out.push(SymValue::bool(false)),
                _ => {
                    out.bindings.insert(*id, *b);
                }
            }
        }
        out
    }

    /// Symbol table: every symbol mentioned, with its width.
    pub fn symbol_table(&self) -> BTreeMap<SymId, u32> {
        let mut out = BTreeMap::new();
        for i in &self.items {
            i.expr.symbol_widths(&mut out);
        }
        for (id, (w, _)) in &self.bindings {
            out.insert(*id, *w);
        }
        out
    }

    /// Constraints transitively sharing symbols with `seeds`, plus the bindings of the reached symbols.
    pub fn slice(&self, seeds: &BTreeSet<SymId>) -> ConstraintSet {
        let mut reached: BTreeSet<SymId> = seeds.clone();
        let mut taken = alloc::vec![false; self.items.len()];
        loop {
            let mut grew = false;
            for (k, it) in self.items.iter().enumerate() {
                if taken[k] {
                    continue;
                }
                if it.syms.is_empty() || it.syms.iter().any(|s| reached.contains(s)) {
                    taken[k] = true;
                    for s in it.syms.iter() {
                        grew |= reached.insert(*s);
                    }
                }
            }
            if !grew {
                break;
            }
        }
        let mut out = ConstraintSet::new();
        for (k, it) in self.items.iter().enumerate() {
            if taken[k] {
                out.items.push(it.clone());
            }
        }
        for s in &reached {
            if let Some(b) = self.bindings.get(s) {
                out.bindings.insert(*s, *b);
            }
        }
        out
    }

    /// Replaces constraints by their residue after substituting `values`; bound symbols are recorded.
    pub fn substitute_fixed(&mut self, values: &BTreeMap<SymId, (u32, u64)>) {
        let lookup = |id: SymId| values.get(&id).map(|b| b.1);
        let old = core::mem::take(&mut self.items);
        for it in old {
            if it.syms.iter().any(|s| values.contains_key(s)) {
                self.push(it.expr.substitute_partial(&lookup));
            } else {
                self.items.push(it);
            }
        }
        for (id, b) in values {
            self.bindings.insert(*id, *b);
        }
    }
}

impl fmt::Debug for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut l = f.debug_list();
        for (id, (w, v)) in &self.bindings {
            l.entry(&format_args!("s{} = {:#x}:{}", id, v, w));
        }
        for i in &self.items {
            l.entry(&i.expr);
        }
        l.finish()
    }
}
