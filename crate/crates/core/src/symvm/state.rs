use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use super::code::InstrId;
use crate::symcore::{ConstraintSet, SymId, SymValue};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Scalar(SymValue),
    Buffer(Arc<Vec<SymValue>>),
}

impl Value {
    pub fn bytes(bytes: Vec<SymValue>) -> Value {
        Value::Buffer(Arc::new(bytes))
    }

    pub fn concrete_bytes(bytes: &[u8]) -> Value {
        Value::bytes(bytes.iter().map(|b| SymValue::constant(8, *b as u64)).collect())
    }

    pub fn is_concrete(&self) -> bool {
        match self {
            Value::Scalar(v) => v.is_concrete(),
            Value::Buffer(b) => b.iter().all(|v| v.is_concrete()),
        }
    }

    /// Scalar expressions making up the value (one per buffer byte).
    pub fn parts(&self) -> Vec<SymValue> {
        match self {
            Value::Scalar(v) => alloc::vec![v.clone()],
            Value::Buffer(b) => b.as_ref().clone(),
        }
    }

    pub fn map(&self, f: &dyn Fn(&SymValue) -> SymValue) -> Value {
        match self {
            Value::Scalar(v) => Value::Scalar(f(v)),
            Value::Buffer(b) => Value::bytes(b.iter().map(f).collect()),
        }
    }

    /// Big-endian byte serialization; scalars must be whole bytes wide.
    pub fn serialize(&self) -> Option<Vec<SymValue>> {
        match self {
            Value::Buffer(b) => Some(b.as_ref().clone()),
            Value::Scalar(v) => {
                let w = v.width();
                if w % 8 != 0 {
                    return None;
                }
                Some((0..w / 8).rev().map(|k| v.extract(k * 8, 8).expect("in range")).collect())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub func: u32,
    pub pc: u32,
    pub slots: Vec<Option<Value>>,
    /// Slot in the caller receiving the return value.
    pub ret_slot: Option<u32>,
}

/// Allocation record of a run of symbols; kept as a shared list so clones are cheap.
#[derive(Debug)]
pub struct SymAlloc {
    pub first: SymId,
    pub count: u32,
    pub width: u32,
    pub label: Arc<str>,
    prev: Option<Arc<SymAlloc>>,
}

#[derive(Debug, Clone, Default)]
pub struct SymTable(Option<Arc<SymAlloc>>);

impl SymTable {
    pub fn push(&mut self, first: SymId, count: u32, width: u32, label: Arc<str>) {
        let prev = self.0.take();
        self.0 = Some(Arc::new(SymAlloc { first, count, width, label, prev }));
    }

    pub fn lookup(&self, id: SymId) -> Option<(&str, u32, u32)> {
        let mut cur = self.0.as_deref();
        while let Some(a) = cur {
            if id >= a.first && id < a.first + a.count {
                return Some((&a.label, id - a.first, a.width));
            }
            cur = a.prev.as_deref();
        }
        None
    }

    /// All allocations, oldest first.
    pub fn allocations(&self) -> Vec<(SymId, u32, u32, Arc<str>)> {
        let mut out = Vec::new();
        let mut cur = self.0.as_deref();
        while let Some(a) = cur {
            out.push((a.first, a.count, a.width, a.label.clone()));
            cur = a.prev.as_deref();
        }
        out.reverse();
        out
    }

    /// Symbol ids whose label is exactly `label`.
    pub fn ids_labelled(&self, label: &str) -> Vec<SymId> {
        let mut out = Vec::new();
        for (first, count, _, l) in self.allocations() {
            if &*l == label {
                out.extend(first..first + count);
            }
        }
        out
    }
}

/// A prohibitive call whose outputs were left symbolic.
#[derive(Debug, Clone)]
pub struct SkippedCall {
    pub name: Arc<str>,
    pub args: Vec<Value>,
    pub output: Value,
    pub output_syms: Vec<SymId>,
    pub site: InstrId,
    /// Index of the network message being verified when the call ran.
    pub io_index: usize,
    /// Position among prohibitive calls executed since the message root.
    pub ordinal: u32,
}

/// Branch outcomes (concrete and symbolic) since the message root.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trail {
    bits: Vec<u64>,
    len: u32,
}

impl Trail {
    pub fn push(&mut self, taken: bool) {
        let (w, b) = ((self.len / 64) as usize, self.len % 64);
        if w == self.bits.len() {
            self.bits.push(0);
        }
        if taken {
            self.bits[w] |= 1 << b;
        }
        self.len += 1;
    }

    pub fn get(&self, k: u32) -> Option<bool> {
        (k < self.len).then(|| self.bits[(k / 64) as usize] >> (k % 64) & 1 == 1)
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Branch decisions to follow when re-executing a message fragment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayPlan {
    pub decisions: BTreeMap<u32, bool>,
}

#[derive(Debug, Clone)]
pub struct ExecState {
    pub frames: Vec<Frame>,
    pub cons: ConstraintSet,
    pub io_index: usize,
    pub steps: u64,
    pub next_sym: SymId,
    pub branch_ordinal: u32,
    pub prohibitive_ordinal: u32,
    pub skipped: Vec<SkippedCall>,
    pub symbols: SymTable,
    pub trail: Trail,
    pub replay: Option<Arc<ReplayPlan>>,
    /// Set when a prohibitive call ran concretely only thanks to saved constraints.
    pub saved_dependent: bool,
}

impl ExecState {
    pub fn is_halted(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn pc(&self) -> Option<InstrId> {
        self.frames.last().map(|f| InstrId { func: f.func, pc: f.pc })
    }

    pub fn alloc_symbols(&mut self, count: u32, width: u32, label: &str) -> SymId {
        let first = self.next_sym;
        self.next_sym += count;
        self.symbols.push(first, count, width, Arc::from(label));
        first
    }

    pub fn symbol_label(&self, id: SymId) -> Option<String> {
        self.symbols.lookup(id).map(|(l, k, _)| if k == 0 { String::from(l) } else { alloc::format!("{}[{}]", l, k) })
    }

    /// Resets per-message counters; called when a state becomes a message root.
    pub fn start_message(&mut self) {
        self.branch_ordinal = 0;
        self.prohibitive_ordinal = 0;
        self.trail = Trail::default();
        self.replay = None;
        self.saved_dependent = false;
    }

    /// Skipped calls made while verifying the current message.
    pub fn skipped_now(&self) -> impl Iterator<Item = &SkippedCall> + '_ {
        let n = self.io_index;
        self.skipped.iter().filter(move |s| s.io_index == n)
    }

    /// Rewrites every stored expression through `f`.
    pub fn map_values(&mut self, f: &dyn Fn(&SymValue) -> SymValue) {
        for fr in &mut self.frames {
            for v in fr.slots.iter_mut().flatten() {
                *v = v.map(f);
            }
        }
        for s in &mut self.skipped {
            s.args = s.args.iter().map(|a| a.map(f)).collect();
            s.output = s.output.map(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trail_bits() {
        let mut t = Trail::default();
        for k in 0..130 {
            t.push(k % 3 == 0);
        }
        assert_eq!(t.len(), 130);
        assert_eq!(t.get(0), Some(true));
        assert_eq!(t.get(64), Some(false));
        assert_eq!(t.get(129), Some(true));
        assert_eq!(t.get(130), None);
    }

    #[test]
    fn symbol_labels() {
        let mut tab = SymTable::default();
        tab.push(0, 1, 16, Arc::from("x"));
        tab.push(1, 4, 8, Arc::from("buf"));
        assert_eq!(tab.lookup(0), Some(("x", 0, 16)));
        assert_eq!(tab.lookup(3), Some(("buf", 2, 8)));
        assert_eq!(tab.lookup(5), None);
        assert_eq!(tab.ids_labelled("buf"), [1, 2, 3, 4]);
    }
}
