use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt::Write;

use thiserror::Error;

use super::registry::{Concrete, InputLayout, OutputShape, ProhibitiveEntry, Trigger};
use super::whitelist::Whitelist;
use crate::symcore::{ConstraintSet, SatResult, SolverError, SymId, SymValue};
use crate::symvm::{Callee, ExecState, InstrId, Op, SkippedCall, Value, Vm, VmError, VmEvent};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LazyError {
    #[error("lazy generator contradicts the path constraints")]
    GeneratorContradiction,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assumption {
    pub function: Arc<str>,
    pub inputs: Vec<SymId>,
    pub outputs: Vec<Option<u64>>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("assumption about `{function}` is not whitelisted: {text}")]
pub struct WhitelistViolation {
    pub function: Arc<str>,
    pub text: String,
}

fn to_concrete(v: &Value, vals: &[u64]) -> Concrete {
    match v {
        Value::Scalar(s) => Concrete::Scalar { width: s.width(), value: vals[0] },
        Value::Buffer(_) => Concrete::Bytes(vals.iter().map(|x| *x as u8).collect()),
    }
}

fn output_value(shape: OutputShape, out: &Concrete) -> Value {
    match shape {
        OutputShape::Scalar(w) => Value::Scalar(SymValue::constant(w, out.scalar())),
        OutputShape::Bytes(_) => Value::concrete_bytes(&out.to_bytes()),
    }
}

/// Values every model of `c` gives to `parts`, or `None` if any part is free.
pub fn forced_parts(vm: &Vm, c: &ConstraintSet, parts: &[SymValue]) -> Result<Option<Vec<u64>>, SolverError> {
    if let Some(v) = parts.iter().map(|p| p.as_const()).collect::<Option<Vec<u64>>>() {
        return Ok(Some(v));
    }
    let mut seeds = BTreeSet::new();
    for p in parts {
        seeds.extend(p.symbols());
    }
    let sliced = c.slice(&seeds);
    let fixed = vm.solver.propagated(&sliced)?;
    let lookup = |id: SymId| fixed.get(&id).copied().or_else(|| sliced.binding(id));
    let mut out = Vec::with_capacity(parts.len());
    for p in parts {
        let q = p.substitute_partial(&lookup);
        match q.as_const() {
            Some(v) => out.push(v),
            None => match vm.solver.forced_value(&sliced, &q)? {
                Some(v) => out.push(v),
                None => return Ok(None),
            },
        }
    }
    Ok(Some(out))
}

fn check_layout(entry: &ProhibitiveEntry, args: &[Value]) -> Result<(), VmError> {
    let bad = |index| VmError::LengthMismatch { name: String::from(&*entry.name), index };
    if args.len() != entry.inputs.len() {
        return Err(bad(args.len()));
    }
    for (k, (l, a)) in entry.inputs.iter().zip(args).enumerate() {
        let ok = match (l, a) {
            (InputLayout::Scalar(w), Value::Scalar(s)) => s.width() == *w,
            (InputLayout::Buf(n), Value::Buffer(b)) => b.len() == *n as usize,
            (InputLayout::AnyBuf, Value::Buffer(_)) => true,
            _ => false,
        };
        if !ok {
            return Err(bad(k));
        }
    }
    Ok(())
}

/// Executes the prohibitive call at the program counter, running it concretely
/// when its inputs are known under `cons ∧ saved` and skipping it otherwise.
pub fn exec_step_prohibitive(vm: &Vm, st: &mut ExecState, saved: &ConstraintSet, on_event: &mut dyn FnMut(VmEvent)) -> Result<(), VmError> {
    let site = st.pc().ok_or(VmError::WrongInstruction("prohibitive call"))?;
    let (name, arg_exprs, dest) = match vm.code.op(site) {
        Some(Op::Call { callee: Callee::Prohibitive(n), args, dest }) => (n.clone(), args, *dest),
        _ => return Err(VmError::WrongInstruction("prohibitive call")),
    };
    let entry = vm.registry.get(&name).cloned().ok_or_else(|| VmError::UnknownProhibitive(String::from(&*name)))?;
    let mut args = Vec::new();
    for (k, a) in arg_exprs.iter().enumerate() {
        let hint = match entry.inputs.get(k) {
            Some(InputLayout::Scalar(w)) => Some(*w),
            _ => None,
        };
        let (v, g) = vm.eval_value(st, a, hint)?;
        for c in g {
            st.cons.push(c);
        }
        args.push(v);
    }
    check_layout(&entry, &args)?;
    let lens: Vec<u32> = args.iter().map(|a| a.parts().len() as u32 * if let Value::Scalar(s) = a { s.width() / 8 } else { 1 }).collect();
    let shape = entry.output_shape(&lens).ok_or_else(|| VmError::LengthMismatch { name: String::from(&*name), index: 0 })?;
    let label: String = match dest {
        Some(d) => vm.code.funcs[site.func as usize].slots[d as usize].name.clone(),
        None => String::from(&*name),
    };
    let (count, width) = match shape {
        OutputShape::Scalar(w) => (1, w),
        OutputShape::Bytes(n) => (n, 8),
    };
    // output ids are reserved whether or not the call runs, so every pass allocates the same ids
    let first = st.alloc_symbols(count, width, &label);
    let ids: Vec<SymId> = (first..first + count).collect();
    let ordinal = st.prohibitive_ordinal;
    st.prohibitive_ordinal += 1;

    let mut computed: Option<(Concrete, bool)> = None;
    if let Some(key) = vm.registry.injection(&name) {
        if let Some(bytes) = vm.metadata_value(key, st.io_index) {
            if bytes.len() != shape.byte_len() as usize {
                return Err(VmError::InjectionLength { name: String::from(&*name), expected: shape.byte_len() as usize, found: bytes.len() });
            }
            let out = match shape {
                OutputShape::Scalar(w) => Concrete::Scalar { width: w, value: bytes.iter().fold(0u64, |a, b| (a << 8) | *b as u64) },
                OutputShape::Bytes(_) => Concrete::Bytes(bytes.to_vec()),
            };
            on_event(VmEvent::Injected { name: name.clone(), site });
            computed = Some((out, false));
        }
    }
    if computed.is_none() {
        let per_arg: Vec<Vec<SymValue>> = args.iter().map(|a| a.parts()).collect();
        let all: Vec<SymValue> = per_arg.iter().flatten().cloned().collect();
        let mut known = all.iter().map(|p| p.as_const()).collect::<Option<Vec<u64>>>().map(|v| (v, false));
        if known.is_none() && !saved.is_empty() {
            let c = st.cons.union(saved);
            if let Ok(Some(v)) = forced_parts(vm, &c, &all) {
                known = Some((v, true));
            }
        }
        if let Some((vals, dependent)) = known {
            if dependent {
                for (p, v) in all.iter().zip(&vals) {
                    if p.is_symbolic() {
                        st.cons.push(p.eq_(&SymValue::constant(p.width(), *v)));
                    }
                }
                st.saved_dependent = true;
            }
            let mut cargs = Vec::new();
            let mut at = 0;
            for (a, parts) in args.iter().zip(&per_arg) {
                cargs.push(to_concrete(a, &vals[at..at + parts.len()]));
                at += parts.len();
            }
            computed = Some(((entry.implementation)(&cargs), dependent));
        }
    }
    let output = match computed {
        Some((out, dependent)) => {
            let v = output_value(shape, &out);
            for (id, part) in ids.iter().zip(v.parts()) {
                st.cons.bind(*id, width, part.as_const().unwrap());
            }
            on_event(VmEvent::Executed { name: name.clone(), site, output: out, saved_dependent: dependent });
            v
        }
        None => {
            let v = match shape {
                OutputShape::Scalar(w) => Value::Scalar(SymValue::symbol(first, w)),
                OutputShape::Bytes(n) => Value::bytes((first..first + n).map(|id| SymValue::symbol(id, 8)).collect()),
            };
            st.skipped.push(SkippedCall { name: name.clone(), args, output: v.clone(), output_syms: ids, site, io_index: st.io_index, ordinal });
            on_event(VmEvent::Skipped { name: name.clone(), site });
            v
        }
    };
    if let Some(d) = dest {
        st.frames.last_mut().unwrap().slots[d as usize] = Some(output);
    }
    st.frames.last_mut().unwrap().pc += 1;
    Ok(())
}

fn scalar_or_bytes(v: &Value, vals: &[u64]) -> Concrete {
    to_concrete(v, vals)
}

/// Appends inverse-derived constraints for skipped calls whose trigger values are
/// forced under `c`. Returns how many generators fired.
pub fn fire_lazy_generators(vm: &Vm, skipped: &[SkippedCall], c: &mut ConstraintSet) -> Result<usize, LazyError> {
    let mut fired: BTreeSet<usize> = BTreeSet::new();
    loop {
        let mut progress = false;
        for (k, call) in skipped.iter().enumerate() {
            if fired.contains(&k) {
                continue;
            }
            let entry = match vm.registry.get(&call.name) {
                Some(e) => e,
                None => continue,
            };
            let gen = match &entry.lazy {
                Some(g) => g,
                None => continue,
            };
            let mut args: Vec<Option<Concrete>> = alloc::vec![None; call.args.len()];
            let mut output = None;
            let mut ready = true;
            for t in &gen.trigger {
                let v = match t {
                    Trigger::Arg(i) => call.args.get(*i),
                    Trigger::Output => Some(&call.output),
                };
                let v = match v {
                    Some(v) => v,
                    None => {
                        ready = false;
                        break;
                    }
                };
                match forced_parts(vm, c, &v.parts())? {
                    Some(vals) => {
                        let cv = scalar_or_bytes(v, &vals);
                        match t {
                            Trigger::Arg(i) => args[*i] = Some(cv),
                            Trigger::Output => output = Some(cv),
                        }
                    }
                    None => {
                        ready = false;
                        break;
                    }
                }
            }
            if !ready {
                continue;
            }
            let output = match output {
                Some(o) => o,
                None => continue,
            };
            fired.insert(k);
            let solved = match (gen.inverse)(&args, &output) {
                Some(s) => s,
                None => return Err(LazyError::GeneratorContradiction),
            };
            let target = match call.args.get(gen.solves) {
                Some(t) => t,
                None => continue,
            };
            let parts = target.parts();
            let bytes = solved.to_bytes();
            let eqs: Vec<SymValue> = match target {
                Value::Scalar(s) => alloc::vec![s.eq_(&SymValue::constant(s.width(), solved.scalar()))],
                Value::Buffer(_) => parts.iter().zip(&bytes).map(|(p, b)| p.eq_(&SymValue::constant(8, *b as u64))).collect(),
            };
            if !vm.solver.extension_sat(c, &eqs)? {
                return Err(LazyError::GeneratorContradiction);
            }
            for e in eqs {
                c.push(e);
            }
            progress = true;
        }
        if !progress {
            return Ok(fired.len());
        }
    }
}

/// Runs skipped calls whose inputs became forced under `c`; fails if an output contradicts.
/// Returns the calls that remain skipped.
pub fn late_concretize(vm: &Vm, skipped: &[SkippedCall], c: &mut ConstraintSet) -> Result<Vec<SkippedCall>, LazyError> {
    let mut remaining = Vec::new();
    for call in skipped {
        let entry = match vm.registry.get(&call.name) {
            Some(e) => e,
            None => {
                remaining.push(call.clone());
                continue;
            }
        };
        let mut cargs = Vec::new();
        let mut all_known = true;
        for a in &call.args {
            match forced_parts(vm, c, &a.parts())? {
                Some(v) => cargs.push(to_concrete(a, &v)),
                None => {
                    all_known = false;
                    break;
                }
            }
        }
        if !all_known {
            remaining.push(call.clone());
            continue;
        }
        let out = (entry.implementation)(&cargs);
        let bytes = out.to_bytes();
        let eqs: Vec<SymValue> = match &call.output {
            Value::Scalar(s) => alloc::vec![s.eq_(&SymValue::constant(s.width(), out.scalar()))],
            Value::Buffer(b) => b.iter().zip(&bytes).map(|(p, x)| p.eq_(&SymValue::constant(8, *x as u64))).collect(),
        };
        for e in eqs {
            c.push(e);
        }
        if !matches!(vm.solver.check_sat(c)?, SatResult::Sat(_)) {
            return Err(LazyError::GeneratorContradiction);
        }
    }
    Ok(remaining)
}

fn render_value(vm: &Vm, c: &ConstraintSet, v: &Value, labels: &dyn Fn(SymId) -> Option<String>) -> (String, Vec<Option<u64>>) {
    let parts = v.parts();
    let known: Vec<Option<u64>> = parts.iter().map(|p| p.as_const().or_else(|| vm.solver.forced_value(c, p).ok().flatten())).collect();
    let mut s = String::new();
    if known.iter().all(|k| k.is_some()) {
        s.push_str("0x");
        match v {
            Value::Scalar(x) => {
                let digits = (x.width() as usize).div_ceil(4);
                let _ = write!(s, "{:0width$x}", known[0].unwrap(), width = digits);
            }
            Value::Buffer(_) => {
                for k in &known {
                    let _ = write!(s, "{:02x}", k.unwrap());
                }
            }
        }
    } else {
        let mut names: BTreeMap<String, ()> = BTreeMap::new();
        let mut syms = BTreeSet::new();
        for p in &parts {
            syms.extend(p.symbols());
        }
        for id in syms {
            let l = labels(id).unwrap_or_else(|| alloc::format!("s{}", id));
            let base = String::from(l.split('[').next().unwrap_or(&l));
            names.insert(base, ());
        }
        let joined: Vec<String> = names.into_keys().collect();
        s.push_str(&joined.join(","));
    }
    (s, known)
}

/// One assumption per call left skipped; every assumption must be whitelisted.
pub fn collect_assumptions(
    vm: &Vm,
    skipped: &[SkippedCall],
    c: &ConstraintSet,
    whitelist: &Whitelist,
    labels: &dyn Fn(SymId) -> Option<String>,
) -> Result<Vec<Assumption>, WhitelistViolation> {
    let mut out = Vec::new();
    for call in skipped {
        let entry = vm.registry.get(&call.name);
        let mut ins = Vec::new();
        let mut input_ids = Vec::new();
        for a in &call.args {
            ins.push(render_value(vm, c, a, labels).0);
            for p in a.parts() {
                input_ids.extend(p.symbols());
            }
        }
        let (out_text, outputs) = render_value(vm, c, &call.output, labels);
        let template = whitelist
            .template(&call.name, call.args.len())
            .map(String::from)
            .or_else(|| entry.and_then(|e| e.assume.clone()))
            .unwrap_or_else(|| alloc::format!("exists inputs: {}(...) = {{out}}", call.name));
        let mut text = template.replace("{out}", &out_text);
        for (k, s) in ins.iter().enumerate() {
            text = text.replace(&alloc::format!("{{in{}}}", k), s);
        }
        input_ids.sort_unstable();
        input_ids.dedup();
        let a = Assumption { function: call.name.clone(), inputs: input_ids, outputs, text };
        if !whitelist.permits(&a, call.args.len()) {
            return Err(WhitelistViolation { function: call.name.clone(), text: a.text });
        }
        out.push(a);
    }
    Ok(out)
}

/// Sites whose skipped calls belong to message `io_index`.
pub fn skipped_sites(skipped: &[SkippedCall], io_index: usize) -> Vec<(InstrId, u32)> {
    skipped.iter().filter(|s| s.io_index == io_index).map(|s| (s.site, s.ordinal)).collect()
}
