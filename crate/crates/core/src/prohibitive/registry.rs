use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use super::toy;
use crate::minilang::CallResolver;

/// A concrete argument or result of a prohibitive function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Concrete {
    Scalar { width: u32, value: u64 },
    Bytes(Vec<u8>),
}

impl Concrete {
    pub fn scalar(&self) -> u64 {
        match self {
            Concrete::Scalar { value, .. } => *value,
            Concrete::Bytes(b) => b.iter().fold(0u64, |acc, x| (acc << 8) | *x as u64),
        }
    }

    /// Big-endian bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Concrete::Bytes(b) => b.clone(),
            Concrete::Scalar { width, value } => (0..width / 8).rev().map(|k| (value >> (k * 8)) as u8).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputLayout {
    Scalar(u32),
    Buf(u32),
    AnyBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputRule {
    Scalar(u32),
    Bytes(u32),
    /// Same byte length as the given input.
    SameLenAs(usize),
}

/// Shape of an output once input lengths are known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputShape {
    Scalar(u32),
    Bytes(u32),
}

impl OutputShape {
    pub fn byte_len(self) -> u32 {
        match self {
            OutputShape::Scalar(w) => w / 8,
            OutputShape::Bytes(n) => n,
        }
    }
}

pub type Implementation = fn(&[Concrete]) -> Concrete;

/// Recovers the input at `solves` from the trigger values.
pub type Inverse = fn(args: &[Option<Concrete>], output: &Concrete) -> Option<Concrete>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    Arg(usize),
    Output,
}

#[derive(Clone)]
pub struct LazyGenerator {
    pub id: String,
    pub trigger: Vec<Trigger>,
    pub solves: usize,
    pub inverse: Inverse,
}

impl fmt::Debug for LazyGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LazyGenerator").field("id", &self.id).field("trigger", &self.trigger).field("solves", &self.solves).finish()
    }
}

#[derive(Clone)]
pub struct ProhibitiveEntry {
    pub name: Arc<str>,
    pub inputs: Vec<InputLayout>,
    pub output: OutputRule,
    pub impl_id: String,
    pub implementation: Implementation,
    pub lazy: Option<LazyGenerator>,
    /// Template with `{inK}` and `{out}` holes.
    pub assume: Option<String>,
    pub test_only: bool,
}

impl fmt::Debug for ProhibitiveEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProhibitiveEntry")
            .field("name", &self.name)
            .field("inputs", &self.inputs)
            .field("output", &self.output)
            .field("impl", &self.impl_id)
            .field("lazy", &self.lazy)
            .finish()
    }
}

impl ProhibitiveEntry {
    /// Output shape given the byte lengths of the actual arguments.
    pub fn output_shape(&self, arg_lens: &[u32]) -> Option<OutputShape> {
        match self.output {
            OutputRule::Scalar(w) => Some(OutputShape::Scalar(w)),
            OutputRule::Bytes(n) => Some(OutputShape::Bytes(n)),
            OutputRule::SameLenAs(k) => arg_lens.get(k).map(|n| OutputShape::Bytes(*n)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown builtin implementation `{id}`")]
    UnknownImpl { line: usize, id: String },
    #[error("line {line}: `{name}` already has an injection point")]
    DuplicateInjection { line: usize, name: String },
}

#[derive(Debug, Clone, Default)]
pub struct ProhibitiveRegistry {
    entries: BTreeMap<String, Arc<ProhibitiveEntry>>,
    injections: BTreeMap<String, String>,
}

impl CallResolver for ProhibitiveRegistry {
    fn arity(&self, name: &str) -> Option<usize> {
        self.entries.get(name).map(|e| e.inputs.len())
    }
}

fn imp_toyblock(a: &[Concrete]) -> Concrete {
    Concrete::Scalar { width: 16, value: toy::toyblock(a[0].scalar() as u16, a[1].scalar() as u16) as u64 }
}
fn imp_toyblock_dec(a: &[Concrete]) -> Concrete {
    Concrete::Scalar { width: 16, value: toy::toyblock_inverse(a[0].scalar() as u16, a[1].scalar() as u16) as u64 }
}
fn imp_toyhash(a: &[Concrete]) -> Concrete {
    Concrete::Scalar { width: 32, value: toy::toyhash(&a[0].to_bytes()) as u64 }
}
fn imp_toydh(a: &[Concrete]) -> Concrete {
    Concrete::Scalar { width: 16, value: toy::toydh(a[0].scalar() as u16) as u64 }
}
fn imp_toymac(a: &[Concrete]) -> Concrete {
    Concrete::Scalar { width: 32, value: toy::toymac(a[0].scalar() as u16, &a[1].to_bytes()) as u64 }
}
fn imp_papercipher(a: &[Concrete]) -> Concrete {
    Concrete::Scalar { width: 16, value: toy::papercipher(a[0].scalar() as u16) as u64 }
}
fn imp_master(a: &[Concrete]) -> Concrete {
    Concrete::Scalar { width: 16, value: toy::master(a[0].scalar() as u16) as u64 }
}
fn imp_keystream(a: &[Concrete]) -> Concrete {
    // n bytes of TOYBLOCK counter-mode keystream: key, counter, n-byte template
    let key = a[0].scalar() as u16;
    let ctr = a[1].scalar() as u16;
    let n = a[2].to_bytes().len();
    let mut out = Vec::with_capacity(n);
    let mut k = 0u16;
    while out.len() < n {
        let block = toy::toyblock(key, ctr.wrapping_add(k));
        out.extend_from_slice(&block.to_be_bytes());
        k += 1;
    }
    out.truncate(n);
    Concrete::Bytes(out)
}

fn inv_toyblock(args: &[Option<Concrete>], out: &Concrete) -> Option<Concrete> {
    let key = args.first()?.as_ref()?.scalar() as u16;
    Some(Concrete::Scalar { width: 16, value: toy::toyblock_inverse(key, out.scalar() as u16) as u64 })
}

pub fn builtin_impl(id: &str) -> Option<Implementation> {
    Some(match id {
        "toyblock" => imp_toyblock,
        "toyblock_dec" => imp_toyblock_dec,
        "toyhash" => imp_toyhash,
        "toydh" => imp_toydh,
        "toymac" => imp_toymac,
        "papercipher" => imp_papercipher,
        "master" => imp_master,
        "keystream" => imp_keystream,
        _ => return None,
    })
}

pub fn builtin_inverse(id: &str) -> Option<Inverse> {
    match id {
        "toyblock_inv" => Some(inv_toyblock),
        _ => None,
    }
}

impl ProhibitiveRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, e: ProhibitiveEntry) {
        self.entries.insert(e.name.to_string(), Arc::new(e));
    }

    pub fn get(&self, name: &str) -> Option<&Arc<ProhibitiveEntry>> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn inject(&mut self, name: &str, key: &str) -> bool {
        if self.injections.contains_key(name) {
            return false;
        }
        self.injections.insert(name.into(), key.into());
        true
    }

    pub fn injection(&self, name: &str) -> Option<&str> {
        self.injections.get(name).map(|s| s.as_str())
    }

    /// Drops the lazy generator of `name`, if any.
    pub fn without_generator(&self, name: &str) -> Self {
        let mut out = self.clone();
        if let Some(e) = out.entries.get(name) {
            let mut e = (**e).clone();
            e.lazy = None;
            out.entries.insert(name.into(), Arc::new(e));
        }
        out
    }

    /// Adds the declarations of a registry file.
    pub fn load_text(&mut self, text: &str) -> Result<(), RegistryError> {
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            if let Some(rest) = l.strip_prefix("inject ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 || parts[1] != "from" {
                    return Err(RegistryError::Syntax { line, msg: "expected `inject NAME from KEY`".into() });
                }
                if !self.inject(parts[0], parts[2]) {
                    return Err(RegistryError::DuplicateInjection { line, name: parts[0].into() });
                }
                continue;
            }
            let rest = l.strip_prefix("prohibit ").ok_or_else(|| RegistryError::Syntax { line, msg: "expected `prohibit` or `inject`".into() })?;
            self.insert(parse_prohibit(rest, line)?);
        }
        Ok(())
    }
}

fn parse_layout(tok: &str, line: usize) -> Result<InputLayout, RegistryError> {
    let bad = || RegistryError::Syntax { line, msg: alloc::format!("bad input type `{}`", tok) };
    Ok(match tok {
        "u8" => InputLayout::Scalar(8),
        "u16" => InputLayout::Scalar(16),
        "u32" => InputLayout::Scalar(32),
        "buf" => InputLayout::AnyBuf,
        t => {
            let n = t.strip_prefix("buf[").and_then(|t| t.strip_suffix(']')).ok_or_else(bad)?;
            InputLayout::Buf(n.parse().map_err(|_| bad())?)
        }
    })
}

fn parse_output(tok: &str, line: usize) -> Result<OutputRule, RegistryError> {
    let bad = || RegistryError::Syntax { line, msg: alloc::format!("bad output rule `{}`", tok) };
    Ok(match tok {
        "u8" => OutputRule::Scalar(8),
        "u16" => OutputRule::Scalar(16),
        "u32" => OutputRule::Scalar(32),
        t if t.starts_with("len(in") => {
            let k = t.strip_prefix("len(in").and_then(|t| t.strip_suffix(')')).ok_or_else(bad)?;
            OutputRule::SameLenAs(k.parse().map_err(|_| bad())?)
        }
        t => {
            let n = t.strip_prefix("buf[").and_then(|t| t.strip_suffix(']')).ok_or_else(bad)?;
            OutputRule::Bytes(n.parse().map_err(|_| bad())?)
        }
    })
}

fn paren_list<'a>(s: &'a str, head: &str, line: usize) -> Result<(&'a str, &'a str), RegistryError> {
    let s = s.trim_start();
    let inner = s.strip_prefix(head).and_then(|t| t.strip_prefix('(')).ok_or_else(|| RegistryError::Syntax { line, msg: alloc::format!("expected `{}(`", head) })?;
    // find the matching close paren (one level of nesting for len(inK))
    let mut depth = 1;
    for (i, c) in inner.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return Ok((&inner[..i], &inner[i + 1..]));
                }
            }
            _ => {}
        }
    }
    Err(RegistryError::Syntax { line, msg: "unbalanced parentheses".into() })
}

fn parse_prohibit(rest: &str, line: usize) -> Result<ProhibitiveEntry, RegistryError> {
    let rest = rest.trim();
    let name_end = rest.find(char::is_whitespace).ok_or_else(|| RegistryError::Syntax { line, msg: "missing declaration body".into() })?;
    let name = &rest[..name_end];
    let (ins, rest) = paren_list(&rest[name_end..], "in", line)?;
    let (out, mut rest) = paren_list(rest, "out", line)?;
    let inputs = ins.split(',').map(str::trim).filter(|t| !t.is_empty()).map(|t| parse_layout(t, line)).collect::<Result<Vec<_>, _>>()?;
    let output = parse_output(out.trim(), line)?;
    let mut impl_id = String::from(name).to_lowercase();
    let mut lazy_id: Option<String> = None;
    let mut trigger: Vec<Trigger> = Vec::new();
    let mut assume = None;
    loop {
        rest = rest.trim_start();
        if rest.is_empty() {
            break;
        }
        if let Some(r) = rest.strip_prefix("assume=\"") {
            let end = r.find('"').ok_or_else(|| RegistryError::Syntax { line, msg: "unterminated assume template".into() })?;
            assume = Some(String::from(&r[..end]));
            rest = &r[end + 1..];
            continue;
        }
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let (tok, r) = rest.split_at(end);
        rest = r;
        let (key, val) = tok.split_once('=').ok_or_else(|| RegistryError::Syntax { line, msg: alloc::format!("bad attribute `{}`", tok) })?;
        match key {
            "impl" => impl_id = val.into(),
            "lazy" => lazy_id = Some(val.into()),
            "trigger" => {
                for t in val.split(',') {
                    trigger.push(match t {
                        "out" => Trigger::Output,
                        t => Trigger::Arg(t.strip_prefix("in").and_then(|k| k.parse().ok()).ok_or_else(|| RegistryError::Syntax { line, msg: alloc::format!("bad trigger `{}`", t) })?),
                    });
                }
            }
            _ => return Err(RegistryError::Syntax { line, msg: alloc::format!("unknown attribute `{}`", key) }),
        }
    }
    let implementation = builtin_impl(&impl_id).ok_or_else(|| RegistryError::UnknownImpl { line, id: impl_id.clone() })?;
    let lazy = match lazy_id {
        None => None,
        Some(id) => {
            let inverse = builtin_inverse(&id).ok_or_else(|| RegistryError::UnknownImpl { line, id: id.clone() })?;
            let named: Vec<usize> = trigger.iter().filter_map(|t| if let Trigger::Arg(k) = t { Some(*k) } else { None }).collect();
            let solves = (0..inputs.len()).find(|k| !named.contains(k)).unwrap_or(0);
            Some(LazyGenerator { id, trigger, solves, inverse })
        }
    };
    Ok(ProhibitiveEntry { name: Arc::from(name), inputs, output, impl_id, implementation, lazy, assume, test_only: false })
}

/// Declarations of the bundled toy primitives.
pub const BUILTIN_DECLARATIONS: &str = r#"
prohibit TOYBLOCK in(u16, u16) out(u16) impl=toyblock lazy=toyblock_inv trigger=in0,out assume="exists {in1}: TOYBLOCK({in0}, {in1}) = {out}"
prohibit TOYBLOCK_DEC in(u16, u16) out(u16) impl=toyblock_dec
prohibit KEYSTREAM in(u16, u16, buf) out(len(in2)) impl=keystream
prohibit TOYHASH in(buf) out(u32) impl=toyhash assume="exists {in0}: TOYHASH({in0}) = {out}"
prohibit TOYDH in(u16) out(u16) impl=toydh assume="exists {in0}: TOYDH({in0}) = {out}"
prohibit TOYMAC in(u16, buf) out(u32) impl=toymac assume="exists {in1}: TOYMAC({in0}, {in1}) = {out}"
prohibit PAPERCIPHER in(u16) out(u16) impl=papercipher
prohibit MASTER in(u16) out(u16) impl=master assume="exists {in0}: MASTER({in0}) = {out}"
inject MASTER from master
"#;

/// Registry with every bundled toy primitive.
pub fn builtin_suite() -> ProhibitiveRegistry {
    let mut r = ProhibitiveRegistry::new();
    r.load_text(BUILTIN_DECLARATIONS).expect("builtin declarations parse");
    if let Some(e) = r.entries.get("PAPERCIPHER") {
        let mut e = (**e).clone();
        e.test_only = true;
        r.entries.insert("PAPERCIPHER".into(), Arc::new(e));
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_contents() {
        let r = builtin_suite();
        for n in ["TOYBLOCK", "TOYHASH", "TOYDH", "TOYMAC", "PAPERCIPHER"] {
            assert!(r.get(n).is_some(), "{n}");
        }
        let pc = r.get("PAPERCIPHER").unwrap();
        assert!(pc.test_only);
        let out = (pc.implementation)(&[Concrete::Scalar { width: 16, value: 0x1234 }]);
        assert_eq!(out.scalar(), 0x2343);
        let dh = r.get("TOYDH").unwrap();
        assert_eq!((dh.implementation)(&[Concrete::Scalar { width: 16, value: 0 }]).scalar(), 1);
        assert_eq!(r.injection("MASTER"), Some("master"));
        let tb = r.get("TOYBLOCK").unwrap();
        assert_eq!(tb.lazy.as_ref().unwrap().solves, 1);
    }

    #[test]
    fn registry_file_errors() {
        let mut r = ProhibitiveRegistry::new();
        assert!(matches!(r.load_text("prohibit X in(u16) out(u16) impl=nope"), Err(RegistryError::UnknownImpl { .. })));
        assert!(matches!(r.load_text("prohibit X in(u7) out(u16)"), Err(RegistryError::Syntax { .. })));
        r.load_text("inject A from k").unwrap();
        assert!(matches!(r.load_text("inject A from j"), Err(RegistryError::DuplicateInjection { .. })));
    }

    #[test]
    fn output_rules() {
        let r = builtin_suite();
        let ks = r.get("KEYSTREAM").unwrap();
        assert_eq!(ks.output_shape(&[2, 2, 40]), Some(OutputShape::Bytes(40)));
        let out = (ks.implementation)(&[Concrete::Scalar { width: 16, value: 7 }, Concrete::Scalar { width: 16, value: 0 }, Concrete::Bytes(alloc::vec![0; 5])]);
        assert_eq!(out.to_bytes().len(), 5);
    }
}
