use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::ast::*;
use super::parser::first_unknown_name;

/// Anything that can resolve call targets beyond user functions and builtins.
pub trait CallResolver {
    /// Arity of a registered external function, if known.
    fn arity(&self, name: &str) -> Option<usize>;
}

/// Resolves nothing.
pub struct NoExternals;

impl CallResolver for NoExternals {
    fn arity(&self, _: &str) -> Option<usize> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Diagnostic {
    DuplicateFunction(String),
    MissingEntry(String),
    EntryHasParams(String),
    DuplicateParam { function: String, param: String },
    UnresolvedCall(String),
    ArityMismatch { callee: String, expected: usize, found: usize },
    Recursion(Vec<String>),
    BadBufferSize { function: String, size: u64 },
    UnknownIdentifier { function: String, name: String },
    BadBuiltinArgument { function: String, builtin: String },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::DuplicateFunction(n) => write!(f, "duplicate function `{}`", n),
            Diagnostic::MissingEntry(n) => write!(f, "entry function `{}` not defined", n),
            Diagnostic::EntryHasParams(n) => write!(f, "entry function `{}` must take no parameters", n),
            Diagnostic::DuplicateParam { function, param } => write!(f, "parameter `{}` repeated in `{}`", param, function),
            Diagnostic::UnresolvedCall(n) => write!(f, "call to unknown function `{}`", n),
            Diagnostic::ArityMismatch { callee, expected, found } => write!(f, "`{}` takes {} arguments, {} given", callee, expected, found),
            Diagnostic::Recursion(cycle) => write!(f, "recursive call cycle: {}", cycle.join(" -> ")),
            Diagnostic::BadBufferSize { function, size } => write!(f, "buffer size {} in `{}` must be a positive constant", size, function),
            Diagnostic::UnknownIdentifier { function, name } => write!(f, "unknown identifier `{}` in `{}`", name, function),
            Diagnostic::BadBuiltinArgument { function, builtin } => write!(f, "`{}` in `{}` needs a constant argument", builtin, function),
        }
    }
}

fn lit_value(e: &Expr) -> Option<u64> {
    match e.kind {
        ExprKind::Lit { value, .. } => Some(value),
        _ => None,
    }
}

/// Validates program invariants; an empty result means the program is well formed.
pub fn check_program(p: &Program, externals: &dyn CallResolver) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut seen = BTreeSet::new();
    for f in &p.functions {
        if !seen.insert(f.name.as_str()) {
            diags.push(Diagnostic::DuplicateFunction(f.name.clone()));
        }
    }
    match p.function(&p.entry) {
        None => diags.push(Diagnostic::MissingEntry(p.entry.clone())),
        Some(f) if !f.params.is_empty() => diags.push(Diagnostic::EntryHasParams(p.entry.clone())),
        _ => {}
    }
    let mut calls: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for f in &p.functions {
        let mut pnames = BTreeSet::new();
        for prm in &f.params {
            if !pnames.insert(prm.name.as_str()) {
                diags.push(Diagnostic::DuplicateParam { function: f.name.clone(), param: prm.name.clone() });
            }
            if let Type::Buf(n) = prm.ty {
                if n == 0 {
                    diags.push(Diagnostic::BadBufferSize { function: f.name.clone(), size: 0 });
                }
            }
        }
        if let Some((name, _)) = first_unknown_name(f) {
            diags.push(Diagnostic::UnknownIdentifier { function: f.name.clone(), name });
        }
        let edges = calls.entry(f.name.as_str()).or_default();
        walk_stmts(&f.body, &mut |s| {
            let ty = match s {
                Stmt::Let { ty, .. } => *ty,
                Stmt::Call { dest: Some(d), .. } => d.ty,
                _ => None,
            };
            if let Some(Type::Buf(0)) = ty {
                diags.push(Diagnostic::BadBufferSize { function: f.name.clone(), size: 0 });
            }
            if let Stmt::Call { name, args, .. } = s {
                let expected = if let Some(g) = p.function(name) {
                    edges.insert(g.name.as_str());
                    Some(g.params.len())
                } else if let Some(a) = builtin_arity(name) {
                    if matches!(name.as_str(), "sym_input" | "sym_bytes" | "zeros") {
                        match args.first().and_then(lit_value) {
                            Some(0) => diags.push(Diagnostic::BadBufferSize { function: f.name.clone(), size: 0 }),
                            Some(v) if name == "sym_input" && !matches!(v, 8 | 16 | 32) => {
                                diags.push(Diagnostic::BadBuiltinArgument { function: f.name.clone(), builtin: name.clone() })
                            }
                            Some(_) => {}
                            None if args.len() == 1 => diags.push(Diagnostic::BadBuiltinArgument { function: f.name.clone(), builtin: name.clone() }),
                            None => {}
                        }
                    }
                    Some(a)
                } else if let Some(a) = externals.arity(name) {
                    Some(a)
                } else {
                    diags.push(Diagnostic::UnresolvedCall(name.clone()));
                    None
                };
                if let Some(e) = expected {
                    if e != args.len() {
                        diags.push(Diagnostic::ArityMismatch { callee: name.clone(), expected: e, found: args.len() });
                    }
                }
            }
        });
    }
    if let Some(cycle) = find_cycle(&calls) {
        diags.push(Diagnostic::Recursion(cycle));
    }
    diags
}

fn find_cycle(calls: &BTreeMap<&str, BTreeSet<&str>>) -> Option<Vec<String>> {
    // 0 = unvisited, 1 = on stack, 2 = done
    fn dfs<'a>(n: &'a str, calls: &BTreeMap<&'a str, BTreeSet<&'a str>>, state: &mut BTreeMap<&'a str, u8>, stack: &mut Vec<&'a str>) -> Option<Vec<String>> {
        state.insert(n, 1);
        stack.push(n);
        if let Some(next) = calls.get(n) {
            for m in next {
                match state.get(m).copied().unwrap_or(0) {
                    1 => {
                        let start = stack.iter().position(|x| x == m).unwrap();
                        let mut cycle: Vec<String> = stack[start..].iter().map(|s| String::from(*s)).collect();
                        cycle.push(String::from(*m));
                        return Some(cycle);
                    }
                    0 => {
                        if let Some(c) = dfs(m, calls, state, stack) {
                            return Some(c);
                        }
                    }
                    _ => {}
                }
            }
        }
        stack.pop();
        state.insert(n, 2);
        None
    }
    let mut state = BTreeMap::new();
    for n in calls.keys() {
        if state.get(n).copied().unwrap_or(0) == 0 {
            let mut stack = Vec::new();
            if let Some(c) = dfs(n, calls, &mut state, &mut stack) {
                return Some(c);
            }
        }
    }
    None
}
