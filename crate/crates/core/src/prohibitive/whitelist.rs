use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use super::exec::Assumption;

/// Extra check run on an assumption's concrete outputs before it is accepted.
pub type OutputPredicate = fn(&Assumption) -> bool;

#[derive(Debug, Clone)]
pub struct WhitelistEntry {
    pub name: String,
    pub arity: usize,
    pub template: String,
    pub predicate: Option<OutputPredicate>,
}

/// Assumptions the operator is willing to accept, matched by function identity.
#[derive(Debug, Clone, Default)]
pub struct Whitelist {
    pub entries: Vec<WhitelistEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("whitelist line {line}: {msg}")]
pub struct WhitelistError {
    pub line: usize,
    pub msg: String,
}

impl Whitelist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn allow(&mut self, name: &str, arity: usize, template: &str) {
        self.entries.push(WhitelistEntry { name: name.into(), arity, template: template.into(), predicate: None });
    }

    pub fn remove(&mut self, name: &str) {
        self.entries.retain(|e| e.name != name);
    }

    fn entry(&self, name: &str, arity: usize) -> Option<&WhitelistEntry> {
        self.entries.iter().find(|e| e.name == name && e.arity == arity)
    }

    pub fn template(&self, name: &str, arity: usize) -> Option<&str> {
        self.entry(name, arity).map(|e| e.template.as_str())
    }

    pub fn permits(&self, a: &Assumption, arity: usize) -> bool {
        match self.entry(&a.function, arity) {
            None => false,
            Some(e) => e.predicate.is_none_or(|p| p(a)),
        }
    }

    /// Parses lines of the form `allow NAME ARITY "template"`.
    pub fn parse(text: &str) -> Result<Whitelist, WhitelistError> {
        let mut w = Whitelist::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let err = |msg: &str| WhitelistError { line, msg: msg.into() };
            let rest = l.strip_prefix("allow ").ok_or_else(|| err("expected `allow`"))?;
            let mut it = rest.splitn(3, ' ');
            let name = it.next().ok_or_else(|| err("missing name"))?;
            let arity = it.next().and_then(|a| a.parse().ok()).ok_or_else(|| err("missing arity"))?;
            let tmpl = it.next().map(str::trim).unwrap_or("\"\"");
            let tmpl = tmpl.strip_prefix('"').and_then(|t| t.strip_suffix('"')).ok_or_else(|| err("template must be quoted"))?;
            w.allow(name, arity, tmpl);
        }
        Ok(w)
    }
}

/// Whitelist accepting the key-agreement and hash preimage assumptions of the bundled demos.
pub const DEFAULT_WHITELIST: &str = r#"
allow TOYDH 1 "exists {in0}: TOYDH({in0}) = {out}"
allow TOYHASH 1 "exists {in0}: TOYHASH({in0}) = {out}"
"#;

pub fn default_whitelist() -> Whitelist {
    Whitelist::parse(DEFAULT_WHITELIST).expect("default whitelist parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_match() {
        let w = default_whitelist();
        let a = Assumption { function: "TOYDH".into(), inputs: alloc::vec![3], outputs: alloc::vec![Some(5)], text: String::new() };
        assert!(w.permits(&a, 1));
        assert!(!w.permits(&a, 2));
        let b = Assumption { function: "TOYMAC".into(), ..a.clone() };
        assert!(!w.permits(&b, 2));
        assert!(Whitelist::parse("allow X").is_err());
        assert!(Whitelist::parse("deny X 1 \"\"").is_err());
    }

    #[test]
    fn predicate_hook() {
        let mut w = default_whitelist();
        w.entries[0].predicate = Some(|a| a.outputs.iter().all(|o| o.is_some()));
        let a = Assumption { function: "TOYDH".into(), inputs: alloc::vec![], outputs: alloc::vec![None], text: String::new() };
        assert!(!w.permits(&a, 1));
    }
}
