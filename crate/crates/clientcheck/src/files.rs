use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use clientcheck_core::minilang::{parse_program, Program};
use clientcheck_core::prohibitive::{builtin_suite, ProhibitiveRegistry, Whitelist};
use clientcheck_core::traceio::{parse_trace, serialize_trace, MessageTrace};

pub fn read_program(path: &Path) -> Result<Program> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_program(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn read_trace(path: &Path) -> Result<MessageTrace> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_trace(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_trace(path: &Path, t: &MessageTrace) -> Result<()> {
    fs::write(path, serialize_trace(t)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_whitelist(path: &Path) -> Result<Whitelist> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Whitelist::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

/// The bundled primitives extended (or overridden) by the declarations in `path`.
pub fn read_registry(path: &Path) -> Result<ProhibitiveRegistry> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut r = builtin_suite();
    r.load_text(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(r)
}
