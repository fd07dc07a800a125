use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::minilang::{BinaryOp, CallDest, Expr, FunctionDef, Pos, Program, Stmt};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UnionError {
    #[error("{regions} differing regions exceed the limit of {limit}")]
    DiffTooLarge { regions: usize, limit: usize },
    #[error("function `{0}` differs between the two clients")]
    HelperDiffers(String),
    #[error("entry points differ: `{0}` vs `{1}`")]
    EntryMismatch(String, String),
}

/// Indices of a longest common subsequence of two statement lists.
fn lcs(a: &[Stmt], b: &[Stmt]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let mut t = alloc::vec![alloc::vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            t[i][j] = if a[i] == b[j] { t[i + 1][j + 1] + 1 } else { t[i + 1][j].max(t[i][j + 1]) };
        }
    }
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < n && j < m {
        if a[i] == b[j] {
            out.push((i, j));
            i += 1;
            j += 1;
        } else if t[i + 1][j] >= t[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

fn version_is(version: &str, k: u64) -> Expr {
    Expr::binary(BinaryOp::Eq, Expr::var(version), Expr::lit(k, None))
}

fn prologue(version: &str) -> Vec<Stmt> {
    let p = Pos::default();
    alloc::vec![
        Stmt::Call {
            name: "sym_input".into(),
            args: alloc::vec![Expr::lit(8, None)],
            dest: Some(CallDest { name: version.into(), declare: true, ty: None }),
            pos: p,
        },
        Stmt::If {
            cond: Expr::binary(BinaryOp::Lt, Expr::lit(1, None), Expr::var(version)),
            then_block: alloc::vec![Stmt::Return { value: None, pos: p }],
            else_block: Vec::new(),
            pos: p,
        },
    ]
}

fn merge_bodies(a: &[Stmt], b: &[Stmt], version: &str, limit: usize) -> Result<Vec<Stmt>, UnionError> {
    let common = lcs(a, b);
    let mut out = Vec::new();
    let mut regions = 0;
    let (mut i, mut j) = (0, 0);
    for &(ci, cj) in common.iter().chain(core::iter::once(&(a.len(), b.len()))) {
        if ci > i || cj > j {
            regions += 1;
            out.push(Stmt::If {
                cond: version_is(version, 0),
                then_block: a[i..ci].to_vec(),
                else_block: b[j..cj].to_vec(),
                pos: Pos::default(),
            });
        }
        if ci < a.len() {
            out.push(a[ci].clone());
        }
        i = ci + 1;
        j = cj + 1;
    }
    if regions > limit {
        return Err(UnionError::DiffTooLarge { regions, limit });
    }
    Ok(out)
}

/// One client that behaves as `a` when the symbol `version` is 0 and as `b`
/// when it is 1. Identical inputs yield `a` unchanged.
pub fn build_union_client(a: &Program, b: &Program, version: &str, max_regions: usize) -> Result<Program, UnionError> {
    if a.entry != b.entry {
        return Err(UnionError::EntryMismatch(a.entry.clone(), b.entry.clone()));
    }
    if a == b {
        return Ok(a.clone());
    }
    let mut functions: Vec<FunctionDef> = Vec::new();
    for fa in &a.functions {
        match b.function(&fa.name) {
            Some(fb) if fa.name == a.entry => {
                let mut body = prologue(version);
                body.extend(merge_bodies(&fa.body, &fb.body, version, max_regions)?);
                functions.push(FunctionDef { body, ..fa.clone() });
            }
            Some(fb) if fb != fa => return Err(UnionError::HelperDiffers(fa.name.clone())),
            _ => functions.push(fa.clone()),
        }
    }
    for fb in &b.functions {
        if a.function(&fb.name).is_none() {
            functions.push(fb.clone());
        }
    }
    Ok(Program { functions, entry: a.entry.clone() })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::{check_program, parse_program, pretty_print, NoExternals};

    #[test]
    fn identical_inputs() {
        let p = parse_program("fn client() { let a = sym_input(8); send(a); }").unwrap();
        assert_eq!(build_union_client(&p, &p, "version", 4).unwrap(), p);
    }

    #[test]
    fn single_region() {
        let a = parse_program("fn client() { let a = sym_input(8); let n = a | 1; send(n); }").unwrap();
        let b = parse_program("fn client() { let a = sym_input(8); let n = a & 254; send(n); }").unwrap();
        let u = build_union_client(&a, &b, "version", 4).unwrap();
        let text = pretty_print(&u);
        assert!(text.contains("version == 0x0"), "{}", text);
        assert!(check_program(&u, &NoExternals).is_empty());
        let reparsed = parse_program(&text).unwrap();
        assert_eq!(reparsed, u);
    }

    #[test]
    fn too_many_regions() {
        let a = parse_program("fn client() { send(1u8); send(2u8); send(3u8); send(4u8); send(5u8); }").unwrap();
        let b = parse_program("fn client() { send(9u8); send(2u8); send(8u8); send(4u8); send(7u8); }").unwrap();
        assert_eq!(build_union_client(&a, &b, "version", 2), Err(UnionError::DiffTooLarge { regions: 3, limit: 2 }));
    }
}
