use alloc::string::String;
use core::fmt::Write;

use super::ast::*;

fn ty(t: Type) -> String {
    match t {
        Type::U8 => "u8".into(),
        Type::U16 => "u16".into(),
        Type::U32 => "u32".into(),
        Type::Buf(n) => alloc::format!("buf[{}]", n),
    }
}

pub fn expr_to_string(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e);
    s
}

fn write_expr(out: &mut String, e: &Expr) {
    match &e.kind {
        ExprKind::Lit { value, width } => {
            let _ = write!(out, "{:#x}", value);
            if let Some(w) = width {
                let _ = write!(out, "u{}", w);
            }
        }
        ExprKind::Var(n) => out.push_str(n),
        ExprKind::Index(n, i) => {
            out.push_str(n);
            out.push('[');
            write_expr(out, i);
            out.push(']');
        }
        ExprKind::Not(a) => {
            out.push_str("!(");
            write_expr(out, a);
            out.push(')');
        }
        ExprKind::Binary(op, a, b) => {
            out.push('(');
            write_expr(out, a);
            let _ = write!(out, " {} ", op.token());
            write_expr(out, b);
            out.push(')');
        }
        ExprKind::Concat(a, b) => {
            out.push_str("concat(");
            write_expr(out, a);
            out.push_str(", ");
            write_expr(out, b);
            out.push(')');
        }
        ExprKind::Extract(a, lo, hi) => {
            out.push_str("extract(");
            write_expr(out, a);
            let _ = write!(out, ", {}, {})", lo, hi);
        }
    }
}

fn write_args(out: &mut String, args: &[Expr]) {
    out.push('(');
    for (k, a) in args.iter().enumerate() {
        if k > 0 {
            out.push_str(", ");
        }
        write_expr(out, a);
    }
    out.push(')');
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn write_block(out: &mut String, stmts: &[Stmt], depth: usize) {
    out.push_str("{\n");
    for s in stmts {
        write_stmt(out, s, depth + 1);
    }
    indent(out, depth);
    out.push('}');
}

fn write_stmt(out: &mut String, s: &Stmt, depth: usize) {
    indent(out, depth);
    match s {
        Stmt::Let { name, ty: t, value, .. } => {
            let _ = write!(out, "let {}", name);
            if let Some(t) = t {
                let _ = write!(out, ": {}", ty(*t));
            }
            out.push_str(" = ");
            write_expr(out, value);
            out.push_str(";\n");
        }
        Stmt::Assign { name, value, .. } => {
            let _ = write!(out, "{} = ", name);
            write_expr(out, value);
            out.push_str(";\n");
        }
        Stmt::Store { name, index, value, .. } => {
            let _ = write!(out, "{}[", name);
            write_expr(out, index);
            out.push_str("] = ");
            write_expr(out, value);
            out.push_str(";\n");
        }
        Stmt::If { cond, then_block, else_block, .. } => {
            out.push_str("if ");
            write_expr(out, cond);
            out.push(' ');
            write_block(out, then_block, depth);
            if !else_block.is_empty() {
                out.push_str(" else ");
                write_block(out, else_block, depth);
            }
            out.push('\n');
        }
        Stmt::While { cond, body, .. } => {
            out.push_str("while ");
            write_expr(out, cond);
            out.push(' ');
            write_block(out, body, depth);
            out.push('\n');
        }
        Stmt::Send { args, .. } => {
            out.push_str("send");
            write_args(out, args);
            out.push_str(";\n");
        }
        Stmt::Recv { dest, .. } => {
            let _ = writeln!(out, "recv({});", dest);
        }
        Stmt::Call { name, args, dest, .. } => {
            if let Some(d) = dest {
                if d.declare {
                    let _ = write!(out, "let {}", d.name);
                    if let Some(t) = d.ty {
                        let _ = write!(out, ": {}", ty(t));
                    }
                    out.push_str(" = ");
                } else {
                    let _ = write!(out, "{} = ", d.name);
                }
            }
            out.push_str(name);
            write_args(out, args);
            out.push_str(";\n");
        }
        Stmt::Return { value, .. } => {
            out.push_str("return");
            if let Some(v) = value {
                out.push(' ');
                write_expr(out, v);
            }
            out.push_str(";\n");
        }
    }
}

/// Canonical source text; parsing it yields a structurally equal program.
pub fn pretty_print(p: &Program) -> String {
    let mut out = String::new();
    // The entry is chosen by name on parse; keep it first when it is not `client`.
    let mut order: alloc::vec::Vec<&FunctionDef> = p.functions.iter().collect();
    if p.entry != "client" {
        order.sort_by_key(|f| f.name != p.entry);
    }
    for (k, f) in order.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        let _ = write!(out, "fn {}(", f.name);
        for (i, prm) in f.params.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{}: {}", prm.name, ty(prm.ty));
        }
        out.push_str(") ");
        write_block(&mut out, &f.body, 0);
        out.push('\n');
    }
    out
}
