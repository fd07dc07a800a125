use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use super::ast::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error, expected {expected}")]
    SyntaxError { line: u32, col: u32, expected: String },
    #[error("{line}:{col}: unknown identifier `{name}`")]
    UnknownIdentifier { name: String, line: u32, col: u32 },
    #[error("duplicate function `{0}`")]
    DuplicateFunction(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(u64, Option<u32>),
    Punct(&'static str),
    Eof,
}

const PUNCTS: &[&str] = &[
    "<<", ">>", "==", "!=", "<=", ">=", "(", ")", "{", "}", "[", "]", ",", ";", ":", "=", "+", "-", "*", "%", "&", "|", "^", "!", "~", "<", ">",
];

fn lex(src: &str) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            col += (i - start) as u32;
            out.push((Tok::Ident(word), pos));
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            let hex = c == '0' && matches!(chars.get(i + 1), Some('x') | Some('X'));
            if hex {
                i += 2;
            }
            let digits_start = i;
            while i < chars.len() && (if hex { chars[i].is_ascii_hexdigit() } else { chars[i].is_ascii_digit() }) {
                i += 1;
            }
            let digits: String = chars[digits_start..i].iter().collect();
            let bad = || ParseError::SyntaxError { line: pos.line, col: pos.col, expected: "integer literal".into() };
            if digits.is_empty() {
                return Err(bad());
            }
            let value = u64::from_str_radix(&digits, if hex { 16 } else { 10 }).map_err(|_| bad())?;
            let mut width = None;
            if i < chars.len() && chars[i] == 'u' {
                let ws = i + 1;
                let mut j = ws;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                let w: String = chars[ws..j].iter().collect();
                match w.as_str() {
                    "8" | "16" | "32" => {
                        width = Some(w.parse().unwrap());
                        i = j;
                    }
                    _ => return Err(bad()),
                }
            }
            col += (i - start) as u32;
            out.push((Tok::Int(value, width), pos));
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match PUNCTS.iter().find(|p| rest.starts_with(*p)) {
            Some(p) => {
                i += p.len();
                col += p.len() as u32;
                out.push((Tok::Punct(p), pos));
            }
            None => {
                return Err(ParseError::SyntaxError { line, col, expected: "token".into() });
            }
        }
    }
    out.push((Tok::Eof, Pos { line, col }));
    Ok(out)
}

const KEYWORDS: &[&str] = &["fn", "let", "if", "else", "while", "send", "recv", "return", "u8", "u16", "u32", "buf"];

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.at + 1).min(self.toks.len() - 1)].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn err<T>(&self, expected: &str) -> PResult<T> {
        let p = self.pos();
        Err(ParseError::SyntaxError { line: p.line, col: p.col, expected: expected.to_string() })
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(w) if w == k)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.err(&alloc::format!("`{}`", p))
        }
    }

    fn expect_kw(&mut self, k: &str) -> PResult<()> {
        if self.is_kw(k) {
            self.at += 1;
            Ok(())
        } else {
            self.err(&alloc::format!("`{}`", k))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(w) if !KEYWORDS.contains(&w.as_str()) => {
                self.at += 1;
                Ok(w)
            }
            _ => self.err("identifier"),
        }
    }

    fn int(&mut self) -> PResult<u64> {
        match *self.peek() {
            Tok::Int(v, _) => {
                self.at += 1;
                Ok(v)
            }
            _ => self.err("integer"),
        }
    }

    fn ty(&mut self) -> PResult<Type> {
        let t = match self.peek() {
            Tok::Ident(w) if w == "u8" => Type::U8,
            Tok::Ident(w) if w == "u16" => Type::U16,
            Tok::Ident(w) if w == "u32" => Type::U32,
            Tok::Ident(w) if w == "buf" => {
                self.at += 1;
                self.expect_punct("[")?;
                let n = self.int()?;
                self.expect_punct("]")?;
                return Ok(Type::Buf(n as u32));
            }
            _ => return self.err("type"),
        };
        self.at += 1;
        Ok(t)
    }

    fn program(&mut self) -> PResult<Program> {
        let mut functions: Vec<FunctionDef> = Vec::new();
        while *self.peek() != Tok::Eof {
            let f = self.function()?;
            if functions.iter().any(|g| g.name == f.name) {
                return Err(ParseError::DuplicateFunction(f.name));
            }
            functions.push(f);
        }
        if functions.is_empty() {
            return self.err("`fn`");
        }
        let entry = if functions.iter().any(|f| f.name == "client") { "client".into() } else { functions[0].name.clone() };
        Ok(Program { functions, entry })
    }

    fn function(&mut self) -> PResult<FunctionDef> {
        let pos = self.pos();
        self.expect_kw("fn")?;
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.is_punct(")") {
            loop {
                let pname = self.ident()?;
                self.expect_punct(":")?;
                let ty = self.ty()?;
                params.push(Param { name: pname, ty });
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        let body = self.block()?;
        let f = FunctionDef { name, params, body, pos };
        check_names(&f)?;
        Ok(f)
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect_punct("{")?;
        let mut out = Vec::new();
        while !self.is_punct("}") {
            if *self.peek() == Tok::Eof {
                return self.err("`}`");
            }
            out.push(self.stmt()?);
        }
        self.at += 1;
        Ok(out)
    }

    fn args(&mut self) -> PResult<Vec<Expr>> {
        self.expect_punct("(")?;
        let mut args = Vec::new();
        if !self.is_punct(")") {
            loop {
                args.push(self.expr()?);
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        Ok(args)
    }

    fn is_call_ahead(&self) -> bool {
        matches!(self.peek(), Tok::Ident(w) if !KEYWORDS.contains(&w.as_str()) && !matches!(w.as_str(), "concat" | "extract"))
            && matches!(self.peek2(), Tok::Punct("("))
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let pos = self.pos();
        if self.is_kw("let") {
            self.at += 1;
            let name = self.ident()?;
            let ty = if self.eat_punct(":") { Some(self.ty()?) } else { None };
            self.expect_punct("=")?;
            if self.is_call_ahead() {
                let callee = self.ident()?;
                let args = self.args()?;
                self.expect_punct(";")?;
                return Ok(Stmt::Call { name: callee, args, dest: Some(CallDest { name, declare: true, ty }), pos });
            }
            let value = self.expr()?;
            self.expect_punct(";")?;
            return Ok(Stmt::Let { name, ty, value, pos });
        }
        if self.is_kw("if") {
            self.at += 1;
            let cond = self.expr()?;
            let then_block = self.block()?;
            let else_block = if self.is_kw("else") {
                self.at += 1;
                if self.is_kw("if") {
                    alloc::vec![self.stmt()?]
                } else {
                    self.block()?
                }
            } else {
                Vec::new()
            };
            return Ok(Stmt::If { cond, then_block, else_block, pos });
        }
        if self.is_kw("while") {
            self.at += 1;
            let cond = self.expr()?;
            let body = self.block()?;
            return Ok(Stmt::While { cond, body, pos });
        }
        if self.is_kw("send") {
            self.at += 1;
            let args = self.args()?;
            if args.is_empty() {
                return self.err("expression");
            }
            self.expect_punct(";")?;
            return Ok(Stmt::Send { args, pos });
        }
        if self.is_kw("recv") {
            self.at += 1;
            self.expect_punct("(")?;
            let dest = self.ident()?;
            self.expect_punct(")")?;
            self.expect_punct(";")?;
            return Ok(Stmt::Recv { dest, pos });
        }
        if self.is_kw("return") {
            self.at += 1;
            let value = if self.is_punct(";") { None } else { Some(self.expr()?) };
            self.expect_punct(";")?;
            return Ok(Stmt::Return { value, pos });
        }
        if self.is_call_ahead() {
            let name = self.ident()?;
            let args = self.args()?;
            self.expect_punct(";")?;
            return Ok(Stmt::Call { name, args, dest: None, pos });
        }
        let name = self.ident()?;
        if self.eat_punct("[") {
            let index = self.expr()?;
            self.expect_punct("]")?;
            self.expect_punct("=")?;
            let value = self.expr()?;
            self.expect_punct(";")?;
            return Ok(Stmt::Store { name, index, value, pos });
        }
        self.expect_punct("=")?;
        if self.is_call_ahead() {
            let callee = self.ident()?;
            let args = self.args()?;
            self.expect_punct(";")?;
            return Ok(Stmt::Call { name: callee, args, dest: Some(CallDest { name, declare: false, ty: None }), pos });
        }
        let value = self.expr()?;
        self.expect_punct(";")?;
        Ok(Stmt::Assign { name, value, pos })
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.binary_level(0)
    }

    fn binary_level(&mut self, level: usize) -> PResult<Expr> {
        const LEVELS: &[&[&str]] = &[&["|"], &["^"], &["&"], &["==", "!="], &["<", "<=", ">", ">="], &["<<", ">>"], &["+", "-"], &["*", "%"]];
        if level == LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary_level(level + 1)?;
        loop {
            let op = match self.peek() {
                Tok::Punct(p) if LEVELS[level].contains(p) => *p,
                _ => return Ok(lhs),
            };
            let pos = self.pos();
            self.at += 1;
            let rhs = self.binary_level(level + 1)?;
            let (bop, a, b) = match op {
                "|" => (BinaryOp::Or, lhs, rhs),
                "^" => (BinaryOp::Xor, lhs, rhs),
                "&" => (BinaryOp::And, lhs, rhs),
                "==" => (BinaryOp::Eq, lhs, rhs),
                "!=" => (BinaryOp::Ne, lhs, rhs),
                "<" => (BinaryOp::Lt, lhs, rhs),
                "<=" => (BinaryOp::Le, lhs, rhs),
                ">" => (BinaryOp::Lt, rhs, lhs),
                ">=" => (BinaryOp::Le, rhs, lhs),
                "<<" => (BinaryOp::Shl, lhs, rhs),
                ">>" => (BinaryOp::Shr, lhs, rhs),
                "+" => (BinaryOp::Add, lhs, rhs),
                "-" => (BinaryOp::Sub, lhs, rhs),
                "*" => (BinaryOp::Mul, lhs, rhs),
                "%" => (BinaryOp::Mod, lhs, rhs),
                _ => unreachable!(),
            };
            lhs = Expr::new(ExprKind::Binary(bop, Box::new(a), Box::new(b)), pos);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        let pos = self.pos();
        if self.eat_punct("!") || self.eat_punct("~") {
            let a = self.unary()?;
            return Ok(Expr::new(ExprKind::Not(Box::new(a)), pos));
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Int(value, width) => {
                self.at += 1;
                Ok(Expr::new(ExprKind::Lit { value, width }, pos))
            }
            Tok::Punct("(") => {
                self.at += 1;
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(w) if w == "concat" => {
                self.at += 1;
                self.expect_punct("(")?;
                let a = self.expr()?;
                self.expect_punct(",")?;
                let b = self.expr()?;
                self.expect_punct(")")?;
                Ok(Expr::new(ExprKind::Concat(Box::new(a), Box::new(b)), pos))
            }
            Tok::Ident(w) if w == "extract" => {
                self.at += 1;
                self.expect_punct("(")?;
                let a = self.expr()?;
                self.expect_punct(",")?;
                let lo = self.int()? as u32;
                self.expect_punct(",")?;
                let hi = self.int()? as u32;
                self.expect_punct(")")?;
                if hi < lo || hi >= 64 {
                    return Err(ParseError::SyntaxError { line: pos.line, col: pos.col, expected: "extract bounds lo <= hi < 64".into() });
                }
                Ok(Expr::new(ExprKind::Extract(Box::new(a), lo, hi), pos))
            }
            Tok::Ident(_) => {
                let name = self.ident()?;
                if self.eat_punct("[") {
                    let i = self.expr()?;
                    self.expect_punct("]")?;
                    return Ok(Expr::new(ExprKind::Index(name, Box::new(i)), pos));
                }
                Ok(Expr::new(ExprKind::Var(name), pos))
            }
            _ => self.err("expression"),
        }
    }
}

/// Names declared anywhere in the function (variables are function scoped).
pub fn declared_names(f: &FunctionDef) -> BTreeSet<String> {
    let mut names: BTreeSet<String> = f.params.iter().map(|p| p.name.clone()).collect();
    walk_stmts(&f.body, &mut |s| match s {
        Stmt::Let { name, .. } => {
            names.insert(name.clone());
        }
        Stmt::Call { dest: Some(d), .. } if d.declare => {
            names.insert(d.name.clone());
        }
        _ => {}
    });
    names
}

/// First use of an undeclared name, with its position.
pub fn first_unknown_name(f: &FunctionDef) -> Option<(String, Pos)> {
    let names = declared_names(f);
    let mut found: Option<(String, Pos)> = None;
    let check = |n: &str, p: Pos, found: &mut Option<(String, Pos)>| {
        if found.is_none() && !names.contains(n) {
            *found = Some((n.into(), p));
        }
    };
    walk_stmts(&f.body, &mut |s| {
        let mut exprs: Vec<&Expr> = Vec::new();
        match s {
            Stmt::Let { value, .. } => exprs.push(value),
            Stmt::Assign { name, value, pos } => {
                check(name, *pos, &mut found);
                exprs.push(value);
            }
            Stmt::Store { name, index, value, pos } => {
                check(name, *pos, &mut found);
                exprs.push(index);
                exprs.push(value);
            }
            Stmt::If { cond, .. } | Stmt::While { cond, .. } => exprs.push(cond),
            Stmt::Send { args, .. } => exprs.extend(args.iter()),
            Stmt::Recv { dest, pos } => check(dest, *pos, &mut found),
            Stmt::Call { args, dest, pos, .. } => {
                exprs.extend(args.iter());
                if let Some(d) = dest {
                    check(&d.name, *pos, &mut found);
                }
            }
            Stmt::Return { value, .. } => exprs.extend(value.iter()),
        }
        for e in exprs {
            let p = e.pos;
            e.visit_names(&mut |n| check(n, p, &mut found));
        }
    });
    found
}

fn check_names(f: &FunctionDef) -> PResult<()> {
    match first_unknown_name(f) {
        Some((name, p)) => Err(ParseError::UnknownIdentifier { name, line: p.line, col: p.col }),
        None => Ok(()),
    }
}

pub fn parse_program(source: &str) -> Result<Program, ParseError> {
    let toks = lex(source)?;
    Parser { toks, at: 0 }.program()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let p = parse_program("fn client() { send(0x01u8); }").unwrap();
        assert_eq!(p.functions.len(), 1);
        assert!(matches!(p.functions[0].body[0], Stmt::Send { .. }));
        assert_eq!(p.entry, "client");
    }

    #[test]
    fn syntax_error_position() {
        let e = parse_program("fn client() { send(; }").unwrap_err();
        assert_eq!(e, ParseError::SyntaxError { line: 1, col: 20, expected: "expression".into() });
    }

    #[test]
    fn duplicate_and_unknown() {
        let e = parse_program("fn client() { } fn client() { }").unwrap_err();
        assert_eq!(e, ParseError::DuplicateFunction("client".into()));
        let e = parse_program("fn client() { send(zz); }").unwrap_err();
        assert!(matches!(e, ParseError::UnknownIdentifier { ref name, .. } if name == "zz"));
    }

    #[test]
    fn precedence_follows_c() {
        let p = parse_program("fn client() { let a: u8 = 1; let b = a + 2 * 3 & 7 == 7; }").unwrap();
        let Stmt::Let { value, .. } = &p.functions[0].body[1] else { panic!() };
        let ExprKind::Binary(BinaryOp::And, l, r) = &value.kind else { panic!("{value:?}") };
        assert!(matches!(l.kind, ExprKind::Binary(BinaryOp::Add, _, _)));
        assert!(matches!(r.kind, ExprKind::Binary(BinaryOp::Eq, _, _)));
    }

    #[test]
    fn literal_suffixes() {
        let p = parse_program("fn client() { send(0xBEEFu16, 7, 255u8); }").unwrap();
        let Stmt::Send { args, .. } = &p.functions[0].body[0] else { panic!() };
        assert_eq!(args[0].kind, ExprKind::Lit { value: 0xBEEF, width: Some(16) });
        assert_eq!(args[1].kind, ExprKind::Lit { value: 7, width: None });
        assert!(parse_program("fn client() { send(1u7); }").is_err());
    }
}
