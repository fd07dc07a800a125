//! The client mini-language: syntax tree, parser, printer and static checks.

mod ast;
mod check;
mod parser;
mod pretty;

pub use ast::*;
pub use check::{check_program, CallResolver, Diagnostic, NoExternals};
pub use parser::{declared_names, parse_program, ParseError};
pub use pretty::{expr_to_string, pretty_print};
