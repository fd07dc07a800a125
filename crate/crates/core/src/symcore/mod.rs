//! Bitvector expressions, constraint sets and the solver.

mod constraints;
mod expr;
mod solver;

pub use constraints::ConstraintSet;
pub use expr::{fold, mask, raw_binary, raw_extract, raw_not, simplify, BinOp, ExprError, Kind, SymId, SymValue, MAX_WIDTH};
pub use solver::{Model, SatResult, Solver, SolverError, Status};
