//! Symbolic interpreter for compiled client programs.

mod code;
mod state;
mod vm;

pub use code::{Builtin, CExpr, Callee, Code, CompileError, FuncCode, InstrId, Op, SlotInfo};
pub use state::{ExecState, Frame, ReplayPlan, SkippedCall, SymTable, Trail, Value};
pub use vm::{NetInstr, NextInstrClass, Reconciled, Stop, Vm, VmError, VmEvent, DEFAULT_STEP_BUDGET};
