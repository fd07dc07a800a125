//! Core of the client-trace verifier: the client mini-language, symbolic
//! bitvectors and their solver, the symbolic VM, prohibitive functions,
//! message traces and the bundled demo protocols.
//!
//! The crate is `no_std` with `alloc`; threads, files and the command line
//! live in the companion `clientcheck` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod minilang;
pub mod symcore;
pub mod prohibitive;
pub mod symvm;
pub mod traceio;
pub mod protocols;
