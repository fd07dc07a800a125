//! Verifies recorded network traces against a client program.
//!
//! The symbolic machinery lives in `clientcheck-core`; this crate adds the
//! threaded search engine, file formats, reports and the command line.

pub mod engine;
pub mod files;
pub mod report;

pub use clientcheck_core as core;
