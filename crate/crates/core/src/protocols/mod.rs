//! Bundled demo clients, fixture generation, client unions and tampered traces.

pub mod random;
mod sources;
mod union;

use alloc::collections::VecDeque;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::minilang::{parse_program, ParseError, Program};
use crate::prohibitive::{builtin_suite, toy};
use crate::traceio::{generate_trace, Direction, InterpError, MapInputs, MessageTrace, ScriptedServer, Server, TimingProfile};

pub use sources::{bulk_transfer, padded_records, toy_handshake, toy_handshake_v2, CBC_BLOCKS, ECHO_HEARTBEAT, KEYEX_STATEMACHINE, PAPER_EXAMPLE};
pub use union::{build_union_client, UnionError};

pub const DEMOS: &[&str] = &[
    "paper_example",
    "toy_handshake",
    "toy_handshake_v2",
    "echo_heartbeat",
    "keyex_statemachine",
    "padded_records",
    "bulk_transfer",
    "cbc_blocks",
];

#[derive(Debug, Clone)]
pub struct FixtureOptions {
    pub seed: u64,
    /// Padding bound for `padded_records`; a power of two.
    pub pad: u32,
    pub records: u32,
    /// Chunk sizes requested in `bulk_transfer`.
    pub sizes: Vec<u16>,
    pub timing: TimingProfile,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        FixtureOptions { seed: 1, pad: 64, records: 20, sizes: alloc::vec![16, 64, 256, 1024], timing: TimingProfile::Uniform { gap_ms: 10 } }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub source: String,
    pub program: Program,
    pub trace: MessageTrace,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixtureError {
    #[error("unknown demo `{0}`")]
    UnknownDemo(String),
    #[error("bad option: {0}")]
    BadOption(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Run(#[from] InterpError),
}

pub fn demo_source(name: &str, opts: &FixtureOptions) -> Result<String, FixtureError> {
    Ok(match name {
        "paper_example" => PAPER_EXAMPLE.into(),
        "toy_handshake" => toy_handshake(),
        "toy_handshake_v2" => toy_handshake_v2(),
        "echo_heartbeat" => ECHO_HEARTBEAT.into(),
        "keyex_statemachine" => KEYEX_STATEMACHINE.into(),
        "padded_records" => {
            if !opts.pad.is_power_of_two() || opts.pad > 128 {
                return Err(FixtureError::BadOption("pad must be a power of two no larger than 128".into()));
            }
            padded_records(opts.pad, opts.records)
        }
        "bulk_transfer" => {
            if opts.sizes.iter().any(|s| *s > 1024) {
                return Err(FixtureError::BadOption("chunk sizes are at most 1024".into()));
            }
            bulk_transfer(opts.sizes.len() as u32)
        }
        "cbc_blocks" => CBC_BLOCKS.into(),
        _ => return Err(FixtureError::UnknownDemo(name.into())),
    })
}

struct HandshakeServer {
    nonce: u16,
    public: u16,
}

impl Server for HandshakeServer {
    fn respond(&mut self, _: &[(Direction, Vec<u8>)], _: usize) -> Option<Vec<u8>> {
        let mut v = self.nonce.to_be_bytes().to_vec();
        v.extend(self.public.to_be_bytes());
        Some(v)
    }
}

struct EchoServer;

impl Server for EchoServer {
    fn respond(&mut self, history: &[(Direction, Vec<u8>)], _: usize) -> Option<Vec<u8>> {
        history.iter().rev().find(|(d, _)| *d == Direction::C2S).map(|(_, p)| p.clone())
    }
}

/// Runs a demo client concretely to produce a benign trace.
pub fn build_fixture(name: &str, opts: &FixtureOptions) -> Result<Fixture, FixtureError> {
    let source = demo_source(name, opts)?;
    let program = parse_program(&source)?;
    let registry = builtin_suite();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut inputs = MapInputs::new(rng.gen());
    let trace = match name {
        "paper_example" => {
            let mut inputs = MapInputs::new(0).with("x", 9).with("y", 0x1537).with("iv", 0x1234);
            generate_trace(&program, &registry, &mut inputs, &mut ScriptedServer::default(), opts.timing)?
        }
        "toy_handshake" | "toy_handshake_v2" => {
            let mut server = HandshakeServer { nonce: rng.gen(), public: toy::toydh(rng.gen()) };
            generate_trace(&program, &registry, &mut inputs, &mut server, opts.timing)?
        }
        "echo_heartbeat" => {
            for _ in 0..2 {
                inputs = inputs.with("want", rng.gen_range(1..=16));
            }
            generate_trace(&program, &registry, &mut inputs, &mut EchoServer, opts.timing)?
        }
        "keyex_statemachine" => {
            let mut server = ScriptedServer(VecDeque::from([alloc::vec![1u8, 0]]));
            generate_trace(&program, &registry, &mut inputs, &mut server, opts.timing)?
        }
        "padded_records" => {
            for _ in 0..opts.records {
                inputs = inputs.with("plen", rng.gen_range(0..=8)).with("padlen", rng.gen_range(0..opts.pad) as u64);
            }
            generate_trace(&program, &registry, &mut inputs, &mut ScriptedServer::default(), opts.timing)?
        }
        "bulk_transfer" => {
            let mut server = ScriptedServer(opts.sizes.iter().map(|s| s.to_be_bytes().to_vec()).collect());
            generate_trace(&program, &registry, &mut inputs, &mut server, opts.timing)?
        }
        _ => generate_trace(&program, &registry, &mut inputs, &mut ScriptedServer::default(), opts.timing)?,
    };
    Ok(Fixture { name: name.to_string(), source, program, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    /// A heartbeat whose length byte claims more than it carries.
    Heartbleed,
    /// A key exchange carrying a parameter after a certificate was sent.
    PrematureKey,
}

impl AttackKind {
    pub fn parse(s: &str) -> Option<AttackKind> {
        match s {
            "heartbleed" => Some(AttackKind::Heartbleed),
            "statemachine" | "premature-key" => Some(AttackKind::PrematureKey),
            _ => None,
        }
    }
}

/// Tampers with one message of a benign trace; returns the new trace and the
/// index of the tampered message.
pub fn make_attack_trace(kind: AttackKind, benign: &MessageTrace) -> Option<(MessageTrace, usize)> {
    let mut t = benign.clone();
    let c2s = |m: &crate::traceio::Message| m.direction == Direction::C2S;
    let idx = match kind {
        AttackKind::Heartbleed => t.messages.iter().rposition(|m| c2s(m) && m.payload.first() == Some(&0x18))?,
        AttackKind::PrematureKey => t.messages.iter().position(|m| c2s(m) && m.payload == [0x10, 0x00])?,
    };
    let m = &mut t.messages[idx];
    match kind {
        AttackKind::Heartbleed => m.payload[1] = 0x40,
        AttackKind::PrematureKey => {
            m.payload = alloc::vec![0x10, 0x02];
            m.payload.extend(toy::toydh(0x1111).to_be_bytes());
        }
    }
    Some((t, idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::check_program;
    use crate::traceio::serialize_trace;

    #[test]
    fn every_demo_checks_and_runs() {
        let reg = builtin_suite();
        let opts = FixtureOptions { records: 3, ..Default::default() };
        for name in DEMOS {
            let f = build_fixture(name, &opts).unwrap_or_else(|e| panic!("{}: {}", name, e));
            assert!(check_program(&f.program, &reg).is_empty(), "{}: {:?}", name, check_program(&f.program, &reg));
            assert!(!f.trace.messages.is_empty(), "{}", name);
        }
    }

    #[test]
    fn worked_example_trace() {
        let f = build_fixture("paper_example", &FixtureOptions::default()).unwrap();
        assert_eq!(serialize_trace(&f.trace), "C2S|0|12349dac\n");
    }

    #[test]
    fn handshake_shape() {
        let f = build_fixture("toy_handshake", &FixtureOptions::default()).unwrap();
        let m = &f.trace.messages;
        assert_eq!(m.iter().map(|x| x.direction).collect::<Vec<_>>(), [Direction::C2S, Direction::S2C, Direction::C2S, Direction::C2S]);
        assert!(m[0].payload[1] & 0x80 != 0);
        assert_eq!(f.trace.metadata[0].key, "master");
        assert_eq!(f.trace.metadata[0].position, 2);
        let g = build_fixture("toy_handshake_v2", &FixtureOptions::default()).unwrap();
        assert!(g.trace.messages[0].payload[1] & 0x80 == 0);
    }

    #[test]
    fn attacks() {
        let f = build_fixture("echo_heartbeat", &FixtureOptions::default()).unwrap();
        let (t, i) = make_attack_trace(AttackKind::Heartbleed, &f.trace).unwrap();
        assert_eq!(i, 3);
        assert_eq!(t.messages[i].payload[1], 0x40);
        let f = build_fixture("keyex_statemachine", &FixtureOptions::default()).unwrap();
        let (t, i) = make_attack_trace(AttackKind::PrematureKey, &f.trace).unwrap();
        assert_eq!(i, 3);
        assert_eq!(t.messages[i].payload.len(), 4);
        assert!(make_attack_trace(AttackKind::PrematureKey, &build_fixture("paper_example", &FixtureOptions::default()).unwrap().trace).is_none());
    }

    #[test]
    fn bad_options() {
        let opts = FixtureOptions { pad: 48, ..Default::default() };
        assert!(matches!(build_fixture("padded_records", &opts), Err(FixtureError::BadOption(_))));
        assert!(matches!(build_fixture("nope", &opts), Err(FixtureError::UnknownDemo(_))));
    }
}
