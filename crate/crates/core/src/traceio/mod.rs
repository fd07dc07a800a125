//! Message traces, their text format, lag metrics and fixture generation.

mod interp;
mod metrics;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use thiserror::Error;

pub use interp::{generate_trace, run_concrete, CVal, ConcreteRun, InputSource, InterpError, MapInputs, NoServer, ScriptedServer, Server, TimingProfile};
pub use metrics::{pearson, record_metrics, record_metrics_corrected, summarize, BucketRow, LagRecord, MetricsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    C2S,
    S2C,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::C2S => "C2S",
            Direction::S2C => "S2C",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub direction: Direction,
    pub arrival_ms: u64,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(direction: Direction, arrival_ms: u64, payload: Vec<u8>) -> Message {
        Message { direction, arrival_ms, payload }
    }
}

/// A `#key` line; `position` is the number of messages preceding it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaEntry {
    pub key: String,
    pub value: Vec<u8>,
    pub position: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MessageTrace {
    pub messages: Vec<Message>,
    pub metadata: Vec<MetaEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("malformed line {0}")]
    MalformedLine(usize),
    #[error("arrival time decreases at line {0}")]
    NonMonotoneArrival(usize),
}

impl MessageTrace {
    pub fn metadata_value(&self, key: &str) -> Option<&[u8]> {
        self.metadata.iter().find(|m| m.key == key).map(|m| m.value.as_slice())
    }

    pub fn set_metadata(&mut self, key: &str, value: Vec<u8>, position: usize) {
        self.metadata.retain(|m| m.key != key);
        self.metadata.push(MetaEntry { key: key.into(), value, position });
    }
}

pub fn parse_trace(text: &str) -> Result<MessageTrace, TraceError> {
    let mut t = MessageTrace::default();
    let mut last = 0u64;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let l = raw.trim_end_matches('\r');
        if l.trim().is_empty() {
            continue;
        }
        if let Some(rest) = l.strip_prefix("#key ") {
            let (name, hexv) = rest.split_once('=').ok_or(TraceError::MalformedLine(line))?;
            if name.is_empty() {
                return Err(TraceError::MalformedLine(line));
            }
            let value = hex::decode(hexv).map_err(|_| TraceError::MalformedLine(line))?;
            t.metadata.push(MetaEntry { key: name.into(), value, position: t.messages.len() });
            continue;
        }
        if l.starts_with('#') {
            continue;
        }
        let mut parts = l.split('|');
        let (d, a, p) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(d), Some(a), Some(p), None) => (d, a, p),
            _ => return Err(TraceError::MalformedLine(line)),
        };
        let direction = match d {
            "C2S" => Direction::C2S,
            "S2C" => Direction::S2C,
            _ => return Err(TraceError::MalformedLine(line)),
        };
        if a.is_empty() || !a.bytes().all(|b| b.is_ascii_digit()) {
            return Err(TraceError::MalformedLine(line));
        }
        let arrival_ms: u64 = a.parse().map_err(|_| TraceError::MalformedLine(line))?;
        if p.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(TraceError::MalformedLine(line));
        }
        let payload = hex::decode(p).map_err(|_| TraceError::MalformedLine(line))?;
        if arrival_ms < last {
            return Err(TraceError::NonMonotoneArrival(line));
        }
        last = arrival_ms;
        t.messages.push(Message { direction, arrival_ms, payload });
    }
    Ok(t)
}

pub fn serialize_trace(t: &MessageTrace) -> String {
    let mut s = String::new();
    let mut meta: Vec<&MetaEntry> = t.metadata.iter().collect();
    meta.sort_by_key(|m| m.position);
    let mut mi = 0;
    for (k, m) in t.messages.iter().enumerate() {
        while mi < meta.len() && meta[mi].position <= k {
            let _ = writeln!(s, "#key {}={}", meta[mi].key, hex::encode(&meta[mi].value));
            mi += 1;
        }
        let _ = writeln!(s, "{}|{}|{}", m.direction.as_str(), m.arrival_ms, hex::encode(&m.payload));
    }
    for m in &meta[mi..] {
        let _ = writeln!(s, "#key {}={}", m.key, hex::encode(&m.value));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_message() {
        let t = parse_trace("C2S|0|12349dac\n").unwrap();
        assert_eq!(t.messages.len(), 1);
        assert_eq!(t.messages[0].payload, [0x12, 0x34, 0x9d, 0xac]);
        assert_eq!(t.messages[0].direction, Direction::C2S);
    }

    #[test]
    fn metadata_and_order() {
        let t = parse_trace("#key master=00ff\nC2S|0|01\nS2C|5|02\n").unwrap();
        assert_eq!(t.metadata_value("master"), Some(&[0x00, 0xff][..]));
        assert_eq!(t.metadata[0].position, 0);
        assert_eq!(parse_trace("C2S|5|01\nS2C|4|02\n"), Err(TraceError::NonMonotoneArrival(2)));
        assert_eq!(parse_trace("C2X|5|01\n"), Err(TraceError::MalformedLine(1)));
        assert_eq!(parse_trace("C2S|5|0\n"), Err(TraceError::MalformedLine(1)));
        assert_eq!(parse_trace("C2S|5|AB\n"), Err(TraceError::MalformedLine(1)));
    }

    #[test]
    fn round_trip() {
        let text = "C2S|0|01\n#key k=ab\nS2C|3|\nC2S|9|ffee\n";
        assert_eq!(serialize_trace(&parse_trace(text).unwrap()), text);
    }
}
