//! Tab-separated reports.

use std::fmt::Write;

use clientcheck_core::traceio::{summarize, LagRecord, MessageTrace};

use crate::engine::{MessageReport, MsgStatus, SessionVerdict};

pub fn status_str(s: MsgStatus) -> &'static str {
    match s {
        MsgStatus::Valid => "VALID",
        MsgStatus::Invalid => "INVALID",
        MsgStatus::Unverified => "UNVERIFIED",
    }
}

/// One row per message.
pub fn messages_tsv(v: &SessionVerdict) -> String {
    let mut s = String::from("index\tdirection\tarrival_ms\tstatus\tcost_ms\tcompletion_ms\tlag_ms\tsteps\twall_us\tpasses\n");
    for m in &v.messages {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            m.index,
            m.direction.as_str(),
            m.arrival_ms,
            status_str(m.status),
            m.cost_ms,
            m.completion_ms,
            m.lag_ms,
            m.steps,
            m.wall_us,
            m.passes
        );
    }
    s
}

/// Lag quartiles per arrival bucket over the verified messages.
pub fn buckets_tsv(messages: &[MessageReport], bucket_ms: u64) -> String {
    let verified: Vec<&MessageReport> = messages.iter().filter(|m| m.status != MsgStatus::Unverified).collect();
    let arrivals: Vec<u64> = verified.iter().map(|m| m.arrival_ms).collect();
    let records: Vec<LagRecord> = verified.iter().map(|m| LagRecord { cost_ms: m.cost_ms, completion_ms: m.completion_ms, lag_ms: m.lag_ms }).collect();
    let mut s = String::from("bucket_start_ms\tmin\tq1\tmedian\tq3\tmax\tmean\tn\n");
    for r in summarize(&arrivals, &records, bucket_ms) {
        let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}\t{}\t{:.3}\t{}", r.bucket_start_ms, r.min, r.q1, r.median, r.q3, r.max, r.mean, r.n);
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub workers: usize,
    pub run: usize,
    pub wall_ms: f64,
    pub verdict: String,
}

pub fn bench_tsv(rows: &[BenchRow]) -> String {
    let mut s = String::from("workers\trun\twall_ms\tverdict\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{:.3}\t{}", r.workers, r.run, r.wall_ms, r.verdict);
    }
    s
}

/// Per-message wall-clock time of every benchmark run.
pub fn wall_tsv(runs: &[(usize, usize, &SessionVerdict)]) -> String {
    let mut s = String::from("workers\trun\tindex\tstatus\twall_us\tsteps\n");
    for (w, run, v) in runs {
        for m in &v.messages {
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}\t{}", w, run, m.index, status_str(m.status), m.wall_us, m.steps);
        }
    }
    s
}

/// Payload size against verification cost for each verified message.
pub fn size_cost_tsv(trace: &MessageTrace, v: &SessionVerdict) -> String {
    let mut s = String::from("msg_size_bytes\tcost_ms\tdirection\n");
    for m in v.messages.iter().filter(|m| m.status != MsgStatus::Unverified) {
        let _ = writeln!(s, "{}\t{}\t{}", trace.messages[m.index].payload.len(), m.cost_ms, m.direction.as_str());
    }
    s
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn bench_rows() {
        let t = bench_tsv(&[BenchRow { workers: 2, run: 0, wall_ms: 1.5, verdict: "VALID".into() }]);
        assert_eq!(t, "workers\trun\twall_ms\tverdict\n2\t0\t1.500\tVALID\n");
    }
}
