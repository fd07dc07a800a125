use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LagRecord {
    pub cost_ms: u64,
    pub completion_ms: u64,
    pub lag_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("{arrivals} arrivals but {costs} costs")]
    LengthMismatch { arrivals: usize, costs: usize },
}

fn recurrence(arrivals: &[u64], costs: &[u64], first: u64) -> Result<Vec<LagRecord>, MetricsError> {
    if arrivals.len() != costs.len() {
        return Err(MetricsError::LengthMismatch { arrivals: arrivals.len(), costs: costs.len() });
    }
    let mut out: Vec<LagRecord> = Vec::with_capacity(arrivals.len());
    for (&a, &c) in arrivals.iter().zip(costs) {
        let completion = match out.last() {
            None => first + c,
            Some(prev) => a.max(prev.completion_ms) + c,
        };
        out.push(LagRecord { cost_ms: c, completion_ms: completion, lag_ms: completion.saturating_sub(a) });
    }
    Ok(out)
}

/// completion_0 = cost_0, completion_n = max(arrival_n, completion_{n-1}) + cost_n.
pub fn record_metrics(arrivals: &[u64], costs: &[u64]) -> Result<Vec<LagRecord>, MetricsError> {
    recurrence(arrivals, costs, 0)
}

/// Same recurrence but the first message also waits for its own arrival.
pub fn record_metrics_corrected(arrivals: &[u64], costs: &[u64]) -> Result<Vec<LagRecord>, MetricsError> {
    recurrence(arrivals, costs, arrivals.first().copied().unwrap_or(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketRow {
    pub bucket_start_ms: u64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub n: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + (sorted[lo + 1] - sorted[lo]) * frac
    } else {
        sorted[lo]
    }
}

/// Lag statistics per arrival bucket `[t, t + bucket_ms)`.
pub fn summarize(arrivals: &[u64], records: &[LagRecord], bucket_ms: u64) -> Vec<BucketRow> {
    assert!(bucket_ms > 0, "bucket width must be positive");
    let mut groups: alloc::collections::BTreeMap<u64, Vec<f64>> = Default::default();
    for (a, r) in arrivals.iter().zip(records) {
        groups.entry(a / bucket_ms * bucket_ms).or_default().push(r.lag_ms as f64);
    }
    groups
        .into_iter()
        .map(|(start, mut v)| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = v.len();
            BucketRow {
                bucket_start_ms: start,
                min: v[0],
                q1: quantile(&v, 0.25),
                median: quantile(&v, 0.5),
                q3: quantile(&v, 0.75),
                max: v[n - 1],
                mean: v.iter().sum::<f64>() / n as f64,
                n,
            }
        })
        .collect()
}

/// Pearson correlation coefficient; `None` when either series is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let (dx, dy) = (xs[k] - mx, ys[k] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / libm::sqrt(sxx * syy))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let r = record_metrics(&[0, 100, 200], &[50, 150, 30]).unwrap();
        assert_eq!(r.iter().map(|x| x.completion_ms).collect::<Vec<_>>(), [50, 250, 280]);
        assert_eq!(r.iter().map(|x| x.lag_ms).collect::<Vec<_>>(), [50, 150, 80]);
        let rows = summarize(&[0, 100, 200], &r, 100);
        assert_eq!(rows.iter().map(|b| (b.bucket_start_ms, b.median)).collect::<Vec<_>>(), [(0, 50.0), (100, 150.0), (200, 80.0)]);
    }

    #[test]
    fn base_cases() {
        let r = record_metrics(&[10], &[5]).unwrap();
        assert_eq!((r[0].completion_ms, r[0].lag_ms), (5, 0));
        let r = record_metrics_corrected(&[10], &[5]).unwrap();
        assert_eq!((r[0].completion_ms, r[0].lag_ms), (15, 5));
        assert!(record_metrics(&[0, 1, 2], &[0, 0, 0]).unwrap().iter().all(|x| x.lag_ms == 0));
        assert!(record_metrics(&[0], &[]).is_err());
        assert!(summarize(&[], &[], 10).is_empty());
    }

    #[test]
    fn quartiles_of_one_bucket() {
        let r: Vec<LagRecord> = [1u64, 2, 3, 4, 5].iter().map(|l| LagRecord { cost_ms: 0, completion_ms: 0, lag_ms: *l }).collect();
        let rows = summarize(&[0, 1, 2, 3, 4], &r, 1000);
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].min, rows[0].q1, rows[0].median, rows[0].q3, rows[0].max, rows[0].mean), (1.0, 2.0, 3.0, 4.0, 5.0, 3.0));
    }

    #[test]
    fn correlation() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[8.0, 6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson(&x, &[1.0; 4]).is_none());
    }
}
