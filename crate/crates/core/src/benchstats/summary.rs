use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::log::{BenchSample, GroupKey, KeystoreKind, Operation};

pub const STD_ESTIMATOR: &str = "sample (n-1 denominator)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub device: String,
    pub device_year: Option<i32>,
    pub keystore_kind: KeystoreKind,
    pub operation: Operation,
    pub algorithm: String,
    pub payload_bytes: u64,
    pub n: usize,
    pub mean_seconds: f64,
    /// Absent for single-sample groups.
    pub std_seconds: Option<f64>,
}

impl BenchSummary {
    pub fn key(&self) -> GroupKey {
        GroupKey {
            device: self.device.clone(),
            keystore_kind: self.keystore_kind,
            operation: self.operation,
            algorithm: self.algorithm.clone(),
            payload_bytes: self.payload_bytes,
        }
    }

    /// `0.42 ± 0.06`, or just the mean when there is no spread estimate.
    pub fn render(&self) -> String {
        match self.std_seconds {
            Some(sd) => format!("{:.2} ± {:.2}", self.mean_seconds, sd),
            None => format!("{:.2}", self.mean_seconds),
        }
    }
}

/// Welford's streaming mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sample_std(&self) -> Option<f64> {
        (self.n >= 2).then(|| (self.m2 / (self.n - 1) as f64).sqrt())
    }
}

/// Per-group statistics, ordered by group key. Samples inside a group are
/// accumulated in iteration order so the result does not depend on row order.
pub fn summarize(samples: &[BenchSample]) -> Vec<BenchSummary> {
    let mut groups: BTreeMap<GroupKey, Vec<&BenchSample>> = BTreeMap::new();
    for s in samples {
        groups.entry(s.group_key()).or_default().push(s);
    }
    groups
        .into_iter()
        .map(|(key, mut rows)| {
            rows.sort_by(|a, b| a.iteration.cmp(&b.iteration).then(a.elapsed_seconds.total_cmp(&b.elapsed_seconds)));
            let mut w = Welford::default();
            for r in &rows {
                w.push(r.elapsed_seconds);
            }
            BenchSummary {
                device_year: rows.iter().find_map(|r| r.device_year),
                device: key.device,
                keystore_kind: key.keystore_kind,
                operation: key.operation,
                algorithm: key.algorithm,
                payload_bytes: key.payload_bytes,
                n: w.n(),
                mean_seconds: w.mean(),
                std_seconds: w.sample_std(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub device: String,
    pub operation: Operation,
    pub algorithm: String,
    pub payload_bytes: u64,
    pub keystore_kind: KeystoreKind,
    pub baseline_kind: KeystoreKind,
    pub ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioTable {
    pub rows: Vec<RatioRow>,
    pub warnings: Vec<String>,
}

pub fn ratio(group: &BenchSummary, baseline: &BenchSummary) -> f64 {
    group.mean_seconds / baseline.mean_seconds
}

/// Mean of every non-baseline group over the baseline group measured on the
/// same device, operation, algorithm and payload.
pub fn slowdown_ratios(summaries: &[BenchSummary], baseline_kind: KeystoreKind) -> RatioTable {
    let baselines: BTreeMap<GroupKey, &BenchSummary> = summaries
        .iter()
        .filter(|s| s.keystore_kind == baseline_kind)
        .map(|s| (s.key(), s))
        .collect();
    let mut table = RatioTable::default();
    for s in summaries.iter().filter(|s| s.keystore_kind != baseline_kind) {
        let key = GroupKey { keystore_kind: baseline_kind, ..s.key() };
        match baselines.get(&key) {
            Some(b) => table.rows.push(RatioRow {
                device: s.device.clone(),
                operation: s.operation,
                algorithm: s.algorithm.clone(),
                payload_bytes: s.payload_bytes,
                keystore_kind: s.keystore_kind,
                baseline_kind,
                ratio: ratio(s, b),
            }),
            None => table.warnings.push(format!(
                "no {baseline_kind} baseline for {} {} {} {} bytes ({})",
                s.device, s.operation, s.algorithm, s.payload_bytes, s.keystore_kind
            )),
        }
    }
    table
}
