//! Keystore benchmark logs: per-group mean and spread, slowdown ratios and figure series.

mod figures;
mod log;
mod summary;

use thiserror::Error;

pub use figures::{emit_bench_outputs, figure_data, format_mib, render_table, FigureData, SummaryDocument};
pub use log::{
    parse_bench_log, write_bench_log, BenchSample, DeviceYears, GroupKey, KeystoreKind, Operation,
    DEFAULT_DEVICE_YEARS_CSV, LOG_HEADER,
};
pub use summary::{ratio, slowdown_ratios, summarize, BenchSummary, RatioRow, RatioTable, Welford, STD_ESTIMATOR};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unexpected log header: {0}")]
    BadHeader(String),
    #[error("bad row at line {line}: {reason}")]
    BadRow { line: u64, reason: String },
    #[error("duplicate sample at line {line}")]
    DuplicateSample { line: u64 },
    #[error("cannot write output: {0}")]
    Output(String),
}
