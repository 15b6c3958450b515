//! Key configuration assembly, lint rules, corpus statistics and report files.

mod keyconfig;
mod lint;
mod report;
mod stats;

use std::path::PathBuf;

use thiserror::Error;

pub use keyconfig::{
    assemble_key_configs, is_retained, keystore_cipher_request, normalize_cipher, reach_index, AssemblyReport,
    KeyConfig, KEYSTORE_PROVIDERS,
};
pub use lint::{evaluate_rule, lint_config, LintFinding, RuleId, Severity};
pub use report::{emit_report, read_report, render_report, REPORT_FILES};
pub use stats::{
    compute_stats, randomized_encryption_estimate, validity_bucket, AuthStats, CipherCount, CorpusStats, Fraction,
    GenreRow, HistogramBucket, PackageCount, PartySplit, PurposeStats, RandomizedEncryptionStats, StatsInput, Totals,
    VALIDITY_BUCKETS,
};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("corpus has no apps")]
    EmptyCorpus,
    #[error("cannot write {path}: {source}")]
    UnwritableOutput {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(String),
}
