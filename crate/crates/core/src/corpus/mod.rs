//! Per-app result files, the corpus manifest, and first/third-party package classification.

mod discover;
mod manifest;
mod obfuscation;
mod result;

use std::path::PathBuf;

use thiserror::Error;

pub use discover::{app_input, discover_apps, read_metadata, AppInput, CorpusListing, METADATA_FILE};
pub use manifest::{
    build_manifest, classify_packages, defined_package_refs, init_package_refs, party_map, read_manifest,
    write_manifest, ApkRecord, ClassifyDiagnostic, CorpusManifest, PackageEntry, PackageIndex, PackageRef, Party,
};
pub use obfuscation::{is_obfuscated, is_obfuscated_with, DEFAULT_MIN_COMPONENT};
pub use result::{
    load_all_results, load_result, persist_result, read_result_file, result_path, validate_app_id, AppMetadata,
    AppResult, ScanStatus, RESULT_SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: schema version {found}, expected {expected}")]
    SchemaVersionMismatch { path: PathBuf, found: u64, expected: u32 },
    #[error("{path}: corrupt result: {reason}")]
    CorruptResult { path: PathBuf, reason: String },
    #[error("invalid app id {0:?}")]
    InvalidAppId(String),
    #[error("app {0} appears more than once")]
    DuplicateApp(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
