use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::callgraph::ReachabilityResult;
use crate::fsutil::{to_json_bytes, write_atomic};
use crate::sigdb::{ApiCallSite, PrefilterReport};

pub const RESULT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanStatus {
    Done,
    Timeout,
    Error,
}

/// Store metadata shipped next to each decompiled app as `metadata.json`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppMetadata {
    #[serde(default)]
    pub app_id: Option<String>,
    #[serde(default)]
    pub developer: Option<String>,
    #[serde(default)]
    pub installs: Option<u64>,
    #[serde(default)]
    pub genre: Option<String>,
    #[serde(default)]
    pub version: Option<String>,
}

/// Everything the deep analysis produced for one app.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppResult {
    pub schema_version: u32,
    pub app_id: String,
    pub developer: Option<String>,
    pub installs: Option<u64>,
    pub genre: Option<String>,
    pub version: Option<String>,
    #[serde(default)]
    pub scanned_at: Option<String>,
    pub status: ScanStatus,
    pub prefilter: PrefilterReport,
    /// Packages declaring at least one class in the app.
    #[serde(default)]
    pub packages: Vec<String>,
    pub call_sites: Vec<ApiCallSite>,
    pub reachability: Vec<ReachabilityResult>,
    pub warnings: Vec<String>,
}

impl AppResult {
    pub fn new(app_id: &str, meta: &AppMetadata) -> Self {
        AppResult {
            schema_version: RESULT_SCHEMA_VERSION,
            app_id: app_id.to_string(),
            developer: meta.developer.clone(),
            installs: meta.installs,
            genre: meta.genre.clone(),
            version: meta.version.clone(),
            scanned_at: None,
            status: ScanStatus::Done,
            prefilter: PrefilterReport::default(),
            packages: Vec::new(),
            call_sites: Vec::new(),
            reachability: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn reachability_of(&self, callsite_id: &str) -> Option<&ReachabilityResult> {
        self.reachability.iter().find(|r| r.callsite_id == callsite_id)
    }
}

pub fn validate_app_id(app_id: &str) -> Result<(), CorpusError> {
    let ok = !app_id.is_empty()
        && !app_id.starts_with('.')
        && app_id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(CorpusError::InvalidAppId(app_id.to_string()))
    }
}

pub fn result_path(results_dir: &Path, app_id: &str) -> PathBuf {
    results_dir.join(format!("{app_id}.json"))
}

pub fn persist_result(results_dir: &Path, result: &AppResult) -> Result<PathBuf, CorpusError> {
    validate_app_id(&result.app_id)?;
    let path = result_path(results_dir, &result.app_id);
    let bytes = to_json_bytes(result).map_err(|e| CorpusError::CorruptResult {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    write_atomic(&path, &bytes).map_err(|source| CorpusError::Io { path: path.clone(), source })?;
    Ok(path)
}

pub fn read_result_file(path: &Path) -> Result<AppResult, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    let corrupt = |reason: String| CorpusError::CorruptResult { path: path.to_path_buf(), reason };
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    let version = raw
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt("missing schema_version".into()))?;
    if version != u64::from(RESULT_SCHEMA_VERSION) {
        return Err(CorpusError::SchemaVersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: RESULT_SCHEMA_VERSION,
        });
    }
    serde_json::from_value(raw).map_err(|e| corrupt(e.to_string()))
}

pub fn load_result(results_dir: &Path, app_id: &str) -> Result<AppResult, CorpusError> {
    validate_app_id(app_id)?;
    read_result_file(&result_path(results_dir, app_id))
}

/// Every `*.json` result under `results_dir`, ordered by app id.
pub fn load_all_results(results_dir: &Path) -> Result<Vec<AppResult>, CorpusError> {
    let entries = fs::read_dir(results_dir)
        .map_err(|source| CorpusError::Io { path: results_dir.to_path_buf(), source })?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.map_err(|source| CorpusError::Io { path: results_dir.to_path_buf(), source })?.path();
        if p.extension().is_some_and(|x| x == "json") && p.is_file() {
            paths.push(p);
        }
    }
    paths.sort();
    let mut out = paths.iter().map(|p| read_result_file(p)).collect::<Result<Vec<_>, _>>()?;
    out.sort_by(|a, b| a.app_id.cmp(&b.app_id));
    Ok(out)
}
