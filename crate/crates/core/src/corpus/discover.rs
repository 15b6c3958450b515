use std::fs;
use std::path::{Path, PathBuf};

use super::result::{validate_app_id, AppMetadata};
use super::CorpusError;

pub const METADATA_FILE: &str = "metadata.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppInput {
    pub app_id: String,
    pub dir: PathBuf,
    pub meta: AppMetadata,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusListing {
    pub apps: Vec<AppInput>,
    /// `(app_id, reason)` for directories left out of the corpus.
    pub skipped: Vec<(String, String)>,
}

pub fn read_metadata(app_dir: &Path) -> Result<AppMetadata, CorpusError> {
    let path = app_dir.join(METADATA_FILE);
    if !path.exists() {
        return Ok(AppMetadata::default());
    }
    let text = fs::read_to_string(&path).map_err(|source| CorpusError::Io { path: path.clone(), source })?;
    serde_json::from_str(&text).map_err(|e| CorpusError::CorruptResult { path, reason: e.to_string() })
}

/// Describes a single decompiled app directory.
pub fn app_input(dir: &Path) -> Result<AppInput, CorpusError> {
    let meta = read_metadata(dir)?;
    let app_id = match &meta.app_id {
        Some(id) => id.clone(),
        None => dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    validate_app_id(&app_id)?;
    Ok(AppInput { app_id, dir: dir.to_path_buf(), meta })
}

/// Each immediate subdirectory is one app. Apps whose recorded install count
/// is below `min_installs` are skipped; apps without one are kept.
pub fn discover_apps(corpus_dir: &Path, min_installs: u64) -> Result<CorpusListing, CorpusError> {
    let rd = fs::read_dir(corpus_dir).map_err(|source| CorpusError::Io { path: corpus_dir.to_path_buf(), source })?;
    let mut dirs = Vec::new();
    for e in rd {
        let p = e.map_err(|source| CorpusError::Io { path: corpus_dir.to_path_buf(), source })?.path();
        if p.is_dir() {
            dirs.push(p);
        }
    }
    dirs.sort();
    let mut listing = CorpusListing::default();
    for d in dirs {
        let input = app_input(&d)?;
        match input.meta.installs {
            Some(n) if n < min_installs => listing
                .skipped
                .push((input.app_id, format!("{n} installs below threshold {min_installs}"))),
            _ => listing.apps.push(input),
        }
    }
    let mut ids: Vec<&str> = listing.apps.iter().map(|a| a.app_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(CorpusError::DuplicateApp(w[0].to_string()));
    }
    listing.apps.sort_by(|a, b| a.app_id.cmp(&b.app_id));
    Ok(listing)
}
