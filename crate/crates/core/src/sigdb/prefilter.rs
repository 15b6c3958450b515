use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::smali::list_smali_files;

/// Smali path form of the keystore package plus the two provider strings.
pub const DEFAULT_NEEDLES: &[&str] = &[
    "android/security/keystore",
    "AndroidKeyStore",
    "AndroidKeyStoreBCWorkaround",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefilterHit {
    pub needle: String,
    pub file: String,
    pub line: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefilterReport {
    pub matched: bool,
    pub hits: Vec<PrefilterHit>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Case-sensitive substring search over the raw smali text, before any parsing.
///
/// Over-approximates: a bare provider string with no keystore invoke still matches.
pub fn keyword_prefilter<S: AsRef<str>>(app_dir: &Path, needles: &[S]) -> PrefilterReport {
    let mut report = PrefilterReport::default();
    let files = match list_smali_files(app_dir) {
        Ok(f) => f,
        Err(e) => {
            report.warnings.push(e.to_string());
            return report;
        }
    };
    for path in files {
        let rel = path
            .strip_prefix(app_dir)
            .unwrap_or(&path)
            .to_string_lossy()
            .replace('\\', "/");
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                report.warnings.push(format!("{rel}: {e}"));
                continue;
            }
        };
        for (i, line) in text.lines().enumerate() {
            for needle in needles {
                let needle = needle.as_ref();
                if needle.is_empty() {
                    continue;
                }
                for _ in line.match_indices(needle) {
                    report.hits.push(PrefilterHit {
                        needle: needle.to_string(),
                        file: rel.clone(),
                        line: i as u32 + 1,
                    });
                }
            }
        }
    }
    report.matched = !report.hits.is_empty();
    report
}
