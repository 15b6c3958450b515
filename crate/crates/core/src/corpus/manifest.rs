use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::obfuscation::is_obfuscated_with;
use super::result::{AppResult, ScanStatus};
use super::CorpusError;
use crate::fsutil::{to_json_bytes, write_atomic};
use crate::sigdb::{ApiCategory, SignatureDb};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Party {
    First,
    Third,
    ExcludedObfuscated,
}

/// One observation of a package inside an app.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PackageRef {
    pub package: String,
    pub app_id: String,
    pub developer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageEntry {
    pub name: String,
    pub obfuscated: bool,
    pub referencing_apps: BTreeSet<String>,
    pub developers: BTreeSet<String>,
    /// Absent when a referencing app has no developer on record.
    pub party: Option<Party>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClassifyDiagnostic {
    MissingDeveloper { app_id: String, package: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageIndex {
    pub entries: BTreeMap<String, PackageEntry>,
    pub diagnostics: Vec<ClassifyDiagnostic>,
}

impl PackageIndex {
    pub fn party(&self, package: &str) -> Option<Party> {
        self.entries.get(package).and_then(|e| e.party)
    }

    pub fn is_first_party(&self, package: &str) -> bool {
        self.party(package) == Some(Party::First)
    }
}

/// Party of every observed package. A function of the set of observations only.
pub fn classify_packages<'a, I>(refs: I, min_component: usize) -> PackageIndex
where
    I: IntoIterator<Item = &'a PackageRef>,
{
    let mut entries: BTreeMap<String, PackageEntry> = BTreeMap::new();
    let mut missing: BTreeSet<(String, String)> = BTreeSet::new();
    for r in refs {
        let e = entries.entry(r.package.clone()).or_insert_with(|| PackageEntry {
            name: r.package.clone(),
            obfuscated: is_obfuscated_with(&r.package, min_component),
            referencing_apps: BTreeSet::new(),
            developers: BTreeSet::new(),
            party: None,
        });
        e.referencing_apps.insert(r.app_id.clone());
        match &r.developer {
            Some(d) => {
                e.developers.insert(d.clone());
            }
            None => {
                missing.insert((r.package.clone(), r.app_id.clone()));
            }
        }
    }
    let mut diagnostics = Vec::new();
    for e in entries.values_mut() {
        let lacking: Vec<_> = missing.range((e.name.clone(), String::new())..).take_while(|(p, _)| *p == e.name).collect();
        e.party = if e.obfuscated {
            Some(Party::ExcludedObfuscated)
        } else if !lacking.is_empty() {
            diagnostics.extend(lacking.iter().map(|(p, a)| ClassifyDiagnostic::MissingDeveloper {
                app_id: a.clone(),
                package: p.clone(),
            }));
            None
        } else if e.developers.len() >= 2 {
            Some(Party::Third)
        } else {
            Some(Party::First)
        };
    }
    diagnostics.sort();
    PackageIndex { entries, diagnostics }
}

fn analysed(results: &[AppResult]) -> impl Iterator<Item = &AppResult> {
    results.iter().filter(|r| r.status == ScanStatus::Done)
}

/// Packages holding a key-generation constructor call, one observation per app.
pub fn init_package_refs(results: &[AppResult], db: &SignatureDb) -> BTreeSet<PackageRef> {
    let mut out = BTreeSet::new();
    for r in analysed(results) {
        for s in &r.call_sites {
            if db.get(&s.callee).is_some_and(|e| e.category == ApiCategory::KeystoreInit) {
                out.insert(PackageRef {
                    package: s.caller_package.clone(),
                    app_id: r.app_id.clone(),
                    developer: r.developer.clone(),
                });
            }
        }
    }
    out
}

/// Every package declared by any analysed app; used to decide which callers are first-party.
pub fn defined_package_refs(results: &[AppResult]) -> BTreeSet<PackageRef> {
    let mut out = BTreeSet::new();
    for r in analysed(results) {
        for p in &r.packages {
            out.insert(PackageRef { package: p.clone(), app_id: r.app_id.clone(), developer: r.developer.clone() });
        }
    }
    out
}

pub fn party_map(results: &[AppResult], min_component: usize) -> PackageIndex {
    classify_packages(&defined_package_refs(results), min_component)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApkRecord {
    pub app_id: String,
    pub developer: Option<String>,
    pub installs: Option<u64>,
    pub genre: Option<String>,
    pub version: Option<String>,
    pub status: ScanStatus,
    pub result_path: String,
    pub scanned_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub config_snapshot: BTreeMap<String, String>,
    pub apps: Vec<ApkRecord>,
    pub package_index: BTreeMap<String, PackageEntry>,
    #[serde(default)]
    pub diagnostics: Vec<ClassifyDiagnostic>,
}

pub fn build_manifest(
    results: &[AppResult],
    db: &SignatureDb,
    config_snapshot: BTreeMap<String, String>,
    min_component: usize,
) -> Result<CorpusManifest, CorpusError> {
    let mut seen = BTreeSet::new();
    for r in results {
        if !seen.insert(r.app_id.as_str()) {
            return Err(CorpusError::DuplicateApp(r.app_id.clone()));
        }
    }
    let mut apps: Vec<ApkRecord> = results
        .iter()
        .map(|r| ApkRecord {
            app_id: r.app_id.clone(),
            developer: r.developer.clone(),
            installs: r.installs,
            genre: r.genre.clone(),
            version: r.version.clone(),
            status: r.status,
            result_path: format!("results/{}.json", r.app_id),
            scanned_at: r.scanned_at.clone(),
        })
        .collect();
    apps.sort_by(|a, b| a.app_id.cmp(&b.app_id));
    let index = classify_packages(&init_package_refs(results, db), min_component);
    Ok(CorpusManifest { config_snapshot, apps, package_index: index.entries, diagnostics: index.diagnostics })
}

pub fn write_manifest(path: &Path, manifest: &CorpusManifest) -> Result<(), CorpusError> {
    let bytes = to_json_bytes(manifest).map_err(|e| CorpusError::CorruptResult {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    write_atomic(path, &bytes).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })
}

pub fn read_manifest(path: &Path) -> Result<CorpusManifest, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| CorpusError::CorruptResult { path: path.to_path_buf(), reason: e.to_string() })
}
