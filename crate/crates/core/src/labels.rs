//! Play Store data-safety labels and the sensitive/benign split.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CATEGORIES_JSON: &str = include_str!("../data/data_safety_categories.json");

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("malformed label record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("bad category table: {0}")]
    BadCategoryTable(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryTable {
    categories: Vec<Category>,
}

impl CategoryTable {
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_CATEGORIES_JSON).expect("shipped category table is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, LabelError> {
        let categories: Vec<Category> =
            serde_json::from_str(text).map_err(|e| LabelError::BadCategoryTable(e.to_string()))?;
        let names: BTreeSet<&str> = categories.iter().map(|c| c.name.as_str()).collect();
        if names.len() != categories.len() {
            return Err(LabelError::BadCategoryTable("duplicate category name".into()));
        }
        Ok(CategoryTable { categories })
    }

    pub fn load(path: &Path) -> Result<Self, LabelError> {
        let text = fs::read_to_string(path).map_err(|source| LabelError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn contains(&self, name: &str) -> bool {
        self.categories.iter().any(|c| c.name == name)
    }

    pub fn is_sensitive(&self, name: &str) -> bool {
        self.categories.iter().any(|c| c.name == name && !c.excluded)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSafetyLabel {
    pub app_id: String,
    pub submitted: bool,
    #[serde(default)]
    pub collected: BTreeSet<String>,
    #[serde(default)]
    pub shared: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityClass {
    Sensitive,
    Benign,
    NoLabel,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestedLabels {
    pub labels: Vec<DataSafetyLabel>,
    pub warnings: Vec<String>,
}

/// One JSON object per non-blank line. Unknown categories are dropped with a warning.
pub fn ingest_labels_str(text: &str, table: &CategoryTable) -> Result<IngestedLabels, LabelError> {
    let mut out = IngestedLabels::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut label: DataSafetyLabel = serde_json::from_str(line)
            .map_err(|e| LabelError::MalformedRecord { line: line_no, reason: e.to_string() })?;
        for (field, set) in [("collected", &mut label.collected), ("shared", &mut label.shared)] {
            let unknown: Vec<String> = set.iter().filter(|c| !table.contains(c)).cloned().collect();
            for u in unknown {
                out.warnings.push(format!("line {line_no}: {}: unknown {field} category {u:?}", label.app_id));
                set.remove(&u);
            }
        }
        if !label.submitted && !(label.collected.is_empty() && label.shared.is_empty()) {
            out.warnings.push(format!("line {line_no}: {}: categories on an unsubmitted label ignored", label.app_id));
            label.collected.clear();
            label.shared.clear();
        }
        out.labels.push(label);
    }
    Ok(out)
}

pub fn ingest_labels(path: &Path, table: &CategoryTable) -> Result<IngestedLabels, LabelError> {
    let text = fs::read_to_string(path).map_err(|source| LabelError::Io { path: path.to_path_buf(), source })?;
    ingest_labels_str(&text, table)
}

pub fn classify_sensitivity(label: &DataSafetyLabel, table: &CategoryTable) -> SensitivityClass {
    if !label.submitted {
        SensitivityClass::NoLabel
    } else if label.collected.iter().any(|c| table.is_sensitive(c)) {
        SensitivityClass::Sensitive
    } else {
        SensitivityClass::Benign
    }
}
