use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use walkdir::WalkDir;

use super::{parse_smali_file, AppIR, SmaliClass, SmaliError};

/// apktool output directories in dex order: `smali`, `smali_classes2`, `smali_classes3`, ...
pub fn smali_dirs(root: &Path) -> Result<Vec<PathBuf>, SmaliError> {
    let entries = fs::read_dir(root).map_err(|source| SmaliError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    let mut dirs: Vec<(u32, String, PathBuf)> = entries
        .filter_map(Result::ok)
        .filter(|e| e.path().is_dir())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            if !name.starts_with("smali") {
                return None;
            }
            let order = match name.strip_prefix("smali_classes") {
                Some(n) => n.parse().unwrap_or(u32::MAX),
                None if name == "smali" => 1,
                None => u32::MAX,
            };
            Some((order, name, e.path()))
        })
        .collect();
    dirs.sort();
    Ok(dirs.into_iter().map(|(_, _, p)| p).collect())
}

/// All `.smali` files of an app, grouped by dex directory and sorted within each.
pub fn list_smali_files(root: &Path) -> Result<Vec<PathBuf>, SmaliError> {
    let mut files = Vec::new();
    for dir in smali_dirs(root)? {
        let mut in_dir: Vec<PathBuf> = WalkDir::new(&dir)
            .into_iter()
            .filter_map(Result::ok)
            .filter(|e| e.file_type().is_file())
            .map(|e| e.into_path())
            .filter(|p| p.extension().is_some_and(|x| x == "smali"))
            .collect();
        in_dir.sort();
        files.extend(in_dir);
    }
    Ok(files)
}

/// Parses every class file of an app directory.
///
/// Per-file failures become warnings. Multi-dex directories are merged into a
/// single namespace; on a duplicate class name the first occurrence in dex
/// order wins.
pub fn parse_app_dir(root: &Path) -> Result<AppIR, SmaliError> {
    let files = list_smali_files(root)?;
    let parsed: Vec<(PathBuf, Result<SmaliClass, String>)> = files
        .par_iter()
        .map(|path| {
            let res = fs::read_to_string(path)
                .map_err(|e| e.to_string())
                .and_then(|text| parse_smali_file(&text).map_err(|e| e.to_string()));
            (path.clone(), res)
        })
        .collect();

    let mut classes = BTreeMap::new();
    let mut warnings = Vec::new();
    for (path, res) in parsed {
        let rel = path.strip_prefix(root).unwrap_or(&path).display().to_string();
        match res {
            Ok(class) => {
                if classes.contains_key(&class.name) {
                    warnings.push(format!("{rel}: duplicate class {} ignored", class.name));
                    continue;
                }
                classes.insert(class.name.clone(), class);
            }
            Err(e) => warnings.push(format!("{rel}: {e}")),
        }
    }
    for w in &warnings {
        log::warn!("{}: {w}", root.display());
    }
    if classes.is_empty() {
        return Err(SmaliError::EmptyApp(root.to_path_buf()));
    }
    let app_id = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| root.display().to_string());
    Ok(AppIR {
        app_id,
        classes,
        file_count: files.len(),
        warnings,
    })
}
