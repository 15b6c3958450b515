use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::log::{KeystoreKind, Operation};
use super::summary::{BenchSummary, RatioTable, STD_ESTIMATOR};
use super::BenchError;
use crate::fsutil::{to_json_bytes, write_atomic};

const MIB: f64 = 1_048_576.0;

/// Payload size in MiB with at most two decimals and no trailing zeros.
pub fn format_mib(bytes: u64) -> String {
    let s = format!("{:.2}", bytes as f64 / MIB);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// `size | kind1 | kind2` rows for one device/operation/algorithm, by payload.
pub fn render_table(
    summaries: &[BenchSummary],
    device: &str,
    operation: Operation,
    algorithm: &str,
    columns: &[KeystoreKind],
) -> Vec<String> {
    let mut cells: BTreeMap<u64, BTreeMap<KeystoreKind, String>> = BTreeMap::new();
    for s in summaries
        .iter()
        .filter(|s| s.device == device && s.operation == operation && s.algorithm == algorithm)
        .filter(|s| columns.contains(&s.keystore_kind))
    {
        cells.entry(s.payload_bytes).or_default().insert(s.keystore_kind, s.render());
    }
    cells
        .into_iter()
        .map(|(bytes, row)| {
            let mut parts = vec![format_mib(bytes)];
            parts.extend(columns.iter().map(|k| row.get(k).cloned().unwrap_or_else(|| "-".into())));
            parts.join(" | ")
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn csv_rows(header: &[&str], rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).expect("in-memory write");
        for r in rows {
            w.write_record(r).expect("in-memory write");
        }
        w.flush().expect("in-memory write");
    }
    buf
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FigureData {
    /// `(file name, contents)` in emission order.
    pub files: Vec<(String, Vec<u8>)>,
    pub warnings: Vec<String>,
}

/// Runtime-vs-payload series per keystore kind and the runtime-vs-year
/// series. Values are raw seconds; any log scaling is left to the plotter.
pub fn figure_data(summaries: &[BenchSummary]) -> FigureData {
    let mut out = FigureData::default();
    let kinds: BTreeSet<KeystoreKind> = summaries.iter().map(|s| s.keystore_kind).collect();
    for kind in kinds {
        let rows = summaries
            .iter()
            .filter(|s| s.keystore_kind == kind)
            .map(|s| {
                vec![
                    s.device.clone(),
                    s.operation.to_string(),
                    s.algorithm.clone(),
                    s.payload_bytes.to_string(),
                    format_mib(s.payload_bytes),
                    s.n.to_string(),
                    format!("{:?}", s.mean_seconds),
                    fmt_opt(s.std_seconds),
                ]
            })
            .collect();
        out.files.push((
            format!("payload_{kind}.csv"),
            csv_rows(
                &["device", "operation", "algorithm", "payload_bytes", "payload_mib", "n", "mean_seconds", "std_seconds"],
                rows,
            ),
        ));
    }
    let mut dated: Vec<&BenchSummary> = summaries.iter().filter(|s| s.device_year.is_some()).collect();
    if dated.is_empty() {
        out.warnings.push("no device years available; device_year.csv not written".into());
    } else {
        dated.sort_by(|a, b| {
            (a.keystore_kind, &a.operation, &a.algorithm, a.payload_bytes, a.device_year, &a.device)
                .cmp(&(b.keystore_kind, &b.operation, &b.algorithm, b.payload_bytes, b.device_year, &b.device))
        });
        let rows = dated
            .into_iter()
            .map(|s| {
                vec![
                    s.keystore_kind.to_string(),
                    s.operation.to_string(),
                    s.algorithm.clone(),
                    s.payload_bytes.to_string(),
                    s.device_year.map(|y| y.to_string()).unwrap_or_default(),
                    s.device.clone(),
                    s.n.to_string(),
                    format!("{:?}", s.mean_seconds),
                    fmt_opt(s.std_seconds),
                ]
            })
            .collect();
        out.files.push((
            "device_year.csv".into(),
            csv_rows(
                &["keystore_kind", "operation", "algorithm", "payload_bytes", "device_year", "device", "n", "mean_seconds", "std_seconds"],
                rows,
            ),
        ));
    }
    out
}

#[derive(Debug, Serialize)]
pub struct SummaryDocument<'a> {
    pub std_estimator: &'static str,
    pub summaries: &'a [BenchSummary],
    pub ratios: &'a RatioTable,
    pub warnings: &'a [String],
}

/// Writes `summary.json`, `ratios.csv`, `tables.txt` and the figure series into `out_dir`.
pub fn emit_bench_outputs(
    summaries: &[BenchSummary],
    ratios: &RatioTable,
    out_dir: &Path,
) -> Result<(Vec<PathBuf>, Vec<String>), BenchError> {
    let figures = figure_data(summaries);
    let mut warnings = ratios.warnings.clone();
    warnings.extend(figures.warnings.iter().cloned());
    let doc = SummaryDocument { std_estimator: STD_ESTIMATOR, summaries, ratios, warnings: &warnings };
    let mut files: Vec<(String, Vec<u8>)> =
        vec![("summary.json".into(), to_json_bytes(&doc).map_err(|e| BenchError::Output(e.to_string()))?)];
    files.push((
        "ratios.csv".into(),
        csv_rows(
            &["device", "operation", "algorithm", "payload_bytes", "keystore_kind", "baseline_kind", "ratio"],
            ratios
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.device.clone(),
                        r.operation.to_string(),
                        r.algorithm.clone(),
                        r.payload_bytes.to_string(),
                        r.keystore_kind.to_string(),
                        r.baseline_kind.to_string(),
                        format!("{:.4}", r.ratio),
                    ]
                })
                .collect(),
        ),
    ));
    let mut tables = String::new();
    let series: BTreeSet<(&str, Operation, &str)> =
        summaries.iter().map(|s| (s.device.as_str(), s.operation, s.algorithm.as_str())).collect();
    for (device, op, alg) in series {
        let kinds: BTreeSet<KeystoreKind> = summaries
            .iter()
            .filter(|s| s.device == device && s.operation == op && s.algorithm == alg)
            .map(|s| s.keystore_kind)
            .collect();
        let kinds: Vec<KeystoreKind> = kinds.into_iter().collect();
        let head: Vec<String> = kinds.iter().map(ToString::to_string).collect();
        tables.push_str(&format!("# {device} {op} {alg}\nMiB | {}\n", head.join(" | ")));
        for row in render_table(summaries, device, op, alg, &kinds) {
            tables.push_str(&row);
            tables.push('\n');
        }
        tables.push('\n');
    }
    files.push(("tables.txt".into(), tables.into_bytes()));
    files.extend(figures.files);
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = out_dir.join(&name);
        write_atomic(&path, &bytes).map_err(|e| BenchError::Output(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok((written, warnings))
}
