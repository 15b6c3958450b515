use std::path::{Path, PathBuf};

use super::stats::{CorpusStats, Fraction};
use super::AnalyticsError;
use crate::fsutil::{to_json_bytes, write_atomic};

pub const REPORT_FILES: [&str; 6] = [
    "report.json",
    "metrics.csv",
    "top_packages.csv",
    "genre_breakdown.csv",
    "auth_histogram.csv",
    "cipher_distribution.csv",
];

fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>, csv::Error>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<(), csv::Error>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        fill(&mut w)?;
        w.flush()?;
    }
    Ok(buf)
}

fn frac_cols(f: &Fraction) -> [String; 3] {
    [f.numerator.to_string(), f.denominator.to_string(), f.percent_string()]
}

/// Renders every report file in memory, in `REPORT_FILES` order.
pub fn render_report(stats: &CorpusStats) -> Result<Vec<(&'static str, Vec<u8>)>, AnalyticsError> {
    let ser = |e: &dyn std::fmt::Display| AnalyticsError::Serialize(e.to_string());
    let json = to_json_bytes(stats).map_err(|e| ser(&e))?;
    let metrics = csv_bytes(&["metric", "numerator", "denominator", "percent"], |w| {
        for (name, f) in stats.fractions() {
            let [n, d, p] = frac_cols(&f);
            w.write_record([name, n, d, p])?;
        }
        Ok(())
    })
    .map_err(|e| ser(&e))?;
    let top = csv_bytes(&["rank", "package", "init_calls", "apps"], |w| {
        for (i, p) in stats.top_third_party.iter().enumerate() {
            w.write_record([(i + 1).to_string(), p.package.clone(), p.init_calls.to_string(), p.apps.to_string()])?;
        }
        Ok(())
    })
    .map_err(|e| ser(&e))?;
    let genres = csv_bytes(
        &["genre", "apps", "keystore_apps", "keystore_percent", "strongbox_apps", "strongbox_percent"],
        |w| {
            for g in &stats.genres {
                w.write_record([
                    g.genre.clone(),
                    g.apps.to_string(),
                    g.keystore.numerator.to_string(),
                    g.keystore.percent_string(),
                    g.strongbox.numerator.to_string(),
                    g.strongbox.percent_string(),
                ])?;
            }
            Ok(())
        },
    )
    .map_err(|e| ser(&e))?;
    let auth = csv_bytes(&["bucket", "count", "denominator", "percent"], |w| {
        for b in &stats.auth.validity_histogram {
            let [n, d, p] = frac_cols(&b.share);
            w.write_record([b.bucket.clone(), n, d, p])?;
        }
        Ok(())
    })
    .map_err(|e| ser(&e))?;
    let ciphers = csv_bytes(&["cipher", "count", "denominator", "percent"], |w| {
        for c in &stats.ciphers {
            let [n, d, p] = frac_cols(&c.share);
            w.write_record([c.cipher.clone(), n, d, p])?;
        }
        Ok(())
    })
    .map_err(|e| ser(&e))?;
    let files = [json, metrics, top, genres, auth, ciphers];
    Ok(REPORT_FILES.into_iter().zip(files).collect())
}

pub fn emit_report(stats: &CorpusStats, out_dir: &Path) -> Result<Vec<PathBuf>, AnalyticsError> {
    let mut written = Vec::new();
    for (name, bytes) in render_report(stats)? {
        let path = out_dir.join(name);
        write_atomic(&path, &bytes).map_err(|source| AnalyticsError::UnwritableOutput { path: path.clone(), source })?;
        written.push(path);
    }
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<CorpusStats, AnalyticsError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| AnalyticsError::UnwritableOutput { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| AnalyticsError::Serialize(e.to_string()))
}
