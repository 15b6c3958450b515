use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BenchError;

pub const LOG_HEADER: [&str; 8] = [
    "device",
    "device_year",
    "keystore_kind",
    "operation",
    "algorithm",
    "payload_bytes",
    "iteration",
    "elapsed_seconds",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeystoreKind {
    Software,
    Tee,
    Strongbox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Keygen,
    Encrypt,
    Sign,
}

macro_rules! text_enum {
    ($t:ty, $($s:literal => $v:path),+) => {
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($s => Ok($v),)+
                    _ => Err(format!("unknown value {s:?}")),
                }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self {
                    $($v => $s,)+
                })
            }
        }
    };
}

text_enum!(KeystoreKind, "software" => KeystoreKind::Software, "tee" => KeystoreKind::Tee, "strongbox" => KeystoreKind::Strongbox);
text_enum!(Operation, "keygen" => Operation::Keygen, "encrypt" => Operation::Encrypt, "sign" => Operation::Sign);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSample {
    pub device: String,
    pub device_year: Option<i32>,
    pub keystore_kind: KeystoreKind,
    pub operation: Operation,
    pub algorithm: String,
    pub payload_bytes: u64,
    pub iteration: u64,
    pub elapsed_seconds: f64,
}

/// Identifies a measurement series; samples sharing it are averaged together.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub device: String,
    pub keystore_kind: KeystoreKind,
    pub operation: Operation,
    pub algorithm: String,
    pub payload_bytes: u64,
}

impl BenchSample {
    pub fn group_key(&self) -> GroupKey {
        GroupKey {
            device: self.device.clone(),
            keystore_kind: self.keystore_kind,
            operation: self.operation,
            algorithm: self.algorithm.clone(),
            payload_bytes: self.payload_bytes,
        }
    }
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize, line: u64) -> Result<T, BenchError>
where
    T::Err: fmt::Display,
{
    rec[i].trim().parse().map_err(|e: T::Err| BenchError::BadRow { line, reason: format!("{}: {e}", LOG_HEADER[i]) })
}

pub fn parse_bench_log(text: &str) -> Result<Vec<BenchSample>, BenchError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| BenchError::BadHeader(e.to_string()))?.clone();
    if header.iter().map(str::trim).ne(LOG_HEADER) {
        return Err(BenchError::BadHeader(header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| BenchError::BadRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != LOG_HEADER.len() {
            return Err(BenchError::BadRow { line, reason: format!("expected 8 fields, found {}", rec.len()) });
        }
        let device = rec[0].trim().to_string();
        let algorithm = rec[4].trim().to_string();
        if device.is_empty() || algorithm.is_empty() {
            return Err(BenchError::BadRow { line, reason: "empty device or algorithm".into() });
        }
        let device_year = match rec[1].trim() {
            "" => None,
            _ => Some(field::<i32>(&rec, 1, line)?),
        };
        let elapsed: f64 = field(&rec, 7, line)?;
        if !(elapsed.is_finite() && elapsed > 0.0) {
            return Err(BenchError::BadRow { line, reason: format!("elapsed_seconds must be positive, got {elapsed}") });
        }
        let s = BenchSample {
            device,
            device_year,
            keystore_kind: field(&rec, 2, line)?,
            operation: field(&rec, 3, line)?,
            algorithm,
            payload_bytes: field(&rec, 5, line)?,
            iteration: field(&rec, 6, line)?,
            elapsed_seconds: elapsed,
        };
        if !seen.insert((s.group_key(), s.iteration)) {
            return Err(BenchError::DuplicateSample { line });
        }
        out.push(s);
    }
    Ok(out)
}

pub fn write_bench_log(samples: &[BenchSample]) -> Vec<u8> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(LOG_HEADER).expect("in-memory write");
        for s in samples {
            w.write_record([
                s.device.clone(),
                s.device_year.map(|y| y.to_string()).unwrap_or_default(),
                s.keystore_kind.to_string(),
                s.operation.to_string(),
                s.algorithm.clone(),
                s.payload_bytes.to_string(),
                s.iteration.to_string(),
                format!("{:?}", s.elapsed_seconds),
            ])
            .expect("in-memory write");
        }
        w.flush().expect("in-memory write");
    }
    buf
}

pub const DEFAULT_DEVICE_YEARS_CSV: &str = include_str!("../../data/device_years.csv");

/// Release year per device model, for devices whose log rows omit it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeviceYears(pub BTreeMap<String, i32>);

impl DeviceYears {
    pub fn builtin() -> Self {
        Self::from_csv(DEFAULT_DEVICE_YEARS_CSV).expect("shipped device years are valid")
    }

    pub fn from_csv(text: &str) -> Result<Self, BenchError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut map = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| BenchError::BadHeader(e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            let year = rec
                .get(1)
                .and_then(|y| y.trim().parse().ok())
                .ok_or(BenchError::BadRow { line, reason: "bad year".into() })?;
            map.insert(rec[0].trim().to_string(), year);
        }
        Ok(DeviceYears(map))
    }

    pub fn fill(&self, samples: &mut [BenchSample]) {
        for s in samples.iter_mut().filter(|s| s.device_year.is_none()) {
            s.device_year = self.0.get(&s.device).copied();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAD: &str = "device,device_year,keystore_kind,operation,algorithm,payload_bytes,iteration,elapsed_seconds\n";

    #[test]
    fn parses_rows() {
        let text = format!("{HEAD}Pixel 8,2023,tee,encrypt,AES-GCM-256,1048576,0,0.41\nPixel 8,,strongbox,encrypt,AES-GCM-256,1048576,0,15.4\n");
        let s = parse_bench_log(&text).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].device_year, Some(2023));
        assert_eq!(s[1].device_year, None);
        assert_eq!(s[1].keystore_kind, KeystoreKind::Strongbox);
    }

    #[test]
    fn rejects_bad_rows() {
        let text = format!("{HEAD}Pixel 8,2023,tee,encrypt,AES,1,0,0\n");
        assert!(matches!(parse_bench_log(&text), Err(BenchError::BadRow { line: 2, .. })));
        let text = format!("{HEAD}Pixel 8,2023,tpm,encrypt,AES,1,0,1\n");
        assert!(matches!(parse_bench_log(&text), Err(BenchError::BadRow { .. })));
        let text = format!("{HEAD}Pixel 8,2023,tee,encrypt,AES,1,0,1\nPixel 8,2023,tee,encrypt,AES,1,0,2\n");
        assert!(matches!(parse_bench_log(&text), Err(BenchError::DuplicateSample { line: 3 })));
        assert!(matches!(parse_bench_log("a,b\n"), Err(BenchError::BadHeader(_))));
    }

    #[test]
    fn write_then_parse() {
        let text = format!("{HEAD}Pixel 8,2023,tee,encrypt,AES,1,0,0.1\nPixel 7,,software,sign,EC,2,1,0.30000000000000004\n");
        let s = parse_bench_log(&text).unwrap();
        let again = parse_bench_log(std::str::from_utf8(&write_bench_log(&s)).unwrap()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn device_year_lookup() {
        let y = DeviceYears::builtin();
        assert_eq!(y.0.get("Pixel 8"), Some(&2023));
        assert_eq!(y.0.get("Pixel"), Some(&2016));
    }
}
