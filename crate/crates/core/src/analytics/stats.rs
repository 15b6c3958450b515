use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::keyconfig::{assemble_key_configs, is_retained, keystore_cipher_request, reach_index};
use super::lint::{lint_config, RuleId};
use super::AnalyticsError;
use crate::corpus::{AppResult, CorpusManifest, Party, ScanStatus};
use crate::labels::{classify_sensitivity, CategoryTable, DataSafetyLabel, SensitivityClass};
use crate::sigdb::{ApiCallSite, ApiCategory, SignatureDb};
use crate::slicer::{decode_purposes, render_purposes, Purpose};

/// A ratio kept as its two counts. Serialized with a derived percentage
/// rounded to two decimals; the percentage is ignored when reading back.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Fraction {
    pub numerator: u64,
    pub denominator: u64,
}

impl Fraction {
    pub fn new(numerator: u64, denominator: u64) -> Self {
        Fraction { numerator, denominator }
    }

    pub fn value(&self) -> Option<f64> {
        (self.denominator > 0).then(|| self.numerator as f64 / self.denominator as f64)
    }

    pub fn percent(&self) -> Option<f64> {
        self.value().map(|v| (v * 10_000.0).round() / 100.0)
    }

    pub fn percent_string(&self) -> String {
        self.value().map(|v| format!("{:.2}", v * 100.0)).unwrap_or_default()
    }
}

impl std::fmt::Display for Fraction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.value() {
            Some(_) => write!(f, "{}/{} ({}%)", self.numerator, self.denominator, self.percent_string()),
            None => write!(f, "{}/{}", self.numerator, self.denominator),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct FractionRepr {
    numerator: u64,
    denominator: u64,
    #[serde(default)]
    percent: Option<f64>,
}

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        FractionRepr { numerator: self.numerator, denominator: self.denominator, percent: self.percent() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = FractionRepr::deserialize(d)?;
        Ok(Fraction::new(r.numerator, r.denominator))
    }
}

/// The published-count form of the IND-CPA opt-out estimate: references to
/// the randomized-encryption setter, times the share of those disabling it,
/// over all constructor calls.
pub fn randomized_encryption_estimate(references: f64, disabled_share: f64, init_calls: f64) -> f64 {
    references * disabled_share / init_calls
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub apps: u64,
    pub done: u64,
    pub timeout: u64,
    pub error: u64,
    pub keystore_apps: u64,
    pub call_sites: u64,
    pub retained_sites: u64,
    pub unreachable_sites: u64,
    pub truncated_sites: u64,
    pub init_sites: u64,
    pub retained_init_sites: u64,
    pub key_configs: u64,
    pub partial_key_configs: u64,
    pub complete_key_configs: u64,
    pub labelled_apps: u64,
    pub sensitive_apps: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartySplit {
    /// Over constructor calls in non-obfuscated packages with a known party.
    pub third: Fraction,
    pub first: Fraction,
    /// Over all constructor calls.
    pub excluded_obfuscated: Fraction,
    /// Calls whose package party was withheld for missing developer data.
    pub withheld: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageCount {
    pub package: String,
    pub init_calls: u64,
    pub apps: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurposeStats {
    pub encrypt_decrypt_only: Fraction,
    pub sign_verify_only: Fraction,
    pub other: Fraction,
    pub by_set: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBucket {
    pub bucket: String,
    pub share: Fraction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthStats {
    /// Resolved-true `setUserAuthenticationRequired` calls over constructor calls.
    pub auth_required: Fraction,
    pub validity_histogram: Vec<HistogramBucket>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomizedEncryptionStats {
    /// Resolved arguments that disable randomized encryption.
    pub disabled_of_resolved: Fraction,
    /// references x disabled share / constructor calls.
    pub disabled_estimate: Fraction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CipherCount {
    pub cipher: String,
    pub share: Fraction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenreRow {
    pub genre: String,
    pub apps: u64,
    pub keystore: Fraction,
    pub strongbox: Fraction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub totals: Totals,
    pub keystore_reference: Fraction,
    pub keystore_reference_sensitive: Option<Fraction>,
    pub strongbox_reference: Fraction,
    pub strongbox_args_resolved: Fraction,
    pub strongbox_true: Fraction,
    pub strongbox_false: Fraction,
    pub apps_strongbox_requested: Fraction,
    pub apps_strongbox_unresolved_only: u64,
    pub init_party: PartySplit,
    pub top_third_party: Vec<PackageCount>,
    pub purposes: PurposeStats,
    pub auth: AuthStats,
    pub randomized_encryption: RandomizedEncryptionStats,
    pub attestation: Fraction,
    pub ciphers: Vec<CipherCount>,
    pub genres: Vec<GenreRow>,
    pub lint: BTreeMap<RuleId, u64>,
    pub unresolved_args: BTreeMap<String, u64>,
}

impl CorpusStats {
    /// Every fraction with a stable dotted name, in report order.
    pub fn fractions(&self) -> Vec<(String, Fraction)> {
        let mut out = vec![
            ("keystore_reference".to_string(), self.keystore_reference),
        ];
        if let Some(f) = self.keystore_reference_sensitive {
            out.push(("keystore_reference_sensitive".into(), f));
        }
        out.extend([
            ("strongbox_reference".into(), self.strongbox_reference),
            ("strongbox_args_resolved".into(), self.strongbox_args_resolved),
            ("strongbox_true".into(), self.strongbox_true),
            ("strongbox_false".into(), self.strongbox_false),
            ("apps_strongbox_requested".into(), self.apps_strongbox_requested),
            ("init_party.third".into(), self.init_party.third),
            ("init_party.first".into(), self.init_party.first),
            ("init_party.excluded_obfuscated".into(), self.init_party.excluded_obfuscated),
            ("purposes.encrypt_decrypt_only".into(), self.purposes.encrypt_decrypt_only),
            ("purposes.sign_verify_only".into(), self.purposes.sign_verify_only),
            ("purposes.other".into(), self.purposes.other),
            ("auth.auth_required".into(), self.auth.auth_required),
        ]);
        for b in &self.auth.validity_histogram {
            out.push((format!("auth.validity.{}", b.bucket), b.share));
        }
        out.extend([
            ("randomized_encryption.disabled_of_resolved".into(), self.randomized_encryption.disabled_of_resolved),
            ("randomized_encryption.disabled_estimate".into(), self.randomized_encryption.disabled_estimate),
            ("attestation".into(), self.attestation),
        ]);
        for c in &self.ciphers {
            out.push((format!("cipher.{}", c.cipher), c.share));
        }
        for g in &self.genres {
            out.push((format!("genre.{}.keystore", g.genre), g.keystore));
            out.push((format!("genre.{}.strongbox", g.genre), g.strongbox));
        }
        out
    }
}

pub struct StatsInput<'a> {
    pub results: &'a [AppResult],
    pub manifest: &'a CorpusManifest,
    pub db: &'a SignatureDb,
    pub labels: Option<&'a [DataSafetyLabel]>,
    pub categories: &'a CategoryTable,
    pub top_n: usize,
}

pub const VALIDITY_BUCKETS: [&str; 5] = ["per-use", "le-3s", "5s", "1h", "other"];

pub fn validity_bucket(seconds: i64) -> &'static str {
    match seconds {
        s if s <= 0 => "per-use",
        1..=3 => "le-3s",
        5 => "5s",
        3600 => "1h",
        _ => "other",
    }
}

#[derive(Default)]
struct SiteCounts {
    init: u64,
    strongbox_total: u64,
    strongbox_true: u64,
    strongbox_false: u64,
    auth_true: u64,
    validity: BTreeMap<&'static str, u64>,
    re_total: u64,
    re_resolved: u64,
    re_false: u64,
    attestation: u64,
    purposes_resolved: u64,
    enc_dec: u64,
    sign_verify: u64,
    by_set: BTreeMap<String, u64>,
    ciphers: BTreeMap<String, u64>,
}

fn method_name<'a>(db: &'a SignatureDb, s: &ApiCallSite) -> Option<(&'a str, ApiCategory)> {
    db.get(&s.callee).map(|e| (e.signature.method_name.as_str(), e.category))
}

fn count_site(c: &mut SiteCounts, s: &ApiCallSite, db: &SignatureDb) {
    let Some((name, category)) = method_name(db, s) else { return };
    let arg0 = s.arg(0);
    match (category, name) {
        (ApiCategory::KeystoreInit, _) => {
            c.init += 1;
            if let Some(mask) = s.arg(1).and_then(|v| v.as_int()) {
                let set = decode_purposes(mask).purposes;
                c.purposes_resolved += 1;
                let within = |allowed: &[Purpose]| !set.is_empty() && set.iter().all(|p| allowed.contains(p));
                if within(&[Purpose::Encrypt, Purpose::Decrypt]) {
                    c.enc_dec += 1;
                } else if within(&[Purpose::Sign, Purpose::Verify]) {
                    c.sign_verify += 1;
                }
                *c.by_set.entry(render_purposes(&set)).or_default() += 1;
            }
        }
        (ApiCategory::Strongbox, _) => {
            c.strongbox_total += 1;
            match arg0.and_then(|v| v.as_bool()) {
                Some(true) => c.strongbox_true += 1,
                Some(false) => c.strongbox_false += 1,
                None => {}
            }
        }
        (_, "setUserAuthenticationRequired") => {
            if arg0.and_then(|v| v.as_bool()) == Some(true) {
                c.auth_true += 1;
            }
        }
        (_, "setUserAuthenticationValidityDurationSeconds" | "setUserAuthenticationParameters") => {
            if let Some(secs) = arg0.and_then(|v| v.as_int()) {
                *c.validity.entry(validity_bucket(secs)).or_default() += 1;
            }
        }
        (ApiCategory::RandomizedEncryption, _) => {
            c.re_total += 1;
            if let Some(b) = arg0.and_then(|v| v.as_bool()) {
                c.re_resolved += 1;
                c.re_false += u64::from(!b);
            }
        }
        (ApiCategory::Attestation, _) => c.attestation += 1,
        (ApiCategory::JavaProvider, _) => {
            if let Some(cipher) = keystore_cipher_request(s, db) {
                *c.ciphers.entry(cipher).or_default() += 1;
            }
        }
        _ => {}
    }
}

pub fn compute_stats(input: &StatsInput<'_>) -> Result<CorpusStats, AnalyticsError> {
    let results = input.results;
    if results.is_empty() {
        return Err(AnalyticsError::EmptyCorpus);
    }
    let db = input.db;
    let mut st = CorpusStats::default();
    let t = &mut st.totals;
    t.apps = results.len() as u64;

    let sensitivity: Option<BTreeMap<&str, SensitivityClass>> = input.labels.map(|labels| {
        labels.iter().map(|l| (l.app_id.as_str(), classify_sensitivity(l, input.categories))).collect()
    });

    let mut counts = SiteCounts::default();
    let mut keystore_ref = 0;
    let mut sensitive_ref = 0;
    let mut strongbox_apps = 0;
    let mut requested_apps = 0;
    let mut party_counts: BTreeMap<Option<Party>, u64> = BTreeMap::new();
    let mut package_calls: BTreeMap<&str, u64> = BTreeMap::new();
    let mut genres: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();

    for r in results {
        match r.status {
            ScanStatus::Done => t.done += 1,
            ScanStatus::Timeout => t.timeout += 1,
            ScanStatus::Error => t.error += 1,
        }
        let matched = r.prefilter.matched;
        keystore_ref += u64::from(matched);
        if let Some(class) = sensitivity.as_ref().and_then(|m| m.get(r.app_id.as_str())) {
            t.labelled_apps += 1;
            if *class == SensitivityClass::Sensitive {
                t.sensitive_apps += 1;
                sensitive_ref += u64::from(matched);
            }
        }
        let mut app_strongbox = false;
        let mut app_keystore = false;
        let (mut sb_true, mut sb_resolved) = (false, false);
        if r.status == ScanStatus::Done {
            let reach = reach_index(&r.reachability);
            for s in &r.call_sites {
                let Some(entry) = db.get(&s.callee) else { continue };
                t.call_sites += 1;
                if entry.category == ApiCategory::KeystoreInit {
                    t.init_sites += 1;
                    let party = input.manifest.package_index.get(&s.caller_package).and_then(|e| e.party);
                    *party_counts.entry(party).or_default() += 1;
                    if party == Some(Party::Third) {
                        *package_calls.entry(s.caller_package.as_str()).or_default() += 1;
                    }
                }
                if !is_retained(s, &reach) {
                    t.unreachable_sites += 1;
                    continue;
                }
                t.retained_sites += 1;
                if reach.get(s.callsite_id.as_str()).is_some_and(|x| x.truncated && !x.reachable) {
                    t.truncated_sites += 1;
                }
                if let Some(i) = entry.arg_of_interest {
                    if s.arg(i).is_some_and(|v| !v.is_resolved()) {
                        *st.unresolved_args.entry(s.callee.clone()).or_default() += 1;
                    }
                }
                app_keystore |= entry.is_keystore_api();
                if entry.category == ApiCategory::Strongbox {
                    app_strongbox = true;
                    match s.arg(0).and_then(|v| v.as_bool()) {
                        Some(b) => {
                            sb_resolved = true;
                            sb_true |= b;
                        }
                        None => {}
                    }
                }
                count_site(&mut counts, s, db);
            }
            let assembly = assemble_key_configs(&r.app_id, &r.call_sites, &r.reachability, db);
            for cfg in &assembly.configs {
                t.key_configs += 1;
                t.partial_key_configs += u64::from(cfg.is_partial());
                t.complete_key_configs += u64::from(cfg.resolved_components == cfg.total_components);
                for f in lint_config(cfg) {
                    *st.lint.entry(f.rule_id).or_default() += 1;
                }
            }
        }
        t.keystore_apps += u64::from(app_keystore);
        strongbox_apps += u64::from(app_keystore && app_strongbox);
        requested_apps += u64::from(sb_true);
        st.apps_strongbox_unresolved_only += u64::from(app_strongbox && !sb_resolved);
        let g = genres.entry(r.genre.clone().unwrap_or_else(|| "unknown".into())).or_default();
        g.0 += 1;
        g.1 += u64::from(matched);
        g.2 += u64::from(app_strongbox);
    }
    t.retained_init_sites = counts.init;
    let t = st.totals.clone();

    st.keystore_reference = Fraction::new(keystore_ref, t.apps);
    st.keystore_reference_sensitive = sensitivity.map(|_| Fraction::new(sensitive_ref, t.sensitive_apps));
    st.strongbox_reference = Fraction::new(strongbox_apps, t.keystore_apps);
    let sb_resolved = counts.strongbox_true + counts.strongbox_false;
    st.strongbox_args_resolved = Fraction::new(sb_resolved, counts.strongbox_total);
    st.strongbox_true = Fraction::new(counts.strongbox_true, sb_resolved);
    st.strongbox_false = Fraction::new(counts.strongbox_false, sb_resolved);
    st.apps_strongbox_requested = Fraction::new(requested_apps, t.apps);

    let first = party_counts.get(&Some(Party::First)).copied().unwrap_or(0);
    let third = party_counts.get(&Some(Party::Third)).copied().unwrap_or(0);
    let excluded = party_counts.get(&Some(Party::ExcludedObfuscated)).copied().unwrap_or(0);
    st.init_party = PartySplit {
        third: Fraction::new(third, first + third),
        first: Fraction::new(first, first + third),
        excluded_obfuscated: Fraction::new(excluded, t.init_sites),
        withheld: party_counts.get(&None).copied().unwrap_or(0),
    };

    let mut top: Vec<PackageCount> = package_calls
        .into_iter()
        .map(|(p, n)| PackageCount {
            package: p.to_string(),
            init_calls: n,
            apps: input.manifest.package_index.get(p).map_or(0, |e| e.referencing_apps.len() as u64),
        })
        .collect();
    top.sort_by(|a, b| b.init_calls.cmp(&a.init_calls).then_with(|| a.package.cmp(&b.package)));
    top.truncate(input.top_n);
    st.top_third_party = top;

    let pr = counts.purposes_resolved;
    st.purposes = PurposeStats {
        encrypt_decrypt_only: Fraction::new(counts.enc_dec, pr),
        sign_verify_only: Fraction::new(counts.sign_verify, pr),
        other: Fraction::new(pr - counts.enc_dec - counts.sign_verify, pr),
        by_set: counts.by_set,
    };

    let with_duration: u64 = counts.validity.values().sum();
    st.auth = AuthStats {
        auth_required: Fraction::new(counts.auth_true, counts.init),
        validity_histogram: VALIDITY_BUCKETS
            .iter()
            .map(|b| HistogramBucket {
                bucket: b.to_string(),
                share: Fraction::new(counts.validity.get(b).copied().unwrap_or(0), with_duration),
            })
            .collect(),
    };

    st.randomized_encryption = RandomizedEncryptionStats {
        disabled_of_resolved: Fraction::new(counts.re_false, counts.re_resolved),
        disabled_estimate: Fraction::new(counts.re_total * counts.re_false, counts.re_resolved * counts.init),
    };
    st.attestation = Fraction::new(counts.attestation, counts.init);

    let cipher_total: u64 = counts.ciphers.values().sum();
    let mut ciphers: Vec<CipherCount> = counts
        .ciphers
        .into_iter()
        .map(|(cipher, n)| CipherCount { cipher, share: Fraction::new(n, cipher_total) })
        .collect();
    ciphers.sort_by(|a, b| b.share.numerator.cmp(&a.share.numerator).then_with(|| a.cipher.cmp(&b.cipher)));
    st.ciphers = ciphers;

    st.genres = genres
        .into_iter()
        .map(|(genre, (apps, ks, sb))| GenreRow {
            genre,
            apps,
            keystore: Fraction::new(ks, apps),
            strongbox: Fraction::new(sb, apps),
        })
        .collect();
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraction_percent_and_round_trip() {
        let f = Fraction::new(1, 4);
        assert_eq!(f.percent(), Some(25.0));
        assert_eq!(f.percent_string(), "25.00");
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(json, r#"{"numerator":1,"denominator":4,"percent":25.0}"#);
        assert_eq!(serde_json::from_str::<Fraction>(&json).unwrap(), f);
        assert_eq!(Fraction::new(0, 0).percent(), None);
    }

    #[test]
    fn published_estimate() {
        let e = randomized_encryption_estimate(30_245.0, 0.7794, 278_567.0);
        assert!((e * 100.0 - 8.46).abs() < 0.01, "{e}");
    }

    #[test]
    fn buckets() {
        assert_eq!(validity_bucket(-1), "per-use");
        assert_eq!(validity_bucket(0), "per-use");
        assert_eq!(validity_bucket(3), "le-3s");
        assert_eq!(validity_bucket(4), "other");
        assert_eq!(validity_bucket(5), "5s");
        assert_eq!(validity_bucket(3600), "1h");
    }
}
