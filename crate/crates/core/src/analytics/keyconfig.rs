use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::callgraph::ReachabilityResult;
use crate::sigdb::{ApiCallSite, ApiCategory, SignatureDb};
use crate::slicer::{decode_purposes, Purpose, ResolvedValue};
use crate::smali::MethodSignature;

pub const KEYSTORE_PROVIDERS: &[&str] = &["AndroidKeyStore", "AndroidKeyStoreBCWorkaround"];

/// Settings gathered for one key from a constructor call and the builder setters linked to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyConfig {
    pub app_id: String,
    /// Constructor call site id, or `<method>#partial` for setters with no constructor.
    pub key_id: String,
    pub method: MethodSignature,
    pub init_site: Option<String>,
    pub setter_sites: Vec<String>,
    pub alias: Option<String>,
    pub purpose_mask: Option<i64>,
    pub purposes: Option<BTreeSet<Purpose>>,
    pub key_size: Option<i64>,
    pub block_modes: Option<Vec<String>>,
    pub encryption_paddings: Option<Vec<String>>,
    pub signature_paddings: Option<Vec<String>>,
    pub digests: Option<Vec<String>>,
    pub strongbox: Option<bool>,
    pub auth_required: Option<bool>,
    pub auth_validity_seconds: Option<i64>,
    /// Authentication-related setters present on the key.
    pub auth_setters: BTreeSet<String>,
    /// Absent means the platform default (enabled).
    pub randomized_encryption: Option<bool>,
    pub attestation: bool,
    pub user_confirmation: Option<bool>,
    pub cipher: Option<String>,
    pub resolved_components: usize,
    pub total_components: usize,
    pub completeness: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl KeyConfig {
    pub fn empty(app_id: &str, method: &MethodSignature, key_id: String) -> Self {
        KeyConfig {
            app_id: app_id.to_string(),
            key_id,
            method: method.clone(),
            init_site: None,
            setter_sites: Vec::new(),
            alias: None,
            purpose_mask: None,
            purposes: None,
            key_size: None,
            block_modes: None,
            encryption_paddings: None,
            signature_paddings: None,
            digests: None,
            strongbox: None,
            auth_required: None,
            auth_validity_seconds: None,
            auth_setters: BTreeSet::new(),
            randomized_encryption: None,
            attestation: false,
            user_confirmation: None,
            cipher: None,
            resolved_components: 0,
            total_components: 0,
            completeness: 0.0,
            warnings: Vec::new(),
        }
    }

    pub fn is_partial(&self) -> bool {
        self.init_site.is_none()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssemblyReport {
    pub configs: Vec<KeyConfig>,
    /// Sites left out because reachability found no first-party caller.
    pub unreachable_sites: usize,
    /// Per api id, sites whose argument of interest stayed unresolved.
    pub unresolved_args: BTreeMap<String, usize>,
}

/// Whether a site takes part in default aggregation: reachable, cut off by
/// the node budget, or never queried.
pub fn is_retained(site: &ApiCallSite, reach: &BTreeMap<&str, &ReachabilityResult>) -> bool {
    reach.get(site.callsite_id.as_str()).is_none_or(|r| r.reachable || r.truncated)
}

pub fn reach_index(results: &[ReachabilityResult]) -> BTreeMap<&str, &ReachabilityResult> {
    results.iter().map(|r| (r.callsite_id.as_str(), r)).collect()
}

/// Upper-cased algorithm from a JCA algorithm or transformation string.
pub fn normalize_cipher(name: &str) -> String {
    let alg = name.split('/').next().unwrap_or(name).trim().to_ascii_uppercase();
    if let Some(rest) = alg.strip_prefix("HMAC") {
        return format!("HMAC-{}", rest.trim_start_matches('-'));
    }
    match alg.as_str() {
        "DESEDE" | "TRIPLEDES" | "3DES" => "3DES".into(),
        _ => alg,
    }
}

/// Algorithm requested from a keystore provider by a factory call, if both are constant.
pub fn keystore_cipher_request(site: &ApiCallSite, db: &SignatureDb) -> Option<String> {
    let entry = db.get(&site.callee)?;
    if entry.category != ApiCategory::JavaProvider || entry.signature.param_descriptors.len() != 2 {
        return None;
    }
    let provider = site.arg(1)?.as_str()?;
    if !KEYSTORE_PROVIDERS.contains(&provider) {
        return None;
    }
    site.arg(0)?.as_str().map(normalize_cipher)
}

fn str_list(v: &ResolvedValue) -> Option<Vec<String>> {
    v.as_str_array().map(<[String]>::to_vec)
}

/// Folds one resolved site into the config; returns whether its value was recovered.
fn apply(cfg: &mut KeyConfig, site: &ApiCallSite, db: &SignatureDb) -> bool {
    let Some(entry) = db.get(&site.callee) else { return false };
    let name = entry.signature.method_name.as_str();
    if entry.category == ApiCategory::Auth {
        cfg.auth_setters.insert(name.to_string());
    }
    let Some(idx) = entry.arg_of_interest else { return true };
    if entry.category == ApiCategory::KeystoreInit {
        cfg.alias = site.arg(0).and_then(|a| a.as_str()).map(String::from);
    }
    let Some(v) = site.arg(idx) else { return false };
    if !v.is_resolved() {
        return false;
    }
    match (entry.category, name) {
        (ApiCategory::KeystoreInit, _) => {
            if let Some(mask) = v.as_int() {
                let d = decode_purposes(mask);
                cfg.warnings.extend(d.warnings);
                cfg.purpose_mask = Some(mask);
                cfg.purposes = Some(d.purposes);
            }
        }
        (_, "setKeySize") => cfg.key_size = v.as_int(),
        (_, "setBlockModes") => cfg.block_modes = str_list(v),
        (_, "setEncryptionPaddings") => cfg.encryption_paddings = str_list(v),
        (_, "setSignaturePaddings") => cfg.signature_paddings = str_list(v),
        (_, "setDigests") => cfg.digests = str_list(v),
        (ApiCategory::Strongbox, _) => cfg.strongbox = v.as_bool(),
        (_, "setUserAuthenticationRequired") => cfg.auth_required = v.as_bool(),
        (_, "setUserAuthenticationValidityDurationSeconds" | "setUserAuthenticationParameters") => {
            cfg.auth_validity_seconds = v.as_int()
        }
        (ApiCategory::RandomizedEncryption, _) => cfg.randomized_encryption = v.as_bool(),
        (_, "setUserConfirmationRequired") => cfg.user_confirmation = v.as_bool(),
        _ => {}
    }
    true
}

fn finish(cfg: &mut KeyConfig, resolved: usize, total: usize) {
    cfg.resolved_components = resolved;
    cfg.total_components = total;
    cfg.completeness = if total == 0 { 0.0 } else { resolved as f64 / total as f64 };
}

/// Groups builder call sites into key configurations, one method at a time.
///
/// A setter joins a constructor when its receiver traces back to the same
/// allocation as exactly one constructor in the method. Remaining setters of
/// the method form a single partial configuration.
pub fn assemble_key_configs(
    app_id: &str,
    sites: &[ApiCallSite],
    reachability: &[ReachabilityResult],
    db: &SignatureDb,
) -> AssemblyReport {
    let reach = reach_index(reachability);
    let mut report = AssemblyReport::default();
    let mut by_method: BTreeMap<&MethodSignature, Vec<&ApiCallSite>> = BTreeMap::new();
    for s in sites {
        let Some(entry) = db.get(&s.callee) else { continue };
        if !is_retained(s, &reach) {
            report.unreachable_sites += 1;
            continue;
        }
        if let Some(i) = entry.arg_of_interest {
            if s.arg(i).is_some_and(|v| !v.is_resolved()) {
                *report.unresolved_args.entry(s.callee.clone()).or_default() += 1;
            }
        }
        by_method.entry(&s.caller).or_default().push(s);
    }
    for (method, mut group) in by_method {
        group.sort_by_key(|s| s.source_line);
        let category = |s: &ApiCallSite| db.get(&s.callee).map(|e| e.category);
        let inits: Vec<&ApiCallSite> =
            group.iter().copied().filter(|s| category(s) == Some(ApiCategory::KeystoreInit)).collect();
        let setters = group.iter().copied().filter(|s| category(s).is_some_and(ApiCategory::is_builder_setter));
        let mut linked: Vec<Vec<&ApiCallSite>> = vec![Vec::new(); inits.len()];
        let mut unlinked = Vec::new();
        for s in setters {
            let owners: Vec<usize> = match s.receiver_origin {
                Some(o) => (0..inits.len()).filter(|&i| inits[i].receiver_origin == Some(o)).collect(),
                None => Vec::new(),
            };
            match owners[..] {
                [only] => linked[only].push(s),
                _ => unlinked.push(s),
            }
        }
        let cipher = {
            let requests: Vec<Option<String>> = group
                .iter()
                .filter(|s| category(s) == Some(ApiCategory::JavaProvider))
                .map(|s| keystore_cipher_request(s, db))
                .filter(Option::is_some)
                .collect();
            match (&inits[..], &requests[..]) {
                ([_], [Some(c)]) => Some(c.clone()),
                _ => None,
            }
        };
        for (init, setters) in inits.iter().zip(linked) {
            let mut cfg = KeyConfig::empty(app_id, method, init.callsite_id.clone());
            cfg.init_site = Some(init.callsite_id.clone());
            let mut resolved = usize::from(apply(&mut cfg, init, db));
            for s in &setters {
                cfg.setter_sites.push(s.callsite_id.clone());
                resolved += usize::from(apply(&mut cfg, s, db));
                cfg.attestation |= category(s) == Some(ApiCategory::Attestation);
            }
            cfg.cipher = cipher.clone();
            finish(&mut cfg, resolved, setters.len() + 1);
            report.configs.push(cfg);
        }
        if !unlinked.is_empty() {
            let mut cfg = KeyConfig::empty(app_id, method, format!("{}#partial", method.to_smali_ref()));
            let mut resolved = 0;
            for s in &unlinked {
                cfg.setter_sites.push(s.callsite_id.clone());
                resolved += usize::from(apply(&mut cfg, s, db));
                cfg.attestation |= category(s) == Some(ApiCategory::Attestation);
            }
            // the missing constructor counts as an unresolved component
            finish(&mut cfg, resolved, unlinked.len() + 1);
            report.configs.push(cfg);
        }
    }
    report
}
