use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smali::{is_valid_descriptor, MethodSignature};

/// The shipped database: every builder method of the keystore parameter-spec
/// API plus the provider-taking Java factories and AndroidX / KeyProtection
/// constructors that reach the keystore indirectly.
pub const DEFAULT_SIGNATURES_JSON: &str = include_str!("../../data/signatures.json");

#[derive(Debug, Error)]
pub enum SigDbError {
    #[error("duplicate api_id `{0}`")]
    DuplicateApiId(String),
    #[error("bad descriptor in `{api_id}`: {reason}")]
    BadDescriptor { api_id: String, reason: String },
    #[error("signature database is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read signature database: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueDomain {
    Boolean,
    Int,
    String,
    StringArray,
    Date,
    ByteArray,
    None,
}

impl ValueDomain {
    /// Domain implied by a parameter descriptor.
    pub fn from_descriptor(desc: &str) -> Self {
        match desc {
            "Z" => ValueDomain::Boolean,
            "I" | "S" | "B" | "J" | "C" => ValueDomain::Int,
            "Ljava/lang/String;" => ValueDomain::String,
            "[Ljava/lang/String;" => ValueDomain::StringArray,
            "Ljava/util/Date;" => ValueDomain::Date,
            "[B" => ValueDomain::ByteArray,
            _ => ValueDomain::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApiCategory {
    KeystoreInit,
    KeystoreParam,
    Strongbox,
    Auth,
    RandomizedEncryption,
    Attestation,
    JavaProvider,
    Other,
}

impl ApiCategory {
    /// Categories whose sites belong to a key-generation builder chain.
    pub fn is_builder_setter(self) -> bool {
        matches!(
            self,
            ApiCategory::KeystoreParam
                | ApiCategory::Strongbox
                | ApiCategory::Auth
                | ApiCategory::RandomizedEncryption
                | ApiCategory::Attestation
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiSignature {
    pub api_id: String,
    pub signature: MethodSignature,
    pub arg_of_interest: Option<usize>,
    pub value_domain: ValueDomain,
    pub category: ApiCategory,
}

impl ApiSignature {
    /// Whether the callee lives in the platform keystore package.
    pub fn is_keystore_api(&self) -> bool {
        self.signature.class_name.starts_with("android.security.keystore.")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawEntry {
    api_id: String,
    class: String,
    name: String,
    params: Vec<String>,
    #[serde(rename = "return")]
    ret: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    arg_of_interest: Option<usize>,
    value_domain: ValueDomain,
    category: ApiCategory,
}

/// Immutable set of signatures, indexed for exact lookup.
#[derive(Debug, Clone)]
pub struct SignatureDb {
    entries: Vec<ApiSignature>,
    by_signature: HashMap<MethodSignature, usize>,
    by_id: BTreeMap<String, usize>,
}

impl SignatureDb {
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_SIGNATURES_JSON).expect("shipped signature database is valid")
    }

    pub fn load(path: &Path) -> Result<Self, SigDbError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self, SigDbError> {
        let raw: Vec<RawEntry> = serde_json::from_str(text)?;
        let entries = raw.into_iter().map(validate).collect::<Result<Vec<_>, _>>()?;
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<ApiSignature>) -> Result<Self, SigDbError> {
        let mut by_id = BTreeMap::new();
        let mut by_signature = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if by_id.insert(e.api_id.clone(), i).is_some() {
                return Err(SigDbError::DuplicateApiId(e.api_id.clone()));
            }
            if by_signature.insert(e.signature.clone(), i).is_some() {
                return Err(SigDbError::BadDescriptor {
                    api_id: e.api_id.clone(),
                    reason: "signature listed twice".into(),
                });
            }
        }
        Ok(SignatureDb { entries, by_signature, by_id })
    }

    pub fn lookup(&self, sig: &MethodSignature) -> Option<&ApiSignature> {
        self.by_signature.get(sig).map(|&i| &self.entries[i])
    }

    pub fn get(&self, api_id: &str) -> Option<&ApiSignature> {
        self.by_id.get(api_id).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[ApiSignature] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn validate(raw: RawEntry) -> Result<ApiSignature, SigDbError> {
    let bad = |reason: String| SigDbError::BadDescriptor { api_id: raw.api_id.clone(), reason };
    if raw.class.is_empty() || raw.class.contains('/') {
        return Err(bad(format!("class `{}` must be dotted", raw.class)));
    }
    for p in raw.params.iter().chain(std::iter::once(&raw.ret)) {
        if !is_valid_descriptor(p) {
            return Err(bad(format!("`{p}` is not a descriptor")));
        }
    }
    if raw.params.iter().any(|p| p == "V") {
        return Err(bad("void parameter".into()));
    }
    match (raw.value_domain, raw.arg_of_interest) {
        (ValueDomain::None, _) => {}
        (_, None) => return Err(bad("value_domain requires arg_of_interest".into())),
        (_, Some(i)) if i >= raw.params.len() => {
            return Err(bad(format!("arg_of_interest {i} out of range")))
        }
        _ => {}
    }
    let signature = MethodSignature {
        class_name: raw.class,
        method_name: raw.name,
        param_descriptors: raw.params,
        return_descriptor: raw.ret,
    };
    Ok(ApiSignature {
        api_id: raw.api_id,
        signature,
        arg_of_interest: raw.arg_of_interest,
        value_domain: raw.value_domain,
        category: raw.category,
    })
}
