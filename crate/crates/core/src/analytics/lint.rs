use std::fmt;

use serde::{Deserialize, Serialize};

use super::keyconfig::KeyConfig;
use crate::slicer::Purpose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleId {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
}

impl RuleId {
    pub const ALL: [RuleId; 6] = [RuleId::R1, RuleId::R2, RuleId::R3, RuleId::R4, RuleId::R5, RuleId::R6];

    pub fn severity(self) -> Severity {
        match self {
            RuleId::R1 | RuleId::R3 => Severity::High,
            RuleId::R2 | RuleId::R4 | RuleId::R5 => Severity::Info,
            RuleId::R6 => Severity::Warn,
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    Info,
    Warn,
    High,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LintFinding {
    pub app_id: String,
    pub key_id: String,
    pub rule_id: RuleId,
    pub severity: Severity,
    pub message: String,
}

const LEGACY_CIPHERS: &[&str] = &["3DES", "HMAC-SHA1"];

fn has_any(cfg: &KeyConfig, wanted: &[Purpose]) -> bool {
    cfg.purposes.as_ref().is_some_and(|p| wanted.iter().any(|w| p.contains(w)))
}

/// Message for `rule` when it fires on `cfg`.
pub fn evaluate_rule(rule: RuleId, cfg: &KeyConfig) -> Option<String> {
    match rule {
        RuleId::R1 => (cfg.randomized_encryption == Some(false))
            .then(|| "randomized encryption disabled; ciphertexts are no longer IND-CPA".to_string()),
        RuleId::R2 => (cfg.strongbox == Some(false)).then(|| "explicitly opts out of StrongBox".to_string()),
        RuleId::R3 => cfg
            .cipher
            .as_deref()
            .filter(|c| LEGACY_CIPHERS.contains(c))
            .map(|c| format!("legacy cipher {c}")),
        RuleId::R4 => cfg
            .auth_validity_seconds
            .filter(|s| (1..=3).contains(s))
            .map(|s| format!("authentication valid for only {s} s")),
        RuleId::R5 => {
            (cfg.user_confirmation == Some(false)).then(|| "user confirmation explicitly disabled".to_string())
        }
        RuleId::R6 => {
            let cipher = cfg.cipher.as_deref()?;
            let crypt = [Purpose::Encrypt, Purpose::Decrypt];
            let sign = [Purpose::Sign, Purpose::Verify];
            let bad = match cipher {
                "EC" => has_any(cfg, &crypt),
                c if c.starts_with("HMAC") => has_any(cfg, &crypt),
                "AES" | "3DES" => has_any(cfg, &sign),
                _ => false,
            };
            bad.then(|| {
                let p = cfg.purposes.as_ref().map(crate::slicer::render_purposes).unwrap_or_default();
                format!("{cipher} key cannot serve purposes {p}")
            })
        }
    }
}

/// Every rule is evaluated on its own; findings come back in rule order.
pub fn lint_config(cfg: &KeyConfig) -> Vec<LintFinding> {
    RuleId::ALL
        .iter()
        .filter_map(|&rule| {
            evaluate_rule(rule, cfg).map(|message| LintFinding {
                app_id: cfg.app_id.clone(),
                key_id: cfg.key_id.clone(),
                rule_id: rule,
                severity: rule.severity(),
                message,
            })
        })
        .collect()
}
