use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Key purpose flags as defined by the platform `KeyProperties` class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Purpose {
    Encrypt,
    Decrypt,
    Sign,
    Verify,
    WrapKey,
    AgreeKey,
    AttestKey,
    Unknown(u64),
}

pub const PURPOSE_BITS: &[(i64, Purpose)] = &[
    (1, Purpose::Encrypt),
    (2, Purpose::Decrypt),
    (4, Purpose::Sign),
    (8, Purpose::Verify),
    (32, Purpose::WrapKey),
    (64, Purpose::AgreeKey),
    (128, Purpose::AttestKey),
];

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Purpose::Encrypt => f.write_str("ENCRYPT"),
            Purpose::Decrypt => f.write_str("DECRYPT"),
            Purpose::Sign => f.write_str("SIGN"),
            Purpose::Verify => f.write_str("VERIFY"),
            Purpose::WrapKey => f.write_str("WRAP_KEY"),
            Purpose::AgreeKey => f.write_str("AGREE_KEY"),
            Purpose::AttestKey => f.write_str("ATTEST_KEY"),
            Purpose::Unknown(bit) => write!(f, "UNKNOWN({bit})"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DecodedPurposes {
    pub purposes: BTreeSet<Purpose>,
    pub warnings: Vec<String>,
}

pub fn decode_purposes(mask: i64) -> DecodedPurposes {
    let mut out = DecodedPurposes::default();
    if mask < 0 {
        out.warnings.push(format!("negative purpose mask {mask}"));
        return out;
    }
    if mask == 0 {
        out.warnings.push("purpose mask is 0".into());
        return out;
    }
    let mut rest = mask;
    for &(bit, p) in PURPOSE_BITS {
        if mask & bit != 0 {
            out.purposes.insert(p);
            rest &= !bit;
        }
    }
    for bit in 0..63 {
        if rest & (1 << bit) != 0 {
            out.purposes.insert(Purpose::Unknown(1u64 << bit));
            out.warnings.push(format!("unknown purpose bit {}", 1i64 << bit));
        }
    }
    out
}

/// `ENCRYPT|DECRYPT` style rendering, in flag order.
pub fn render_purposes(set: &BTreeSet<Purpose>) -> String {
    if set.is_empty() {
        return "NONE".into();
    }
    set.iter().map(ToString::to_string).collect::<Vec<_>>().join("|")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encrypt_decrypt() {
        let d = decode_purposes(3);
        assert_eq!(d.purposes, BTreeSet::from([Purpose::Encrypt, Purpose::Decrypt]));
        assert!(d.warnings.is_empty());
        assert_eq!(render_purposes(&d.purposes), "ENCRYPT|DECRYPT");
    }

    #[test]
    fn sign_verify() {
        assert_eq!(
            decode_purposes(12).purposes,
            BTreeSet::from([Purpose::Sign, Purpose::Verify])
        );
    }

    #[test]
    fn zero_mask_warns() {
        let d = decode_purposes(0);
        assert!(d.purposes.is_empty());
        assert_eq!(d.warnings.len(), 1);
    }

    #[test]
    fn unknown_bit_reported() {
        let d = decode_purposes(16 | 1);
        assert!(d.purposes.contains(&Purpose::Unknown(16)));
        assert!(d.purposes.contains(&Purpose::Encrypt));
    }

    proptest! {
        #[test]
        fn union_over_disjoint_masks(x in 0i64..256, split in 0i64..256) {
            let (a, b) = (x & split, x & !split);
            let mut expected = decode_purposes(a).purposes;
            expected.extend(decode_purposes(b).purposes);
            prop_assert_eq!(decode_purposes(a | b).purposes, expected);
        }
    }
}
