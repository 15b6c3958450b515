mod common;

use std::collections::BTreeSet;

use common::*;
use keyscan_core::labels::{classify_sensitivity, ingest_labels, CategoryTable, DataSafetyLabel, SensitivityClass};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Non-excluded category names, read straight from the shipped table file.
fn sensitive_names() -> BTreeSet<String> {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/data/data_safety_categories.json")).unwrap();
    let raw: Vec<serde_json::Value> = serde_json::from_str(&text).unwrap();
    raw.iter()
        .filter(|c| !c["excluded"].as_bool().unwrap())
        .map(|c| c["name"].as_str().unwrap().to_string())
        .collect()
}

fn all_names() -> Vec<String> {
    CategoryTable::builtin().categories().iter().map(|c| c.name.clone()).collect()
}

#[test]
fn fixture_labels_cover_every_class() {
    let table = CategoryTable::builtin();
    let ingested = ingest_labels(&fixtures().join("labels.jsonl"), &table).unwrap();
    assert_eq!(ingested.labels.len(), 6);
    assert_eq!(ingested.warnings.len(), 1);
    assert!(ingested.warnings[0].contains("Quantum info"));
    let class = |app: &str| {
        let l = ingested.labels.iter().find(|l| l.app_id == app).unwrap();
        classify_sensitivity(l, &table)
    };
    assert_eq!(class("com.alpha.wallet"), SensitivityClass::Sensitive);
    assert_eq!(class("com.alpha.notes"), SensitivityClass::Benign);
    assert_eq!(class("com.beta.game"), SensitivityClass::NoLabel);
    assert_eq!(class("com.gamma.pay"), SensitivityClass::Sensitive);
}

#[test]
fn table_has_excluded_and_sensitive_categories() {
    let sensitive = sensitive_names();
    let all = all_names();
    assert!(sensitive.len() < all.len());
    assert!(sensitive.contains("Financial info") && sensitive.contains("Location"));
    assert!(!sensitive.contains("App info and performance") && !sensitive.contains("Device or other IDs"));
}

fn random_label<R: Rng>(rng: &mut R, names: &[String]) -> DataSafetyLabel {
    let k = rng.random_range(0..=4);
    DataSafetyLabel {
        app_id: "app".into(),
        submitted: rng.random_bool(0.85),
        collected: (0..k).map(|_| names.choose(rng).unwrap().clone()).collect(),
        shared: BTreeSet::new(),
    }
}

#[test]
fn classification_matches_oracle_and_is_monotone() {
    let table = CategoryTable::builtin();
    let names = all_names();
    let sensitive = sensitive_names();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1abe1);
    let mut seen = BTreeSet::new();
    for _ in 0..500 {
        let label = random_label(&mut rng, &names);
        let want = if !label.submitted {
            SensitivityClass::NoLabel
        } else if label.collected.iter().any(|c| sensitive.contains(c)) {
            SensitivityClass::Sensitive
        } else {
            SensitivityClass::Benign
        };
        let got = classify_sensitivity(&label, &table);
        assert_eq!(got, want, "{label:?}");
        seen.insert(got);

        let mut grown = label.clone();
        grown.collected.insert(names.choose(&mut rng).unwrap().clone());
        let after = classify_sensitivity(&grown, &table);
        if got == SensitivityClass::Sensitive {
            assert_eq!(after, SensitivityClass::Sensitive, "{grown:?}");
        }
        // sharing alone never changes the class
        let mut shared = label.clone();
        shared.shared.extend(names.iter().cloned());
        assert_eq!(classify_sensitivity(&shared, &table), got);
    }
    assert_eq!(seen.len(), 3);
}
