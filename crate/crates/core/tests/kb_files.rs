mod common;

use std::collections::BTreeMap;

use bmbe::fixtures::{self, kb_path};
use bmbe::kb::{
    build_from_records, import_elicited, kb_stats, load_kb, match_features, BuildOptions, ElicitedEntry, FeatureSpec,
    KbError, KbSchema, PriorStrategy, Record, RecordValue, SchemaDisease,
};
use bmbe::kb::{Feature, KnowledgeBase};
use common::random_kb_in;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn shipped_files_match_generators_and_round_trip() {
    for (name, generated) in fixtures::shipped_kbs() {
        let loaded = load_kb(kb_path(name)).unwrap();
        assert_eq!(loaded.content_hash(), generated.content_hash(), "{name}");
        let again = KnowledgeBase::from_json_str(&loaded.to_json_pretty()).unwrap();
        assert_eq!(again.content_hash(), loaded.content_hash(), "{name}");
    }
}

#[test]
fn ddx_shaped_dimensions() {
    let kb = load_kb(kb_path("ddx_shaped")).unwrap();
    assert_eq!(kb.n_diseases(), 49);
    assert_eq!(kb.n_features(), 314);
    assert_eq!(kb.features().iter().map(|f| f.values.len()).max(), Some(10));
}

#[test]
fn count_sum_violation_names_the_pair() {
    let text = r#"{
        "version": 1,
        "diseases": [{"id": "d1", "name": "One", "prior_count": 1}, {"id": "d2", "name": "Two", "prior_count": 1}],
        "features": [{"id": "f", "name": "f", "kind": "binary", "values": ["yes", "no"]}],
        "counts": {"d1": {"f": {"yes": 60, "no": 41}}}
    }"#;
    let err = KnowledgeBase::from_json_str(text).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("counts.d1.f"), "{msg}");
    assert!(msg.contains("101"), "{msg}");
}

#[test]
fn likelihood_hand_values() {
    let kb = fixtures::minimal_kb();
    // {yes: 80, no: 20} smooths to 81/102.
    assert!((kb.likelihood("d_flu", "f_fever", "yes").unwrap() - 81.0 / 102.0).abs() < 1e-15);
    assert!(matches!(kb.likelihood("d_flu", "f_nope", "yes"), Err(KbError::UnknownFeature(_))));
    assert!(matches!(kb.likelihood("d_flu", "f_fever", "maybe"), Err(KbError::UnknownValue { .. })));
}

proptest! {
    #[test]
    fn conditionals_are_strictly_positive_distributions(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = random_kb_in(&mut rng, 2..=6, 1..=8, 4);
        for d in 0..r.kb.n_diseases() {
            for f in 0..r.kb.n_features() {
                let p = r.kb.conditional(d, f);
                prop_assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for (got, want) in p.iter().zip(&r.cond[f][d]) {
                    prop_assert!((got - want).abs() < 1e-12);
                }
            }
        }
        for strategy in [PriorStrategy::Empirical, PriorStrategy::Uniform] {
            let b = r.kb.prior(&strategy).unwrap();
            prop_assert!((b.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

fn record(d: &str, values: &[(&str, RecordValue)]) -> Record {
    Record {
        disease_id: d.into(),
        values: values.iter().map(|(k, v)| ((*k).to_owned(), v.clone())).collect(),
    }
}

#[test]
fn records_pipeline_by_hand() {
    let schema = KbSchema {
        diseases: vec![
            SchemaDisease {
                id: "d1".into(),
                name: "One".into(),
            },
            SchemaDisease {
                id: "d2".into(),
                name: "Two".into(),
            },
        ],
        features: vec![
            FeatureSpec::Single(Feature::binary("f", "fever", "Fever?")),
            FeatureSpec::MultiChoice {
                id: "loc".into(),
                name: "pain location".into(),
                values: vec!["head".into(), "back".into(), "knee".into()],
                question_text: String::new(),
            },
        ],
        negated_features: vec![],
    };
    let yes = RecordValue::Single("yes".into());
    let mut records = Vec::new();
    for i in 0..30 {
        let loc = if i % 3 == 0 { vec!["head".to_owned(), "back".to_owned()] } else { vec!["head".to_owned()] };
        records.push(record("d1", &[("f", yes.clone()), ("loc", RecordValue::Multi(loc))]));
    }
    for _ in 0..10 {
        records.push(record("d2", &[]));
    }
    let kb = build_from_records(&schema, records, &BuildOptions::default()).unwrap();
    let prior = kb.prior(&PriorStrategy::Empirical).unwrap();
    assert!((prior.prob_of("d1").unwrap() - 0.75).abs() < 1e-12);
    assert!((kb.likelihood("d1", "f", "yes").unwrap() - 101.0 / 102.0).abs() < 1e-12);
    // Absent binary counts as "no".
    assert!((kb.likelihood("d2", "f", "yes").unwrap() - 1.0 / 102.0).abs() < 1e-12);
    let head = bmbe::kb::sub_feature_id("loc", "head");
    let back = bmbe::kb::sub_feature_id("loc", "back");
    assert!((kb.likelihood("d1", &head, "yes").unwrap() - 101.0 / 102.0).abs() < 1e-12);
    // 10 of 30 records mention the back: 33.3 on the 100 scale.
    let want = (100.0 / 3.0 + 1.0) / 102.0;
    assert!((kb.likelihood("d1", &back, "yes").unwrap() - want).abs() < 1e-9);
    // A value nobody reported still fits under the top-M cutoff and counts zero.
    let knee = bmbe::kb::sub_feature_id("loc", "knee");
    assert!((kb.likelihood("d1", &knee, "yes").unwrap() - 1.0 / 102.0).abs() < 1e-12);

    for per_feature in kb.count_table().counts.values() {
        for counts in per_feature.values() {
            assert!((counts.values().sum::<f64>() - 100.0).abs() < 1e-6);
        }
    }
    assert!(matches!(
        build_from_records(&schema, Vec::new(), &BuildOptions::default()),
        Err(KbError::NoRecords)
    ));
}

#[test]
fn elicited_import_converts_and_filters() {
    let mut tables: BTreeMap<String, BTreeMap<String, ElicitedEntry>> = BTreeMap::new();
    tables.entry("d1".into()).or_default().insert("fever".into(), ElicitedEntry::ProbYes { prob_yes: 0.7 });
    tables.entry("d2".into()).or_default().insert("fever".into(), ElicitedEntry::ProbYes { prob_yes: 0.2 });
    let bad = BTreeMap::from([("1".to_owned(), 0.5), ("2".to_owned(), 0.48)]);
    tables
        .entry("d1".into())
        .or_default()
        .insert("severity".into(), ElicitedEntry::Distribution { distribution: bad });
    let good = BTreeMap::from([("1".to_owned(), 0.25), ("2".to_owned(), 0.75)]);
    tables
        .entry("d2".into())
        .or_default()
        .insert("severity".into(), ElicitedEntry::Distribution { distribution: good });

    let report = import_elicited(&tables, None).unwrap();
    assert_eq!(report.accepted, 3);
    assert_eq!(report.warnings.len(), 1);
    assert_eq!(report.warnings[0].feature_id, "severity");
    let counts = report.kb.count_table().get("d1", "fever").unwrap();
    assert!((counts["yes"] - 70.0).abs() < 1e-9);
    assert!((counts["no"] - 30.0).abs() < 1e-9);
    let prior = report.kb.prior(&PriorStrategy::Empirical).unwrap();
    assert!((prior.prob_of("d1").unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn stats_and_matching_on_shipped_kbs() {
    let kb = fixtures::separable_kb();
    let stats = kb_stats(&kb);
    // Every binary conditional is 0.95 or 0.05, so every pair has the same KL.
    let kl = 1.0 - (-(0.95f64 * 0.95f64.log2() + 0.05 * 0.05f64.log2()));
    assert!((stats.mean_pair_kl - kl).abs() < 1e-12);

    let m = match_features(&kb, &kb);
    assert_eq!(m.coverage_a_in_b, 1.0);
    assert_eq!(m.coverage_b_in_a, 1.0);
    let half = fixtures::half_matched_kb(&kb);
    let m = match_features(&half, &kb);
    assert_eq!(m.shared.len(), 15);
    assert!((m.coverage_a_in_b - 0.5).abs() < 1e-12);
    let twin = fixtures::twin_kb();
    let partial = match_features(&twin, &kb);
    let expected = twin
        .features()
        .iter()
        .filter(|f| fixtures::SEPARABLE_SYMPTOMS.contains(&f.name.as_str()))
        .count();
    assert_eq!(partial.shared.len(), expected);
    assert!(partial.shared.iter().all(|(a, b)| a == b));
}
