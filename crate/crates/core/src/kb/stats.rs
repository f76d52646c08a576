//! Knowledge-base diagnostics and cross-KB feature matching.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FeatureKind, KnowledgeBase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbStats {
    /// KL divergence (bits) of each smoothed conditional from uniform,
    /// keyed by disease then feature.
    pub per_pair_kl: BTreeMap<String, BTreeMap<String, f64>>,
    /// Population variance of `P(yes | d)` across diseases, binary features only.
    pub per_feature_variance: BTreeMap<String, f64>,
    /// `max - min` of `P(yes | d)` across diseases, binary features only.
    pub per_feature_range: BTreeMap<String, f64>,
    pub mean_pair_kl: f64,
    pub mean_binary_variance: f64,
}

/// KL divergence from uniform, in bits: `log2 |V| - H(p)`.
fn kl_from_uniform(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * (x * n).log2())
        .sum::<f64>()
        .max(0.0)
}

pub fn kb_stats(kb: &KnowledgeBase) -> KbStats {
    let mut per_pair_kl: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut kl_sum = 0.0;
    for (d, disease) in kb.diseases().iter().enumerate() {
        let row = per_pair_kl.entry(disease.id.clone()).or_default();
        for (fi, feature) in kb.features().iter().enumerate() {
            let kl = if kb.is_informative(d, fi) {
                kl_from_uniform(&kb.conditional(d, fi))
            } else {
                0.0
            };
            kl_sum += kl;
            row.insert(feature.id.clone(), kl);
        }
    }
    let mut per_feature_variance = BTreeMap::new();
    let mut per_feature_range = BTreeMap::new();
    let k = kb.n_diseases() as f64;
    for (fi, feature) in kb.features().iter().enumerate() {
        if feature.kind != FeatureKind::Binary {
            continue;
        }
        let yes = feature.value_index("yes").expect("binary has yes");
        let row = kb.table(fi).row(yes, kb.n_diseases());
        let mean = row.iter().sum::<f64>() / k;
        let var = row.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / k;
        let max = row.iter().copied().fold(f64::MIN, f64::max);
        let min = row.iter().copied().fold(f64::MAX, f64::min);
        per_feature_variance.insert(feature.id.clone(), var);
        per_feature_range.insert(feature.id.clone(), max - min);
    }
    let n_pairs = (kb.n_diseases() * kb.n_features()) as f64;
    let mean_binary_variance = if per_feature_variance.is_empty() {
        0.0
    } else {
        per_feature_variance.values().sum::<f64>() / per_feature_variance.len() as f64
    };
    KbStats {
        per_pair_kl,
        per_feature_variance,
        per_feature_range,
        mean_pair_kl: kl_sum / n_pairs,
        mean_binary_variance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatching {
    /// `(feature id in a, feature id in b)`.
    pub shared: Vec<(String, String)>,
    pub coverage_a_in_b: f64,
    pub coverage_b_in_a: f64,
}

impl FeatureMatching {
    /// Map from a-side feature id to b-side feature id.
    pub fn a_to_b(&self) -> BTreeMap<&str, &str> {
        self.shared.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect()
    }

    pub fn b_to_a(&self) -> BTreeMap<&str, &str> {
        self.shared.iter().map(|(a, b)| (b.as_str(), a.as_str())).collect()
    }
}

/// Matches features by canonical name and kind. When several features share a
/// key on both sides they are paired in declaration order.
pub fn match_features(kb_a: &KnowledgeBase, kb_b: &KnowledgeBase) -> FeatureMatching {
    let mut b_groups: BTreeMap<(String, FeatureKind), Vec<&str>> = BTreeMap::new();
    for f in kb_b.features() {
        b_groups.entry((f.canonical_name(), f.kind)).or_default().push(&f.id);
    }
    let mut used: BTreeMap<(String, FeatureKind), usize> = BTreeMap::new();
    let mut shared = Vec::new();
    for f in kb_a.features() {
        let key = (f.canonical_name(), f.kind);
        if let Some(candidates) = b_groups.get(&key) {
            let next = used.entry(key).or_insert(0);
            if let Some(b) = candidates.get(*next) {
                shared.push((f.id.clone(), (*b).to_owned()));
                *next += 1;
            }
        }
    }
    let n = shared.len() as f64;
    FeatureMatching {
        coverage_a_in_b: n / kb_a.n_features() as f64,
        coverage_b_in_a: n / kb_b.n_features() as f64,
        shared,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{CountTable, Disease, Feature};

    fn kb_with(features: Vec<Feature>, counts: CountTable) -> KnowledgeBase {
        KnowledgeBase::new(
            1,
            vec![Disease::new("d1", "One", 1.0), Disease::new("d2", "Two", 1.0)],
            features,
            counts,
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn kl_of_skewed_binary_conditional() {
        // Smoothed (0.9, 0.1) needs alpha (0.9 * 102, 0.1 * 102) - 1.
        let mut ct = CountTable::default();
        ct.insert(
            "d1",
            "f",
            BTreeMap::from([("yes".into(), 90.8), ("no".into(), 9.2)]),
        );
        let kb = kb_with(vec![Feature::binary("f", "fever", "")], ct);
        let stats = kb_stats(&kb);
        // 1 - H(0.9) computed independently.
        let h = -(0.9f64 * 0.9f64.log2() + 0.1f64 * 0.1f64.log2());
        assert!((stats.per_pair_kl["d1"]["f"] - (1.0 - h)).abs() < 1e-12);
        assert!((stats.per_pair_kl["d1"]["f"] - 0.531).abs() < 1e-3);
        assert_eq!(stats.per_pair_kl["d2"]["f"], 0.0);
    }

    #[test]
    fn constant_feature_has_zero_variance_and_range() {
        let mut ct = CountTable::default();
        for d in ["d1", "d2"] {
            ct.insert(d, "f", BTreeMap::from([("yes".into(), 30.0), ("no".into(), 70.0)]));
        }
        let kb = kb_with(vec![Feature::binary("f", "fever", "")], ct);
        let stats = kb_stats(&kb);
        assert_eq!(stats.per_feature_variance["f"], 0.0);
        assert_eq!(stats.per_feature_range["f"], 0.0);
    }

    #[test]
    fn explicit_uniform_counts_have_zero_kl() {
        let mut ct = CountTable::default();
        ct.insert("d1", "f", BTreeMap::from([("yes".into(), 50.0), ("no".into(), 50.0)]));
        let kb = kb_with(vec![Feature::binary("f", "fever", "")], ct);
        assert_eq!(kb_stats(&kb).per_pair_kl["d1"]["f"], 0.0);
    }

    #[test]
    fn matching_identity_disjoint_and_kind_mismatch() {
        let a = kb_with(
            vec![Feature::binary("a1", "Chest  Pain", ""), Feature::binary("a2", "fever", "")],
            CountTable::default(),
        );
        let same = match_features(&a, &a);
        assert_eq!(same.coverage_a_in_b, 1.0);
        assert_eq!(same.coverage_b_in_a, 1.0);

        let b = kb_with(
            vec![Feature::binary("b1", "cough", ""), Feature::binary("b2", "rash", "")],
            CountTable::default(),
        );
        let none = match_features(&a, &b);
        assert!(none.shared.is_empty());
        assert_eq!(none.coverage_a_in_b, 0.0);

        let mut ordinal = Feature::binary("c1", "fever", "");
        ordinal.kind = FeatureKind::Ordinal;
        ordinal.values = vec!["low".into(), "high".into()];
        let c = kb_with(vec![ordinal, Feature::binary("c2", "chest pain", "")], CountTable::default());
        let m = match_features(&a, &c);
        assert_eq!(m.shared, vec![("a1".to_owned(), "c2".to_owned())]);
        assert_eq!(m.coverage_a_in_b, 0.5);
    }
}
