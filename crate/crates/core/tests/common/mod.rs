//! Builders shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use bmbe::kb::{CountTable, Disease, Feature, FeatureKind, KnowledgeBase};
use rand::Rng;

/// A random KB together with the raw numbers an independent oracle needs.
pub struct RandomKb {
    pub kb: KnowledgeBase,
    /// Smoothed conditionals computed here, indexed `[feature][disease][value]`.
    pub cond: Vec<Vec<Vec<f64>>>,
    /// Normalized prior.
    pub prior: Vec<f64>,
}

/// `k` diseases, `n` features with 2..=`vmax` values each. About one pair in
/// five has no counts, and about one disease in ten has zero prior mass.
pub fn random_kb(rng: &mut impl Rng, k: usize, n: usize, vmax: usize) -> RandomKb {
    let mut features = Vec::with_capacity(n);
    for f in 0..n {
        let nv = rng.gen_range(2..=vmax.max(2));
        let values: Vec<String> = if nv == 2 && rng.gen_bool(0.5) {
            vec!["yes".into(), "no".into()]
        } else {
            (0..nv).map(|v| format!("v{v}")).collect()
        };
        let kind = if values[0] == "yes" { FeatureKind::Binary } else { FeatureKind::Categorical };
        features.push(Feature {
            id: format!("f{f}"),
            name: format!("feature {f}"),
            kind,
            values,
            question_text: String::new(),
            numeric_scale: None,
            synonyms: Vec::new(),
        });
    }

    let mut prior_counts: Vec<f64> = (0..k)
        .map(|_| if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.5..10.0) })
        .collect();
    if prior_counts.iter().all(|&p| p == 0.0) {
        prior_counts[0] = 1.0;
    }
    let z: f64 = prior_counts.iter().sum();
    let prior = prior_counts.iter().map(|p| p / z).collect();

    let mut counts = CountTable::default();
    let mut cond = vec![vec![Vec::new(); k]; n];
    for (fi, f) in features.iter().enumerate() {
        let nv = f.values.len();
        for d in 0..k {
            if rng.gen_bool(0.2) {
                cond[fi][d] = vec![1.0 / nv as f64; nv];
                continue;
            }
            let w: Vec<f64> = (0..nv).map(|_| rng.gen_range(0.0..1.0f64).powi(2)).collect();
            let sw: f64 = w.iter().sum::<f64>().max(1e-12);
            let mut c: Vec<f64> = w.iter().map(|x| x / sw * 100.0).collect();
            let head: f64 = c[..nv - 1].iter().sum();
            c[nv - 1] = (100.0 - head).max(0.0);
            let total: f64 = c.iter().map(|x| x + 1.0).sum();
            cond[fi][d] = c.iter().map(|x| (x + 1.0) / total).collect();
            let table: BTreeMap<String, f64> = f.values.iter().cloned().zip(c).collect();
            counts.insert(&format!("d{d}"), &f.id, table);
        }
    }
    let diseases = (0..k)
        .map(|d| Disease::new(format!("d{d}"), format!("Disease {d}"), prior_counts[d]))
        .collect();
    let kb = KnowledgeBase::new(1, diseases, features, counts, vec![]).expect("random KB is valid");
    RandomKb { kb, cond, prior }
}

/// Count table for a binary feature with smoothed `P(yes) = p`.
pub fn yes_no_smoothed(p: f64) -> BTreeMap<String, f64> {
    BTreeMap::from([("yes".to_owned(), p * 102.0 - 1.0), ("no".to_owned(), (1.0 - p) * 102.0 - 1.0)])
}

pub fn entropy_bits(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|x| -x * x.log2()).sum()
}

/// Mutual information between disease and answer, in bits, straight from
/// the joint table.
pub fn mutual_information(b: &[f64], cond: &[Vec<f64>]) -> f64 {
    let nv = cond[0].len();
    let marginal: Vec<f64> = (0..nv).map(|v| b.iter().zip(cond).map(|(bd, c)| bd * c[v]).sum()).collect();
    let mut mi = 0.0;
    for (bd, c) in b.iter().zip(cond) {
        for v in 0..nv {
            let joint = bd * c[v];
            if joint > 0.0 {
                mi += joint * (c[v] / marginal[v]).log2();
            }
        }
    }
    mi
}

/// [`random_kb`] with the disease and feature counts drawn from ranges.
pub fn random_kb_in(
    rng: &mut impl Rng,
    k: std::ops::RangeInclusive<usize>,
    n: std::ops::RangeInclusive<usize>,
    vmax: usize,
) -> RandomKb {
    let k = rng.gen_range(k);
    let n = rng.gen_range(n);
    random_kb(rng, k, n, vmax)
}
