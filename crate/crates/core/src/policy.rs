//! Expected-information-gain question selection.
//!
//! EIG is computed as the mutual information `H(D) + H(X) - H(D, X)` over the
//! dense likelihood tables, which equals the expected entropy reduction of a
//! full-confidence answer. The focused mode adds a second EIG term computed
//! over the renormalized top-k diseases once the posterior concentrates.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::Belief;
use crate::kb::KnowledgeBase;
use crate::util::entropy_bits;

/// Scores closer than this are treated as tied (and resolved by feature id).
pub const SCORE_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("unknown value `{value}` for feature `{feature}`")]
    UnknownValue { feature: String, value: String },
    #[error("no unasked features remain")]
    Exhausted,
    #[error("brute-force EIG is limited to K <= 8 and |V| <= 4 (got K = {k}, |V| = {v})")]
    GuardViolation { k: usize, v: usize },
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error("belief disease order does not match the knowledge base")]
    OrderMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    #[default]
    Global,
    Focused,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub mode: PolicyMode,
    /// Size of the focus set.
    pub k: usize,
    /// Weight of the focused EIG term.
    pub lambda: f64,
    /// Focus activates once the max posterior reaches this value.
    pub theta: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            mode: PolicyMode::Global,
            k: 3,
            lambda: 0.5,
            theta: 0.3,
        }
    }
}

impl PolicyConfig {
    pub fn focused() -> Self {
        PolicyConfig {
            mode: PolicyMode::Focused,
            ..PolicyConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(PolicyError::InvalidConfig(format!("theta {} outside [0, 1]", self.theta)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(PolicyError::InvalidConfig(format!("lambda {} must be >= 0", self.lambda)));
        }
        if self.mode == PolicyMode::Focused && (self.k < 2 || self.lambda <= 0.0) {
            return Err(PolicyError::InvalidConfig("focused mode needs k >= 2 and lambda > 0".into()));
        }
        Ok(())
    }
}

/// Features already queried (or volunteered at intake).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AskedSet {
    pub feature_ids: BTreeSet<String>,
}

impl AskedSet {
    pub fn new() -> Self {
        AskedSet::default()
    }

    pub fn insert(&mut self, feature_id: impl Into<String>) -> bool {
        self.feature_ids.insert(feature_id.into())
    }

    pub fn contains(&self, feature_id: &str) -> bool {
        self.feature_ids.contains(feature_id)
    }

    pub fn len(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature_ids.is_empty()
    }
}

fn feature_index(kb: &KnowledgeBase, f: &str) -> Result<usize, PolicyError> {
    kb.feature_index(f).ok_or_else(|| PolicyError::UnknownFeature(f.to_owned()))
}

fn check_order(b: &Belief, kb: &KnowledgeBase) -> Result<(), PolicyError> {
    if b.disease_order().as_ref() == kb.disease_ids().as_ref() {
        Ok(())
    } else {
        Err(PolicyError::OrderMismatch)
    }
}

/// Predictive distribution of a feature's answer under the belief.
pub fn predictive(b: &Belief, kb: &KnowledgeBase, f: &str) -> Result<Vec<f64>, PolicyError> {
    check_order(b, kb)?;
    let fi = feature_index(kb, f)?;
    Ok(predictive_idx(&b.probs(), kb, fi))
}

fn predictive_idx(probs: &[f64], kb: &KnowledgeBase, fi: usize) -> Vec<f64> {
    let k = kb.n_diseases();
    let table = kb.table(fi);
    (0..table.n_values)
        .map(|v| table.row(v, k).iter().zip(probs).map(|(p, b)| p * b).sum())
        .collect()
}

/// Full-confidence hypothetical update; the input belief is untouched.
pub fn counterfactual(b: &Belief, kb: &KnowledgeBase, f: &str, v: &str) -> Result<Belief, PolicyError> {
    check_order(b, kb)?;
    let fi = feature_index(kb, f)?;
    let vi = kb.features()[fi].value_index(v).ok_or_else(|| PolicyError::UnknownValue {
        feature: f.to_owned(),
        value: v.to_owned(),
    })?;
    Ok(b.apply_likelihood(kb.table(fi).row(vi, kb.n_diseases())))
}

/// Mutual information between the disease and the feature's answer, in bits.
pub(crate) fn eig_idx(probs: &[f64], kb: &KnowledgeBase, fi: usize) -> f64 {
    let k = kb.n_diseases();
    let table = kb.table(fi);
    // A feature whose conditional is the same for every disease in the support
    // carries no information; return an exact zero so ties stay exact.
    let support: Vec<usize> = (0..k).filter(|&d| probs[d] > 0.0).collect();
    let Some(&first) = support.first() else {
        return 0.0;
    };
    let constant = (0..table.n_values).all(|v| {
        let row = table.row(v, k);
        support.iter().all(|&d| row[d] == row[first])
    });
    if constant {
        return 0.0;
    }
    let h_d = entropy_bits(probs);
    let mut h_x = 0.0;
    let mut h_dx = 0.0;
    for v in 0..table.n_values {
        let row = table.row(v, k);
        let mut pv = 0.0;
        for &d in &support {
            let joint = probs[d] * row[d];
            if joint > 0.0 {
                h_dx -= joint * joint.log2();
            }
            pv += joint;
        }
        if pv > 0.0 {
            h_x -= pv * pv.log2();
        }
    }
    (h_d + h_x - h_dx).clamp(0.0, h_d.max(0.0))
}

/// Expected information gain of asking feature `f`, in bits.
pub fn eig(b: &Belief, kb: &KnowledgeBase, f: &str) -> Result<f64, PolicyError> {
    check_order(b, kb)?;
    let fi = feature_index(kb, f)?;
    Ok(eig_idx(&b.probs(), kb, fi))
}

/// Direct enumeration of `H(b) - sum_v P(v) H(b | f = v)` through the public
/// likelihood API. Meant as a test oracle on small instances.
pub fn eig_brute_force(b: &Belief, kb: &KnowledgeBase, f: &str) -> Result<f64, PolicyError> {
    check_order(b, kb)?;
    let feature = kb.feature(f).ok_or_else(|| PolicyError::UnknownFeature(f.to_owned()))?;
    let k = kb.n_diseases();
    if k > 8 || feature.values.len() > 4 {
        return Err(PolicyError::GuardViolation {
            k,
            v: feature.values.len(),
        });
    }
    let prior: Vec<f64> = b.log_probs().iter().map(|l| l.exp()).collect();
    let h = |p: &[f64]| -> f64 {
        let mut s = 0.0;
        for &x in p {
            if x > 0.0 {
                s -= x * x.log2();
            }
        }
        s
    };
    let mut expected_posterior_entropy = 0.0;
    for v in &feature.values {
        let mut joint = Vec::with_capacity(k);
        for (d, disease) in kb.diseases().iter().enumerate() {
            let lik = kb.likelihood(&disease.id, f, v).expect("declared ids");
            joint.push(prior[d] * lik);
        }
        let pv: f64 = joint.iter().sum();
        if pv == 0.0 {
            continue;
        }
        let posterior: Vec<f64> = joint.iter().map(|j| j / pv).collect();
        expected_posterior_entropy += pv * h(&posterior);
    }
    Ok((h(&prior) - expected_posterior_entropy).max(0.0))
}

/// One row of the question-scoring table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature_id: String,
    pub eig_global: f64,
    /// EIG over the renormalized top-k diseases, when focus is active.
    pub eig_focus: Option<f64>,
    pub score: f64,
}

/// Renormalized restriction of the belief to its top-k diseases.
fn focus_probs(b: &Belief, k: usize) -> Vec<f64> {
    let probs = b.probs();
    let ranking = b.ranking();
    let keep: BTreeSet<&str> = ranking.iter().take(k).map(|(d, _)| d.as_str()).collect();
    let mut out: Vec<f64> = b
        .disease_order()
        .iter()
        .zip(&probs)
        .map(|(d, p)| if keep.contains(d.as_str()) { *p } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

/// Scores every unasked feature, in KB declaration order.
pub fn score_features(
    b: &Belief,
    kb: &KnowledgeBase,
    asked: &AskedSet,
    cfg: &PolicyConfig,
) -> Result<Vec<FeatureScore>, PolicyError> {
    check_order(b, kb)?;
    cfg.validate()?;
    let probs = b.probs();
    let focus = (cfg.mode == PolicyMode::Focused && b.max_prob() >= cfg.theta)
        .then(|| focus_probs(b, cfg.k.min(kb.n_diseases())));
    Ok(kb
        .features()
        .iter()
        .enumerate()
        .filter(|(_, f)| !asked.contains(&f.id))
        .map(|(fi, f)| {
            let eig_global = eig_idx(&probs, kb, fi);
            let eig_focus = focus.as_ref().map(|fp| eig_idx(fp, kb, fi));
            let score = eig_global + eig_focus.map_or(0.0, |e| cfg.lambda * e);
            FeatureScore {
                feature_id: f.id.clone(),
                eig_global,
                eig_focus,
                score,
            }
        })
        .collect())
}

/// Picks the best-scoring unasked feature; ties go to the lowest feature id.
pub fn select_scored(
    b: &Belief,
    kb: &KnowledgeBase,
    asked: &AskedSet,
    cfg: &PolicyConfig,
) -> Result<FeatureScore, PolicyError> {
    let mut scores = score_features(b, kb, asked, cfg)?;
    scores.sort_by(|a, b| a.feature_id.cmp(&b.feature_id));
    let mut best: Option<FeatureScore> = None;
    for s in scores {
        match &best {
            Some(cur) if s.score <= cur.score + SCORE_TIE_TOLERANCE => {}
            _ => best = Some(s),
        }
    }
    best.ok_or(PolicyError::Exhausted)
}

pub fn select_question(
    b: &Belief,
    kb: &KnowledgeBase,
    asked: &AskedSet,
    cfg: &PolicyConfig,
) -> Result<String, PolicyError> {
    select_scored(b, kb, asked, cfg).map(|s| s.feature_id)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::kb::{CountTable, Disease, Feature, PriorStrategy};

    fn counts_for(p: f64) -> BTreeMap<String, f64> {
        BTreeMap::from([("yes".into(), p * 102.0 - 1.0), ("no".into(), (1.0 - p) * 102.0 - 1.0)])
    }

    /// Two diseases; feature `a` has P(yes) = (pa1, pa2), feature `b` = (pb1, pb2).
    fn kb2(pa: (f64, f64), pb: (f64, f64)) -> KnowledgeBase {
        let mut ct = CountTable::default();
        ct.insert("d1", "a", counts_for(pa.0));
        ct.insert("d2", "a", counts_for(pa.1));
        ct.insert("d1", "b", counts_for(pb.0));
        ct.insert("d2", "b", counts_for(pb.1));
        KnowledgeBase::new(
            1,
            vec![Disease::new("d1", "One", 3.0), Disease::new("d2", "Two", 1.0)],
            vec![Feature::binary("a", "alpha", ""), Feature::binary("b", "beta", "")],
            ct,
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn predictive_hand_cases() {
        let kb = kb2((0.9, 0.1), (0.8, 0.4));
        let u = kb.prior(&PriorStrategy::Uniform).unwrap();
        assert!((predictive(&u, &kb, "a").unwrap()[0] - 0.5).abs() < 1e-12);
        let emp = kb.prior(&PriorStrategy::Empirical).unwrap();
        assert!((predictive(&emp, &kb, "b").unwrap()[0] - 0.7).abs() < 1e-12);
        let hot = Belief::one_hot(kb.disease_ids().clone(), 0);
        let p = predictive(&hot, &kb, "a").unwrap();
        assert!((p[0] - 0.9).abs() < 1e-12 && (p[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn counterfactual_hand_cases() {
        let kb = kb2((0.9, 0.1), (0.5, 0.5));
        let u = kb.prior(&PriorStrategy::Uniform).unwrap();
        let cf = counterfactual(&u, &kb, "a", "yes").unwrap().probs();
        assert!((cf[0] - 0.9).abs() < 1e-12);
        assert!(counterfactual(&u, &kb, "b", "yes").unwrap().sup_distance(&u) < 1e-15);
        let hot = Belief::one_hot(kb.disease_ids().clone(), 1);
        assert_eq!(counterfactual(&hot, &kb, "a", "yes").unwrap().probs(), hot.probs());
    }

    #[test]
    fn eig_hand_cases() {
        let kb = kb2((0.9, 0.1), (0.5, 0.5));
        let u = kb.prior(&PriorStrategy::Uniform).unwrap();
        let e = eig(&u, &kb, "a").unwrap();
        let h = -(0.9f64 * 0.9f64.log2() + 0.1f64 * 0.1f64.log2());
        assert!((e - (1.0 - h)).abs() < 1e-12);
        assert!((e - 0.5310).abs() < 5e-5);
        assert_eq!(eig(&u, &kb, "b").unwrap(), 0.0);
        assert!((eig_brute_force(&u, &kb, "a").unwrap() - e).abs() < 1e-12);
    }

    #[test]
    fn selection_picks_argmax_then_lowest_id() {
        let kb = kb2((0.6, 0.4), (0.95, 0.05));
        let u = kb.prior(&PriorStrategy::Uniform).unwrap();
        let cfg = PolicyConfig::default();
        assert_eq!(select_question(&u, &kb, &AskedSet::new(), &cfg).unwrap(), "b");
        let flat = kb2((0.5, 0.5), (0.3, 0.3));
        let u = flat.prior(&PriorStrategy::Uniform).unwrap();
        assert_eq!(select_question(&u, &flat, &AskedSet::new(), &cfg).unwrap(), "a");
        let mut asked = AskedSet::new();
        asked.insert("a");
        asked.insert("b");
        assert_eq!(select_question(&u, &flat, &asked, &cfg), Err(PolicyError::Exhausted));
    }

    #[test]
    fn focused_config_validation() {
        let mut cfg = PolicyConfig::focused();
        assert!(cfg.validate().is_ok());
        cfg.k = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = PolicyConfig::focused();
        cfg.lambda = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn brute_force_guard() {
        let diseases: Vec<Disease> = (0..9).map(|i| Disease::new(format!("d{i}"), "x", 1.0)).collect();
        let kb = KnowledgeBase::new(1, diseases, vec![Feature::binary("f", "f", "")], CountTable::default(), vec![])
            .unwrap();
        let u = kb.prior(&PriorStrategy::Uniform).unwrap();
        assert!(matches!(eig_brute_force(&u, &kb, "f"), Err(PolicyError::GuardViolation { .. })));
    }
}
