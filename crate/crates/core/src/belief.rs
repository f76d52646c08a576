//! Log-space posterior over diseases and evidence updates.
//!
//! Evidence arrives as [`EvidenceTriple`]s carrying a confidence `c` in
//! `(0, 1]`. The update uses the mixed likelihood `c * P(v | d) + (1 - c)`,
//! which is plain Bayes at `c = 1` and the identity as `c -> 0`. Updates that
//! would not move the belief (every mixed likelihood within `1e-12` of one)
//! return the input unchanged.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::kb::{Feature, FeatureKind, KnowledgeBase};
use crate::util::{entropy_bits, log_sum_exp};

/// Skip threshold on `max_d |L_eff(d) - 1|`.
pub const NEUTRAL_TOLERANCE: f64 = 1e-12;
/// Default Gaussian soft-match width for numeric features, in grid steps.
pub const DEFAULT_NUMERIC_SIGMA: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum BeliefError {
    #[error("unknown confidence label `{0}`")]
    UnknownLabel(String),
    #[error("confidence {0} is outside (0, 1]")]
    InvalidConfidence(f64),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("unknown value `{value}` for feature `{feature}`")]
    UnknownValue { feature: String, value: String },
    #[error("numeric reading {value} is outside the scale of feature `{feature}`")]
    OutOfScale { feature: String, value: f64 },
    #[error("`unknown` evidence cannot update a belief")]
    UnknownEvidence,
    #[error("k = {k} is outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("belief disease order does not match the knowledge base")]
    OrderMismatch,
    #[error("weights must be finite, nonnegative, not all zero, and one per disease")]
    InvalidWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceLabel {
    VeryLikely,
    Likely,
    Uncertain,
    Unlikely,
    VeryUnlikely,
}

impl ConfidenceLabel {
    pub const ALL: [ConfidenceLabel; 5] = [
        ConfidenceLabel::VeryLikely,
        ConfidenceLabel::Likely,
        ConfidenceLabel::Uncertain,
        ConfidenceLabel::Unlikely,
        ConfidenceLabel::VeryUnlikely,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConfidenceLabel::VeryLikely => "very_likely",
            ConfidenceLabel::Likely => "likely",
            ConfidenceLabel::Uncertain => "uncertain",
            ConfidenceLabel::Unlikely => "unlikely",
            ConfidenceLabel::VeryUnlikely => "very_unlikely",
        }
    }
}

impl fmt::Display for ConfidenceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConfidenceLabel {
    type Err = BeliefError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        ConfidenceLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == norm)
            .ok_or_else(|| BeliefError::UnknownLabel(s.to_owned()))
    }
}

/// Map from linguistic label to confidence weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfidenceScale {
    pub very_likely: f64,
    pub likely: f64,
    pub uncertain: f64,
    pub unlikely: f64,
    pub very_unlikely: f64,
}

impl Default for ConfidenceScale {
    fn default() -> Self {
        ConfidenceScale {
            very_likely: 1.00,
            likely: 0.80,
            uncertain: 0.50,
            unlikely: 0.25,
            very_unlikely: 0.05,
        }
    }
}

impl ConfidenceScale {
    pub fn weight(&self, label: ConfidenceLabel) -> f64 {
        match label {
            ConfidenceLabel::VeryLikely => self.very_likely,
            ConfidenceLabel::Likely => self.likely,
            ConfidenceLabel::Uncertain => self.uncertain,
            ConfidenceLabel::Unlikely => self.unlikely,
            ConfidenceLabel::VeryUnlikely => self.very_unlikely,
        }
    }

    pub fn validate(&self) -> Result<(), BeliefError> {
        for label in ConfidenceLabel::ALL {
            let c = self.weight(label);
            if !(c > 0.0 && c <= 1.0) {
                return Err(BeliefError::InvalidConfidence(c));
            }
        }
        Ok(())
    }
}

/// Confidence weight of a label under the default scale.
pub fn map_confidence(label: &str) -> Result<f64, BeliefError> {
    Ok(ConfidenceScale::default().weight(label.parse()?))
}

/// Where a piece of evidence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Pattern,
    External,
    Downgrade,
    Oracle,
    Intake,
}

/// An observed value: a schema label, a numeric reading, or the `unknown`
/// sentinel. Serialized as a JSON string, a number, or `"unknown"`.
#[derive(Debug, Clone, PartialEq)]
pub enum EvidenceValue {
    Label(String),
    Numeric(f64),
    Unknown,
}

impl EvidenceValue {
    pub fn label(s: impl Into<String>) -> Self {
        EvidenceValue::Label(s.into())
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, EvidenceValue::Unknown)
    }

    /// The value as a schema label, if it is one. Numeric readings render
    /// with their shortest float representation.
    pub fn as_label(&self) -> Option<String> {
        match self {
            EvidenceValue::Label(s) => Some(s.clone()),
            EvidenceValue::Numeric(x) => Some(format_number(*x)),
            EvidenceValue::Unknown => None,
        }
    }
}

fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

impl fmt::Display for EvidenceValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvidenceValue::Label(s) => f.write_str(s),
            EvidenceValue::Numeric(x) => f.write_str(&format_number(*x)),
            EvidenceValue::Unknown => f.write_str("unknown"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawValue {
    Number(f64),
    Text(String),
}

impl Serialize for EvidenceValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            EvidenceValue::Label(l) => s.serialize_str(l),
            EvidenceValue::Numeric(x) => s.serialize_f64(*x),
            EvidenceValue::Unknown => s.serialize_str("unknown"),
        }
    }
}

impl<'de> Deserialize<'de> for EvidenceValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match RawValue::deserialize(d)? {
            RawValue::Number(x) => EvidenceValue::Numeric(x),
            RawValue::Text(t) if t == "unknown" => EvidenceValue::Unknown,
            RawValue::Text(t) => EvidenceValue::Label(t),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceTriple {
    pub feature_id: String,
    pub value: EvidenceValue,
    pub confidence: f64,
    pub tier: Tier,
    pub turn: u32,
}

impl EvidenceTriple {
    pub fn new(feature_id: impl Into<String>, value: EvidenceValue, confidence: f64, tier: Tier, turn: u32) -> Self {
        EvidenceTriple {
            feature_id: feature_id.into(),
            value,
            confidence,
            tier,
            turn,
        }
    }
}

/// Posterior over diseases, stored as natural logs.
///
/// Entries may be `-inf` (structural zeros, e.g. a disease with zero prior
/// mass) but are never NaN or `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    log_probs: Vec<f64>,
    disease_order: Arc<[String]>,
}

impl Belief {
    /// Normalizes nonnegative weights into a belief.
    pub fn from_weights(disease_order: Arc<[String]>, weights: &[f64]) -> Result<Belief, BeliefError> {
        if weights.len() != disease_order.len()
            || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite())
            || !weights.iter().any(|w| *w > 0.0)
        {
            return Err(BeliefError::InvalidWeights);
        }
        let logs: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        let z = log_sum_exp(&logs);
        Ok(Belief {
            log_probs: logs.iter().map(|l| l - z).collect(),
            disease_order,
        })
    }

    pub fn uniform(disease_order: Arc<[String]>) -> Belief {
        let n = disease_order.len();
        Belief::from_weights(disease_order, &vec![1.0; n]).expect("uniform weights are valid")
    }

    /// A belief with all mass on one disease index.
    pub fn one_hot(disease_order: Arc<[String]>, index: usize) -> Belief {
        let mut w = vec![0.0; disease_order.len()];
        w[index] = 1.0;
        Belief::from_weights(disease_order, &w).expect("one-hot weights are valid")
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn disease_order(&self) -> &Arc<[String]> {
        &self.disease_order
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn prob_of(&self, disease_id: &str) -> Option<f64> {
        self.disease_order
            .iter()
            .position(|d| d == disease_id)
            .map(|i| self.log_probs[i].exp())
    }

    /// Shannon entropy in bits.
    pub fn entropy(&self) -> f64 {
        entropy_bits(&self.probs())
    }

    /// Full ranking: descending probability, ties by ascending disease id.
    pub fn ranking(&self) -> Vec<(String, f64)> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.log_probs[b]
                .total_cmp(&self.log_probs[a])
                .then_with(|| self.disease_order[a].cmp(&self.disease_order[b]))
        });
        idx.into_iter()
            .map(|i| (self.disease_order[i].clone(), self.log_probs[i].exp()))
            .collect()
    }

    pub fn top_k(&self, k: usize) -> Result<Vec<(String, f64)>, BeliefError> {
        if k == 0 || k > self.len() {
            return Err(BeliefError::KOutOfRange { k, n: self.len() });
        }
        let mut r = self.ranking();
        r.truncate(k);
        Ok(r)
    }

    /// Argmax under the tie rule, with its probability.
    pub fn argmax(&self) -> (String, f64) {
        self.top_k(1).expect("belief is non-empty").remove(0)
    }

    pub fn max_prob(&self) -> f64 {
        self.log_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max).exp()
    }

    /// 1-based rank of a disease in [`Belief::ranking`].
    pub fn rank_of(&self, disease_id: &str) -> Option<usize> {
        self.ranking().iter().position(|(d, _)| d == disease_id).map(|i| i + 1)
    }

    /// Sup-norm distance between two beliefs over the same diseases.
    pub fn sup_distance(&self, other: &Belief) -> f64 {
        self.probs()
            .iter()
            .zip(other.probs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Multiplies in a likelihood vector and renormalizes in log space.
    pub fn apply_likelihood(&self, likelihood: &[f64]) -> Belief {
        debug_assert_eq!(likelihood.len(), self.len());
        let logs: Vec<f64> = self
            .log_probs
            .iter()
            .zip(likelihood)
            .map(|(lp, l)| lp + l.ln())
            .collect();
        let z = log_sum_exp(&logs);
        Belief {
            log_probs: logs.iter().map(|l| l - z).collect(),
            disease_order: self.disease_order.clone(),
        }
    }
}

/// `P(X_f = v | d)` for every disease, with the Gaussian soft-match applied
/// for numeric features. `sigma` is in grid steps.
pub fn evidence_likelihood(
    kb: &KnowledgeBase,
    feature_id: &str,
    value: &EvidenceValue,
    sigma: f64,
) -> Result<Vec<f64>, BeliefError> {
    let fi = kb
        .feature_index(feature_id)
        .ok_or_else(|| BeliefError::UnknownFeature(feature_id.to_owned()))?;
    let feature = &kb.features()[fi];
    let k = kb.n_diseases();
    let table = kb.table(fi);
    let unknown_value = || BeliefError::UnknownValue {
        feature: feature_id.to_owned(),
        value: value.to_string(),
    };
    if feature.kind == FeatureKind::Numeric {
        let x = match value {
            EvidenceValue::Numeric(x) => *x,
            EvidenceValue::Label(l) => l.trim().parse::<f64>().map_err(|_| unknown_value())?,
            EvidenceValue::Unknown => return Err(BeliefError::UnknownEvidence),
        };
        let weights = soft_match_weights(feature, x, sigma)?;
        let mut out = vec![0.0; k];
        for (v, w) in weights.iter().enumerate() {
            for (o, p) in out.iter_mut().zip(table.row(v, k)) {
                *o += w * p;
            }
        }
        return Ok(out);
    }
    match value {
        EvidenceValue::Unknown => Err(BeliefError::UnknownEvidence),
        EvidenceValue::Numeric(_) => Err(unknown_value()),
        EvidenceValue::Label(l) => {
            let v = feature.value_index(l).ok_or_else(unknown_value)?;
            Ok(table.row(v, k).to_vec())
        }
    }
}

/// Normalized Gaussian weights of a reading over a numeric feature's grid,
/// computed in log space so that a tiny `sigma` collapses onto the nearest
/// grid point instead of underflowing.
pub fn soft_match_weights(feature: &Feature, x: f64, sigma: f64) -> Result<Vec<f64>, BeliefError> {
    let scale = feature
        .numeric_scale
        .ok_or_else(|| BeliefError::UnknownFeature(feature.id.clone()))?;
    if !x.is_finite() || x < scale.min - 1e-9 || x > scale.max + 1e-9 {
        return Err(BeliefError::OutOfScale {
            feature: feature.id.clone(),
            value: x,
        });
    }
    let grid = feature.grid().expect("validated numeric grid");
    let s = sigma * scale.step;
    let logs: Vec<f64> = grid.iter().map(|g| -(x - g).powi(2) / (2.0 * s * s)).collect();
    let z = log_sum_exp(&logs);
    Ok(logs.iter().map(|l| (l - z).exp()).collect())
}

/// Applies one piece of evidence.
pub fn update_belief(
    b: &Belief,
    kb: &KnowledgeBase,
    e: &EvidenceTriple,
    numeric_sigma: f64,
) -> Result<Belief, BeliefError> {
    if !(e.confidence > 0.0 && e.confidence <= 1.0) {
        return Err(BeliefError::InvalidConfidence(e.confidence));
    }
    if b.disease_order.as_ref() != kb.disease_ids().as_ref() {
        return Err(BeliefError::OrderMismatch);
    }
    let p = evidence_likelihood(kb, &e.feature_id, &e.value, numeric_sigma)?;
    let c = e.confidence;
    let l_eff: Vec<f64> = p.iter().map(|p| c * p + (1.0 - c)).collect();
    if l_eff.iter().all(|l| (l - 1.0).abs() < NEUTRAL_TOLERANCE) {
        return Ok(b.clone());
    }
    Ok(b.apply_likelihood(&l_eff))
}
