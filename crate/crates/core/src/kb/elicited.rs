//! Importing pre-elicited probability tables.
//!
//! Input layout: `{disease_id: {feature_id: {"prob_yes": p} | {"distribution": {value: p}}}}`.
//! Probabilities become counts on the 100 scale; entries that fail
//! validation are dropped with a warning instead of aborting the import.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CountTable, Disease, Feature, FeatureKind, KbError, KnowledgeBase, COUNT_SCALE};

/// A distribution is accepted when it sums to 1 within this tolerance.
pub const DISTRIBUTION_SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ElicitedEntry {
    ProbYes { prob_yes: f64 },
    Distribution { distribution: BTreeMap<String, f64> },
}

pub type ElicitedTables = BTreeMap<String, BTreeMap<String, ElicitedEntry>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportWarning {
    pub disease_id: String,
    pub feature_id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ImportReport {
    pub kb: KnowledgeBase,
    pub warnings: Vec<ImportWarning>,
    pub accepted: usize,
}

fn humanize(id: &str) -> String {
    id.replace('_', " ")
}

/// Infers a feature schema from the entries: `prob_yes` features are binary,
/// distribution features are ordinal over the union of their keys (numeric
/// keys sorted numerically, others lexicographically).
fn infer_schema(tables: &ElicitedTables) -> Vec<Feature> {
    let mut kinds: BTreeMap<&str, (bool, std::collections::BTreeSet<&str>)> = BTreeMap::new();
    for per_feature in tables.values() {
        for (f, entry) in per_feature {
            let slot = kinds.entry(f).or_default();
            match entry {
                ElicitedEntry::ProbYes { .. } => slot.0 = true,
                ElicitedEntry::Distribution { distribution } => {
                    slot.1.extend(distribution.keys().map(String::as_str));
                }
            }
        }
    }
    kinds
        .into_iter()
        .map(|(id, (binary, labels))| {
            if binary || labels.len() < 2 {
                Feature::binary(id, humanize(id), format!("Do you have {}?", humanize(id)))
            } else {
                let mut values: Vec<String> = labels.into_iter().map(str::to_owned).collect();
                if values.iter().all(|v| v.parse::<f64>().is_ok()) {
                    values.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
                }
                Feature {
                    id: id.to_owned(),
                    name: humanize(id),
                    kind: FeatureKind::Ordinal,
                    values,
                    question_text: format!("How would you rate your {}?", humanize(id)),
                    numeric_scale: None,
                    synonyms: Vec::new(),
                }
            }
        })
        .collect()
}

fn convert(entry: &ElicitedEntry, feature: &Feature) -> Result<BTreeMap<String, f64>, String> {
    match entry {
        ElicitedEntry::ProbYes { prob_yes } => {
            if feature.kind != FeatureKind::Binary {
                return Err(format!("prob_yes given for {} feature", feature.kind.as_str()));
            }
            if !(0.0..=1.0).contains(prob_yes) {
                return Err(format!("prob_yes {prob_yes} outside [0, 1]"));
            }
            Ok(BTreeMap::from([
                ("yes".to_owned(), prob_yes * COUNT_SCALE),
                ("no".to_owned(), (1.0 - prob_yes) * COUNT_SCALE),
            ]))
        }
        ElicitedEntry::Distribution { distribution } => {
            if let Some(v) = distribution.keys().find(|v| feature.value_index(v).is_none()) {
                return Err(format!("value `{v}` not in the feature's value set"));
            }
            if let Some((v, p)) = distribution.iter().find(|(_, p)| !(**p >= 0.0) || !p.is_finite()) {
                return Err(format!("probability {p} for `{v}` is not a finite nonnegative number"));
            }
            let sum: f64 = distribution.values().sum();
            if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOLERANCE {
                return Err(format!("distribution sums to {sum}, expected 1"));
            }
            Ok(feature
                .values
                .iter()
                .map(|v| (v.clone(), distribution.get(v).copied().unwrap_or(0.0) / sum * COUNT_SCALE))
                .collect())
        }
    }
}

/// Converts elicited tables into a KB with uniform priors.
///
/// When `features` is `None` the schema is inferred from the entries.
pub fn import_elicited(tables: &ElicitedTables, features: Option<Vec<Feature>>) -> Result<ImportReport, KbError> {
    let features = features.unwrap_or_else(|| infer_schema(tables));
    let by_id: BTreeMap<&str, &Feature> = features.iter().map(|f| (f.id.as_str(), f)).collect();
    let mut warnings = Vec::new();
    let mut counts = CountTable::default();
    let mut accepted = 0;
    for (d, per_feature) in tables {
        for (f, entry) in per_feature {
            let warn = |reason: String| ImportWarning {
                disease_id: d.clone(),
                feature_id: f.clone(),
                reason,
            };
            let Some(feature) = by_id.get(f.as_str()) else {
                warnings.push(warn("feature not declared".into()));
                continue;
            };
            match convert(entry, feature) {
                Ok(c) => {
                    counts.insert(d, f, c);
                    accepted += 1;
                }
                Err(reason) => warnings.push(warn(reason)),
            }
        }
    }
    if accepted == 0 {
        return Err(KbError::EmptyKb("every elicited entry was invalid".into()));
    }
    let diseases = tables.keys().map(|d| Disease::new(d.clone(), humanize(d), 1.0)).collect();
    let kb = KnowledgeBase::new(1, diseases, features, counts, Vec::new())?;
    Ok(ImportReport { kb, warnings, accepted })
}
