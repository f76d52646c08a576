//! Counting a knowledge base out of labelled patient records.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{schema, CountTable, Disease, Feature, FeatureKind, KbError, KnowledgeBase, COUNT_SCALE};

/// A declared feature in a record schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureSpec {
    /// A feature that takes exactly one value per record.
    Single(Feature),
    /// A multi-choice feature; each record lists any subset of `values`.
    /// It is expanded into one binary sub-feature per frequent value.
    MultiChoice {
        id: String,
        name: String,
        values: Vec<String>,
        #[serde(default)]
        question_text: String,
    },
}

impl FeatureSpec {
    pub fn id(&self) -> &str {
        match self {
            FeatureSpec::Single(f) => &f.id,
            FeatureSpec::MultiChoice { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaDisease {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbSchema {
    pub diseases: Vec<SchemaDisease>,
    pub features: Vec<FeatureSpec>,
    /// Binary features whose absence from a record means "not recorded"
    /// rather than "no".
    #[serde(default)]
    pub negated_features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecordValue {
    Single(String),
    Multi(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub disease_id: String,
    pub values: BTreeMap<String, RecordValue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Count a binary feature missing from a record as "no".
    pub absent_binary_is_no: bool,
    /// How many of the most frequent values of each multi-choice feature
    /// become binary sub-features.
    pub multi_choice_top_m: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            absent_binary_is_no: true,
            multi_choice_top_m: 20,
        }
    }
}

/// Id of the binary sub-feature for one value of a multi-choice feature.
pub fn sub_feature_id(parent: &str, value: &str) -> String {
    format!("{parent}__{value}")
}

enum Slot {
    Single(usize),
    Multi(Vec<(String, usize)>),
}

/// Accumulates `(disease, feature, value)` co-occurrence counts and rescales
/// each present pair to sum to 100. Priors are proportional to the number of
/// records per disease.
pub fn build_from_records(
    schema_def: &KbSchema,
    records: impl IntoIterator<Item = Record>,
    options: &BuildOptions,
) -> Result<KnowledgeBase, KbError> {
    let records: Vec<Record> = records.into_iter().collect();
    if records.is_empty() {
        return Err(KbError::NoRecords);
    }
    let disease_pos: BTreeMap<&str, usize> = schema_def
        .diseases
        .iter()
        .enumerate()
        .map(|(i, d)| (d.id.as_str(), i))
        .collect();
    let specs: BTreeMap<&str, &FeatureSpec> = schema_def.features.iter().map(|s| (s.id(), s)).collect();

    // Validate all records before counting anything.
    for (i, rec) in records.iter().enumerate() {
        if !disease_pos.contains_key(rec.disease_id.as_str()) {
            return Err(KbError::Dangling {
                path: format!("records[{i}].disease_id"),
                id: rec.disease_id.clone(),
            });
        }
        for (f_id, value) in &rec.values {
            let path = format!("records[{i}].values.{f_id}");
            let spec = specs.get(f_id.as_str()).ok_or_else(|| KbError::Dangling {
                path: format!("records[{i}].values"),
                id: f_id.clone(),
            })?;
            match (spec, value) {
                (FeatureSpec::Single(f), RecordValue::Single(v)) => {
                    if f.value_index(v).is_none() {
                        return Err(KbError::Dangling { path, id: v.clone() });
                    }
                }
                (FeatureSpec::MultiChoice { values, .. }, RecordValue::Multi(chosen)) => {
                    if let Some(v) = chosen.iter().find(|v| !values.contains(v)) {
                        return Err(KbError::Dangling { path, id: v.clone() });
                    }
                }
                (FeatureSpec::Single(_), RecordValue::Multi(_)) => {
                    return Err(schema(path, "single-valued feature given a list"));
                }
                (FeatureSpec::MultiChoice { .. }, RecordValue::Single(_)) => {
                    return Err(schema(path, "multi-choice feature expects a list"));
                }
            }
        }
    }

    let negated: BTreeSet<&str> = schema_def.negated_features.iter().map(String::as_str).collect();
    let mut features: Vec<Feature> = Vec::new();
    let mut negated_out: Vec<String> = Vec::new();
    let mut slots: Vec<(String, Slot)> = Vec::new();
    for spec in &schema_def.features {
        match spec {
            FeatureSpec::Single(f) => {
                if negated.contains(f.id.as_str()) {
                    negated_out.push(f.id.clone());
                }
                slots.push((f.id.clone(), Slot::Single(features.len())));
                features.push(f.clone());
            }
            FeatureSpec::MultiChoice {
                id,
                name,
                values,
                question_text,
            } => {
                let mut freq: BTreeMap<&str, usize> = values.iter().map(|v| (v.as_str(), 0)).collect();
                for rec in &records {
                    if let Some(RecordValue::Multi(chosen)) = rec.values.get(id) {
                        for v in chosen.iter().collect::<BTreeSet<_>>() {
                            *freq.get_mut(v.as_str()).expect("validated") += 1;
                        }
                    }
                }
                let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
                ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
                ranked.truncate(options.multi_choice_top_m);
                // Keep the schema's value order among the selected values.
                let kept: BTreeSet<&str> = ranked.iter().map(|(v, _)| *v).collect();
                let mut subs = Vec::new();
                for v in values.iter().filter(|v| kept.contains(v.as_str())) {
                    let sub_id = sub_feature_id(id, v);
                    let question = if question_text.is_empty() {
                        String::new()
                    } else {
                        format!("{question_text} ({v})")
                    };
                    if negated.contains(id.as_str()) {
                        negated_out.push(sub_id.clone());
                    }
                    subs.push((v.clone(), features.len()));
                    features.push(Feature::binary(sub_id, format!("{name} {v}"), question));
                }
                slots.push((id.clone(), Slot::Multi(subs)));
            }
        }
    }
    let negated_set: BTreeSet<String> = negated_out.iter().cloned().collect();

    let k = schema_def.diseases.len();
    let mut raw: Vec<Vec<BTreeMap<String, f64>>> = vec![vec![BTreeMap::new(); features.len()]; k];
    let mut record_counts = vec![0usize; k];
    for rec in &records {
        let d = disease_pos[rec.disease_id.as_str()];
        record_counts[d] += 1;
        for (f_id, slot) in &slots {
            let value = rec.values.get(f_id);
            match slot {
                Slot::Single(fi) => {
                    let f = &features[*fi];
                    let observed = match value {
                        Some(RecordValue::Single(v)) => Some(v.clone()),
                        None if f.kind == FeatureKind::Binary
                            && options.absent_binary_is_no
                            && !negated_set.contains(&f.id) =>
                        {
                            Some("no".to_owned())
                        }
                        _ => None,
                    };
                    if let Some(v) = observed {
                        *raw[d][*fi].entry(v).or_insert(0.0) += 1.0;
                    }
                }
                Slot::Multi(subs) => {
                    let chosen: BTreeSet<&str> = match value {
                        Some(RecordValue::Multi(c)) => c.iter().map(String::as_str).collect(),
                        _ => BTreeSet::new(),
                    };
                    for (v, fi) in subs {
                        let observed = if chosen.contains(v.as_str()) {
                            Some("yes")
                        } else if value.is_some()
                            || (options.absent_binary_is_no && !negated_set.contains(&features[*fi].id))
                        {
                            Some("no")
                        } else {
                            None
                        };
                        if let Some(o) = observed {
                            *raw[d][*fi].entry(o.to_owned()).or_insert(0.0) += 1.0;
                        }
                    }
                }
            }
        }
    }

    let mut counts = CountTable::default();
    for (d, per_feature) in raw.into_iter().enumerate() {
        for (fi, observed) in per_feature.into_iter().enumerate() {
            let total: f64 = observed.values().sum();
            if total == 0.0 {
                continue;
            }
            let scaled = features[fi]
                .values
                .iter()
                .map(|v| (v.clone(), observed.get(v).copied().unwrap_or(0.0) * COUNT_SCALE / total))
                .collect();
            counts.insert(&schema_def.diseases[d].id, &features[fi].id, scaled);
        }
    }

    let diseases = schema_def
        .diseases
        .iter()
        .zip(&record_counts)
        .map(|(d, &n)| Disease::new(d.id.clone(), d.name.clone(), n as f64))
        .collect();
    KnowledgeBase::new(1, diseases, features, counts, negated_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::PriorStrategy;

    fn schema_two() -> KbSchema {
        KbSchema {
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
                    values: vec!["head".into(), "chest".into(), "back".into()],
                    question_text: "Pain here?".into(),
                },
            ],
            negated_features: vec![],
        }
    }

    fn rec(d: &str, pairs: &[(&str, RecordValue)]) -> Record {
        Record {
            disease_id: d.into(),
            values: pairs.iter().map(|(k, v)| ((*k).to_owned(), v.clone())).collect(),
        }
    }

    #[test]
    fn all_yes_records_give_100_0() {
        let records: Vec<Record> = (0..10)
            .map(|_| rec("d1", &[("f", RecordValue::Single("yes".into()))]))
            .chain(std::iter::once(rec("d2", &[])))
            .collect();
        let kb = build_from_records(&schema_two(), records, &BuildOptions::default()).unwrap();
        let c = kb.count_table().get("d1", "f").unwrap();
        assert_eq!(c["yes"], 100.0);
        assert_eq!(c["no"], 0.0);
        assert!((kb.likelihood("d1", "f", "yes").unwrap() - 101.0 / 102.0).abs() < 1e-15);
    }

    #[test]
    fn empty_stream_errors() {
        let err = build_from_records(&schema_two(), Vec::new(), &BuildOptions::default()).unwrap_err();
        assert_eq!(err.to_string(), "no records");
    }

    #[test]
    fn priors_follow_record_frequency() {
        let records: Vec<Record> = (0..30)
            .map(|_| rec("d1", &[]))
            .chain((0..10).map(|_| rec("d2", &[])))
            .collect();
        let kb = build_from_records(&schema_two(), records, &BuildOptions::default()).unwrap();
        let p = kb.prior(&PriorStrategy::Empirical).unwrap().probs();
        assert!((p[0] - 0.75).abs() < 1e-12 && (p[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn undeclared_value_is_rejected() {
        let records = vec![rec("d1", &[("f", RecordValue::Single("sometimes".into()))])];
        assert!(matches!(
            build_from_records(&schema_two(), records, &BuildOptions::default()),
            Err(KbError::Dangling { .. })
        ));
    }

    #[test]
    fn multi_choice_expands_to_top_m_binary_sub_features() {
        let records = vec![
            rec("d1", &[("loc", RecordValue::Multi(vec!["head".into(), "chest".into()]))]),
            rec("d1", &[("loc", RecordValue::Multi(vec!["chest".into()]))]),
            rec("d2", &[("loc", RecordValue::Multi(vec!["back".into()]))]),
        ];
        let opts = BuildOptions {
            multi_choice_top_m: 2,
            ..BuildOptions::default()
        };
        let kb = build_from_records(&schema_two(), records, &opts).unwrap();
        // chest (2) then back/head tie at 1, broken by label: back.
        assert!(kb.feature("loc__chest").is_some());
        assert!(kb.feature("loc__back").is_some());
        assert!(kb.feature("loc__head").is_none());
        let c = kb.count_table().get("d1", "loc__chest").unwrap();
        assert_eq!(c["yes"], 100.0);
    }

    #[test]
    fn negated_features_are_not_filled() {
        let mut s = schema_two();
        s.negated_features = vec!["f".into()];
        let kb = build_from_records(&s, vec![rec("d1", &[]), rec("d2", &[])], &BuildOptions::default()).unwrap();
        assert!(kb.count_table().get("d1", "f").is_none());
        assert_eq!(kb.likelihood("d1", "f", "yes").unwrap(), 0.5);
    }
}
