//! Knowledge bases: diseases, feature schemas, count tables and priors.
//!
//! A [`KnowledgeBase`] is immutable once constructed. Every conditional
//! `P(X_f = v | d)` is a Dirichlet-smoothed categorical over the stored
//! pseudo-counts (`alpha = count + 1`); a `(disease, feature)` pair with no
//! counts is uninformative and yields the uniform distribution over the
//! feature's values. Dense likelihood tables are precomputed at construction
//! so question scoring never touches the string-keyed maps.

mod build;
mod elicited;
mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::belief::Belief;

pub use build::{build_from_records, sub_feature_id, BuildOptions, FeatureSpec, KbSchema, Record, RecordValue, SchemaDisease};
pub use elicited::{import_elicited, ElicitedEntry, ElicitedTables, ImportReport, ImportWarning};
pub use stats::{kb_stats, match_features, FeatureMatching, KbStats};

/// Tolerance on the per-pair "sums to 100" invariant.
pub const COUNT_SUM_TOLERANCE: f64 = 1e-6;
/// Scale that stored pseudo-counts are normalized to for each `(d, f)` pair.
pub const COUNT_SCALE: f64 = 100.0;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("dangling reference at {path}: `{id}` is not declared")]
    Dangling { path: String, id: String },
    #[error("unknown disease `{0}`")]
    UnknownDisease(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("unknown value `{value}` for feature `{feature}`")]
    UnknownValue { feature: String, value: String },
    #[error("no records")]
    NoRecords,
    #[error("empty KB: {0}")]
    EmptyKb(String),
    #[error("conditional prior requested but disease `{0}` has no demographic counts")]
    MissingDemographics(String),
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> KbError {
    KbError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Binary,
    Categorical,
    Ordinal,
    Numeric,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Binary => "binary",
            FeatureKind::Categorical => "categorical",
            FeatureKind::Ordinal => "ordinal",
            FeatureKind::Numeric => "numeric",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericScale {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub id: String,
    pub name: String,
    pub kind: FeatureKind,
    pub values: Vec<String>,
    #[serde(default)]
    pub question_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric_scale: Option<NumericScale>,
    /// Alternative surface forms used by keyword intake.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synonyms: Vec<String>,
}

impl Feature {
    /// Convenience constructor for a `yes`/`no` feature.
    pub fn binary(id: impl Into<String>, name: impl Into<String>, question: impl Into<String>) -> Self {
        Feature {
            id: id.into(),
            name: name.into(),
            kind: FeatureKind::Binary,
            values: vec!["yes".to_owned(), "no".to_owned()],
            question_text: question.into(),
            numeric_scale: None,
            synonyms: Vec::new(),
        }
    }

    pub fn value_index(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }

    /// Numeric grid points for numeric features, parsed from the value labels.
    pub fn grid(&self) -> Option<Vec<f64>> {
        if self.kind != FeatureKind::Numeric {
            return None;
        }
        self.values.iter().map(|v| v.parse::<f64>().ok()).collect()
    }

    pub fn canonical_name(&self) -> String {
        crate::util::canonical_name(&self.name)
    }

    fn validate(&self, path: &str) -> Result<(), KbError> {
        if self.id.trim().is_empty() {
            return Err(schema(path, "feature id is empty"));
        }
        if self.values.len() < 2 {
            return Err(schema(format!("{path}.values"), "a feature needs at least two values"));
        }
        let unique: BTreeSet<&str> = self.values.iter().map(String::as_str).collect();
        if unique.len() != self.values.len() {
            return Err(schema(format!("{path}.values"), "value labels must be unique"));
        }
        match self.kind {
            FeatureKind::Binary => {
                let expected: BTreeSet<&str> = ["yes", "no"].into_iter().collect();
                if unique != expected {
                    return Err(schema(
                        format!("{path}.values"),
                        "binary features take exactly the values {yes, no}",
                    ));
                }
            }
            FeatureKind::Numeric => {
                let scale = self.numeric_scale.ok_or_else(|| {
                    schema(format!("{path}.numeric_scale"), "numeric features need a numeric_scale")
                })?;
                if !(scale.step > 0.0) || !(scale.min < scale.max) {
                    return Err(schema(
                        format!("{path}.numeric_scale"),
                        "numeric_scale needs min < max and step > 0",
                    ));
                }
                let grid = self.grid().ok_or_else(|| {
                    schema(format!("{path}.values"), "numeric value labels must parse as numbers")
                })?;
                if grid.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(schema(format!("{path}.values"), "numeric grid must be strictly ascending"));
                }
                if grid.iter().any(|&g| g < scale.min - 1e-9 || g > scale.max + 1e-9) {
                    return Err(schema(format!("{path}.values"), "numeric grid exceeds numeric_scale"));
                }
            }
            FeatureKind::Categorical | FeatureKind::Ordinal => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

impl FromStr for Sex {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Sex::Male),
            "female" | "f" => Ok(Sex::Female),
            other => Err(format!("unknown sex `{other}`")),
        }
    }
}

/// A joint `(age bin, sex)` demographic cell. Serialized as `"<age_bin>|<sex>"`
/// when used as a map key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DemographicCell {
    pub age_bin: String,
    pub sex: Sex,
}

impl DemographicCell {
    pub fn new(age_bin: impl Into<String>, sex: Sex) -> Self {
        DemographicCell {
            age_bin: age_bin.into(),
            sex,
        }
    }

    fn key(&self) -> String {
        format!("{}|{}", self.age_bin, self.sex.as_str())
    }

    fn parse_key(key: &str) -> Option<Self> {
        let (age, sex) = key.rsplit_once('|')?;
        Some(DemographicCell::new(age, sex.parse().ok()?))
    }
}

impl fmt::Display for DemographicCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Disease {
    pub id: String,
    pub name: String,
    /// Unnormalized prevalence mass.
    pub prior_count: f64,
    pub demographic_counts: Option<BTreeMap<DemographicCell, f64>>,
}

impl Disease {
    pub fn new(id: impl Into<String>, name: impl Into<String>, prior_count: f64) -> Self {
        Disease {
            id: id.into(),
            name: name.into(),
            prior_count,
            demographic_counts: None,
        }
    }
}

/// Pseudo-counts keyed by disease, then feature, then value label.
///
/// Every present `(d, f)` entry sums to 100; absent pairs are uninformative.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CountTable {
    pub counts: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
}

impl CountTable {
    pub fn get(&self, disease: &str, feature: &str) -> Option<&BTreeMap<String, f64>> {
        self.counts.get(disease)?.get(feature)
    }

    pub fn insert(&mut self, disease: &str, feature: &str, counts: BTreeMap<String, f64>) {
        self.counts
            .entry(disease.to_owned())
            .or_default()
            .insert(feature.to_owned(), counts);
    }

    pub fn pair_count(&self) -> usize {
        self.counts.values().map(BTreeMap::len).sum()
    }
}

/// How the initial belief is formed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum PriorStrategy {
    /// Proportional to each disease's `prior_count`.
    #[default]
    Empirical,
    /// `1/K` for every disease.
    Uniform,
    /// Proportional to the subgroup count plus one.
    Conditional { demographics: DemographicCell },
}

impl PriorStrategy {
    pub fn tag(&self) -> &'static str {
        match self {
            PriorStrategy::Empirical => "empirical",
            PriorStrategy::Uniform => "uniform",
            PriorStrategy::Conditional { .. } => "conditional",
        }
    }
}

/// On-disk JSON layout of a knowledge base.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KbFile {
    pub version: u32,
    pub diseases: Vec<DiseaseRecord>,
    pub features: Vec<Feature>,
    pub counts: CountTable,
    #[serde(default)]
    pub negated_features: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demographics: Option<BTreeMap<String, BTreeMap<String, f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiseaseRecord {
    pub id: String,
    pub name: String,
    pub prior_count: f64,
}

/// Dense `P(v | d)` for one feature, laid out `[value * K + disease]`.
#[derive(Debug, Clone)]
pub(crate) struct LikelihoodTable {
    pub(crate) n_values: usize,
    pub(crate) probs: Vec<f64>,
    /// `true` where the pair has counts and the smoothed conditional is not uniform.
    pub(crate) informative: Vec<bool>,
}

impl LikelihoodTable {
    #[inline]
    pub(crate) fn row(&self, value: usize, k: usize) -> &[f64] {
        &self.probs[value * k..(value + 1) * k]
    }
}

#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    version: u32,
    diseases: Vec<Disease>,
    features: Vec<Feature>,
    count_table: CountTable,
    negated_features: Vec<String>,
    disease_ids: Arc<[String]>,
    disease_index: BTreeMap<String, usize>,
    feature_index: BTreeMap<String, usize>,
    tables: Vec<LikelihoodTable>,
}

impl KnowledgeBase {
    /// Validates every invariant and precomputes likelihood tables.
    pub fn new(
        version: u32,
        diseases: Vec<Disease>,
        features: Vec<Feature>,
        count_table: CountTable,
        negated_features: Vec<String>,
    ) -> Result<Self, KbError> {
        if diseases.len() < 2 {
            return Err(schema("diseases", format!("need at least 2 diseases, found {}", diseases.len())));
        }
        Self::new_unchecked_size(version, diseases, features, count_table, negated_features)
    }

    fn new_unchecked_size(
        version: u32,
        diseases: Vec<Disease>,
        features: Vec<Feature>,
        count_table: CountTable,
        negated_features: Vec<String>,
    ) -> Result<Self, KbError> {
        if diseases.is_empty() {
            return Err(schema("diseases", "no diseases declared"));
        }
        if features.is_empty() {
            return Err(schema("features", "need at least 1 feature"));
        }
        let mut disease_index = BTreeMap::new();
        for (i, d) in diseases.iter().enumerate() {
            let path = format!("diseases[{i}]");
            if d.id.trim().is_empty() {
                return Err(schema(path, "disease id is empty"));
            }
            if !(d.prior_count >= 0.0) || !d.prior_count.is_finite() {
                return Err(schema(format!("{path}.prior_count"), "prior_count must be a finite value >= 0"));
            }
            if let Some(demo) = &d.demographic_counts {
                if demo.values().any(|&c| !(c >= 0.0) || !c.is_finite()) {
                    return Err(schema(format!("demographics.{}", d.id), "demographic counts must be >= 0"));
                }
            }
            if disease_index.insert(d.id.clone(), i).is_some() {
                return Err(schema(path, format!("duplicate disease id `{}`", d.id)));
            }
        }
        if !diseases.iter().any(|d| d.prior_count > 0.0) {
            return Err(schema("diseases", "at least one disease needs prior_count > 0"));
        }

        let mut feature_index = BTreeMap::new();
        for (i, f) in features.iter().enumerate() {
            let path = format!("features[{i}]");
            f.validate(&path)?;
            if feature_index.insert(f.id.clone(), i).is_some() {
                return Err(schema(path, format!("duplicate feature id `{}`", f.id)));
            }
        }

        for (d_id, per_feature) in &count_table.counts {
            if !disease_index.contains_key(d_id) {
                return Err(KbError::Dangling {
                    path: "counts".into(),
                    id: d_id.clone(),
                });
            }
            for (f_id, per_value) in per_feature {
                let path = format!("counts.{d_id}.{f_id}");
                let Some(&fi) = feature_index.get(f_id) else {
                    return Err(KbError::Dangling {
                        path: format!("counts.{d_id}"),
                        id: f_id.clone(),
                    });
                };
                let feature = &features[fi];
                let mut sum = 0.0;
                for (value, &count) in per_value {
                    if feature.value_index(value).is_none() {
                        return Err(KbError::Dangling {
                            path: path.clone(),
                            id: value.clone(),
                        });
                    }
                    if !(count >= 0.0) || !count.is_finite() {
                        return Err(schema(format!("{path}.{value}"), "counts must be finite and >= 0"));
                    }
                    sum += count;
                }
                if (sum - COUNT_SCALE).abs() > COUNT_SUM_TOLERANCE {
                    return Err(schema(path, format!("counts must sum to 100, sums to {sum}")));
                }
            }
        }
        for (i, id) in negated_features.iter().enumerate() {
            if !feature_index.contains_key(id) {
                return Err(KbError::Dangling {
                    path: format!("negated_features[{i}]"),
                    id: id.clone(),
                });
            }
        }

        let disease_ids: Arc<[String]> = diseases.iter().map(|d| d.id.clone()).collect();
        let tables = features
            .iter()
            .map(|f| build_table(f, &diseases, &count_table))
            .collect();

        Ok(KnowledgeBase {
            version,
            diseases,
            features,
            count_table,
            negated_features,
            disease_ids,
            disease_index,
            feature_index,
            tables,
        })
    }

    pub fn from_file_repr(file: KbFile) -> Result<Self, KbError> {
        let mut demographics = file.demographics.unwrap_or_default();
        let mut diseases = Vec::with_capacity(file.diseases.len());
        for rec in file.diseases {
            let demographic_counts = match demographics.remove(&rec.id) {
                None => None,
                Some(cells) => {
                    let mut parsed = BTreeMap::new();
                    for (key, count) in cells {
                        let cell = DemographicCell::parse_key(&key).ok_or_else(|| {
                            schema(
                                format!("demographics.{}.{key}", rec.id),
                                "cell keys look like \"<age_bin>|<male|female>\"",
                            )
                        })?;
                        parsed.insert(cell, count);
                    }
                    Some(parsed)
                }
            };
            diseases.push(Disease {
                id: rec.id,
                name: rec.name,
                prior_count: rec.prior_count,
                demographic_counts,
            });
        }
        if let Some(id) = demographics.into_keys().next() {
            return Err(KbError::Dangling {
                path: "demographics".into(),
                id,
            });
        }
        KnowledgeBase::new(file.version, diseases, file.features, file.counts, file.negated_features)
    }

    pub fn to_file_repr(&self) -> KbFile {
        let demographics: BTreeMap<String, BTreeMap<String, f64>> = self
            .diseases
            .iter()
            .filter_map(|d| {
                d.demographic_counts.as_ref().map(|cells| {
                    (d.id.clone(), cells.iter().map(|(c, &n)| (c.key(), n)).collect())
                })
            })
            .collect();
        KbFile {
            version: self.version,
            diseases: self
                .diseases
                .iter()
                .map(|d| DiseaseRecord {
                    id: d.id.clone(),
                    name: d.name.clone(),
                    prior_count: d.prior_count,
                })
                .collect(),
            features: self.features.clone(),
            counts: self.count_table.clone(),
            negated_features: self.negated_features.clone(),
            demographics: (!demographics.is_empty()).then_some(demographics),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, KbError> {
        let file: KbFile = serde_json::from_str(s)?;
        KnowledgeBase::from_file_repr(file)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_file_repr()).expect("kb serializes")
    }

    /// Hex SHA-256 of the canonical compact JSON encoding.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_file_repr()).expect("kb serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn diseases(&self) -> &[Disease] {
        &self.diseases
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn count_table(&self) -> &CountTable {
        &self.count_table
    }

    pub fn negated_features(&self) -> &[String] {
        &self.negated_features
    }

    pub fn n_diseases(&self) -> usize {
        self.diseases.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn disease_ids(&self) -> &Arc<[String]> {
        &self.disease_ids
    }

    pub fn disease_index(&self, id: &str) -> Option<usize> {
        self.disease_index.get(id).copied()
    }

    pub fn feature_index(&self, id: &str) -> Option<usize> {
        self.feature_index.get(id).copied()
    }

    pub fn disease(&self, id: &str) -> Option<&Disease> {
        self.disease_index(id).map(|i| &self.diseases[i])
    }

    pub fn feature(&self, id: &str) -> Option<&Feature> {
        self.feature_index(id).map(|i| &self.features[i])
    }

    pub(crate) fn table(&self, feature: usize) -> &LikelihoodTable {
        &self.tables[feature]
    }

    /// Smoothed `P(X_f = v | d)`, strictly inside `(0, 1)`.
    pub fn likelihood(&self, disease: &str, feature: &str, value: &str) -> Result<f64, KbError> {
        let d = self
            .disease_index(disease)
            .ok_or_else(|| KbError::UnknownDisease(disease.to_owned()))?;
        let fi = self
            .feature_index(feature)
            .ok_or_else(|| KbError::UnknownFeature(feature.to_owned()))?;
        let v = self.features[fi]
            .value_index(value)
            .ok_or_else(|| KbError::UnknownValue {
                feature: feature.to_owned(),
                value: value.to_owned(),
            })?;
        Ok(self.tables[fi].row(v, self.n_diseases())[d])
    }

    /// Full smoothed conditional `P(X_f | d)` in value declaration order.
    pub fn conditional(&self, disease: usize, feature: usize) -> Vec<f64> {
        let table = &self.tables[feature];
        let k = self.n_diseases();
        (0..table.n_values).map(|v| table.row(v, k)[disease]).collect()
    }

    /// Whether the `(d, f)` conditional carries information (has counts and is
    /// not exactly uniform).
    pub fn is_informative(&self, disease: usize, feature: usize) -> bool {
        self.tables[feature].informative[disease]
    }

    /// Initial belief under the given strategy.
    pub fn prior(&self, strategy: &PriorStrategy) -> Result<Belief, KbError> {
        let weights: Vec<f64> = match strategy {
            PriorStrategy::Empirical => self.diseases.iter().map(|d| d.prior_count).collect(),
            PriorStrategy::Uniform => vec![1.0; self.n_diseases()],
            PriorStrategy::Conditional { demographics } => self
                .diseases
                .iter()
                .map(|d| {
                    let cells = d
                        .demographic_counts
                        .as_ref()
                        .ok_or_else(|| KbError::MissingDemographics(d.id.clone()))?;
                    Ok(cells.get(demographics).copied().unwrap_or(0.0) + 1.0)
                })
                .collect::<Result<_, KbError>>()?,
        };
        Ok(Belief::from_weights(self.disease_ids.clone(), &weights)
            .expect("validated prior weights are finite, nonnegative and not all zero"))
    }

    /// A KB over a subset of diseases, kept in this KB's declaration order.
    ///
    /// Unlike [`KnowledgeBase::new`] this allows a single disease, which the
    /// scaling experiment needs for its degenerate subset size.
    pub fn restrict_diseases(&self, keep: &[String]) -> Result<KnowledgeBase, KbError> {
        let keep: BTreeSet<&str> = keep.iter().map(String::as_str).collect();
        for id in &keep {
            if !self.disease_index.contains_key(*id) {
                return Err(KbError::UnknownDisease((*id).to_owned()));
            }
        }
        let diseases: Vec<Disease> = self
            .diseases
            .iter()
            .filter(|d| keep.contains(d.id.as_str()))
            .cloned()
            .collect();
        if !diseases.iter().any(|d| d.prior_count > 0.0) {
            return Err(KbError::EmptyKb("every kept disease has zero prior mass".into()));
        }
        let counts = self
            .count_table
            .counts
            .iter()
            .filter(|(d, _)| keep.contains(d.as_str()))
            .map(|(d, m)| (d.clone(), m.clone()))
            .collect();
        KnowledgeBase::new_unchecked_size(
            self.version,
            diseases,
            self.features.clone(),
            CountTable { counts },
            self.negated_features.clone(),
        )
    }
}

fn build_table(feature: &Feature, diseases: &[Disease], counts: &CountTable) -> LikelihoodTable {
    let k = diseases.len();
    let n_values = feature.values.len();
    let uniform = 1.0 / n_values as f64;
    let mut probs = vec![uniform; n_values * k];
    let mut informative = vec![false; k];
    for (d, disease) in diseases.iter().enumerate() {
        let Some(per_value) = counts.get(&disease.id, &feature.id) else {
            continue;
        };
        let alphas: Vec<f64> = feature
            .values
            .iter()
            .map(|v| per_value.get(v).copied().unwrap_or(0.0) + 1.0)
            .collect();
        let total: f64 = alphas.iter().sum();
        for (v, a) in alphas.iter().enumerate() {
            probs[v * k + d] = a / total;
        }
        let max = alphas.iter().copied().fold(f64::MIN, f64::max);
        let min = alphas.iter().copied().fold(f64::MAX, f64::min);
        informative[d] = max != min;
    }
    LikelihoodTable {
        n_values,
        probs,
        informative,
    }
}

/// Reads and validates a KB JSON file.
pub fn load_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase, KbError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })?;
    KnowledgeBase::from_json_str(&text)
}
