//! Synthetic patients and rule-based communication personas.
//!
//! Profiles are drawn by ancestral sampling: the disease is fixed, then each
//! feature whose conditional carries information for that disease is drawn
//! independently from `P(X_f | d)`. Features with no information are left out
//! of the findings, and the patient answers "I'm not sure" when asked.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{Feature, FeatureKind, KnowledgeBase, Sex, COUNT_SCALE};
use crate::util::stable_hash;

pub const MIN_AGE: u32 = 18;
pub const MAX_AGE: u32 = 90;

#[derive(Debug, Error)]
pub enum PatientError {
    #[error("unknown disease `{0}`")]
    UnknownDisease(String),
    #[error("n_per must be at least 1")]
    EmptyCohort,
    #[error("stratified subset of {n} cannot cover {k} diseases")]
    TooFewForStrata { n: usize, k: usize },
    #[error("stratified subset of {n} exceeds the {available} available profiles")]
    TooMany { n: usize, available: usize },
    #[error("invalid persona: {0}")]
    InvalidPersona(String),
    #[error("cannot read profiles from {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub id: String,
    pub disease_id: String,
    pub age: u32,
    pub sex: Sex,
    /// Ground-truth value label per feature.
    pub findings: BTreeMap<String, String>,
    pub chief_complaint: String,
    pub seed: u64,
}

/// Which distribution ancestral sampling draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    /// The smoothed conditionals the engine itself uses.
    #[default]
    Smoothed,
    /// Raw stored counts divided by 100 (no smoothing), for exact fixtures.
    Counts,
}

fn conditional(kb: &KnowledgeBase, d: usize, fi: usize, source: SampleSource) -> Vec<f64> {
    match source {
        SampleSource::Smoothed => kb.conditional(d, fi),
        SampleSource::Counts => {
            let feature = &kb.features()[fi];
            let disease = &kb.diseases()[d].id;
            match kb.count_table().get(disease, &feature.id) {
                Some(c) => feature
                    .values
                    .iter()
                    .map(|v| c.get(v).copied().unwrap_or(0.0) / COUNT_SCALE)
                    .collect(),
                None => kb.conditional(d, fi),
            }
        }
    }
}

fn draw(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    // Rounding left a sliver: fall back to the last value with mass.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// Text built from the first three positive binary findings in KB order.
pub fn chief_complaint(kb: &KnowledgeBase, findings: &BTreeMap<String, String>) -> String {
    let positives: Vec<&str> = kb
        .features()
        .iter()
        .filter(|f| f.kind == FeatureKind::Binary && findings.get(&f.id).is_some_and(|v| v == "yes"))
        .take(3)
        .map(|f| f.name.as_str())
        .collect();
    match positives.as_slice() {
        [] => "I haven't been feeling well.".to_owned(),
        [a] => format!("I have been having {a}."),
        [a, b] => format!("I have been having {a} and {b}."),
        [a, b, c] => format!("I have been having {a}, {b} and {c}."),
        _ => unreachable!("at most three"),
    }
}

pub fn sample_patient(kb: &KnowledgeBase, disease_id: &str, seed: u64) -> Result<PatientProfile, PatientError> {
    sample_patient_from(kb, disease_id, seed, SampleSource::Smoothed)
}

pub fn sample_patient_from(
    kb: &KnowledgeBase,
    disease_id: &str,
    seed: u64,
    source: SampleSource,
) -> Result<PatientProfile, PatientError> {
    let d = kb
        .disease_index(disease_id)
        .ok_or_else(|| PatientError::UnknownDisease(disease_id.to_owned()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let age = rng.gen_range(MIN_AGE..=MAX_AGE);
    let sex = if rng.gen_bool(0.5) { Sex::Male } else { Sex::Female };
    let mut findings = BTreeMap::new();
    for (fi, feature) in kb.features().iter().enumerate() {
        if !kb.is_informative(d, fi) {
            continue;
        }
        let v = draw(&mut rng, &conditional(kb, d, fi, source));
        findings.insert(feature.id.clone(), feature.values[v].clone());
    }
    Ok(PatientProfile {
        id: format!("{disease_id}-{seed:016x}"),
        disease_id: disease_id.to_owned(),
        age,
        sex,
        chief_complaint: chief_complaint(kb, &findings),
        findings,
        seed,
    })
}

/// Per-profile seed derived from the cohort seed, disease and index.
pub fn profile_seed(cohort_seed: u64, disease_id: &str, index: usize) -> u64 {
    stable_hash(&[
        &cohort_seed.to_le_bytes(),
        disease_id.as_bytes(),
        &(index as u64).to_le_bytes(),
    ])
}

/// `n_per` patients for every disease, in KB disease order.
pub fn generate_cohort(kb: &KnowledgeBase, n_per: usize, seed: u64) -> Result<Vec<PatientProfile>, PatientError> {
    if n_per == 0 {
        return Err(PatientError::EmptyCohort);
    }
    let mut out = Vec::with_capacity(n_per * kb.n_diseases());
    for disease in kb.diseases() {
        for i in 0..n_per {
            let mut p = sample_patient(kb, &disease.id, profile_seed(seed, &disease.id, i))?;
            p.id = format!("{}-{i:03}", disease.id);
            out.push(p);
        }
    }
    Ok(out)
}

/// A random subset of `n` profiles containing at least one per disease.
/// Output keeps the input order.
pub fn stratified_subset(profiles: &[PatientProfile], n: usize, seed: u64) -> Result<Vec<PatientProfile>, PatientError> {
    let mut by_disease: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in profiles.iter().enumerate() {
        by_disease.entry(&p.disease_id).or_default().push(i);
    }
    let k = by_disease.len();
    if n < k {
        return Err(PatientError::TooFewForStrata { n, k });
    }
    if n > profiles.len() {
        return Err(PatientError::TooMany {
            n,
            available: profiles.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = BTreeSet::new();
    for idx in by_disease.values() {
        chosen.insert(*idx.choose(&mut rng).expect("non-empty group"));
    }
    let mut rest: Vec<usize> = (0..profiles.len()).filter(|i| !chosen.contains(i)).collect();
    rest.shuffle(&mut rng);
    chosen.extend(rest.into_iter().take(n - k));
    Ok(chosen.into_iter().map(|i| profiles[i].clone()).collect())
}

/// Reads profiles from a JSON array or JSON-lines file.
pub fn load_profiles(path: impl AsRef<Path>) -> Result<Vec<PatientProfile>, PatientError> {
    let path = path.as_ref();
    let io = |message: String| PatientError::Io {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| io(e.to_string()));
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| io(e.to_string())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Plain,
    Overanxious,
    Distrustful,
    Dazed,
    Verbose,
}

impl Archetype {
    pub const ALL: [Archetype; 5] = [
        Archetype::Plain,
        Archetype::Overanxious,
        Archetype::Distrustful,
        Archetype::Dazed,
        Archetype::Verbose,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Archetype::Plain => "plain",
            Archetype::Overanxious => "overanxious",
            Archetype::Distrustful => "distrustful",
            Archetype::Dazed => "dazed",
            Archetype::Verbose => "verbose",
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Archetype {
    type Err = PatientError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| PatientError::InvalidPersona(format!("unknown archetype `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub archetype: Archetype,
    pub p_false_positive: f64,
    pub p_withhold: f64,
    pub p_flip: f64,
    pub p_hedge: f64,
    pub verbosity_pad: usize,
}

impl Persona {
    pub fn plain() -> Persona {
        Persona {
            archetype: Archetype::Plain,
            p_false_positive: 0.0,
            p_withhold: 0.0,
            p_flip: 0.0,
            p_hedge: 0.0,
            verbosity_pad: 0,
        }
    }

    /// The archetype with its default perturbation parameters.
    pub fn preset(archetype: Archetype) -> Persona {
        let base = Persona {
            archetype,
            ..Persona::plain()
        };
        match archetype {
            Archetype::Plain => base,
            Archetype::Overanxious => Persona {
                p_false_positive: 0.25,
                ..base
            },
            Archetype::Distrustful => Persona { p_withhold: 0.5, ..base },
            Archetype::Dazed => Persona {
                p_flip: 0.15,
                p_hedge: 0.6,
                ..base
            },
            Archetype::Verbose => Persona {
                verbosity_pad: 25,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), PatientError> {
        for (name, p) in [
            ("p_false_positive", self.p_false_positive),
            ("p_withhold", self.p_withhold),
            ("p_flip", self.p_flip),
            ("p_hedge", self.p_hedge),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(PatientError::InvalidPersona(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if self.archetype == Archetype::Plain
            && (self.p_false_positive > 0.0 || self.p_withhold > 0.0 || self.p_flip > 0.0 || self.p_hedge > 0.0)
        {
            return Err(PatientError::InvalidPersona("plain persona has nonzero perturbations".into()));
        }
        Ok(())
    }
}

/// Neutral padding for verbose answers: no polarity words, hedges, digits or
/// symptom vocabulary, so padding never changes what the parser extracts.
pub const FILLER_WORDS: [&str; 30] = [
    "well", "honestly", "the", "weather", "has", "been", "busy", "lately", "my", "neighbour", "cat", "garden",
    "morning", "coffee", "traffic", "today", "week", "work", "family", "visiting", "kitchen", "radio", "bus",
    "again", "and", "then", "yesterday", "shopping", "parking", "dinner",
];

#[derive(Debug, Clone, PartialEq)]
enum Draft {
    Value(usize),
    NotSure,
    Withheld,
}

fn positive_index(feature: &Feature) -> Option<usize> {
    match feature.kind {
        FeatureKind::Binary => feature.value_index("yes"),
        FeatureKind::Ordinal | FeatureKind::Numeric => Some(feature.values.len() - 1),
        FeatureKind::Categorical => None,
    }
}

fn is_negative(feature: &Feature, draft: &Draft) -> bool {
    match draft {
        Draft::NotSure => true,
        Draft::Value(v) => match feature.kind {
            FeatureKind::Binary => feature.values[*v] == "no",
            FeatureKind::Ordinal | FeatureKind::Numeric => *v == 0,
            FeatureKind::Categorical => false,
        },
        Draft::Withheld => false,
    }
}

fn render(feature: &Feature, draft: &Draft, hedged: bool) -> String {
    match draft {
        Draft::NotSure => "I'm not sure.".to_owned(),
        Draft::Withheld => "I'd rather not say.".to_owned(),
        Draft::Value(v) => {
            let label = &feature.values[*v];
            match (feature.kind, hedged) {
                (FeatureKind::Binary, false) => if label == "yes" { "Yes." } else { "No." }.to_owned(),
                (FeatureKind::Binary, true) => if label == "yes" { "I think so." } else { "I don't think so." }.to_owned(),
                (FeatureKind::Numeric, false) => format!("I'd say {label}."),
                (FeatureKind::Numeric, true) => format!("Maybe around {label}."),
                (_, false) => format!("It's {label}."),
                (_, true) => format!("I think it's {label}."),
            }
        }
    }
}

/// One answer from a simulated patient. Perturbations apply in a fixed
/// order: over-reporting, withholding, flipping and hedging, then padding.
pub fn respond(profile: &PatientProfile, persona: &Persona, feature: &Feature, rng: &mut impl Rng) -> String {
    let mut draft = match profile.findings.get(&feature.id).and_then(|v| feature.value_index(v)) {
        Some(v) => Draft::Value(v),
        None => Draft::NotSure,
    };
    let mut hedged = false;

    if persona.p_false_positive > 0.0 && is_negative(feature, &draft) {
        if let Some(pos) = positive_index(feature) {
            if rng.gen_bool(persona.p_false_positive) {
                draft = Draft::Value(pos);
            }
        }
    }
    if persona.p_withhold > 0.0 && rng.gen_bool(persona.p_withhold) {
        draft = Draft::Withheld;
    }
    if let Draft::Value(v) = draft {
        if persona.p_flip > 0.0 && rng.gen_bool(persona.p_flip) {
            let n = feature.values.len();
            draft = Draft::Value(if feature.kind == FeatureKind::Binary {
                1 - v
            } else {
                (v + rng.gen_range(1..n)) % n
            });
        }
        if persona.p_hedge > 0.0 && rng.gen_bool(persona.p_hedge) {
            hedged = true;
        }
    }

    let answer = render(feature, &draft, hedged);
    if persona.verbosity_pad == 0 {
        return answer;
    }
    let words: Vec<&str> = (0..persona.verbosity_pad)
        .map(|_| *FILLER_WORDS.choose(rng).expect("non-empty"))
        .collect();
    let split = words.len() / 2;
    let mut out = String::new();
    if split > 0 {
        out.push_str(&capitalize(&words[..split].join(" ")));
        out.push_str(". ");
    }
    out.push_str(&answer);
    if split < words.len() {
        out.push(' ');
        out.push_str(&capitalize(&words[split..].join(" ")));
        out.push('.');
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}
