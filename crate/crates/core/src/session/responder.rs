//! Things that answer the engine's questions.

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::belief::{ConfidenceLabel, EvidenceValue};
use crate::kb::{Feature, FeatureKind};
use crate::patient::{respond, PatientProfile, Persona};

#[derive(Debug, Error)]
#[error("responder failed: {0}")]
pub struct ResponderError(pub String);

/// One reply to a question.
#[derive(Debug, Clone, PartialEq)]
pub enum Answer {
    /// Free text, routed through the sensor's parsing cascade.
    Text(String),
    /// A schema value with a confidence label; bypasses parsing.
    Structured { value: EvidenceValue, confidence: ConfidenceLabel },
    /// No information, without going through the parser.
    Unknown,
}

impl Answer {
    pub fn yes() -> Answer {
        Answer::Structured {
            value: EvidenceValue::label("yes"),
            confidence: ConfidenceLabel::VeryLikely,
        }
    }

    pub fn no() -> Answer {
        Answer::Structured {
            value: EvidenceValue::label("no"),
            confidence: ConfidenceLabel::VeryLikely,
        }
    }
}

pub trait Responder {
    /// Free-text opening statement (the chief complaint), if any.
    fn opening(&mut self) -> Option<String>;

    fn answer(&mut self, feature: &Feature, question: &str) -> Result<Answer, ResponderError>;
}

fn finding_value(feature: &Feature, label: &str) -> EvidenceValue {
    if feature.kind == FeatureKind::Numeric {
        if let Ok(x) = label.parse::<f64>() {
            return EvidenceValue::Numeric(x);
        }
    }
    EvidenceValue::label(label)
}

/// Answers with the ground-truth finding at `very_likely`; absent findings
/// are unknown. Offers no opening statement, so there is no text intake.
#[derive(Debug, Clone)]
pub struct OracleResponder {
    findings: BTreeMap<String, String>,
}

impl OracleResponder {
    pub fn new(profile: &PatientProfile) -> Self {
        OracleResponder {
            findings: profile.findings.clone(),
        }
    }

    /// Oracle restricted to the findings a foreign KB can name; `map` goes
    /// from the profile's feature ids to the asking KB's ids.
    pub fn translated(profile: &PatientProfile, map: &BTreeMap<String, String>) -> Self {
        OracleResponder {
            findings: profile
                .findings
                .iter()
                .filter_map(|(f, v)| map.get(f).map(|g| (g.clone(), v.clone())))
                .collect(),
        }
    }
}

impl Responder for OracleResponder {
    fn opening(&mut self) -> Option<String> {
        None
    }

    fn answer(&mut self, feature: &Feature, _question: &str) -> Result<Answer, ResponderError> {
        Ok(match self.findings.get(&feature.id) {
            Some(v) => Answer::Structured {
                value: finding_value(feature, v),
                confidence: ConfidenceLabel::VeryLikely,
            },
            None => Answer::Unknown,
        })
    }
}

/// A persona-driven simulated patient answering in free text.
#[derive(Debug, Clone)]
pub struct SimulatedPatient {
    profile: PatientProfile,
    persona: Persona,
    rng: ChaCha8Rng,
    with_opening: bool,
}

impl SimulatedPatient {
    pub fn new(profile: PatientProfile, persona: Persona, seed: u64) -> Self {
        SimulatedPatient {
            profile,
            persona,
            rng: ChaCha8Rng::seed_from_u64(seed),
            with_opening: true,
        }
    }

    /// Suppresses the chief complaint, so the session skips intake.
    pub fn without_opening(mut self) -> Self {
        self.with_opening = false;
        self
    }
}

impl Responder for SimulatedPatient {
    fn opening(&mut self) -> Option<String> {
        self.with_opening.then(|| self.profile.chief_complaint.clone())
    }

    fn answer(&mut self, feature: &Feature, _question: &str) -> Result<Answer, ResponderError> {
        Ok(Answer::Text(respond(&self.profile, &self.persona, feature, &mut self.rng)))
    }
}

/// Replays fixed answers, then defers to a fallback responder.
///
/// Per-feature overrides win over the queue; the queue is consumed in
/// question order.
pub struct ScriptedResponder {
    opening: Option<String>,
    by_feature: BTreeMap<String, Answer>,
    queue: VecDeque<Answer>,
    fallback: Option<Box<dyn Responder + Send>>,
}

impl ScriptedResponder {
    pub fn new() -> Self {
        ScriptedResponder {
            opening: None,
            by_feature: BTreeMap::new(),
            queue: VecDeque::new(),
            fallback: None,
        }
    }

    pub fn with_opening(mut self, text: impl Into<String>) -> Self {
        self.opening = Some(text.into());
        self
    }

    pub fn on_feature(mut self, feature_id: impl Into<String>, answer: Answer) -> Self {
        self.by_feature.insert(feature_id.into(), answer);
        self
    }

    pub fn then(mut self, answer: Answer) -> Self {
        self.queue.push_back(answer);
        self
    }

    pub fn or_else(mut self, fallback: impl Responder + Send + 'static) -> Self {
        self.fallback = Some(Box::new(fallback));
        self
    }
}

impl Default for ScriptedResponder {
    fn default() -> Self {
        ScriptedResponder::new()
    }
}

impl Responder for ScriptedResponder {
    fn opening(&mut self) -> Option<String> {
        match &self.opening {
            Some(t) => Some(t.clone()),
            None => self.fallback.as_mut().and_then(|f| f.opening()),
        }
    }

    fn answer(&mut self, feature: &Feature, question: &str) -> Result<Answer, ResponderError> {
        if let Some(a) = self.by_feature.get(&feature.id) {
            return Ok(a.clone());
        }
        if let Some(a) = self.queue.pop_front() {
            return Ok(a);
        }
        match &mut self.fallback {
            Some(f) => f.answer(feature, question),
            None => Ok(Answer::Unknown),
        }
    }
}
