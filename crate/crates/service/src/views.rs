//! Wire shapes for the HTTP API.
//!
//! Anything a patient-facing client can fetch is built here from session
//! state, and none of it carries belief-derived numbers. The clinician trace
//! is the only view that exposes the posterior.

use bmbe::session::{Outcome, Session, Step, StopReason, TraceHeader, TurnRecord};
use bmbe::sensor::confidence_indicator;
use bmbe::{ConfidenceLabel, EvidenceValue};
use serde::{Deserialize, Serialize};

/// Prompt shown before the opening narrative of a human-patient session.
pub const INTAKE_PROMPT: &str = "What brings you in today? Please describe how you have been feeling.";

/// Shown to the patient when the engine declines to diagnose.
pub const REFERRAL_MESSAGE: &str = "We could not reach a confident assessment. You are referred for further evaluation.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandleState {
    AwaitingAnswer,
    Committed,
    Abstained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionView {
    /// Absent while the session waits for the opening narrative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_id: Option<String>,
    pub text: String,
    /// `narrative` for the opening prompt, otherwise the feature kind.
    pub kind: String,
    /// Schema values the client may offer as buttons.
    pub values: Vec<String>,
    pub reask: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OutcomeView {
    Committed {
        disease_id: String,
        display_name: String,
        /// `low`, `medium` or `high`.
        confidence_band: String,
    },
    Abstained {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHandle {
    pub session_id: String,
    pub kb_id: String,
    pub state: HandleState,
    pub turn: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_question: Option<QuestionView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
}

fn outcome_view(session: &Session, outcome: &Outcome) -> OutcomeView {
    match outcome {
        Outcome::Committed { disease_id } => {
            let band = confidence_indicator(session.belief().max_prob())
                .map(|k| k.as_str())
                .unwrap_or("low");
            OutcomeView::Committed {
                display_name: session
                    .kb()
                    .disease(disease_id)
                    .map_or_else(|| disease_id.clone(), |d| d.name.clone()),
                disease_id: disease_id.clone(),
                confidence_band: band.to_owned(),
            }
        }
        Outcome::Abstained => OutcomeView::Abstained {
            message: REFERRAL_MESSAGE.to_owned(),
        },
    }
}

impl SessionHandle {
    pub fn of(kb_id: &str, session: &Session) -> SessionHandle {
        let mut h = SessionHandle {
            session_id: session.id().to_owned(),
            kb_id: kb_id.to_owned(),
            state: HandleState::AwaitingAnswer,
            turn: session.turn(),
            current_question: None,
            outcome: None,
            stop_reason: session.stop_reason(),
        };
        match session.current() {
            Step::Intake => {
                h.current_question = Some(QuestionView {
                    feature_id: None,
                    text: INTAKE_PROMPT.to_owned(),
                    kind: "narrative".to_owned(),
                    values: Vec::new(),
                    reask: false,
                })
            }
            Step::Ask(q) => {
                let feature = session.kb().feature(&q.feature_id).expect("asked feature exists");
                h.current_question = Some(QuestionView {
                    feature_id: Some(q.feature_id.clone()),
                    text: q.text,
                    kind: feature.kind.as_str().to_owned(),
                    values: feature.values.clone(),
                    reask: q.reask,
                });
            }
            Step::Done(outcome) => {
                h.state = match outcome {
                    Outcome::Committed { .. } => HandleState::Committed,
                    Outcome::Abstained => HandleState::Abstained,
                };
                h.outcome = Some(outcome_view(session, &outcome));
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredAnswer {
    /// A schema label, a number for numeric features, or `"unknown"`.
    pub value: EvidenceValue,
    #[serde(default = "very_likely")]
    pub confidence_label: ConfidenceLabel,
}

fn very_likely() -> ConfidenceLabel {
    ConfidenceLabel::VeryLikely
}

/// Body of `POST /sessions/{id}/answer`. Exactly one of `text` and
/// `structured` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerBody {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured: Option<StructuredAnswer>,
    /// Client-chosen token. Resending the same nonce with the same body
    /// returns the original response without applying the answer again.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_nonce: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTurn {
    pub turn: u32,
    pub question: String,
    pub answer: String,
    pub reask: bool,
}

/// What a patient may see of their own session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTrace {
    pub session_id: String,
    pub state: HandleState,
    pub turns: Vec<PatientTurn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeView>,
}

impl PatientTrace {
    pub fn of(handle: &SessionHandle, records: &[TurnRecord]) -> PatientTrace {
        PatientTrace {
            session_id: handle.session_id.clone(),
            state: handle.state,
            turns: records
                .iter()
                .map(|r| PatientTurn {
                    turn: r.turn,
                    question: r.question_text.clone(),
                    answer: r.raw_answer.clone(),
                    reask: r.reask_count > 0,
                })
                .collect(),
            outcome: handle.outcome.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalBelief {
    pub top5: Vec<bmbe::session::RankedDisease>,
    pub max_posterior: f64,
    pub ranking: Vec<String>,
}

/// The full audit record: the trace header and every turn verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicianTrace {
    pub handle: SessionHandle,
    pub header: TraceHeader,
    pub records: Vec<TurnRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_belief: Option<FinalBelief>,
}
