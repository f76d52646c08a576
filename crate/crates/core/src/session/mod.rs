//! The diagnostic session loop: intake, question turns, stop check, and the
//! final commit-or-abstain decision.
//!
//! [`Session`] is a step machine so that an interactive front end can feed
//! answers one at a time; [`run_session`] drives it to completion against a
//! [`Responder`]. Each completed turn appends a [`TurnRecord`] to the trace.

mod responder;
pub mod trace;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{
    evidence_likelihood, update_belief, Belief, BeliefError, ConfidenceLabel, ConfidenceScale, EvidenceTriple,
    EvidenceValue, Tier, DEFAULT_NUMERIC_SIGMA,
};
use crate::kb::{KbError, KnowledgeBase, PriorStrategy};
use crate::policy::{select_scored, AskedSet, PolicyConfig, PolicyError};
use crate::sensor::{confidence_indicator, Kappa, ParseOutcome, ParsedValue, Sensor};
use crate::util::stable_hash;

pub use responder::{Answer, OracleResponder, Responder, ResponderError, ScriptedResponder, SimulatedPatient};
pub use trace::{read_trace_jsonl, replay_trace, write_trace_jsonl, TraceHeader};

/// Prompt shown while the session waits for the opening narrative.
pub const OPENING_PROMPT: &str = "What brings you in today?";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("session is {state}; cannot {action}")]
    WrongState { state: &'static str, action: &'static str },
    #[error("invalid answer: {0}")]
    InvalidAnswer(String),
    #[error("trace error: {0}")]
    Trace(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub tau: f64,
    pub t_min: u32,
    pub t_max: u32,
    pub policy: PolicyConfig,
    pub prior_strategy: PriorStrategy,
    pub confidence_scale: ConfidenceScale,
    pub numeric_sigma: f64,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            tau: 0.5,
            t_min: 12,
            t_max: 20,
            policy: PolicyConfig::default(),
            prior_strategy: PriorStrategy::Empirical,
            confidence_scale: ConfidenceScale::default(),
            numeric_sigma: DEFAULT_NUMERIC_SIGMA,
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(SessionError::InvalidConfig(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.t_min > self.t_max {
            return Err(SessionError::InvalidConfig(format!(
                "t_min {} exceeds t_max {}",
                self.t_min, self.t_max
            )));
        }
        if !(self.numeric_sigma > 0.0 && self.numeric_sigma.is_finite()) {
            return Err(SessionError::InvalidConfig(format!(
                "numeric_sigma {} must be positive",
                self.numeric_sigma
            )));
        }
        self.policy.validate()?;
        self.confidence_scale.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDisease {
    pub disease_id: String,
    pub prob: f64,
}

fn top5(b: &Belief) -> Vec<RankedDisease> {
    b.ranking()
        .into_iter()
        .take(5)
        .map(|(disease_id, prob)| RankedDisease { disease_id, prob })
        .collect()
}

/// The parser's reading of one answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub value: ParsedValue,
    pub confidence_label: Option<ConfidenceLabel>,
    /// Numeric weight applied, when an update was attempted.
    pub confidence: Option<f64>,
    pub tier: Tier,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: u32,
    pub asked_feature: String,
    pub eig_value: f64,
    /// Selection score (equals `eig_value` under the global policy).
    pub score: f64,
    pub kappa: Kappa,
    pub question_text: String,
    pub raw_answer: String,
    pub parsed: ParsedAnswer,
    pub update_applied: bool,
    pub posterior_top5: Vec<RankedDisease>,
    pub entropy_bits: f64,
    pub max_posterior: f64,
    pub reask_count: u32,
    /// First reply when the question had to be re-asked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Committed { disease_id: String },
    Abstained,
}

impl Outcome {
    pub fn committed(&self) -> Option<&str> {
        match self {
            Outcome::Committed { disease_id } => Some(disease_id),
            Outcome::Abstained => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The max posterior reached tau after the warm-up.
    Threshold,
    /// The budget ran out below tau.
    BudgetAbstain,
    /// No unasked features remained.
    Exhausted,
    /// The responder failed; the trace is partial.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub session_id: String,
    #[serde(default)]
    pub profile_id: Option<String>,
    pub outcome: Outcome,
    pub final_belief_top5: Vec<RankedDisease>,
    pub final_max_posterior: f64,
    /// Every disease id, most probable first.
    pub final_ranking: Vec<String>,
    pub turns_used: u32,
    pub intake_triples: Vec<EvidenceTriple>,
    pub trace: Vec<TurnRecord>,
    pub stop_reason: StopReason,
    #[serde(default)]
    pub incomplete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SessionResult {
    /// 1-based rank of a disease in the final posterior.
    pub fn rank_of(&self, disease_id: &str) -> Option<usize> {
        self.final_ranking.iter().position(|d| d == disease_id).map(|i| i + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Continue,
    Commit(String),
    Abstain,
}

/// The stopping rule. Commits need `t >= t_min` unless features ran out;
/// abstention happens only at the budget or on exhaustion.
pub fn decide(b: &Belief, cfg: &SessionConfig, t: u32, exhausted: bool) -> Decision {
    let (best, max) = b.argmax();
    if max >= cfg.tau && (t >= cfg.t_min || exhausted) {
        Decision::Commit(best)
    } else if exhausted || t >= cfg.t_max {
        Decision::Abstain
    } else {
        Decision::Continue
    }
}

/// A question currently awaiting an answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub feature_id: String,
    pub text: String,
    pub turn: u32,
    pub reask: bool,
    pub kappa: Kappa,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    /// Waiting for the opening narrative.
    Intake,
    Ask(Question),
    Done(Outcome),
}

#[derive(Debug, Clone)]
struct Pending {
    feature_idx: usize,
    eig: f64,
    score: f64,
    kappa: Kappa,
    question: String,
    reask_count: u32,
    initial_answer: Option<String>,
}

#[derive(Debug, Clone)]
enum Phase {
    Intake,
    Asking(Pending),
    Done(Outcome, StopReason),
}

/// Deterministic session id for batch runs.
pub fn derive_session_id(seed: u64, profile_id: &str) -> String {
    format!("s-{:016x}", stable_hash(&[&seed.to_le_bytes(), profile_id.as_bytes()]))
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    profile_id: Option<String>,
    kb: Arc<KnowledgeBase>,
    sensor: Sensor,
    cfg: SessionConfig,
    belief: Belief,
    asked: AskedSet,
    turn: u32,
    intake: Vec<EvidenceTriple>,
    trace: Vec<TurnRecord>,
    phase: Phase,
    error: Option<String>,
}

impl Session {
    pub fn new(
        id: impl Into<String>,
        kb: Arc<KnowledgeBase>,
        sensor: Sensor,
        cfg: SessionConfig,
    ) -> Result<Session, SessionError> {
        cfg.validate()?;
        let belief = kb.prior(&cfg.prior_strategy)?;
        Ok(Session {
            id: id.into(),
            profile_id: None,
            kb,
            sensor,
            cfg,
            belief,
            asked: AskedSet::new(),
            turn: 0,
            intake: Vec::new(),
            trace: Vec::new(),
            phase: Phase::Intake,
            error: None,
        })
    }

    pub fn with_profile_id(mut self, profile_id: impl Into<String>) -> Self {
        self.profile_id = Some(profile_id.into());
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn profile_id(&self) -> Option<&str> {
        self.profile_id.as_deref()
    }

    pub fn kb(&self) -> &Arc<KnowledgeBase> {
        &self.kb
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn belief(&self) -> &Belief {
        &self.belief
    }

    pub fn turn(&self) -> u32 {
        self.turn
    }

    pub fn trace(&self) -> &[TurnRecord] {
        &self.trace
    }

    pub fn intake_triples(&self) -> &[EvidenceTriple] {
        &self.intake
    }

    pub fn is_done(&self) -> bool {
        matches!(self.phase, Phase::Done(..))
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        match &self.phase {
            Phase::Done(_, r) => Some(*r),
            _ => None,
        }
    }

    fn state_name(&self) -> &'static str {
        match &self.phase {
            Phase::Intake => "awaiting intake",
            Phase::Asking(_) => "awaiting an answer",
            Phase::Done(Outcome::Committed { .. }, _) => "committed",
            Phase::Done(Outcome::Abstained, _) => "abstained",
        }
    }

    /// The current step without advancing.
    pub fn current(&self) -> Step {
        match &self.phase {
            Phase::Intake => Step::Intake,
            Phase::Asking(p) => Step::Ask(self.question_of(p)),
            Phase::Done(o, _) => Step::Done(o.clone()),
        }
    }

    fn question_of(&self, p: &Pending) -> Question {
        Question {
            feature_id: self.kb.features()[p.feature_idx].id.clone(),
            text: p.question.clone(),
            turn: self.turn,
            reask: p.reask_count > 0,
            kappa: p.kappa,
        }
    }

    fn kappa(&self) -> Kappa {
        confidence_indicator(self.belief.max_prob()).unwrap_or(Kappa::Low)
    }

    /// Applies the opening narrative (if any) and moves to the first question.
    pub fn open(&mut self, narrative: Option<&str>) -> Result<Step, SessionError> {
        if !matches!(self.phase, Phase::Intake) {
            return Err(SessionError::WrongState {
                state: self.state_name(),
                action: "take an opening statement",
            });
        }
        let triples = match narrative {
            Some(text) => self
                .sensor
                .bulk_intake(text, &self.kb, &self.cfg.confidence_scale),
            None => Vec::new(),
        };
        self.apply_intake(triples)
    }

    fn apply_intake(&mut self, triples: Vec<EvidenceTriple>) -> Result<Step, SessionError> {
        for t in triples {
            if self.asked.contains(&t.feature_id) {
                continue;
            }
            self.belief = update_belief(&self.belief, &self.kb, &t, self.cfg.numeric_sigma)?;
            self.asked.insert(t.feature_id.clone());
            self.intake.push(t);
        }
        self.advance()
    }

    /// Chooses the next question or finishes the session.
    fn advance(&mut self) -> Result<Step, SessionError> {
        if self.turn > 0 || self.cfg.t_max == 0 {
            match decide(&self.belief, &self.cfg, self.turn, false) {
                Decision::Continue => {}
                Decision::Commit(d) => return Ok(self.finish(Outcome::Committed { disease_id: d }, StopReason::Threshold)),
                Decision::Abstain => return Ok(self.finish(Outcome::Abstained, StopReason::BudgetAbstain)),
            }
        }
        let pick = match select_scored(&self.belief, &self.kb, &self.asked, &self.cfg.policy) {
            Ok(pick) => pick,
            Err(PolicyError::Exhausted) => {
                let outcome = match decide(&self.belief, &self.cfg, self.turn, true) {
                    Decision::Commit(d) => Outcome::Committed { disease_id: d },
                    _ => Outcome::Abstained,
                };
                return Ok(self.finish(outcome, StopReason::Exhausted));
            }
            Err(e) => return Err(e.into()),
        };
        let feature_idx = self.kb.feature_index(&pick.feature_id).expect("policy returns KB features");
        self.turn += 1;
        self.asked.insert(pick.feature_id.clone());
        let kappa = self.kappa();
        let question = self.sensor.verbalise_question(&self.kb.features()[feature_idx], kappa);
        let pending = Pending {
            feature_idx,
            eig: pick.eig_global,
            score: pick.score,
            kappa,
            question,
            reask_count: 0,
            initial_answer: None,
        };
        let q = self.question_of(&pending);
        self.phase = Phase::Asking(pending);
        Ok(Step::Ask(q))
    }

    fn finish(&mut self, outcome: Outcome, reason: StopReason) -> Step {
        self.phase = Phase::Done(outcome.clone(), reason);
        Step::Done(outcome)
    }

    /// Converts an answer to a parse outcome without touching state.
    fn interpret(&self, feature_idx: usize, answer: &Answer) -> Result<(String, ParseOutcome), SessionError> {
        let feature = &self.kb.features()[feature_idx];
        Ok(match answer {
            Answer::Text(t) => (t.clone(), self.sensor.parse_response(t, feature)),
            Answer::Structured { value, confidence } => {
                if !value.is_unknown() {
                    evidence_likelihood(&self.kb, &feature.id, value, self.cfg.numeric_sigma)
                        .map_err(|e| SessionError::InvalidAnswer(e.to_string()))?;
                }
                (
                    format!("{value}|{}", confidence.as_str()),
                    ParseOutcome {
                        value: ParsedValue::Evidence(value.clone()),
                        confidence_label: Some(*confidence),
                        tier: Tier::Oracle,
                        note: None,
                    },
                )
            }
            Answer::Unknown => (
                String::new(),
                ParseOutcome {
                    value: ParsedValue::Evidence(EvidenceValue::Unknown),
                    confidence_label: None,
                    tier: Tier::Oracle,
                    note: None,
                },
            ),
        })
    }

    /// Takes one answer to the pending question.
    pub fn submit(&mut self, answer: Answer) -> Result<Step, SessionError> {
        let feature_idx = match &self.phase {
            Phase::Asking(p) => p.feature_idx,
            _ => {
                return Err(SessionError::WrongState {
                    state: self.state_name(),
                    action: "accept an answer",
                })
            }
        };
        let (raw, outcome) = self.interpret(feature_idx, &answer)?;
        self.handle(raw, outcome)
    }

    fn handle(&mut self, raw: String, outcome: ParseOutcome) -> Result<Step, SessionError> {
        let Phase::Asking(mut pending) = std::mem::replace(&mut self.phase, Phase::Intake) else {
            unreachable!("checked by caller");
        };
        let feature = &self.kb.features()[pending.feature_idx];
        if !outcome.is_answer() && pending.reask_count == 0 {
            pending.reask_count = 1;
            pending.initial_answer = Some(raw);
            pending.question = self.sensor.clarify_question(feature, pending.kappa);
            let q = self.question_of(&pending);
            self.phase = Phase::Asking(pending);
            return Ok(Step::Ask(q));
        }
        let triple = outcome.to_triple(&feature.id, &self.cfg.confidence_scale, self.turn);
        if let Some(t) = &triple {
            match update_belief(&self.belief, &self.kb, t, self.cfg.numeric_sigma) {
                Ok(b) => self.belief = b,
                Err(e) => {
                    self.phase = Phase::Asking(pending);
                    return Err(e.into());
                }
            }
        }
        let probs = self.belief.probs();
        self.trace.push(TurnRecord {
            turn: self.turn,
            asked_feature: feature.id.clone(),
            eig_value: pending.eig,
            score: pending.score,
            kappa: pending.kappa,
            question_text: pending.question,
            raw_answer: raw,
            parsed: ParsedAnswer {
                value: outcome.value,
                confidence_label: outcome.confidence_label,
                confidence: triple.as_ref().map(|t| t.confidence),
                tier: outcome.tier,
                note: outcome.note,
            },
            update_applied: triple.is_some(),
            posterior_top5: top5(&self.belief),
            entropy_bits: crate::util::entropy_bits(&probs),
            max_posterior: self.belief.max_prob(),
            reask_count: pending.reask_count,
            initial_answer: pending.initial_answer,
        });
        self.advance()
    }

    /// Marks the session aborted; the trace so far is kept.
    pub fn abort(&mut self, message: impl Into<String>) {
        self.error = Some(message.into());
        self.phase = Phase::Done(Outcome::Abstained, StopReason::Aborted);
    }

    pub fn result(&self) -> Option<SessionResult> {
        let Phase::Done(outcome, reason) = &self.phase else {
            return None;
        };
        Some(SessionResult {
            session_id: self.id.clone(),
            profile_id: self.profile_id.clone(),
            outcome: outcome.clone(),
            final_belief_top5: top5(&self.belief),
            final_max_posterior: self.belief.max_prob(),
            final_ranking: self.belief.ranking().into_iter().map(|(d, _)| d).collect(),
            turns_used: self.turn,
            intake_triples: self.intake.clone(),
            trace: self.trace.clone(),
            stop_reason: *reason,
            incomplete: *reason == StopReason::Aborted,
            error: self.error.clone(),
        })
    }

    pub fn header(&self) -> TraceHeader {
        TraceHeader {
            session_id: self.id.clone(),
            config: self.cfg.clone(),
            prior_strategy: self.cfg.prior_strategy.clone(),
            kb_hash: self.kb.content_hash(),
            profile_id: self.profile_id.clone(),
            intake: self.intake.clone(),
            awaiting_opening: matches!(self.phase, Phase::Intake),
            timestamp: None,
        }
    }

    /// Rebuilds a session from its trace by re-driving the state machine
    /// with the recorded parses. Fails if the policy would now ask a
    /// different question than the one recorded.
    pub fn restore(
        kb: Arc<KnowledgeBase>,
        sensor: Sensor,
        header: &TraceHeader,
        records: &[TurnRecord],
    ) -> Result<Session, SessionError> {
        if header.kb_hash != kb.content_hash() {
            return Err(SessionError::Trace("KB hash does not match the trace header".into()));
        }
        let mut s = Session::new(header.session_id.clone(), kb, sensor, header.config.clone())?;
        s.profile_id = header.profile_id.clone();
        // A session still waiting for its opening has no records and no intake.
        if header.awaiting_opening {
            return Ok(s);
        }
        s.apply_intake(header.intake.clone())?;
        for r in records {
            let Phase::Asking(p) = &s.phase else {
                return Err(SessionError::Trace(format!("turn {}: session already finished", r.turn)));
            };
            let asked = &s.kb.features()[p.feature_idx].id;
            if asked != &r.asked_feature {
                return Err(SessionError::Trace(format!(
                    "turn {}: policy asks {asked}, trace has {}",
                    r.turn, r.asked_feature
                )));
            }
            if r.reask_count > 0 {
                let unclear = ParseOutcome {
                    value: ParsedValue::Evidence(EvidenceValue::Unknown),
                    confidence_label: None,
                    tier: r.parsed.tier,
                    note: None,
                };
                s.handle(r.initial_answer.clone().unwrap_or_default(), unclear)?;
            }
            let outcome = ParseOutcome {
                value: r.parsed.value.clone(),
                confidence_label: r.parsed.confidence_label,
                tier: r.parsed.tier,
                note: r.parsed.note.clone(),
            };
            s.handle(r.raw_answer.clone(), outcome)?;
        }
        Ok(s)
    }
}

/// Runs a whole session against a responder.
pub fn run_session(
    kb: Arc<KnowledgeBase>,
    sensor: &Sensor,
    responder: &mut dyn Responder,
    cfg: &SessionConfig,
) -> Result<SessionResult, SessionError> {
    run_session_with_id(kb, sensor, responder, cfg, format!("s-{:016x}", cfg.seed), None)
}

/// [`run_session`] with an explicit session id and profile id.
pub fn run_session_with_id(
    kb: Arc<KnowledgeBase>,
    sensor: &Sensor,
    responder: &mut dyn Responder,
    cfg: &SessionConfig,
    session_id: String,
    profile_id: Option<String>,
) -> Result<SessionResult, SessionError> {
    let mut s = Session::new(session_id, kb.clone(), sensor.clone(), cfg.clone())?;
    s.profile_id = profile_id;
    let opening = responder.opening();
    let mut step = s.open(opening.as_deref())?;
    while let Step::Ask(q) = step {
        let feature = &kb.features()[kb.feature_index(&q.feature_id).expect("asked feature exists")];
        let answer = match responder.answer(feature, &q.text) {
            Ok(a) => a,
            Err(e) => {
                s.abort(e.to_string());
                break;
            }
        };
        step = s.submit(answer)?;
    }
    Ok(s.result().expect("loop ends in a terminal state"))
}
