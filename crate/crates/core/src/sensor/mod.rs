//! The language layer: utterances in, evidence triples out; features in,
//! questions out.
//!
//! Parsing runs a three-tier cascade. Tier 1 is a deterministic rule table
//! ([`patterns::PatternRules`]). If it abstains and an external completion
//! client is configured, tier 2 asks the client using the parsing template
//! and reads a `value|confidence_level` reply. Tier 3 downgrades a tier-2
//! label to `uncertain` when the utterance contains uncertainty cues. When
//! every tier abstains the outcome is `unknown|likely`.
//!
//! Nothing in this module accepts a [`crate::Belief`]: question rendering only
//! sees the coarse [`Kappa`] indicator.

pub mod external;
pub mod patterns;
pub mod templates;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::belief::{ConfidenceLabel, ConfidenceScale, EvidenceTriple, EvidenceValue, Tier};
use crate::kb::{Feature, FeatureKind, KnowledgeBase};
use crate::util::canonical_name;

pub use external::{CompletionClient, ExternalClientConfig, ExternalError, HttpCompletionClient};
pub use patterns::PatternRules;
pub use templates::TemplateSet;

use patterns::first;

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("invalid rule table: {0}")]
    Rules(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("max posterior {0} is outside [0, 1]")]
    OutOfRange(f64),
}

/// Coarse confidence indicator handed to the verbaliser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kappa {
    Low,
    Medium,
    High,
}

impl Kappa {
    pub fn as_str(self) -> &'static str {
        match self {
            Kappa::Low => "low",
            Kappa::Medium => "medium",
            Kappa::High => "high",
        }
    }
}

impl fmt::Display for Kappa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Buckets the max posterior: `< 0.33` low, `< 0.66` medium, else high.
pub fn confidence_indicator(max_posterior: f64) -> Result<Kappa, SensorError> {
    if !(0.0..=1.0).contains(&max_posterior) {
        return Err(SensorError::OutOfRange(max_posterior));
    }
    Ok(if max_posterior < 0.33 {
        Kappa::Low
    } else if max_posterior < 0.66 {
        Kappa::Medium
    } else {
        Kappa::High
    })
}

/// A parsed value, or a request for clarification.
#[derive(Debug, Clone, PartialEq)]
pub enum ParsedValue {
    Evidence(EvidenceValue),
    Clarification,
}

impl ParsedValue {
    pub fn label(s: &str) -> Self {
        ParsedValue::Evidence(EvidenceValue::label(s))
    }

    pub fn unknown() -> Self {
        ParsedValue::Evidence(EvidenceValue::Unknown)
    }
}

impl fmt::Display for ParsedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParsedValue::Evidence(v) => v.fmt(f),
            ParsedValue::Clarification => f.write_str("clarification"),
        }
    }
}

impl Serialize for ParsedValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ParsedValue::Evidence(v) => v.serialize(s),
            ParsedValue::Clarification => s.serialize_str("clarification"),
        }
    }
}

impl<'de> Deserialize<'de> for ParsedValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = EvidenceValue::deserialize(d)?;
        Ok(match v {
            EvidenceValue::Label(l) if l == "clarification" => ParsedValue::Clarification,
            other => ParsedValue::Evidence(other),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub value: ParsedValue,
    /// Present whenever the value is not a clarification request.
    pub confidence_label: Option<ConfidenceLabel>,
    pub tier: Tier,
    /// Diagnostic note, e.g. an external transport failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ParseOutcome {
    fn new(value: ParsedValue, label: ConfidenceLabel, tier: Tier) -> Self {
        ParseOutcome {
            value,
            confidence_label: Some(label),
            tier,
            note: None,
        }
    }

    fn clarification(tier: Tier) -> Self {
        ParseOutcome {
            value: ParsedValue::Clarification,
            confidence_label: None,
            tier,
            note: None,
        }
    }

    fn fallback(note: Option<String>) -> Self {
        ParseOutcome {
            note,
            ..ParseOutcome::new(ParsedValue::unknown(), ConfidenceLabel::Likely, Tier::Downgrade)
        }
    }

    /// True when the outcome carries a usable value.
    pub fn is_answer(&self) -> bool {
        matches!(&self.value, ParsedValue::Evidence(v) if !v.is_unknown())
    }

    /// The evidence triple for this outcome, if it carries a value.
    pub fn to_triple(&self, feature_id: &str, scale: &ConfidenceScale, turn: u32) -> Option<EvidenceTriple> {
        match (&self.value, self.confidence_label) {
            (ParsedValue::Evidence(v), Some(label)) if !v.is_unknown() => Some(EvidenceTriple::new(
                feature_id,
                v.clone(),
                scale.weight(label),
                self.tier,
                turn,
            )),
            _ => None,
        }
    }
}

fn normalize(text: &str) -> String {
    text.replace(['\u{2019}', '\u{2018}', '`'], "'").to_lowercase()
}

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?").expect("static regex"));
static IDENTIFIER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b[fd]_\w").expect("static regex"));

/// The sensor: rule table, templates and an optional external client.
#[derive(Clone)]
pub struct Sensor {
    rules: PatternRules,
    templates: TemplateSet,
    external: Option<Arc<dyn CompletionClient>>,
}

impl fmt::Debug for Sensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Sensor")
            .field("external", &self.external.is_some())
            .finish_non_exhaustive()
    }
}

impl Default for Sensor {
    fn default() -> Self {
        Sensor::airgapped()
    }
}

impl Sensor {
    /// Built-in rules and templates, no external client.
    pub fn airgapped() -> Sensor {
        Sensor {
            rules: PatternRules::builtin(),
            templates: TemplateSet::builtin(),
            external: None,
        }
    }

    pub fn with_rules(mut self, rules: PatternRules) -> Sensor {
        self.rules = rules;
        self
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Sensor {
        self.templates = templates;
        self
    }

    /// Attaches an external client. Ignored when the environment veto is set.
    pub fn with_external(mut self, client: Arc<dyn CompletionClient>) -> Sensor {
        if !external::disabled_by_env() {
            self.external = Some(client);
        }
        self
    }

    /// Builds a sensor from an external-client config. Inactive configs
    /// yield an airgapped sensor.
    pub fn from_config(cfg: &ExternalClientConfig) -> Result<Sensor, SensorError> {
        let mut sensor = Sensor::airgapped();
        if let Some(dir) = &cfg.template_set {
            sensor.templates = TemplateSet::load_dir(dir)?;
        }
        if let Some(client) = HttpCompletionClient::from_config(cfg) {
            sensor = sensor.with_external(Arc::new(client));
        }
        Ok(sensor)
    }

    pub fn has_external(&self) -> bool {
        self.external.is_some()
    }

    pub fn rules(&self) -> &PatternRules {
        &self.rules
    }

    /// Runs the parsing cascade for one answer.
    pub fn parse_response(&self, utterance: &str, feature: &Feature) -> ParseOutcome {
        if let Some(outcome) = self.parse_tier1(utterance, feature) {
            return outcome;
        }
        let Some(client) = &self.external else {
            return ParseOutcome::fallback(None);
        };
        let slots = BTreeMap::from([
            ("utterance".to_owned(), utterance.to_owned()),
            ("feature".to_owned(), feature.name.clone()),
            ("schema".to_owned(), feature.values.join(", ")),
        ]);
        let prompt_ok = self.templates.get("parsing").is_some();
        if !prompt_ok {
            return ParseOutcome::fallback(Some("external: parsing template missing".into()));
        }
        match client.complete("parsing", &slots) {
            Err(e) => ParseOutcome::fallback(Some(format!("external: {e}"))),
            Ok(reply) => match parse_external_reply(&reply, feature) {
                None => ParseOutcome::fallback(Some(format!("external: malformed reply {:?}", reply.trim()))),
                Some(mut outcome) => {
                    let cue = self.rules.uncertainty_cues.is_match(&normalize(utterance));
                    let confident = matches!(
                        outcome.confidence_label,
                        Some(ConfidenceLabel::VeryLikely | ConfidenceLabel::Likely)
                    );
                    if cue && confident && outcome.is_answer() {
                        outcome.confidence_label = Some(ConfidenceLabel::Uncertain);
                        outcome.tier = Tier::Downgrade;
                    }
                    outcome
                }
            },
        }
    }

    /// Tier 1 only; `None` means the rule table abstains.
    pub fn parse_tier1(&self, utterance: &str, feature: &Feature) -> Option<ParseOutcome> {
        let text = normalize(utterance);
        let r = &self.rules;
        if r.clarification.is_match(&text) {
            return Some(ParseOutcome::clarification(Tier::Pattern));
        }
        let hedged = r.uncertainty_cues.is_match(&text)
            || r.hedge_positive.is_match(&text)
            || r.hedge_negative.is_match(&text);
        let sure_label = if hedged {
            ConfidenceLabel::Uncertain
        } else {
            ConfidenceLabel::VeryLikely
        };
        match feature.kind {
            FeatureKind::Binary => {
                if r.hedge_negative.is_match(&text) {
                    return Some(ParseOutcome::new(ParsedValue::label("no"), ConfidenceLabel::Uncertain, Tier::Pattern));
                }
                if r.hedge_positive.is_match(&text) {
                    return Some(ParseOutcome::new(ParsedValue::label("yes"), ConfidenceLabel::Uncertain, Tier::Pattern));
                }
                if r.unknown.is_match(&text) {
                    return Some(ParseOutcome::new(ParsedValue::unknown(), ConfidenceLabel::Uncertain, Tier::Pattern));
                }
                let yes = first(&r.affirmative, &text);
                let no = first(&r.negative, &text);
                let value = match (yes, no) {
                    (Some(y), Some(n)) => Some(if y <= n { "yes" } else { "no" }),
                    (Some(_), None) => Some("yes"),
                    (None, Some(_)) => Some("no"),
                    (None, None) => None,
                };
                value.map(|v| ParseOutcome::new(ParsedValue::label(v), ConfidenceLabel::VeryLikely, Tier::Pattern))
            }
            FeatureKind::Numeric => {
                let scale = feature.numeric_scale?;
                let reading = NUMBER
                    .find_iter(&text)
                    .filter_map(|m| m.as_str().parse::<f64>().ok())
                    .find(|x| *x >= scale.min && *x <= scale.max);
                if let Some(x) = reading {
                    return Some(ParseOutcome::new(
                        ParsedValue::Evidence(EvidenceValue::Numeric(x)),
                        sure_label,
                        Tier::Pattern,
                    ));
                }
                r.unknown
                    .is_match(&text)
                    .then(|| ParseOutcome::new(ParsedValue::unknown(), ConfidenceLabel::Uncertain, Tier::Pattern))
            }
            FeatureKind::Categorical | FeatureKind::Ordinal => {
                if let Some(label) = match_label(&text, &feature.values) {
                    return Some(ParseOutcome::new(ParsedValue::label(&label), sure_label, Tier::Pattern));
                }
                r.unknown
                    .is_match(&text)
                    .then(|| ParseOutcome::new(ParsedValue::unknown(), ConfidenceLabel::Uncertain, Tier::Pattern))
            }
        }
    }

    /// Renders the question for a feature. Only the coarse indicator shapes
    /// the tone; no identifiers ever appear in the text.
    pub fn verbalise_question(&self, feature: &Feature, kappa: Kappa) -> String {
        if let Some(client) = &self.external {
            let slots = BTreeMap::from([
                ("feature".to_owned(), feature.name.clone()),
                ("schema".to_owned(), feature.values.join(", ")),
                ("confidence".to_owned(), kappa.as_str().to_owned()),
            ]);
            if let Ok(reply) = client.complete("verbaliser", &slots) {
                let reply = reply.trim();
                if !reply.is_empty() && !contains_identifier(reply) {
                    return reply.to_owned();
                }
            }
        }
        format!("{}{}", self.rules.tone_prefix(kappa), base_question(feature))
    }

    /// Rendering used for the single re-ask after an unclear answer.
    pub fn clarify_question(&self, feature: &Feature, kappa: Kappa) -> String {
        let options = match feature.kind {
            FeatureKind::Binary => "Please answer yes or no.".to_owned(),
            FeatureKind::Numeric => match feature.numeric_scale {
                Some(s) => format!("Please give a number from {} to {}.", fmt_num(s.min), fmt_num(s.max)),
                None => String::new(),
            },
            _ => format!("Possible answers: {}.", feature.values.join(", ")),
        };
        format!(
            "{}{}{} {}",
            self.rules.tone_prefix(kappa),
            self.rules.clarification_prefix,
            base_question(feature),
            options
        )
    }

    /// Extracts triples from an opening narrative. Extracted evidence is
    /// stamped `likely`, tier intake, turn 0.
    pub fn bulk_intake(&self, narrative: &str, kb: &KnowledgeBase, scale: &ConfidenceScale) -> Vec<EvidenceTriple> {
        if narrative.trim().is_empty() {
            return Vec::new();
        }
        if let Some(client) = &self.external {
            let features = kb
                .features()
                .iter()
                .map(|f| format!("- {}: {} (Values: {})", f.id, f.name, f.values.join(", ")))
                .collect::<Vec<_>>()
                .join("\n");
            let slots = BTreeMap::from([
                ("narrative".to_owned(), narrative.to_owned()),
                ("features".to_owned(), features),
            ]);
            if let Ok(reply) = client.complete("bulk_intake", &slots) {
                if let Some(triples) = parse_intake_json(&reply, kb, scale) {
                    return triples;
                }
            }
        }
        self.keyword_intake(narrative, kb, scale)
    }

    /// Tier-1 keyword scan used when no external client is available.
    pub fn keyword_intake(&self, narrative: &str, kb: &KnowledgeBase, scale: &ConfidenceScale) -> Vec<EvidenceTriple> {
        let tokens = tokenize(narrative);
        let c = scale.weight(ConfidenceLabel::Likely);
        let mut out = Vec::new();
        for feature in kb.features() {
            let mut phrases = vec![canonical_name(&feature.name)];
            phrases.extend(feature.synonyms.iter().map(|s| canonical_name(s)));
            let Some((start, len)) = phrases
                .iter()
                .filter_map(|p| find_phrase(&tokens, p).map(|i| (i, p.split(' ').count())))
                .min()
            else {
                continue;
            };
            let value = match feature.kind {
                FeatureKind::Binary => {
                    let lo = start.saturating_sub(3);
                    let negated = tokens[lo..start].iter().any(|t| self.rules.negation_token.is_match(t));
                    Some(EvidenceValue::label(if negated { "no" } else { "yes" }))
                }
                FeatureKind::Numeric => {
                    let window = &tokens[start + len..(start + len + 4).min(tokens.len())];
                    window
                        .iter()
                        .filter_map(|t| t.parse::<f64>().ok())
                        .find(|x| feature.numeric_scale.is_some_and(|s| *x >= s.min && *x <= s.max))
                        .map(EvidenceValue::Numeric)
                }
                FeatureKind::Categorical | FeatureKind::Ordinal => {
                    let window = tokens[start + len..(start + len + 6).min(tokens.len())].join(" ");
                    match_label(&window, &feature.values).map(EvidenceValue::Label)
                }
            };
            if let Some(v) = value {
                out.push(EvidenceTriple::new(feature.id.clone(), v, c, Tier::Intake, 0));
            }
        }
        out
    }
}

fn fmt_num(x: f64) -> String {
    EvidenceValue::Numeric(x).to_string()
}

fn base_question(feature: &Feature) -> String {
    if !feature.question_text.trim().is_empty() {
        return feature.question_text.clone();
    }
    match feature.kind {
        FeatureKind::Binary => format!("Have you noticed any {}?", feature.name),
        FeatureKind::Numeric => format!("How would you rate your {}?", feature.name),
        _ => format!("Can you describe your {}?", feature.name),
    }
}

/// Heuristic check for leaked technical identifiers such as `f_fever`.
pub fn contains_identifier(text: &str) -> bool {
    IDENTIFIER.is_match(text)
}

/// Longest schema label occurring as a whole word sequence in `text`.
fn match_label(text: &str, labels: &[String]) -> Option<String> {
    let text = normalize(text);
    let mut sorted: Vec<&String> = labels.iter().collect();
    sorted.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    sorted.into_iter().find_map(|label| {
        let needle = label.to_lowercase();
        if needle.is_empty() {
            return None;
        }
        text.match_indices(&needle)
            .any(|(i, m)| {
                let before = text[..i].chars().next_back().is_none_or(|c| !is_word(c));
                let after = text[i + m.len()..].chars().next().is_none_or(|c| !is_word(c));
                before && after
            })
            .then(|| label.clone())
    })
}

fn tokenize(text: &str) -> Vec<String> {
    normalize(text)
        .split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '.' || c == '-'))
        .map(|t| t.trim_matches(|c| c == '.' || c == '\'' || c == '-'))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

fn find_phrase(tokens: &[String], phrase: &str) -> Option<usize> {
    let words: Vec<&str> = phrase.split(' ').filter(|w| !w.is_empty()).collect();
    if words.is_empty() || words.len() > tokens.len() {
        return None;
    }
    (0..=tokens.len() - words.len()).find(|&i| words.iter().zip(&tokens[i..]).all(|(w, t)| w == t))
}

/// Parses a `value|confidence_level` reply from the external client.
pub fn parse_external_reply(reply: &str, feature: &Feature) -> Option<ParseOutcome> {
    let line = reply.trim().trim_matches('"').lines().next()?.trim();
    let (value, label) = line.split_once('|')?;
    let value = value.trim();
    let label: ConfidenceLabel = label.trim().trim_matches('"').parse().ok()?;
    let parsed = if value.eq_ignore_ascii_case("unknown") {
        ParsedValue::unknown()
    } else if value.eq_ignore_ascii_case("clarification") {
        return Some(ParseOutcome::clarification(Tier::External));
    } else if let Some(v) = feature.values.iter().find(|v| v.eq_ignore_ascii_case(value)) {
        ParsedValue::label(v)
    } else if feature.kind == FeatureKind::Numeric {
        let x: f64 = value.parse().ok()?;
        let s = feature.numeric_scale?;
        if x < s.min || x > s.max {
            return None;
        }
        ParsedValue::Evidence(EvidenceValue::Numeric(x))
    } else {
        return None;
    };
    Some(ParseOutcome::new(parsed, label, Tier::External))
}

#[derive(Deserialize)]
struct IntakeEntry {
    value: serde_json::Value,
    #[serde(default)]
    confidence: Option<String>,
}

/// Validates an external bulk-intake JSON reply against the KB schema.
/// Returns `None` when the reply is not a JSON object at all.
fn parse_intake_json(reply: &str, kb: &KnowledgeBase, scale: &ConfidenceScale) -> Option<Vec<EvidenceTriple>> {
    let trimmed = reply.trim();
    let start = trimmed.find('{')?;
    let end = trimmed.rfind('}')?;
    let map: BTreeMap<String, serde_json::Value> = serde_json::from_str(&trimmed[start..=end]).ok()?;
    let mut out = Vec::new();
    for feature in kb.features() {
        let Some(raw) = map.get(&feature.id) else { continue };
        let Ok(entry) = serde_json::from_value::<IntakeEntry>(raw.clone()) else {
            continue;
        };
        let label = entry
            .confidence
            .as_deref()
            .and_then(|c| c.parse::<ConfidenceLabel>().ok())
            .unwrap_or(ConfidenceLabel::Likely);
        let value = match &entry.value {
            serde_json::Value::String(s) => feature
                .values
                .iter()
                .find(|v| v.eq_ignore_ascii_case(s))
                .map(|v| EvidenceValue::label(v.clone())),
            serde_json::Value::Number(n) if feature.kind == FeatureKind::Numeric => n
                .as_f64()
                .filter(|x| feature.numeric_scale.is_some_and(|s| *x >= s.min && *x <= s.max))
                .map(EvidenceValue::Numeric),
            _ => None,
        };
        if let Some(v) = value {
            out.push(EvidenceTriple::new(feature.id.clone(), v, scale.weight(label), Tier::Intake, 0));
        }
    }
    Some(out)
}
