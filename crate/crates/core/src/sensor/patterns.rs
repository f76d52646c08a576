//! Tier-1 rule table: phrase categories compiled into regexes.
//!
//! The table is a JSON data file (see `data/patterns.json`) so the phrase
//! lists can be edited without touching code. Every entry is a regex
//! fragment matched case-insensitively on word boundaries.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::Deserialize;

use super::{Kappa, SensorError};

#[derive(Debug, Clone, Deserialize)]
struct RuleFile {
    clarification: Vec<String>,
    hedge_negative: Vec<String>,
    hedge_positive: Vec<String>,
    unknown: Vec<String>,
    affirmative: Vec<String>,
    negative: Vec<String>,
    uncertainty_cues: Vec<String>,
    negation_cues: Vec<String>,
    tone_prefixes: BTreeMap<String, String>,
    clarification_prefix: String,
}

#[derive(Debug, Clone)]
pub struct PatternRules {
    pub(crate) clarification: Regex,
    pub(crate) hedge_negative: Regex,
    pub(crate) hedge_positive: Regex,
    pub(crate) unknown: Regex,
    pub(crate) affirmative: Regex,
    pub(crate) negative: Regex,
    pub(crate) uncertainty_cues: Regex,
    /// Anchored: matches a whole token.
    pub(crate) negation_token: Regex,
    tone_prefixes: BTreeMap<String, String>,
    pub(crate) clarification_prefix: String,
}

const BUILTIN: &str = include_str!("../../data/patterns.json");

static BUILTIN_RULES: LazyLock<PatternRules> =
    LazyLock::new(|| PatternRules::from_json(BUILTIN).expect("shipped rule table is valid"));

fn compile(category: &str, phrases: &[String]) -> Result<Regex, SensorError> {
    if phrases.is_empty() {
        // Never matches.
        return Ok(Regex::new(r"[^\s\S]").expect("static regex"));
    }
    // A trailing word boundary only makes sense after a word character, so
    // phrases ending in escaped punctuation (e.g. `sorry\?`) skip it.
    let alternation = phrases
        .iter()
        .map(|p| {
            if p.ends_with("\\?") || p.ends_with("\\.") || p.ends_with('!') {
                format!(r"\b(?:{p})")
            } else {
                format!(r"\b(?:{p})\b")
            }
        })
        .collect::<Vec<_>>()
        .join("|");
    Regex::new(&format!("(?i){alternation}")).map_err(|e| SensorError::Rules(format!("{category}: {e}")))
}

impl PatternRules {
    /// The shipped table, compiled once per process.
    pub fn builtin() -> PatternRules {
        BUILTIN_RULES.clone()
    }

    pub fn from_json(text: &str) -> Result<PatternRules, SensorError> {
        let file: RuleFile = serde_json::from_str(text).map_err(|e| SensorError::Rules(e.to_string()))?;
        let negation = file.negation_cues.iter().map(|p| format!("(?:{p})")).collect::<Vec<_>>().join("|");
        Ok(PatternRules {
            clarification: compile("clarification", &file.clarification)?,
            hedge_negative: compile("hedge_negative", &file.hedge_negative)?,
            hedge_positive: compile("hedge_positive", &file.hedge_positive)?,
            unknown: compile("unknown", &file.unknown)?,
            affirmative: compile("affirmative", &file.affirmative)?,
            negative: compile("negative", &file.negative)?,
            uncertainty_cues: compile("uncertainty_cues", &file.uncertainty_cues)?,
            negation_token: Regex::new(&format!("(?i)^(?:{negation})$"))
                .map_err(|e| SensorError::Rules(format!("negation_cues: {e}")))?,
            tone_prefixes: file.tone_prefixes,
            clarification_prefix: file.clarification_prefix,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PatternRules, SensorError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SensorError::Rules(format!("{}: {e}", path.display())))?;
        PatternRules::from_json(&text)
    }

    pub fn tone_prefix(&self, kappa: Kappa) -> &str {
        self.tone_prefixes.get(kappa.as_str()).map(String::as_str).unwrap_or("")
    }
}

/// Byte offset of the first match, if any.
pub(crate) fn first(re: &Regex, text: &str) -> Option<usize> {
    re.find(text).map(|m| m.start())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_rules_compile_and_respect_word_boundaries() {
        let r = PatternRules::builtin();
        assert!(r.negative.is_match("no"));
        assert!(!r.negative.is_match("nothing to report"));
        assert!(!r.negative.is_match("not"));
        assert!(r.clarification.is_match("sorry?"));
        assert!(r.unknown.is_match("i'm not sure"));
        assert!(r.negation_token.is_match("don't"));
        assert!(!r.negation_token.is_match("nose"));
    }

    #[test]
    fn bad_regex_is_reported_with_category() {
        let text = BUILTIN.replace("\"yes\",", "\"(yes\",");
        let err = PatternRules::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("affirmative"));
    }
}
