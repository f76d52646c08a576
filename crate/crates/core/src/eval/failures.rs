//! Failure taxonomy for committed misdiagnoses.
//!
//! Three independent axes: the KB cannot separate the truth even with every
//! finding supplied (`kb_failure`); the sensor produced detectable errors
//! (`llm_fp`, `llm_we`); or neither, in which case inference went wrong and
//! the truth either stayed in the final top 3 (`inference_close`) or not
//! (`inference_diverged`).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{EvalError, RunSet};
use crate::belief::{update_belief, Belief, EvidenceTriple, EvidenceValue, Tier};
use crate::kb::{Feature, FeatureKind, KnowledgeBase, PriorStrategy};
use crate::patient::PatientProfile;
use crate::sensor::ParsedValue;

/// More than this many false-positive turns flags `llm_fp`.
pub const FP_TURN_LIMIT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureFlag {
    KbFailure,
    LlmFp,
    LlmWe,
    InferenceClose,
    InferenceDiverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureTags {
    pub flags: BTreeSet<FailureFlag>,
    pub fp_count: usize,
    pub we_count: usize,
    /// Top-1 minus top-2 probability with every finding supplied at c = 1.
    pub oracle_gap: f64,
}

impl FailureTags {
    pub fn has(&self, flag: FailureFlag) -> bool {
        self.flags.contains(&flag)
    }
}

/// Posterior from the prior with every ground-truth finding at confidence 1.
pub fn oracle_posterior(kb: &KnowledgeBase, profile: &PatientProfile, prior: &PriorStrategy) -> Result<Belief, EvalError> {
    let mut b = kb.prior(prior)?;
    for feature in kb.features() {
        let Some(v) = profile.findings.get(&feature.id) else {
            continue;
        };
        let value = match feature.kind {
            FeatureKind::Numeric => v.parse::<f64>().map_or_else(|_| EvidenceValue::label(v), EvidenceValue::Numeric),
            _ => EvidenceValue::label(v),
        };
        let t = EvidenceTriple::new(feature.id.clone(), value, 1.0, Tier::Oracle, 0);
        b = update_belief(&b, kb, &t, crate::belief::DEFAULT_NUMERIC_SIGMA)?;
    }
    Ok(b)
}

fn gap(b: &Belief) -> f64 {
    let r = b.ranking();
    r[0].1 - r.get(1).map_or(0.0, |x| x.1)
}

/// Index of a value in the feature's schema; numeric readings snap to the
/// nearest grid point.
fn value_index(feature: &Feature, v: &EvidenceValue) -> Option<usize> {
    match v {
        EvidenceValue::Label(l) => feature.value_index(l),
        EvidenceValue::Numeric(x) => feature.grid().and_then(|g| {
            g.iter()
                .enumerate()
                .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
                .map(|(i, _)| i)
        }),
        EvidenceValue::Unknown => None,
    }
}

fn is_positive(feature: &Feature, idx: usize) -> bool {
    match feature.kind {
        FeatureKind::Binary => feature.values[idx] == "yes",
        FeatureKind::Ordinal | FeatureKind::Numeric => idx > 0,
        FeatureKind::Categorical => false,
    }
}

/// Classifies every committed misdiagnosis. Correct and abstained cases get
/// no entry.
pub fn classify_failures(
    rs: &RunSet,
    kb: &KnowledgeBase,
    profiles: &[PatientProfile],
    gamma: f64,
) -> Result<BTreeMap<String, FailureTags>, EvalError> {
    let by_id: BTreeMap<&str, &PatientProfile> = profiles.iter().map(|p| (p.id.as_str(), p)).collect();
    let prior = rs
        .config_ref
        .as_ref()
        .map_or(PriorStrategy::Empirical, |c| c.prior_strategy.clone());
    let mut out = BTreeMap::new();
    for r in &rs.results {
        if r.result.outcome.committed().is_none() || r.correct() {
            continue;
        }
        let profile = by_id
            .get(r.profile_id.as_str())
            .ok_or_else(|| EvalError::MissingProfile(r.profile_id.clone()))?;
        let oracle_gap = gap(&oracle_posterior(kb, profile, &prior)?);

        let mut fp_count = 0;
        let mut we_count = 0;
        for turn in &r.result.trace {
            let ParsedValue::Evidence(v) = &turn.parsed.value else {
                continue;
            };
            let Some(feature) = kb.feature(&turn.asked_feature) else {
                continue;
            };
            let Some(parsed) = value_index(feature, v) else {
                continue;
            };
            let truth = profile.findings.get(&feature.id).and_then(|t| feature.value_index(t));
            let truth_negative = truth.is_none_or(|t| !is_positive(feature, t));
            if is_positive(feature, parsed) && truth_negative {
                fp_count += 1;
            } else if truth.is_some_and(|t| t != parsed) {
                we_count += 1;
            }
        }

        let mut flags = BTreeSet::new();
        if oracle_gap < gamma {
            flags.insert(FailureFlag::KbFailure);
        }
        if fp_count > FP_TURN_LIMIT {
            flags.insert(FailureFlag::LlmFp);
        }
        if we_count > 0 {
            flags.insert(FailureFlag::LlmWe);
        }
        if flags.is_empty() {
            flags.insert(if r.truth_rank().is_some_and(|k| k <= 3) {
                FailureFlag::InferenceClose
            } else {
                FailureFlag::InferenceDiverged
            });
        }
        out.insert(
            r.profile_id.clone(),
            FailureTags {
                flags,
                fp_count,
                we_count,
                oracle_gap,
            },
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureSummary {
    pub n_failures: usize,
    pub counts: BTreeMap<FailureFlag, usize>,
}

pub fn summarize_failures(tags: &BTreeMap<String, FailureTags>) -> FailureSummary {
    let mut s = FailureSummary {
        n_failures: tags.len(),
        ..FailureSummary::default()
    };
    for t in tags.values() {
        for f in &t.flags {
            *s.counts.entry(*f).or_default() += 1;
        }
    }
    s
}
