//! Selective-diagnosis metrics over batches of sessions.
//!
//! A [`RunSet`] pairs each session result with the patient's true disease.
//! The selection function is either the session's own commit decision or,
//! for post-hoc sweeps, `max_posterior >= tau` on the final belief.

mod experiments;
mod failures;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::BeliefError;
use crate::kb::{KbError, KnowledgeBase};
use crate::patient::PatientError;
use crate::session::{SessionConfig, SessionError, SessionResult};

pub use experiments::{
    cross_kb_eval, majority_vote_baseline, oracle_accuracy, persona_benchmark, run_cohort, scaling_experiment,
    CrossKbReport, OracleAccuracy, PersonaRow, ResponderKind, ScalingRow,
};
pub use failures::{classify_failures, oracle_posterior, summarize_failures, FailureFlag, FailureSummary, FailureTags};

pub const METRICS_CSV_HEADER: &str = "tau,sel_acc,coverage,dhs,top1,top3,n_committed";

/// Gap threshold below which a misdiagnosis is blamed on the KB.
pub const DEFAULT_GAMMA: f64 = 0.80;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("run set is empty")]
    EmptyRunSet,
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("k = {k} outside [1, {n}]")]
    BadK { k: usize, n: usize },
    #[error("prevalence strata need at least 3 diseases, KB has {0}")]
    TooFewDiseases(usize),
    #[error("no profile for result `{0}`")]
    MissingProfile(String),
    #[error("truth `{0}` is not a disease of the evaluating KB")]
    UnknownTruth(String),
    #[error("size {size} exceeds K = {k}")]
    SizeTooLarge { size: usize, k: usize },
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Patient(#[from] PatientError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error("alpha {0} outside [0, 1]")]
    BadAlpha(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub profile_id: String,
    pub disease_truth: String,
    pub result: SessionResult,
}

impl RunRecord {
    /// Whether the selection function accepts this case.
    pub fn selected(&self, tau: Option<f64>) -> bool {
        match tau {
            Some(t) => self.result.final_max_posterior >= t,
            None => self.result.outcome.committed().is_some(),
        }
    }

    pub fn truth_rank(&self) -> Option<usize> {
        self.result.rank_of(&self.disease_truth)
    }

    pub fn correct(&self) -> bool {
        self.truth_rank() == Some(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSet {
    pub results: Vec<RunRecord>,
    pub kb_ref: String,
    #[serde(default)]
    pub config_ref: Option<SessionConfig>,
}

impl RunSet {
    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    fn check(&self) -> Result<(), EvalError> {
        if self.results.is_empty() {
            Err(EvalError::EmptyRunSet)
        } else {
            Ok(())
        }
    }

    /// A run set over a subset of the records.
    pub fn filter(&self, keep: impl Fn(&RunRecord) -> bool) -> RunSet {
        RunSet {
            results: self.results.iter().filter(|r| keep(r)).cloned().collect(),
            kb_ref: self.kb_ref.clone(),
            config_ref: self.config_ref.clone(),
        }
    }
}

/// Fraction of all patients whose truth is within the committed top-k;
/// abstentions count as misses.
pub fn top_k_accuracy(rs: &RunSet, k: usize, tau_override: Option<f64>) -> Result<f64, EvalError> {
    rs.check()?;
    let n_diseases = rs.results[0].result.final_ranking.len();
    if k == 0 || k > n_diseases {
        return Err(EvalError::BadK { k, n: n_diseases });
    }
    let hits = rs
        .results
        .iter()
        .filter(|r| r.selected(tau_override) && r.truth_rank().is_some_and(|rank| rank <= k))
        .count();
    Ok(hits as f64 / rs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectiveMetrics {
    /// 1.0 when nothing was committed; check `n_committed`.
    pub selective_accuracy: f64,
    pub coverage: f64,
    pub n_committed: usize,
}

pub fn selective_metrics(rs: &RunSet, tau_override: Option<f64>) -> Result<SelectiveMetrics, EvalError> {
    rs.check()?;
    let committed: Vec<&RunRecord> = rs.results.iter().filter(|r| r.selected(tau_override)).collect();
    let correct = committed.iter().filter(|r| r.correct()).count();
    Ok(SelectiveMetrics {
        selective_accuracy: if committed.is_empty() {
            1.0
        } else {
            correct as f64 / committed.len() as f64
        },
        coverage: committed.len() as f64 / rs.len() as f64,
        n_committed: committed.len(),
    })
}

/// Weighted harmonic mean of selective accuracy and coverage. Zero inputs
/// give zero.
pub fn dhs(selective_accuracy: f64, coverage: f64, alpha: f64) -> f64 {
    if selective_accuracy <= 0.0 || coverage <= 0.0 {
        return 0.0;
    }
    1.0 / (alpha / selective_accuracy + (1.0 - alpha) / coverage)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub tau: f64,
    pub selective_accuracy: f64,
    pub coverage: f64,
    pub dhs: f64,
    pub top1: f64,
    pub top3: f64,
    pub n_committed: usize,
}

/// All metrics at one operating point. With no override the sessions' own
/// decisions are scored and `tau` is taken from the run config.
pub fn metrics_row(rs: &RunSet, tau_override: Option<f64>, alpha: f64) -> Result<MetricsRow, EvalError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(EvalError::BadAlpha(alpha));
    }
    let sel = selective_metrics(rs, tau_override)?;
    let k3 = rs.results[0].result.final_ranking.len().min(3);
    Ok(MetricsRow {
        tau: tau_override.unwrap_or_else(|| rs.config_ref.as_ref().map_or(f64::NAN, |c| c.tau)),
        selective_accuracy: sel.selective_accuracy,
        coverage: sel.coverage,
        dhs: dhs(sel.selective_accuracy, sel.coverage, alpha),
        top1: top_k_accuracy(rs, 1, tau_override)?,
        top3: top_k_accuracy(rs, k3, tau_override)?,
        n_committed: sel.n_committed,
    })
}

/// `{0.00, 0.05, ..., 0.95}`.
pub fn default_grid() -> Vec<f64> {
    (0..20).map(|i| f64::from(i * 5) / 100.0).collect()
}

/// One row per grid point and the DHS-maximizing tau (ties to the lowest tau).
pub fn sweep_threshold(rs: &RunSet, grid: &[f64], alpha: f64) -> Result<(Vec<MetricsRow>, f64), EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let rows = grid
        .iter()
        .map(|&t| metrics_row(rs, Some(t), alpha))
        .collect::<Result<Vec<_>, _>>()?;
    let mut best = &rows[0];
    for r in &rows[1..] {
        if r.dhs > best.dhs || (r.dhs == best.dhs && r.tau < best.tau) {
            best = r;
        }
    }
    let tau_star = best.tau;
    Ok((rows, tau_star))
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.tau, r.selective_accuracy, r.coverage, r.dhs, r.top1, r.top3, r.n_committed
        )
        .expect("writing to a String");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Common,
    Medium,
    Rare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumMetrics {
    pub stratum: Stratum,
    pub diseases: Vec<String>,
    pub n_patients: usize,
    /// Absent when no patient's truth falls in the stratum.
    pub metrics: Option<MetricsRow>,
}

/// Splits diseases into prevalence terciles by `prior_count` (ties by id).
/// The middle group absorbs a single leftover disease, the outer groups
/// take one each when two are left over.
pub fn prevalence_terciles(kb: &KnowledgeBase) -> Result<[(Stratum, Vec<String>); 3], EvalError> {
    let k = kb.n_diseases();
    if k < 3 {
        return Err(EvalError::TooFewDiseases(k));
    }
    let mut order: Vec<&crate::kb::Disease> = kb.diseases().iter().collect();
    order.sort_by(|a, b| b.prior_count.total_cmp(&a.prior_count).then_with(|| a.id.cmp(&b.id)));
    let outer = k / 3 + usize::from(k % 3 == 2);
    let ids: Vec<String> = order.into_iter().map(|d| d.id.clone()).collect();
    Ok([
        (Stratum::Common, ids[..outer].to_vec()),
        (Stratum::Medium, ids[outer..k - outer].to_vec()),
        (Stratum::Rare, ids[k - outer..].to_vec()),
    ])
}

pub fn stratify_prevalence(
    rs: &RunSet,
    kb: &KnowledgeBase,
    tau_override: Option<f64>,
    alpha: f64,
) -> Result<Vec<StratumMetrics>, EvalError> {
    rs.check()?;
    prevalence_terciles(kb)?
        .into_iter()
        .map(|(stratum, diseases)| {
            let sub = rs.filter(|r| diseases.contains(&r.disease_truth));
            let metrics = if sub.is_empty() {
                None
            } else {
                Some(metrics_row(&sub, tau_override, alpha)?)
            };
            Ok(StratumMetrics {
                stratum,
                n_patients: sub.len(),
                diseases,
                metrics,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{Outcome, StopReason};

    /// A record whose final ranking puts the truth at `rank` (0 = absent
    /// from the committed set is not possible; every ranking is complete).
    pub(crate) fn record(id: &str, rank: usize, max: f64, committed: bool) -> RunRecord {
        let mut ranking: Vec<String> = (0..5).map(|i| format!("d{i}")).collect();
        ranking.swap(0, rank - 1);
        let truth = "d0".to_owned();
        RunRecord {
            profile_id: id.into(),
            disease_truth: truth,
            result: SessionResult {
                session_id: id.into(),
                profile_id: Some(id.into()),
                outcome: if committed {
                    Outcome::Committed {
                        disease_id: ranking[0].clone(),
                    }
                } else {
                    Outcome::Abstained
                },
                final_belief_top5: vec![],
                final_max_posterior: max,
                final_ranking: ranking,
                turns_used: 20,
                intake_triples: vec![],
                trace: vec![],
                stop_reason: if committed {
                    StopReason::Threshold
                } else {
                    StopReason::BudgetAbstain
                },
                incomplete: false,
                error: None,
            },
        }
    }

    fn rs(records: Vec<RunRecord>) -> RunSet {
        RunSet {
            results: records,
            kb_ref: "test".into(),
            config_ref: None,
        }
    }

    #[test]
    fn top_k_hand_count() {
        let set = rs(vec![
            record("a", 1, 0.9, true),
            record("b", 1, 0.9, true),
            record("c", 1, 0.9, true),
            record("d", 3, 0.9, true),
            record("e", 1, 0.2, false),
        ]);
        assert!((top_k_accuracy(&set, 1, None).unwrap() - 0.6).abs() < 1e-12);
        assert!((top_k_accuracy(&set, 3, None).unwrap() - 0.8).abs() < 1e-12);
        assert!(top_k_accuracy(&set, 0, None).is_err());
        let none = rs(vec![record("a", 1, 0.2, false), record("b", 1, 0.2, false)]);
        assert_eq!(top_k_accuracy(&none, 1, None).unwrap(), 0.0);
    }

    #[test]
    fn selective_hand_count() {
        let set = rs(vec![
            record("a", 1, 0.9, true),
            record("b", 1, 0.9, true),
            record("c", 2, 0.9, true),
            record("d", 1, 0.2, false),
        ]);
        let m = selective_metrics(&set, None).unwrap();
        assert!((m.selective_accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.coverage - 0.75).abs() < 1e-12);
        assert_eq!(selective_metrics(&set, Some(0.0)).unwrap().coverage, 1.0);
        let empty = rs(vec![]);
        assert!(matches!(selective_metrics(&empty, None), Err(EvalError::EmptyRunSet)));
        let abstain = rs(vec![record("a", 1, 0.2, false)]);
        let m = selective_metrics(&abstain, None).unwrap();
        assert_eq!((m.selective_accuracy, m.coverage, m.n_committed), (1.0, 0.0, 0));
    }

    #[test]
    fn dhs_examples() {
        assert_eq!((dhs(0.81, 0.96, 0.5) * 100.0).round(), 88.0);
        assert!((dhs(0.88, 0.64, 0.5) - 0.741_052_631_578_947_4).abs() < 1e-12);
        assert!((dhs(0.3, 0.3, 0.9) - 0.3).abs() < 1e-15);
        assert_eq!(dhs(0.0, 0.5, 0.5), 0.0);
        assert_eq!(dhs(0.7, 0.4, 1.0), 0.7);
        assert_eq!(dhs(0.7, 0.4, 0.0), 0.4);
    }

    #[test]
    fn terciles_follow_prevalence_and_ids() {
        let kb = crate::fixtures::ddx_shaped_kb();
        let t = prevalence_terciles(&kb).unwrap();
        assert_eq!([t[0].1.len(), t[1].1.len(), t[2].1.len()], [16, 17, 16]);
        let sep = crate::fixtures::separable_kb();
        let t = prevalence_terciles(&sep).unwrap();
        assert_eq!([t[0].1.len(), t[1].1.len(), t[2].1.len()], [3, 4, 3]);
        // Equal priors: alphabetical order.
        let mut ids: Vec<String> = sep.diseases().iter().map(|d| d.id.clone()).collect();
        ids.sort();
        assert_eq!(t[0].1, ids[..3].to_vec());
        assert!(prevalence_terciles(&crate::fixtures::minimal_kb()).is_err());
    }

    #[test]
    fn csv_header_is_exact() {
        let csv = metrics_csv(&[]);
        assert_eq!(csv, "tau,sel_acc,coverage,dhs,top1,top3,n_committed\n");
    }
}
