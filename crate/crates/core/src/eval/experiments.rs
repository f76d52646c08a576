//! Experiment drivers: batch runs, the oracle ceiling, disease scaling,
//! cross-KB transfer and persona robustness.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{default_grid, metrics_row, sweep_threshold, top_k_accuracy, EvalError, MetricsRow, RunRecord, RunSet};
use crate::belief::EvidenceValue;
use crate::kb::{FeatureKind, FeatureMatching, KnowledgeBase};
use crate::patient::{chief_complaint, profile_seed, sample_patient, Archetype, PatientProfile, Persona};
use crate::sensor::{ParsedValue, Sensor};
use crate::session::{derive_session_id, run_session_with_id, OracleResponder, Responder, SessionConfig, SimulatedPatient};
use crate::util::stable_hash;

/// Who answers the questions in a batch run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponderKind {
    /// Ground truth at full confidence, no text.
    Oracle,
    /// Simulated patient speaking free text through the sensor.
    Patient { persona: Persona },
}

fn responder_seed(seed: u64, profile_id: &str) -> u64 {
    stable_hash(&[&seed.to_le_bytes(), profile_id.as_bytes(), b"responder"])
}

fn run_one(
    kb: &Arc<KnowledgeBase>,
    sensor: &Sensor,
    profile: &PatientProfile,
    kind: &ResponderKind,
    cfg: &SessionConfig,
) -> Result<RunRecord, EvalError> {
    let mut responder: Box<dyn Responder> = match kind {
        ResponderKind::Oracle => Box::new(OracleResponder::new(profile)),
        ResponderKind::Patient { persona } => Box::new(SimulatedPatient::new(
            profile.clone(),
            *persona,
            responder_seed(cfg.seed, &profile.id),
        )),
    };
    let result = run_session_with_id(
        kb.clone(),
        sensor,
        responder.as_mut(),
        cfg,
        derive_session_id(cfg.seed, &profile.id),
        Some(profile.id.clone()),
    )?;
    Ok(RunRecord {
        profile_id: profile.id.clone(),
        disease_truth: profile.disease_id.clone(),
        result,
    })
}

/// Runs one session per profile. Sessions are spread over threads but the
/// output keeps profile order and does not depend on scheduling.
pub fn run_cohort(
    kb: &Arc<KnowledgeBase>,
    sensor: &Sensor,
    profiles: &[PatientProfile],
    kind: &ResponderKind,
    cfg: &SessionConfig,
) -> Result<RunSet, EvalError> {
    cfg.validate()?;
    for p in profiles {
        if kb.disease_index(&p.disease_id).is_none() {
            return Err(EvalError::UnknownTruth(p.disease_id.clone()));
        }
    }
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(profiles.len().max(1));
    let chunk = profiles.len().div_ceil(threads).max(1);
    let results: Vec<Result<RunRecord, EvalError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = profiles
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|p| run_one(kb, sensor, p, kind, cfg)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("session thread panicked"))
            .collect()
    });
    Ok(RunSet {
        results: results.into_iter().collect::<Result<_, _>>()?,
        kb_ref: kb.content_hash(),
        config_ref: Some(cfg.clone()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleAccuracy {
    pub top1: f64,
    pub top3: f64,
    pub n: usize,
}

/// The KB's own ceiling: oracle answers, tau = 0, and the warm-up set to
/// the full budget so every session asks `t_max` questions before
/// committing to its argmax.
pub fn oracle_accuracy(
    kb: &Arc<KnowledgeBase>,
    profiles: &[PatientProfile],
    base: &SessionConfig,
) -> Result<(OracleAccuracy, RunSet), EvalError> {
    let cfg = SessionConfig {
        tau: 0.0,
        t_min: base.t_max,
        ..base.clone()
    };
    let rs = run_cohort(kb, &Sensor::airgapped(), profiles, &ResponderKind::Oracle, &cfg)?;
    let k3 = kb.n_diseases().min(3);
    Ok((
        OracleAccuracy {
            top1: top_k_accuracy(&rs, 1, None)?,
            top3: top_k_accuracy(&rs, k3, None)?,
            n: rs.len(),
        },
        rs,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub size: usize,
    pub seed: u64,
    pub diseases: Vec<String>,
    pub n_patients: usize,
    pub top1: f64,
}

/// For each (size, seed): a random disease subset (KB order kept, priors
/// renormalized by restriction), one patient per disease, top-1 accuracy.
pub fn scaling_experiment(
    kb: &KnowledgeBase,
    sizes: &[usize],
    seeds: &[u64],
    sensor: &Sensor,
    kind: &ResponderKind,
    cfg: &SessionConfig,
) -> Result<Vec<ScalingRow>, EvalError> {
    let k = kb.n_diseases();
    if let Some(&size) = sizes.iter().find(|&&s| s > k || s == 0) {
        return Err(EvalError::SizeTooLarge { size, k });
    }
    let mut rows = Vec::new();
    for &size in sizes {
        for &seed in seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (size as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut idx = rand::seq::index::sample(&mut rng, k, size).into_vec();
            idx.sort_unstable();
            let keep: Vec<String> = idx.iter().map(|&i| kb.diseases()[i].id.clone()).collect();
            let sub = Arc::new(kb.restrict_diseases(&keep)?);
            let profiles = keep
                .iter()
                .map(|d| {
                    let mut p = sample_patient(&sub, d, profile_seed(seed, d, 0))?;
                    p.id = format!("{d}-000");
                    Ok(p)
                })
                .collect::<Result<Vec<_>, EvalError>>()?;
            let rs = run_cohort(&sub, sensor, &profiles, kind, cfg)?;
            rows.push(ScalingRow {
                size,
                seed,
                n_patients: profiles.len(),
                top1: top_k_accuracy(&rs, 1, None)?,
                diseases: keep,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossKbReport {
    pub metrics: MetricsRow,
    /// Fraction of each patient's findings the evaluating KB can ask about.
    pub feature_coverage: BTreeMap<String, f64>,
    pub mean_feature_coverage: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub runs: RunSet,
}

/// Evaluates `native` on patients drawn from a foreign KB. `matching` must
/// be built as `match_features(foreign, native)`. Findings without a matched
/// feature are invisible to the responder.
pub fn cross_kb_eval(
    native: &Arc<KnowledgeBase>,
    patients: &[PatientProfile],
    matching: &FeatureMatching,
    sensor: &Sensor,
    kind: &ResponderKind,
    cfg: &SessionConfig,
    alpha: f64,
) -> Result<CrossKbReport, EvalError> {
    let map: BTreeMap<String, String> = matching
        .a_to_b()
        .into_iter()
        .map(|(a, b)| (a.to_owned(), b.to_owned()))
        .collect();
    let mut coverage = BTreeMap::new();
    let translated: Vec<PatientProfile> = patients
        .iter()
        .map(|p| {
            let findings: BTreeMap<String, String> = p
                .findings
                .iter()
                .filter_map(|(f, v)| map.get(f).map(|g| (g.clone(), v.clone())))
                .collect();
            let cov = if p.findings.is_empty() {
                0.0
            } else {
                findings.len() as f64 / p.findings.len() as f64
            };
            coverage.insert(p.id.clone(), cov);
            PatientProfile {
                chief_complaint: chief_complaint(native, &findings),
                findings,
                ..p.clone()
            }
        })
        .collect();
    let runs = run_cohort(native, sensor, &translated, kind, cfg)?;
    let mean = coverage.values().sum::<f64>() / coverage.len().max(1) as f64;
    Ok(CrossKbReport {
        metrics: metrics_row(&runs, None, alpha)?,
        mean_feature_coverage: mean,
        feature_coverage: coverage,
        warning: matching
            .shared
            .is_empty()
            .then(|| "feature matching is empty; every answer will be unknown".to_owned()),
        runs,
    })
}

/// Engine-free comparison: every positively answered binary feature casts
/// a vote for each disease with `P(yes|d) >= 0.5`, and the guess is the
/// disease with most votes (then higher prior, then lower id). Always
/// commits. Uses the answers recorded in each session's trace and intake.
pub fn majority_vote_baseline(rs: &RunSet, kb: &KnowledgeBase) -> Result<MetricsRow, EvalError> {
    let mut results = Vec::with_capacity(rs.len());
    for r in &rs.results {
        let mut votes = vec![0usize; kb.n_diseases()];
        let answered = r
            .result
            .trace
            .iter()
            .filter_map(|t| match &t.parsed.value {
                ParsedValue::Evidence(v) => Some((t.asked_feature.as_str(), v)),
                ParsedValue::Clarification => None,
            })
            .chain(r.result.intake_triples.iter().map(|t| (t.feature_id.as_str(), &t.value)));
        for (f, v) in answered {
            let Some(fi) = kb.feature_index(f) else { continue };
            let feature = &kb.features()[fi];
            if feature.kind != FeatureKind::Binary || *v != EvidenceValue::label("yes") {
                continue;
            }
            let yes = feature.value_index("yes").expect("binary schema");
            for (d, vote) in votes.iter_mut().enumerate() {
                if kb.conditional(d, fi)[yes] >= 0.5 {
                    *vote += 1;
                }
            }
        }
        let mut order: Vec<usize> = (0..kb.n_diseases()).collect();
        order.sort_by(|&a, &b| {
            votes[b]
                .cmp(&votes[a])
                .then(kb.diseases()[b].prior_count.total_cmp(&kb.diseases()[a].prior_count))
                .then_with(|| kb.diseases()[a].id.cmp(&kb.diseases()[b].id))
        });
        let ranking: Vec<String> = order.iter().map(|&i| kb.diseases()[i].id.clone()).collect();
        let mut result = r.result.clone();
        result.outcome = crate::session::Outcome::Committed {
            disease_id: ranking[0].clone(),
        };
        result.final_max_posterior = 1.0;
        result.final_ranking = ranking;
        results.push(RunRecord { result, ..r.clone() });
    }
    let baseline = RunSet {
        results,
        kb_ref: rs.kb_ref.clone(),
        config_ref: None,
    };
    let mut row = metrics_row(&baseline, None, 0.5)?;
    row.tau = 0.0;
    Ok(row)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaRow {
    pub persona: Archetype,
    /// The sessions' own commit decisions.
    pub engine: MetricsRow,
    /// Post-hoc sweep over the default grid at the DHS-optimal tau.
    pub engine_at_tau_star: MetricsRow,
    pub baseline: MetricsRow,
}

/// Runs the cohort once per persona with the text sensor and scores the
/// engine's decisions, the engine at its DHS-optimal tau, and the vote
/// baseline on the same dialogues.
pub fn persona_benchmark(
    kb: &Arc<KnowledgeBase>,
    sensor: &Sensor,
    profiles: &[PatientProfile],
    personas: &[Persona],
    cfg: &SessionConfig,
    alpha: f64,
) -> Result<Vec<PersonaRow>, EvalError> {
    personas
        .iter()
        .map(|persona| {
            persona.validate()?;
            let rs = run_cohort(kb, sensor, profiles, &ResponderKind::Patient { persona: *persona }, cfg)?;
            let (rows, tau_star) = sweep_threshold(&rs, &default_grid(), alpha)?;
            let best = rows.into_iter().find(|r| r.tau == tau_star).expect("tau_star comes from the grid");
            Ok(PersonaRow {
                persona: persona.archetype,
                engine: metrics_row(&rs, None, alpha)?,
                engine_at_tau_star: best,
                baseline: majority_vote_baseline(&rs, kb)?,
            })
        })
        .collect()
}
