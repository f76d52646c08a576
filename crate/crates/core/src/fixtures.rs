//! Built-in knowledge bases used by the examples, tests and benchmarks.
//!
//! Each generator is deterministic. The same KBs ship as JSON under
//! `data/kb/`; a unit test keeps the files and the generators in sync.
//! The evaluation fixtures at the end build small run sets whose metrics
//! and failure tags can be worked out by hand.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::{FailureFlag, RunRecord, RunSet};
use crate::kb::{CountTable, DemographicCell, Disease, Feature, FeatureKind, KnowledgeBase, Sex};
use crate::patient::{chief_complaint, PatientProfile};
use crate::sensor::Sensor;
use crate::session::{
    derive_session_id, run_session_with_id, Answer, OracleResponder, Outcome, RankedDisease, ScriptedResponder,
    StopReason,
};
use crate::{SessionConfig, SessionResult};

/// Directory holding the shipped data files (KBs, templates, rule tables).
pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn kb_path(name: &str) -> PathBuf {
    data_dir().join("kb").join(format!("{name}.json"))
}

fn slug(name: &str) -> String {
    name.to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn symptom(name: &str) -> Feature {
    Feature::binary(format!("f_{}", slug(name)), name, format!("Do you have {name}?"))
}

fn yes_no(yes: f64) -> BTreeMap<String, f64> {
    BTreeMap::from([("yes".to_owned(), yes), ("no".to_owned(), 100.0 - yes)])
}

/// Two diseases and one binary feature.
pub fn minimal_kb() -> KnowledgeBase {
    let mut counts = CountTable::default();
    counts.insert("d_flu", "f_fever", yes_no(80.0));
    counts.insert("d_cold", "f_fever", yes_no(20.0));
    KnowledgeBase::new(
        1,
        vec![Disease::new("d_flu", "Influenza", 1.0), Disease::new("d_cold", "Common cold", 1.0)],
        vec![symptom("fever")],
        counts,
        vec![],
    )
    .expect("minimal fixture is valid")
}

pub const SEPARABLE_SYMPTOMS: [&str; 30] = [
    "fever",
    "chills",
    "muscle aches",
    "cough",
    "chest pain",
    "shortness of breath",
    "headache",
    "blurred vision",
    "nausea",
    "vomiting",
    "diarrhea",
    "abdominal pain",
    "sneezing",
    "runny nose",
    "itchy eyes",
    "burning urination",
    "frequent urination",
    "back pain",
    "swollen ankles",
    "palpitations",
    "fatigue",
    "wheezing",
    "night sweats",
    "tight chest",
    "neck stiffness",
    "confusion",
    "sensitivity to light",
    "rash",
    "itching",
    "dry skin",
];

pub const SEPARABLE_DISEASES: [&str; 10] = [
    "Influenza",
    "Pneumonia",
    "Migraine",
    "Gastroenteritis",
    "Allergic rhinitis",
    "Urinary tract infection",
    "Heart failure",
    "Asthma",
    "Meningitis",
    "Dermatitis",
];

/// Ten diseases over thirty binary symptoms. Disease `i` owns symptoms
/// `3i..3i+3`, present with smoothed probability 0.95; every other symptom
/// is present with probability 0.05.
pub fn separable_kb() -> KnowledgeBase {
    // Smoothed P(yes) = (95.9 + 1) / 102 = 0.95 exactly.
    let features: Vec<Feature> = SEPARABLE_SYMPTOMS.iter().map(|s| symptom(s)).collect();
    let mut diseases = Vec::new();
    let mut counts = CountTable::default();
    for (i, name) in SEPARABLE_DISEASES.iter().enumerate() {
        let id = format!("d_{}", slug(name));
        for (j, f) in features.iter().enumerate() {
            let distinctive = j / 3 == i;
            counts.insert(&id, &f.id, yes_no(if distinctive { 95.9 } else { 4.1 }));
        }
        diseases.push(Disease::new(id, *name, 1.0));
    }
    KnowledgeBase::new(1, diseases, features, counts, vec![]).expect("separable fixture is valid")
}

/// Two diseases with identical conditionals over six symptoms, so no amount
/// of evidence can tell them apart.
pub fn twin_kb() -> KnowledgeBase {
    let names = ["fever", "cough", "headache", "fatigue", "rash", "nausea"];
    let features: Vec<Feature> = names.iter().map(|s| symptom(s)).collect();
    let yes = [90.0, 80.0, 20.0, 70.0, 10.0, 30.0];
    let mut counts = CountTable::default();
    for d in ["d_twin_a", "d_twin_b"] {
        for (f, y) in features.iter().zip(yes) {
            counts.insert(d, &f.id, yes_no(y));
        }
    }
    KnowledgeBase::new(
        1,
        vec![
            Disease::new("d_twin_a", "Twin fever A", 1.0),
            Disease::new("d_twin_b", "Twin fever B", 1.0),
        ],
        features,
        counts,
        vec![],
    )
    .expect("twin fixture is valid")
}

pub const AGE_BINS: [&str; 4] = ["0-17", "18-39", "40-64", "65+"];

/// Maps an age in years to one of [`AGE_BINS`].
pub fn age_bin(age: u32) -> &'static str {
    match age {
        0..=17 => AGE_BINS[0],
        18..=39 => AGE_BINS[1],
        40..=64 => AGE_BINS[2],
        _ => AGE_BINS[3],
    }
}

/// Value counts of the eight categorical features in [`ddx_shaped_kb`].
const CATEGORICAL_SIZES: [usize; 8] = [10, 8, 6, 5, 10, 4, 7, 3];

/// A synthetic KB with the dimensions of a large public benchmark: 49
/// diseases, 306 binary and 8 categorical features (up to 10 values), sparse
/// count tables, skewed prevalence and joint age/sex demographic counts.
pub fn ddx_shaped_kb() -> KnowledgeBase {
    let mut rng = ChaCha8Rng::seed_from_u64(0x00dd_c0de);
    let mut features = Vec::with_capacity(314);
    for i in 0..306 {
        let name = format!("symptom {:03}", i + 1);
        features.push(Feature::binary(
            format!("f_sym_{:03}", i + 1),
            name.clone(),
            format!("Have you noticed {name}?"),
        ));
    }
    for (i, &n) in CATEGORICAL_SIZES.iter().enumerate() {
        let name = format!("characteristic {}", i + 1);
        features.push(Feature {
            id: format!("f_char_{}", i + 1),
            name: name.clone(),
            kind: FeatureKind::Categorical,
            values: (0..n).map(|j| format!("option {}", (b'a' + j as u8) as char)).collect(),
            question_text: format!("Which best describes {name}?"),
            numeric_scale: None,
            synonyms: Vec::new(),
        });
    }

    let mut diseases = Vec::with_capacity(49);
    let mut counts = CountTable::default();
    for d in 0..49 {
        let id = format!("d_cond_{:02}", d + 1);
        let mut disease = Disease::new(id.clone(), format!("Condition {:02}", d + 1), 0.0);
        // Zipf-like prevalence with a little jitter.
        disease.prior_count = (1000.0 / (d as f64 + 1.0)).round() + rng.gen_range(0.0..5.0f64).round();
        let mut demo = BTreeMap::new();
        for bin in AGE_BINS {
            for sex in [Sex::Male, Sex::Female] {
                demo.insert(DemographicCell::new(bin, sex), rng.gen_range(0..40) as f64);
            }
        }
        disease.demographic_counts = Some(demo);

        for (fi, f) in features.iter().enumerate() {
            let present = match f.kind {
                FeatureKind::Binary => rng.gen_bool(0.18),
                _ => rng.gen_bool(0.5),
            };
            if !present {
                continue;
            }
            let table = match f.kind {
                FeatureKind::Binary => {
                    let p = if fi % 7 == d % 7 {
                        rng.gen_range(0.6..0.98)
                    } else {
                        rng.gen_range(0.02..0.4)
                    };
                    yes_no(p * 100.0)
                }
                _ => {
                    let w: Vec<f64> = f.values.iter().map(|_| rng.gen_range(0.05..1.0f64).powi(3)).collect();
                    let z: f64 = w.iter().sum();
                    f.values.iter().zip(&w).map(|(v, x)| (v.clone(), x / z * 100.0)).collect()
                }
            };
            counts.insert(&id, &f.id, table);
        }
        diseases.push(disease);
    }
    KnowledgeBase::new(1, diseases, features, counts, vec![]).expect("ddx-shaped fixture is valid")
}

/// A copy of `kb` where every other feature is renamed so it no longer
/// matches by canonical name. The result shares exactly half the features.
pub fn half_matched_kb(kb: &KnowledgeBase) -> KnowledgeBase {
    let mut file = kb.to_file_repr();
    let mut renames = BTreeMap::new();
    for (i, f) in file.features.iter_mut().enumerate() {
        if i % 2 == 1 {
            let new_id = format!("{}_alt", f.id);
            renames.insert(f.id.clone(), new_id.clone());
            f.id = new_id;
            f.name = format!("{} (variant)", f.name);
        }
    }
    for per_feature in file.counts.counts.values_mut() {
        let renamed: BTreeMap<String, BTreeMap<String, f64>> = std::mem::take(per_feature)
            .into_iter()
            .map(|(f, v)| (renames.get(&f).cloned().unwrap_or(f), v))
            .collect();
        *per_feature = renamed;
    }
    KnowledgeBase::from_file_repr(file).expect("renaming keeps the KB valid")
}

/// Six synthetic sessions over diseases `d_a..d_d`, all with truth `d_a`:
/// `(max_posterior, truth rank)` = (0.95, 1), (0.85, 1), (0.72, 2), (0.55, 1),
/// (0.40, 4), (0.20, 3). The run config has tau 0.5.
pub fn six_session_runset() -> RunSet {
    let cases = [(0.95, 1), (0.85, 1), (0.72, 2), (0.55, 1), (0.40, 4), (0.20, 3)];
    let config = SessionConfig::default();
    let results = cases
        .iter()
        .enumerate()
        .map(|(i, &(max, rank))| {
            let mut ranking: Vec<String> = ["d_b", "d_c", "d_d"].iter().map(|s| (*s).to_owned()).collect();
            ranking.insert(rank - 1, "d_a".to_owned());
            let rest = (1.0 - max) / 3.0;
            let top5 = ranking
                .iter()
                .enumerate()
                .map(|(j, d)| RankedDisease {
                    disease_id: d.clone(),
                    prob: if j == 0 { max } else { rest },
                })
                .collect();
            let outcome = if max >= config.tau {
                Outcome::Committed {
                    disease_id: ranking[0].clone(),
                }
            } else {
                Outcome::Abstained
            };
            let id = format!("p{}", i + 1);
            RunRecord {
                profile_id: id.clone(),
                disease_truth: "d_a".to_owned(),
                result: SessionResult {
                    session_id: format!("s{}", i + 1),
                    profile_id: Some(id),
                    stop_reason: if outcome.committed().is_some() {
                        StopReason::Threshold
                    } else {
                        StopReason::BudgetAbstain
                    },
                    outcome,
                    final_belief_top5: top5,
                    final_max_posterior: max,
                    final_ranking: ranking,
                    turns_used: 20,
                    intake_triples: Vec::new(),
                    trace: Vec::new(),
                    incomplete: false,
                    error: None,
                },
            }
        })
        .collect();
    RunSet {
        results,
        kb_ref: "synthetic".to_owned(),
        config_ref: Some(config),
    }
}

/// A committed misdiagnosis built to land in one failure category.
pub struct TaxonomyCase {
    pub name: &'static str,
    pub kb: Arc<KnowledgeBase>,
    pub profile: PatientProfile,
    pub runs: RunSet,
    pub expected: FailureFlag,
}

/// A profile with `yes` on the listed features, `no` on every other binary
/// feature, and no finding at all for the `missing` ones.
fn scripted_profile(kb: &KnowledgeBase, disease: &str, yes: &[&str], missing: &[&str]) -> PatientProfile {
    let findings: BTreeMap<String, String> = kb
        .features()
        .iter()
        .filter(|f| !missing.contains(&f.id.as_str()))
        .map(|f| {
            let v = if yes.contains(&f.id.as_str()) { "yes" } else { "no" };
            (f.id.clone(), v.to_owned())
        })
        .collect();
    PatientProfile {
        id: format!("{disease}-fixture"),
        disease_id: disease.to_owned(),
        age: 40,
        sex: Sex::Female,
        chief_complaint: chief_complaint(kb, &findings),
        findings,
        seed: 0,
    }
}

fn run_case(
    name: &'static str,
    kb: KnowledgeBase,
    profile: PatientProfile,
    script: &[(&str, &str)],
    expected: FailureFlag,
) -> TaxonomyCase {
    let kb = Arc::new(kb);
    let n = kb.n_features() as u32;
    let cfg = SessionConfig {
        tau: 0.5,
        t_min: n,
        t_max: n,
        ..SessionConfig::default()
    };
    let mut responder = script
        .iter()
        .fold(ScriptedResponder::new(), |r, (f, text)| r.on_feature(*f, Answer::Text((*text).to_owned())))
        .or_else(OracleResponder::new(&profile));
    let result = run_session_with_id(
        kb.clone(),
        &Sensor::airgapped(),
        &mut responder,
        &cfg,
        derive_session_id(0, &profile.id),
        Some(profile.id.clone()),
    )
    .expect("fixture session runs");
    let runs = RunSet {
        results: vec![RunRecord {
            profile_id: profile.id.clone(),
            disease_truth: profile.disease_id.clone(),
            result,
        }],
        kb_ref: kb.content_hash(),
        config_ref: Some(cfg),
    };
    TaxonomyCase {
        name,
        kb,
        profile,
        runs,
        expected,
    }
}

/// One full-length session per failure category:
///
/// * `twin`: oracle answers on [`twin_kb`]; the tie goes to the wrong twin.
/// * `false_positives`: an influenza patient says "Yes." to the three
///   pneumonia symptoms they do not have.
/// * `contradiction`: an influenza patient denies fever and chills they have.
/// * `rank_two`: an influenza patient with pneumonia-like findings and no
///   recorded fever says "No." to fever and only "I think so." to chills;
///   neither answer contradicts a recorded finding.
pub fn taxonomy_cases() -> Vec<TaxonomyCase> {
    let twin = twin_kb();
    let twin_profile = scripted_profile(&twin, "d_twin_b", &["f_fever", "f_cough"], &[]);
    let sep = separable_kb();
    vec![
        run_case("twin", twin, twin_profile, &[], FailureFlag::KbFailure),
        run_case(
            "false_positives",
            sep.clone(),
            scripted_profile(&sep, "d_influenza", &["f_fever", "f_chills"], &[]),
            &[("f_cough", "Yes."), ("f_chest_pain", "Yes."), ("f_shortness_of_breath", "Yes.")],
            FailureFlag::LlmFp,
        ),
        run_case(
            "contradiction",
            sep.clone(),
            scripted_profile(
                &sep,
                "d_influenza",
                &["f_fever", "f_chills", "f_muscle_aches", "f_cough", "f_chest_pain"],
                &[],
            ),
            &[("f_fever", "No."), ("f_chills", "No.")],
            FailureFlag::LlmWe,
        ),
        run_case(
            "rank_two",
            sep.clone(),
            scripted_profile(
                &sep,
                "d_influenza",
                &["f_chills", "f_muscle_aches", "f_cough", "f_chest_pain"],
                &["f_fever"],
            ),
            &[("f_fever", "No."), ("f_chills", "I think so.")],
            FailureFlag::InferenceClose,
        ),
    ]
}

/// All shipped KB fixtures by file stem.
pub fn shipped_kbs() -> Vec<(&'static str, KnowledgeBase)> {
    vec![
        ("minimal", minimal_kb()),
        ("separable", separable_kb()),
        ("twin", twin_kb()),
        ("ddx_shaped", ddx_shaped_kb()),
    ]
}
