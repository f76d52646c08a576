//! The HTTP contract the console and scripts rely on.

mod common;

use axum::http::{Method, StatusCode};
use bmbe::belief::{update_belief, DEFAULT_NUMERIC_SIGMA};
use bmbe::fixtures::separable_kb;
use bmbe::patient::sample_patient;
use bmbe::session::{read_trace_jsonl, TurnRecord};
use bmbe::{EvidenceTriple, EvidenceValue, PriorStrategy, Tier};
use bmbe_service::cli::run_from;
use bmbe_service::ServiceConfig;
use common::{app, call, firewall_clean, get, post, raw};
use serde_json::{json, Value};

fn human(kb: &str, config: Value) -> Value {
    json!({ "kb_id": kb, "config": config, "mode": { "kind": "human_patient" } })
}

fn answer_uri(id: &str) -> String {
    format!("/sessions/{id}/answer")
}

#[tokio::test]
async fn human_session_starts_with_the_opening_prompt() {
    let (_, app) = app(ServiceConfig::default());
    let (status, h) = post(&app, "/sessions", human("separable", json!({}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(h["state"], "awaiting_answer");
    assert_eq!(h["turn"], 0);
    assert_eq!(h["current_question"]["kind"], "narrative");
    assert!(h.get("outcome").is_none());

    let id = h["session_id"].as_str().unwrap();
    let (status, h) = post(&app, &answer_uri(id), json!({ "text": "I have had a fever and chills." })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(h["turn"], 1);
    let q = &h["current_question"];
    assert_eq!(q["kind"], "binary");
    assert_eq!(q["values"], json!(["yes", "no"]));
    assert_ne!(q["feature_id"], "f_fever");

    let (_, h2) = post(&app, &answer_uri(id), json!({ "text": "yes" })).await;
    assert_eq!(h2["turn"], 2);
    let (status, fetched) = get(&app, &format!("/sessions/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fetched, h2);
}

#[tokio::test]
async fn structured_answers_drive_a_session_to_a_named_diagnosis() {
    let (_, app) = app(ServiceConfig::default());
    let kb = separable_kb();
    let profile = sample_patient(&kb, "d_migraine", 4).unwrap();
    let (_, h) = post(&app, "/sessions", human("separable", json!({ "tau": 0.9, "t_min": 3 }))).await;
    let id = h["session_id"].as_str().unwrap().to_owned();
    let mut h = post(&app, &answer_uri(&id), json!({ "text": "" })).await.1;
    let mut steps = 0;
    while h["state"] == "awaiting_answer" {
        let f = h["current_question"]["feature_id"].as_str().unwrap();
        let v = profile.findings.get(f).cloned().unwrap_or_else(|| "unknown".into());
        let (status, next) = post(&app, &answer_uri(&id), json!({ "structured": { "value": v } })).await;
        assert_eq!(status, StatusCode::OK, "{next}");
        h = next;
        steps += 1;
        assert!(steps <= 40);
    }
    assert_eq!(h["state"], "committed");
    assert!(h.get("current_question").is_none());
    let outcome = &h["outcome"];
    assert_eq!(outcome["status"], "committed");
    assert_eq!(outcome["disease_id"], "d_migraine");
    assert_eq!(outcome["display_name"], kb.disease("d_migraine").unwrap().name.as_str());
    assert_ne!(outcome["display_name"], outcome["disease_id"]);
    assert_eq!(outcome["confidence_band"], "high");
    assert_eq!(h["stop_reason"], "threshold");

    let (status, err) = post(&app, &answer_uri(&id), json!({ "text": "yes" })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "conflict");
}

#[tokio::test]
async fn structured_very_likely_matches_a_full_confidence_update() {
    let (_, app) = app(ServiceConfig::default());
    let (_, h) = post(&app, "/sessions", human("separable", json!({}))).await;
    let id = h["session_id"].as_str().unwrap().to_owned();
    let h = post(&app, &answer_uri(&id), json!({ "text": "" })).await.1;
    let feature = h["current_question"]["feature_id"].as_str().unwrap().to_owned();
    post(
        &app,
        &answer_uri(&id),
        json!({ "structured": { "value": "yes", "confidence_label": "very_likely" } }),
    )
    .await;

    let (_, trace) = get(&app, &format!("/sessions/{id}/trace?audience=clinician")).await;
    let rec: TurnRecord = serde_json::from_value(trace["records"][0].clone()).unwrap();
    assert_eq!(rec.parsed.tier, Tier::Oracle);
    assert_eq!(rec.parsed.confidence, Some(1.0));

    let kb = separable_kb();
    let prior = kb.prior(&PriorStrategy::Empirical).unwrap();
    let t = EvidenceTriple::new(feature, EvidenceValue::label("yes"), 1.0, Tier::Oracle, 1);
    let expected = update_belief(&prior, &kb, &t, DEFAULT_NUMERIC_SIGMA).unwrap();
    for entry in &rec.posterior_top5 {
        assert!((expected.prob_of(&entry.disease_id).unwrap() - entry.prob).abs() < 1e-12);
    }
}

#[tokio::test]
async fn invalid_requests_are_rejected() {
    let (_, app) = app(ServiceConfig::default());
    let (status, err) = post(&app, "/sessions", human("separable", json!({ "tau": 1.5 }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(err["message"].as_str().unwrap().contains("tau"));

    let (status, _) = post(&app, "/sessions", human("nope", json!({}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = get(&app, "/sessions/s-missing").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = post(&app, "/sessions/s-missing/answer", json!({ "text": "yes" })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, h) = post(&app, "/sessions", human("separable", json!({}))).await;
    let id = h["session_id"].as_str().unwrap().to_owned();
    let (status, _) = post(&app, &answer_uri(&id), json!({ "structured": { "value": "yes" } })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "intake needs free text");
    post(&app, &answer_uri(&id), json!({ "text": "" })).await;
    let (status, _) = post(&app, &answer_uri(&id), json!({ "text": "yes", "structured": { "value": "yes" } })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = post(&app, &answer_uri(&id), json!({})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = post(&app, &answer_uri(&id), json!({ "structured": { "value": "purple" } })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = get(&app, &format!("/sessions/{id}/trace?audience=everyone")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn turn_nonce_makes_retries_idempotent() {
    let (_, app) = app(ServiceConfig::default());
    let (_, h) = post(&app, "/sessions", human("separable", json!({}))).await;
    let id = h["session_id"].as_str().unwrap().to_owned();
    post(&app, &answer_uri(&id), json!({ "text": "", "turn_nonce": "n0" })).await;

    let body = json!({ "structured": { "value": "no" }, "turn_nonce": "n1" });
    let (_, first) = post(&app, &answer_uri(&id), body.clone()).await;
    let (status, retry) = post(&app, &answer_uri(&id), body).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first, retry);
    assert_eq!(first["turn"], 2);
    let (_, trace) = get(&app, &format!("/sessions/{id}/trace?audience=clinician")).await;
    assert_eq!(trace["records"].as_array().unwrap().len(), 1);

    let (status, err) = post(&app, &answer_uri(&id), json!({ "structured": { "value": "yes" }, "turn_nonce": "n1" })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(err["message"].as_str().unwrap().contains("n1"));

    let (_, next) = post(&app, &answer_uri(&id), json!({ "text": "yes", "turn_nonce": "n2" })).await;
    assert_eq!(next["turn"], 3);
}

#[tokio::test]
async fn patient_views_carry_no_belief_fields() {
    let (_, app) = app(ServiceConfig::default());
    let profile = sample_patient(&separable_kb(), "d_asthma", 2).unwrap();
    let (status, h) = post(
        &app,
        "/sessions",
        json!({ "kb_id": "separable", "mode": { "kind": "simulated", "profile": profile, "persona": "dazed", "seed": 5 } }),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_ne!(h["state"], "awaiting_answer");
    assert!(h["stop_reason"].is_string());
    assert!(firewall_clean(&h), "{h}");
    let id = h["session_id"].as_str().unwrap();

    let (_, patient) = get(&app, &format!("/sessions/{id}/trace?audience=patient")).await;
    assert!(firewall_clean(&patient), "{patient}");
    assert!(!patient["turns"].as_array().unwrap().is_empty());
    let (_, default_view) = get(&app, &format!("/sessions/{id}/trace")).await;
    assert_eq!(default_view, patient);

    let (_, clinician) = get(&app, &format!("/sessions/{id}/trace?audience=clinician")).await;
    assert!(!firewall_clean(&clinician));
    assert!(clinician["records"][0]["posterior_top5"].is_array());
    assert!(clinician["final_belief"]["max_posterior"].is_number());
}

#[tokio::test]
async fn clinician_trace_matches_the_persisted_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let (state, app) = app(ServiceConfig {
        data_dir: Some(dir.path().to_path_buf()),
        profiles: bmbe::patient::generate_cohort(&separable_kb(), 1, 3).unwrap(),
        ..ServiceConfig::default()
    });
    let (status, h) = post(
        &app,
        "/sessions",
        json!({ "kb_id": "separable", "mode": { "kind": "simulated", "profile_id": "d_influenza-000" } }),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{h}");
    let id = h["session_id"].as_str().unwrap();
    let (_, clinician) = get(&app, &format!("/sessions/{id}/trace?audience=clinician")).await;

    let text = std::fs::read_to_string(state.session_path(id).unwrap()).unwrap();
    let (header, records) = read_trace_jsonl(&text).unwrap();
    assert_eq!(clinician["header"], serde_json::to_value(&header).unwrap());
    assert_eq!(clinician["records"], serde_json::to_value(&records).unwrap());
    let from_file: Vec<Value> = text.lines().skip(1).map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(clinician["records"], Value::Array(from_file));

    let (status, _) = post(
        &app,
        "/sessions",
        json!({ "kb_id": "separable", "mode": { "kind": "simulated", "profile_id": "nobody" } }),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        data_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    };
    let (_, app1) = app(cfg.clone());
    let (_, h) = post(&app1, "/sessions", human("separable", json!({ "tau": 0.95 }))).await;
    let waiting = h["session_id"].as_str().unwrap().to_owned();
    let (_, h) = post(&app1, "/sessions", human("separable", json!({ "tau": 0.95 }))).await;
    let id = h["session_id"].as_str().unwrap().to_owned();
    post(&app1, &answer_uri(&id), json!({ "text": "I have a cough and chest pain." })).await;
    for text in ["yes", "no", "I think so", "not really"] {
        post(&app1, &answer_uri(&id), json!({ "text": text })).await;
    }
    let (_, before) = get(&app1, &format!("/sessions/{id}")).await;
    let (_, trace_before) = get(&app1, &format!("/sessions/{id}/trace?audience=clinician")).await;
    let (_, waiting_before) = get(&app1, &format!("/sessions/{waiting}")).await;

    let (state2, app2) = app(cfg);
    assert!(state2.restore_warnings().is_empty(), "{:?}", state2.restore_warnings());
    let (_, after) = get(&app2, &format!("/sessions/{id}")).await;
    let (_, trace_after) = get(&app2, &format!("/sessions/{id}/trace?audience=clinician")).await;
    assert_eq!(before, after);
    assert_eq!(trace_before, trace_after);
    assert_eq!(get(&app2, &format!("/sessions/{waiting}")).await.1, waiting_before);

    let (a1, a2) = (
        post(&app1, &answer_uri(&id), json!({ "text": "yes" })).await.1,
        post(&app2, &answer_uri(&id), json!({ "text": "yes" })).await.1,
    );
    assert_eq!(a1, a2);
}

#[tokio::test]
async fn bearer_token_guards_every_route() {
    let (_, app) = app(ServiceConfig {
        token: Some("s3cret".into()),
        ..ServiceConfig::default()
    });
    let (status, _) = raw(&app, Method::GET, "/kbs", None, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = raw(&app, Method::GET, "/kbs", None, Some("wrong")).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, body) = raw(&app, Method::GET, "/kbs", None, Some("s3cret")).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.contains("separable"));
}

#[tokio::test]
async fn kbs_register_and_report_stats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        data_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    };
    let (_, app1) = app(cfg.clone());
    let file: Value = serde_json::from_str(&bmbe::fixtures::twin_kb().to_json_pretty()).unwrap();
    let (status, created) = post(&app1, "/kbs", json!({ "id": "twins", "kb": file })).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created["n_diseases"], 2);
    let (status, _) = post(&app1, "/kbs", json!({ "id": "twins", "kb": file })).await;
    assert_eq!(status, StatusCode::OK);
    let other: Value = serde_json::from_str(&bmbe::fixtures::minimal_kb().to_json_pretty()).unwrap();
    let (status, _) = post(&app1, "/kbs", json!({ "id": "twins", "kb": other })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = post(&app1, "/kbs", json!({ "id": "../evil", "kb": other })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let mut broken = other.clone();
    broken["counts"] = json!({ "d_unknown": {} });
    let (status, _) = post(&app1, "/kbs", json!({ "kb": broken })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, anon) = post(&app1, "/kbs", json!({ "kb": other })).await;
    assert_eq!(status, StatusCode::CREATED);
    assert!(anon["kb_id"].as_str().unwrap().starts_with("kb-"));

    let (_, app2) = app(cfg);
    let (status, stats) = get(&app2, "/kbs/twins/stats").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(stats["kb_hash"], created["kb_hash"]);
    assert!(stats["stats"]["mean_pair_kl"].is_number());
    assert_eq!(get(&app2, "/kbs/none/stats").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn run_metrics_are_served_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs").join("r1");
    let mut sink = Vec::new();
    run_from(
        ["bmbe", "run", "--kb", "separable", "--per-disease", "2", "--canonical", "--out", out.to_str().unwrap()],
        &mut sink,
    )
    .unwrap();
    let (_, app) = app(ServiceConfig {
        data_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    });
    let (status, body) = raw(&app, Method::GET, "/runs/r1/metrics.csv", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, std::fs::read_to_string(out.join("metrics.csv")).unwrap());
    assert!(body.starts_with("tau,sel_acc,coverage,dhs,top1,top3,n_committed\n"));
    assert_eq!(call(&app, Method::GET, "/runs/r2/metrics.csv", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, Method::GET, "/runs/..%2Fsessions/metrics.csv", None).await.0, StatusCode::NOT_FOUND);
}
