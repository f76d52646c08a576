//! Drives one human-patient session through the HTTP router in process,
//! answering from a sampled profile, then prints the patient-facing trace.
//!
//! ```bash
//! cargo run -p bmbe-service --example http_session
//! ```

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use bmbe::fixtures::separable_kb;
use bmbe::patient::sample_patient;
use bmbe_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let state = AppState::new(ServiceConfig::default())?;
    let app = router(state);
    let profile = sample_patient(&separable_kb(), "d_pneumonia", 7)?;

    let (status, mut handle) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({ "kb_id": "separable", "config": { "tau": 0.9, "t_min": 3 } })),
    )
    .await;
    let id = handle["session_id"].as_str().unwrap_or_default().to_owned();
    println!("{status} {id}: {}", handle["current_question"]["text"]);

    let uri = format!("/sessions/{id}/answer");
    handle = call(&app, "POST", &uri, Some(json!({ "text": "I've had a cough for a few days." }))).await.1;
    let mut nonce = 0;
    while handle["state"] == "awaiting_answer" {
        let q = &handle["current_question"];
        let feature = q["feature_id"].as_str().unwrap_or_default();
        let reply = match profile.findings.get(feature).map(String::as_str) {
            Some("yes") => "Yes, I have.".to_owned(),
            Some("no") => "No.".to_owned(),
            Some(other) => other.to_owned(),
            None => "I'm not sure.".to_owned(),
        };
        println!("  Q{}: {}\n      {reply}", handle["turn"], q["text"].as_str().unwrap_or_default());
        nonce += 1;
        handle = call(&app, "POST", &uri, Some(json!({ "text": reply, "turn_nonce": format!("t{nonce}") }))).await.1;
    }
    println!("outcome: {}", serde_json::to_string_pretty(&handle["outcome"])?);

    let (_, trace) = call(&app, "GET", &format!("/sessions/{id}/trace"), None).await;
    println!("patient trace has {} turns", trace["turns"].as_array().map_or(0, Vec::len));
    Ok(())
}
