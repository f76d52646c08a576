//! Axum routes.
//!
//! | method | path | |
//! |---|---|---|
//! | GET  | `/kbs` | registered KB ids |
//! | POST | `/kbs` | register `{id?, kb}` |
//! | GET  | `/kbs/{id}/stats` | discriminability summary |
//! | POST | `/sessions` | `{kb_id, config?, mode?}` |
//! | GET  | `/sessions/{id}` | session handle |
//! | POST | `/sessions/{id}/answer` | `{text}` or `{structured}`, optional `turn_nonce` |
//! | GET  | `/sessions/{id}/trace?audience=patient\|clinician` | trace view |
//! | GET  | `/runs/{id}/metrics.csv` | metrics of a batch run folder |

use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bmbe::kb::{kb_stats, KbFile};
use bmbe::patient::{Archetype, PatientProfile, Persona};
use bmbe::session::{Answer, Responder, Session, SimulatedPatient, Step};
use bmbe::{KnowledgeBase, SessionConfig};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::state::{AppState, SessionEntry};
use crate::views::{AnswerBody, ClinicianTrace, FinalBelief, PatientTrace, SessionHandle};

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/kbs", get(list_kbs).post(register_kb))
        .route("/kbs/{id}/stats", get(get_kb_stats))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/answer", post(post_answer))
        .route("/sessions/{id}/trace", get(get_trace))
        .route("/runs/{id}/metrics.csv", get(get_run_metrics))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Serves the router on an already bound listener until the task is dropped.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn require_token(State(st): State<Arc<AppState>>, req: Request, next: Next) -> Result<Response, ApiError> {
    if let Some(token) = st.token() {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token) {
            return Err(ApiError::Unauthorized);
        }
    }
    Ok(next.run(req).await)
}

/// Parses a body with the API's own error shape instead of axum's rejection.
fn parse<T: DeserializeOwned>(body: Value) -> Result<T, ApiError> {
    serde_json::from_value(body).map_err(|e| ApiError::Invalid(e.to_string()))
}

fn lock(entry: &Mutex<SessionEntry>) -> MutexGuard<'_, SessionEntry> {
    entry.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn list_kbs(State(st): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "kbs": st.kb_ids() }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterKb {
    #[serde(default)]
    id: Option<String>,
    kb: KbFile,
}

fn kb_summary(id: &str, kb: &KnowledgeBase) -> Value {
    json!({
        "kb_id": id,
        "kb_hash": kb.content_hash(),
        "n_diseases": kb.n_diseases(),
        "n_features": kb.n_features(),
    })
}

async fn register_kb(State(st): State<Arc<AppState>>, Json(body): Json<Value>) -> Result<Response, ApiError> {
    let req: RegisterKb = parse(body)?;
    let kb = KnowledgeBase::from_file_repr(req.kb).map_err(|e| ApiError::Invalid(e.to_string()))?;
    let id = req.id.unwrap_or_else(|| format!("kb-{}", &kb.content_hash()[..12]));
    let (kb, created) = st.register_kb(id.clone(), kb)?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(kb_summary(&id, &kb))).into_response())
}

async fn get_kb_stats(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let kb = st.kb(&id)?;
    let mut out = kb_summary(&id, &kb);
    out["stats"] = serde_json::to_value(kb_stats(&kb)).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(out))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PersonaInput {
    Archetype(Archetype),
    Custom(Persona),
}

impl Default for PersonaInput {
    fn default() -> Self {
        PersonaInput::Archetype(Archetype::Plain)
    }
}

#[derive(Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum SessionMode {
    #[default]
    HumanPatient,
    Simulated {
        #[serde(default)]
        profile_id: Option<String>,
        #[serde(default)]
        profile: Option<PatientProfile>,
        #[serde(default)]
        persona: PersonaInput,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    kb_id: String,
    #[serde(default)]
    config: SessionConfig,
    #[serde(default)]
    mode: SessionMode,
}

fn new_session_id() -> String {
    format!("s-{}", uuid::Uuid::new_v4().simple())
}

fn create(st: &AppState, req: CreateSession) -> Result<SessionHandle, ApiError> {
    let kb = st.kb(&req.kb_id)?;
    let mut session = Session::new(new_session_id(), kb.clone(), st.sensor().clone(), req.config)?;
    if let SessionMode::Simulated {
        profile_id,
        profile,
        persona,
        seed,
    } = req.mode
    {
        let profile = match (profile, profile_id) {
            (Some(p), None) => p,
            (None, Some(id)) => st.profile(&id)?.clone(),
            _ => return Err(ApiError::Invalid("simulated mode needs exactly one of profile or profile_id".into())),
        };
        let persona = match persona {
            PersonaInput::Archetype(a) => Persona::preset(a),
            PersonaInput::Custom(p) => p,
        };
        persona.validate().map_err(|e| ApiError::Invalid(e.to_string()))?;
        session = session.with_profile_id(profile.id.clone());
        let mut responder = SimulatedPatient::new(profile, persona, seed);
        let mut step = session.open(responder.opening().as_deref())?;
        while let Step::Ask(q) = step {
            let feature = kb.feature(&q.feature_id).expect("asked feature exists");
            match responder.answer(feature, &q.text) {
                Ok(a) => step = session.submit(a)?,
                Err(e) => {
                    session.abort(e.to_string());
                    break;
                }
            }
        }
    }
    st.insert_session(SessionEntry {
        kb_id: req.kb_id,
        session,
        nonces: Default::default(),
    })
}

async fn create_session(
    State(st): State<Arc<AppState>>,
    Json(body): Json<Value>,
) -> Result<(StatusCode, Json<SessionHandle>), ApiError> {
    let req: CreateSession = parse(body)?;
    let handle = blocking(move || create(&st, req)).await?;
    Ok((StatusCode::CREATED, Json(handle)))
}

async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionHandle>, ApiError> {
    let entry = st.session(&id)?;
    let handle = lock(&entry).handle();
    Ok(Json(handle))
}

fn answer(st: &AppState, id: &str, body: AnswerBody) -> Result<SessionHandle, ApiError> {
    let entry = st.session(id)?;
    let mut e = lock(&entry);
    if let Some(nonce) = &body.turn_nonce {
        if let Some((previous, handle)) = e.nonces.get(nonce) {
            if *previous == body {
                return Ok(handle.clone());
            }
            return Err(ApiError::Conflict(format!("turn nonce `{nonce}` was already used for a different answer")));
        }
    }
    let reply = match (&body.text, &body.structured) {
        (Some(t), None) => Answer::Text(t.clone()),
        (None, Some(s)) => Answer::Structured {
            value: s.value.clone(),
            confidence: s.confidence_label,
        },
        _ => return Err(ApiError::Invalid("set exactly one of `text` and `structured`".into())),
    };
    match (e.session.current(), reply) {
        (Step::Intake, Answer::Text(t)) => {
            let narrative = Some(t.as_str()).filter(|t| !t.trim().is_empty());
            e.session.open(narrative)?;
        }
        (Step::Intake, _) => return Err(ApiError::Invalid("the opening statement must be free text".into())),
        (Step::Ask(_), reply) => {
            e.session.submit(reply)?;
        }
        (Step::Done(_), _) => {
            return Err(ApiError::Conflict(format!(
                "session `{id}` is {}; it takes no more answers",
                if e.session.result().is_some_and(|r| r.outcome.committed().is_some()) {
                    "committed"
                } else {
                    "abstained"
                }
            )))
        }
    }
    st.persist(&e)?;
    let handle = e.handle();
    if let Some(nonce) = body.turn_nonce.clone() {
        e.nonces.insert(nonce, (body, handle.clone()));
    }
    Ok(handle)
}

async fn post_answer(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<Value>,
) -> Result<Json<SessionHandle>, ApiError> {
    let body: AnswerBody = parse(body)?;
    Ok(Json(blocking(move || answer(&st, &id, body)).await?))
}

#[derive(Deserialize)]
struct TraceQuery {
    #[serde(default)]
    audience: Option<String>,
}

async fn get_trace(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<TraceQuery>,
) -> Result<Json<Value>, ApiError> {
    let entry = st.session(&id)?;
    let e = lock(&entry);
    let handle = e.handle();
    let view = match q.audience.as_deref().unwrap_or("patient") {
        "patient" => serde_json::to_value(PatientTrace::of(&handle, e.session.trace())),
        "clinician" => serde_json::to_value(ClinicianTrace {
            handle,
            header: e.session.header(),
            records: e.session.trace().to_vec(),
            final_belief: e.session.result().map(|r| FinalBelief {
                top5: r.final_belief_top5,
                max_posterior: r.final_max_posterior,
                ranking: r.final_ranking,
            }),
        }),
        other => return Err(ApiError::Invalid(format!("audience `{other}` is not patient or clinician"))),
    };
    view.map(Json).map_err(|e| ApiError::Internal(e.to_string()))
}

async fn get_run_metrics(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let csv = st.run_metrics_csv(&id)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}
