//! Server-side registries: knowledge bases, live sessions and run folders.
//!
//! With a data directory configured, the layout is
//!
//! ```text
//! <data_dir>/kbs/<kb_id>.json          registered knowledge bases
//! <data_dir>/sessions/<id>.jsonl       one trace per session, rewritten per answer
//! <data_dir>/runs/<run_id>/metrics.csv batch runs written by `bmbe run --out`
//! ```
//!
//! On startup every session trace is replayed through [`Session::restore`]
//! against the registered KB whose content hash matches the trace header.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use bmbe::fixtures::shipped_kbs;
use bmbe::kb::load_kb;
use bmbe::patient::PatientProfile;
use bmbe::sensor::Sensor;
use bmbe::session::{read_trace_jsonl, write_trace_jsonl, Session};
use bmbe::KnowledgeBase;

use crate::error::ApiError;
use crate::views::{AnswerBody, SessionHandle};

/// Startup options for [`AppState::new`].
#[derive(Clone)]
pub struct ServiceConfig {
    pub data_dir: Option<PathBuf>,
    /// Static bearer token required on every request when set.
    pub token: Option<String>,
    pub sensor: Sensor,
    /// Profiles that simulated sessions may reference by id.
    pub profiles: Vec<PatientProfile>,
    /// Extra KBs registered at startup, next to the shipped fixtures.
    pub kbs: Vec<(String, KnowledgeBase)>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_dir: None,
            token: None,
            sensor: Sensor::airgapped(),
            profiles: Vec::new(),
            kbs: Vec::new(),
        }
    }
}

pub struct SessionEntry {
    pub kb_id: String,
    pub session: Session,
    /// Answers already applied, keyed by client nonce.
    pub nonces: BTreeMap<String, (AnswerBody, SessionHandle)>,
}

impl SessionEntry {
    pub fn handle(&self) -> SessionHandle {
        SessionHandle::of(&self.kb_id, &self.session)
    }
}

pub struct AppState {
    kbs: RwLock<BTreeMap<String, Arc<KnowledgeBase>>>,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<SessionEntry>>>>,
    profiles: BTreeMap<String, PatientProfile>,
    sensor: Sensor,
    data_dir: Option<PathBuf>,
    token: Option<String>,
    restore_warnings: Vec<String>,
}

/// Ids become file names, so they are restricted to a safe alphabet.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ApiError {
    ApiError::Internal(format!("{}: {e}", path.display()))
}

/// Writes through a temporary file so a crash never leaves half a trace.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ApiError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Result<Arc<AppState>, ApiError> {
        let mut kbs: BTreeMap<String, Arc<KnowledgeBase>> =
            shipped_kbs().into_iter().map(|(name, kb)| (name.to_owned(), Arc::new(kb))).collect();
        for (id, kb) in cfg.kbs {
            kbs.insert(id, Arc::new(kb));
        }
        if let Some(dir) = &cfg.data_dir {
            for sub in ["kbs", "sessions", "runs"] {
                let p = dir.join(sub);
                std::fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
            }
            for path in sorted_files(&dir.join("kbs"), "json")? {
                let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
                let kb = load_kb(&path).map_err(|e| io_err(&path, e))?;
                kbs.insert(id, Arc::new(kb));
            }
        }
        let mut state = AppState {
            kbs: RwLock::new(kbs),
            sessions: RwLock::new(BTreeMap::new()),
            profiles: cfg.profiles.into_iter().map(|p| (p.id.clone(), p)).collect(),
            sensor: cfg.sensor,
            data_dir: cfg.data_dir,
            token: cfg.token,
            restore_warnings: Vec::new(),
        };
        state.restore_sessions()?;
        Ok(Arc::new(state))
    }

    fn restore_sessions(&mut self) -> Result<(), ApiError> {
        let Some(dir) = &self.data_dir else { return Ok(()) };
        let by_hash: BTreeMap<String, (String, Arc<KnowledgeBase>)> = self
            .kbs
            .read()
            .expect("kb registry lock")
            .iter()
            .rev()
            .map(|(id, kb)| (kb.content_hash(), (id.clone(), kb.clone())))
            .collect();
        let mut sessions = BTreeMap::new();
        for path in sorted_files(&dir.join("sessions"), "jsonl")? {
            let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let restored = read_trace_jsonl(&text).map_err(|e| e.to_string()).and_then(|(header, records)| {
                let (kb_id, kb) = by_hash
                    .get(&header.kb_hash)
                    .ok_or_else(|| format!("no registered KB has hash {}", header.kb_hash))?;
                Session::restore(kb.clone(), self.sensor.clone(), &header, &records)
                    .map(|s| (kb_id.clone(), s))
                    .map_err(|e| e.to_string())
            });
            match restored {
                Ok((kb_id, session)) => {
                    let entry = SessionEntry {
                        kb_id,
                        session,
                        nonces: BTreeMap::new(),
                    };
                    sessions.insert(entry.session.id().to_owned(), Arc::new(Mutex::new(entry)));
                }
                Err(e) => self.restore_warnings.push(format!("{}: {e}", path.display())),
            }
        }
        *self.sessions.write().expect("session registry lock") = sessions;
        Ok(())
    }

    /// Traces found on disk that could not be restored.
    pub fn restore_warnings(&self) -> &[String] {
        &self.restore_warnings
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    pub fn sensor(&self) -> &Sensor {
        &self.sensor
    }

    pub fn kb(&self, id: &str) -> Result<Arc<KnowledgeBase>, ApiError> {
        self.kbs
            .read()
            .expect("kb registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("kb `{id}`")))
    }

    pub fn kb_ids(&self) -> Vec<String> {
        self.kbs.read().expect("kb registry lock").keys().cloned().collect()
    }

    /// Registers a KB. Re-registering identical content under the same id
    /// is a no-op; different content under a taken id is a conflict.
    pub fn register_kb(&self, id: String, kb: KnowledgeBase) -> Result<(Arc<KnowledgeBase>, bool), ApiError> {
        if !valid_id(&id) {
            return Err(ApiError::Invalid(format!("kb id `{id}` must match [A-Za-z0-9._-]+")));
        }
        let mut kbs = self.kbs.write().expect("kb registry lock");
        if let Some(existing) = kbs.get(&id) {
            if existing.content_hash() == kb.content_hash() {
                return Ok((existing.clone(), false));
            }
            return Err(ApiError::Conflict(format!("kb `{id}` is already registered with different content")));
        }
        if let Some(dir) = &self.data_dir {
            write_atomic(&dir.join("kbs").join(format!("{id}.json")), kb.to_json_pretty().as_bytes())?;
        }
        let kb = Arc::new(kb);
        kbs.insert(id, kb.clone());
        Ok((kb, true))
    }

    pub fn profile(&self, id: &str) -> Result<&PatientProfile, ApiError> {
        self.profiles
            .get(id)
            .ok_or_else(|| ApiError::NotFound(format!("profile `{id}`")))
    }

    pub fn insert_session(&self, entry: SessionEntry) -> Result<SessionHandle, ApiError> {
        self.persist(&entry)?;
        let handle = entry.handle();
        self.sessions
            .write()
            .expect("session registry lock")
            .insert(handle.session_id.clone(), Arc::new(Mutex::new(entry)));
        Ok(handle)
    }

    pub fn session(&self, id: &str) -> Result<Arc<Mutex<SessionEntry>>, ApiError> {
        self.sessions
            .read()
            .expect("session registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("session `{id}`")))
    }

    pub fn session_path(&self, id: &str) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join("sessions").join(format!("{id}.jsonl")))
    }

    /// Rewrites the session's trace file.
    pub fn persist(&self, entry: &SessionEntry) -> Result<(), ApiError> {
        let Some(path) = self.session_path(entry.session.id()) else {
            return Ok(());
        };
        let mut buf = Vec::new();
        write_trace_jsonl(&mut buf, &entry.session.header(), entry.session.trace()).map_err(|e| io_err(&path, e))?;
        write_atomic(&path, &buf)
    }

    /// The `metrics.csv` of a batch run folder.
    pub fn run_metrics_csv(&self, run_id: &str) -> Result<String, ApiError> {
        let not_found = || ApiError::NotFound(format!("run `{run_id}`"));
        if !valid_id(run_id) {
            return Err(not_found());
        }
        let dir = self.data_dir.as_ref().ok_or_else(not_found)?;
        std::fs::read_to_string(dir.join("runs").join(run_id).join("metrics.csv")).map_err(|_| not_found())
    }
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, ApiError> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    Ok(out)
}
