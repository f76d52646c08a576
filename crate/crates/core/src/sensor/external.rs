//! Optional external completion service.
//!
//! The wire contract is deliberately small: the client POSTs
//! `{"template_id": ..., "slots": {...}}` as JSON and reads the response body
//! as plain text. Nothing here runs unless a client is explicitly enabled,
//! and setting `BMBE_EXTERNAL_DISABLED=1` vetoes every client globally.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DISABLE_ENV: &str = "BMBE_EXTERNAL_DISABLED";

static CONNECTION_ATTEMPTS: AtomicU64 = AtomicU64::new(0);

/// Number of outbound requests attempted by [`HttpCompletionClient`]s in
/// this process.
pub fn connection_attempts() -> u64 {
    CONNECTION_ATTEMPTS.load(Ordering::SeqCst)
}

/// Whether the environment forces airgapped operation.
pub fn disabled_by_env() -> bool {
    std::env::var(DISABLE_ENV).is_ok_and(|v| {
        let v = v.trim();
        !v.is_empty() && v != "0" && !v.eq_ignore_ascii_case("false")
    })
}

#[derive(Debug, Error)]
pub enum ExternalError {
    #[error("external client is disabled")]
    Disabled,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed reply: {0}")]
    Malformed(String),
}

pub trait CompletionClient: Send + Sync {
    fn complete(&self, template_id: &str, slots: &BTreeMap<String, String>) -> Result<String, ExternalError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalClientConfig {
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Directory of prompt templates; the built-in set is used when absent.
    #[serde(default)]
    pub template_set: Option<PathBuf>,
    #[serde(default)]
    pub enabled: bool,
}

fn default_timeout_ms() -> u64 {
    10_000
}

impl Default for ExternalClientConfig {
    fn default() -> Self {
        ExternalClientConfig {
            endpoint: String::new(),
            timeout_ms: default_timeout_ms(),
            template_set: None,
            enabled: false,
        }
    }
}

impl ExternalClientConfig {
    /// Enabled in config and not vetoed by the environment.
    pub fn is_active(&self) -> bool {
        self.enabled && !self.endpoint.is_empty() && !disabled_by_env()
    }
}

#[derive(Serialize)]
struct Request<'a> {
    template_id: &'a str,
    slots: &'a BTreeMap<String, String>,
}

/// Blocking HTTP client for the completion contract.
pub struct HttpCompletionClient {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpCompletionClient {
    /// Returns `None` when the config is inactive, so a disabled config can
    /// never produce a client that touches the network.
    pub fn from_config(cfg: &ExternalClientConfig) -> Option<HttpCompletionClient> {
        if !cfg.is_active() {
            return None;
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build()
            .into();
        Some(HttpCompletionClient {
            endpoint: cfg.endpoint.clone(),
            agent,
        })
    }
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, template_id: &str, slots: &BTreeMap<String, String>) -> Result<String, ExternalError> {
        // Re-check at call time: the veto must hold even for clients built
        // before the variable was set.
        if disabled_by_env() {
            return Err(ExternalError::Disabled);
        }
        CONNECTION_ATTEMPTS.fetch_add(1, Ordering::SeqCst);
        let response = self
            .agent
            .post(&self.endpoint)
            .send_json(Request { template_id, slots })
            .map_err(|e| ExternalError::Transport(e.to_string()))?;
        response
            .into_body()
            .read_to_string()
            .map_err(|e| ExternalError::Transport(e.to_string()))
    }
}
