//! HTTP session service and command-line front end for `bmbe`.
//!
//! [`routes::router`] exposes live diagnostic sessions to the console and to
//! scripts; [`cli`] wraps every batch operation of the engine (cohort runs,
//! metrics, KB tooling, the question-scoring table) behind one `bmbe`
//! binary. Both can be driven in-process, which is how the integration
//! tests exercise them.

pub mod cli;
pub mod error;
pub mod routes;
pub mod state;
pub mod views;

pub use error::ApiError;
pub use routes::router;
pub use state::{AppState, ServiceConfig};
