//! Deterministic Bayesian belief engine for diagnostic dialogue.
//!
//! The crate keeps language handling and probabilistic reasoning apart. A
//! [`kb::KnowledgeBase`] supplies smoothed likelihoods and priors; the
//! [`belief`] module maintains a log-space posterior updated with
//! confidence-weighted (Jeffrey) evidence; [`policy`] picks the next question
//! by expected information gain; [`session`] runs the commit-or-abstain loop
//! and records an auditable trace. The [`sensor`] layer turns free text into
//! `(feature, value, confidence)` triples and renders questions, without ever
//! seeing the posterior. [`patient`] simulates patients for benchmarking and
//! [`eval`] computes selective-diagnosis metrics over batches of sessions.
//!
//! Runnable walkthroughs of every capability live in the crate's `examples/`
//! directory:
//!
//! ```bash
//! cargo run -p bmbe --example knowledge_base
//! cargo run -p bmbe --example belief_update
//! cargo run -p bmbe --example question_selection
//! cargo run -p bmbe --example sensor_cascade
//! cargo run -p bmbe --example patient_personas
//! cargo run -p bmbe --example diagnostic_session
//! cargo run -p bmbe --example threshold_sweep
//! cargo run -p bmbe --example failure_taxonomy
//! cargo run -p bmbe --example scaling_and_transfer
//! cargo run -p bmbe --example persona_robustness
//! ```

pub mod belief;
pub mod eval;
pub mod fixtures;
pub mod kb;
pub mod patient;
pub mod policy;
pub mod sensor;
pub mod session;
mod util;

pub use belief::{Belief, ConfidenceLabel, ConfidenceScale, EvidenceTriple, EvidenceValue, Tier};
pub use kb::{KnowledgeBase, PriorStrategy};
pub use policy::{AskedSet, PolicyConfig};
pub use session::{run_session, SessionConfig, SessionResult};
