//! Classifies the built-in misdiagnosis fixtures and a batch of noisy
//! sessions into failure categories.
//!
//! ```bash
//! cargo run -p bmbe --example failure_taxonomy
//! ```

use std::sync::Arc;

use bmbe::eval::{classify_failures, run_cohort, summarize_failures, ResponderKind, DEFAULT_GAMMA};
use bmbe::fixtures::{separable_kb, taxonomy_cases};
use bmbe::patient::{generate_cohort, Archetype, Persona};
use bmbe::sensor::Sensor;
use bmbe::SessionConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for case in taxonomy_cases() {
        let tags = classify_failures(&case.runs, &case.kb, std::slice::from_ref(&case.profile), DEFAULT_GAMMA)?;
        let t = &tags[&case.profile.id];
        println!(
            "{:<16} committed {:<14} flags {:?}  fp {} we {} oracle gap {:.3}",
            case.name,
            case.runs.results[0].result.outcome.committed().unwrap_or("-"),
            t.flags,
            t.fp_count,
            t.we_count,
            t.oracle_gap
        );
    }

    let kb = Arc::new(separable_kb());
    let profiles = generate_cohort(&kb, 5, 8)?;
    let kind = ResponderKind::Patient {
        persona: Persona::preset(Archetype::Dazed),
    };
    let rs = run_cohort(&kb, &Sensor::airgapped(), &profiles, &kind, &SessionConfig::default())?;
    let summary = summarize_failures(&classify_failures(&rs, &kb, &profiles, DEFAULT_GAMMA)?);
    println!("\ndazed cohort: {} misdiagnoses out of {}", summary.n_failures, rs.len());
    for (flag, n) in &summary.counts {
        println!("  {flag:?}: {n}");
    }
    Ok(())
}
