//! Runs an oracle cohort, sweeps the commit threshold and breaks the result
//! down by disease prevalence.
//!
//! ```bash
//! cargo run -p bmbe --example threshold_sweep
//! ```

use std::sync::Arc;

use bmbe::eval::{default_grid, metrics_csv, run_cohort, stratify_prevalence, sweep_threshold, ResponderKind};
use bmbe::fixtures::{ddx_shaped_kb, six_session_runset};
use bmbe::patient::{generate_cohort, Persona};
use bmbe::sensor::Sensor;
use bmbe::SessionConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (rows, tau_star) = sweep_threshold(&six_session_runset(), &[0.0, 0.3, 0.5, 0.7, 0.9], 0.5)?;
    println!("six synthetic sessions:\n{}tau* = {tau_star}\n", metrics_csv(&rows));

    let kb = Arc::new(ddx_shaped_kb());
    let profiles = generate_cohort(&kb, 2, 1)?;
    let cfg = SessionConfig {
        tau: 0.0,
        t_min: 20,
        t_max: 20,
        ..SessionConfig::default()
    };
    let kind = ResponderKind::Patient {
        persona: Persona::plain(),
    };
    let rs = run_cohort(&kb, &Sensor::airgapped(), &profiles, &kind, &cfg)?;
    let (rows, tau_star) = sweep_threshold(&rs, &default_grid(), 0.5)?;
    println!("{} sessions on the {}-disease KB:", rs.len(), kb.n_diseases());
    for r in rows.iter().step_by(2) {
        println!(
            "  tau {:.2}  sel_acc {:.3}  coverage {:.3}  dhs {:.3}",
            r.tau, r.selective_accuracy, r.coverage, r.dhs
        );
    }
    println!("tau* = {tau_star}");

    for s in stratify_prevalence(&rs, &kb, Some(tau_star), 0.5)? {
        let dhs = s.metrics.map_or("-".to_owned(), |m| format!("{:.3}", m.dhs));
        println!("  {:?}: {} diseases, {} patients, dhs {dhs}", s.stratum, s.diseases.len(), s.n_patients);
    }
    Ok(())
}
