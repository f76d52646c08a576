//! Engine versus a symptom-vote baseline under each communication persona,
//! on the same dialogues.
//!
//! ```bash
//! cargo run -p bmbe --release --example persona_robustness
//! ```

use std::sync::Arc;

use bmbe::eval::persona_benchmark;
use bmbe::fixtures::separable_kb;
use bmbe::patient::{generate_cohort, Archetype, Persona};
use bmbe::sensor::Sensor;
use bmbe::SessionConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kb = Arc::new(separable_kb());
    let profiles = generate_cohort(&kb, 10, 42)?;
    let personas: Vec<Persona> = Archetype::ALL.into_iter().map(Persona::preset).collect();
    let rows = persona_benchmark(&kb, &Sensor::airgapped(), &profiles, &personas, &SessionConfig::default(), 0.5)?;

    println!("{:<12} {:>8} {:>10} {:>10}", "persona", "engine", "at tau*", "baseline");
    for r in &rows {
        println!(
            "{:<12} {:>8.3} {:>10.3} {:>10.3}",
            r.persona.as_str(),
            r.engine.dhs,
            r.engine_at_tau_star.dhs,
            r.baseline.dhs
        );
    }
    Ok(())
}
