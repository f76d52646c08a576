//! Samples a patient and lets each persona answer the same questions.
//!
//! ```bash
//! cargo run -p bmbe --example patient_personas
//! ```

use bmbe::fixtures::separable_kb;
use bmbe::patient::{generate_cohort, respond, sample_patient, stratified_subset, Archetype, Persona};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kb = separable_kb();
    let patient = sample_patient(&kb, "d_influenza", 7)?;
    println!("{} ({}, {:?}): \"{}\"", patient.id, patient.age, patient.sex, patient.chief_complaint);

    let asked = ["f_fever", "f_cough", "f_rash"];
    for archetype in Archetype::ALL {
        let persona = Persona::preset(archetype);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        println!("\n{archetype}:");
        for f in asked {
            let feature = kb.feature(f).expect("feature exists");
            let truth = patient.findings.get(f).map_or("-", String::as_str);
            println!("  {f:<10} truth {truth:<4} says \"{}\"", respond(&patient, &persona, feature, &mut rng));
        }
    }

    let cohort = generate_cohort(&kb, 20, 42)?;
    let subset = stratified_subset(&cohort, 15, 42)?;
    println!("\ncohort of {}, stratified subset of {}", cohort.len(), subset.len());
    Ok(())
}
