//! Drives one session step by step with a simulated patient, prints each
//! turn, then writes the trace and replays it.
//!
//! ```bash
//! cargo run -p bmbe --example diagnostic_session
//! ```

use std::sync::Arc;

use bmbe::fixtures::separable_kb;
use bmbe::patient::{sample_patient, Persona};
use bmbe::sensor::Sensor;
use bmbe::session::{read_trace_jsonl, replay_trace, write_trace_jsonl, Responder, Session, SimulatedPatient, Step};
use bmbe::SessionConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kb = Arc::new(separable_kb());
    let profile = sample_patient(&kb, "d_pneumonia", 3)?;
    let mut patient = SimulatedPatient::new(profile.clone(), Persona::plain(), 3);
    let cfg = SessionConfig {
        tau: 0.9,
        t_min: 3,
        ..SessionConfig::default()
    };
    let mut session = Session::new("demo", kb.clone(), Sensor::airgapped(), cfg)?;

    let opening = patient.opening();
    println!("patient: {}", opening.as_deref().unwrap_or(""));
    let mut step = session.open(opening.as_deref())?;
    println!("intake applied {} findings", session.intake_triples().len());
    while let Step::Ask(q) = step {
        let feature = kb.feature(&q.feature_id).expect("asked feature exists");
        let answer = patient.answer(feature, &q.text)?;
        step = session.submit(answer)?;
        let rec = session.trace().last().expect("a turn was recorded");
        println!(
            "{:>2} [{}] {:<44} {:<12} -> {} {:.3}",
            rec.turn,
            rec.kappa.as_str(),
            rec.question_text,
            rec.raw_answer,
            rec.posterior_top5[0].disease_id,
            rec.max_posterior
        );
    }
    let result = session.result().expect("session finished");
    println!(
        "\noutcome {:?} after {} turns ({:?}); truth {}",
        result.outcome, result.turns_used, result.stop_reason, profile.disease_id
    );

    let mut buf = Vec::new();
    write_trace_jsonl(&mut buf, &session.header(), session.trace())?;
    let (header, records) = read_trace_jsonl(std::str::from_utf8(&buf)?)?;
    let replayed = replay_trace(&kb, &header, &records, 1e-9)?;
    println!("trace: {} bytes, replayed {} beliefs within 1e-9", buf.len(), replayed.len());
    Ok(())
}
