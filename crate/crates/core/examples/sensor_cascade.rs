//! Runs free-text answers through the parsing cascade and renders the same
//! question at each confidence bucket. Pass an endpoint to try the external
//! tier as well:
//!
//! ```bash
//! cargo run -p bmbe --example sensor_cascade
//! cargo run -p bmbe --example sensor_cascade -- http://127.0.0.1:8089/complete
//! ```

use bmbe::fixtures::separable_kb;
use bmbe::sensor::{confidence_indicator, ExternalClientConfig, Sensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kb = separable_kb();
    let sensor = match std::env::args().nth(1) {
        Some(endpoint) => Sensor::from_config(&ExternalClientConfig {
            endpoint,
            enabled: true,
            ..ExternalClientConfig::default()
        })?,
        None => Sensor::airgapped(),
    };
    println!("external tier active: {}", sensor.has_external());

    let fever = kb.feature("f_fever").expect("separable KB has fever");
    for text in [
        "Yes.",
        "no",
        "I think so",
        "maybe, not sure",
        "I don't know",
        "What do you mean?",
        "My cat is called Biscuit",
    ] {
        let out = sensor.parse_response(text, fever);
        println!(
            "  {text:<28} -> {:?} {:?} via {:?}{}",
            out.value,
            out.confidence_label,
            out.tier,
            out.note.map(|n| format!(" ({n})")).unwrap_or_default()
        );
    }

    println!();
    for max in [0.1, 0.5, 0.9] {
        let kappa = confidence_indicator(max)?;
        println!("  max posterior {max}: [{}] {}", kappa.as_str(), sensor.verbalise_question(fever, kappa));
    }

    let scale = bmbe::ConfidenceScale::default();
    let narrative = "I've had a fever and chills for two days, but no cough.";
    println!("\nintake from \"{narrative}\":");
    for t in sensor.keyword_intake(narrative, &kb, &scale) {
        println!("  {} = {:?} @ {}", t.feature_id, t.value, t.confidence);
    }
    Ok(())
}
