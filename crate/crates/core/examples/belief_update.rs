//! Applies evidence at every confidence label and shows how far each one
//! moves the posterior.
//!
//! ```bash
//! cargo run -p bmbe --example belief_update
//! ```

use bmbe::belief::{update_belief, DEFAULT_NUMERIC_SIGMA};
use bmbe::fixtures::separable_kb;
use bmbe::{ConfidenceLabel, ConfidenceScale, EvidenceTriple, EvidenceValue, PriorStrategy, Tier};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kb = separable_kb();
    let prior = kb.prior(&PriorStrategy::Uniform)?;
    let scale = ConfidenceScale::default();

    println!("fever = yes, one update from a uniform prior over {} diseases", kb.n_diseases());
    for label in ConfidenceLabel::ALL {
        let c = scale.weight(label);
        let t = EvidenceTriple::new("f_fever", EvidenceValue::label("yes"), c, Tier::Pattern, 1);
        let b = update_belief(&prior, &kb, &t, DEFAULT_NUMERIC_SIGMA)?;
        let (top, p) = b.argmax();
        println!(
            "  {:<12} c={c:.2}  top {top} {p:.4}  entropy {:.3} bits  moved {:.4}",
            label.as_str(),
            b.entropy(),
            b.sup_distance(&prior)
        );
    }

    let mut b = prior.clone();
    let evidence = [
        ("f_fever", "yes", 1.0),
        ("f_chills", "yes", 0.75),
        ("f_muscle_aches", "no", 0.25),
        ("f_cough", "no", 1.0),
    ];
    println!("\nsequence:");
    for (turn, (f, v, c)) in evidence.into_iter().enumerate() {
        let t = EvidenceTriple::new(f, EvidenceValue::label(v), c, Tier::Pattern, turn as u32 + 1);
        b = update_belief(&b, &kb, &t, DEFAULT_NUMERIC_SIGMA)?;
        let top: Vec<String> = b.top_k(3)?.iter().map(|(d, p)| format!("{d}={p:.3}")).collect();
        println!("  {f}={v} @ {c}: {}", top.join(", "));
    }
    Ok(())
}
