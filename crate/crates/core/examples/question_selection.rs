//! Scores every question by expected information gain and compares the
//! global and focused policies once the belief has concentrated.
//!
//! ```bash
//! cargo run -p bmbe --example question_selection
//! ```

use std::time::Instant;

use bmbe::belief::{update_belief, DEFAULT_NUMERIC_SIGMA};
use bmbe::fixtures::{ddx_shaped_kb, separable_kb};
use bmbe::policy::{score_features, select_scored};
use bmbe::{AskedSet, EvidenceTriple, EvidenceValue, PolicyConfig, PriorStrategy, Tier};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kb = separable_kb();
    let mut b = kb.prior(&PriorStrategy::Empirical)?;
    let mut asked = AskedSet::new();

    let mut scores = score_features(&b, &kb, &asked, &PolicyConfig::default())?;
    scores.sort_by(|a, b| b.score.total_cmp(&a.score));
    println!("top questions at the prior (entropy {:.3} bits):", b.entropy());
    for s in scores.iter().take(5) {
        println!("  {:<26} eig {:.4}", s.feature_id, s.eig_global);
    }

    for f in ["f_fever", "f_chills"] {
        asked.insert(f);
        let t = EvidenceTriple::new(f, EvidenceValue::label("yes"), 1.0, Tier::Oracle, asked.len() as u32);
        b = update_belief(&b, &kb, &t, DEFAULT_NUMERIC_SIGMA)?;
    }
    let (top, p) = b.argmax();
    println!("\nafter fever and chills: {top} at {p:.3}");
    for (name, cfg) in [("global", PolicyConfig::default()), ("focused", PolicyConfig::focused())] {
        let best = select_scored(&b, &kb, &asked, &cfg)?;
        println!(
            "  {name:<8} asks {:<24} score {:.4} (global eig {:.4}, focus eig {:?})",
            best.feature_id, best.score, best.eig_global, best.eig_focus
        );
    }

    let big = ddx_shaped_kb();
    let prior = big.prior(&PriorStrategy::Empirical)?;
    let empty = AskedSet::new();
    let start = Instant::now();
    let passes = 20;
    for _ in 0..passes {
        select_scored(&prior, &big, &empty, &PolicyConfig::default())?;
    }
    println!(
        "\nfull pass over {} features x {} diseases: {:.2} ms each",
        big.n_features(),
        big.n_diseases(),
        start.elapsed().as_secs_f64() * 1000.0 / f64::from(passes)
    );
    Ok(())
}
