//! Loads the shipped knowledge bases, prints a few smoothed likelihoods and
//! the discriminability summary, and imports a small elicited table.
//!
//! ```bash
//! cargo run -p bmbe --example knowledge_base
//! ```

use std::collections::BTreeMap;

use bmbe::fixtures::{kb_path, separable_kb};
use bmbe::kb::{import_elicited, kb_stats, load_kb, match_features, ElicitedEntry, ElicitedTables};
use bmbe::PriorStrategy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for name in ["minimal", "separable", "twin", "ddx_shaped"] {
        let kb = load_kb(kb_path(name))?;
        let stats = kb_stats(&kb);
        println!(
            "{name:>10}: K={:<3} N={:<4} mean KL {:.3} bits, mean binary variance {:.4}, hash {}",
            kb.n_diseases(),
            kb.n_features(),
            stats.mean_pair_kl,
            stats.mean_binary_variance,
            &kb.content_hash()[..12]
        );
    }

    let kb = separable_kb();
    println!("\nP(fever = yes | d) on the separable KB:");
    for d in kb.diseases().iter().take(4) {
        println!("  {:<24} {:.4}", d.id, kb.likelihood(&d.id, "f_fever", "yes")?);
    }
    let prior = kb.prior(&PriorStrategy::Empirical)?;
    println!("empirical prior entropy: {:.3} bits", prior.entropy());

    let twin = load_kb(kb_path("twin"))?;
    let m = match_features(&twin, &kb);
    println!("\ntwin vs separable: {} shared features, coverage {:.2}", m.shared.len(), m.coverage_a_in_b);

    let mut tables: ElicitedTables = BTreeMap::new();
    tables.insert(
        "d_cold".into(),
        BTreeMap::from([
            ("f_fever".to_owned(), ElicitedEntry::ProbYes { prob_yes: 0.2 }),
            ("f_sneezing".to_owned(), ElicitedEntry::ProbYes { prob_yes: 0.9 }),
        ]),
    );
    tables.insert(
        "d_flu".into(),
        BTreeMap::from([
            ("f_fever".to_owned(), ElicitedEntry::ProbYes { prob_yes: 0.9 }),
            ("f_sneezing".to_owned(), ElicitedEntry::ProbYes { prob_yes: 1.3 }),
        ]),
    );
    let report = import_elicited(&tables, None)?;
    println!("\nelicited import: {} entries accepted", report.accepted);
    for w in &report.warnings {
        println!("  dropped {}/{}: {}", w.disease_id, w.feature_id, w.reason);
    }
    println!("  P(fever | d_flu) = {:.4}", report.kb.likelihood("d_flu", "f_fever", "yes")?);
    Ok(())
}
