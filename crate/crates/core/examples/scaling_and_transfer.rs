//! Accuracy as the candidate set grows, and a KB evaluated on patients
//! drawn from a KB that shares only half its features.
//!
//! ```bash
//! cargo run -p bmbe --example scaling_and_transfer
//! ```

use std::sync::Arc;

use bmbe::eval::{cross_kb_eval, oracle_accuracy, scaling_experiment, ResponderKind};
use bmbe::fixtures::{ddx_shaped_kb, half_matched_kb, separable_kb};
use bmbe::kb::match_features;
use bmbe::patient::generate_cohort;
use bmbe::sensor::Sensor;
use bmbe::SessionConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kb = ddx_shaped_kb();
    let cfg = SessionConfig::default();
    let rows = scaling_experiment(&kb, &[5, 10, 20, 49], &[1, 2, 3], &Sensor::airgapped(), &ResponderKind::Oracle, &cfg)?;
    println!("oracle top-1 by number of candidate diseases:");
    for size in [5, 10, 20, 49] {
        let accs: Vec<f64> = rows.iter().filter(|r| r.size == size).map(|r| r.top1).collect();
        println!("  K={size:<3} mean {:.3} over {} seeds", accs.iter().sum::<f64>() / accs.len() as f64, accs.len());
    }

    let native = Arc::new(separable_kb());
    let (acc, _) = oracle_accuracy(&native, &generate_cohort(&native, 5, 1)?, &cfg)?;
    println!("\nseparable ceiling: top1 {:.3} top3 {:.3}", acc.top1, acc.top3);

    let foreign = half_matched_kb(&native);
    let patients = generate_cohort(&foreign, 5, 1)?;
    let report = cross_kb_eval(
        &native,
        &patients,
        &match_features(&foreign, &native),
        &Sensor::airgapped(),
        &ResponderKind::Oracle,
        &cfg,
        0.5,
    )?;
    println!(
        "half-matched transfer: feature coverage {:.2}, sel_acc {:.3}, coverage {:.3}, dhs {:.3}",
        report.mean_feature_coverage, report.metrics.selective_accuracy, report.metrics.coverage, report.metrics.dhs
    );
    Ok(())
}
