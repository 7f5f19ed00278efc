//! The second-moment filter on corrupted product-Cauchy data.
//!
//! Run with: cargo run --example second_moment_filter

use nalgebra::DVector;
use robust_location::distributions::{
    corrupt, sample_semi_product, Adversary, CorruptionPlan, MagnitudeLaw, SemiProductSpec,
};
use robust_location::filters::{filter_second_moment, FilterConfig};
use robust_location::losses::{HuberParams, LossKind};

fn main() -> robust_location::Result<()> {
    let d = 10;
    let spec = SemiProductSpec::new(d, MagnitudeLaw::HalfCauchy { scale: 1.0 }, 0.5, 1.0)?;
    let mu_star = DVector::from_element(d, 1.0);
    let clean = sample_semi_product(&spec, &mu_star, 4000, 42)?;
    let plan = CorruptionPlan::new(
        0.1,
        Adversary::ClusterShift {
            direction: DVector::from_element(d, 1.0 / (d as f64).sqrt()),
            distance: 10.0,
        },
        42,
    )?;
    let data = corrupt(&clean, &plan)?;

    let kind = LossKind::Entrywise(HuberParams::new(2.0)?);
    // sigma bounds the transformed second moment of the clean distribution;
    // here it is calibrated so the guard sits just above the clean level.
    let cfg = FilterConfig::new(kind, 0.03, 0.1)?;
    let est = filter_second_moment(&data, &cfg)?;

    println!(
        "converged = {}, filtering iterations = {}, final guard value = {:.3}",
        est.converged, est.iterations, est.guard_value
    );
    println!("error = {:.4}", (&est.mu_hat - &mu_star).norm());

    // The trace shows weight draining out of the planted cluster.
    for (t, rec) in est.trace.records.iter().enumerate() {
        println!(
            "  step {t}: guard {:.2}, removed weight good {:.4} / bad {:.4}",
            rec.guard_value, rec.weight_removed_good, rec.weight_removed_bad
        );
    }
    let mask = &data.truth.as_ref().unwrap().corrupted_mask;
    let left: f64 =
        (0..data.n()).filter(|&i| mask[i]).map(|i| est.final_w.get(i)).sum();
    println!("weight left on corrupted rows: {left:.5} (started at 0.1)");
    Ok(())
}
