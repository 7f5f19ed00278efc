//! Heavy-tailed samplers and adversarial corruption.
//!
//! Run with: cargo run --example sampling_and_corruption

use nalgebra::DVector;
use robust_location::distributions::{
    corrupt, sample_semi_product, Adversary, CorruptionPlan, MagnitudeLaw, SemiProductSpec,
};

fn main() -> robust_location::Result<()> {
    // Product Cauchy: independent signs times half-Cauchy magnitudes per
    // coordinate. No moments exist, yet the sign symmetry is enough for
    // location estimation.
    let spec = SemiProductSpec::new(5, MagnitudeLaw::HalfCauchy { scale: 1.0 }, 0.5, 1.0)?;
    let mu_star = DVector::from_vec(vec![1.0, -2.0, 0.0, 0.5, 3.0]);
    let clean = sample_semi_product(&spec, &mu_star, 2000, 7)?;

    let norms: Vec<f64> = (0..clean.n()).map(|i| (clean.row(i) - &mu_star).norm()).collect();
    let max = norms.iter().cloned().fold(0.0_f64, f64::max);
    let med = {
        let mut s = norms.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s[s.len() / 2]
    };
    println!("clean Cauchy sample: median residual norm {med:.2}, max {max:.1}");

    // An adversary replaces a chosen fraction with a far cluster.
    let plan = CorruptionPlan::new(
        0.1,
        Adversary::ClusterShift {
            direction: DVector::from_element(5, 1.0 / 5.0_f64.sqrt()),
            distance: 20.0,
        },
        7,
    )?;
    let dirty = corrupt(&clean, &plan)?;
    let truth = dirty.truth.as_ref().unwrap();
    println!(
        "after corruption: {} of {} samples replaced (mask attached for diagnostics)",
        truth.corrupted_count(),
        dirty.n()
    );

    // Naive estimates collapse; the corrupted rows sit 20 away from mu*.
    let mut mean = DVector::zeros(5);
    for i in 0..dirty.n() {
        mean += dirty.row(i);
    }
    mean /= dirty.n() as f64;
    println!("sample mean error: {:.2}", (mean - &mu_star).norm());
    Ok(())
}
