//! A contamination sweep comparing estimators, with a fitted error-scaling
//! exponent. The same machinery backs the `robloc bench` and `robloc sweep`
//! subcommands.
//!
//! Run with: cargo run --release --example eps_sweep

use robust_location::experiment::{fit_scaling_exponent, run_experiment, ExperimentConfig};

const CONFIG: &str = "\
    distribution = semi-product\n\
    magnitude = half-gaussian\n\
    n = 2000\n\
    d = 8\n\
    alpha = 0.682\n\
    rho = 1.0\n\
    mu = random-unit\n\
    eps = 0.02\n\
    eps = 0.05\n\
    eps = 0.1\n\
    eps = 0.2\n\
    adversary = aligned\n\
    distance = 1.0\n\
    distance_scale = inv-sqrt-eps\n\
    estimator = mean\n\
    estimator = filter2\n\
    sigma = 0.012\n\
    seeds = 8\n";

fn main() -> robust_location::Result<()> {
    let cfg = ExperimentConfig::parse(CONFIG)?;
    let rows = run_experiment(&cfg)?;

    for est in ["mean", "filter2"] {
        print!("{est:>8}:");
        for &eps in &cfg.eps_grid {
            let mut errs: Vec<f64> = rows
                .iter()
                .filter(|r| r.estimator == est && r.eps == eps)
                .map(|r| r.error)
                .collect();
            errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            print!("  eps {eps}: {:.3}", errs[errs.len() / 2]);
        }
        println!();
    }
    println!("fitted filter2 exponent: {:.2}", fit_scaling_exponent(&rows, "filter2")?);
    Ok(())
}
