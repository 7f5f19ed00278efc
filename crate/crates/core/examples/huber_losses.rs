//! The two Huber-type losses and the weighted minimizer they induce.
//!
//! Run with: cargo run --example huber_losses

use nalgebra::{DMatrix, DVector};
use robust_location::losses::{
    huber_penalty, loss_grad, minimize_weighted_loss, HuberParams, LossKind,
};
use robust_location::{Dataset, WeightVector};

fn main() -> robust_location::Result<()> {
    let params = HuberParams::new(2.0)?;
    println!("penalty profile (h = 2):");
    for t in [0.0, 1.0, 2.0, 3.0, 10.0] {
        println!("  Phi({t:>4}) = {:.3}", huber_penalty(t, params)?);
    }

    // The gradient is clipped per coordinate (entrywise) or projected onto
    // the h-ball (norm-ball); either way an outlier's pull is bounded.
    let outlier = DVector::from_vec(vec![30.0, -40.0]);
    let entrywise = LossKind::Entrywise(params);
    let norm_ball = LossKind::NormBall(params);
    println!("\ngradient at a far outlier {:?}:", outlier.as_slice());
    println!("  entrywise: {:?}", loss_grad(&outlier, entrywise)?.as_slice());
    println!("  norm-ball: {:?}", loss_grad(&outlier, norm_ball)?.as_slice());

    // A weighted minimizer shrugs off one wild sample: three 1-D points,
    // one of them at 10, land near the pair at the origin.
    let data = Dataset::new(DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 10.0]));
    let w = WeightVector::uniform(3, 0.0);
    let mu = minimize_weighted_loss(&data, &w, entrywise, 1e-10)?;
    println!("\nminimizer of {{0, 0, 10}} under the entrywise loss: {:.4}", mu[0]);
    Ok(())
}
