//! Degree-4 sum-of-squares certificates and pseudo-expectations.
//!
//! Run with: cargo run --example sos_certificates

use nalgebra::DVector;
use robust_location::sos::{
    certify_f_moments, max_pseudo_expectation, scores_from_pe, MomentPolynomial,
};

fn main() -> robust_location::Result<()> {
    // p(v) = v1^4 over the unit sphere: the SDP relaxation is tight and
    // finds the point mass at e1.
    let e1 = DVector::from_vec(vec![1.0, 0.0]);
    let p = MomentPolynomial::new(2, vec![e1.clone()], vec![1.0])?;
    let res = max_pseudo_expectation(&p)?;
    println!(
        "max Ẽ v1^4 = {:.6} (converged = {}, {} sweeps)",
        res.value, res.converged, res.iterations
    );

    // Scores are the per-vector directional moments under the optimizer.
    let g2 = DVector::from_vec(vec![0.6, 0.8]);
    let taus = scores_from_pe(&res.pe, &[e1, g2]);
    println!("scores under the optimal pE: {taus:.3?}");

    // Certifiably bounded moments: uniform signs have fourth directional
    // moment at most 3 along any direction, and degree-4 SoS proves a bound
    // of 4^4 = 256 in scaled form. A bound below the e1-moment must fail.
    let signs: Vec<DVector<f64>> = (0..256)
        .map(|b| DVector::from_fn(3, |j, _| if (b >> j) & 1 == 1 { 1.0 } else { -1.0 }))
        .collect();
    println!(
        "sign vectors certified at bound 4: {}",
        certify_f_moments(&signs, 2, 4.0)?
    );
    println!(
        "sign vectors certified at bound 0.9: {}",
        certify_f_moments(&signs, 2, 0.9)?
    );
    Ok(())
}
