//! Huber penalties and the two loss families: entrywise (semi-product noise)
//! and norm-ball (elliptical noise), together with the weighted loss and its
//! exact minimizer.

use nalgebra::DVector;

use crate::data::{Dataset, WeightVector};
use crate::error::{Error, Result};

/// Clip width of the Huber penalty, in data units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberParams {
    pub h: f64,
}

impl HuberParams {
    pub fn new(h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidParameter(format!("huber clip h must be positive, got {h}")));
        }
        Ok(HuberParams { h })
    }
}

/// Which loss family is in use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// F(x) = sum_j Phi_h(x_j); gradient components each bounded by h.
    Entrywise(HuberParams),
    /// F(x) = Phi_h(||x||); gradient is the projection of x onto the h-ball.
    NormBall(HuberParams),
}

impl LossKind {
    pub fn clip(&self) -> f64 {
        match self {
            LossKind::Entrywise(p) | LossKind::NormBall(p) => p.h,
        }
    }

    /// Upper bound on the gradient norm in dimension d.
    pub fn grad_norm_bound(&self, d: usize) -> f64 {
        match self {
            LossKind::Entrywise(p) => p.h * (d as f64).sqrt(),
            LossKind::NormBall(p) => p.h,
        }
    }
}

/// Phi_h(t): t^2/2 within the clip, h|t| - h^2/2 beyond.
pub fn huber_penalty(t: f64, params: HuberParams) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::NonFinite("huber_penalty argument"));
    }
    let h = params.h;
    Ok(if t.abs() <= h { 0.5 * t * t } else { h * t.abs() - 0.5 * h * h })
}

/// phi_h(t) = clamp(t, -h, h): odd, 1-Lipschitz, bounded by h.
pub fn huber_deriv(t: f64, params: HuberParams) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::NonFinite("huber_deriv argument"));
    }
    Ok(t.clamp(-params.h, params.h))
}

/// F(residual) for the given loss family.
pub fn loss_value(residual: &DVector<f64>, kind: LossKind) -> Result<f64> {
    match kind {
        LossKind::Entrywise(p) => {
            let mut acc = 0.0;
            for &t in residual.iter() {
                acc += huber_penalty(t, p)?;
            }
            Ok(acc)
        }
        LossKind::NormBall(p) => huber_penalty(residual.norm(), p),
    }
}

/// f(residual) = grad F(residual). 1-Lipschitz for both families.
pub fn loss_grad(residual: &DVector<f64>, kind: LossKind) -> Result<DVector<f64>> {
    if residual.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("loss_grad residual"));
    }
    match kind {
        LossKind::Entrywise(p) => Ok(residual.map(|t| t.clamp(-p.h, p.h))),
        LossKind::NormBall(p) => {
            let norm = residual.norm();
            if norm <= p.h {
                Ok(residual.clone())
            } else {
                Ok(residual * (p.h / norm))
            }
        }
    }
}

/// L^w(mu) = sum_i w_i F(mu - y_i).
pub fn weighted_loss(data: &Dataset, w: &WeightVector, mu: &DVector<f64>, kind: LossKind) -> Result<f64> {
    check_dims(data, w, mu)?;
    let mut acc = 0.0;
    for i in 0..data.n() {
        let wi = w.get(i);
        if wi == 0.0 {
            continue;
        }
        let residual = mu - data.row(i);
        acc += wi * loss_value(&residual, kind)?;
    }
    Ok(acc)
}

/// grad L^w(mu) = sum_i w_i f(mu - y_i).
pub fn weighted_loss_grad(
    data: &Dataset,
    w: &WeightVector,
    mu: &DVector<f64>,
    kind: LossKind,
) -> Result<DVector<f64>> {
    check_dims(data, w, mu)?;
    let mut g = DVector::zeros(data.dim());
    for i in 0..data.n() {
        let wi = w.get(i);
        if wi == 0.0 {
            continue;
        }
        let residual = mu - data.row(i);
        g += loss_grad(&residual, kind)? * wi;
    }
    Ok(g)
}

fn check_dims(data: &Dataset, w: &WeightVector, mu: &DVector<f64>) -> Result<()> {
    if w.n() != data.n() {
        return Err(Error::DimensionMismatch { expected: data.n(), got: w.n() });
    }
    if mu.len() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), got: mu.len() });
    }
    Ok(())
}

/// mu_hat(w) = argmin_mu L^w(mu), to gradient norm <= tol * max(1, sum(w) * h).
///
/// Entrywise decomposes into d independent 1-D convex problems solved by
/// bisection on the monotone derivative. Norm-ball runs gradient descent with
/// step 1/sum(w) (the gradient is sum(w)-Lipschitz) from the coordinate-wise
/// weighted median.
pub fn minimize_weighted_loss(
    data: &Dataset,
    w: &WeightVector,
    kind: LossKind,
    tol: f64,
) -> Result<DVector<f64>> {
    if w.n() != data.n() {
        return Err(Error::DimensionMismatch { expected: data.n(), got: w.n() });
    }
    let w_total = w.total();
    if w_total <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    match kind {
        LossKind::Entrywise(p) => minimize_entrywise(data, w, p, tol, w_total),
        LossKind::NormBall(p) => minimize_norm_ball(data, w, p, tol, w_total),
    }
}

fn minimize_entrywise(
    data: &Dataset,
    w: &WeightVector,
    p: HuberParams,
    tol: f64,
    w_total: f64,
) -> Result<DVector<f64>> {
    let d = data.dim();
    let n = data.n();
    let grad_target = tol * (w_total * p.h).max(1.0);
    // Per-coordinate bracket tolerance so the combined gradient norm meets
    // the target: |g_j| <= w_total * width_j.
    let per_coord = grad_target / ((d as f64).sqrt() * w_total);
    let mut mu = DVector::zeros(d);
    for j in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            if w.get(i) > 0.0 {
                lo = lo.min(data.samples[(i, j)]);
                hi = hi.max(data.samples[(i, j)]);
            }
        }
        let range = hi - lo;
        let target = per_coord.min(tol * range.max(1e-300)).max(4.0 * f64::EPSILON * range);
        let deriv = |m: f64| -> f64 {
            let mut g = 0.0;
            for i in 0..n {
                let wi = w.get(i);
                if wi > 0.0 {
                    g += wi * (m - data.samples[(i, j)]).clamp(-p.h, p.h);
                }
            }
            g
        };
        let mut a = lo;
        let mut b = hi;
        if deriv(a) >= 0.0 {
            mu[j] = a;
            continue;
        }
        if deriv(b) <= 0.0 {
            mu[j] = b;
            continue;
        }
        let mut iter = 0;
        while b - a > target && iter < 200 {
            let m = 0.5 * (a + b);
            if deriv(m) <= 0.0 {
                a = m;
            } else {
                b = m;
            }
            iter += 1;
        }
        mu[j] = 0.5 * (a + b);
    }
    Ok(mu)
}

fn weighted_median_per_coord(data: &Dataset, w: &WeightVector) -> DVector<f64> {
    let d = data.dim();
    let n = data.n();
    let half = 0.5 * w.total();
    let mut mu = DVector::zeros(d);
    let mut idx: Vec<usize> = (0..n).collect();
    for j in 0..d {
        idx.sort_by(|&a, &b| data.samples[(a, j)].partial_cmp(&data.samples[(b, j)]).unwrap());
        let mut acc = 0.0;
        let mut med = data.samples[(idx[n - 1], j)];
        for &i in &idx {
            acc += w.get(i);
            if acc >= half {
                med = data.samples[(i, j)];
                break;
            }
        }
        mu[j] = med;
    }
    mu
}

fn minimize_norm_ball(
    data: &Dataset,
    w: &WeightVector,
    p: HuberParams,
    tol: f64,
    w_total: f64,
) -> Result<DVector<f64>> {
    let grad_target = tol * (w_total * p.h).max(1.0);
    let kind = LossKind::NormBall(p);
    let mut mu = weighted_median_per_coord(data, w);
    let step = 1.0 / w_total;
    let max_iter = 10 * ((p.h * p.h / tol).ceil() as usize).max(1);
    let mut best = mu.clone();
    let mut best_norm = f64::INFINITY;
    for _ in 0..max_iter {
        let g = weighted_loss_grad(data, w, &mu, kind)?;
        let gn = g.norm();
        if gn < best_norm {
            best_norm = gn;
            best.copy_from(&mu);
        }
        if gn <= grad_target {
            return Ok(mu);
        }
        mu -= g * step;
    }
    // Iteration cap reached; smooth convex descent guarantees the best
    // iterate is O(1/T)-suboptimal.
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn h(v: f64) -> HuberParams {
        HuberParams::new(v).unwrap()
    }

    fn dataset_1d(ys: &[f64]) -> Dataset {
        Dataset::new(DMatrix::from_column_slice(ys.len(), 1, ys))
    }

    #[test]
    fn penalty_branches() {
        assert_eq!(huber_penalty(0.5, h(1.0)).unwrap(), 0.125);
        assert_eq!(huber_penalty(2.0, h(1.0)).unwrap(), 1.5);
        // continuity at the knee: both branches give 0.5
        assert_eq!(huber_penalty(1.0, h(1.0)).unwrap(), 0.5);
        assert!((huber_penalty(1.0 + 1e-12, h(1.0)).unwrap() - 0.5).abs() < 1e-9);
        assert!(huber_penalty(f64::NAN, h(1.0)).is_err());
    }

    #[test]
    fn deriv_branches() {
        assert_eq!(huber_deriv(0.3, h(1.0)).unwrap(), 0.3);
        assert_eq!(huber_deriv(5.0, h(1.0)).unwrap(), 1.0);
        assert_eq!(huber_deriv(-5.0, h(1.0)).unwrap(), -1.0);
        assert!(huber_deriv(f64::INFINITY, h(1.0)).is_err());
    }

    #[test]
    fn grad_examples() {
        let g = loss_grad(&DVector::from_vec(vec![3.0, 4.0]), LossKind::NormBall(h(2.0))).unwrap();
        assert!((g[0] - 1.2).abs() < 1e-12);
        assert!((g[1] - 1.6).abs() < 1e-12);

        let g = loss_grad(&DVector::from_vec(vec![0.5, -3.0]), LossKind::Entrywise(h(1.0))).unwrap();
        assert_eq!(g[0], 0.5);
        assert_eq!(g[1], -1.0);

        for kind in [LossKind::Entrywise(h(1.0)), LossKind::NormBall(h(1.0))] {
            let g = loss_grad(&DVector::zeros(2), kind).unwrap();
            assert_eq!(g.norm(), 0.0);
        }
    }

    #[test]
    fn weighted_loss_examples() {
        let ds = Dataset::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]));
        let w = WeightVector::from_raw(vec![1.0], 1.0).unwrap();
        let v = weighted_loss(&ds, &w, &DVector::from_vec(vec![1.0, 1.0]), LossKind::Entrywise(h(1.0))).unwrap();
        assert_eq!(v, 0.0);

        let ds = dataset_1d(&[0.0, 2.0]);
        let w = WeightVector::uniform(2, 0.0);
        let v = weighted_loss(&ds, &w, &DVector::from_vec(vec![1.0]), LossKind::Entrywise(h(1.0))).unwrap();
        assert!((v - 0.5).abs() < 1e-15);

        let ds = Dataset::new(DMatrix::from_row_slice(1, 2, &[3.0, 4.0]));
        let w = WeightVector::from_raw(vec![1.0], 1.0).unwrap();
        let v = weighted_loss(&ds, &w, &DVector::zeros(2), LossKind::NormBall(h(2.0))).unwrap();
        assert!((v - 8.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_loss_dim_mismatch() {
        let ds = dataset_1d(&[0.0, 2.0]);
        let w = WeightVector::uniform(3, 0.0);
        assert!(weighted_loss(&ds, &w, &DVector::zeros(1), LossKind::Entrywise(h(1.0))).is_err());
        let w = WeightVector::uniform(2, 0.0);
        assert!(weighted_loss(&ds, &w, &DVector::zeros(2), LossKind::Entrywise(h(1.0))).is_err());
    }

    #[test]
    fn minimize_symmetric_three_points() {
        let ds = dataset_1d(&[-1.0, 0.0, 1.0]);
        let w = WeightVector::uniform(3, 0.0);
        let mu = minimize_weighted_loss(&ds, &w, LossKind::Entrywise(h(1.0)), 1e-10).unwrap();
        assert!(mu[0].abs() < 1e-8);
    }

    #[test]
    fn minimize_outlier_clipped() {
        // y in {0, 0, 10}: derived oracle below confirms the analytic value 0.5.
        let ds = dataset_1d(&[0.0, 0.0, 10.0]);
        let w = WeightVector::uniform(3, 0.0);
        let kind = LossKind::Entrywise(h(1.0));
        let mu = minimize_weighted_loss(&ds, &w, kind, 1e-10).unwrap();

        // Independent oracle: dense 1-D grid scan of the loss.
        let mut best = (f64::INFINITY, 0.0);
        let mut t = -1.0;
        while t <= 2.0 {
            let v = weighted_loss(&ds, &w, &DVector::from_vec(vec![t]), kind).unwrap();
            if v < best.0 {
                best = (v, t);
            }
            t += 1e-4;
        }
        assert!((best.1 - 0.5).abs() < 1e-3, "grid oracle found {}", best.1);
        assert!((mu[0] - 0.5).abs() < 1e-6, "minimizer {}", mu[0]);
    }

    #[test]
    fn minimize_single_point_norm_ball() {
        let ds = Dataset::new(DMatrix::from_row_slice(1, 2, &[3.0, -2.0]));
        let w = WeightVector::from_raw(vec![1.0], 1.0).unwrap();
        let mu = minimize_weighted_loss(&ds, &w, LossKind::NormBall(h(5.0)), 1e-10).unwrap();
        assert!((mu - DVector::from_vec(vec![3.0, -2.0])).norm() < 1e-7);
    }

    #[test]
    fn minimize_rejects_zero_weights() {
        let ds = dataset_1d(&[0.0, 1.0]);
        let w = WeightVector::from_raw(vec![0.0, 0.0], 1.0).unwrap();
        assert!(matches!(
            minimize_weighted_loss(&ds, &w, LossKind::Entrywise(h(1.0)), 1e-8),
            Err(Error::DegenerateWeights)
        ));
    }
}
