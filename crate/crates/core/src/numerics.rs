//! Small shared numerical kernels: top eigenpair of a symmetric matrix and
//! the spectral norm of a symmetric difference.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Top eigenpair returned by power iteration.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub value: f64,
    pub vector: DVector<f64>,
    pub converged: bool,
}

const RESTARTS: usize = 3;

/// Eigenpair of largest algebraic eigenvalue, via shifted power iteration with
/// random restarts. Residual ||M v - value v|| <= tol * max(1, ||M||).
pub fn top_eigenpair(m: &DMatrix<f64>, tol: f64) -> Result<EigenResult> {
    let d = m.nrows();
    if d == 0 || m.ncols() != d {
        return Err(Error::InvalidParameter("matrix must be square and nonempty".into()));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("top_eigenpair matrix"));
    }
    // Symmetrize defensively.
    let sym = (m + m.transpose()) * 0.5;
    // Shift so the largest algebraic eigenvalue also has the largest magnitude.
    let shift: f64 = (0..d)
        .map(|i| (0..d).map(|j| sym[(i, j)].abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let scale = shift.max(1.0);
    let shifted = &sym + DMatrix::identity(d, d) * shift;
    let max_iter = 10 * d * ((1.0 / tol).ln().ceil() as usize).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(0x7031_7265);
    let mut best: Option<EigenResult> = None;
    for _ in 0..RESTARTS {
        let mut v = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        if v.norm() == 0.0 {
            v[0] = 1.0;
        }
        v /= v.norm();
        let mut converged = false;
        for _ in 0..max_iter {
            let mut next = &shifted * &v;
            let norm = next.norm();
            if norm == 0.0 {
                // v is in the kernel of the shifted matrix; eigenvalue -shift.
                break;
            }
            next /= norm;
            let delta = (&next - &v).norm().min((&next + &v).norm());
            v = next;
            if delta <= tol / scale.max(1.0) {
                converged = true;
                break;
            }
        }
        let value = v.dot(&(&sym * &v));
        let residual = (&sym * &v - &v * value).norm();
        let ok = converged && residual <= tol * scale;
        let candidate = EigenResult { value, vector: v, converged: ok };
        let better = match &best {
            None => true,
            Some(b) => candidate.value > b.value + tol || (!b.converged && candidate.converged),
        };
        if better {
            best = Some(candidate);
        }
        if best.as_ref().map_or(false, |b| b.converged) {
            break;
        }
    }
    Ok(best.expect("at least one restart"))
}

/// ||A - B||, the largest |eigenvalue| of A - B, via power iteration on the
/// difference and its negation.
pub fn spectral_norm_diff(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<f64> {
    Ok(top_signed_eigenpair(&(a - b), tol)?.0.abs())
}

/// Eigenpair of largest |eigenvalue| for a symmetric (possibly indefinite)
/// matrix. Returns (signed eigenvalue, vector, converged).
pub fn top_signed_eigenpair(m: &DMatrix<f64>, tol: f64) -> Result<(f64, DVector<f64>, bool)> {
    let pos = top_eigenpair(m, tol)?;
    let neg = top_eigenpair(&(-m), tol)?;
    if neg.value > pos.value {
        Ok((-neg.value, neg.vector, neg.converged))
    } else {
        Ok((pos.value, pos.vector, pos.converged))
    }
}
