//! Seeded samplers for semi-product and elliptical noise, corruption
//! adversaries, the pairing trick, and the data-driven parameter estimators.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Normal, Pareto, StandardNormal, StudentT};

use crate::data::{Dataset, Truth};
use crate::error::{Error, Result};
use crate::losses::{huber_deriv, HuberParams};
use crate::numerics::top_eigenpair;

/// Per-coordinate magnitude generator for semi-product noise.
#[derive(Debug, Clone)]
pub enum MagnitudeLaw {
    HalfGaussian { scale: f64 },
    HalfCauchy { scale: f64 },
    HalfStudentT { nu: f64, scale: f64 },
    PointMass { c: f64 },
    /// One magnitude draw shared by all coordinates of a sample, producing
    /// correlated magnitudes (signs stay independent).
    SharedRadial(Box<MagnitudeLaw>),
}

impl MagnitudeLaw {
    fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        match self {
            MagnitudeLaw::HalfGaussian { scale } => positive(*scale, "half-gaussian scale"),
            MagnitudeLaw::HalfCauchy { scale } => positive(*scale, "half-cauchy scale"),
            MagnitudeLaw::HalfStudentT { nu, scale } => {
                positive(*nu, "student-t nu")?;
                positive(*scale, "student-t scale")
            }
            MagnitudeLaw::PointMass { c } => {
                if c.is_finite() && *c >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("point mass must be >= 0, got {c}")))
                }
            }
            MagnitudeLaw::SharedRadial(inner) => match **inner {
                MagnitudeLaw::SharedRadial(_) => {
                    Err(Error::InvalidParameter("shared-radial cannot nest".into()))
                }
                _ => inner.validate(),
            },
        }
    }

    fn draw_scalar(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            MagnitudeLaw::HalfGaussian { scale } => {
                let z: f64 = rng.sample(StandardNormal);
                (z * scale).abs()
            }
            MagnitudeLaw::HalfCauchy { scale } => {
                // |Cauchy(0, scale)| via the tangent of a uniform angle.
                let u: f64 = rng.gen_range(-0.5..0.5);
                (scale * (std::f64::consts::PI * u).tan()).abs()
            }
            MagnitudeLaw::HalfStudentT { nu, scale } => {
                let t = StudentT::new(*nu).expect("validated nu");
                (t.sample(rng) * scale).abs()
            }
            MagnitudeLaw::PointMass { c } => *c,
            MagnitudeLaw::SharedRadial(inner) => inner.draw_scalar(rng),
        }
    }
}

/// (alpha, rho)-semi-product noise: coordinate signs are i.i.d. Rademacher
/// independent of the magnitude vector, and each |eta_j| has mass >= alpha
/// within rho of zero.
#[derive(Debug, Clone)]
pub struct SemiProductSpec {
    pub d: usize,
    pub magnitude_law: MagnitudeLaw,
    pub alpha: f64,
    pub rho: f64,
}

impl SemiProductSpec {
    pub fn new(d: usize, magnitude_law: MagnitudeLaw, alpha: f64, rho: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must be in (0,1], got {alpha}")));
        }
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
        }
        magnitude_law.validate()?;
        Ok(SemiProductSpec { d, magnitude_law, alpha, rho })
    }
}

/// Radial law of an elliptical distribution, eta = R Sigma^{1/2} U.
#[derive(Debug, Clone)]
pub enum RadialLaw {
    /// chi(d): the Gaussian case N(0, Sigma).
    Chi,
    /// Heavy-tailed Pareto with the given shape, scale 1.
    Pareto { shape: f64 },
    PointMass { c: f64 },
}

/// Elliptical noise with scatter matrix Sigma (rescaled to Tr(Sigma) = d).
#[derive(Debug, Clone)]
pub struct EllipticalSpec {
    pub d: usize,
    pub sigma: DMatrix<f64>,
    pub radial_law: RadialLaw,
    sqrt_sigma: DMatrix<f64>,
}

impl EllipticalSpec {
    pub fn new(d: usize, sigma: DMatrix<f64>, radial_law: RadialLaw) -> Result<Self> {
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: sigma.nrows() });
        }
        match radial_law {
            RadialLaw::Pareto { shape } if !(shape.is_finite() && shape > 0.0) => {
                return Err(Error::InvalidParameter("pareto shape must be positive".into()));
            }
            RadialLaw::PointMass { c } if !(c.is_finite() && c > 0.0) => {
                return Err(Error::InvalidParameter("radial point mass must be positive".into()));
            }
            _ => {}
        }
        let sym = (&sigma + sigma.transpose()) * 0.5;
        let trace = sym.trace();
        if !(trace.is_finite() && trace > 0.0) {
            return Err(Error::NotPsd);
        }
        let scaled = sym * (d as f64 / trace);
        // PSD validation: Cholesky must succeed after at most 1e-10 jitter.
        let jittered = &scaled + DMatrix::identity(d, d) * 1e-10;
        if jittered.clone().cholesky().is_none() {
            return Err(Error::NotPsd);
        }
        // Square root via the eigendecomposition so rank-deficient scatter
        // stays exactly rank-deficient.
        let eig = nalgebra::SymmetricEigen::new(scaled.clone());
        let mut vals = eig.eigenvalues.clone();
        for v in vals.iter_mut() {
            *v = v.max(0.0).sqrt();
        }
        let sqrt_sigma = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        Ok(EllipticalSpec { d, sigma: scaled, radial_law, sqrt_sigma })
    }

    pub fn identity(d: usize, radial_law: RadialLaw) -> Self {
        Self::new(d, DMatrix::identity(d, d), radial_law).expect("identity is PSD")
    }

    fn draw_radius(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.radial_law {
            RadialLaw::Chi => {
                let chi2 = ChiSquared::new(self.d as f64).expect("d >= 1");
                chi2.sample(rng).sqrt()
            }
            RadialLaw::Pareto { shape } => {
                Pareto::new(1.0, shape).expect("validated shape").sample(rng)
            }
            RadialLaw::PointMass { c } => c,
        }
    }
}

/// Constructive corruption adversaries.
#[derive(Debug, Clone)]
pub enum Adversary {
    /// Displace each chosen row by `distance` along `direction / ||direction||`.
    ClusterShift { direction: DVector<f64>, distance: f64 },
    /// Negate coordinate j of the chosen rows.
    SignFlipCoordinate { j: usize },
    /// Replace chosen rows with a cluster at `distance` along the top
    /// eigenvector of the clean clipped covariance (the hardest concrete
    /// attack implemented here).
    AlignedTopEigvec { distance: f64 },
    /// Replace chosen rows with a fixed point.
    ReplaceWith { point: DVector<f64> },
}

#[derive(Debug, Clone)]
pub struct CorruptionPlan {
    pub eps: f64,
    pub adversary: Adversary,
    pub seed: u64,
}

impl CorruptionPlan {
    pub fn new(eps: f64, adversary: Adversary, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::InvalidParameter(format!("eps must be in [0,1), got {eps}")));
        }
        Ok(CorruptionPlan { eps, adversary, seed })
    }
}

fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draw n samples mu* + sign . magnitude with the semi-product independence
/// structure. Deterministic for a fixed seed.
pub fn sample_semi_product(
    spec: &SemiProductSpec,
    mu_star: &DVector<f64>,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    if mu_star.len() != spec.d {
        return Err(Error::DimensionMismatch { expected: spec.d, got: mu_star.len() });
    }
    let mut rng = seeded_rng(seed);
    let d = spec.d;
    let mut samples = DMatrix::zeros(n, d);
    let shared = matches!(spec.magnitude_law, MagnitudeLaw::SharedRadial(_));
    for i in 0..n {
        let shared_mag = if shared { spec.magnitude_law.draw_scalar(&mut rng) } else { 0.0 };
        for j in 0..d {
            let mag = if shared { shared_mag } else { spec.magnitude_law.draw_scalar(&mut rng) };
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            samples[(i, j)] = mu_star[j] + sign * mag;
        }
    }
    Ok(Dataset::with_truth(
        samples,
        Truth { mu_star: mu_star.clone(), corrupted_mask: vec![false; n] },
    ))
}

/// Draw n samples mu* + R Sigma^{1/2} U with U uniform on the unit sphere and
/// R independent of U. Deterministic per seed.
pub fn sample_elliptical(
    spec: &EllipticalSpec,
    mu_star: &DVector<f64>,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    if mu_star.len() != spec.d {
        return Err(Error::DimensionMismatch { expected: spec.d, got: mu_star.len() });
    }
    let mut rng = seeded_rng(seed);
    let d = spec.d;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut samples = DMatrix::zeros(n, d);
    for i in 0..n {
        let mut u = DVector::from_fn(d, |_, _| normal.sample(&mut rng));
        let norm = u.norm();
        if norm == 0.0 {
            u[0] = 1.0;
        } else {
            u /= norm;
        }
        let r = spec.draw_radius(&mut rng);
        let eta = &spec.sqrt_sigma * u * r;
        for j in 0..d {
            samples[(i, j)] = mu_star[j] + eta[j];
        }
    }
    Ok(Dataset::with_truth(
        samples,
        Truth { mu_star: mu_star.clone(), corrupted_mask: vec![false; n] },
    ))
}

fn coordinate_median(samples: &DMatrix<f64>) -> DVector<f64> {
    let (n, d) = (samples.nrows(), samples.ncols());
    let mut med = DVector::zeros(d);
    let mut col: Vec<f64> = Vec::with_capacity(n);
    for j in 0..d {
        col.clear();
        col.extend((0..n).map(|i| samples[(i, j)]));
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        med[j] = if n % 2 == 1 { col[n / 2] } else { 0.5 * (col[n / 2 - 1] + col[n / 2]) };
    }
    med
}

/// Direction of largest variance of the clipped residuals about the
/// coordinate-wise median. Used by the aligned adversary.
fn clipped_top_direction(samples: &DMatrix<f64>) -> DVector<f64> {
    let (n, d) = (samples.nrows(), samples.ncols());
    let center = coordinate_median(samples);
    // Clip at twice the median absolute residual so far tails cannot dominate.
    let mut abs: Vec<f64> = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            abs.push((samples[(i, j)] - center[j]).abs());
        }
    }
    abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med_abs = abs[abs.len() / 2];
    let clip = if med_abs > 0.0 { 2.0 * med_abs } else { 1.0 };
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        let g = DVector::from_fn(d, |j, _| (samples[(i, j)] - center[j]).clamp(-clip, clip));
        cov.ger(1.0 / n as f64, &g, &g, 1.0);
    }
    let cov = (&cov + cov.transpose()) * 0.5;
    top_eigenpair(&cov, 1e-8).map(|r| r.vector).unwrap_or_else(|_| {
        let mut v = DVector::zeros(d);
        v[0] = 1.0;
        v
    })
}

/// Replace exactly floor(eps * n) rows according to the adversary; the mask is
/// set on the result and unaltered rows stay bit-identical.
pub fn corrupt(data: &Dataset, plan: &CorruptionPlan) -> Result<Dataset> {
    let n = data.n();
    let d = data.dim();
    let m = (plan.eps * n as f64).floor() as usize;
    let mut out = data.clone();
    let mut mask = vec![false; n];
    if m > 0 {
        let mut rng = seeded_rng(plan.seed ^ 0xadbe_ef01);
        let chosen = sample_indices(&mut rng, n, m);
        let aligned_dir = match &plan.adversary {
            Adversary::AlignedTopEigvec { .. } => Some(clipped_top_direction(&data.samples)),
            _ => None,
        };
        let center = match &plan.adversary {
            Adversary::AlignedTopEigvec { .. } => Some(coordinate_median(&data.samples)),
            _ => None,
        };
        for idx in chosen.iter() {
            mask[idx] = true;
            match &plan.adversary {
                Adversary::ClusterShift { direction, distance } => {
                    let norm = direction.norm();
                    if norm == 0.0 {
                        return Err(Error::InvalidParameter("cluster direction must be nonzero".into()));
                    }
                    for j in 0..d {
                        out.samples[(idx, j)] += distance * direction[j] / norm;
                    }
                }
                Adversary::SignFlipCoordinate { j } => {
                    if *j >= d {
                        return Err(Error::InvalidParameter(format!("coordinate {j} out of range")));
                    }
                    out.samples[(idx, *j)] = -out.samples[(idx, *j)];
                }
                Adversary::AlignedTopEigvec { distance } => {
                    let v = aligned_dir.as_ref().unwrap();
                    let c = center.as_ref().unwrap();
                    for j in 0..d {
                        out.samples[(idx, j)] = c[j] + distance * v[j];
                    }
                }
                Adversary::ReplaceWith { point } => {
                    if point.len() != d {
                        return Err(Error::DimensionMismatch { expected: d, got: point.len() });
                    }
                    for j in 0..d {
                        out.samples[(idx, j)] = point[j];
                    }
                }
            }
        }
    }
    let mu_star = data
        .truth
        .as_ref()
        .map(|t| t.mu_star.clone())
        .unwrap_or_else(|| DVector::zeros(d));
    out.truth = Some(Truth { mu_star, corrupted_mask: mask });
    Ok(out)
}

/// Split samples into pairs (i, i + n/2): the noise half holds differences
/// (location-free), the location half holds sums (carrying 2 mu*). A pair is
/// marked corrupted if either member is.
pub fn pair_transform(data: &Dataset) -> Result<(Dataset, Dataset)> {
    let n = data.n();
    if n < 4 {
        return Err(Error::TooFewSamples { need: 4, got: n });
    }
    let m = n / 2;
    let d = data.dim();
    let mut noise = DMatrix::zeros(m, d);
    let mut location = DMatrix::zeros(m, d);
    let mut mask = vec![false; m];
    for i in 0..m {
        for j in 0..d {
            let a = data.samples[(i, j)];
            let b = data.samples[(i + m, j)];
            noise[(i, j)] = a - b;
            location[(i, j)] = a + b;
        }
        if let Some(t) = &data.truth {
            mask[i] = t.corrupted_mask[i] || t.corrupted_mask[i + m];
        }
    }
    let (noise_truth, loc_truth) = match &data.truth {
        Some(t) => (
            Truth { mu_star: DVector::zeros(d), corrupted_mask: mask.clone() },
            Truth { mu_star: &t.mu_star * 2.0, corrupted_mask: mask },
        ),
        None => (
            Truth { mu_star: DVector::zeros(d), corrupted_mask: mask.clone() },
            Truth { mu_star: DVector::zeros(d), corrupted_mask: mask },
        ),
    };
    Ok((
        Dataset::with_truth(noise, noise_truth),
        Dataset::with_truth(location, loc_truth),
    ))
}

/// The maximal value b among the smallest alpha^2/2 fraction of row norms of
/// the noise half. The downstream norm-ball clip is h = 20 b.
pub fn estimate_rho_elliptical(noise_half: &Dataset, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must be in (0,1], got {alpha}")));
    }
    let m = noise_half.n();
    if m == 0 {
        return Err(Error::EmptyInput("noise half"));
    }
    let mut norms: Vec<f64> = (0..m).map(|i| noise_half.row(i).norm()).collect();
    norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let frac = alpha * alpha / 2.0;
    let k = ((frac * m as f64).ceil() as usize).clamp(1, m);
    Ok(norms[k - 1])
}

/// Per-coordinate trimmed mean of huber_deriv(eta_j, h)^2: a 1-D robust
/// estimate of the transformed second moment. Entries lie in [0, h^2].
pub fn estimate_sigma_f_diag(noise_half: &Dataset, h: f64, trim: f64) -> Result<DVector<f64>> {
    if !(0.0..0.25).contains(&trim) {
        return Err(Error::InvalidParameter(format!("trim must be in [0, 0.25), got {trim}")));
    }
    let params = HuberParams::new(h)?;
    let m = noise_half.n();
    if m == 0 {
        return Err(Error::EmptyInput("noise half"));
    }
    let d = noise_half.dim();
    let drop = (trim * m as f64).floor() as usize;
    let mut out = DVector::zeros(d);
    let mut vals: Vec<f64> = Vec::with_capacity(m);
    for j in 0..d {
        vals.clear();
        for i in 0..m {
            let phi = huber_deriv(noise_half.samples[(i, j)], params)?;
            vals.push(phi * phi);
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let kept = &vals[drop..m - drop];
        out[j] = kept.iter().sum::<f64>() / kept.len() as f64;
    }
    Ok(out)
}
