//! Batch experiment driver: generate, corrupt, estimate, report. Configs are
//! plain-text `key = value` files where repeated keys build grids (eps,
//! estimator); each (estimator, eps, seed) cell runs independently and the
//! rows land in a stable CSV.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::distributions::{
    corrupt, sample_elliptical, sample_semi_product, Adversary, CorruptionPlan, EllipticalSpec,
    MagnitudeLaw, RadialLaw, SemiProductSpec,
};
use crate::error::{Error, Result};
use crate::filters::{
    filter_higher_moment, filter_second_moment, near_optimal_pipeline,
    Estimate, FilterConfig,
};
use crate::losses::{HuberParams, LossKind};

pub const CSV_HEADER: &str = "estimator,eps,seed,error,iterations,runtime_ms,converged,guard_value";

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorKind {
    Mean,
    CoordMedian,
    Filter2,
    FilterK(usize),
    NearOptimal,
}

impl EstimatorKind {
    pub fn parse(name: &str) -> Result<Self> {
        let name = name.trim();
        match name {
            "mean" => Ok(EstimatorKind::Mean),
            "coord-median" => Ok(EstimatorKind::CoordMedian),
            "filter2" => Ok(EstimatorKind::Filter2),
            "near-opt" => Ok(EstimatorKind::NearOptimal),
            _ => {
                if let Some(rest) = name.strip_prefix("filterk(").and_then(|r| r.strip_suffix(')'))
                {
                    let k: usize = rest
                        .trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad moment order in {name:?}")))?;
                    if k == 0 {
                        return Err(Error::Config("filterk order must be >= 1".into()));
                    }
                    Ok(EstimatorKind::FilterK(k))
                } else {
                    Err(Error::Config(format!("unknown estimator {name:?}")))
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            EstimatorKind::Mean => "mean".into(),
            EstimatorKind::CoordMedian => "coord-median".into(),
            EstimatorKind::Filter2 => "filter2".into(),
            EstimatorKind::FilterK(k) => format!("filterk({k})"),
            EstimatorKind::NearOptimal => "near-opt".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum DistributionSpec {
    SemiProduct { magnitude: MagnitudeLaw },
    Elliptical { radial: RadialLaw, condition: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuSpec {
    Zero,
    RandomUnit { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdversarySpec {
    None,
    ClusterShift { distance: f64 },
    SignFlipCoordinate { j: usize },
    AlignedTopEigvec { distance: f64 },
}

/// How adversary distances depend on eps across a sweep. A worst-case
/// adversary places outliers as far as the filter's score threshold allows,
/// which grows like 1/sqrt(eps).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistanceScale {
    Fixed,
    InvSqrtEps,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub distribution: DistributionSpec,
    pub mu: MuSpec,
    pub n: usize,
    pub d: usize,
    pub alpha: f64,
    pub rho: f64,
    pub eps_grid: Vec<f64>,
    pub adversary: AdversarySpec,
    pub distance_scale: DistanceScale,
    pub estimators: Vec<EstimatorKind>,
    pub loss: LossShape,
    /// Transformed-moment bound; `None` selects the default calibration.
    pub sigma: Option<f64>,
    /// Huber clip; `None` selects the default for the loss shape.
    pub h: Option<f64>,
    pub threshold_constant: f64,
    pub seeds: usize,
    pub base_seed: u64,
    pub out: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossShape {
    Entrywise,
    NormBall,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )));
            };
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        Self::from_pairs(&pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let first = |key: &str| -> Option<&str> {
            pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
        };
        let all = |key: &str| -> Vec<&str> {
            pairs.iter().filter(|(k, _)| k == key).map(|(_, v)| v.as_str()).collect()
        };
        let parse_f64 = |key: &str, v: &str| -> Result<f64> {
            v.parse().map_err(|_| Error::Config(format!("{key}: bad number {v:?}")))
        };
        let parse_usize = |key: &str, v: &str| -> Result<usize> {
            v.parse().map_err(|_| Error::Config(format!("{key}: bad count {v:?}")))
        };

        let scale = first("scale").map(|v| parse_f64("scale", v)).transpose()?.unwrap_or(1.0);
        let distribution = match first("distribution").unwrap_or("semi-product") {
            "semi-product" => {
                let magnitude = match first("magnitude").unwrap_or("half-gaussian") {
                    "half-gaussian" => MagnitudeLaw::HalfGaussian { scale },
                    "half-cauchy" => MagnitudeLaw::HalfCauchy { scale },
                    "half-student-t" => {
                        let nu = first("nu")
                            .map(|v| parse_f64("nu", v))
                            .transpose()?
                            .ok_or_else(|| Error::Config("half-student-t needs nu".into()))?;
                        MagnitudeLaw::HalfStudentT { nu, scale }
                    }
                    "point-mass" => MagnitudeLaw::PointMass { c: scale },
                    other => {
                        return Err(Error::Config(format!("unknown magnitude {other:?}")));
                    }
                };
                DistributionSpec::SemiProduct { magnitude }
            }
            "elliptical" => {
                let radial = match first("radial").unwrap_or("chi") {
                    "chi" => RadialLaw::Chi,
                    "pareto" => {
                        let shape = first("pareto_shape")
                            .map(|v| parse_f64("pareto_shape", v))
                            .transpose()?
                            .unwrap_or(2.5);
                        RadialLaw::Pareto { shape }
                    }
                    "point-mass" => RadialLaw::PointMass { c: scale },
                    other => return Err(Error::Config(format!("unknown radial law {other:?}"))),
                };
                let condition = first("sigma_cond")
                    .map(|v| parse_f64("sigma_cond", v))
                    .transpose()?
                    .unwrap_or(1.0);
                if !(condition >= 1.0) {
                    return Err(Error::Config(format!(
                        "sigma_cond must be >= 1, got {condition}"
                    )));
                }
                DistributionSpec::Elliptical { radial, condition }
            }
            other => return Err(Error::Config(format!("unknown distribution {other:?}"))),
        };

        let mu = match first("mu").unwrap_or("zero") {
            "zero" => MuSpec::Zero,
            "random-unit" => MuSpec::RandomUnit {
                scale: first("mu_scale")
                    .map(|v| parse_f64("mu_scale", v))
                    .transpose()?
                    .unwrap_or(1.0),
            },
            other => return Err(Error::Config(format!("unknown mu spec {other:?}"))),
        };

        let n = parse_usize("n", first("n").ok_or_else(|| Error::Config("n is required".into()))?)?;
        let d = parse_usize("d", first("d").ok_or_else(|| Error::Config("d is required".into()))?)?;
        let alpha = first("alpha").map(|v| parse_f64("alpha", v)).transpose()?.unwrap_or(0.5);
        let rho = first("rho").map(|v| parse_f64("rho", v)).transpose()?.unwrap_or(1.0);

        let mut eps_grid = Vec::new();
        for v in all("eps") {
            let eps = parse_f64("eps", v)?;
            if !(0.0..=0.3).contains(&eps) {
                return Err(Error::Config(format!("eps must be in [0, 0.3], got {eps}")));
            }
            eps_grid.push(eps);
        }
        if eps_grid.is_empty() {
            eps_grid.push(0.0);
        }

        let distance = first("distance").map(|v| parse_f64("distance", v)).transpose()?;
        let adversary = match first("adversary").unwrap_or("none") {
            "none" => AdversarySpec::None,
            "cluster-shift" => AdversarySpec::ClusterShift {
                distance: distance.ok_or_else(|| Error::Config("cluster-shift needs distance".into()))?,
            },
            "aligned" => AdversarySpec::AlignedTopEigvec {
                distance: distance.ok_or_else(|| Error::Config("aligned needs distance".into()))?,
            },
            "sign-flip" => AdversarySpec::SignFlipCoordinate {
                j: first("coordinate")
                    .map(|v| parse_usize("coordinate", v))
                    .transpose()?
                    .unwrap_or(0),
            },
            other => return Err(Error::Config(format!("unknown adversary {other:?}"))),
        };
        let distance_scale = match first("distance_scale").unwrap_or("fixed") {
            "fixed" => DistanceScale::Fixed,
            "inv-sqrt-eps" => DistanceScale::InvSqrtEps,
            other => return Err(Error::Config(format!("unknown distance_scale {other:?}"))),
        };

        let mut estimators = Vec::new();
        for v in all("estimator") {
            estimators.push(EstimatorKind::parse(v)?);
        }
        if estimators.is_empty() {
            return Err(Error::Config("at least one estimator is required".into()));
        }

        let loss = match first("loss").unwrap_or("entrywise") {
            "entrywise" => LossShape::Entrywise,
            "norm-ball" => LossShape::NormBall,
            other => return Err(Error::Config(format!("unknown loss {other:?}"))),
        };
        let parse_opt = |key: &str| -> Result<Option<f64>> {
            match first(key) {
                None => Ok(None),
                Some("auto") => Ok(None),
                Some(v) => Ok(Some(parse_f64(key, v)?)),
            }
        };
        let sigma = parse_opt("sigma")?;
        let h = parse_opt("h")?;
        let threshold_constant = first("threshold_constant")
            .map(|v| parse_f64("threshold_constant", v))
            .transpose()?
            .unwrap_or(10.0);
        let seeds = first("seeds")
            .map(|v| parse_usize("seeds", v))
            .transpose()?
            .unwrap_or(1);
        if seeds == 0 {
            return Err(Error::Config("seeds must be >= 1".into()));
        }
        let base_seed = first("base_seed")
            .map(|v| v.parse().map_err(|_| Error::Config(format!("bad base_seed {v:?}"))))
            .transpose()?
            .unwrap_or(0);
        let out = first("out").map(str::to_string);

        Ok(ExperimentConfig {
            distribution,
            mu,
            n,
            d,
            alpha,
            rho,
            eps_grid,
            adversary,
            distance_scale,
            estimators,
            loss,
            sigma,
            h,
            threshold_constant,
            seeds,
            base_seed,
            out,
        })
    }

    pub fn huber_clip(&self) -> f64 {
        match (self.h, self.loss) {
            (Some(h), _) => h,
            (None, LossShape::Entrywise) => 2.0 * self.rho,
            (None, LossShape::NormBall) => 20.0 * self.rho * (self.d as f64).sqrt(),
        }
    }

    fn loss_kind(&self) -> Result<LossKind> {
        let params = HuberParams::new(self.huber_clip())?;
        Ok(match self.loss {
            LossShape::Entrywise => LossKind::Entrywise(params),
            LossShape::NormBall => LossKind::NormBall(params),
        })
    }

    pub fn sigma_for(&self, k: usize) -> f64 {
        match self.sigma {
            Some(s) => s,
            None => match &self.distribution {
                DistributionSpec::SemiProduct { .. } => 2.0 * self.rho,
                DistributionSpec::Elliptical { condition, .. } => {
                    // largest scatter eigenvalue under the Tr = d normalization
                    let d = self.d as f64;
                    let lambda_max = condition * d / (condition + d - 1.0);
                    2.0 * self.rho * (k as f64 * lambda_max).sqrt()
                }
            },
        }
    }

    /// Deterministic per-cell seed.
    pub fn seed_for(&self, eps_index: usize, rep: usize) -> u64 {
        self.base_seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(eps_index as u64 * 1_000_003)
            .wrapping_add(rep as u64)
    }
}

#[derive(Debug, Clone)]
pub struct ReportRow {
    pub estimator: String,
    pub eps: f64,
    pub seed: u64,
    pub error: f64,
    pub iterations: usize,
    pub runtime_ms: f64,
    pub converged: bool,
    pub guard_value: f64,
}

/// Diagonal scatter with the prescribed condition number, normalized later by
/// the sampler so its trace equals d.
fn conditioned_scatter(d: usize, condition: f64) -> DMatrix<f64> {
    let mut m = DMatrix::identity(d, d);
    m[(0, 0)] = condition;
    m
}

/// Sample one experiment cell: clean draw plus the configured corruption.
pub fn generate_dataset(cfg: &ExperimentConfig, eps: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d75_7374_6172);
    let mu_star = match cfg.mu {
        MuSpec::Zero => DVector::zeros(cfg.d),
        MuSpec::RandomUnit { scale } => {
            let mut v = DVector::from_fn(cfg.d, |_, _| rng.gen_range(-1.0..1.0));
            while v.norm() < 1e-6 {
                v = DVector::from_fn(cfg.d, |_, _| rng.gen_range(-1.0..1.0));
            }
            v.normalize() * scale
        }
    };
    let clean = match &cfg.distribution {
        DistributionSpec::SemiProduct { magnitude } => {
            let spec = SemiProductSpec::new(cfg.d, magnitude.clone(), cfg.alpha, cfg.rho)?;
            sample_semi_product(&spec, &mu_star, cfg.n, seed)?
        }
        DistributionSpec::Elliptical { radial, condition } => {
            let spec =
                EllipticalSpec::new(cfg.d, conditioned_scatter(cfg.d, *condition), radial.clone())?;
            sample_elliptical(&spec, &mu_star, cfg.n, seed)?
        }
    };
    if eps == 0.0 {
        return Ok(clean);
    }
    let distance_factor = match cfg.distance_scale {
        DistanceScale::Fixed => 1.0,
        DistanceScale::InvSqrtEps => 1.0 / eps.sqrt(),
    };
    let adversary = match cfg.adversary {
        AdversarySpec::None => return Ok(clean),
        AdversarySpec::ClusterShift { distance } => {
            let mut dir = DVector::from_fn(cfg.d, |_, _| rng.gen_range(-1.0..1.0));
            while dir.norm() < 1e-6 {
                dir = DVector::from_fn(cfg.d, |_, _| rng.gen_range(-1.0..1.0));
            }
            Adversary::ClusterShift {
                direction: dir.normalize(),
                distance: distance * distance_factor,
            }
        }
        AdversarySpec::SignFlipCoordinate { j } => Adversary::SignFlipCoordinate { j },
        AdversarySpec::AlignedTopEigvec { distance } => {
            Adversary::AlignedTopEigvec { distance: distance * distance_factor }
        }
    };
    let plan = CorruptionPlan::new(eps, adversary, seed)?;
    corrupt(&clean, &plan)
}

fn column_mean(data: &Dataset) -> DVector<f64> {
    let n = data.n() as f64;
    let mut out = DVector::zeros(data.dim());
    for i in 0..data.n() {
        out += data.row(i);
    }
    out / n
}

fn column_median(data: &Dataset) -> DVector<f64> {
    let mut out = DVector::zeros(data.dim());
    let mut col: Vec<f64> = Vec::with_capacity(data.n());
    for j in 0..data.dim() {
        col.clear();
        col.extend((0..data.n()).map(|i| data.samples[(i, j)]));
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = col.len();
        out[j] = if m % 2 == 1 { col[m / 2] } else { 0.5 * (col[m / 2 - 1] + col[m / 2]) };
    }
    out
}

fn run_estimator(
    cfg: &ExperimentConfig,
    est: &EstimatorKind,
    data: &Dataset,
    eps: f64,
) -> Result<(DVector<f64>, usize, bool, f64)> {
    match est {
        EstimatorKind::Mean => Ok((column_mean(data), 0, true, 0.0)),
        EstimatorKind::CoordMedian => Ok((column_median(data), 0, true, 0.0)),
        _ => {
            let k = match est {
                EstimatorKind::FilterK(k) => *k,
                _ => 1,
            };
            let mut fcfg = FilterConfig::new(cfg.loss_kind()?, cfg.sigma_for(k), eps)?
                .with_k(k)
                .with_alpha(cfg.alpha);
            fcfg.threshold_constant = cfg.threshold_constant;
            let out: Estimate = match est {
                EstimatorKind::Filter2 => filter_second_moment(data, &fcfg)?,
                EstimatorKind::FilterK(_) => filter_higher_moment(data, &fcfg)?,
                EstimatorKind::NearOptimal => near_optimal_pipeline(data, &fcfg)?,
                _ => unreachable!(),
            };
            Ok((out.mu_hat, out.iterations, out.converged, out.guard_value))
        }
    }
}

/// Run every (estimator, eps, seed) cell and return rows sorted by
/// (estimator, eps, seed). Per-cell estimator failures become rows with NaN
/// error and converged = false; the run continues.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    for e in &cfg.estimators {
        // resolve names before any sampling
        EstimatorKind::parse(&e.name())?;
    }
    let mut cells = Vec::new();
    for (ei, &eps) in cfg.eps_grid.iter().enumerate() {
        for rep in 0..cfg.seeds {
            cells.push((eps, cfg.seed_for(ei, rep)));
        }
    }
    let rows: Result<Vec<Vec<ReportRow>>> = cells
        .par_iter()
        .map(|&(eps, seed)| {
            let data = generate_dataset(cfg, eps, seed)?;
            let mu_star = data
                .truth
                .as_ref()
                .map(|t| t.mu_star.clone())
                .unwrap_or_else(|| DVector::zeros(cfg.d));
            let mut out = Vec::with_capacity(cfg.estimators.len());
            for est in &cfg.estimators {
                let start = Instant::now();
                let row = match run_estimator(cfg, est, &data, eps) {
                    Ok((mu_hat, iterations, converged, guard_value)) => ReportRow {
                        estimator: est.name(),
                        eps,
                        seed,
                        error: (mu_hat - &mu_star).norm(),
                        iterations,
                        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
                        converged,
                        guard_value,
                    },
                    Err(_) => ReportRow {
                        estimator: est.name(),
                        eps,
                        seed,
                        error: f64::NAN,
                        iterations: 0,
                        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
                        converged: false,
                        guard_value: f64::NAN,
                    },
                };
                out.push(row);
            }
            Ok(out)
        })
        .collect();
    let mut rows: Vec<ReportRow> = rows?.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        a.estimator
            .cmp(&b.estimator)
            .then(a.eps.partial_cmp(&b.eps).unwrap())
            .then(a.seed.cmp(&b.seed))
    });
    Ok(rows)
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.3},{},{}",
            r.estimator, r.eps, r.seed, r.error, r.iterations, r.runtime_ms, r.converged,
            r.guard_value
        );
    }
    out
}

pub fn write_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    std::fs::write(path, rows_to_csv(rows))?;
    Ok(())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Least-squares slope of log(median error) against log(eps) for one
/// estimator. Requires at least 3 distinct positive eps values with at least
/// 5 finite-error seeds each.
pub fn fit_scaling_exponent(rows: &[ReportRow], estimator: &str) -> Result<f64> {
    let mut by_eps: Vec<(f64, Vec<f64>)> = Vec::new();
    for r in rows {
        if r.estimator != estimator || r.eps <= 0.0 || !r.error.is_finite() {
            continue;
        }
        match by_eps.iter_mut().find(|(e, _)| *e == r.eps) {
            Some((_, v)) => v.push(r.error),
            None => by_eps.push((r.eps, vec![r.error])),
        }
    }
    if by_eps.len() < 3 {
        return Err(Error::Config(format!(
            "need >= 3 distinct positive eps values for {estimator}, got {}",
            by_eps.len()
        )));
    }
    let mut points = Vec::new();
    for (eps, mut errors) in by_eps {
        if errors.len() < 5 {
            return Err(Error::Config(format!(
                "need >= 5 seeds per eps for {estimator}, got {} at eps = {eps}",
                errors.len()
            )));
        }
        let med = median(&mut errors);
        if med <= 0.0 {
            return Err(Error::Config(format!("non-positive median error at eps = {eps}")));
        }
        points.push((eps.ln(), med.ln()));
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    Ok((n * sxy - sx * sy) / (n * sxx - sx * sx))
}
