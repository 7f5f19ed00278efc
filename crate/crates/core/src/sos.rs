//! Degree-2k sum-of-squares machinery over the unit sphere: the moment
//! polynomial p(v) = sum_i w_i <v, g_i>^{2k}, the pseudo-expectation SDP, per
//! sample scores, and boundedness certificates.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use once_cell::sync::Lazy;

use crate::error::{Error, Result};

/// Hard caps on the relaxation size.
pub const MAX_MOMENT_ORDER: usize = 3;
pub const MAX_BASIS_SIZE: usize = 5000;

/// p(v) = sum_i weights[i] * <v, vectors[i]>^{2k}, stored implicitly.
#[derive(Debug, Clone)]
pub struct MomentPolynomial {
    pub k: usize,
    pub vectors: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
}

impl MomentPolynomial {
    pub fn new(k: usize, vectors: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("moment order k must be >= 1".into()));
        }
        if vectors.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: vectors.len(), got: weights.len() });
        }
        if vectors.is_empty() {
            return Err(Error::EmptyInput("moment polynomial vectors"));
        }
        Ok(MomentPolynomial { k, vectors, weights })
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn eval(&self, v: &DVector<f64>) -> f64 {
        self.vectors
            .iter()
            .zip(&self.weights)
            .map(|(g, &w)| w * v.dot(g).powi(2 * self.k as i32))
            .sum()
    }
}

type Monomial = Vec<u8>;

struct Constraint {
    /// Entries (row, col, coef) with row <= col; the functional reads
    /// sum coef * X[row, col] on a symmetric X.
    entries: Vec<(usize, usize, f64)>,
    rhs: f64,
}

/// Precomputed basis, affine constraints, and the Cholesky factor of the
/// constraint Gram matrix for a given (dimension, order). Read-only after
/// construction and shared across threads.
pub struct SosContext {
    pub d: usize,
    pub k: usize,
    basis: Vec<Monomial>,
    deg_k_indices: Vec<usize>,
    constraints: Vec<Constraint>,
    rhs: DVector<f64>,
    gram_chol: Cholesky<f64, Dyn>,
}

static CONTEXT_CACHE: Lazy<Mutex<HashMap<(usize, usize), Arc<SosContext>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// All monomials over d variables of degree <= max_deg, graded lexicographic.
fn monomials_up_to(d: usize, max_deg: usize) -> Vec<Monomial> {
    let mut out = Vec::new();
    for deg in 0..=max_deg {
        let mut current = vec![0u8; d];
        fill(&mut out, &mut current, 0, deg, d);
    }
    out
}

fn fill(out: &mut Vec<Monomial>, current: &mut Monomial, var: usize, remaining: usize, d: usize) {
    if var == d - 1 {
        current[var] = remaining as u8;
        out.push(current.clone());
        current[var] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[var] = e as u8;
        fill(out, current, var + 1, remaining - e, d);
    }
    current[var] = 0;
}

fn degree(m: &Monomial) -> usize {
    m.iter().map(|&e| e as usize).sum()
}

/// Split a monomial of degree <= 2k into a basis pair (a, b), a + b = gamma.
fn split(gamma: &Monomial) -> (Monomial, Monomial) {
    let total = degree(gamma);
    let mut a = vec![0u8; gamma.len()];
    let mut rem = total.div_ceil(2);
    for j in 0..gamma.len() {
        let take = (gamma[j] as usize).min(rem);
        a[j] = take as u8;
        rem -= take;
        if rem == 0 {
            break;
        }
    }
    let b: Monomial = gamma.iter().zip(&a).map(|(&g, &x)| g - x).collect();
    (a, b)
}

impl SosContext {
    pub fn basis_size(&self) -> usize {
        self.basis.len()
    }

    /// Monomial vector m(v) over the basis, for point-mass constructions.
    fn eval_basis(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.basis.len(),
            self.basis.iter().map(|m| {
                m.iter()
                    .enumerate()
                    .map(|(j, &e)| v[j].powi(e as i32))
                    .product::<f64>()
            }),
        )
    }

    /// Coefficients of <v, g>^k over the degree-k monomials (multinomial
    /// expansion), aligned with `deg_k_indices`.
    fn power_coefficients(&self, g: &DVector<f64>) -> DVector<f64> {
        let k = self.k;
        let mut out = DVector::zeros(self.deg_k_indices.len());
        for (pos, &idx) in self.deg_k_indices.iter().enumerate() {
            let m = &self.basis[idx];
            let mut coef = factorial(k);
            let mut val = 1.0;
            for (j, &e) in m.iter().enumerate() {
                coef /= factorial(e as usize);
                val *= g[j].powi(e as i32);
            }
            out[pos] = coef as f64 * val;
        }
        out
    }

    fn a_of(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.constraints.len(),
            self.constraints.iter().map(|c| {
                c.entries.iter().map(|&(r, s, coef)| coef * x[(r, s)]).sum::<f64>()
            }),
        )
    }

    fn a_star(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let n = self.basis.len();
        let mut m = DMatrix::zeros(n, n);
        for (l, c) in self.constraints.iter().enumerate() {
            let yl = y[l];
            if yl == 0.0 {
                continue;
            }
            for &(r, s, coef) in &c.entries {
                if r == s {
                    m[(r, r)] += yl * coef;
                } else {
                    m[(r, s)] += yl * coef * 0.5;
                    m[(s, r)] += yl * coef * 0.5;
                }
            }
        }
        m
    }
}

fn factorial(n: usize) -> u64 {
    (1..=n as u64).product::<u64>().max(1)
}

/// Build (or fetch from the cache) the constraint template for (d, k).
pub fn sos_context(d: usize, k: usize) -> Result<Arc<SosContext>> {
    if k == 0 || k > MAX_MOMENT_ORDER {
        return Err(Error::InvalidParameter(format!(
            "moment order k must be in 1..={MAX_MOMENT_ORDER}, got {k}"
        )));
    }
    if let Some(ctx) = CONTEXT_CACHE.lock().unwrap().get(&(d, k)) {
        return Ok(ctx.clone());
    }
    let basis = monomials_up_to(d, k);
    if basis.len() > MAX_BASIS_SIZE {
        return Err(Error::InvalidParameter(format!(
            "monomial basis size {} exceeds cap {MAX_BASIS_SIZE}",
            basis.len()
        )));
    }
    let index: HashMap<Monomial, usize> =
        basis.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
    let deg_k_indices: Vec<usize> =
        basis.iter().enumerate().filter(|(_, m)| degree(m) == k).map(|(i, _)| i).collect();

    let n = basis.len();
    let mut constraints = Vec::new();

    // Normalization: the (1,1) entry equals 1.
    constraints.push(Constraint { entries: vec![(0, 0, 1.0)], rhs: 1.0 });

    // Consistency: entries indexed by pairs with equal monomial products agree.
    let mut by_product: HashMap<Monomial, Vec<(usize, usize)>> = HashMap::new();
    for i in 0..n {
        for j in i..n {
            let prod: Monomial = basis[i].iter().zip(&basis[j]).map(|(&a, &b)| a + b).collect();
            by_product.entry(prod).or_default().push((i, j));
        }
    }
    let mut products: Vec<(&Monomial, &Vec<(usize, usize)>)> = by_product.iter().collect();
    products.sort_by(|a, b| (degree(a.0), a.0).cmp(&(degree(b.0), b.0)));
    for (_, pairs) in &products {
        let rep = pairs[0];
        for &p in &pairs[1..] {
            constraints.push(Constraint {
                entries: vec![(p.0, p.1, 1.0), (rep.0, rep.1, -1.0)],
                rhs: 0.0,
            });
        }
    }

    // Sphere constraint ||v||^2 = 1: for each monomial gamma of degree
    // <= 2k - 2, sum_j E v^{gamma + 2 e_j} = E v^gamma.
    let low = monomials_up_to(d, 2 * k - 2);
    let entry_for = |gamma: &Monomial| -> (usize, usize) {
        let (a, b) = split(gamma);
        let i = index[&a];
        let j = index[&b];
        (i.min(j), i.max(j))
    };
    for gamma in &low {
        let mut entries = Vec::with_capacity(d + 1);
        for j in 0..d {
            let mut up = gamma.clone();
            up[j] += 2;
            let (r, s) = entry_for(&up);
            entries.push((r, s, 1.0));
        }
        let (r, s) = entry_for(gamma);
        entries.push((r, s, -1.0));
        // Merge duplicate cells so the Gram matrix stays exact.
        entries.sort_by_key(|&(r, s, _)| (r, s));
        let mut merged: Vec<(usize, usize, f64)> = Vec::new();
        for (r, s, c) in entries {
            if let Some(last) = merged.last_mut() {
                if last.0 == r && last.1 == s {
                    last.2 += c;
                    continue;
                }
            }
            merged.push((r, s, c));
        }
        merged.retain(|&(_, _, c)| c != 0.0);
        if !merged.is_empty() {
            constraints.push(Constraint { entries: merged, rhs: 0.0 });
        }
    }

    // Gram matrix of the constraint functionals under the Frobenius product.
    let m = constraints.len();
    let mut cell_map: HashMap<(usize, usize), Vec<(usize, f64)>> = HashMap::new();
    for (l, c) in constraints.iter().enumerate() {
        for &(r, s, coef) in &c.entries {
            cell_map.entry((r, s)).or_default().push((l, coef));
        }
    }
    let mut gram = DMatrix::zeros(m, m);
    for ((r, s), items) in &cell_map {
        let factor = if r == s { 1.0 } else { 0.5 };
        for &(l1, c1) in items {
            for &(l2, c2) in items {
                gram[(l1, l2)] += factor * c1 * c2;
            }
        }
    }
    let gram_chol = match Cholesky::new(gram.clone()) {
        Some(c) => c,
        None => Cholesky::new(gram + DMatrix::identity(m, m) * 1e-10)
            .ok_or_else(|| Error::InvalidParameter("constraint Gram matrix is singular".into()))?,
    };
    let rhs = DVector::from_iterator(m, constraints.iter().map(|c| c.rhs));

    let ctx = Arc::new(SosContext {
        d,
        k,
        basis,
        deg_k_indices,
        constraints,
        rhs,
        gram_chol,
    });
    CONTEXT_CACHE.lock().unwrap().insert((d, k), ctx.clone());
    Ok(ctx)
}

/// A degree-2k moment matrix over the monomials of degree <= k, normalized so
/// the (1,1) entry is 1 and feasible (within solver tolerance) for the sphere
/// and consistency constraints.
#[derive(Clone)]
pub struct PseudoExpectation {
    pub k: usize,
    pub d: usize,
    pub moment_matrix: DMatrix<f64>,
    ctx: Arc<SosContext>,
}

impl std::fmt::Debug for PseudoExpectation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PseudoExpectation")
            .field("k", &self.k)
            .field("d", &self.d)
            .field("basis_size", &self.moment_matrix.nrows())
            .finish()
    }
}

impl PseudoExpectation {
    /// The pseudo-expectation of a point mass at the unit vector v0; exact
    /// and feasible, useful as a reference in tests and as a cheap violating
    /// witness inside the filters.
    pub fn point_mass(v0: &DVector<f64>, k: usize) -> Result<Self> {
        let ctx = sos_context(v0.len(), k)?;
        let norm = v0.norm();
        if norm == 0.0 {
            return Err(Error::InvalidParameter("point mass direction must be nonzero".into()));
        }
        let unit = v0 / norm;
        let z = ctx.eval_basis(&unit);
        let m = &z * z.transpose();
        Ok(PseudoExpectation { k, d: v0.len(), moment_matrix: m, ctx })
    }

    /// Ẽ <v, g>^{2k} as a quadratic form of the degree-k block.
    pub fn expect_power(&self, g: &DVector<f64>) -> f64 {
        let c = self.ctx.power_coefficients(g);
        let idx = &self.ctx.deg_k_indices;
        let mut acc = 0.0;
        for (p, &i) in idx.iter().enumerate() {
            for (q, &j) in idx.iter().enumerate() {
                acc += c[p] * c[q] * self.moment_matrix[(i, j)];
            }
        }
        acc
    }

    /// Ẽ p(v) by linearity.
    pub fn expect_polynomial(&self, p: &MomentPolynomial) -> f64 {
        p.vectors
            .iter()
            .zip(&p.weights)
            .map(|(g, &w)| w * self.expect_power(g))
            .sum()
    }

    /// Residuals (psd violation, max affine violation) for feasibility checks.
    pub fn feasibility_residuals(&self) -> (f64, f64) {
        let eig = nalgebra::SymmetricEigen::new(self.moment_matrix.clone());
        let psd_violation = eig.eigenvalues.iter().fold(0.0_f64, |acc, &l| acc.max(-l));
        let a = self.ctx.a_of(&self.moment_matrix);
        let affine = (&a - &self.ctx.rhs).amax();
        (psd_violation, affine)
    }
}

/// Result of the pseudo-expectation SDP.
#[derive(Debug, Clone)]
pub struct MaxPeResult {
    pub value: f64,
    pub pe: PseudoExpectation,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
}

const ADMM_MAX_SWEEPS: usize = 200_000;
const ADMM_FEAS_TOL: f64 = 1e-8;
const ADMM_GAP_TOL: f64 = 5e-9;

/// Solve max Ẽ p(v) over degree-2k pseudo-expectations on the unit sphere.
///
/// First-order splitting: alternate an eigenvalue clip onto the PSD cone with
/// a projection step for the affine constraints (boundary-point ADMM). For
/// k = 1 the optimum is exactly the top eigenvalue of sum_i w_i g_i g_i^T.
pub fn max_pseudo_expectation(p: &MomentPolynomial) -> Result<MaxPeResult> {
    let d = p.dim();
    let k = p.k;
    let ctx = sos_context(d, k)?;
    let n = ctx.basis_size();

    // Objective: C restricted to the degree-k block, C = sum_i w_i c_i c_i^T.
    let mut c_full: DMatrix<f64> = DMatrix::zeros(n, n);
    let idx = &ctx.deg_k_indices;
    for (g, &w) in p.vectors.iter().zip(&p.weights) {
        if w == 0.0 {
            continue;
        }
        let coef = ctx.power_coefficients(g);
        for (pp, &i) in idx.iter().enumerate() {
            for (qq, &j) in idx.iter().enumerate() {
                c_full[(i, j)] += w * coef[pp] * coef[qq];
            }
        }
    }
    let c_scale = c_full.norm();
    if c_scale == 0.0 {
        // All gradients vanish: the maximum is 0 and any feasible pE attains it.
        let mut e1 = DVector::zeros(d);
        e1[0] = 1.0;
        let pe = PseudoExpectation::point_mass(&e1, k)?;
        return Ok(MaxPeResult {
            value: 0.0,
            pe,
            converged: true,
            primal_residual: 0.0,
            dual_residual: 0.0,
            iterations: 0,
        });
    }
    // Normalized problem: min <Q, X>, Q = -C / ||C||.
    let q = &c_full * (-1.0 / c_scale);

    // Feasible PSD warm start.
    let mut e1 = DVector::zeros(d);
    e1[0] = 1.0;
    let mut x = PseudoExpectation::point_mass(&e1, k)?.moment_matrix;
    let mut y = DVector::zeros(ctx.constraints.len());
    let mut s: DMatrix<f64> = DMatrix::zeros(n, n);
    let mut sigma = 1.0;

    let b_norm = ctx.rhs.norm();
    let mut pinf = f64::INFINITY;
    let mut dinf = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    // Stagnation guard: some degenerate instances plateau above the
    // tolerances; stop burning sweeps once progress stalls.
    let mut best_residual = f64::INFINITY;
    let mut last_improvement = 0usize;
    let mut stall_kicks = 0usize;

    for it in 0..ADMM_MAX_SWEEPS {
        iterations = it + 1;
        // y-step: (A A*) y = A(Q - S) + (b - A(X)) / sigma.
        let ax = ctx.a_of(&x);
        let rhs_vec = ctx.a_of(&(&q - &s)) + (&ctx.rhs - &ax) / sigma;
        y.copy_from(&rhs_vec);
        ctx.gram_chol.solve_mut(&mut y);

        // Eigen-clip step.
        let v: DMatrix<f64> = &q - ctx.a_star(&y) - &x / sigma;
        let eig = nalgebra::SymmetricEigen::new(v);
        let mut s_new = DMatrix::zeros(n, n);
        let mut x_new = DMatrix::zeros(n, n);
        for (li, lambda) in eig.eigenvalues.iter().enumerate() {
            let col = eig.eigenvectors.column(li);
            if *lambda > 0.0 {
                s_new.ger(*lambda, &col, &col, 1.0);
            } else if *lambda < 0.0 {
                x_new.ger(-sigma * *lambda, &col, &col, 1.0);
            }
        }

        dinf = (&x_new - &x).norm() / (sigma * (1.0 + 1.0)); // ||Q|| = 1 after scaling
        s = s_new;
        x = x_new;

        let ax = ctx.a_of(&x);
        pinf = (&ax - &ctx.rhs).norm() / (1.0 + b_norm);
        let obj = (q.component_mul(&x)).sum();
        let dual_obj = ctx.rhs.dot(&y);
        let gap = (obj - dual_obj).abs() / (1.0 + obj.abs() + dual_obj.abs());

        if pinf <= ADMM_FEAS_TOL && dinf <= ADMM_FEAS_TOL && gap <= ADMM_GAP_TOL {
            converged = true;
            break;
        }
        // When the residual stops improving the iteration is usually caught in
        // a limit cycle of the fixed-penalty splitting; kick the penalty toward
        // balancing the residuals before giving up, and exit only after several
        // fruitless kicks.
        let residual = pinf.max(dinf).max(gap);
        if residual < best_residual * (1.0 - 1e-9) {
            best_residual = residual;
            last_improvement = it;
        } else if it - last_improvement > 5_000 {
            stall_kicks += 1;
            if stall_kicks > 10 {
                break;
            }
            let mut ratio = (dinf / pinf.max(1e-300)).sqrt().clamp(0.5, 2.0);
            if (0.95..=1.05).contains(&ratio) {
                // Balanced but stuck: jolt the penalty to break the cycle.
                ratio = 0.7;
            }
            sigma = (sigma * ratio).clamp(1e-4, 1e4);
            last_improvement = it;
        }
        if it % 100 == 99 {
            if pinf > 10.0 * dinf {
                sigma = (sigma * 0.7).max(1e-4);
            } else if dinf > 10.0 * pinf {
                sigma = (sigma * 1.3).min(1e4);
            }
        }
    }

    let pe = PseudoExpectation { k, d, moment_matrix: x, ctx };
    let value = pe.expect_polynomial(p);
    Ok(MaxPeResult { value, pe, converged, primal_residual: pinf, dual_residual: dinf, iterations })
}

/// tau_i = Ẽ <v, g_i>^{2k}, clipped to 0 from below.
pub fn scores_from_pe(pe: &PseudoExpectation, vectors: &[DVector<f64>]) -> Vec<f64> {
    vectors.iter().map(|g| pe.expect_power(g).max(0.0)).collect()
}

/// Relative tolerance used when comparing the SDP value to a certificate
/// bound; covers the solver's own tolerance.
const CERT_REL_TOL: f64 = 1e-4;

/// True iff there is a degree-2k SoS certificate (modulo the sphere) that
/// p(v) <= (bound ||v||)^{2k}; by duality this is max Ẽ p <= bound^{2k}.
/// Solver non-convergence conservatively answers false.
pub fn check_certificate(p: &MomentPolynomial, bound: f64) -> Result<bool> {
    if !(bound > 0.0) {
        return Err(Error::InvalidParameter(format!("bound must be positive, got {bound}")));
    }
    let res = max_pseudo_expectation(p)?;
    if !res.converged {
        return Ok(false);
    }
    let target = bound.powi(2 * p.k as i32);
    Ok(res.value <= target + CERT_REL_TOL * target.max(1.0))
}

/// Certifiably sigma-bounded f-moments of the uniform distribution over the
/// given transformed samples.
pub fn certify_f_moments(samples: &[DVector<f64>], k: usize, sigma: f64) -> Result<bool> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("certify_f_moments samples"));
    }
    let n = samples.len();
    if samples.iter().all(|g| g.norm() == 0.0) {
        return Ok(true);
    }
    let p = MomentPolynomial::new(k, samples.to_vec(), vec![1.0 / n as f64; n])?;
    check_certificate(&p, sigma)
}
