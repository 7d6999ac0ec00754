//! Entropic and exact optimal transport between two uniformly weighted
//! sample sets.
//!
//! The entropic solver works entirely on dual potentials in the log domain,
//! so regularization strengths far below the typical cost scale (e.g.
//! `1e-4` against costs of order one) neither underflow nor lose the
//! marginal constraints. Small strengths are reached through a geometric
//! schedule (epsilon scaling) that warm-starts each stage from the previous
//! potentials.

use alloc::vec;
use alloc::vec::Vec;

use crate::batch::FeatureBatch;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Pairwise ground costs, `n0 x n1`, all entries nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Matrix);

impl CostMatrix {
    /// Wraps an existing table after checking it is finite and nonnegative.
    pub fn new(values: Matrix) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::NonFinite("cost matrix"));
        }
        if values.as_slice().iter().any(|&v| v < 0.0) {
            return Err(crate::error::invalid("cost matrix", "negative entry"));
        }
        Ok(Self(values))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    #[inline]
    pub fn values(&self) -> &Matrix {
        &self.0
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn mean(&self) -> f64 {
        self.0.mean()
    }
}

fn check_dims(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            expected: a.cols(),
            got: b.cols(),
        });
    }
    Ok(())
}

fn pairwise(a: &Matrix, b: &Matrix, squared: bool) -> Result<CostMatrix> {
    check_dims(a, b)?;
    let mut c = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ai = a.row(i);
        for j in 0..b.rows() {
            let d2: f64 = ai
                .iter()
                .zip(b.row(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            c[(i, j)] = if squared { d2 } else { libm::sqrt(d2) };
        }
    }
    CostMatrix::new(c)
}

/// Squared Euclidean costs between the rows of `a` and `b`.
pub fn cost_matrix(a: &FeatureBatch, b: &FeatureBatch) -> Result<CostMatrix> {
    pairwise(&a.features, &b.features, true)
}

/// Euclidean (not squared) costs; used where a true 1-Wasserstein metric is
/// needed.
pub fn euclidean_cost_matrix(a: &FeatureBatch, b: &FeatureBatch) -> Result<CostMatrix> {
    pairwise(&a.features, &b.features, false)
}

/// Stopping and scheduling parameters for [`sinkhorn`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornParams {
    /// Target entropic regularization strength.
    pub lambda: f64,
    /// Total iteration budget across all scaling stages.
    pub max_iter: usize,
    /// Stop once the largest absolute row-marginal deviation falls below this.
    pub tol: f64,
    /// Geometric factor between consecutive regularization stages.
    pub scaling_factor: f64,
    /// Iteration cap for each intermediate stage.
    pub stage_iter: usize,
    /// Regularization of the first scaling stage; defaults to the largest
    /// cost entry.
    pub initial_epsilon: Option<f64>,
}

impl SinkhornParams {
    pub const DEFAULT_TOL: f64 = 1e-8;
    pub const DEFAULT_MAX_ITER: usize = 10_000;

    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            max_iter: Self::DEFAULT_MAX_ITER,
            tol: Self::DEFAULT_TOL,
            scaling_factor: 0.5,
            stage_iter: 20,
            initial_epsilon: None,
        }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

/// Entropic transport plan with its convergence diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    gamma: Matrix,
    /// Largest absolute deviation of a row or column sum from its marginal.
    pub marginal_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl Coupling {
    /// Wraps an externally supplied joint table. Entries must be finite and
    /// nonnegative; marginals are not enforced here.
    pub fn from_matrix(gamma: Matrix) -> Result<Self> {
        if !gamma.is_finite() {
            return Err(Error::NonFinite("coupling"));
        }
        if gamma.as_slice().iter().any(|&v| v < 0.0) {
            return Err(crate::error::invalid("coupling", "negative entry"));
        }
        let marginal_error = uniform_marginal_error(&gamma);
        Ok(Self {
            gamma,
            marginal_error,
            iterations: 0,
            converged: true,
        })
    }

    #[inline]
    pub fn gamma(&self) -> &Matrix {
        &self.gamma
    }

    pub fn into_matrix(self) -> Matrix {
        self.gamma
    }

    /// Transport cost `<C, gamma>`.
    pub fn cost(&self, c: &CostMatrix) -> f64 {
        self.gamma.dot(c.values())
    }
}

/// Largest deviation of the row and column sums from `1/n0` and `1/n1`.
pub fn uniform_marginal_error(gamma: &Matrix) -> f64 {
    let a = 1.0 / gamma.rows() as f64;
    let b = 1.0 / gamma.cols() as f64;
    let rows = gamma.row_sums().into_iter().map(|s| libm::fabs(s - a));
    let cols = gamma.col_sums().into_iter().map(|s| libm::fabs(s - b));
    rows.chain(cols).fold(0.0, f64::max)
}

// Terms more than this many multiples of epsilon below the running maximum
// contribute less than exp(-60) each and are skipped.
const LSE_CUTOFF: f64 = 60.0;

/// `-eps * log(sum_j exp((pot_j - c_j) / eps))`, stabilized by the maximum.
#[inline]
fn soft_min(costs: &[f64], pot: &[f64], eps: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for (c, p) in costs.iter().zip(pot) {
        let v = p - c;
        if v > best {
            best = v;
        }
    }
    let cutoff = best - LSE_CUTOFF * eps;
    let inv = 1.0 / eps;
    let mut sum = 0.0;
    for (c, p) in costs.iter().zip(pot) {
        let v = p - c;
        if v > cutoff {
            sum += libm::exp((v - best) * inv);
        }
    }
    -(best + eps * libm::log(sum))
}

struct Duals {
    f: Vec<f64>,
    g: Vec<f64>,
}

/// Runs alternating dual updates at a fixed `eps` until the row-marginal
/// deviation drops below `tol` or `budget` iterations are spent. The column
/// marginals are exact after every iteration because `g` is updated last.
fn sinkhorn_stage(
    c: &Matrix,
    ct: &Matrix,
    duals: &mut Duals,
    eps: f64,
    tol: f64,
    budget: usize,
) -> (usize, f64, bool) {
    let n0 = c.rows();
    let n1 = c.cols();
    let log_a = -libm::log(n0 as f64);
    let log_b = -libm::log(n1 as f64);
    let a = 1.0 / n0 as f64;
    let mut f_next = vec![0.0; n0];
    let mut err = f64::INFINITY;
    let mut it = 0;
    while it < budget {
        // The next row update also yields the row sums of the current plan:
        // row_i = a * exp((f_i - f_next_i) / eps).
        for (i, fi) in f_next.iter_mut().enumerate() {
            *fi = eps * log_a + soft_min(c.row(i), &duals.g, eps);
        }
        if it > 0 {
            err = duals
                .f
                .iter()
                .zip(&f_next)
                .map(|(f, fnext)| libm::fabs(a * libm::exp((f - fnext) / eps) - a))
                .fold(0.0, f64::max);
            if err < tol {
                return (it, err, true);
            }
        }
        core::mem::swap(&mut duals.f, &mut f_next);
        for (j, gj) in duals.g.iter_mut().enumerate() {
            *gj = eps * log_b + soft_min(ct.row(j), &duals.f, eps);
        }
        it += 1;
    }
    (it, err, false)
}

fn plan(c: &Matrix, duals: &Duals, eps: f64) -> Matrix {
    let mut gamma = Matrix::zeros(c.rows(), c.cols());
    for i in 0..c.rows() {
        let fi = duals.f[i];
        let row = gamma.row_mut(i);
        for (j, (g, cij)) in duals.g.iter().zip(c.row(i)).enumerate() {
            row[j] = libm::exp((fi + g - cij) / eps);
        }
    }
    gamma
}

/// One full row-then-column dual sweep.
fn sweep(c: &Matrix, ct: &Matrix, duals: &mut Duals, eps: f64) {
    let log_a = -libm::log(c.rows() as f64);
    let log_b = -libm::log(c.cols() as f64);
    for (i, fi) in duals.f.iter_mut().enumerate() {
        *fi = eps * log_a + soft_min(c.row(i), &duals.g, eps);
    }
    for (j, gj) in duals.g.iter_mut().enumerate() {
        *gj = eps * log_b + soft_min(ct.row(j), &duals.f, eps);
    }
}

fn dual_objective(duals: &Duals, gamma: &Matrix, eps: f64, a: f64, b: f64) -> f64 {
    a * duals.f.iter().sum::<f64>() + b * duals.g.iter().sum::<f64>()
        - eps * gamma.as_slice().iter().sum::<f64>()
}

/// Damped Newton refinement of the dual potentials.
///
/// The Jacobian of the marginal map is `[[D_r, G], [G^T, D_c]] / eps`; the
/// row block is eliminated and the column Schur complement
/// `D_c - G^T D_r^-1 G` (singular along the constant vector) is solved with
/// the last potential pinned. Every accepted step strictly reduces the
/// marginal deviation or passes an Armijo test on the dual objective; a
/// rejected step falls back to one plain sweep.
fn newton_refine(
    c: &Matrix,
    ct: &Matrix,
    duals: &mut Duals,
    eps: f64,
    tol: f64,
    budget: usize,
) -> (usize, bool) {
    let n0 = c.rows();
    let n1 = c.cols();
    let a = 1.0 / n0 as f64;
    let b = 1.0 / n1 as f64;
    let mut gamma = plan(c, duals, eps);
    let mut err = uniform_marginal_error(&gamma);
    let mut steps = 0;
    while steps < budget {
        if err < tol {
            return (steps, true);
        }
        steps += 1;
        let rs = gamma.row_sums();
        let cs = gamma.col_sums();
        if n1 < 2 || rs.iter().any(|&r| !(r > 1e-300)) {
            sweep(c, ct, duals, eps);
            gamma = plan(c, duals, eps);
            err = uniform_marginal_error(&gamma);
            continue;
        }
        let m = n1 - 1;
        let mut schur = Matrix::zeros(m, m);
        let mut support: Vec<usize> = Vec::with_capacity(m);
        for i in 0..n0 {
            let gi = gamma.row(i);
            let inv = 1.0 / rs[i];
            support.clear();
            support.extend((0..m).filter(|&p| gi[p] > 0.0));
            for &p in &support {
                let w = gi[p] * inv;
                let row = schur.row_mut(p);
                for &q in &support {
                    row[q] -= w * gi[q];
                }
            }
        }
        let mut trace = 0.0;
        for p in 0..m {
            schur[(p, p)] += cs[p];
            trace += cs[p];
        }
        let ridge = 1e-13 * trace / m as f64;
        for p in 0..m {
            schur[(p, p)] += ridge;
        }
        // rhs = -eps (cs - b) + G^T D_r^-1 eps (rs - a)
        let scaled_r: Vec<f64> = rs.iter().map(|r| eps * (r - a) / r).collect();
        let mut rhs: Vec<f64> = cs[..m].iter().map(|s| -eps * (s - b)).collect();
        for i in 0..n0 {
            let gi = gamma.row(i);
            for p in 0..m {
                rhs[p] += gi[p] * scaled_r[i];
            }
        }
        let Some(l) = crate::linalg::cholesky(schur) else {
            sweep(c, ct, duals, eps);
            gamma = plan(c, duals, eps);
            err = uniform_marginal_error(&gamma);
            continue;
        };
        let mut dg = crate::linalg::cholesky_solve(&l, &rhs);
        dg.push(0.0);
        let df: Vec<f64> = (0..n0)
            .map(|i| {
                let gdg: f64 = gamma.row(i).iter().zip(&dg).map(|(x, y)| x * y).sum();
                (-eps * (rs[i] - a) - gdg) / rs[i]
            })
            .collect();

        // Directional derivative of the concave dual objective along the step.
        let slope: f64 = df.iter().zip(&rs).map(|(d, r)| d * (a - r)).sum::<f64>()
            + dg.iter().zip(&cs).map(|(d, s)| d * (b - s)).sum::<f64>();
        let base = dual_objective(duals, &gamma, eps, a, b);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = Duals {
                f: duals.f.iter().zip(&df).map(|(f, d)| f + step * d).collect(),
                g: duals.g.iter().zip(&dg).map(|(g, d)| g + step * d).collect(),
            };
            let trial_gamma = plan(c, &trial, eps);
            let trial_err = uniform_marginal_error(&trial_gamma);
            let gain = dual_objective(&trial, &trial_gamma, eps, a, b) - base;
            if trial_err.is_finite() && (trial_err < err || gain >= 1e-4 * step * slope) {
                *duals = trial;
                gamma = trial_gamma;
                err = trial_err;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            sweep(c, ct, duals, eps);
            gamma = plan(c, duals, eps);
            err = uniform_marginal_error(&gamma);
        }
    }
    (steps, err < tol)
}

/// Entropic optimal coupling between uniform marginals `1/n0` and `1/n1`,
/// minimizing `<C, gamma> + lambda * KL(gamma | a x b)`.
///
/// Non-convergence within the iteration budget is not an error: the last
/// iterate is returned with `converged == false`.
pub fn sinkhorn(c: &CostMatrix, params: &SinkhornParams) -> Result<Coupling> {
    let SinkhornParams {
        lambda,
        max_iter,
        tol,
        scaling_factor,
        stage_iter,
        initial_epsilon,
    } = *params;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(crate::error::invalid("lambda", "must be positive and finite"));
    }
    if !(scaling_factor > 0.0 && scaling_factor < 1.0) {
        return Err(crate::error::invalid("scaling_factor", "must lie in (0, 1)"));
    }
    if c.rows() == 0 || c.cols() == 0 {
        return Err(Error::Empty("cost matrix"));
    }
    let cm = c.values();
    if !cm.is_finite() {
        return Err(Error::NonFinite("cost matrix"));
    }
    let ct = cm.transpose();
    let mut duals = Duals {
        f: vec![0.0; cm.rows()],
        g: vec![0.0; cm.cols()],
    };

    let cmax = cm.as_slice().iter().copied().fold(0.0, f64::max);
    let mut spent = 0;
    if cm.rows() == cm.cols() && lambda * ASSIGNMENT_WARM_START_RATIO < cmax {
        // For small regularization the entropic duals sit close to the
        // exact assignment duals, shifted by eps * log(1/n).
        let (_, u, v) = solve_assignment(cm);
        let shift = -lambda * libm::log(cm.rows() as f64);
        duals.f = u.into_iter().map(|x| x + shift).collect();
        duals.g = v;
    } else {
        let mut eps = initial_epsilon.unwrap_or(cmax).max(lambda);
        // Intermediate stages only need rough agreement before the next shrink.
        let stage_tol = 1e-3 / cm.rows().max(cm.cols()) as f64;
        while eps > lambda && spent < max_iter {
            let budget = stage_iter.min(max_iter - spent);
            let (it, _, _) = sinkhorn_stage(cm, &ct, &mut duals, eps, stage_tol, budget);
            spent += it;
            eps = (eps * scaling_factor).max(lambda);
        }
    }
    let budget = stage_iter.min(max_iter.saturating_sub(spent));
    let (it, _, mut converged) = sinkhorn_stage(cm, &ct, &mut duals, lambda, tol, budget);
    spent += it;
    if !converged && spent < max_iter {
        let budget = NEWTON_STEPS.min(max_iter - spent);
        let (it, ok) = newton_refine(cm, &ct, &mut duals, lambda, tol, budget);
        spent += it;
        converged = ok;
    }
    if !converged && spent < max_iter {
        let (it, _, _) =
            sinkhorn_stage(cm, &ct, &mut duals, lambda, tol, max_iter - spent);
        spent += it;
    }

    let gamma = plan(cm, &duals, lambda);
    let marginal_error = uniform_marginal_error(&gamma);
    Ok(Coupling {
        gamma,
        marginal_error,
        iterations: spent,
        converged: marginal_error < tol,
    })
}

const NEWTON_STEPS: usize = 200;
// Assignment warm start is used when lambda is below cmax / this ratio.
const ASSIGNMENT_WARM_START_RATIO: f64 = 100.0;

/// Column-stochastic transition table: column `j` is the distribution over
/// rows (previous-step samples) given column sample `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalCoupling(Matrix);

impl ConditionalCoupling {
    #[inline]
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Composition `self * next`, i.e. `Psi_{t} = Psi_{t-1} G_t`.
    pub fn compose(&self, next: &ConditionalCoupling) -> Result<ConditionalCoupling> {
        Ok(Self(self.0.matmul(&next.0)?))
    }
}

/// Normalizes every column of the coupling to sum to one.
pub fn conditional_coupling(g: &Coupling) -> Result<ConditionalCoupling> {
    let gamma = g.gamma();
    let sums = gamma.col_sums();
    if let Some(j) = sums.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::ZeroColumn(j));
    }
    let mut out = gamma.clone();
    for i in 0..out.rows() {
        for (v, s) in out.row_mut(i).iter_mut().zip(&sums) {
            *v /= s;
        }
    }
    Ok(ConditionalCoupling(out))
}

/// Exact minimum-cost assignment between equally sized uniform sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Mean matched cost, `(1/n) sum_i C[i][perm(i)]`.
    pub cost: f64,
    /// `perm[i]` is the column matched to row `i`.
    pub perm: Vec<usize>,
}

/// Empirical 1-Wasserstein distance under ground cost `c` for two sets of
/// equal size, solved exactly as an assignment problem (shortest augmenting
/// paths with potentials, O(n^3)). Rows are inserted in index order and
/// ties between columns go to the lower column index.
pub fn exact_wasserstein1(c: &CostMatrix) -> Result<Assignment> {
    let n = c.rows();
    if n != c.cols() {
        return Err(Error::NotSquare {
            rows: n,
            cols: c.cols(),
        });
    }
    if n == 0 {
        return Err(Error::Empty("cost matrix"));
    }
    let a = c.values();
    let (perm, _, _) = solve_assignment(a);
    let total: f64 = perm.iter().enumerate().map(|(i, &j)| a[(i, j)]).sum();
    Ok(Assignment {
        cost: total / n as f64,
        perm,
    })
}

/// Shortest augmenting path assignment on a square matrix. Returns the
/// row-to-column permutation and dual potentials `u`, `v` with
/// `C[i][j] - u[i] - v[j] >= 0`, tight on the matching.
fn solve_assignment(a: &Matrix) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = a.rows();
    // 1-based arrays; index 0 is the virtual root column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![f64::INFINITY; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            let arow = a.row(i0 - 1);
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = arow[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[row_of[j] - 1] = j - 1;
    }
    (perm, u[1..].to_vec(), v[1..].to_vec())
}
