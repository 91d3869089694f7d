//! Operator-splitting solver for the trace-objective semidefinite
//! programs produced by the unfolding builders:
//!
//!   maximize   tr(C * Q)
//!   subject to Q PSD, tr(A_i * Q) = b_i, tr(Q) <= tau
//!
//! The trace inequality is adjoined as an equality with a nonnegative
//! scalar slack. Each iteration alternates a Frobenius projection onto
//! the affine constraint set with a projection onto the PSD cone, plus
//! a scaled dual update. Problem sizes stay small (N of a few hundred),
//! so the per-iteration eigendecomposition is cheap.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{McuError, Result};

/// A sparse symmetric constraint matrix, stored structurally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConstraintMatrix {
    /// The all-ones matrix 11^T (centering constraint).
    AllOnes,
    /// +1 at (i,i) and (j,j), -1 at (i,j) and (j,i) (edge isometry).
    Edge { i: usize, j: usize },
    /// General symmetric matrix given as upper-triangle entries
    /// (i <= j, value), with the mirrored entry implied.
    Sparse(Vec<(usize, usize, f64)>),
}

impl ConstraintMatrix {
    /// tr(A * Q) for dense symmetric Q.
    pub fn apply(&self, q: &DMatrix<f64>) -> f64 {
        match self {
            ConstraintMatrix::AllOnes => q.sum(),
            ConstraintMatrix::Edge { i, j } => {
                q[(*i, *i)] + q[(*j, *j)] - 2.0 * q[(*i, *j)]
            }
            ConstraintMatrix::Sparse(entries) => entries
                .iter()
                .map(|&(i, j, v)| {
                    if i == j {
                        v * q[(i, i)]
                    } else {
                        2.0 * v * q[(i, j)]
                    }
                })
                .sum(),
        }
    }

    /// Q += alpha * A.
    fn add_scaled(&self, q: &mut DMatrix<f64>, alpha: f64) {
        match self {
            ConstraintMatrix::AllOnes => {
                q.iter_mut().for_each(|v| *v += alpha);
            }
            ConstraintMatrix::Edge { i, j } => {
                q[(*i, *i)] += alpha;
                q[(*j, *j)] += alpha;
                q[(*i, *j)] -= alpha;
                q[(*j, *i)] -= alpha;
            }
            ConstraintMatrix::Sparse(entries) => {
                for &(i, j, v) in entries {
                    q[(i, j)] += alpha * v;
                    if i != j {
                        q[(j, i)] += alpha * v;
                    }
                }
            }
        }
    }

    /// Full entry list (both triangles), used to form the constraint
    /// Gram matrix. AllOnes is handled separately by the caller.
    fn entries(&self) -> Vec<((usize, usize), f64)> {
        match self {
            ConstraintMatrix::AllOnes => unreachable!("dense constraint"),
            ConstraintMatrix::Edge { i, j } => vec![
                ((*i, *i), 1.0),
                ((*j, *j), 1.0),
                ((*i, *j), -1.0),
                ((*j, *i), -1.0),
            ],
            ConstraintMatrix::Sparse(entries) => {
                let mut out = Vec::with_capacity(entries.len() * 2);
                for &(i, j, v) in entries {
                    out.push(((i, j), v));
                    if i != j {
                        out.push(((j, i), v));
                    }
                }
                out
            }
        }
    }

    fn sum_entries(&self) -> f64 {
        self.entries().iter().map(|(_, v)| v).sum()
    }

    fn trace(&self) -> f64 {
        match self {
            ConstraintMatrix::AllOnes => unreachable!(),
            ConstraintMatrix::Edge { .. } => 2.0,
            ConstraintMatrix::Sparse(entries) => entries
                .iter()
                .filter(|&&(i, j, _)| i == j)
                .map(|&(_, _, v)| v)
                .sum(),
        }
    }
}

/// Frobenius inner product tr(A * B) of two constraint matrices over an
/// n x n space, with the slack coefficients sa, sb adjoined.
fn constraint_inner(
    a: &ConstraintMatrix,
    b: &ConstraintMatrix,
    n: usize,
    sa: f64,
    sb: f64,
) -> f64 {
    let base = match (a, b) {
        (ConstraintMatrix::AllOnes, ConstraintMatrix::AllOnes) => (n * n) as f64,
        (ConstraintMatrix::AllOnes, other) | (other, ConstraintMatrix::AllOnes) => {
            other.sum_entries()
        }
        (a, b) => {
            let bm: std::collections::HashMap<(usize, usize), f64> =
                b.entries().into_iter().collect();
            a.entries()
                .iter()
                .map(|(k, v)| v * bm.get(k).copied().unwrap_or(0.0))
                .sum()
        }
    };
    base + sa * sb
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdpProblem {
    /// Symmetric objective matrix; the solver maximizes tr(objective * Q).
    pub objective: DMatrix<f64>,
    /// Equality constraints tr(A_i * Q) = b_i.
    pub equality_constraints: Vec<(ConstraintMatrix, f64)>,
    /// Trace bound tau: tr(Q) <= tau.
    pub trace_bound: f64,
    /// Optional feasible warm start.
    pub initial_point: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdpSolution {
    pub q: DMatrix<f64>,
    pub objective_value: f64,
    /// Max over equalities of |tr(A_i Q) - b_i| / (1 + |b_i|).
    pub primal_residual: f64,
    /// -min eigenvalue of Q, clamped at 0.
    pub psd_violation: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Relative equality-residual tolerance.
    pub eps_constraint: f64,
    /// Scaled PSD-violation tolerance: psd_violation <= eps_psd * (1 + tr(Q)/N).
    pub eps_psd: f64,
    /// Dual (objective stationarity) tolerance, relative.
    pub eps_dual: f64,
    pub max_iterations: usize,
    /// Print diagnostics every this many iterations (0 = quiet).
    pub diagnostic_every: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps_constraint: 1e-6,
            eps_psd: 1e-7,
            eps_dual: 1e-8,
            max_iterations: 50_000,
            diagnostic_every: 0,
        }
    }
}

/// Frobenius-nearest PSD matrix: eigendecompose and clamp negative
/// eigenvalues at zero.
pub fn project_psd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = nalgebra::SymmetricEigen::try_new(s.clone(), f64::EPSILON, 100_000)
        .ok_or(McuError::EigenFailure)?;
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return Ok(s.clone());
    }
    let mut out = DMatrix::zeros(s.nrows(), s.ncols());
    for (idx, &l) in eig.eigenvalues.iter().enumerate() {
        if l > 0.0 {
            let v = eig.eigenvectors.column(idx);
            out.ger(l, &v, &v, 1.0);
        }
    }
    // symmetrize away rounding from the rank-1 accumulation
    let out_t = out.transpose();
    Ok((out + out_t) * 0.5)
}

fn min_eigenvalue(s: &DMatrix<f64>) -> Result<f64> {
    let eig = nalgebra::SymmetricEigen::try_new(s.clone(), f64::EPSILON, 100_000)
        .ok_or(McuError::EigenFailure)?;
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Pseudo-inverse factors of the constraint Gram matrix.
struct GramSolver {
    eigvecs: DMatrix<f64>,
    inv_eigvals: DVector<f64>,
}

impl GramSolver {
    fn new(gram: DMatrix<f64>) -> Result<Self> {
        let eig = nalgebra::SymmetricEigen::try_new(gram, f64::EPSILON, 100_000)
            .ok_or(McuError::EigenFailure)?;
        let lmax = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
        let tol = lmax * 1e-12;
        let inv = eig
            .eigenvalues
            .map(|l| if l > tol { 1.0 / l } else { 0.0 });
        Ok(Self {
            eigvecs: eig.eigenvectors,
            inv_eigvals: inv,
        })
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut coeffs = self.eigvecs.transpose() * rhs;
        coeffs.component_mul_assign(&self.inv_eigvals);
        &self.eigvecs * coeffs
    }
}

/// Affine-constraint projection workspace for one problem instance.
struct AffineProjector<'a> {
    constraints: &'a [(ConstraintMatrix, f64)],
    gram_solver: GramSolver,
    tau: f64,
    n: usize,
}

impl<'a> AffineProjector<'a> {
    fn new(constraints: &'a [(ConstraintMatrix, f64)], tau: f64, n: usize) -> Result<Self> {
        // constraint list augmented with the trace+slack row (index m)
        let m = constraints.len();
        let identity = ConstraintMatrix::Sparse((0..n).map(|i| (i, i, 1.0)).collect());
        let mut gram = DMatrix::zeros(m + 1, m + 1);
        for a in 0..m {
            for b in a..m {
                let v = constraint_inner(&constraints[a].0, &constraints[b].0, n, 0.0, 0.0);
                gram[(a, b)] = v;
                gram[(b, a)] = v;
            }
            let v = match &constraints[a].0 {
                ConstraintMatrix::AllOnes => n as f64,
                other => other.trace(),
            };
            gram[(a, m)] = v;
            gram[(m, a)] = v;
        }
        gram[(m, m)] = constraint_inner(&identity, &identity, n, 1.0, 1.0);
        Ok(Self {
            constraints,
            gram_solver: GramSolver::new(gram)?,
            tau,
            n,
        })
    }

    /// Project (v, v_s) onto {A_i(Q) = b_i, tr(Q) + s = tau}.
    fn project(&self, v: &DMatrix<f64>, v_s: f64) -> (DMatrix<f64>, f64) {
        let m = self.constraints.len();
        let mut resid = DVector::zeros(m + 1);
        for (idx, (a, b)) in self.constraints.iter().enumerate() {
            resid[idx] = a.apply(v) - b;
        }
        resid[m] = v.trace() + v_s - self.tau;
        let nu = self.gram_solver.solve(&resid);
        let mut q = v.clone();
        for (idx, (a, _)) in self.constraints.iter().enumerate() {
            a.add_scaled(&mut q, -nu[idx]);
        }
        for i in 0..self.n {
            q[(i, i)] -= nu[m];
        }
        let s = v_s - nu[m];
        (q, s)
    }
}

/// A * V for a structural constraint matrix and a dense n x r factor.
fn constraint_mul(a: &ConstraintMatrix, v: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, r) = (v.nrows(), v.ncols());
    let mut out = DMatrix::zeros(n, r);
    match a {
        ConstraintMatrix::AllOnes => {
            for c in 0..r {
                let colsum = v.column(c).sum();
                for i in 0..n {
                    out[(i, c)] = colsum;
                }
            }
        }
        ConstraintMatrix::Edge { i, j } => {
            for c in 0..r {
                let d = v[(*i, c)] - v[(*j, c)];
                out[(*i, c)] = d;
                out[(*j, c)] = -d;
            }
        }
        ConstraintMatrix::Sparse(entries) => {
            for &(i, j, val) in entries {
                for c in 0..r {
                    out[(i, c)] += val * v[(j, c)];
                    if i != j {
                        out[(j, c)] += val * v[(i, c)];
                    }
                }
            }
        }
    }
    out
}

/// Constraint gradient 2 w A V on the factor, stored structurally: the
/// dense m x (n r) Jacobian would dominate every refinement step, while
/// edge gradients touch two rows and the centering gradient is rank
/// one, so all the Gram and Schur entries reduce to O(r) dot products.
enum ConstraintGrad {
    /// +d on row i, -d on row j
    EdgeRows { i: usize, j: usize, d: DVector<f64> },
    /// col * row^T
    Rank1 { col: DVector<f64>, row: DVector<f64> },
    Dense(DMatrix<f64>),
}

impl ConstraintGrad {
    fn of(a: &ConstraintMatrix, w: f64, v: &DMatrix<f64>) -> Self {
        match a {
            ConstraintMatrix::Edge { i, j } => {
                let d = (v.row(*i) - v.row(*j)).transpose() * (2.0 * w);
                ConstraintGrad::EdgeRows { i: *i, j: *j, d }
            }
            ConstraintMatrix::AllOnes => {
                let n = v.nrows();
                let col = DVector::from_element(n, 2.0 * w);
                let row = v.row_sum().transpose();
                ConstraintGrad::Rank1 { col, row }
            }
            ConstraintMatrix::Sparse(_) => ConstraintGrad::Dense(constraint_mul(a, v) * (2.0 * w)),
        }
    }

    /// <grad, X> for a dense n x r matrix X.
    fn dot_mat(&self, x: &DMatrix<f64>) -> f64 {
        match self {
            ConstraintGrad::EdgeRows { i, j, d } => {
                (x.row(*i) - x.row(*j)).transpose().dot(d)
            }
            ConstraintGrad::Rank1 { col, row } => (col.transpose() * x * row)[(0, 0)],
            ConstraintGrad::Dense(g) => g.dot(x),
        }
    }

    /// X += coeff * grad.
    fn add_to(&self, x: &mut DMatrix<f64>, coeff: f64) {
        match self {
            ConstraintGrad::EdgeRows { i, j, d } => {
                let dt = d.transpose() * coeff;
                let mut ri = x.row_mut(*i);
                ri += &dt;
                let mut rj = x.row_mut(*j);
                rj -= &dt;
            }
            ConstraintGrad::Rank1 { col, row } => x.ger(coeff, col, row, 1.0),
            ConstraintGrad::Dense(g) => *x += g * coeff,
        }
    }
}

/// Pairwise Gram matrix <grad_a, P grad_b> (P = None means identity).
fn grad_gram(grads: &[ConstraintGrad], p: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    let m = grads.len();
    // P applied to the structural pieces, cached per constraint
    let p_cols: Vec<Option<DVector<f64>>> = grads
        .iter()
        .map(|g| match (g, p) {
            (ConstraintGrad::Rank1 { col, .. }, Some(p)) => Some(p * col),
            _ => None,
        })
        .collect();
    let p_dense: Vec<Option<DMatrix<f64>>> = grads
        .iter()
        .map(|g| match (g, p) {
            (ConstraintGrad::Dense(d), Some(p)) => Some(p * d),
            _ => None,
        })
        .collect();
    let entry = |a: usize, b: usize| -> f64 {
        let pab = |i: usize, k: usize| match p {
            Some(p) => p[(i, k)],
            None => (i == k) as usize as f64,
        };
        match (&grads[a], &grads[b]) {
            (
                ConstraintGrad::EdgeRows { i, j, d },
                ConstraintGrad::EdgeRows { i: i2, j: j2, d: d2 },
            ) => {
                let geom = pab(*i, *i2) - pab(*i, *j2) - pab(*j, *i2) + pab(*j, *j2);
                geom * d.dot(d2)
            }
            (ConstraintGrad::EdgeRows { i, j, d }, ConstraintGrad::Rank1 { col, row }) => {
                let pc = match &p_cols[b] {
                    Some(pc) => pc[*i] - pc[*j],
                    None => col[*i] - col[*j],
                };
                pc * d.dot(row)
            }
            (ConstraintGrad::EdgeRows { i, j, d }, ConstraintGrad::Dense(g)) => {
                let pg = p_dense[b].as_ref().unwrap_or(g);
                (pg.row(*i) - pg.row(*j)).transpose().dot(d)
            }
            (ConstraintGrad::Rank1 { col, row }, ConstraintGrad::Rank1 { col: c2, row: r2 }) => {
                let cc = match &p_cols[b] {
                    Some(pc) => col.dot(pc),
                    None => col.dot(c2),
                };
                cc * row.dot(r2)
            }
            (ConstraintGrad::Rank1 { col, row }, ConstraintGrad::Dense(g)) => {
                let pg = p_dense[b].as_ref().unwrap_or(g);
                (col.transpose() * pg * row)[(0, 0)]
            }
            (ConstraintGrad::Dense(g), ConstraintGrad::Dense(g2)) => {
                let pg = p_dense[b].as_ref().unwrap_or(g2);
                g.dot(pg)
            }
            // remaining combinations by symmetry of P
            _ => f64::NAN,
        }
    };
    let mut out = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in 0..m {
            let lhs_rank = match &grads[a] {
                ConstraintGrad::EdgeRows { .. } => 0,
                ConstraintGrad::Rank1 { .. } => 1,
                ConstraintGrad::Dense(_) => 2,
            };
            let rhs_rank = match &grads[b] {
                ConstraintGrad::EdgeRows { .. } => 0,
                ConstraintGrad::Rank1 { .. } => 1,
                ConstraintGrad::Dense(_) => 2,
            };
            if lhs_rank <= rhs_rank {
                let val = entry(a, b);
                out[(a, b)] = val;
                out[(b, a)] = val;
            }
        }
    }
    out
}

/// Weighted constraint system on a low-rank factor V with Q = V V^T.
/// Row weights balance the wide spread of constraint magnitudes (edge
/// distances vs the trace bound), which otherwise leaves the normal
/// system ill-conditioned.
struct FactorSystem {
    constraints: Vec<(ConstraintMatrix, f64)>,
    weights: Vec<f64>,
}

impl FactorSystem {
    /// `pin_trace` adjoins tr(Q) = tau as an equality: the optimum sits
    /// on the bound whenever the variance budget is active, and pinning
    /// it keeps the refined point feasible.
    fn new(problem: &SdpProblem, pin_trace: bool) -> Self {
        let n = problem.objective.nrows();
        let mut constraints = problem.equality_constraints.clone();
        if pin_trace {
            let ident: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
            constraints.push((ConstraintMatrix::Sparse(ident), problem.trace_bound));
        }
        let weights = constraints.iter().map(|(_, b)| 1.0 / (1.0 + b.abs())).collect();
        Self { constraints, weights }
    }

    /// tr(A * V V^T) evaluated directly on the factor rows, avoiding
    /// the n x n outer product.
    fn apply_factor(a: &ConstraintMatrix, v: &DMatrix<f64>) -> f64 {
        match a {
            ConstraintMatrix::AllOnes => v.row_sum().norm_squared(),
            ConstraintMatrix::Edge { i, j } => (v.row(*i) - v.row(*j)).norm_squared(),
            ConstraintMatrix::Sparse(entries) => entries
                .iter()
                .map(|&(i, j, val)| {
                    let d = v.row(i).dot(&v.row(j));
                    if i == j {
                        val * d
                    } else {
                        2.0 * val * d
                    }
                })
                .sum(),
        }
    }

    fn residual(&self, v: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.constraints.len(),
            self.constraints
                .iter()
                .zip(&self.weights)
                .map(|((a, b), w)| (Self::apply_factor(a, v) - b) * w),
        )
    }

    fn grads(&self, v: &DMatrix<f64>) -> Vec<ConstraintGrad> {
        self.constraints
            .iter()
            .zip(&self.weights)
            .map(|((a, _), w)| ConstraintGrad::of(a, *w, v))
            .collect()
    }

    /// Damped Gauss-Newton feasibility restoration on the factor. The
    /// minimum-norm step (via the m x m normal system) tolerates the
    /// rotational null space of the factorization. Returns the final
    /// max relative residual.
    fn restore(&self, v: &mut DMatrix<f64>, max_outer: usize) -> f64 {
        let m = self.constraints.len();
        let mut r = self.residual(v);
        let mut damping = 1e-10;
        for _ in 0..max_outer {
            if r.amax() < 1e-12 {
                break;
            }
            let grads = self.grads(v);
            let jjt = grad_gram(&grads, None);
            let mut accepted = false;
            for _ in 0..20 {
                let mut sys = jjt.clone();
                for i in 0..m {
                    sys[(i, i)] += damping * (1.0 + jjt[(i, i)]);
                }
                let w = match sys.cholesky() {
                    Some(ch) => ch.solve(&r),
                    None => {
                        damping *= 10.0;
                        continue;
                    }
                };
                let mut v_new = v.clone();
                for (a, grad) in grads.iter().enumerate() {
                    grad.add_to(&mut v_new, -w[a]);
                }
                let r_new = self.residual(&v_new);
                if r_new.norm() < r.norm() {
                    *v = v_new;
                    r = r_new;
                    damping = (damping * 0.25).max(1e-14);
                    accepted = true;
                    break;
                }
                damping *= 10.0;
            }
            if !accepted {
                break;
            }
        }
        r.amax()
    }
}

/// Truncate Q to its numerical rank, over-parameterizing past sqrt(2m):
/// at the bare rank Gauss-Newton regularly stalls in spurious
/// stationary points, while the widened factorization space is benign.
/// The extra columns get tiny deterministic noise so the Jacobian sees
/// the added directions.
fn factorize(problem: &SdpProblem, q: &DMatrix<f64>, pad: bool) -> Option<DMatrix<f64>> {
    let n = q.nrows();
    let eig = nalgebra::SymmetricEigen::try_new(q.clone(), f64::EPSILON, 100_000)?;
    let lmax = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    if lmax <= 0.0 {
        return None;
    }
    let keep: Vec<usize> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > 1e-11 * lmax)
        .collect();
    let m_total = problem.equality_constraints.len() + 1;
    let rank = if pad {
        keep.len()
            .max((2.0 * m_total as f64).sqrt().ceil() as usize + 2)
            .min(n)
    } else {
        keep.len().max(1)
    };
    let mut v = DMatrix::zeros(n, rank);
    for (c, &idx) in keep.iter().enumerate() {
        let s = eig.eigenvalues[idx].sqrt();
        for i in 0..n {
            v[(i, c)] = eig.eigenvectors[(i, idx)] * s;
        }
    }
    if rank > keep.len() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x706f_6c69);
        let amp = 1e-6 * lmax.sqrt();
        for c in keep.len()..rank {
            for i in 0..n {
                v[(i, c)] = amp * (rng.gen::<f64>() - 0.5);
            }
        }
    }
    Some(v)
}

fn symmetrized_outer(v: &DMatrix<f64>) -> DMatrix<f64> {
    let q = v * v.transpose();
    let qt = q.transpose();
    (q + qt) * 0.5
}

/// Feasible SQP ascent on the factor. Both the objective and every
/// constraint are quadratic forms in V, so the Lagrangian Hessian is
/// I_r (x) M with M = 2(C - sum lambda_i w_i A_i); shifting M to be
/// negative definite lets the KKT step be solved through an n x n
/// factorization and an m x m Schur complement instead of an (nr)^2
/// system. At the SDP optimum M equals minus twice the dual slack
/// matrix, so the required shift vanishes and the step turns into a
/// true Newton step. Returns true when a stationary point was reached.
fn ascend_factor(
    problem: &SdpProblem,
    sys: &FactorSystem,
    v: &mut DMatrix<f64>,
    max_steps: usize,
) -> bool {
    let m = sys.constraints.len();
    let obj_of =
        |v: &DMatrix<f64>| -> f64 { (v.transpose() * &problem.objective * v).trace() };
    let mut obj = obj_of(v);
    let mut slow_steps = 0usize;
    for _ in 0..max_steps {
        let grad = &problem.objective * &*v * 2.0;
        let cgrads = sys.grads(v);
        // least-squares multipliers and the projected gradient
        let jjt = grad_gram(&cgrads, None);
        let jg = DVector::from_iterator(m, cgrads.iter().map(|ca| ca.dot_mat(&grad)));
        let mut normal = jjt.clone();
        for i in 0..m {
            normal[(i, i)] += 1e-10 * (1.0 + jjt[(i, i)]);
        }
        let lambda = match normal.cholesky() {
            Some(ch) => ch.solve(&jg),
            None => return false,
        };
        let mut gt = grad.clone();
        for a in 0..m {
            cgrads[a].add_to(&mut gt, -lambda[a]);
        }
        if gt.norm() <= 1e-9 * (1.0 + grad.norm()) {
            return true;
        }

        // curvature matrix of the Lagrangian
        let mut curv = problem.objective.clone() * 2.0;
        for a in 0..m {
            sys.constraints[a]
                .0
                .add_scaled(&mut curv, -2.0 * sys.weights[a] * lambda[a]);
        }
        let lmax = match nalgebra::SymmetricEigen::try_new(curv.clone(), f64::EPSILON, 100_000) {
            Some(eig) => eig.eigenvalues.iter().copied().fold(f64::MIN, f64::max),
            None => return false,
        };
        let scale = curv.norm().max(1.0);
        let mut shift = lmax.max(0.0) + 1e-9 * scale;
        let mut accepted = false;
        for _ in 0..12 {
            // N = shift * I - M is positive definite; the KKT step is
            //   S mu = -J N^{-1} gt,  D = N^{-1} (gt + sum mu_a dC_a)
            let mut nmat = -&curv;
            for i in 0..nmat.nrows() {
                nmat[(i, i)] += shift;
            }
            let nchol = match nmat.cholesky() {
                Some(ch) => ch,
                None => {
                    shift = shift * 10.0 + 1e-9 * scale;
                    continue;
                }
            };
            let p = nchol.inverse();
            let ygt = &p * &gt;
            let mut schur = grad_gram(&cgrads, Some(&p));
            for i in 0..m {
                schur[(i, i)] += 1e-12 * (1.0 + schur[(i, i)]);
            }
            let rhs = DVector::from_iterator(m, cgrads.iter().map(|ca| -ca.dot_mat(&ygt)));
            let mu = match schur.cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => {
                    shift = shift * 10.0 + 1e-9 * scale;
                    continue;
                }
            };
            let mut step = gt.clone();
            for a in 0..m {
                cgrads[a].add_to(&mut step, mu[a]);
            }
            let dir = &p * step;

            // the shift is a global curvature bound, so along flatter
            // directions the unit step is overly timid: probe a few
            // longer steps first
            let mut t = 16.0;
            for _ in 0..8 {
                // the step is first-order tangent, so a few restoration
                // sweeps absorb the O(t^2) constraint drift
                let mut trial = &*v + &dir * t;
                let rel = sys.restore(&mut trial, 8);
                if rel < 1e-8 && trial.norm_squared() <= problem.trace_bound * (1.0 + 1e-8) {
                    let new_obj = obj_of(&trial);
                    if new_obj > obj + 1e-12 * (1.0 + obj.abs()) {
                        // stop once gains decay below useful precision
                        if new_obj - obj < 1e-7 * (1.0 + obj.abs()) {
                            slow_steps += 1;
                        } else {
                            slow_steps = 0;
                        }
                        *v = trial;
                        obj = new_obj;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.25;
            }
            if accepted {
                break;
            }
            shift = shift * 10.0 + 1e-9 * scale;
        }
        if slow_steps >= 3 {
            return true;
        }
        if std::env::var("MCU_ASCENT_DEBUG").is_ok() {
            eprintln!(
                "ascent: obj {obj:.8e} lmax {lmax:.3e} shift {shift:.3e} |gt| {:.3e} accepted {accepted}",
                gt.norm()
            );
        }
        if !accepted {
            return false;
        }
    }
    false
}

/// Project Q onto the feasible set through its low-rank factor and run
/// the ascent phase. Returns the refined point, its objective and
/// whether the ascent reached a stationary point.
fn refine(
    problem: &SdpProblem,
    q: &DMatrix<f64>,
    ascent_steps: usize,
    restore_outer: usize,
) -> Option<(DMatrix<f64>, f64, bool)> {
    let pin = q.trace() >= problem.trace_bound * (1.0 - 1e-3);
    let sys = FactorSystem::new(problem, pin);
    let mut v = factorize(problem, q, true)?;
    let rr = sys.restore(&mut v, restore_outer);
    if std::env::var("MCU_REFINE_DEBUG").is_ok() {
        eprintln!("refine: pin {pin} rank {} restore {rr:.3e}", v.ncols());
    }
    // the caller re-checks feasibility against its own tolerance, so
    // the gate here only has to reject hopeless seeds
    if rr >= 1e-6 {
        return None;
    }
    let mut stationary = if ascent_steps > 0 {
        ascend_factor(problem, &sys, &mut v, ascent_steps)
    } else {
        false
    };
    let mut refined = symmetrized_outer(&v);
    let mut obj = (problem.objective.transpose() * &refined).trace();
    if ascent_steps > 0 {
        // second round at the bare numerical rank: without the padding
        // columns the Lagrangian curvature can vanish on the solution
        // face and the step becomes a true Newton step
        if let Some(mut v2) = factorize(problem, &refined, false) {
            if sys.restore(&mut v2, 20) < 1e-6 {
                let stat2 = ascend_factor(problem, &sys, &mut v2, ascent_steps);
                let cand = symmetrized_outer(&v2);
                let cobj = (problem.objective.transpose() * &cand).trace();
                if cobj > obj {
                    refined = cand;
                    obj = cobj;
                    stationary = stat2;
                }
            }
        }
    }
    Some((refined, obj, stationary))
}

/// Primal-dual interior-point solve (HKM direction, infeasible start)
/// of the slack-extended problem, in scaled units. The problem sizes
/// here are small enough that dense Schur-complement iterations cost
/// milliseconds, and the quadratic local convergence reaches gaps the
/// splitting scheme only crawls towards. Returns Q (the slack row
/// stripped) or None when an iteration loses positive definiteness.
fn solve_interior(
    constraints: &[(ConstraintMatrix, f64)],
    tau: f64,
    c: &DMatrix<f64>,
    scale: f64,
) -> Option<DMatrix<f64>> {
    let n = c.nrows();
    let nn = n + 1; // extra diagonal slot holds the trace slack
    let m = constraints.len() + 1;

    // dense constraint matrices on the extended block; minimize <-C, X>
    let mut amats: Vec<DMatrix<f64>> = Vec::with_capacity(m);
    let mut b = DVector::zeros(m);
    for (idx, (a, bi)) in constraints.iter().enumerate() {
        let mut base = DMatrix::zeros(n, n);
        a.add_scaled(&mut base, 1.0);
        let mut ext = DMatrix::zeros(nn, nn);
        ext.view_mut((0, 0), (n, n)).copy_from(&base);
        amats.push(ext);
        b[idx] = *bi;
    }
    let mut tr_ext = DMatrix::zeros(nn, nn);
    for i in 0..nn {
        tr_ext[(i, i)] = 1.0;
    }
    amats.push(tr_ext);
    b[m - 1] = tau;
    let mut cext = DMatrix::zeros(nn, nn);
    cext.view_mut((0, 0), (n, n)).copy_from(&(-c));

    let mut x = DMatrix::<f64>::identity(nn, nn) * (tau / nn as f64).max(1.0);
    let mut s = DMatrix::<f64>::identity(nn, nn);
    let mut y = DVector::<f64>::zeros(m);

    let c_norm = 1.0 + cext.norm();
    // per-constraint relative residual, measured as it would be in the
    // caller's raw units so a large trace row cannot mask edge errors
    let rel_primal = |ax: &DVector<f64>| -> f64 {
        (0..m)
            .map(|i| (ax[i] - b[i]).abs() / (1.0 / scale + b[i].abs()))
            .fold(0.0f64, f64::max)
    };
    // largest alpha <= 0.98 keeping w + alpha * dw positive definite
    let step_len = |w: &DMatrix<f64>, dw: &DMatrix<f64>| -> f64 {
        let mut alpha = 0.98;
        for _ in 0..60 {
            if (w + dw * alpha).clone().cholesky().is_some() {
                return alpha;
            }
            alpha *= 0.8;
        }
        0.0
    };

    // near the (low-rank) optimum the Schur system degrades, so track
    // the best-scored iterate and return it once progress stalls
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    let finish = |best: Option<(f64, DMatrix<f64>)>| -> Option<DMatrix<f64>> {
        let (score, x) = best?;
        // a near-optimal point still serves as a polish seed: the
        // factor refinement snaps feasibility and ascends the rest
        if score > 5e-4 {
            return None;
        }
        let q = x.view((0, 0), (n, n)).into_owned();
        let qt = q.transpose();
        Some((q + qt) * 0.5)
    };
    let mut last_alpha = 1.0f64;
    let mut score_best = f64::INFINITY;
    let mut stall = 0usize;
    for _ in 0..300 {
        let mu = x.dot(&s) / nn as f64;
        let ax = DVector::from_iterator(m, amats.iter().map(|a| a.dot(&x)));
        let rp = &b - &ax;
        let mut rd = cext.clone() - &s;
        for (idx, a) in amats.iter().enumerate() {
            rd -= a * y[idx];
        }
        let obj = cext.dot(&x).abs();
        let relp = rel_primal(&ax);
        let score = mu / (1.0 + obj) + relp + rd.norm() / c_norm;
        if best.as_ref().map_or(true, |(s0, _)| score < *s0) {
            best = Some((score, x.clone()));
        }
        if score < 0.99 * score_best {
            score_best = score;
            stall = 0;
        } else {
            stall += 1;
            if stall >= 15 {
                break;
            }
        }
        if std::env::var("MCU_IPM_DEBUG").is_ok() {
            eprintln!(
                "ipm: mu {mu:.3e} relp {relp:.3e} rd {:.3e} obj {:.8e}",
                rd.norm(),
                -cext.dot(&x)
            );
        }
        if relp <= 1e-9 && rd.norm() <= 1e-8 * c_norm && mu <= 1e-9 * (1.0 + obj) {
            break;
        }

        let s_inv = match s.clone().cholesky() {
            Some(ch) => ch.inverse(),
            None => break,
        };
        // recenter aggressively while steps are blocked, push towards
        // the solution once full steps go through
        let sigma = if last_alpha < 0.2 {
            0.9
        } else if last_alpha < 0.5 {
            0.5
        } else if last_alpha < 0.9 {
            0.3
        } else {
            0.1
        };
        // Schur complement B[a][b] = <A_a, S^-1 A_b X> (nonsymmetric in
        // general; solved by LU)
        let tmats: Vec<DMatrix<f64>> = amats.iter().map(|a| &s_inv * a * &x).collect();
        let mut schur = DMatrix::zeros(m, m);
        for bi in 0..m {
            for ai in 0..m {
                schur[(ai, bi)] = amats[ai].dot(&tmats[bi]);
            }
        }
        let srx = &s_inv * &rd * &x;
        let rhs = DVector::from_iterator(
            m,
            (0..m).map(|a| {
                rp[a] - sigma * mu * amats[a].dot(&s_inv) + ax[a] + amats[a].dot(&srx)
            }),
        );
        let dy = match schur.lu().solve(&rhs) {
            Some(dy) => dy,
            None => break,
        };
        let mut ds = rd.clone();
        for (idx, a) in amats.iter().enumerate() {
            ds -= a * dy[idx];
        }
        let dx_raw = &s_inv * sigma * mu - &x - &s_inv * &ds * &x;
        let dx = (&dx_raw + dx_raw.transpose()) * 0.5;

        let ap = step_len(&x, &dx);
        let ad = step_len(&s, &ds);
        if ap <= 0.0 || ad <= 0.0 {
            break;
        }
        last_alpha = ap.min(ad);
        x += &dx * ap;
        y += &dy * ad;
        s += &ds * ad;
    }
    finish(best)
}

fn max_relative_residual(problem: &SdpProblem, q: &DMatrix<f64>) -> f64 {
    problem
        .equality_constraints
        .iter()
        .map(|(a, b)| (a.apply(q) - b).abs() / (1.0 + b.abs()))
        .fold(0.0f64, f64::max)
}

/// Solve the SDP by ADMM. Returns the affine-feasible iterate, so the
/// equality residuals are at rounding level and convergence quality
/// shows up in the PSD violation and the dual residual.
pub fn solve(problem: &SdpProblem, options: &SolverOptions) -> Result<SdpSolution> {
    let n = problem.objective.nrows();
    let tau = problem.trace_bound;
    if !(tau > 0.0) {
        return Err(McuError::Config(format!("trace bound {tau} must be positive")));
    }

    // rescale the variable space to unit size: ADMM's progress per
    // iteration is set by ||C||/rho against the magnitude of Q, so raw
    // problems with large Gram entries would otherwise creep
    let b_sum: f64 = problem
        .equality_constraints
        .iter()
        .map(|(_, b)| b.abs())
        .sum();
    let b_count = problem
        .equality_constraints
        .iter()
        .filter(|(_, b)| b.abs() > 0.0)
        .count();
    let b_scale = if b_count > 0 && b_sum > 0.0 {
        b_sum / b_count as f64
    } else {
        1.0
    };
    // when the warm start is much larger than the constraint targets
    // (active variance budget on a disconnected graph), scale to the
    // iterate magnitude instead so per-iteration progress matches it
    let scale = match &problem.initial_point {
        Some(q0) => b_scale.max((q0.trace() / n as f64).abs()),
        None => b_scale,
    };
    let scaled_constraints: Vec<(ConstraintMatrix, f64)> = problem
        .equality_constraints
        .iter()
        .map(|(a, b)| (a.clone(), b / scale))
        .collect();
    let tau_s = tau / scale;

    let projector = AffineProjector::new(&scaled_constraints, tau_s, n)?;

    // normalize the objective so rho scaling is data-independent;
    // the argmax is invariant under positive scaling
    let c_norm = problem.objective.norm();
    let c_scaled = if c_norm > 0.0 {
        &problem.objective / c_norm
    } else {
        problem.objective.clone()
    };

    // warm start on the cone side (in scaled units)
    let mut z = match &problem.initial_point {
        Some(q0) => {
            if q0.trace() > tau * (1.0 + 1e-6) {
                return Err(McuError::InfeasibleStart);
            }
            q0 / scale
        }
        None => DMatrix::zeros(n, n),
    };
    let mut z_s = (tau_s - z.trace()).max(0.0);
    let mut u = DMatrix::zeros(n, n);
    let mut u_s = 0.0;
    let mut rho = 1.0f64;

    let mut q = z.clone();
    let mut converged = false;
    let mut iterations = 0;
    let mut last_objective = f64::NAN;
    let mut stall_count = 0usize;

    // best feasible rounded point seen so far (original units); its
    // objective can never exceed the true optimum, so keeping the max
    // over feasible roundings is always sound
    let mut best_polished: Option<(DMatrix<f64>, f64)> = None;
    let mut polish_stable = false;
    let mut plateau_count = 0usize;

    // interior-point presolve: on these problem sizes it reaches the
    // optimum in milliseconds-to-seconds, after which the splitting
    // loop only needs to confirm the plateau
    let accept = |cand: DMatrix<f64>, best: &mut Option<(DMatrix<f64>, f64)>| -> bool {
        let obj = (problem.objective.transpose() * &cand).trace();
        if max_relative_residual(problem, &cand) <= options.eps_constraint
            && cand.trace() <= tau * (1.0 + 1e-8)
            && best.as_ref().map_or(true, |(_, o)| obj > *o)
        {
            *best = Some((cand, obj));
            true
        } else {
            false
        }
    };
    let ipm = solve_interior(&scaled_constraints, tau_s, &c_scaled, scale);
    if std::env::var("MCU_SOLVE_DEBUG").is_ok() {
        eprintln!("solve: ipm returned {}", ipm.is_some());
    }
    if let Some(qi) = ipm {
        let qi = &qi * scale;
        if std::env::var("MCU_SOLVE_DEBUG").is_ok() {
            eprintln!(
                "solve: ipm raw obj {:.6e} res {:.3e} tr {:.6e} (tau {:.6e})",
                (problem.objective.transpose() * &qi).trace(),
                max_relative_residual(problem, &qi),
                qi.trace(),
                tau
            );
        }
        // snap the interior iterate's equality residuals to rounding
        // level through the factor machinery
        let r = refine(problem, &qi, 20, 50);
        if std::env::var("MCU_SOLVE_DEBUG").is_ok() {
            eprintln!(
                "solve: ipm refine {:?}",
                r.as_ref().map(|(p, o, _)| (*o, max_relative_residual(problem, p)))
            );
        }
        if let Some((p, _, _)) = r {
            accept(p, &mut best_polished);
        }
        accept(qi, &mut best_polished);
        if std::env::var("MCU_SOLVE_DEBUG").is_ok() {
            eprintln!("solve: best after ipm {:?}", best_polished.as_ref().map(|(_, o)| *o));
        }
    }

    // snap the warm start onto the constraint manifold and ascend, so
    // ADMM starts from a feasible point that is already locally optimal
    if problem.initial_point.is_some() {
        if best_polished.is_none() {
            let q0 = &z * scale;
            if let Some((p, pobj, _)) = refine(problem, &q0, 150, 60) {
                if max_relative_residual(problem, &p) <= options.eps_constraint
                    && p.trace() <= tau * (1.0 + 1e-8)
                {
                    best_polished = Some((p.clone(), pobj));
                }
            }
        }
        if let Some((p, _)) = &best_polished {
            z = p / scale;
            z_s = (tau_s - z.trace()).max(0.0);
        }
    }

    for iter in 0..options.max_iterations {
        iterations = iter + 1;

        // objective step + affine projection
        let v = &z - &u + &c_scaled * (1.0 / rho);
        let v_s = z_s - u_s;
        let (q_new, s) = projector.project(&v, v_s);
        q = q_new;

        // cone projection with over-relaxation
        let alpha = 1.6;
        let q_hat = &q * alpha + &z * (1.0 - alpha);
        let s_hat = alpha * s + (1.0 - alpha) * z_s;
        let z_prev = z.clone();
        let z_s_prev = z_s;
        z = project_psd(&(&q_hat + &u))?;
        z_s = (s_hat + u_s).max(0.0);

        // dual update
        u += &q_hat - &z;
        u_s += s_hat - z_s;

        let r_pri = ((&q - &z).norm_squared() + (s - z_s).powi(2)).sqrt();
        let r_dual = rho * ((&z - &z_prev).norm_squared() + (z_s - z_s_prev).powi(2)).sqrt();

        let tr_q = q.trace().abs();
        let pri_tol = options.eps_psd * (1.0 + tr_q / n as f64);
        let dual_tol = options.eps_dual * (1.0 + z.norm());
        if r_pri <= pri_tol && r_dual <= dual_tol {
            converged = true;
            break;
        }

        // stall detection on the objective
        let obj = (problem.objective.transpose() * &q).trace();
        if last_objective.is_finite() {
            let change = (obj - last_objective).abs() / (1.0 + obj.abs());
            if change < 1e-12 {
                stall_count += 1;
                if stall_count >= 500 {
                    break;
                }
            } else {
                stall_count = 0;
            }
        }
        last_objective = obj;

        if options.diagnostic_every > 0 && iter % options.diagnostic_every == 0 {
            eprintln!(
                "iter {iter}: r_pri={r_pri:.3e} r_dual={r_dual:.3e} rho={rho:.3e} obj={obj:.6e}"
            );
        }

        // periodic refinement (original units): round the iterate, keep
        // ascending from the incumbent, and exit once the best feasible
        // objective stops improving between checks
        if iter % 2000 == 1999 {
            let before = best_polished.as_ref().map(|(_, o)| *o);
            let q_orig = &q * scale;
            if let Some((p, pobj, _)) = refine(problem, &q_orig, 40, 12) {
                if max_relative_residual(problem, &p) <= options.eps_constraint
                    && p.trace() <= tau * (1.0 + 1e-8)
                    && best_polished.as_ref().map_or(true, |(_, o)| pobj > *o)
                {
                    best_polished = Some((p, pobj));
                }
            }
            if let Some((bp, bobj)) = best_polished.clone() {
                if let Some((p2, pobj2, _)) = refine(problem, &bp, 60, 10) {
                    if max_relative_residual(problem, &p2) <= options.eps_constraint
                        && p2.trace() <= tau * (1.0 + 1e-8)
                        && pobj2 > bobj
                    {
                        best_polished = Some((p2, pobj2));
                    }
                }
            }
            if std::env::var("MCU_SOLVE_DEBUG").is_ok() {
                eprintln!(
                    "refine @ iter {iter}: best {:?} (was {:?})",
                    best_polished.as_ref().map(|(_, o)| *o),
                    before
                );
            }
            if let (Some(b0), Some((_, b1))) = (before, best_polished.as_ref()) {
                if (b1 - b0).abs() <= 1e-5 * (1.0 + b1.abs()) {
                    plateau_count += 1;
                    if plateau_count >= 2 {
                        polish_stable = true;
                        break;
                    }
                } else {
                    plateau_count = 0;
                }
            }
        }

        // residual balancing
        if iter % 25 == 24 {
            if r_pri > 2.0 * r_dual {
                rho *= 5.0;
                u *= 0.2;
                u_s *= 0.2;
            } else if r_dual > 2.0 * r_pri {
                rho *= 0.2;
                u *= 5.0;
                u_s *= 5.0;
            }
        }
    }

    // back to original units; enforce the trace bound exactly if the
    // slack came out slightly negative
    let mut q = q * scale;
    let tr_q = q.trace();
    if tr_q > tau {
        q *= tau / tr_q;
    }

    // final rounding: the splitting iterate carries a small PSD
    // violation, so truncate to the numerical rank, restore the
    // equality constraints exactly on the factor and ascend
    let mut polish_ok = polish_stable;
    if let Some((polished, pobj, _)) = refine(problem, &q, 100, 100) {
        if max_relative_residual(problem, &polished) <= options.eps_constraint
            && polished.trace() <= tau * (1.0 + 1e-8)
        {
            if best_polished.as_ref().map_or(true, |(_, o)| pobj > *o) {
                best_polished = Some((polished, pobj));
            }
            polish_ok = true;
        }
    }
    // prefer the best exactly-feasible rounded point unless the raw
    // iterate both passed the ADMM tolerances and scores higher
    if let Some((p, pobj)) = &best_polished {
        let iterate_obj = (problem.objective.transpose() * &q).trace();
        let iterate_ok = converged && max_relative_residual(problem, &q) <= options.eps_constraint;
        if !(iterate_ok && iterate_obj > *pobj) {
            q = p.clone();
        }
        polish_ok = true;
    }

    let primal_residual = max_relative_residual(problem, &q);
    let psd_violation = (-min_eigenvalue(&q)?).max(0.0);
    let objective_value = (problem.objective.transpose() * &q).trace();
    let eps_psd_scaled = options.eps_psd * (1.0 + q.trace() / n as f64);
    let converged = (converged || polish_ok)
        && primal_residual <= options.eps_constraint
        && psd_violation <= eps_psd_scaled;

    Ok(SdpSolution {
        q,
        objective_value,
        primal_residual,
        psd_violation,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};

    fn toy_problem(objective: DMatrix<f64>) -> SdpProblem {
        SdpProblem {
            objective,
            equality_constraints: vec![
                (ConstraintMatrix::AllOnes, 0.0),
                (ConstraintMatrix::Edge { i: 0, j: 1 }, 4.0),
            ],
            trace_bound: 100.0,
            initial_point: Some(dmatrix![1.0, -1.0; -1.0, 1.0]),
        }
    }

    #[test]
    fn two_point_instance_is_forced() {
        // centering + one edge with D=4 force Q = [[1,-1],[-1,1]]
        let sol = solve(&toy_problem(dmatrix![1.0, 0.0; 0.0, 0.0]), &SolverOptions::default())
            .unwrap();
        assert!(sol.converged);
        let expect = dmatrix![1.0, -1.0; -1.0, 1.0];
        assert!((&sol.q - &expect).abs().max() < 1e-5);
    }

    #[test]
    fn zero_objective_returns_feasible_point() {
        let sol = solve(&toy_problem(DMatrix::zeros(2, 2)), &SolverOptions::default()).unwrap();
        assert!(sol.primal_residual <= 1e-6);
        assert_relative_eq!(sol.objective_value, 0.0);
    }

    #[test]
    fn objective_scaling_invariance() {
        let a = solve(&toy_problem(dmatrix![2.0, 1.0; 1.0, 0.5]), &SolverOptions::default())
            .unwrap();
        let b = solve(
            &toy_problem(dmatrix![200.0, 100.0; 100.0, 50.0]),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!((&a.q - &b.q).abs().max() < 1e-5);
    }

    #[test]
    fn infeasible_start_rejected() {
        let mut p = toy_problem(DMatrix::zeros(2, 2));
        p.trace_bound = 1.0;
        assert!(matches!(
            solve(&p, &SolverOptions::default()),
            Err(McuError::InfeasibleStart)
        ));
    }

    #[test]
    fn project_psd_diag() {
        let s = dmatrix![3.0, 0.0; 0.0, -2.0];
        let p = project_psd(&s).unwrap();
        assert!((&p - dmatrix![3.0, 0.0; 0.0, 0.0]).abs().max() < 1e-12);
    }

    #[test]
    fn project_psd_noop_on_psd() {
        let a = dmatrix![2.0, 1.0; 1.0, 2.0];
        let p = project_psd(&a).unwrap();
        assert!((&p - &a).abs().max() < 1e-12);
    }

    #[test]
    fn project_psd_random_probe_optimality() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let raw = DMatrix::from_fn(8, 8, |_, _| rng.gen_range(-1.0..1.0));
        let s = (&raw + raw.transpose()) * 0.5;
        let p = project_psd(&s).unwrap();
        let best = (&p - &s).norm();
        // p must beat 1000 random PSD perturbations of itself
        for _ in 0..1000 {
            let noise = DMatrix::from_fn(8, 8, |_, _| rng.gen_range(-0.05..0.05));
            let cand = project_psd(&(&p + (&noise + noise.transpose()) * 0.5)).unwrap();
            assert!((&cand - &s).norm() >= best - 1e-9);
        }
    }

    #[test]
    fn constraint_gram_inner_products() {
        // spot-check the structural inner products against dense algebra
        let n = 4;
        let ones = DMatrix::from_element(n, n, 1.0);
        let mut e01 = DMatrix::zeros(n, n);
        e01[(0, 0)] = 1.0;
        e01[(1, 1)] = 1.0;
        e01[(0, 1)] = -1.0;
        e01[(1, 0)] = -1.0;
        let mut e12 = DMatrix::zeros(n, n);
        e12[(1, 1)] = 1.0;
        e12[(2, 2)] = 1.0;
        e12[(1, 2)] = -1.0;
        e12[(2, 1)] = -1.0;

        let ca = ConstraintMatrix::AllOnes;
        let c01 = ConstraintMatrix::Edge { i: 0, j: 1 };
        let c12 = ConstraintMatrix::Edge { i: 1, j: 2 };

        let dense = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a.transpose() * b).trace();
        assert_relative_eq!(constraint_inner(&ca, &ca, n, 0.0, 0.0), dense(&ones, &ones));
        assert_relative_eq!(constraint_inner(&ca, &c01, n, 0.0, 0.0), dense(&ones, &e01));
        assert_relative_eq!(constraint_inner(&c01, &c12, n, 0.0, 0.0), dense(&e01, &e12));
        assert_relative_eq!(constraint_inner(&c01, &c01, n, 0.0, 0.0), dense(&e01, &e01));
    }

    #[test]
    fn mvu_like_instance_satisfies_constraints() {
        // random centered responses, identity objective
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let raw = DMatrix::from_fn(8, 3, |_, _| rng.gen_range(-1.0..1.0));
        let y = crate::data::center_scale_responses(&raw, 3, 1).unwrap();
        let g = crate::data::gram(&y).values;
        let graph = crate::graph::build_knn_graph(&y, 2, crate::graph::NeighborRule::Union)
            .unwrap();
        let mut constraints = vec![(ConstraintMatrix::AllOnes, 0.0)];
        for &(i, j) in graph.edges.keys() {
            let b = g[(i, i)] + g[(j, j)] - 2.0 * g[(i, j)];
            constraints.push((ConstraintMatrix::Edge { i, j }, b));
        }
        let problem = SdpProblem {
            objective: DMatrix::identity(8, 8),
            equality_constraints: constraints,
            trace_bound: g.trace() * 100.0,
            initial_point: Some(g.clone()),
        };
        let sol = solve(&problem, &SolverOptions::default()).unwrap();
        assert!(sol.converged, "residual {}", sol.primal_residual);
        // monotone improvement over the feasible start
        let obj0 = g.trace();
        assert!(sol.objective_value >= obj0 - 1e-6 * (1.0 + obj0.abs()));
        // edge isometry on the solution
        for &(i, j) in graph.edges.keys() {
            let lhs = sol.q[(i, i)] + sol.q[(j, j)] - 2.0 * sol.q[(i, j)];
            let rhs = g[(i, i)] + g[(j, j)] - 2.0 * g[(i, j)];
            assert!((lhs - rhs).abs() <= 1e-5 * (1.0 + rhs.abs()));
        }
        assert!(sol.q.sum().abs() <= 1e-6 * sol.q.trace());
    }
}
