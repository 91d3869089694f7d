//! Assembles MCU and MVU programs from data, recovers embeddings from
//! the solved Gram matrix, selects the reduced dimension and provides
//! the PCA baseline.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{CovariateMatrix, GramMatrix, ResponseMatrix};
use crate::error::{McuError, Result};
use crate::graph::{NeighborGraph, NeighborRule};
use crate::sdp::{ConstraintMatrix, SdpProblem, SdpSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Mcu,
    Mvu,
    Pca,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Mcu => "mcu",
            Method::Mvu => "mvu",
            Method::Pca => "pca",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s.to_ascii_lowercase().as_str() {
            "mcu" => Ok(Method::Mcu),
            "mvu" => Ok(Method::Mvu),
            "pca" => Ok(Method::Pca),
            other => Err(McuError::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Requested reduced dimension: explicit, or selected by Otsu
/// thresholding of the log eigenvalue spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimensionChoice {
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnfoldConfig {
    pub k: usize,
    /// Variance-budget multiplier alpha >= 1; the trace bound is
    /// (N-1) * alpha * m_tilde.
    pub alpha: f64,
    pub m_tilde: DimensionChoice,
    pub rule: NeighborRule,
    pub method: Method,
}

impl Default for UnfoldConfig {
    fn default() -> Self {
        Self {
            k: 4,
            alpha: 100_000.0,
            m_tilde: DimensionChoice::Fixed(2),
            rule: NeighborRule::Union,
            method: Method::Mcu,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Embedding {
    /// N x m_tilde embedded coordinates.
    pub y_tilde: DMatrix<f64>,
    /// Full nonincreasing eigenvalue spectrum (clamped at 0).
    pub eigenvalues: Vec<f64>,
    pub m_tilde: usize,
    pub method: Method,
    /// Set when m_tilde exceeded the count of numerically nonzero
    /// eigenvalues.
    pub rank_deficient: bool,
}

fn edge_constraints(graph: &NeighborGraph, g: &GramMatrix) -> Vec<(ConstraintMatrix, f64)> {
    let gm = &g.values;
    let mut constraints = vec![(ConstraintMatrix::AllOnes, 0.0)];
    for &(i, j) in graph.edges.keys() {
        let b = gm[(i, i)] + gm[(j, j)] - 2.0 * gm[(i, j)];
        constraints.push((ConstraintMatrix::Edge { i, j }, b));
    }
    constraints
}

fn trace_bound(n: usize, alpha: f64, m_tilde: usize, g: &GramMatrix) -> f64 {
    let tau = (n as f64 - 1.0) * alpha * m_tilde as f64;
    let tr_g = g.values.trace();
    if tr_g > tau {
        // keep the centered Gram feasible as a warm start
        eprintln!(
            "warning: trace bound {tau:.3e} excludes the feasible start (tr G = {tr_g:.3e}); raising it"
        );
        tr_g * (1.0 + 1e-9)
    } else {
        tau
    }
}

/// Warm start for the unfolding SDP. Starts from the centered Gram G,
/// which satisfies the edge and centering constraints exactly. When the
/// neighbor graph is disconnected the optimum pushes the components
/// apart until the variance budget binds, so the remaining trace budget
/// is spent on a component-separation term aligned with the objective's
/// dominant direction; a per-component constant shift leaves every edge
/// constraint untouched, so the warm start stays exactly feasible.
fn warm_start_gram(
    graph: &NeighborGraph,
    g: &GramMatrix,
    objective: &DMatrix<f64>,
    tau: f64,
) -> DMatrix<f64> {
    let n = graph.n;
    let components = crate::graph::connected_components(graph);
    let mut giso = g.values.clone();
    let tr = giso.trace();
    if tr > 0.99 * tau {
        return giso;
    }

    // disconnected graphs: spend the remaining budget separating the
    // components along the objective's best direction in the span of
    // centered component indicators (edge constraints are untouched)
    if components.len() > 1 {
        let c = components.len();
        let mut basis = DMatrix::zeros(n, c - 1);
        for (ci, comp) in components.iter().take(c - 1).enumerate() {
            let frac = comp.len() as f64 / n as f64;
            for i in 0..n {
                basis[(i, ci)] = if comp.contains(&i) { 1.0 - frac } else { -frac };
            }
        }
        // orthonormalize the centered indicators
        for col in 0..c - 1 {
            for prev in 0..col {
                let dot = basis.column(col).dot(&basis.column(prev));
                let prev_col = basis.column(prev).clone_owned();
                basis.column_mut(col).axpy(-dot, &prev_col, 1.0);
            }
            let norm = basis.column(col).norm();
            if norm > 1e-12 {
                basis.column_mut(col).scale_mut(1.0 / norm);
            }
        }
        let reduced = basis.transpose() * objective * &basis;
        let direction = match nalgebra::SymmetricEigen::try_new(reduced, f64::EPSILON, 10_000) {
            Some(eig) => {
                let mut best = 0;
                for i in 1..c - 1 {
                    if eig.eigenvalues[i] > eig.eigenvalues[best] {
                        best = i;
                    }
                }
                &basis * eig.eigenvectors.column(best).clone_owned()
            }
            None => basis.column(0).clone_owned(),
        };
        // fill to the bound itself: the separated optimum saturates the
        // variance budget, and sitting on the bound lets the refinement
        // treat it as an equality instead of fighting the cap
        let budget = (1.0 - 1e-9) * tau - giso.trace();
        if budget > 0.0 && direction.norm() > 1e-12 {
            let u = &direction / direction.norm();
            giso.ger(budget, &u, &u, 1.0);
            let giso_t = giso.transpose();
            giso = (giso + giso_t) * 0.5;
        }
    }
    giso
}

fn resolved_m_tilde(config: &UnfoldConfig, x: &CovariateMatrix) -> usize {
    match config.m_tilde {
        DimensionChoice::Fixed(m) => m,
        // auto resolution happens at recovery time from the spectrum;
        // the bound uses the predictor count as its stand-in
        DimensionChoice::Auto => x.p(),
    }
}

/// MCU program: maximize tr(X X^T Q) under centering, edge isometry and
/// the variance budget.
pub fn build_mcu_problem(
    x: &CovariateMatrix,
    _y: &ResponseMatrix,
    graph: &NeighborGraph,
    g: &GramMatrix,
    config: &UnfoldConfig,
) -> SdpProblem {
    let objective = &x.values * x.values.transpose();
    let tau = trace_bound(x.n(), config.alpha, resolved_m_tilde(config, x), g);
    let warm = warm_start_gram(graph, g, &objective, tau);
    SdpProblem {
        objective,
        equality_constraints: edge_constraints(graph, g),
        trace_bound: tau,
        initial_point: Some(warm),
    }
}

/// MVU program: same constraints, identity objective (maximize total
/// variance tr(Q)).
pub fn build_mvu_problem(
    y: &ResponseMatrix,
    graph: &NeighborGraph,
    g: &GramMatrix,
    config: &UnfoldConfig,
    m_tilde_hint: usize,
) -> SdpProblem {
    let n = y.n();
    let tau = trace_bound(n, config.alpha, m_tilde_hint, g);
    let objective = DMatrix::identity(n, n);
    let warm = warm_start_gram(graph, g, &objective, tau);
    SdpProblem {
        objective,
        equality_constraints: edge_constraints(graph, g),
        trace_bound: tau,
        initial_point: Some(warm),
    }
}

/// Sorted-descending eigendecomposition with the deterministic sign
/// convention: each eigenvector's largest-magnitude entry is positive.
fn sorted_eigen(q: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let eig = nalgebra::SymmetricEigen::try_new(q.clone(), f64::EPSILON, 100_000)
        .ok_or(McuError::EigenFailure)?;
    let n = q.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut values = Vec::with_capacity(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &idx) in order.iter().enumerate() {
        values.push(eig.eigenvalues[idx].max(0.0));
        let col = eig.eigenvectors.column(idx);
        let mut best = 0;
        for i in 1..n {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        let sign = if col[best] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[(i, c)] = sign * col[i];
        }
    }
    Ok((values, vectors))
}

/// Recover the embedding Y~ = U * Sigma^(1/2) truncated to m_tilde
/// columns, eigenvalues sorted nonincreasing and clamped at zero.
pub fn recover_embedding(
    solution: &SdpSolution,
    m_tilde: DimensionChoice,
    method: Method,
) -> Result<Embedding> {
    embed_from_gram(&solution.q, m_tilde, method)
}

fn embed_from_gram(q: &DMatrix<f64>, m_tilde: DimensionChoice, method: Method) -> Result<Embedding> {
    let (values, vectors) = sorted_eigen(q)?;
    let n = q.nrows();
    let m = match m_tilde {
        DimensionChoice::Fixed(m) => m.min(n),
        DimensionChoice::Auto => otsu_dimension(&values)?,
    };
    let lmax = values.first().copied().unwrap_or(0.0);
    let numerical_rank = values.iter().filter(|&&l| l > 1e-10 * lmax).count();
    let rank_deficient = m > numerical_rank;
    if rank_deficient {
        eprintln!(
            "warning: requested dimension {m} exceeds numerical rank {numerical_rank}"
        );
    }
    let mut y_tilde = DMatrix::zeros(n, m);
    for c in 0..m {
        let s = values[c].sqrt();
        for i in 0..n {
            y_tilde[(i, c)] = vectors[(i, c)] * s;
        }
    }
    Ok(Embedding {
        y_tilde,
        eigenvalues: values,
        m_tilde: m,
        method,
        rank_deficient,
    })
}

/// Otsu's threshold on the natural-log spectrum by exhaustive scan over
/// all class splits of the sorted values; returns the count of
/// log-eigenvalues strictly above the selected threshold.
pub fn otsu_dimension(eigenvalues: &[f64]) -> Result<usize> {
    let mut logs: Vec<f64> = eigenvalues
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|l| l.ln())
        .collect();
    if logs.is_empty() {
        return Err(McuError::AllZero);
    }
    if logs.len() == 1 {
        return Ok(1);
    }
    logs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = logs.len();
    let mut best_split = 0usize; // 0 = no split (single class)
    let mut best_var = 0.0f64;
    let mut lower_sum = 0.0;
    for split in 1..n {
        lower_sum += logs[split - 1];
        if logs[split - 1] == logs[split] {
            // a threshold between equal values separates nothing
            continue;
        }
        let w0 = split as f64 / n as f64;
        let w1 = 1.0 - w0;
        let m0 = lower_sum / split as f64;
        let m1 = (logs.iter().sum::<f64>() - lower_sum) / (n - split) as f64;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best_split = split;
        }
    }
    if best_split == 0 {
        // degenerate single-class spectrum: keep everything
        return Ok(n);
    }
    Ok((n - best_split).max(1))
}

/// PCA baseline computed from the eigendecomposition of the N x N Gram
/// matrix (N is much smaller than M), with the same sign convention.
pub fn pca_embed(y: &ResponseMatrix, m_tilde: DimensionChoice) -> Result<Embedding> {
    let g = crate::data::gram(y);
    embed_from_gram(&g.values, m_tilde, Method::Pca)
}

/// Sum of squared covariances between standardized covariates and the
/// embedding columns; equals tr(X X^T Q) / (N-1)^2 when both sides are
/// centered.
pub fn covariance_objective(x: &CovariateMatrix, y_tilde: &DMatrix<f64>) -> f64 {
    let n = x.n() as f64;
    let xty = x.values.transpose() * y_tilde;
    xty.norm_squared() / ((n - 1.0) * (n - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{center_scale_responses, gram, standardize_covariates};
    use crate::graph::build_knn_graph;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};

    fn random_setup(
        seed: u64,
        n: usize,
        p: usize,
        m: usize,
        k: usize,
    ) -> (CovariateMatrix, ResponseMatrix, NeighborGraph, GramMatrix) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let xr = DMatrix::from_fn(n, p, |_, _| rng.gen_range(1.0..10.0));
        let yr = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-2.0..2.0));
        let x = standardize_covariates(&xr).unwrap();
        let y = center_scale_responses(&yr, m, 1).unwrap();
        let graph = build_knn_graph(&y, k, NeighborRule::Union).unwrap();
        let g = gram(&y);
        (x, y, graph, g)
    }

    #[test]
    fn mcu_objective_is_outer_product() {
        let raw = dmatrix![1.0; 3.0];
        let x = standardize_covariates(&raw).unwrap();
        let (_, y, graph, g) = {
            let yr = dmatrix![0.0; 2.0];
            let y = center_scale_responses(&yr, 1, 1).unwrap();
            let graph = build_knn_graph(&y, 1, NeighborRule::Union).unwrap();
            let g = gram(&y);
            ((), y, graph, g)
        };
        let p = build_mcu_problem(&x, &y, &graph, &g, &UnfoldConfig::default());
        let xv = &x.values;
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(p.objective[(i, j)], xv[(i, 0)] * xv[(j, 0)]);
            }
        }
    }

    #[test]
    fn trace_bound_formula() {
        let (x, y, graph, g) = random_setup(1, 11, 2, 4, 3);
        let config = UnfoldConfig {
            alpha: 1.0,
            m_tilde: DimensionChoice::Fixed(2),
            ..Default::default()
        };
        let p = build_mcu_problem(&x, &y, &graph, &g, &config);
        // (N-1)*alpha*m = 20, but raised if it excludes tr(G)
        let expect = 20.0f64.max(g.values.trace() * (1.0 + 1e-9));
        assert_relative_eq!(p.trace_bound, expect, max_relative = 1e-12);
    }

    #[test]
    fn constraint_rhs_matches_gram_oracle() {
        let (x, y, graph, g) = random_setup(2, 10, 2, 5, 3);
        let p = build_mcu_problem(&x, &y, &graph, &g, &UnfoldConfig::default());
        for (c, b) in &p.equality_constraints {
            if let ConstraintMatrix::Edge { i, j } = c {
                let expect =
                    g.values[(*i, *i)] + g.values[(*j, *j)] - 2.0 * g.values[(*i, *j)];
                assert_relative_eq!(*b, expect, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn mvu_problem_shares_constraints() {
        let (x, y, graph, g) = random_setup(3, 9, 2, 4, 2);
        let config = UnfoldConfig::default();
        let mcu = build_mcu_problem(&x, &y, &graph, &g, &config);
        let mvu = build_mvu_problem(&y, &graph, &g, &config, 2);
        assert_eq!(mcu.equality_constraints, mvu.equality_constraints);
        assert_eq!(mvu.objective, DMatrix::identity(9, 9));
    }

    #[test]
    fn recover_rank_one() {
        let sol = SdpSolution {
            q: dmatrix![1.0, -1.0; -1.0, 1.0],
            objective_value: 0.0,
            primal_residual: 0.0,
            psd_violation: 0.0,
            iterations: 0,
            converged: true,
        };
        let e = recover_embedding(&sol, DimensionChoice::Fixed(1), Method::Mcu).unwrap();
        assert_relative_eq!(e.eigenvalues[0], 2.0, epsilon = 1e-12);
        // sign convention: largest-magnitude entry positive
        assert_relative_eq!(e.y_tilde[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(e.y_tilde[(1, 0)], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn recover_identity_gram() {
        let sol = SdpSolution {
            q: DMatrix::identity(3, 3),
            objective_value: 0.0,
            primal_residual: 0.0,
            psd_violation: 0.0,
            iterations: 0,
            converged: true,
        };
        let e = recover_embedding(&sol, DimensionChoice::Fixed(3), Method::Mvu).unwrap();
        let prod = &e.y_tilde * e.y_tilde.transpose();
        assert!((prod - DMatrix::identity(3, 3)).abs().max() < 1e-12);
    }

    #[test]
    fn reconstruction_oracle_full_rank() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let a = DMatrix::from_fn(7, 4, |_, _| rng.gen_range(-1.0..1.0));
        let q = &a * a.transpose();
        let sol = SdpSolution {
            q: q.clone(),
            objective_value: 0.0,
            primal_residual: 0.0,
            psd_violation: 0.0,
            iterations: 0,
            converged: true,
        };
        let e = recover_embedding(&sol, DimensionChoice::Fixed(4), Method::Mcu).unwrap();
        let recon = &e.y_tilde * e.y_tilde.transpose();
        assert!((&recon - &q).norm() <= 1e-8 * q.norm());
        // discarded-eigenvalue identity at a truncated dimension
        let e2 = recover_embedding(&sol, DimensionChoice::Fixed(2), Method::Mcu).unwrap();
        let recon2 = &e2.y_tilde * e2.y_tilde.transpose();
        let diff2 = (&recon2 - &q).norm_squared();
        let discarded: f64 = e2.eigenvalues[2..].iter().map(|l| l * l).sum();
        assert_relative_eq!(diff2, discarded, max_relative = 1e-8);
        // column orthogonality
        let gramt = e2.y_tilde.transpose() * &e2.y_tilde;
        let offdiag = gramt[(0, 1)].abs();
        assert!(offdiag <= 1e-8 * gramt[(0, 0)].max(gramt[(1, 1)]));
    }

    #[test]
    fn otsu_two_clusters() {
        let vals = [5f64.exp(), 5.1f64.exp(), 1f64.exp(), 0.9f64.exp()];
        assert_eq!(otsu_dimension(&vals).unwrap(), 2);
    }

    #[test]
    fn otsu_degenerate_cases() {
        assert_eq!(otsu_dimension(&[7.0]).unwrap(), 1);
        assert_eq!(otsu_dimension(&[5.0, 5.0, 5.0, 5.0]).unwrap(), 4);
        assert!(matches!(otsu_dimension(&[0.0, 0.0]), Err(McuError::AllZero)));
    }

    #[test]
    fn otsu_matches_exhaustive_scan_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let n = rng.gen_range(2..12);
            let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..100.0)).collect();
            let got = otsu_dimension(&vals).unwrap();

            // oracle: try every threshold halfway between sorted values
            let mut logs: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
            logs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut best = (0.0f64, logs.len());
            for w in logs.windows(2) {
                if w[0] == w[1] {
                    continue;
                }
                let t = 0.5 * (w[0] + w[1]);
                let lower: Vec<f64> = logs.iter().copied().filter(|&v| v <= t).collect();
                let upper: Vec<f64> = logs.iter().copied().filter(|&v| v > t).collect();
                let (n0, n1) = (lower.len() as f64, upper.len() as f64);
                let (m0, m1) = (
                    lower.iter().sum::<f64>() / n0,
                    upper.iter().sum::<f64>() / n1,
                );
                let var = n0 * n1 / ((n0 + n1) * (n0 + n1)) * (m0 - m1) * (m0 - m1);
                if var > best.0 {
                    best = (var, upper.len());
                }
            }
            assert_eq!(got, best.1, "values {vals:?}");
        }
    }

    #[test]
    fn pca_toy_scores() {
        let raw = dmatrix![1.0, 0.0; -1.0, 0.0; 0.0, 0.0];
        let y = ResponseMatrix {
            values: raw,
            column_means: vec![0.0, 0.0],
            global_scale: 1.0,
            points_per_cloud: 2,
            ambient_dim: 1,
        };
        let e = pca_embed(&y, DimensionChoice::Fixed(1)).unwrap();
        assert_relative_eq!(e.y_tilde[(0, 0)], 1.0, epsilon = 1e-10);
        assert_relative_eq!(e.y_tilde[(1, 0)], -1.0, epsilon = 1e-10);
        assert_relative_eq!(e.y_tilde[(2, 0)], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn pca_full_rank_reconstructs_gram() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let raw = DMatrix::from_fn(10, 6, |_, _| rng.gen_range(-1.0..1.0));
        let y = center_scale_responses(&raw, 6, 1).unwrap();
        let e = pca_embed(&y, DimensionChoice::Fixed(10)).unwrap();
        let g = gram(&y).values;
        let recon = &e.y_tilde * e.y_tilde.transpose();
        assert!((&recon - &g).norm() <= 1e-8 * g.norm());
    }

    #[test]
    fn covariance_identity() {
        // Sum of squared covariances equals tr(X X^T Q) / (N-1)^2 for
        // centered X and Y~
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let n = 9;
            let xr = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(1.0..10.0));
            let x = standardize_covariates(&xr).unwrap();
            let mut yt = DMatrix::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0));
            for j in 0..3 {
                let mean = yt.column(j).sum() / n as f64;
                for i in 0..n {
                    yt[(i, j)] -= mean;
                }
            }
            let q = &yt * yt.transpose();
            let lhs = covariance_objective(&x, &yt);
            let xxt = &x.values * x.values.transpose();
            let rhs = (xxt * &q).trace() / ((n as f64 - 1.0) * (n as f64 - 1.0));
            assert_relative_eq!(lhs, rhs, max_relative = 1e-8);

            // direct covariance recomputation oracle
            let mut sum = 0.0;
            for p in 0..2 {
                for m in 0..3 {
                    let mut cov = 0.0;
                    for i in 0..n {
                        cov += x.values[(i, p)] * yt[(i, m)];
                    }
                    cov /= n as f64 - 1.0;
                    sum += cov * cov;
                }
            }
            assert_relative_eq!(lhs, sum, max_relative = 1e-8);
        }
    }
}
