//! Inverse process optimization: infer the nominal embedding from a
//! nominal point cloud via the preserved neighbor distances, then
//! search covariate space for the setting whose predicted embedding
//! best matches that distance profile.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::{CovariateMatrix, ResponseMatrix};
use crate::error::{McuError, Result};
use crate::regress::RegressionModel;
use crate::unfold::Embedding;

/// Distance profile of a nominal response against its nearest training
/// samples, in the centered/scaled response frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NominalTarget {
    pub y_nom: Vec<f64>,
    pub neighbor_indices: Vec<usize>,
    pub target_distances: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnealConfig {
    /// Per-coordinate closed search intervals.
    pub bounds: Vec<(f64, f64)>,
    pub seed: u64,
    /// Max objective evaluations across all restarts including polish.
    pub budget: usize,
    pub initial_temperature: f64,
    /// Tsallis visiting parameter, in (1, 3).
    pub visiting_parameter: f64,
    pub restarts: usize,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            bounds: Vec::new(),
            seed: 0,
            budget: 10_000,
            initial_temperature: 5230.0,
            visiting_parameter: 2.62,
            restarts: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnealResult {
    pub x_best: Vec<f64>,
    pub f_best: f64,
    pub evaluations: usize,
}

/// Map a new flattened response into the training frame and record its
/// k nearest training rows with distances.
pub fn make_target(
    y_nom_raw: &[f64],
    training: &ResponseMatrix,
    graph_k: usize,
) -> Result<NominalTarget> {
    let y_nom = training.transform_row(y_nom_raw)?;
    let n = training.n();
    let mut dists: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for c in 0..training.m() {
                let d = y_nom[c] - training.values[(i, c)];
                acc += d * d;
            }
            (acc.sqrt(), i)
        })
        .collect();
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dists.truncate(graph_k);
    Ok(NominalTarget {
        y_nom,
        neighbor_indices: dists.iter().map(|&(_, i)| i).collect(),
        target_distances: dists.iter().map(|&(d, _)| d).collect(),
    })
}

/// Sum of squared differences between embedding-space distances to the
/// target's neighbors and the recorded response-space distances.
pub fn embedding_objective(v: &[f64], target: &NominalTarget, embedding: &Embedding) -> Result<f64> {
    if v.len() != embedding.m_tilde {
        return Err(McuError::DimensionMismatch {
            expected: embedding.m_tilde,
            got: v.len(),
        });
    }
    let mut total = 0.0;
    for (&idx, &d_target) in target.neighbor_indices.iter().zip(&target.target_distances) {
        let mut acc = 0.0;
        for c in 0..embedding.m_tilde {
            let d = v[c] - embedding.y_tilde[(idx, c)];
            acc += d * d;
        }
        let diff = acc.sqrt() - d_target;
        total += diff * diff;
    }
    Ok(total)
}

fn clip(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Derivative-free simplex descent (Nelder-Mead) with coordinate
/// clipping to the box. Returns the best vertex found.
fn simplex_descent<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x0: &[f64],
    scale: f64,
    bounds: &[(f64, f64)],
    max_evals: usize,
) -> (Vec<f64>, f64, usize) {
    let dim = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        f(x)
    };

    // initial simplex around x0
    let mut verts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let mut x0c = x0.to_vec();
    clip(&mut x0c, bounds);
    let f0 = eval(&x0c, &mut evals);
    verts.push((x0c.clone(), f0));
    for i in 0..dim {
        let mut xi = x0c.clone();
        let span = bounds[i].1 - bounds[i].0;
        xi[i] += scale * span.max(1e-8);
        clip(&mut xi, bounds);
        let fi = eval(&xi, &mut evals);
        verts.push((xi, fi));
    }

    while evals + 2 <= max_evals {
        verts.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let spread = verts[dim].1 - verts[0].1;
        if spread.abs() <= 1e-14 * (1.0 + verts[0].1.abs()) {
            break;
        }
        // centroid of all but the worst
        let mut centroid = vec![0.0; dim];
        for (x, _) in verts.iter().take(dim) {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / dim as f64;
            }
        }
        let worst = verts[dim].clone();
        let make = |coef: f64| -> Vec<f64> {
            let mut x: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + coef * (c - w))
                .collect();
            clip(&mut x, bounds);
            x
        };

        let xr = make(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < verts[0].1 {
            let xe = make(2.0);
            let fe = eval(&xe, &mut evals);
            verts[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < verts[dim - 1].1 {
            verts[dim] = (xr, fr);
        } else {
            let xc = make(-0.5);
            let fc = eval(&xc, &mut evals);
            if fc < verts[dim].1 {
                verts[dim] = (xc, fc);
            } else {
                // shrink toward the best vertex
                let best = verts[0].0.clone();
                for v in verts.iter_mut().skip(1) {
                    for (xi, bi) in v.0.iter_mut().zip(&best) {
                        *xi = bi + 0.5 * (*xi - bi);
                    }
                    clip(&mut v.0, bounds);
                    v.1 = eval(&v.0, &mut evals);
                    if evals >= max_evals {
                        break;
                    }
                }
            }
        }
    }
    verts.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let (x, fx) = verts.swap_remove(0);
    (x, fx, evals)
}

/// Tsallis visiting-distribution sampler.
struct Visitor {
    qv: f64,
    factor4p: f64,
    factor6: f64,
}

const TAIL_LIMIT: f64 = 1e8;

impl Visitor {
    fn new(qv: f64) -> Self {
        let factor2 = ((4.0 - qv) * (qv - 1.0).ln()).exp();
        let factor3 = ((2.0 - qv) * 2f64.ln() / (qv - 1.0)).exp();
        let factor4p = std::f64::consts::PI.sqrt() * factor2 / (factor3 * (3.0 - qv));
        let factor5 = 1.0 / (qv - 1.0) - 0.5;
        let d1 = 2.0 - factor5;
        let factor6 = std::f64::consts::PI * (1.0 - factor5)
            / (std::f64::consts::PI * (1.0 - factor5)).sin()
            / ln_gamma(d1).exp();
        Self { qv, factor4p, factor6 }
    }

    /// One heavy-tailed deviate at the given temperature.
    fn sample(&self, rng: &mut ChaCha8Rng, temperature: f64) -> f64 {
        let x: f64 = rng.sample(rand_distr::StandardNormal);
        let y: f64 = rng.sample(rand_distr::StandardNormal);
        let factor1 = (temperature.ln() / (self.qv - 1.0)).exp();
        let factor4 = self.factor4p * factor1;
        let xs = x * (-(self.qv - 1.0) * (self.factor6 / factor4).ln() / (3.0 - self.qv)).exp();
        let den = ((self.qv - 1.0) * y.abs().ln() / (3.0 - self.qv)).exp();
        let visit = xs / den;
        if visit > TAIL_LIMIT {
            TAIL_LIMIT * rng.gen::<f64>()
        } else if visit < -TAIL_LIMIT {
            -TAIL_LIMIT * rng.gen::<f64>()
        } else {
            visit
        }
    }
}

fn wrap_to_bounds(x: f64, lo: f64, hi: f64) -> f64 {
    let range = hi - lo;
    if range <= 0.0 {
        return lo;
    }
    let a = (x - lo).rem_euclid(range);
    lo + a
}

/// Generalized simulated annealing over a box, with a simplex polish of
/// the incumbent on every improvement and at each restart boundary.
/// Fully deterministic for a fixed seed.
pub fn anneal_minimize<F: FnMut(&[f64]) -> f64>(
    mut objective: F,
    config: &AnnealConfig,
) -> AnnealResult {
    let dim = config.bounds.len();
    assert!(dim > 0, "bounds must be nonempty");
    let qv = config.visiting_parameter;
    let visitor = Visitor::new(qv);
    let acceptance_param = -5.0f64;

    let mut evals = 0usize;
    let mut x_best: Option<Vec<f64>> = None;
    let mut f_best = f64::INFINITY;

    let restarts = config.restarts.max(1);
    let per_restart = (config.budget / restarts).max(1);

    for restart in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(
            config.seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(restart as u64),
        );
        if evals >= config.budget {
            break;
        }
        let restart_cap = ((restart + 1) * per_restart).min(config.budget);
        // reserve a polish slice at the end of the restart
        let polish_reserve = (per_restart / 5).max(50);
        let anneal_cap = restart_cap.saturating_sub(polish_reserve).max(evals);

        let mut x_cur: Vec<f64> = config
            .bounds
            .iter()
            .map(|&(lo, hi)| rng.gen_range(lo..=hi))
            .collect();
        let mut f_cur = objective(&x_cur);
        evals += 1;
        if f_cur < f_best {
            f_best = f_cur;
            x_best = Some(x_cur.clone());
        }

        let mut step = 1u64;
        'outer: while evals < anneal_cap {
            let t2 = ((qv - 1.0) * ((1 + step) as f64).ln()).exp() - 1.0;
            let t1 = ((qv - 1.0) * 2f64.ln()).exp() - 1.0;
            let temperature = config.initial_temperature * t1 / t2.max(f64::MIN_POSITIVE);
            let temperature_step = temperature / step as f64;

            for j in 0..(2 * dim) {
                let mut x_new = x_cur.clone();
                if j < dim {
                    for (c, v) in x_new.iter_mut().enumerate() {
                        let (lo, hi) = config.bounds[c];
                        *v = wrap_to_bounds(*v + visitor.sample(&mut rng, temperature), lo, hi);
                    }
                } else {
                    let c = j - dim;
                    let (lo, hi) = config.bounds[c];
                    x_new[c] =
                        wrap_to_bounds(x_new[c] + visitor.sample(&mut rng, temperature), lo, hi);
                }
                let f_new = objective(&x_new);
                evals += 1;

                if f_new < f_cur {
                    x_cur = x_new.clone();
                    f_cur = f_new;
                    if f_new < f_best {
                        f_best = f_new;
                        x_best = Some(x_new);
                    }
                } else {
                    // generalized Metropolis acceptance
                    let base =
                        1.0 - (1.0 - acceptance_param) * (f_new - f_cur) / temperature_step;
                    let prob = if base <= 0.0 {
                        0.0
                    } else {
                        (base.ln() / (1.0 - acceptance_param)).exp()
                    };
                    if rng.gen::<f64>() <= prob {
                        x_cur = x_new;
                        f_cur = f_new;
                    }
                }
                if evals >= anneal_cap {
                    break 'outer;
                }
            }
            step += 1;
        }

        // polish the incumbent with the remaining restart budget
        if let Some(seed_x) = x_best.clone() {
            let remaining = restart_cap.saturating_sub(evals);
            if remaining > 2 * dim + 2 {
                let (xp, fp, used) =
                    simplex_descent(&mut objective, &seed_x, 0.05, &config.bounds, remaining);
                evals += used;
                if fp < f_best {
                    f_best = fp;
                    x_best = Some(xp);
                }
            }
        }
    }

    let mut x = x_best.unwrap_or_else(|| {
        config
            .bounds
            .iter()
            .map(|&(lo, hi)| 0.5 * (lo + hi))
            .collect()
    });
    clip(&mut x, &config.bounds);
    AnnealResult {
        x_best: x,
        f_best,
        evaluations: evals,
    }
}

/// Best embedding-space point matching the target's distance profile:
/// multi-start simplex descent seeded at the distance-weighted average
/// of the neighbor embeddings and at each neighbor embedding.
pub fn infer_nominal_embedding(
    target: &NominalTarget,
    embedding: &Embedding,
    config: &AnnealConfig,
) -> Result<(Vec<f64>, f64)> {
    let m = embedding.m_tilde;
    let mut starts: Vec<Vec<f64>> = Vec::new();

    // distance-weighted average of neighbor embeddings
    let mut weighted = vec![0.0; m];
    let mut wsum = 0.0;
    for (&idx, &d) in target.neighbor_indices.iter().zip(&target.target_distances) {
        let w = 1.0 / (d + 1e-12);
        wsum += w;
        for c in 0..m {
            weighted[c] += w * embedding.y_tilde[(idx, c)];
        }
    }
    for v in weighted.iter_mut() {
        *v /= wsum;
    }
    starts.push(weighted);
    for &idx in &target.neighbor_indices {
        starts.push((0..m).map(|c| embedding.y_tilde[(idx, c)]).collect());
    }

    // generous box around the training embedding
    let bounds: Vec<(f64, f64)> = (0..m)
        .map(|c| {
            let col = embedding.y_tilde.column(c);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &v in col.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let pad = (hi - lo).max(1.0);
            (lo - pad, hi + pad)
        })
        .collect();

    let mut best: Option<(Vec<f64>, f64)> = None;
    let per_start = (config.budget / starts.len().max(1)).max(100);
    for start in &starts {
        let mut f = |v: &[f64]| embedding_objective(v, target, embedding).unwrap();
        let f_start = f(start);
        let (x, fx, _) = simplex_descent(&mut f, start, 0.1, &bounds, per_start);
        let (x, fx) = if fx <= f_start { (x, fx) } else { (start.clone(), f_start) };
        if best.as_ref().map_or(true, |(_, fb)| fx < *fb) {
            best = Some((x, fx));
        }
    }
    Ok(best.unwrap())
}

/// Search covariate space for the setting whose predicted embedding
/// minimizes the target objective; returns the result in original
/// control units.
pub fn recover_covariates(
    target: &NominalTarget,
    model: &RegressionModel,
    embedding: &Embedding,
    covariates: &CovariateMatrix,
    config: &AnnealConfig,
) -> Result<(Vec<f64>, f64, usize)> {
    let p = covariates.p();
    let bounds = if config.bounds.len() == p {
        config.bounds.clone()
    } else {
        default_search_box(covariates)
    };
    let b_hat = &model.b_hat;
    let objective = |x: &[f64]| -> f64 {
        let xv = nalgebra::RowDVector::from_row_slice(x);
        let v = xv * b_hat;
        embedding_objective(v.as_slice(), target, embedding).unwrap()
    };
    let cfg = AnnealConfig {
        bounds,
        ..config.clone()
    };
    let result = anneal_minimize(objective, &cfg);
    let x_star = covariates.unstandardize_row(&result.x_best);
    Ok((x_star, result.f_best, result.evaluations))
}

/// Standardized-unit search box: the observed range of each training
/// covariate column padded by 0.5.
pub fn default_search_box(covariates: &CovariateMatrix) -> Vec<(f64, f64)> {
    (0..covariates.p())
        .map(|j| {
            let col = covariates.values.column(j);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &v in col.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            (lo - 0.5, hi + 0.5)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unfold::Method;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, DMatrix};
    use rand::Rng;

    fn embedding(y: DMatrix<f64>) -> Embedding {
        let m = y.ncols();
        Embedding {
            y_tilde: y,
            eigenvalues: vec![],
            m_tilde: m,
            method: Method::Mcu,
            rank_deficient: false,
        }
    }

    fn training_rows(values: DMatrix<f64>) -> ResponseMatrix {
        let m = values.ncols();
        ResponseMatrix {
            values,
            column_means: vec![0.0; m],
            global_scale: 1.0,
            points_per_cloud: m,
            ambient_dim: 1,
        }
    }

    #[test]
    fn target_from_training_row() {
        let y = training_rows(dmatrix![0.0, 0.0; 1.0, 0.0; 5.0, 5.0]);
        let nom = vec![1.0, 0.0];
        let t = make_target(&nom, &y, 2).unwrap();
        assert_eq!(t.neighbor_indices[0], 1);
        assert_relative_eq!(t.target_distances[0], 0.0);
        assert_eq!(t.neighbor_indices[1], 0);
        assert_relative_eq!(t.target_distances[1], 1.0);
    }

    #[test]
    fn target_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let vals = DMatrix::from_fn(10, 4, |_, _| rng.gen_range(-1.0..1.0));
        let y = training_rows(vals.clone());
        let nom: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = make_target(&nom, &y, 3).unwrap();
        let mut oracle: Vec<(f64, usize)> = (0..10)
            .map(|i| {
                let d: f64 = (0..4)
                    .map(|c| (nom[c] - vals[(i, c)]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                (d, i)
            })
            .collect();
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect: Vec<usize> = oracle.iter().take(3).map(|&(_, i)| i).collect();
        assert_eq!(t.neighbor_indices, expect);
    }

    #[test]
    fn objective_reductions() {
        let e = embedding(dmatrix![0.0, 0.0; 3.0, 4.0]);
        // zero at an exactly realizable profile
        let t = NominalTarget {
            y_nom: vec![],
            neighbor_indices: vec![0, 1],
            target_distances: vec![5.0, 0.0],
        };
        let obj = embedding_objective(&[3.0, 4.0], &t, &e).unwrap();
        assert_relative_eq!(obj, 0.0, epsilon = 1e-12);

        // single neighbor with target 0 reduces to squared distance
        let t1 = NominalTarget {
            y_nom: vec![],
            neighbor_indices: vec![0],
            target_distances: vec![0.0],
        };
        let v = [1.0, 2.0];
        assert_relative_eq!(embedding_objective(&v, &t1, &e).unwrap(), 5.0, epsilon = 1e-12);

        // random v matches term-by-term recomputation
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let t2 = NominalTarget {
            y_nom: vec![],
            neighbor_indices: vec![0, 1],
            target_distances: vec![1.5, 2.5],
        };
        for _ in 0..10 {
            let v = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let mut expect = 0.0;
            for (&i, &d) in t2.neighbor_indices.iter().zip(&t2.target_distances) {
                let dist = ((v[0] - e.y_tilde[(i, 0)]).powi(2)
                    + (v[1] - e.y_tilde[(i, 1)]).powi(2))
                .sqrt();
                expect += (dist - d) * (dist - d);
            }
            assert_relative_eq!(
                embedding_objective(&v, &t2, &e).unwrap(),
                expect,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn infer_embedding_beats_its_starts() {
        let e = embedding(dmatrix![0.0, 0.0; 2.0, 0.0; 0.0, 2.0; 2.0, 2.0]);
        let t = NominalTarget {
            y_nom: vec![],
            neighbor_indices: vec![0, 1, 2],
            target_distances: vec![1.0, 1.0, 1.5],
        };
        let cfg = AnnealConfig::default();
        let (v, obj) = infer_nominal_embedding(&t, &e, &cfg).unwrap();
        // achieved objective is no worse than any initialization point
        for &idx in &t.neighbor_indices {
            let start: Vec<f64> = vec![e.y_tilde[(idx, 0)], e.y_tilde[(idx, 1)]];
            let f0 = embedding_objective(&start, &t, &e).unwrap();
            assert!(obj <= f0 + 1e-12);
        }
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn infer_embedding_grid_oracle() {
        // construct a target whose unique zero is at (1, 1)
        let e = embedding(dmatrix![0.0, 0.0; 2.0, 0.0; 0.0, 2.0]);
        let truth = [1.0, 1.0];
        let dists: Vec<f64> = (0..3)
            .map(|i| {
                ((truth[0] - e.y_tilde[(i, 0)]).powi(2) + (truth[1] - e.y_tilde[(i, 1)]).powi(2))
                    .sqrt()
            })
            .collect();
        let t = NominalTarget {
            y_nom: vec![],
            neighbor_indices: vec![0, 1, 2],
            target_distances: dists,
        };
        let (v, obj) = infer_nominal_embedding(&t, &e, &AnnealConfig::default()).unwrap();

        // dense grid-search oracle over the box
        let mut grid_best = (f64::INFINITY, [0.0, 0.0]);
        for i in 0..200 {
            for j in 0..200 {
                let p = [-1.0 + 4.0 * i as f64 / 199.0, -1.0 + 4.0 * j as f64 / 199.0];
                let f = embedding_objective(&p, &t, &e).unwrap();
                if f < grid_best.0 {
                    grid_best = (f, p);
                }
            }
        }
        assert!((grid_best.1[0] - truth[0]).abs() < 0.05);
        assert!(obj <= grid_best.0 + 1e-9);
        assert!((v[0] - truth[0]).abs() < 1e-4);
        assert!((v[1] - truth[1]).abs() < 1e-4);
    }

    #[test]
    fn anneal_quadratic() {
        let x0 = [1.2, -0.7];
        let cfg = AnnealConfig {
            bounds: vec![(-3.0, 3.0), (-3.0, 3.0)],
            seed: 5,
            budget: 5000,
            ..Default::default()
        };
        let r = anneal_minimize(
            |x| (x[0] - x0[0]).powi(2) + (x[1] - x0[1]).powi(2),
            &cfg,
        );
        assert!((r.x_best[0] - x0[0]).abs() < 1e-4);
        assert!((r.x_best[1] - x0[1]).abs() < 1e-4);
    }

    #[test]
    fn anneal_constant_objective() {
        let cfg = AnnealConfig {
            bounds: vec![(-1.0, 2.0)],
            seed: 1,
            budget: 200,
            ..Default::default()
        };
        let r = anneal_minimize(|_| 7.5, &cfg);
        assert_eq!(r.f_best, 7.5);
        assert!(r.x_best[0] >= -1.0 && r.x_best[0] <= 2.0);
    }

    #[test]
    fn anneal_deterministic_per_seed() {
        let cfg = AnnealConfig {
            bounds: vec![(-2.0, 2.0), (-2.0, 2.0)],
            seed: 9,
            budget: 3000,
            ..Default::default()
        };
        let f = |x: &[f64]| x[0].powi(2) + 2.0 * (x[1] + 0.3).powi(2) + (3.0 * x[0]).sin() * 0.1;
        let a = anneal_minimize(f, &cfg);
        let b = anneal_minimize(f, &cfg);
        assert_eq!(a.x_best, b.x_best);
        assert_eq!(a.f_best, b.f_best);
    }

    #[test]
    fn anneal_stays_in_bounds_and_monotone() {
        use std::cell::RefCell;
        let cfg = AnnealConfig {
            bounds: vec![(-1.5, 0.5), (0.0, 4.0)],
            seed: 13,
            budget: 2000,
            ..Default::default()
        };
        let seen = RefCell::new(Vec::new());
        let r = anneal_minimize(
            |x| {
                assert!(x[0] >= -1.5 && x[0] <= 0.5, "out of bounds: {}", x[0]);
                assert!(x[1] >= 0.0 && x[1] <= 4.0, "out of bounds: {}", x[1]);
                let f = (x[0] + 1.0).powi(2) + (x[1] - 2.0).powi(2);
                seen.borrow_mut().push(f);
                f
            },
            &cfg,
        );
        let min_seen = seen
            .borrow()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r.f_best, min_seen);
    }

    #[test]
    fn rastrigin_benchmark() {
        let rastrigin = |x: &[f64]| {
            20.0 + x
                .iter()
                .map(|&v| v * v - 10.0 * (2.0 * std::f64::consts::PI * v).cos())
                .sum::<f64>()
        };
        let mut hits = 0;
        for seed in 0..10 {
            let cfg = AnnealConfig {
                bounds: vec![(-5.12, 5.12), (-5.12, 5.12)],
                seed,
                budget: 20_000,
                ..Default::default()
            };
            let r = anneal_minimize(rastrigin, &cfg);
            if r.f_best <= 1e-3 {
                hits += 1;
            }
        }
        assert!(hits >= 9, "only {hits}/10 seeds reached 1e-3");
    }

    #[test]
    fn recover_covariates_linear_oracle() {
        // B identity-like: x maps straight to the embedding, so the
        // recovered x must match the linear solve
        let e = embedding(dmatrix![1.0, 0.0; -1.0, 0.0; 0.0, 1.0; 0.0, -1.0]);
        let model = RegressionModel {
            b_hat: dmatrix![1.0, 0.0; 0.0, 1.0],
            lambda: 0.0,
        };
        let x = CovariateMatrix {
            values: dmatrix![1.0, 0.0; -1.0, 0.0; 0.0, 1.0; 0.0, -1.0],
            column_means: vec![5.0, 5.0],
            column_stds: vec![2.0, 2.0],
            standardized: true,
        };
        let truth_std = [0.4, -0.3];
        let dists: Vec<f64> = (0..4)
            .map(|i| {
                ((truth_std[0] - e.y_tilde[(i, 0)]).powi(2)
                    + (truth_std[1] - e.y_tilde[(i, 1)]).powi(2))
                .sqrt()
            })
            .collect();
        let t = NominalTarget {
            y_nom: vec![],
            neighbor_indices: vec![0, 1, 2, 3],
            target_distances: dists,
        };
        let cfg = AnnealConfig {
            seed: 3,
            budget: 20_000,
            ..Default::default()
        };
        let (x_star, f_star, _) = recover_covariates(&t, &model, &e, &x, &cfg).unwrap();
        assert!(f_star < 1e-8);
        // unstandardized truth: 0.4*2+5 = 5.8, -0.3*2+5 = 4.4
        assert!((x_star[0] - 5.8).abs() < 1e-3, "got {}", x_star[0]);
        assert!((x_star[1] - 4.4).abs() < 1e-3, "got {}", x_star[1]);
    }
}
