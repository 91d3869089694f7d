use mcu::data::{center_scale_responses, gram, standardize_covariates};
use mcu::graph::build_knn_graph;
use mcu::pipeline::{load_dataset, RunConfig};
use mcu::sdp::{solve, SolverOptions};
use mcu::unfold::{build_mcu_problem, UnfoldConfig};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = RunConfig::from_toml(&format!(
        "output_dir = \"/tmp\"\nseed = {seed}\n[data]\nkind = \"swiss\"\ndesk_preset = true\n",
    ))
    .unwrap();
    let data = load_dataset(&cfg).unwrap();
    let x = standardize_covariates(&data.x_raw).unwrap();
    let y = center_scale_responses(&data.y_raw, data.points_per_cloud, data.ambient_dim).unwrap();
    let ucfg = UnfoldConfig::default();
    let graph = build_knn_graph(&y, ucfg.k, ucfg.rule).unwrap();
    let g = gram(&y);
    println!("tr(G) = {:.3e}, edges = {}", g.values.trace(), graph.edges.len());
    let bmax = graph.edges.keys().map(|&(i,j)| g.values[(i,i)]+g.values[(j,j)]-2.0*g.values[(i,j)]).fold(f64::MIN, f64::max);
    let bmin = graph.edges.keys().map(|&(i,j)| g.values[(i,i)]+g.values[(j,j)]-2.0*g.values[(i,j)]).fold(f64::MAX, f64::min);
    println!("edge b range: [{bmin:.3e}, {bmax:.3e}]");
    let comps = mcu::graph::connected_components(&graph);
    println!("components: {}", comps.len());
    let problem = build_mcu_problem(&x, &y, &graph, &g, &ucfg);
    let warm = problem.initial_point.as_ref().unwrap();
    let warm_obj = (&problem.objective * warm).trace();
    let warm_res = problem.equality_constraints.iter()
        .map(|(a, b)| (a.apply(warm) - b).abs() / (1.0 + b.abs()))
        .fold(0.0f64, f64::max);
    let eig = nalgebra::SymmetricEigen::new(warm.clone());
    let lmin = eig.eigenvalues.iter().copied().fold(f64::MAX, f64::min);
    println!(
        "trace bound = {:.3e}, warm tr = {:.3e}, warm obj = {:.6e}, warm max_rel = {:.3e}, warm lmin = {:.3e}",
        problem.trace_bound, warm.trace(), warm_obj, warm_res, lmin
    );
    let opts = SolverOptions { max_iterations: 20000, diagnostic_every: 1000, ..Default::default() };
    let t = std::time::Instant::now();
    let sol = solve(&problem, &opts).unwrap();
    println!(
        "{}s iters {} conv {} pri {:.3e} psd {:.3e} obj {:.6e} tr(Q) {:.3e}",
        t.elapsed().as_secs(), sol.iterations, sol.converged, sol.primal_residual, sol.psd_violation,
        sol.objective_value, sol.q.trace()
    );
}
