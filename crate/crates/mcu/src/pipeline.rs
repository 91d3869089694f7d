//! End-to-end orchestration behind the CLI: configuration loading with
//! override precedence, dataset generation/ingestion, fitting the three
//! methods, comparison reports with plot data, inverse optimization and
//! bit-exact replay.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{
    center_scale_responses, gram, read_matrix_csv, standardize_covariates, write_matrix_csv,
    CovariateMatrix, ResponseMatrix,
};
use crate::datagen::{self, GeneratorKind, GeneratorSpec, Manifest};
use crate::error::{McuError, Result};
use crate::graph::{build_knn_graph, NeighborRule};
use crate::io_util::write_atomic;
use crate::optimize::{self, AnnealConfig};
use crate::regress::{self, summarize, RegressionModel, SummaryStats};
use crate::sdp::{self, SolverOptions};
use crate::unfold::{self, DimensionChoice, Embedding, Method, UnfoldConfig};

// ---------------------------------------------------------------------------
// Configuration document

/// Reduced dimension in config files: an integer or the string "auto".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DimSpec {
    Fixed(usize),
    Named(String),
}

impl DimSpec {
    pub fn to_choice(&self) -> Result<DimensionChoice> {
        match self {
            DimSpec::Fixed(m) => Ok(DimensionChoice::Fixed(*m)),
            DimSpec::Named(s) if s == "auto" => Ok(DimensionChoice::Auto),
            DimSpec::Named(s) => Err(McuError::Config(format!(
                "m_tilde must be an integer or \"auto\", got \"{s}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Generator mode: swiss | penny | bracket.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_asset: Option<PathBuf>,
    /// Swiss roll base-plane resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bracket_points: Option<usize>,
    /// Small-instance preset (overridable by the explicit fields above).
    #[serde(default)]
    pub desk_preset: bool,
    /// File mode: pre-materialized matrices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambient_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points_per_cloud: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnfoldSection {
    /// Neighbor count; when omitted, resolves per dataset kind (the
    /// penny preset's 2-D image manifold fragments at k=4 on some
    /// control draws, and k=5 is equally sanctioned).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub alpha: f64,
    pub m_tilde: DimSpec,
    pub rule: NeighborRule,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub max_iterations: usize,
}

impl Default for UnfoldSection {
    fn default() -> Self {
        let d = UnfoldConfig::default();
        Self {
            k: None,
            alpha: d.alpha,
            m_tilde: DimSpec::Fixed(2),
            rule: d.rule,
            method: None,
            max_iterations: SolverOptions::default().max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionSection {
    pub lambda: f64,
}

impl Default for RegressionSection {
    fn default() -> Self {
        Self { lambda: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub budget: usize,
    pub initial_temperature: f64,
    pub visiting_parameter: f64,
    pub restarts: usize,
    /// Optional explicit standardized-unit search box.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<[f64; 2]>>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = AnnealConfig::default();
        Self {
            budget: d.budget,
            initial_temperature: d.initial_temperature,
            visiting_parameter: d.visiting_parameter,
            restarts: d.restarts,
            bounds: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub unfold: UnfoldSection,
    #[serde(default)]
    pub regression: RegressionSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

/// CLI/environment overrides; flags beat environment beats file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub method: Option<Method>,
    pub allow_nonconverged: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| McuError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &overrides.output {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let generator = self.data.kind.is_some();
        let files = self.data.x_csv.is_some() || self.data.y_csv.is_some();
        if generator == files {
            return Err(McuError::Config(
                "data section must set either kind (generator mode) or x_csv + y_csv (file mode)"
                    .into(),
            ));
        }
        if files && (self.data.x_csv.is_none() || self.data.y_csv.is_none()) {
            return Err(McuError::Config(
                "file mode requires both x_csv and y_csv".into(),
            ));
        }
        if let Some(kind) = &self.data.kind {
            GeneratorKind::parse(kind)?;
        }
        self.unfold.m_tilde.to_choice()?;
        if let Some(m) = &self.unfold.method {
            Method::parse(m)?;
        }
        if !(1.0..3.0).contains(&self.optimizer.visiting_parameter) {
            return Err(McuError::Config(format!(
                "visiting_parameter must lie in (1, 3), got {}",
                self.optimizer.visiting_parameter
            )));
        }
        Ok(())
    }

    /// Neighbor count: explicit setting, else 5 for penny (its image
    /// manifold is two-dimensional and fragments at 4 on some draws),
    /// else the library default of 4.
    pub fn resolved_k(&self) -> usize {
        if let Some(k) = self.unfold.k {
            return k;
        }
        match self.data.kind.as_deref() {
            Some("penny") => 5,
            _ => UnfoldConfig::default().k,
        }
    }

    pub fn unfold_config(&self, method: Method) -> Result<UnfoldConfig> {
        Ok(UnfoldConfig {
            k: self.resolved_k(),
            alpha: self.unfold.alpha,
            m_tilde: self.unfold.m_tilde.to_choice()?,
            rule: self.unfold.rule,
            method,
        })
    }

    pub fn anneal_config(&self) -> AnnealConfig {
        AnnealConfig {
            bounds: self
                .optimizer
                .bounds
                .as_ref()
                .map(|b| b.iter().map(|&[lo, hi]| (lo, hi)).collect())
                .unwrap_or_default(),
            seed: self.seed,
            budget: self.optimizer.budget,
            initial_temperature: self.optimizer.initial_temperature,
            visiting_parameter: self.optimizer.visiting_parameter,
            restarts: self.optimizer.restarts,
        }
    }

    fn generator_spec(&self) -> Result<GeneratorSpec> {
        let kind = GeneratorKind::parse(self.data.kind.as_deref().unwrap())?;
        let mut spec = if self.data.desk_preset {
            datagen::desk_preset(kind, self.seed)
        } else {
            GeneratorSpec::new(kind, self.data.sample_count.unwrap_or(60), self.seed)
        };
        if let Some(n) = self.data.sample_count {
            if n != spec.sample_count {
                spec.sample_count = n;
                spec.controls = datagen::draw_controls(n, self.seed);
            }
        }
        if let Some([nx, ny]) = self.data.grid {
            spec.grid = (nx, ny);
        }
        if let Some(p) = self.data.bracket_points {
            spec.bracket_points = p;
        }
        spec.base_asset = self.data.base_asset.clone();
        Ok(spec)
    }
}

/// Exit code contract: 0 success, 1 config error, 2 IO error,
/// 3 numeric/convergence failure.
pub fn exit_code(err: &McuError) -> i32 {
    match err {
        McuError::Config(_)
        | McuError::KTooLarge { .. }
        | McuError::DimensionMismatch { .. }
        | McuError::ShapeMismatch { .. } => 1,
        McuError::Io(_)
        | McuError::Csv(_)
        | McuError::Json(_)
        | McuError::BadBaseImage(_)
        | McuError::BadBaseCloud(_)
        | McuError::MissingBundle(_) => 2,
        _ => 3,
    }
}

// ---------------------------------------------------------------------------
// Dataset loading

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub x_raw: DMatrix<f64>,
    pub y_raw: DMatrix<f64>,
    pub points_per_cloud: usize,
    pub ambient_dim: usize,
    pub generator: Option<GeneratorSpec>,
}

/// Materialize the dataset named by the config: run the generator
/// in-memory (deterministic), or read the CSV pair in file mode.
pub fn load_dataset(config: &RunConfig) -> Result<LoadedData> {
    if config.data.kind.is_some() {
        let spec = config.generator_spec()?;
        let d = datagen::generate(&spec)?;
        Ok(LoadedData {
            points_per_cloud: d.y.ncols() / d.ambient_dim,
            ambient_dim: d.ambient_dim,
            x_raw: d.x,
            y_raw: d.y,
            generator: Some(spec),
        })
    } else {
        let x_raw = read_matrix_csv(config.data.x_csv.as_ref().unwrap())?;
        let y_raw = read_matrix_csv(config.data.y_csv.as_ref().unwrap())?;
        let ambient_dim = config.data.ambient_dim.unwrap_or(1);
        if ambient_dim == 0 || y_raw.ncols() % ambient_dim != 0 {
            return Err(McuError::Config(format!(
                "ambient_dim {ambient_dim} does not divide the {} response columns",
                y_raw.ncols()
            )));
        }
        let points_per_cloud = config
            .data
            .points_per_cloud
            .unwrap_or(y_raw.ncols() / ambient_dim);
        Ok(LoadedData {
            x_raw,
            y_raw,
            points_per_cloud,
            ambient_dim,
            generator: None,
        })
    }
}

fn require_output_dir(config: &RunConfig) -> Result<()> {
    if !config.output_dir.is_dir() {
        return Err(McuError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("output_dir {} does not exist", config.output_dir.display()),
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Config echo / replay

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EchoDoc {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
    #[serde(default)]
    pub allow_nonconverged: bool,
    pub config: RunConfig,
}

fn write_echo(config: &RunConfig, echo: &EchoDoc) -> Result<()> {
    let text = toml::to_string_pretty(echo).map_err(|e| McuError::Config(e.to_string()))?;
    write_atomic(&config.output_dir.join("config_echo.toml"), text.as_bytes())
}

// ---------------------------------------------------------------------------
// generate

/// Write X.csv, Y.csv (plus base_plane.csv for the Swiss roll) and a
/// JSON manifest into the output directory.
pub fn cmd_generate(config: &RunConfig) -> Result<Vec<PathBuf>> {
    require_output_dir(config)?;
    if config.data.kind.is_none() {
        return Err(McuError::Config(
            "generate requires generator mode (data.kind)".into(),
        ));
    }
    let spec = config.generator_spec()?;
    let d = datagen::generate(&spec)?;
    let out = &config.output_dir;
    let mut written = Vec::new();

    let x_path = out.join("X.csv");
    write_matrix_csv(&x_path, &d.x)?;
    written.push(x_path);
    let y_path = out.join("Y.csv");
    write_matrix_csv(&y_path, &d.y)?;
    written.push(y_path);
    if let Some(plane) = &d.base_plane {
        let p = out.join("base_plane.csv");
        write_matrix_csv(&p, plane)?;
        written.push(p);
    }
    let manifest_path = out.join("manifest.json");
    Manifest::from_run(&spec, &d).write(&manifest_path)?;
    written.push(manifest_path);

    write_echo(
        config,
        &EchoDoc {
            command: "generate".into(),
            method: None,
            nominal: None,
            truth: None,
            allow_nonconverged: false,
            config: config.clone(),
        },
    )?;
    Ok(written)
}

// ---------------------------------------------------------------------------
// fit

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub objective_value: f64,
    pub primal_residual: f64,
    pub psd_violation: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Worst relative edge-isometry residual of the returned Q.
    pub max_edge_residual: f64,
    /// |tr(11^T Q)| relative to tr(Q).
    pub centering_residual: f64,
    pub trace: f64,
    pub trace_bound: f64,
}

#[derive(Debug)]
pub struct FitResult {
    pub method: Method,
    pub data: LoadedData,
    pub x: CovariateMatrix,
    pub y: ResponseMatrix,
    pub embedding: Embedding,
    pub model: RegressionModel,
    pub solver: Option<SolverDiagnostics>,
    pub fit_seconds: f64,
}

/// The full fitting chain: standardize, center/scale, neighbor graph,
/// unfold (SDP or PCA), recover the embedding, ridge-regress it on the
/// covariates.
pub fn fit_in_memory(
    config: &RunConfig,
    method: Method,
    allow_nonconverged: bool,
) -> Result<FitResult> {
    let started = Instant::now();
    let data = load_dataset(config)?;
    let x = standardize_covariates(&data.x_raw)?;
    let y = center_scale_responses(&data.y_raw, data.points_per_cloud, data.ambient_dim)?;
    let ucfg = config.unfold_config(method)?;

    let (embedding, solver) = match method {
        Method::Pca => (unfold::pca_embed(&y, ucfg.m_tilde)?, None),
        Method::Mcu | Method::Mvu => {
            let graph = build_knn_graph(&y, ucfg.k, ucfg.rule)?;
            let g = gram(&y);
            let problem = match method {
                Method::Mcu => unfold::build_mcu_problem(&x, &y, &graph, &g, &ucfg),
                _ => {
                    let hint = match ucfg.m_tilde {
                        DimensionChoice::Fixed(m) => m,
                        DimensionChoice::Auto => x.p(),
                    };
                    unfold::build_mvu_problem(&y, &graph, &g, &ucfg, hint)
                }
            };
            let options = SolverOptions {
                max_iterations: config.unfold.max_iterations,
                ..Default::default()
            };
            let solution = sdp::solve(&problem, &options)?;
            if !solution.converged && !allow_nonconverged {
                return Err(McuError::NotConverged {
                    iterations: solution.iterations,
                    residual: solution.primal_residual.max(solution.psd_violation),
                });
            }

            // certify the returned Q against the raw constraints
            let mut max_edge = 0.0f64;
            let mut centering = 0.0f64;
            for (c, b) in &problem.equality_constraints {
                let v = c.apply(&solution.q);
                match c {
                    sdp::ConstraintMatrix::AllOnes => centering = (v - b).abs(),
                    _ => {
                        let rel = (v - b).abs() / b.abs().max(1e-12);
                        max_edge = max_edge.max(rel);
                    }
                }
            }
            let trace = solution.q.trace();
            let diagnostics = SolverDiagnostics {
                objective_value: solution.objective_value,
                primal_residual: solution.primal_residual,
                psd_violation: solution.psd_violation,
                iterations: solution.iterations,
                converged: solution.converged,
                max_edge_residual: max_edge,
                centering_residual: centering / trace.abs().max(1e-12),
                trace,
                trace_bound: problem.trace_bound,
            };
            (
                unfold::recover_embedding(&solution, ucfg.m_tilde, method)?,
                Some(diagnostics),
            )
        }
    };

    let model = regress::fit_ridge(&x, &embedding, config.regression.lambda)?;
    Ok(FitResult {
        method,
        data,
        x,
        y,
        embedding,
        model,
        solver,
        fit_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Serialized model bundle: everything needed to predict embeddings for
/// new covariates and to map new responses into the training frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelBundle {
    pub method: String,
    pub lambda: f64,
    pub b_hat: Vec<Vec<f64>>,
    pub m_tilde: usize,
    pub rank_deficient: bool,
    pub eigenvalues: Vec<f64>,
    pub covariate_means: Vec<f64>,
    pub covariate_stds: Vec<f64>,
    pub response_column_means: Vec<f64>,
    pub global_scale: f64,
    pub points_per_cloud: usize,
    pub ambient_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverDiagnostics>,
}

impl ModelBundle {
    fn from_fit(fit: &FitResult) -> Self {
        let b = &fit.model.b_hat;
        Self {
            method: fit.method.name().into(),
            lambda: fit.model.lambda,
            b_hat: (0..b.nrows())
                .map(|i| (0..b.ncols()).map(|j| b[(i, j)]).collect())
                .collect(),
            m_tilde: fit.embedding.m_tilde,
            rank_deficient: fit.embedding.rank_deficient,
            eigenvalues: fit.embedding.eigenvalues.clone(),
            covariate_means: fit.x.column_means.clone(),
            covariate_stds: fit.x.column_stds.clone(),
            response_column_means: fit.y.column_means.clone(),
            global_scale: fit.y.global_scale,
            points_per_cloud: fit.y.points_per_cloud,
            ambient_dim: fit.y.ambient_dim,
            solver: fit.solver.clone(),
        }
    }
}

fn bundle_dir(config: &RunConfig, method: Method) -> PathBuf {
    config.output_dir.join(format!("fit_{}", method.name()))
}

fn write_bundle(config: &RunConfig, fit: &FitResult) -> Result<PathBuf> {
    let dir = bundle_dir(config, fit.method);
    std::fs::create_dir_all(&dir)?;
    write_matrix_csv(&dir.join("embedding.csv"), &fit.embedding.y_tilde)?;
    let bundle = ModelBundle::from_fit(fit);
    let json = serde_json::to_string_pretty(&bundle)?;
    write_atomic(&dir.join("model.json"), json.as_bytes())?;
    Ok(dir)
}

/// Timings live in their own file so the numeric artifacts stay
/// bit-identical under replay.
fn write_timings(config: &RunConfig, entries: &[(String, f64)]) -> Result<()> {
    let map: std::collections::BTreeMap<&str, f64> = entries
        .iter()
        .map(|(k, v)| (k.as_str(), *v))
        .collect();
    let json = serde_json::to_string_pretty(&map)?;
    write_atomic(&config.output_dir.join("timings.json"), json.as_bytes())
}

pub fn cmd_fit(config: &RunConfig, method: Method, allow_nonconverged: bool) -> Result<PathBuf> {
    require_output_dir(config)?;
    let fit = fit_in_memory(config, method, allow_nonconverged)?;
    let dir = write_bundle(config, &fit)?;
    write_timings(config, &[(format!("fit_{}", method.name()), fit.fit_seconds)])?;
    write_echo(
        config,
        &EchoDoc {
            command: "fit".into(),
            method: Some(method.name().into()),
            nominal: None,
            truth: None,
            allow_nonconverged,
            config: config.clone(),
        },
    )?;
    Ok(dir)
}

// ---------------------------------------------------------------------------
// compare

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub m_tilde: usize,
    pub rre: SummaryStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverDiagnostics>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub methods: Vec<MethodReport>,
    pub crate_version: String,
}

/// Per-sample relative reconstruction errors of the ridge-predicted
/// embedding, in the method's own embedding space.
pub fn per_sample_rre(fit: &FitResult) -> Result<Vec<f64>> {
    let predicted = fit.model.predict_batch(&fit.x.values);
    let n = fit.x.n();
    let m = fit.embedding.m_tilde;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let truth: Vec<f64> = (0..m).map(|c| fit.embedding.y_tilde[(i, c)]).collect();
        let hat: Vec<f64> = (0..m).map(|c| predicted[(i, c)]).collect();
        out.push(regress::rre(&truth, &hat)?);
    }
    Ok(out)
}

/// Fit all three methods, evaluate per-sample RRE, and emit the report
/// as JSON, a CSV table, the raw per-sample CSV and an SVG boxplot.
pub fn cmd_compare(config: &RunConfig, allow_nonconverged: bool) -> Result<ComparisonReport> {
    require_output_dir(config)?;
    let methods = [Method::Mcu, Method::Mvu, Method::Pca];
    let mut reports = Vec::new();
    let mut rre_columns: Vec<Vec<f64>> = Vec::new();
    let mut timings = Vec::new();

    for &method in &methods {
        let fit = fit_in_memory(config, method, allow_nonconverged)?;
        write_bundle(config, &fit)?;
        let rre = per_sample_rre(&fit)?;
        reports.push(MethodReport {
            method: method.name().into(),
            m_tilde: fit.embedding.m_tilde,
            rre: summarize(&rre),
            solver: fit.solver.clone(),
        });
        timings.push((format!("fit_{}", method.name()), fit.fit_seconds));
        rre_columns.push(rre);
    }

    // per-sample CSV: every report number is recomputable from this
    let mut samples = String::from("sample,mcu,mvu,pca\n");
    for i in 0..rre_columns[0].len() {
        use std::fmt::Write;
        write!(
            samples,
            "{},{:?},{:?},{:?}\n",
            i, rre_columns[0][i], rre_columns[1][i], rre_columns[2][i]
        )
        .unwrap();
    }
    write_atomic(&config.output_dir.join("rre_samples.csv"), samples.as_bytes())?;

    let mut table = String::from("method,median,q1,q3,iqr,min,max\n");
    for r in &reports {
        use std::fmt::Write;
        write!(
            table,
            "{},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            r.method, r.rre.median, r.rre.q1, r.rre.q3, r.rre.iqr, r.rre.min, r.rre.max
        )
        .unwrap();
    }
    write_atomic(&config.output_dir.join("rre_summary.csv"), table.as_bytes())?;

    let report = ComparisonReport {
        seed: config.seed,
        methods: reports,
        crate_version: env!("CARGO_PKG_VERSION").into(),
    };
    let json = serde_json::to_string_pretty(&report)?;
    write_atomic(&config.output_dir.join("comparison.json"), json.as_bytes())?;

    let entries: Vec<(String, SummaryStats)> = report
        .methods
        .iter()
        .map(|r| (r.method.clone(), r.rre.clone()))
        .collect();
    let svg = render_boxplot_svg("relative reconstruction error", &entries);
    write_atomic(&config.output_dir.join("rre_boxplot.svg"), svg.as_bytes())?;

    write_timings(config, &timings)?;
    write_echo(
        config,
        &EchoDoc {
            command: "compare".into(),
            method: None,
            nominal: None,
            truth: None,
            allow_nonconverged,
            config: config.clone(),
        },
    )?;
    Ok(report)
}

/// Minimal boxplot renderer: axes, boxes, median lines and whiskers.
pub fn render_boxplot_svg(title: &str, entries: &[(String, SummaryStats)]) -> String {
    use std::fmt::Write;
    let (w, h) = (440.0, 300.0);
    let (left, right, top, bottom) = (60.0, 20.0, 30.0, 40.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;

    let lo = entries.iter().map(|(_, s)| s.min).fold(f64::INFINITY, f64::min);
    let hi = entries
        .iter()
        .map(|(_, s)| s.max)
        .fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.05 * (hi - lo).max(1e-12);
    let (lo, hi) = (lo - pad, hi + pad);
    let ty = |v: f64| top + plot_h * (1.0 - (v - lo) / (hi - lo));

    let mut s = String::new();
    write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         font-family=\"monospace\" font-size=\"11\">\n"
    )
    .unwrap();
    write!(
        s,
        "<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\">{title}</text>\n",
        left + plot_w / 2.0
    )
    .unwrap();
    // axes
    write!(
        s,
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        top + plot_h
    )
    .unwrap();
    write!(
        s,
        "<line x1=\"{left}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        top + plot_h,
        left + plot_w,
        top + plot_h
    )
    .unwrap();
    for i in 0..5 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = ty(v);
        write!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.4}</text>\n",
            left - 5.0,
            y + 3.0,
            v
        )
        .unwrap();
        write!(
            s,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{left}\" y2=\"{y:.1}\" stroke=\"black\"/>\n",
            left - 3.0
        )
        .unwrap();
    }

    let slot = plot_w / entries.len() as f64;
    for (i, (label, stats)) in entries.iter().enumerate() {
        let cx = left + slot * (i as f64 + 0.5);
        let bw = (slot * 0.4).min(50.0);
        // whiskers
        write!(
            s,
            "<line x1=\"{cx:.1}\" y1=\"{:.1}\" x2=\"{cx:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            ty(stats.max),
            ty(stats.q3)
        )
        .unwrap();
        write!(
            s,
            "<line x1=\"{cx:.1}\" y1=\"{:.1}\" x2=\"{cx:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            ty(stats.q1),
            ty(stats.min)
        )
        .unwrap();
        // box and median
        write!(
            s,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" \
             fill=\"none\" stroke=\"black\"/>\n",
            cx - bw / 2.0,
            ty(stats.q3),
            bw,
            (ty(stats.q1) - ty(stats.q3)).max(0.5)
        )
        .unwrap();
        write!(
            s,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            cx - bw / 2.0,
            ty(stats.median),
            cx + bw / 2.0,
            ty(stats.median)
        )
        .unwrap();
        write!(
            s,
            "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{label}</text>\n",
            top + plot_h + 16.0
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

// ---------------------------------------------------------------------------
// optimize

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub method: String,
    pub seed: u64,
    /// Recovered control setting in original units.
    pub x_star: Vec<f64>,
    pub objective: f64,
    pub evaluations: usize,
    /// Best-matching point for the nominal in embedding space.
    pub inferred_embedding: Vec<f64>,
    pub inferred_objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_nom: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate_deviation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointwise_deviation: Option<SummaryStats>,
}

/// Nominal response and, when known, its generating controls.
fn nominal_response(
    data: &LoadedData,
    nominal_path: Option<&Path>,
    truth: Option<&[f64]>,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    if let Some(path) = nominal_path {
        let m = read_matrix_csv(path)?;
        let row: Vec<f64> = if m.nrows() == 1 {
            m.row(0).iter().copied().collect()
        } else if m.ncols() == 1 {
            m.column(0).iter().copied().collect()
        } else {
            return Err(McuError::Config(format!(
                "nominal file must be a single row or column, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        };
        return Ok((row, truth.map(|t| t.to_vec())));
    }
    // held-out nominal: the next control draw after the training set,
    // from the same per-sample streams, so training data is unchanged
    let spec = data.generator.as_ref().ok_or_else(|| {
        McuError::Config("optimize needs either a nominal file or generator mode".into())
    })?;
    let n = spec.sample_count;
    let all = datagen::draw_controls(n + 1, spec.seed);
    let mut held = spec.clone();
    held.sample_count = 1;
    held.controls = DMatrix::from_fn(1, 2, |_, j| all[(n, j)]);
    let d = datagen::generate(&held)?;
    let row: Vec<f64> = d.y.row(0).iter().copied().collect();
    Ok((row, Some(vec![all[(n, 0)], all[(n, 1)]])))
}

/// Infer the nominal's embedding from its distance profile, then search
/// covariate space for the setting whose predicted embedding matches it.
pub fn cmd_optimize(
    config: &RunConfig,
    method: Method,
    nominal_path: Option<&Path>,
    truth: Option<&[f64]>,
    allow_nonconverged: bool,
) -> Result<OptimizeReport> {
    require_output_dir(config)?;
    let fit = fit_in_memory(config, method, allow_nonconverged)?;
    let (y_nom_raw, x_nom) = nominal_response(&fit.data, nominal_path, truth)?;

    let target = optimize::make_target(&y_nom_raw, &fit.y, config.resolved_k())?;
    let mut anneal = config.anneal_config();
    if anneal.bounds.len() != fit.x.p() {
        anneal.bounds = optimize::default_search_box(&fit.x);
    }
    let (inferred, inferred_obj) =
        optimize::infer_nominal_embedding(&target, &fit.embedding, &anneal)?;
    let (x_star, objective, evaluations) =
        optimize::recover_covariates(&target, &fit.model, &fit.embedding, &fit.x, &anneal)?;

    let covariate_deviation = match &x_nom {
        Some(t) => Some(regress::covariate_deviation(&x_star, t)?),
        None => None,
    };

    // re-generate at the recovered setting when the generator is known
    let pointwise = match &fit.data.generator {
        Some(spec) if x_star.len() == 2 => {
            let mut regen = spec.clone();
            regen.sample_count = 1;
            regen.controls =
                DMatrix::from_fn(1, 2, |_, j| x_star[j].clamp(1.0, 10.0));
            let d = datagen::generate(&regen)?;
            let y_hat: Vec<f64> = d.y.row(0).iter().copied().collect();
            let dists =
                regress::pointwise_deviation(&y_hat, &y_nom_raw, fit.data.ambient_dim, None)?;
            Some(summarize(&dists))
        }
        _ => None,
    };

    let report = OptimizeReport {
        method: method.name().into(),
        seed: config.seed,
        x_star,
        objective,
        evaluations,
        inferred_embedding: inferred,
        inferred_objective: inferred_obj,
        x_nom,
        covariate_deviation,
        pointwise_deviation: pointwise,
    };
    let json = serde_json::to_string_pretty(&report)?;
    write_atomic(
        &config
            .output_dir
            .join(format!("optimize_{}.json", method.name())),
        json.as_bytes(),
    )?;
    write_echo(
        config,
        &EchoDoc {
            command: "optimize".into(),
            method: Some(method.name().into()),
            nominal: nominal_path.map(|p| p.to_path_buf()),
            truth: truth.map(|t| t.to_vec()),
            allow_nonconverged,
            config: config.clone(),
        },
    )?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// replay

/// Re-run the command recorded in a run directory's config echo into a
/// scratch directory and byte-compare every artifact. Returns the list
/// of mismatched files (empty = bit-identical).
pub fn cmd_replay(run_dir: &Path, scratch_dir: &Path) -> Result<Vec<PathBuf>> {
    let echo_text = std::fs::read_to_string(run_dir.join("config_echo.toml"))?;
    let echo: EchoDoc =
        toml::from_str(&echo_text).map_err(|e| McuError::Config(e.to_string()))?;
    let mut config = echo.config.clone();
    config.validate()?;
    std::fs::create_dir_all(scratch_dir)?;
    config.output_dir = scratch_dir.to_path_buf();

    match echo.command.as_str() {
        "generate" => {
            cmd_generate(&config)?;
        }
        "fit" => {
            let method = Method::parse(echo.method.as_deref().unwrap_or("mcu"))?;
            cmd_fit(&config, method, echo.allow_nonconverged)?;
        }
        "compare" => {
            cmd_compare(&config, echo.allow_nonconverged)?;
        }
        "optimize" => {
            let method = Method::parse(echo.method.as_deref().unwrap_or("mcu"))?;
            cmd_optimize(
                &config,
                method,
                echo.nominal.as_deref(),
                echo.truth.as_deref(),
                echo.allow_nonconverged,
            )?;
        }
        other => {
            return Err(McuError::Config(format!(
                "config echo names unknown command '{other}'"
            )))
        }
    }

    // compare all numeric artifacts; the echo and timings are excluded
    // (they record the run, not its results)
    let mut mismatches = Vec::new();
    let mut stack = vec![run_dir.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let mut entries: Vec<_> =
            std::fs::read_dir(&dir)?.collect::<std::io::Result<Vec<_>>>()?;
        entries.sort_by_key(|e| e.path());
        for entry in entries {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let name = path.file_name().unwrap().to_string_lossy();
            if name == "config_echo.toml" || name == "timings.json" {
                continue;
            }
            let rel = path.strip_prefix(run_dir).unwrap();
            let replayed = scratch_dir.join(rel);
            let original = std::fs::read(&path)?;
            match std::fs::read(&replayed) {
                Ok(bytes) if bytes == original => {}
                _ => mismatches.push(rel.to_path_buf()),
            }
        }
    }
    Ok(mismatches)
}
