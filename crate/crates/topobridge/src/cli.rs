//! Command-line surface: build topologies, solve bridges, run simulations,
//! compute metrics, and reproduce the synthetic experiment.
//!
//! Exit codes: 1 = usage, 2 = data (files/schema), 3 = numerical.
//! Every sampling command requires an explicit `--seed`; there is no
//! wall-clock default.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::ReferenceDynamics;
use crate::error::Error;
use crate::gp::{gp_covariance, sample_gp, GPKernelSpec};
use crate::gtsb::{Endpoint, GTSBridge, GaussianMeasure};
use crate::metrics::{bures_wasserstein, empirical_wasserstein, gaussian_kl, DistanceReport, OtMethod};
use crate::sim::{
    ensemble_cov, ensemble_mean, euler_maruyama, gaussian_policies, probability_flow,
    simulate_doob_bridge, simulate_fb_tsde, simulate_gtsb, simulate_reverse_score, Direction,
    Record, TimeGrid, TrajectoryEnsemble,
};
use crate::spectral::{eigendecompose, SpectralOperator};
use crate::synthetic::{experiment_endpoints, synthetic_graph_30};
use crate::topology::{
    build_complex, hodge_projectors, laplacian, HodgeProjectors, LaplacianKind, LaplacianSpec,
    Normalization, SimplicialComplex2,
};

const SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------- errors

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

type CliResult<T> = std::result::Result<T, CliError>;

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::DuplicateSimplex(_)
            | Error::DanglingTriangle(..)
            | Error::InvalidIndex { .. }
            | Error::IncompatibleKind(..)
            | Error::NonPositiveWeight(_)
            | Error::DegeneratePoints(..)
            | Error::TooManyNeighbors { .. }
            | Error::NotSymmetric(..)
            | Error::SizeLimitExceeded { .. }
            | Error::DimensionMismatch { .. }
            | Error::InvalidInput(_) => CliError::Data(e.to_string()),
            Error::SingularOperator(_)
            | Error::SingularFunctionValue(_)
            | Error::SingularEndpointCovariance(_)
            | Error::SingularMarginal(_)
            | Error::SingularCovariance(_)
            | Error::EndpointSingularity(_) => CliError::Numerical(format!(
                "{e}; remedy: regularize the Laplacian with --eps"
            )),
            Error::ConvergenceFailure
            | Error::NoConvergence { .. }
            | Error::NonFiniteState { .. }
            | Error::NotPsd(_)
            | Error::MissingProjectors => CliError::Numerical(e.to_string()),
        }
    }
}

fn data_err<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Data(format!("{context}: {e}"))
}

// ------------------------------------------------------------- arguments

#[derive(Parser)]
#[command(
    name = "topobridge",
    version,
    about = "Schrödinger bridges between Gaussian signal distributions on graphs and simplicial complexes"
)]
struct Cli {
    /// RNG seed; required by every sampling command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for ensemble simulation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Ridge added to the Laplacian (`L + eps I`), overriding the config.
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build simplicial complexes and inspect their spectra.
    Topology {
        #[command(subcommand)]
        cmd: TopologyCmd,
    },
    /// Solve Gaussian topological Schrödinger bridges.
    Bridge {
        #[command(subcommand)]
        cmd: BridgeCmd,
    },
    /// Simulate the stochastic processes tied to a bridge configuration.
    Sim {
        #[command(subcommand)]
        cmd: SimCmd,
    },
    /// Distances between sample sets or Gaussian moments.
    Metrics(MetricsArgs),
    /// Scripted end-to-end experiments.
    Experiment {
        #[command(subcommand)]
        cmd: ExperimentCmd,
    },
}

#[derive(Subcommand)]
enum TopologyCmd {
    /// Assemble a complex from edge/triangle CSVs or a kNN point cloud.
    Build {
        /// Edge CSV with header `tail,head[,weight]`, 0-based indices.
        #[arg(long)]
        edges: Option<PathBuf>,
        /// Triangle CSV with header `a,b,c`.
        #[arg(long)]
        triangles: Option<PathBuf>,
        /// Build a kNN graph instead of reading an edge list.
        #[arg(long)]
        knn: Option<usize>,
        /// Point-cloud CSV (one point per row) for --knn.
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MetricArg::Euclidean)]
        metric: MetricArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Eigenvalues (and optionally eigenvectors) of a chosen Laplacian.
    Spectrum {
        /// Complex JSON produced by `topology build`.
        #[arg(long)]
        complex: PathBuf,
        #[arg(long, value_enum, default_value_t = KindArg::Graph)]
        kind: KindArg,
        #[arg(long, value_enum, default_value_t = NormArg::Combinatorial)]
        normalization: NormArg,
        /// Eigenvalue CSV output.
        #[arg(long)]
        out: PathBuf,
        /// Optional eigenvector matrix CSV (columns are eigenvectors).
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum BridgeCmd {
    /// Solve the static coupling and report the TE-OT objective.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Marginal means/covariances on a time grid plus the BW(Sigma_t, Sigma_1) curve.
    Marginal {
        #[arg(long)]
        config: PathBuf,
        /// Time grid `start:end:step`, e.g. `0.0:1.0:0.02`.
        #[arg(long)]
        t: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw ensembles from the bridge.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: SampleMode,
        /// Number of paths / draws.
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        /// Euler-Maruyama steps (sde mode).
        #[arg(long, default_value_t = 500)]
        steps: usize,
        /// Recording times `start:end:step` (interpolant/conditional modes
        /// evaluate exactly at these times).
        #[arg(long, default_value = "0.0:1.0:0.25")]
        t: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SampleMode {
    Interpolant,
    Sde,
    Conditional,
}

#[derive(Subcommand)]
enum SimCmd {
    /// Reference-dynamics Euler-Maruyama from nu0 (or a fixed x0).
    Em(SimArgs),
    /// Forward diffusion of nu0 plus backward analytic-score recovery.
    ReverseScore(SimArgs),
    /// Doob h-transform bridge pinned at x0 and x1.
    Doob(SimArgs),
    /// Forward/backward FB-TSDE under the optimal Gaussian policies.
    Fb(SimArgs),
    /// Deterministic probability-flow ODE under the optimal policies.
    Flow(SimArgs),
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long, value_enum)]
    metric: MetricKind,
    /// Sample CSV (one sample per row) for empirical metrics.
    #[arg(long)]
    samples_a: Option<PathBuf>,
    #[arg(long)]
    samples_b: Option<PathBuf>,
    /// Gaussian moments for bw/kl.
    #[arg(long)]
    mean_a: Option<PathBuf>,
    #[arg(long)]
    cov_a: Option<PathBuf>,
    #[arg(long)]
    mean_b: Option<PathBuf>,
    #[arg(long)]
    cov_b: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MethodArg::Exact)]
    method: MethodArg,
    /// Sinkhorn regularization strength.
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Report JSON destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricKind {
    /// Bures-Wasserstein between Gaussian moments.
    Bw,
    /// KL divergence between Gaussian moments.
    Kl,
    /// Order-1 empirical Wasserstein.
    W1,
    /// Order-2 empirical Wasserstein.
    W2,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Exact,
    Sinkhorn,
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// The bundled 30-node graph-GP bridge experiment with its
    /// machine-readable acceptance checks.
    Synthetic {
        #[arg(long)]
        out: PathBuf,
        /// Restrict to one dynamics family instead of the default trio.
        #[arg(long, value_enum)]
        dynamics: Option<DynArg>,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        g: Option<f64>,
        #[arg(long, default_value_t = 200)]
        paths: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DynArg {
    Bm,
    Ve,
    Vp,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Euclidean,
    GeodesicSphere,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Graph,
    HodgeDown,
    HodgeUp,
    HodgeFull,
}

impl From<KindArg> for LaplacianKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Graph => LaplacianKind::Graph,
            KindArg::HodgeDown => LaplacianKind::HodgeDown,
            KindArg::HodgeUp => LaplacianKind::HodgeUp,
            KindArg::HodgeFull => LaplacianKind::HodgeFull,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Combinatorial,
    Symmetric,
    RwSymmetrized,
    MaxEigenvalueScaled,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Combinatorial => Normalization::Combinatorial,
            NormArg::Symmetric => Normalization::Symmetric,
            NormArg::RwSymmetrized => Normalization::RwSymmetrized,
            NormArg::MaxEigenvalueScaled => Normalization::MaxEigenvalueScaled,
        }
    }
}

// ---------------------------------------------------------- config files

#[derive(Serialize, Deserialize, Clone)]
#[serde(rename_all = "snake_case")]
enum TopologySource {
    /// Complex JSON produced by `topology build`.
    ComplexFile(PathBuf),
    /// A fixture shipped with the binary; currently `synthetic30`.
    Bundled(String),
}

#[derive(Serialize, Deserialize, Clone)]
#[serde(tag = "variant", rename_all = "snake_case")]
enum DynamicsVariantConfig {
    TsheatBm { c: f64, g: f64 },
    TsheatVe { c: f64, sigma_min: f64, sigma_max: f64 },
    TsheatVp { c: f64, beta_min: f64, beta_max: f64 },
}

#[derive(Serialize, Deserialize, Clone)]
struct DynamicsConfig {
    #[serde(flatten)]
    variant: DynamicsVariantConfig,
    #[serde(default = "default_laplacian")]
    laplacian: LaplacianSpec,
}

fn default_laplacian() -> LaplacianSpec {
    LaplacianSpec::new(LaplacianKind::Graph)
}

/// One Gaussian endpoint: explicit moment files and/or a GP kernel spec
/// for the covariance. A missing mean is zero; exactly one covariance
/// source must be present.
#[derive(Serialize, Deserialize, Clone)]
struct EndpointConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cov_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gp_spec: Option<GPKernelSpec>,
}

#[derive(Serialize, Deserialize, Clone)]
struct BridgeConfig {
    schema: u32,
    topology: TopologySource,
    dynamics: DynamicsConfig,
    nu0: EndpointConfig,
    nu1: EndpointConfig,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
struct GridConfig {
    start: f64,
    end: f64,
    steps: usize,
}

#[derive(Serialize, Deserialize, Clone)]
struct SimConfig {
    schema: u32,
    topology: TopologySource,
    dynamics: DynamicsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nu0: Option<EndpointConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nu1: Option<EndpointConfig>,
    /// Pinned start point (doob) or deterministic start (em).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x0_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x1_file: Option<PathBuf>,
    grid: GridConfig,
    paths: usize,
    /// Recording times; defaults to 11 evenly spaced grid points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    record: Option<Vec<f64>>,
}

// ------------------------------------------------------------- utilities

/// `%.17g`-style full-precision formatting (17 significant digits,
/// trailing zeros trimmed).
pub fn g17(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.16e}");
    match s.find('e') {
        Some(epos) => {
            let (mant, exp) = s.split_at(epos);
            let mant = mant.trim_end_matches('0').trim_end_matches('.');
            format!("{mant}{exp}")
        }
        None => s,
    }
}

fn read_to_string(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(data_err(&path.display().to_string()))
}

fn write_file(path: &Path, content: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(data_err(&dir.display().to_string()))?;
    }
    fs::write(path, content).map_err(data_err(&path.display().to_string()))
}

fn parse_f64(path: &Path, line: usize, field: &str) -> CliResult<f64> {
    field.trim().parse::<f64>().map_err(|e| {
        CliError::Data(format!("{} line {line}: bad number {field:?}: {e}", path.display()))
    })
}

fn parse_usize(path: &Path, line: usize, field: &str) -> CliResult<usize> {
    field.trim().parse::<usize>().map_err(|e| {
        CliError::Data(format!("{} line {line}: bad index {field:?}: {e}", path.display()))
    })
}

/// Reads a CSV of numeric rows, skipping one header row if the first
/// field does not parse as a number.
fn read_numeric_csv(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if i == 0 && fields[0].trim().parse::<f64>().is_err() {
            continue; // header
        }
        let row = fields
            .iter()
            .map(|f| parse_f64(path, i + 1, f))
            .collect::<CliResult<Vec<f64>>>()?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(CliError::Data(format!(
                "{} line {}: ragged row ({} fields, expected {})",
                path.display(),
                i + 1,
                row.len(),
                width.unwrap()
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

fn read_matrix_csv(path: &Path) -> CliResult<DMatrix<f64>> {
    let rows = read_numeric_csv(path)?;
    let (r, c) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn read_vector_csv(path: &Path) -> CliResult<DVector<f64>> {
    let rows = read_numeric_csv(path)?;
    if rows.len() == 1 {
        Ok(DVector::from_vec(rows.into_iter().next().unwrap()))
    } else if rows[0].len() == 1 {
        Ok(DVector::from_iterator(rows.len(), rows.iter().map(|r| r[0])))
    } else {
        Err(CliError::Data(format!("{}: expected a single row or column", path.display())))
    }
}

fn read_samples_csv(path: &Path) -> CliResult<Vec<DVector<f64>>> {
    let rows = read_numeric_csv(path)?;
    Ok(rows.into_iter().map(DVector::from_vec).collect())
}

fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("x_{j}")).collect();
    s.push_str(&header.join(","));
    s.push('\n');
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| g17(m[(i, j)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn vector_row(v: &DVector<f64>) -> String {
    v.iter().map(|&x| g17(x)).collect::<Vec<_>>().join(",")
}

/// `start:end:step` time grids, inclusive of both ends up to rounding.
fn parse_time_range(spec: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || CliError::Usage(format!("bad time range {spec:?}; expected start:end:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> =
        parts.iter().map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<CliResult<_>>()?;
    let (a, b, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || b < a {
        return Err(bad());
    }
    let count = ((b - a) / step).round() as usize;
    let mut ts: Vec<f64> = (0..=count).map(|k| a + k as f64 * step).collect();
    ts.retain(|&t| t <= b + 1e-12);
    Ok(ts)
}

fn json_pretty<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(data_err("serializing JSON"))
}

// ---------------------------------------------------------- construction

fn load_complex(source: &TopologySource) -> CliResult<SimplicialComplex2> {
    match source {
        TopologySource::Bundled(name) if name == "synthetic30" => Ok(synthetic_graph_30()),
        TopologySource::Bundled(name) => {
            Err(CliError::Data(format!("unknown bundled topology {name:?}")))
        }
        TopologySource::ComplexFile(path) => {
            let text = read_to_string(path)?;
            let raw: SimplicialComplex2 =
                serde_json::from_str(&text).map_err(data_err(&path.display().to_string()))?;
            // re-validate through the constructor
            build_complex(&raw.edges, &raw.triangles, raw.edge_weights.clone())
                .map_err(CliError::from)
        }
    }
}

struct Problem {
    operator: Arc<SpectralOperator>,
    projectors: Option<HodgeProjectors>,
    dynamics: ReferenceDynamics,
}

fn build_problem(
    source: &TopologySource,
    cfg: &DynamicsConfig,
    eps_override: Option<f64>,
) -> CliResult<Problem> {
    let complex = load_complex(source)?;
    let mut spec = cfg.laplacian;
    if let Some(eps) = eps_override {
        spec.epsilon = eps;
    }
    let l = laplacian(&complex, &spec)?;
    let operator = Arc::new(eigendecompose(&l)?);
    let projectors = match spec.kind {
        LaplacianKind::Graph => None,
        _ => Some(hodge_projectors(&complex)?),
    };
    let dynamics = match cfg.variant {
        DynamicsVariantConfig::TsheatBm { c, g } => {
            ReferenceDynamics::ts_heat_bm(operator.clone(), c, g)?
        }
        DynamicsVariantConfig::TsheatVe { c, sigma_min, sigma_max } => {
            ReferenceDynamics::ts_heat_ve(operator.clone(), c, sigma_min, sigma_max)?
        }
        DynamicsVariantConfig::TsheatVp { c, beta_min, beta_max } => {
            ReferenceDynamics::ts_heat_vp(operator.clone(), c, beta_min, beta_max)?
        }
    };
    Ok(Problem { operator, projectors, dynamics })
}

fn build_measure(problem: &Problem, cfg: &EndpointConfig, label: &str) -> CliResult<GaussianMeasure> {
    let n = problem.operator.dim();
    let mean = match &cfg.mean_file {
        Some(path) => {
            let v = read_vector_csv(path)?;
            if v.len() != n {
                return Err(CliError::Data(format!(
                    "{label}: mean has {} entries, operator dimension is {n}",
                    v.len()
                )));
            }
            v
        }
        None => DVector::zeros(n),
    };
    let cov = match (&cfg.cov_file, &cfg.gp_spec) {
        (Some(path), None) => read_matrix_csv(path)?,
        (None, Some(spec)) => gp_covariance(spec, &problem.operator, problem.projectors.as_ref())?,
        (Some(_), Some(_)) => {
            return Err(CliError::Data(format!(
                "{label}: give either cov_file or gp_spec, not both"
            )))
        }
        (None, None) => {
            return Err(CliError::Data(format!("{label}: missing cov_file or gp_spec")))
        }
    };
    GaussianMeasure::new(mean, cov).map_err(CliError::from)
}

fn require_seed(seed: Option<u64>) -> CliResult<u64> {
    seed.ok_or_else(|| CliError::Usage("--seed is required for sampling commands".into()))
}

// --------------------------------------------------------------- outputs

#[derive(Serialize)]
struct MomentFiles {
    t: f64,
    mean_file: String,
    cov_file: String,
}

/// Writes the ensemble CSV (`path_id,t,x_0,...`) plus per-time moment
/// files, returning the summary moment index.
fn write_ensemble(
    dir: &Path,
    stem: &str,
    ens: &TrajectoryEnsemble,
) -> CliResult<Vec<MomentFiles>> {
    let n = ens.dim();
    let mut csv = String::from("path_id,t");
    for j in 0..n {
        let _ = write!(csv, ",x_{j}");
    }
    csv.push('\n');
    for m in 0..ens.num_paths() {
        for (k, &t) in ens.times.iter().enumerate() {
            let _ = write!(csv, "{m},{}", g17(t));
            for j in 0..n {
                let _ = write!(csv, ",{}", g17(ens.states[k][m][j]));
            }
            csv.push('\n');
        }
    }
    write_file(&dir.join(format!("{stem}_ensemble.csv")), &csv)?;

    let mut index = Vec::new();
    for (k, &t) in ens.times.iter().enumerate() {
        let mean = ens.mean_at(k);
        let cov = ens.cov_at(k);
        let mean_file = format!("{stem}_mean_{k:04}.csv");
        let cov_file = format!("{stem}_cov_{k:04}.csv");
        let header: Vec<String> = (0..n).map(|j| format!("x_{j}")).collect();
        write_file(
            &dir.join(&mean_file),
            &format!("{}\n{}\n", header.join(","), vector_row(&mean)),
        )?;
        write_file(&dir.join(&cov_file), &matrix_csv(&cov))?;
        index.push(MomentFiles { t, mean_file, cov_file });
    }
    Ok(index)
}

fn record_from_times(grid: &TimeGrid, times: Option<&[f64]>) -> Record {
    match times {
        Some(ts) => {
            let dt = grid.dt();
            let idx: Vec<usize> = ts
                .iter()
                .map(|&t| (((t - grid.start) / dt).round().max(0.0)) as usize)
                .map(|k| k.min(grid.steps))
                .collect();
            Record::At(idx)
        }
        None => {
            let idx: Vec<usize> =
                (0..=10).map(|k| (k * grid.steps + 5) / 10).map(|k| k.min(grid.steps)).collect();
            Record::At(idx)
        }
    }
}

// -------------------------------------------------------------- commands

fn cmd_topology(cmd: TopologyCmd) -> CliResult<()> {
    match cmd {
        TopologyCmd::Build { edges, triangles, knn, points, metric, out } => {
            let complex = match (knn, points, edges) {
                (Some(k), Some(points_path), None) => {
                    let rows = read_numeric_csv(&points_path)?;
                    let metric = match metric {
                        MetricArg::Euclidean => crate::topology::KnnMetric::Euclidean,
                        MetricArg::GeodesicSphere => crate::topology::KnnMetric::GeodesicSphere,
                    };
                    crate::topology::knn_graph(&rows, k, metric, false)?
                }
                (None, None, Some(edges_path)) => {
                    let (edge_list, weights) = read_edges_csv(&edges_path)?;
                    let tri_list = match triangles {
                        Some(p) => read_triangles_csv(&p)?,
                        None => Vec::new(),
                    };
                    build_complex(&edge_list, &tri_list, weights)?
                }
                _ => {
                    return Err(CliError::Usage(
                        "give either --edges [--triangles] or --knn with --points".into(),
                    ))
                }
            };
            let mut doc = serde_json::to_value(&complex).map_err(data_err("complex"))?;
            doc["schema"] = serde_json::json!(SCHEMA_VERSION);
            write_file(&out, &format!("{:#}\n", doc))?;
            eprintln!(
                "wrote {} (n0={}, n1={}, n2={})",
                out.display(),
                complex.n0(),
                complex.n1(),
                complex.n2()
            );
            Ok(())
        }
        TopologyCmd::Spectrum { complex, kind, normalization, out, vectors } => {
            let sc = load_complex(&TopologySource::ComplexFile(complex))?;
            let spec = LaplacianSpec::normalized(kind.into(), normalization.into());
            let l = laplacian(&sc, &spec)?;
            let op = eigendecompose(&l)?;
            let mut csv = String::from("index,eigenvalue\n");
            for (i, &ev) in op.eigenvalues().iter().enumerate() {
                let _ = writeln!(csv, "{i},{}", g17(ev));
            }
            write_file(&out, &csv)?;
            if let Some(vec_path) = vectors {
                write_file(&vec_path, &matrix_csv(op.eigenvectors()))?;
            }
            Ok(())
        }
    }
}

fn read_edges_csv(path: &Path) -> CliResult<(Vec<[usize; 2]>, Option<Vec<f64>>)> {
    let text = read_to_string(path)?;
    let mut edges = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut saw_weight = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if i == 0 && fields[0].trim().parse::<f64>().is_err() {
            continue;
        }
        if fields.len() < 2 || fields.len() > 3 {
            return Err(CliError::Data(format!(
                "{} line {}: expected tail,head[,weight]",
                path.display(),
                i + 1
            )));
        }
        let tail = parse_usize(path, i + 1, fields[0])?;
        let head = parse_usize(path, i + 1, fields[1])?;
        edges.push([tail, head]);
        if fields.len() == 3 {
            saw_weight = true;
            weights.push(parse_f64(path, i + 1, fields[2])?);
        } else if saw_weight {
            return Err(CliError::Data(format!(
                "{} line {}: weight column present only on some rows",
                path.display(),
                i + 1
            )));
        }
    }
    Ok((edges, if saw_weight { Some(weights) } else { None }))
}

fn read_triangles_csv(path: &Path) -> CliResult<Vec<[usize; 3]>> {
    let text = read_to_string(path)?;
    let mut tris = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if i == 0 && fields[0].trim().parse::<f64>().is_err() {
            continue;
        }
        if fields.len() != 3 {
            return Err(CliError::Data(format!(
                "{} line {}: expected a,b,c",
                path.display(),
                i + 1
            )));
        }
        tris.push([
            parse_usize(path, i + 1, fields[0])?,
            parse_usize(path, i + 1, fields[1])?,
            parse_usize(path, i + 1, fields[2])?,
        ]);
    }
    Ok(tris)
}

fn load_bridge(config: &Path, eps: Option<f64>) -> CliResult<(Problem, GTSBridge)> {
    let text = read_to_string(config)?;
    let cfg: BridgeConfig =
        serde_json::from_str(&text).map_err(data_err(&config.display().to_string()))?;
    if cfg.schema != SCHEMA_VERSION {
        return Err(CliError::Data(format!(
            "unsupported schema {} (expected {SCHEMA_VERSION})",
            cfg.schema
        )));
    }
    let problem = build_problem(&cfg.topology, &cfg.dynamics, eps)?;
    let nu0 = build_measure(&problem, &cfg.nu0, "nu0")?;
    let nu1 = build_measure(&problem, &cfg.nu1, "nu1")?;
    let bridge = GTSBridge::solve(problem.dynamics.clone(), nu0, nu1)?;
    Ok((problem, bridge))
}

#[derive(Serialize)]
struct SolveReport {
    schema: u32,
    dim: usize,
    te_ot_objective: f64,
    coupling_file: String,
    sigma0_trace: f64,
    sigma1_trace: f64,
}

fn cmd_bridge(cmd: BridgeCmd, seed: Option<u64>, eps: Option<f64>) -> CliResult<()> {
    match cmd {
        BridgeCmd::Solve { config, out } => {
            let (_, bridge) = load_bridge(&config, eps)?;
            write_file(&out.join("coupling.csv"), &matrix_csv(&bridge.coupling().cross_cov))?;
            let report = SolveReport {
                schema: SCHEMA_VERSION,
                dim: bridge.dim(),
                te_ot_objective: bridge.te_ot_objective()?,
                coupling_file: "coupling.csv".into(),
                sigma0_trace: bridge.nu0().cov().trace(),
                sigma1_trace: bridge.nu1().cov().trace(),
            };
            write_file(&out.join("solution.json"), &json_pretty(&report)?)?;
            Ok(())
        }
        BridgeCmd::Marginal { config, t, out } => {
            let (_, bridge) = load_bridge(&config, eps)?;
            let times = parse_time_range(&t)?;
            let n = bridge.dim();
            let mut mean_csv = String::from("t");
            for j in 0..n {
                let _ = write!(mean_csv, ",x_{j}");
            }
            mean_csv.push('\n');
            let mut bw_csv = String::from("t,bw_to_sigma1\n");
            let mut index = Vec::new();
            for (k, &tv) in times.iter().enumerate() {
                let marg = bridge.marginal(tv);
                let _ = writeln!(mean_csv, "{},{}", g17(tv), vector_row(marg.measure.mean()));
                let cov_file = format!("cov_{k:04}.csv");
                write_file(&out.join(&cov_file), &matrix_csv(marg.measure.cov()))?;
                let bw = bures_wasserstein(
                    marg.measure.cov(),
                    bridge.nu1().cov(),
                    Some(marg.measure.mean()),
                    Some(bridge.nu1().mean()),
                )?;
                let _ = writeln!(bw_csv, "{},{}", g17(tv), g17(bw));
                index.push(MomentFiles { t: tv, mean_file: "marginal_mean.csv".into(), cov_file });
            }
            write_file(&out.join("marginal_mean.csv"), &mean_csv)?;
            write_file(&out.join("bw_curve.csv"), &bw_csv)?;
            write_file(
                &out.join("marginals.json"),
                &json_pretty(&serde_json::json!({
                    "schema": SCHEMA_VERSION,
                    "times": times,
                    "moments": index,
                }))?,
            )?;
            Ok(())
        }
        BridgeCmd::Sample { config, mode, paths, steps, t, out } => {
            let seed = require_seed(seed)?;
            let (_, bridge) = load_bridge(&config, eps)?;
            let times = parse_time_range(&t)?;
            match mode {
                SampleMode::Sde => {
                    let grid = TimeGrid::new(0.0, 1.0, steps)?;
                    let x0 = sample_gp(bridge.nu0().cov(), bridge.nu0().mean(), paths, seed)?;
                    let record = record_from_times(&grid, Some(&times));
                    let ens = simulate_gtsb(&bridge, &x0, &grid, seed ^ 0x5de, &record)?;
                    let index = write_ensemble(&out, "sde", &ens)?;
                    write_file(
                        &out.join("summary.json"),
                        &json_pretty(&serde_json::json!({
                            "schema": SCHEMA_VERSION,
                            "mode": "sde",
                            "seed": seed,
                            "paths": paths,
                            "steps": steps,
                            "moments": index,
                        }))?,
                    )?;
                }
                SampleMode::Interpolant => {
                    let ens = interpolant_ensemble(&bridge, &times, paths, seed)?;
                    let index = write_ensemble(&out, "interpolant", &ens)?;
                    write_file(
                        &out.join("summary.json"),
                        &json_pretty(&serde_json::json!({
                            "schema": SCHEMA_VERSION,
                            "mode": "interpolant",
                            "seed": seed,
                            "paths": paths,
                            "moments": index,
                        }))?,
                    )?;
                }
                SampleMode::Conditional => {
                    // one endpoint draw, then exact conditional sampling at
                    // each requested time (fan-chart data)
                    let x0 = sample_gp(bridge.nu0().cov(), bridge.nu0().mean(), 1, seed)?
                        .pop()
                        .unwrap();
                    let mut states = Vec::new();
                    for (k, &tv) in times.iter().enumerate() {
                        let cond = bridge.conditional_given_endpoint(tv, Endpoint::Initial(&x0))?;
                        states.push(sample_gp(
                            cond.cov(),
                            cond.mean(),
                            paths,
                            seed ^ (0xc0 + k as u64),
                        )?);
                    }
                    let ens = TrajectoryEnsemble {
                        times: times.clone(),
                        grid_indices: (0..times.len()).collect(),
                        states,
                        final_index: times.len() - 1,
                        seed,
                    };
                    let index = write_ensemble(&out, "conditional", &ens)?;
                    let header: Vec<String> =
                        (0..bridge.dim()).map(|j| format!("x_{j}")).collect();
                    write_file(
                        &out.join("x0.csv"),
                        &format!("{}\n{}\n", header.join(","), vector_row(&x0)),
                    )?;
                    write_file(
                        &out.join("summary.json"),
                        &json_pretty(&serde_json::json!({
                            "schema": SCHEMA_VERSION,
                            "mode": "conditional",
                            "seed": seed,
                            "paths": paths,
                            "x0_file": "x0.csv",
                            "moments": index,
                        }))?,
                    )?;
                }
            }
            Ok(())
        }
    }
}

/// Independent interpolant draws at each requested time:
/// `(X0, X1)` from the static coupling, then the pinned representation.
fn interpolant_ensemble(
    bridge: &GTSBridge,
    times: &[f64],
    paths: usize,
    seed: u64,
) -> CliResult<TrajectoryEnsemble> {
    use rand::SeedableRng;
    use rand_distr::Distribution;
    let n = bridge.dim();
    let block = bridge.coupling().block_cov();
    let mut joint_mean = DVector::zeros(2 * n);
    joint_mean.rows_mut(0, n).copy_from(bridge.nu0().mean());
    joint_mean.rows_mut(n, n).copy_from(bridge.nu1().mean());
    let joint = sample_gp(&block, &joint_mean, paths, seed)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x1927);
    let mut states: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(paths); times.len()];
    for pair in &joint {
        let x0 = DVector::from(pair.rows(0, n));
        let x1 = DVector::from(pair.rows(n, n));
        for (k, &tv) in times.iter().enumerate() {
            let z = DVector::from_fn(n, |_, _| {
                rand_distr::StandardNormal.sample(&mut rng)
            });
            states[k].push(bridge.interpolant_sample(&x0, &x1, tv, &z));
        }
    }
    Ok(TrajectoryEnsemble {
        times: times.to_vec(),
        grid_indices: (0..times.len()).collect(),
        states,
        final_index: times.len() - 1,
        seed,
    })
}

fn load_sim_config(path: &Path) -> CliResult<SimConfig> {
    let text = read_to_string(path)?;
    let cfg: SimConfig =
        serde_json::from_str(&text).map_err(data_err(&path.display().to_string()))?;
    if cfg.schema != SCHEMA_VERSION {
        return Err(CliError::Data(format!(
            "unsupported schema {} (expected {SCHEMA_VERSION})",
            cfg.schema
        )));
    }
    Ok(cfg)
}

fn sim_summary(
    out: &Path,
    kind: &str,
    seed: u64,
    cfg: &SimConfig,
    sections: Vec<(&str, Vec<MomentFiles>)>,
    extra: serde_json::Value,
) -> CliResult<()> {
    let mut doc = serde_json::json!({
        "schema": SCHEMA_VERSION,
        "command": kind,
        "seed": seed,
        "paths": cfg.paths,
        "grid": {"start": cfg.grid.start, "end": cfg.grid.end, "steps": cfg.grid.steps},
    });
    for (name, index) in sections {
        doc[name] = serde_json::to_value(index).map_err(data_err("summary"))?;
    }
    if let serde_json::Value::Object(map) = extra {
        for (k, v) in map {
            doc[k] = v;
        }
    }
    write_file(&out.join("summary.json"), &json_pretty(&doc)?)
}

fn cmd_sim(cmd: SimCmd, seed: Option<u64>, eps: Option<f64>) -> CliResult<()> {
    let seed = require_seed(seed)?;
    let (kind, args) = match &cmd {
        SimCmd::Em(a) => ("em", a),
        SimCmd::ReverseScore(a) => ("reverse-score", a),
        SimCmd::Doob(a) => ("doob", a),
        SimCmd::Fb(a) => ("fb", a),
        SimCmd::Flow(a) => ("flow", a),
    };
    let cfg = load_sim_config(&args.config)?;
    let problem = build_problem(&cfg.topology, &cfg.dynamics, eps)?;
    let dyn_ = &problem.dynamics;
    let grid = TimeGrid::new(cfg.grid.start, cfg.grid.end, cfg.grid.steps)?;
    let record = record_from_times(&grid, cfg.record.as_deref());
    let out = &args.out;

    let measure = |slot: &Option<EndpointConfig>, label: &str| -> CliResult<GaussianMeasure> {
        slot.as_ref()
            .map(|c| build_measure(&problem, c, label))
            .transpose()?
            .ok_or_else(|| CliError::Data(format!("{kind}: config requires {label}")))
    };
    let vector = |slot: &Option<PathBuf>, label: &str| -> CliResult<DVector<f64>> {
        let path = slot
            .as_ref()
            .ok_or_else(|| CliError::Data(format!("{kind}: config requires {label}")))?;
        read_vector_csv(path)
    };

    match kind {
        "em" => {
            let init = match &cfg.x0_file {
                Some(_) => vec![vector(&cfg.x0_file, "x0_file")?; cfg.paths],
                None => {
                    let nu0 = measure(&cfg.nu0, "nu0")?;
                    sample_gp(nu0.cov(), nu0.mean(), cfg.paths, seed)?
                }
            };
            let ens = euler_maruyama(
                |t, x: &DVector<f64>| dyn_.drift(t, x),
                |t| dyn_.diffusion_coeff(t),
                &init,
                &grid,
                seed ^ 0xe3,
                Direction::Forward,
                &record,
            )?;
            let index = write_ensemble(out, "em", &ens)?;
            sim_summary(out, kind, seed, &cfg, vec![("moments", index)], serde_json::json!({}))
        }
        "reverse-score" => {
            let nu0 = measure(&cfg.nu0, "nu0")?;
            let (fwd, bwd) =
                simulate_reverse_score(dyn_, &nu0, &grid, cfg.paths, seed, &record)?;
            let fwd_index = write_ensemble(out, "forward", &fwd)?;
            let bwd_index = write_ensemble(out, "backward", &bwd)?;
            // recovery diagnostic: how much closer to nu0 the backward
            // terminal ensemble is than the forward one
            let recovered = ensemble_cov(bwd.final_states());
            let diffused = ensemble_cov(fwd.final_states());
            let bw_recovered = bures_wasserstein(
                &recovered,
                nu0.cov(),
                Some(&ensemble_mean(bwd.final_states())),
                Some(nu0.mean()),
            )?;
            let bw_diffused = bures_wasserstein(
                &diffused,
                nu0.cov(),
                Some(&ensemble_mean(fwd.final_states())),
                Some(nu0.mean()),
            )?;
            sim_summary(
                out,
                kind,
                seed,
                &cfg,
                vec![("forward_moments", fwd_index), ("backward_moments", bwd_index)],
                serde_json::json!({
                    "bw_recovered_to_nu0": bw_recovered,
                    "bw_diffused_to_nu0": bw_diffused,
                }),
            )
        }
        "doob" => {
            let x0 = vector(&cfg.x0_file, "x0_file")?;
            let x1 = vector(&cfg.x1_file, "x1_file")?;
            let ens = simulate_doob_bridge(dyn_, &x0, &x1, &grid, cfg.paths, seed, &record)?;
            let index = write_ensemble(out, "doob", &ens)?;
            sim_summary(out, kind, seed, &cfg, vec![("moments", index)], serde_json::json!({}))
        }
        "fb" | "flow" => {
            let nu0 = measure(&cfg.nu0, "nu0")?;
            let nu1 = measure(&cfg.nu1, "nu1")?;
            let bridge = GTSBridge::solve(dyn_.clone(), nu0.clone(), nu1.clone())?;
            let policies = gaussian_policies(&bridge)?;
            if kind == "fb" {
                let s0 = sample_gp(nu0.cov(), nu0.mean(), cfg.paths, seed)?;
                let s1 = sample_gp(nu1.cov(), nu1.mean(), cfg.paths, seed ^ 0xf1)?;
                let (fwd, bwd) =
                    simulate_fb_tsde(dyn_, &policies, &s0, &s1, &grid, seed ^ 0xfb, &record)?;
                let fwd_index = write_ensemble(out, "forward", &fwd)?;
                let bwd_index = write_ensemble(out, "backward", &bwd)?;
                sim_summary(
                    out,
                    kind,
                    seed,
                    &cfg,
                    vec![("forward_moments", fwd_index), ("backward_moments", bwd_index)],
                    serde_json::json!({}),
                )
            } else {
                let init = sample_gp(nu0.cov(), nu0.mean(), cfg.paths, seed)?;
                let ens = probability_flow(dyn_, &policies, &init, &grid, &record)?;
                let index = write_ensemble(out, "flow", &ens)?;
                sim_summary(out, kind, seed, &cfg, vec![("moments", index)], serde_json::json!({}))
            }
        }
        _ => unreachable!(),
    }
}

fn cmd_metrics(args: MetricsArgs) -> CliResult<()> {
    let report: DistanceReport = match args.metric {
        MetricKind::Bw | MetricKind::Kl => {
            let need = |p: &Option<PathBuf>, name: &str| -> CliResult<PathBuf> {
                p.clone().ok_or_else(|| {
                    CliError::Usage(format!("--{name} is required for this metric"))
                })
            };
            let cov_a = read_matrix_csv(&need(&args.cov_a, "cov-a")?)?;
            let cov_b = read_matrix_csv(&need(&args.cov_b, "cov-b")?)?;
            let mean_a = args.mean_a.as_deref().map(read_vector_csv).transpose()?;
            let mean_b = args.mean_b.as_deref().map(read_vector_csv).transpose()?;
            match args.metric {
                MetricKind::Bw => {
                    let value =
                        bures_wasserstein(&cov_a, &cov_b, mean_a.as_ref(), mean_b.as_ref())?;
                    DistanceReport {
                        name: "bures_wasserstein".into(),
                        value,
                        epsilon: None,
                        iterations: None,
                        residual: None,
                    }
                }
                _ => {
                    let n = cov_a.nrows();
                    let nu_a = GaussianMeasure::new(
                        mean_a.unwrap_or_else(|| DVector::zeros(n)),
                        cov_a,
                    )?;
                    let nu_b = GaussianMeasure::new(
                        mean_b.unwrap_or_else(|| DVector::zeros(n)),
                        cov_b,
                    )?;
                    DistanceReport {
                        name: "gaussian_kl".into(),
                        value: gaussian_kl(&nu_a, &nu_b)?,
                        epsilon: None,
                        iterations: None,
                        residual: None,
                    }
                }
            }
        }
        MetricKind::W1 | MetricKind::W2 => {
            let need = |p: &Option<PathBuf>, name: &str| -> CliResult<PathBuf> {
                p.clone().ok_or_else(|| {
                    CliError::Usage(format!("--{name} is required for this metric"))
                })
            };
            let a = read_samples_csv(&need(&args.samples_a, "samples-a")?)?;
            let b = read_samples_csv(&need(&args.samples_b, "samples-b")?)?;
            let p = if matches!(args.metric, MetricKind::W1) { 1 } else { 2 };
            let method = match args.method {
                MethodArg::Exact => OtMethod::Exact,
                MethodArg::Sinkhorn => {
                    OtMethod::Sinkhorn { epsilon: args.epsilon, max_iter: args.max_iter }
                }
            };
            empirical_wasserstein(&a, &b, p, method)?
        }
    };
    let json = json_pretty(&report)?;
    match args.out {
        Some(path) => write_file(&path, &format!("{json}\n")),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct ExperimentCheck {
    name: String,
    value: f64,
    threshold: f64,
    pass: bool,
}

fn check(name: &str, value: f64, threshold: f64, below: bool) -> ExperimentCheck {
    ExperimentCheck {
        name: name.into(),
        value,
        threshold,
        pass: if below { value < threshold } else { value > threshold },
    }
}

fn cmd_experiment_synthetic(
    out: &Path,
    dynamics: Option<DynArg>,
    c: Option<f64>,
    g: Option<f64>,
    paths: usize,
    seed: Option<u64>,
) -> CliResult<()> {
    let seed = require_seed(seed)?;
    let complex = synthetic_graph_30();
    let spec = LaplacianSpec::new(LaplacianKind::Graph);
    let l = laplacian(&complex, &spec)?;
    let operator = Arc::new(eigendecompose(&l)?);
    let (nu0, nu1) = experiment_endpoints(&operator);

    let mut doc = serde_json::to_value(&complex).map_err(data_err("complex"))?;
    doc["schema"] = serde_json::json!(SCHEMA_VERSION);
    write_file(&out.join("complex.json"), &format!("{:#}\n", doc))?;

    // the Appendix F.1 trio unless a single family was requested
    let runs: Vec<(String, ReferenceDynamics)> = match dynamics {
        None => vec![
            (
                "bm_c0.5".into(),
                ReferenceDynamics::ts_heat_bm(operator.clone(), 0.5, 0.01)?,
            ),
            (
                "ve_c0.01".into(),
                ReferenceDynamics::ts_heat_ve(operator.clone(), 0.01, 0.01, 1.0)?,
            ),
            (
                "ve_c10".into(),
                ReferenceDynamics::ts_heat_ve(operator.clone(), 10.0, 0.01, 1.0)?,
            ),
        ],
        Some(DynArg::Bm) => {
            let (c, g) = (c.unwrap_or(0.5), g.unwrap_or(0.01));
            vec![(format!("bm_c{c}"), ReferenceDynamics::ts_heat_bm(operator.clone(), c, g)?)]
        }
        Some(DynArg::Ve) => {
            let c = c.unwrap_or(10.0);
            vec![(
                format!("ve_c{c}"),
                ReferenceDynamics::ts_heat_ve(operator.clone(), c, 0.01, 1.0)?,
            )]
        }
        Some(DynArg::Vp) => {
            let c = c.unwrap_or(1.0);
            vec![(
                format!("vp_c{c}"),
                ReferenceDynamics::ts_heat_vp(operator.clone(), c, 0.1, 20.0)?,
            )]
        }
    };

    let times: Vec<f64> = (0..=50).map(|k| k as f64 / 50.0).collect();
    let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
    let mut checks = Vec::new();
    for (name, dyn_) in &runs {
        let bridge = GTSBridge::solve(dyn_.clone(), nu0.clone(), nu1.clone())?;
        let mut csv = String::from("t,bw_to_sigma1\n");
        let mut curve = Vec::new();
        for &tv in &times {
            let marg = bridge.marginal(tv);
            let bw = bures_wasserstein(
                marg.measure.cov(),
                nu1.cov(),
                Some(marg.measure.mean()),
                Some(nu1.mean()),
            )?;
            let _ = writeln!(csv, "{},{}", g17(tv), g17(bw));
            curve.push(bw);
        }
        write_file(&out.join(format!("bw_curve_{name}.csv")), &csv)?;

        let m0 = bridge.marginal(0.0);
        let bw0 = bures_wasserstein(m0.measure.cov(), nu0.cov(), Some(m0.measure.mean()), Some(nu0.mean()))?;
        checks.push(check(&format!("{name}_boundary_bw_t0"), bw0, 1e-8, true));
        checks.push(check(
            &format!("{name}_boundary_bw_t1"),
            *curve.last().unwrap(),
            1e-6,
            true,
        ));

        // conditional fan-chart data for one seeded endpoint draw
        let x0 = sample_gp(nu0.cov(), nu0.mean(), 1, seed)?.pop().unwrap();
        let mut fan = String::from("t,coord,mean,lo,hi\n");
        for &tv in times.iter().step_by(5) {
            let cond = bridge.conditional_given_endpoint(tv, Endpoint::Initial(&x0))?;
            for j in 0..cond.dim() {
                let sd = cond.cov()[(j, j)].max(0.0).sqrt();
                let m = cond.mean()[j];
                let _ = writeln!(
                    fan,
                    "{},{j},{},{},{}",
                    g17(tv),
                    g17(m),
                    g17(m - 2.0 * sd),
                    g17(m + 2.0 * sd)
                );
            }
        }
        write_file(&out.join(format!("fan_{name}.csv")), &fan)?;

        // small SDE ensemble sanity: terminal BW to nu1
        let x0s = sample_gp(nu0.cov(), nu0.mean(), paths, seed ^ 0xa0)?;
        let grid = TimeGrid::unit(200);
        let ens = simulate_gtsb(&bridge, &x0s, &grid, seed ^ 0xa1, &Record::FinalOnly)?;
        let term_cov = ensemble_cov(ens.final_states());
        let bw_term = bures_wasserstein(
            &term_cov,
            nu1.cov(),
            Some(&ensemble_mean(ens.final_states())),
            Some(nu1.mean()),
        )?;
        write_file(
            &out.join(format!("sde_terminal_{name}.csv")),
            &matrix_csv(&term_cov),
        )?;
        curves.push((name.clone(), curve));
        checks.push(ExperimentCheck {
            name: format!("{name}_sde_terminal_bw"),
            value: bw_term,
            threshold: f64::NAN,
            pass: bw_term.is_finite(),
        });
    }

    // curve separation between the two VE configurations
    if runs.len() == 3 {
        let gap = curves[1]
            .1
            .iter()
            .zip(&curves[2].1)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        checks.push(check("ve_curve_separation", gap, 0.01, false));
    }

    let all_pass = checks.iter().all(|c| c.pass);
    write_file(
        &out.join("checks.json"),
        &json_pretty(&serde_json::json!({
            "schema": SCHEMA_VERSION,
            "seed": seed,
            "checks": checks,
            "pass": all_pass,
        }))?,
    )?;
    eprintln!("experiment synthetic: {}", if all_pass { "PASS" } else { "FAIL" });
    if all_pass {
        Ok(())
    } else {
        Err(CliError::Numerical("experiment acceptance checks failed".into()))
    }
}

// ------------------------------------------------------------ entrypoint

fn dispatch(cli: Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        // ignore "already initialized" when called repeatedly in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match cli.command {
        Command::Topology { cmd } => cmd_topology(cmd),
        Command::Bridge { cmd } => cmd_bridge(cmd, cli.seed, cli.eps),
        Command::Sim { cmd } => cmd_sim(cmd, cli.seed, cli.eps),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Experiment { cmd } => match cmd {
            ExperimentCmd::Synthetic { out, dynamics, c, g, paths } => {
                cmd_experiment_synthetic(&out, dynamics, c, g, paths, cli.seed)
            }
        },
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version are not usage errors
            let benign = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if benign { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("data error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical error: {msg}");
            ExitCode::from(3)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_round_trips() {
        for v in [0.0, 1.0, -1.5, 1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = g17(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
    }

    #[test]
    fn time_range_parsing() {
        let ts = parse_time_range("0.0:1.0:0.25").unwrap();
        assert_eq!(ts, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(parse_time_range("1:0:0.1").is_err());
        assert!(parse_time_range("0:1").is_err());
    }

    #[test]
    fn dynamics_config_matches_documented_shape() {
        let json = r#"{"variant":"tsheat_ve","c":10,"sigma_min":0.01,"sigma_max":1.0,
                       "laplacian":{"kind":"graph","normalization":"symmetric"}}"#;
        let cfg: DynamicsConfig = serde_json::from_str(json).unwrap();
        match cfg.variant {
            DynamicsVariantConfig::TsheatVe { c, sigma_min, sigma_max } => {
                assert_eq!(c, 10.0);
                assert_eq!(sigma_min, 0.01);
                assert_eq!(sigma_max, 1.0);
            }
            _ => panic!("wrong variant"),
        }
        assert_eq!(cfg.laplacian.kind, LaplacianKind::Graph);
        assert_eq!(cfg.laplacian.normalization, Normalization::Symmetric);
    }

    #[test]
    fn topology_source_shapes() {
        let b: TopologySource = serde_json::from_str(r#"{"bundled":"synthetic30"}"#).unwrap();
        assert!(matches!(b, TopologySource::Bundled(ref s) if s == "synthetic30"));
        let f: TopologySource =
            serde_json::from_str(r#"{"complex_file":"c.json"}"#).unwrap();
        assert!(matches!(f, TopologySource::ComplexFile(_)));
    }
}
