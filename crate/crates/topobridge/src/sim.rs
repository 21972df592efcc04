//! Stochastic simulation and likelihood machinery: Euler-Maruyama
//! forward/backward integration, reverse-score sampling, Doob-pinned
//! bridges, FB-TSDE simulation with pluggable policies, likelihood
//! estimation, and the probability-flow ODE.
//!
//! Ensembles parallelize over paths with per-path RNG streams derived from
//! `(seed, path index)`, so results are independent of scheduling.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dynamics::ReferenceDynamics;
use crate::error::{Error, Result};
use crate::gp::sample_gp;
use crate::gtsb::{GaussianMeasure, GTSBridge};
use crate::spectral::eigendecompose;

/// Interior guard: drifts with endpoint singularities are evaluated on
/// `[delta, 1 - delta]`.
pub const DEFAULT_DELTA: f64 = 1e-3;

/// A uniform partition of `[start, end]` into `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(start: f64, end: f64, steps: usize) -> Result<Self> {
        if !(start < end) || steps == 0 {
            return Err(Error::InvalidInput(format!(
                "invalid time grid [{start}, {end}] with {steps} steps"
            )));
        }
        Ok(TimeGrid { start, end, steps })
    }

    pub fn unit(steps: usize) -> Self {
        TimeGrid { start: 0.0, end: 1.0, steps }
    }

    pub fn dt(&self) -> f64 {
        (self.end - self.start) / self.steps as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.start + k as f64 * self.dt()).collect()
    }
}

/// Which grid points to keep in memory; full ensembles at desk scale can
/// run to gigabytes, so recording a subset is the default posture.
#[derive(Debug, Clone)]
pub enum Record {
    All,
    /// Grid-point indices in `0..=steps`.
    At(Vec<usize>),
    /// Only the state where the integration ends.
    FinalOnly,
}

impl Record {
    fn indices(&self, steps: usize, final_index: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = match self {
            Record::All => (0..=steps).collect(),
            Record::At(v) => v.iter().copied().filter(|&k| k <= steps).collect(),
            Record::FinalOnly => vec![],
        };
        idx.push(final_index);
        idx.sort_unstable();
        idx.dedup();
        idx
    }
}

/// Simulated paths recorded at a subset of grid points.
#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    /// Recorded times, ascending.
    pub times: Vec<f64>,
    /// Grid-point indices the times correspond to.
    pub grid_indices: Vec<usize>,
    /// `states[k][m]` is path m at recorded time k.
    pub states: Vec<Vec<DVector<f64>>>,
    /// Grid index where the integration ended (0 for backward runs).
    pub final_index: usize,
    pub seed: u64,
}

impl TrajectoryEnsemble {
    pub fn num_paths(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn dim(&self) -> usize {
        self.states.first().and_then(|s| s.first()).map_or(0, DVector::len)
    }

    pub fn states_at_grid_index(&self, grid_index: usize) -> Option<&[DVector<f64>]> {
        let pos = self.grid_indices.iter().position(|&g| g == grid_index)?;
        Some(&self.states[pos])
    }

    /// The states where the integration ended.
    pub fn final_states(&self) -> &[DVector<f64>] {
        self.states_at_grid_index(self.final_index).expect("final index is always recorded")
    }

    pub fn mean_at(&self, recorded: usize) -> DVector<f64> {
        ensemble_mean(&self.states[recorded])
    }

    pub fn cov_at(&self, recorded: usize) -> DMatrix<f64> {
        ensemble_cov(&self.states[recorded])
    }
}

pub fn ensemble_mean(states: &[DVector<f64>]) -> DVector<f64> {
    let n = states[0].len();
    let mut mean = DVector::zeros(n);
    for x in states {
        mean += x;
    }
    mean / states.len() as f64
}

pub fn ensemble_cov(states: &[DVector<f64>]) -> DMatrix<f64> {
    let n = states[0].len();
    let mean = ensemble_mean(states);
    let mut cov = DMatrix::zeros(n, n);
    for x in states {
        let d = x - &mean;
        cov.syger(1.0, &d, &d, 1.0);
    }
    // syger fills the lower triangle; mirror it
    for i in 0..n {
        for j in (i + 1)..n {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    cov / (states.len() as f64 - 1.0).max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Core Euler-Maruyama loop; the drift receives the grid-point index of
/// the evaluation time so precomputed per-step tables stay cheap.
fn em_core<F, G>(
    drift: &F,
    diff: &G,
    init: &[DVector<f64>],
    grid: &TimeGrid,
    seed: u64,
    direction: Direction,
    record: &Record,
) -> Result<TrajectoryEnsemble>
where
    F: Fn(usize, f64, &DVector<f64>) -> DVector<f64> + Sync,
    G: Fn(f64) -> f64 + Sync,
{
    if init.is_empty() {
        return Err(Error::InvalidInput("empty initial ensemble".into()));
    }
    let pts = grid.points();
    let dt = grid.dt();
    let sdt = dt.sqrt();
    let n = init[0].len();
    let final_index = match direction {
        Direction::Forward => grid.steps,
        Direction::Backward => 0,
    };
    let rec = record.indices(grid.steps, final_index);
    let mut slot: Vec<Option<usize>> = vec![None; grid.steps + 1];
    for (s, &k) in rec.iter().enumerate() {
        slot[k] = Some(s);
    }

    let per_path: Vec<Vec<DVector<f64>>> = init
        .par_iter()
        .enumerate()
        .map(|(m, x0)| -> Result<Vec<DVector<f64>>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(m as u64 + 1);
            let mut x = x0.clone();
            let mut out: Vec<DVector<f64>> = vec![DVector::zeros(0); rec.len()];
            let store = |k: usize, x: &DVector<f64>, out: &mut Vec<DVector<f64>>| {
                if let Some(s) = slot[k] {
                    out[s] = x.clone();
                }
            };
            match direction {
                Direction::Forward => {
                    store(0, &x, &mut out);
                    for k in 0..grid.steps {
                        let t = pts[k];
                        let g = diff(t);
                        let mut dx = drift(k, t, &x) * dt;
                        for i in 0..n {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            dx[i] += g * sdt * z;
                        }
                        x += dx;
                        if !x.iter().all(|v| v.is_finite()) {
                            return Err(Error::NonFiniteState { step: k + 1, t: pts[k + 1] });
                        }
                        store(k + 1, &x, &mut out);
                    }
                }
                Direction::Backward => {
                    store(grid.steps, &x, &mut out);
                    for k in (1..=grid.steps).rev() {
                        let t = pts[k];
                        let g = diff(t);
                        let mut dx = drift(k, t, &x) * (-dt);
                        for i in 0..n {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            dx[i] += g * sdt * z;
                        }
                        x += dx;
                        if !x.iter().all(|v| v.is_finite()) {
                            return Err(Error::NonFiniteState { step: k - 1, t: pts[k - 1] });
                        }
                        store(k - 1, &x, &mut out);
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    // transpose to [recorded time][path]
    let mut states: Vec<Vec<DVector<f64>>> =
        rec.iter().map(|_| Vec::with_capacity(init.len())).collect();
    for path in per_path {
        for (s, x) in path.into_iter().enumerate() {
            states[s].push(x);
        }
    }
    Ok(TrajectoryEnsemble {
        times: rec.iter().map(|&k| pts[k]).collect(),
        grid_indices: rec,
        states,
        final_index,
        seed,
    })
}

/// Euler-Maruyama integration of `dX = drift dt + diff dW` over the grid;
/// `Backward` integrates the reversed grid with independent noise.
pub fn euler_maruyama<F, G>(
    drift: F,
    diff: G,
    init: &[DVector<f64>],
    grid: &TimeGrid,
    seed: u64,
    direction: Direction,
    record: &Record,
) -> Result<TrajectoryEnsemble>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64> + Sync,
    G: Fn(f64) -> f64 + Sync,
{
    em_core(&|_k, t, x| drift(t, x), &diff, init, grid, seed, direction, record)
}

fn clamp_interior(t: f64) -> f64 {
    t.clamp(DEFAULT_DELTA, 1.0 - DEFAULT_DELTA)
}

/// Integrates the Theorem-2 optimal SDE from `x0_samples`; the drift's
/// affine pieces are precomputed once per grid step.
pub fn simulate_gtsb(
    bridge: &GTSBridge,
    x0_samples: &[DVector<f64>],
    grid: &TimeGrid,
    seed: u64,
    record: &Record,
) -> Result<TrajectoryEnsemble> {
    let pts = grid.points();
    let mut affine = Vec::with_capacity(grid.steps);
    for k in 0..grid.steps {
        affine.push(bridge.sde_drift_affine(clamp_interior(pts[k]))?);
    }
    let dyn_ = bridge.dynamics();
    em_core(
        &|k, _t, x: &DVector<f64>| &affine[k].0 * x + &affine[k].1,
        &|t| dyn_.diffusion_coeff(t),
        x0_samples,
        grid,
        seed,
        Direction::Forward,
        record,
    )
}

/// Per-step affine form of the reference drift `H_t x + alpha_t`.
fn reference_affine(
    dyn_: &ReferenceDynamics,
    pts: &[f64],
) -> Vec<(DMatrix<f64>, DVector<f64>)> {
    let op = dyn_.operator();
    let zero = DVector::zeros(op.dim());
    pts.iter()
        .map(|&t| {
            let h = op.assemble(|l| dyn_.drift_eigenvalue(t, l));
            let alpha = dyn_.drift(t, &zero);
            (h, alpha)
        })
        .collect()
}

/// Forward reference diffusion of `nu0`, then backward sampling with the
/// analytic score `f_t - g_t^2 grad log p_t`; the backward run starts from
/// the forward terminal ensemble.
pub fn simulate_reverse_score(
    dyn_: &ReferenceDynamics,
    nu0: &GaussianMeasure,
    grid: &TimeGrid,
    num_paths: usize,
    seed: u64,
    record: &Record,
) -> Result<(TrajectoryEnsemble, TrajectoryEnsemble)> {
    let pts = grid.points();
    let fwd_affine = reference_affine(dyn_, &pts);
    let init = sample_gp(nu0.cov(), nu0.mean(), num_paths, seed ^ 0x5eed_1234)?;
    let forward = em_core(
        &|k, _t, x: &DVector<f64>| &fwd_affine[k].0 * x + &fwd_affine[k].1,
        &|t| dyn_.diffusion_coeff(t),
        &init,
        grid,
        seed,
        Direction::Forward,
        record,
    )?;

    // backward drift f - g^2 score is affine: (H + g^2 S^{-1}) x
    // + alpha - g^2 S^{-1} mu, precomputed per step
    let mut bwd_affine = Vec::with_capacity(grid.steps + 1);
    for (k, &t) in pts.iter().enumerate() {
        let marg = dyn_.marginal_from_gaussian_init(nu0, t);
        let op = eigendecompose(marg.cov())?;
        let scale = op.max_eigenvalue().abs().max(1e-30);
        if op.min_eigenvalue() < 1e-12 * scale {
            return Err(Error::SingularMarginal(op.min_eigenvalue()));
        }
        let g2 = dyn_.diffusion_coeff(t).powi(2);
        let sinv = op.assemble(|l| 1.0 / l);
        let a = &fwd_affine[k].0 + &sinv * g2;
        let b = &fwd_affine[k].1 - (&sinv * marg.mean()) * g2;
        bwd_affine.push((a, b));
    }
    let backward = em_core(
        &|k, _t, x: &DVector<f64>| &bwd_affine[k].0 * x + &bwd_affine[k].1,
        &|t| dyn_.diffusion_coeff(t),
        forward.final_states(),
        grid,
        seed ^ 0x00ba_c4a2d,
        Direction::Backward,
        record,
    )?;
    Ok((forward, backward))
}

/// Simulates the reference process pinned to `x1` via the Doob h-transform
/// drift; the grid must stop short of t = 1.
pub fn simulate_doob_bridge(
    dyn_: &ReferenceDynamics,
    x0: &DVector<f64>,
    x1: &DVector<f64>,
    grid: &TimeGrid,
    num_paths: usize,
    seed: u64,
    record: &Record,
) -> Result<TrajectoryEnsemble> {
    if grid.end >= 1.0 {
        return Err(Error::EndpointSingularity(grid.end));
    }
    let op = dyn_.operator();
    let n = op.dim();
    let pts = grid.points();
    let w1 = op.to_eigenbasis(x1);
    // per-step affine drift in the eigenbasis:
    // a_i = h_i - g^2 psi_i^2 / k_i, c_i = g^2 psi_i / k_i (w1_i - bias_i)
    let mut affine = Vec::with_capacity(grid.steps);
    let zero = DVector::zeros(n);
    for k in 0..grid.steps {
        let t = pts[k];
        let g2 = dyn_.diffusion_coeff(t).powi(2);
        let bias_w = op.to_eigenbasis(&dyn_.bias(1.0, t));
        let mut diag = DVector::zeros(n);
        let mut c = DVector::zeros(n);
        for (i, &l) in op.eigenvalues().iter().enumerate() {
            let psi = dyn_.psi_eigenvalue(1.0, t, l);
            let kcond = dyn_.cond_cov_eigenvalue(1.0, t, l).max(1e-300);
            diag[i] = dyn_.drift_eigenvalue(t, l) - g2 * psi * psi / kcond;
            c[i] = g2 * psi / kcond * (w1[i] - bias_w[i]);
        }
        let a = op.assemble_from(&diag);
        let b = op.from_eigenbasis(&c) + dyn_.drift(t, &zero);
        affine.push((a, b));
    }
    let init = vec![x0.clone(); num_paths];
    em_core(
        &|k, _t, x: &DVector<f64>| &affine[k].0 * x + &affine[k].1,
        &|t| dyn_.diffusion_coeff(t),
        &init,
        grid,
        seed,
        Direction::Forward,
        record,
    )
}

pub type PolicyFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type DivergenceFn = Arc<dyn Fn(f64, &DVector<f64>) -> f64 + Send + Sync>;

/// The forward/backward policy fields `Z` and `Zhat` with optional
/// analytic divergences.
#[derive(Clone)]
pub struct PolicyPair {
    pub z: PolicyFn,
    pub zhat: PolicyFn,
    pub z_divergence: Option<DivergenceFn>,
    pub zhat_divergence: Option<DivergenceFn>,
}

impl PolicyPair {
    pub fn zero(n: usize) -> Self {
        let z: PolicyFn = Arc::new(move |_t, _x| DVector::zeros(n));
        PolicyPair {
            z: z.clone(),
            zhat: z,
            z_divergence: Some(Arc::new(|_t, _x| 0.0)),
            zhat_divergence: Some(Arc::new(|_t, _x| 0.0)),
        }
    }
}

struct PolicyStep {
    az: DMatrix<f64>,
    bz: DVector<f64>,
    azh: DMatrix<f64>,
    bzh: DVector<f64>,
}

/// Memoizes the affine policy pieces per evaluation time so ensemble runs
/// pay the matrix assembly once per step, not once per path.
struct GaussianPolicyCache {
    bridge: GTSBridge,
    steps: RwLock<HashMap<u64, Arc<PolicyStep>>>,
}

impl GaussianPolicyCache {
    fn step(&self, t_raw: f64) -> Arc<PolicyStep> {
        let t = clamp_interior(t_raw);
        let key = t.to_bits();
        if let Some(s) = self.steps.read().unwrap().get(&key) {
            return s.clone();
        }
        let dyn_ = self.bridge.dynamics();
        let op = dyn_.operator();
        let g = dyn_.diffusion_coeff(t);
        let (a_t, b_t) = self
            .bridge
            .sde_drift_affine(t)
            .expect("optimal-policy drift inside the interior guard");
        let h = op.assemble(|l| dyn_.drift_eigenvalue(t, l));
        let alpha = dyn_.drift(t, &DVector::zeros(op.dim()));
        let az = (&a_t - &h) / g;
        let bz = (&b_t - &alpha) / g;
        let marg = self.bridge.marginal(t);
        let mop = eigendecompose(marg.measure.cov())
            .expect("marginal covariance is symmetric by construction");
        let sinv = mop.assemble(|l| 1.0 / l.max(1e-12));
        let azh = -&az - &sinv * g;
        let bzh = -&bz + (&sinv * marg.measure.mean()) * g;
        let s = Arc::new(PolicyStep { az, bz, azh, bzh });
        self.steps.write().unwrap().insert(key, s.clone());
        s
    }
}

/// The optimal Gaussian policies of a solved bridge:
/// `Z = (f_T - f)/g`, `Zhat = -Z + g grad log p_t`, both affine in x with
/// analytic divergences.
pub fn gaussian_policies(bridge: &GTSBridge) -> Result<PolicyPair> {
    // fail fast if the drift is unavailable on the interior guard
    bridge.sde_drift_affine(clamp_interior(0.0))?;
    bridge.sde_drift_affine(clamp_interior(1.0))?;
    let cache = Arc::new(GaussianPolicyCache {
        bridge: bridge.clone(),
        steps: RwLock::new(HashMap::new()),
    });
    let c1 = cache.clone();
    let c2 = cache.clone();
    let c3 = cache.clone();
    let c4 = cache;
    Ok(PolicyPair {
        z: Arc::new(move |t, x| {
            let s = c1.step(t);
            &s.az * x + &s.bz
        }),
        zhat: Arc::new(move |t, x| {
            let s = c2.step(t);
            &s.azh * x + &s.bzh
        }),
        z_divergence: Some(Arc::new(move |t, _x| c3.step(t).az.trace())),
        zhat_divergence: Some(Arc::new(move |t, _x| c4.step(t).azh.trace())),
    })
}

/// Simulates the FB-TSDE pair: forward `dX = [f + g Z] dt + g dW` from
/// `nu0_samples`, backward `dX = [f - g Zhat] dt + g dW` from `nu1_samples`
/// on the reversed grid.
pub fn simulate_fb_tsde(
    dyn_: &ReferenceDynamics,
    policies: &PolicyPair,
    nu0_samples: &[DVector<f64>],
    nu1_samples: &[DVector<f64>],
    grid: &TimeGrid,
    seed: u64,
    record: &Record,
) -> Result<(TrajectoryEnsemble, TrajectoryEnsemble)> {
    let z = policies.z.clone();
    let zhat = policies.zhat.clone();
    let forward = em_core(
        &|_k, t, x: &DVector<f64>| dyn_.drift(t, x) + z(t, x) * dyn_.diffusion_coeff(t),
        &|t| dyn_.diffusion_coeff(t),
        nu0_samples,
        grid,
        seed,
        Direction::Forward,
        record,
    )?;
    let backward = em_core(
        &|_k, t, x: &DVector<f64>| dyn_.drift(t, x) - zhat(t, x) * dyn_.diffusion_coeff(t),
        &|t| dyn_.diffusion_coeff(t),
        nu1_samples,
        grid,
        seed ^ 0x7ab1_55ed,
        Direction::Backward,
        record,
    )?;
    Ok((forward, backward))
}

/// A Monte-Carlo scalar with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

impl McEstimate {
    fn from_samples(samples: &[f64]) -> Self {
        let m = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / m;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0).max(1.0);
        McEstimate { value: mean, std_error: (var / m).sqrt() }
    }
}

fn divergence_of(
    field: &PolicyFn,
    analytic: Option<&DivergenceFn>,
    t: f64,
    x: &DVector<f64>,
    probes: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    if let Some(d) = analytic {
        return d(t, x);
    }
    // Hutchinson with Gaussian probes and central finite differences
    let n = x.len();
    let h = 1e-4 * (1.0 + x.norm());
    let mut acc = 0.0;
    for _ in 0..probes.max(1) {
        let u = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let fp = field(t, &(x + &u * h));
        let fm = field(t, &(x - &u * h));
        acc += ((fp - fm) / (2.0 * h)).dot(&u);
    }
    acc / probes.max(1) as f64
}

/// Running integrand accumulation along forward FB-TSDE paths from a fixed
/// `x0`; returns per-path accumulated integrals plus terminal states.
fn forward_paths_with_integrand<I>(
    dyn_: &ReferenceDynamics,
    policies: &PolicyPair,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    num_paths: usize,
    seed: u64,
    integrand: I,
) -> Result<Vec<(f64, DVector<f64>)>>
where
    I: Fn(f64, &DVector<f64>, &DVector<f64>, &DVector<f64>, &mut ChaCha8Rng) -> f64 + Sync,
{
    let pts = grid.points();
    let dt = grid.dt();
    let sdt = dt.sqrt();
    let n = x0.len();
    let z = &policies.z;
    (0..num_paths)
        .into_par_iter()
        .map(|m| -> Result<(f64, DVector<f64>)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(m as u64 + 1);
            let mut x = x0.clone();
            let mut total = 0.0;
            for k in 0..grid.steps {
                let t = pts[k];
                let g = dyn_.diffusion_coeff(t);
                let zt = z(t, &x);
                let zh = (policies.zhat)(t, &x);
                total += dt * integrand(t, &x, &zt, &zh, &mut rng);
                let mut dx = (dyn_.drift(t, &x) + &zt * g) * dt;
                for i in 0..n {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    dx[i] += g * sdt * xi;
                }
                x += dx;
                if !x.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFiniteState { step: k + 1, t: pts[k + 1] });
                }
            }
            Ok((total, x))
        })
        .collect()
}

/// Training-objective bound
/// `l(x0) = int E[1/2 |Zhat|^2 + g div Zhat + Z^T Zhat] dt` along forward
/// FB-TSDE paths started at `x0`.
pub fn likelihood_bound(
    dyn_: &ReferenceDynamics,
    policies: &PolicyPair,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    num_paths: usize,
    probes: usize,
    seed: u64,
) -> Result<McEstimate> {
    let zhat_div = policies.zhat_divergence.clone();
    let zhat_field = policies.zhat.clone();
    let vals = forward_paths_with_integrand(
        dyn_,
        policies,
        x0,
        grid,
        num_paths,
        seed,
        |t, x, zt, zh, rng| {
            let g = dyn_.diffusion_coeff(t);
            let div = divergence_of(&zhat_field, zhat_div.as_ref(), t, x, probes, rng);
            0.5 * zh.norm_squared() + g * div + zt.dot(zh)
        },
    )?;
    let scalars: Vec<f64> = vals.iter().map(|(v, _)| *v).collect();
    Ok(McEstimate::from_samples(&scalars))
}

/// Full log-likelihood at `x0`:
/// `L(x0) = E[log nu1(X1)]
///   - int E[1/2 |Z|^2 + 1/2 |Zhat|^2 + div(g Zhat - f) + Zhat^T Z] dt`,
/// with `div f = tr(H_t)` evaluated analytically.
pub fn log_likelihood(
    dyn_: &ReferenceDynamics,
    policies: &PolicyPair,
    nu1: &GaussianMeasure,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    num_paths: usize,
    probes: usize,
    seed: u64,
) -> Result<McEstimate> {
    let zhat_div = policies.zhat_divergence.clone();
    let zhat_field = policies.zhat.clone();
    let vals = forward_paths_with_integrand(
        dyn_,
        policies,
        x0,
        grid,
        num_paths,
        seed,
        |t, x, zt, zh, rng| {
            let g = dyn_.diffusion_coeff(t);
            let div_zh = divergence_of(&zhat_field, zhat_div.as_ref(), t, x, probes, rng);
            0.5 * zt.norm_squared() + 0.5 * zh.norm_squared() + g * div_zh
                - dyn_.drift_divergence(t)
                + zh.dot(zt)
        },
    )?;
    let scalars: Vec<f64> = vals
        .iter()
        .map(|(integral, x1)| Ok(nu1.log_density(x1)? - integral))
        .collect::<Result<Vec<f64>>>()?;
    Ok(McEstimate::from_samples(&scalars))
}

/// Deterministic probability-flow ODE
/// `dX = [f + g Z - 1/2 g (Z + Zhat)] dt`, integrated with RK4.
pub fn probability_flow(
    dyn_: &ReferenceDynamics,
    policies: &PolicyPair,
    init: &[DVector<f64>],
    grid: &TimeGrid,
    record: &Record,
) -> Result<TrajectoryEnsemble> {
    let pts = grid.points();
    let dt = grid.dt();
    let z = &policies.z;
    let zhat = &policies.zhat;
    let vf = |t: f64, x: &DVector<f64>| {
        let g = dyn_.diffusion_coeff(t);
        dyn_.drift(t, x) + z(t, x) * (0.5 * g) - zhat(t, x) * (0.5 * g)
    };
    let rec = Record::indices(record, grid.steps, grid.steps);
    let mut slot: Vec<Option<usize>> = vec![None; grid.steps + 1];
    for (s, &k) in rec.iter().enumerate() {
        slot[k] = Some(s);
    }
    let per_path: Vec<Vec<DVector<f64>>> = init
        .par_iter()
        .map(|x0| -> Result<Vec<DVector<f64>>> {
            let mut x = x0.clone();
            let mut out: Vec<DVector<f64>> = vec![DVector::zeros(0); rec.len()];
            if let Some(s) = slot[0] {
                out[s] = x.clone();
            }
            for k in 0..grid.steps {
                let t = pts[k];
                let k1 = vf(t, &x);
                let k2 = vf(t + 0.5 * dt, &(&x + &k1 * (0.5 * dt)));
                let k3 = vf(t + 0.5 * dt, &(&x + &k2 * (0.5 * dt)));
                let k4 = vf(t + dt, &(&x + &k3 * dt));
                x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
                if !x.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFiniteState { step: k + 1, t: pts[k + 1] });
                }
                if let Some(s) = slot[k + 1] {
                    out[s] = x.clone();
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut states: Vec<Vec<DVector<f64>>> =
        rec.iter().map(|_| Vec::with_capacity(init.len())).collect();
    for path in per_path {
        for (s, x) in path.into_iter().enumerate() {
            states[s].push(x);
        }
    }
    Ok(TrajectoryEnsemble {
        times: rec.iter().map(|&k| pts[k]).collect(),
        grid_indices: rec,
        states,
        final_index: grid.steps,
        seed: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{Coefficient, CoefficientSchedule};
    use crate::synthetic::synthetic_operator;
    use crate::topology::{LaplacianKind, LaplacianSpec};
    use rand::Rng;

    #[test]
    fn constant_trajectories_without_drift_or_noise() {
        let init = vec![DVector::from_vec(vec![1.0, -2.0]); 3];
        let grid = TimeGrid::unit(10);
        let ens = euler_maruyama(
            |_t, _x: &DVector<f64>| DVector::zeros(2),
            |_t| 0.0,
            &init,
            &grid,
            1,
            Direction::Forward,
            &Record::All,
        )
        .unwrap();
        assert_eq!(ens.times.len(), 11);
        for k in 0..11 {
            for x in &ens.states[k] {
                assert_eq!(x, &init[0]);
            }
        }
    }

    #[test]
    fn brownian_terminal_variance() {
        let init = vec![DVector::zeros(2); 20_000];
        let grid = TimeGrid::unit(50);
        let ens = euler_maruyama(
            |_t, _x: &DVector<f64>| DVector::zeros(2),
            |_t| 1.0,
            &init,
            &grid,
            7,
            Direction::Forward,
            &Record::FinalOnly,
        )
        .unwrap();
        let cov = ensemble_cov(ens.final_states());
        // Var of the variance estimator ~ 2/M, SE ~ 0.01
        for i in 0..2 {
            assert!((cov[(i, i)] - 1.0).abs() < 0.03, "var {}", cov[(i, i)]);
        }
    }

    #[test]
    fn noiseless_heat_flow_matches_matrix_exponential() {
        let op = synthetic_operator(&LaplacianSpec::new(LaplacianKind::Graph));
        let c = 0.5;
        let n = op.dim();
        let mut spike = DVector::zeros(n);
        spike[4] = 1.0;
        let grid = TimeGrid::unit(5000);
        let ens = euler_maruyama(
            |_t, x: &DVector<f64>| op.apply(|l| -c * l, x),
            |_t| 0.0,
            &[spike.clone()],
            &grid,
            1,
            Direction::Forward,
            &Record::FinalOnly,
        )
        .unwrap();
        let expect = op.apply(|l| (-c * l).exp(), &spike);
        assert!((ens.final_states()[0].clone() - expect).amax() < 1e-4);
    }

    #[test]
    fn determinism_across_runs_and_schedules() {
        let init: Vec<DVector<f64>> = (0..8).map(|i| DVector::from_element(3, i as f64)).collect();
        let grid = TimeGrid::unit(20);
        let run = || {
            euler_maruyama(
                |_t, x: &DVector<f64>| -x.clone(),
                |_t| 0.5,
                &init,
                &grid,
                99,
                Direction::Forward,
                &Record::All,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        for k in 0..a.states.len() {
            for m in 0..8 {
                assert_eq!(a.states[k][m], b.states[k][m]);
            }
        }
    }

    #[test]
    fn nonfinite_detection() {
        let init = vec![DVector::from_vec(vec![1.0])];
        let grid = TimeGrid::unit(100);
        let r = euler_maruyama(
            |_t, x: &DVector<f64>| x * 1e8,
            |_t| 0.0,
            &init,
            &grid,
            1,
            Direction::Forward,
            &Record::FinalOnly,
        );
        assert!(matches!(r, Err(Error::NonFiniteState { .. })));
    }

    #[test]
    fn doob_bridge_brownian_variance_curve() {
        let dyn_ = ReferenceDynamics::brownian(2, 1.0);
        let x0 = DVector::zeros(2);
        let x1 = DVector::from_vec(vec![1.0, -1.0]);
        let grid = TimeGrid::new(0.0, 0.999, 400).unwrap();
        let record = Record::At(vec![100, 200, 300]);
        let ens =
            simulate_doob_bridge(&dyn_, &x0, &x1, &grid, 8000, 5, &record).unwrap();
        for (pos, &gi) in ens.grid_indices.iter().enumerate() {
            if gi == grid.steps {
                continue;
            }
            let t = ens.times[pos];
            let cov = ensemble_cov(&ens.states[pos]);
            let expect = t * (1.0 - t);
            let se = expect * (2.0f64 / 8000.0).sqrt();
            for i in 0..2 {
                assert!(
                    (cov[(i, i)] - expect).abs() < 4.0 * se + 5e-3,
                    "t={t}: {} vs {expect}",
                    cov[(i, i)]
                );
            }
            // mean on the straight line
            let mean = ensemble_mean(&ens.states[pos]);
            let expect_mean = &x0 * (1.0 - t) + &x1 * t;
            assert!((mean - expect_mean).amax() < 4.0 * (expect / 8000.0f64).sqrt() + 5e-3);
        }
    }

    #[test]
    fn doob_rejects_grid_reaching_one() {
        let dyn_ = ReferenceDynamics::brownian(1, 1.0);
        let x = DVector::zeros(1);
        let r = simulate_doob_bridge(&dyn_, &x, &x, &TimeGrid::unit(10), 4, 1, &Record::All);
        assert!(matches!(r, Err(Error::EndpointSingularity(_))));
    }

    #[test]
    fn fb_with_zero_policies_equals_reference_em() {
        let op = synthetic_operator(&LaplacianSpec::new(LaplacianKind::Graph));
        let dyn_ = ReferenceDynamics::ts_heat_bm(op.clone(), 0.5, 0.1).unwrap();
        let n = op.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let init: Vec<DVector<f64>> = (0..5)
            .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let grid = TimeGrid::unit(30);
        let (fwd, _bwd) = simulate_fb_tsde(
            &dyn_,
            &PolicyPair::zero(n),
            &init,
            &init,
            &grid,
            17,
            &Record::FinalOnly,
        )
        .unwrap();
        let plain = euler_maruyama(
            |t, x: &DVector<f64>| dyn_.drift(t, x),
            |t| dyn_.diffusion_coeff(t),
            &init,
            &grid,
            17,
            Direction::Forward,
            &Record::FinalOnly,
        )
        .unwrap();
        for m in 0..5 {
            assert_eq!(fwd.final_states()[m], plain.final_states()[m]);
        }
    }

    #[test]
    fn likelihood_bound_zero_policies() {
        let dyn_ = ReferenceDynamics::brownian(2, 1.0);
        let est = likelihood_bound(
            &dyn_,
            &PolicyPair::zero(2),
            &DVector::zeros(2),
            &TimeGrid::unit(20),
            50,
            1,
            3,
        )
        .unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn hutchinson_matches_analytic_trace() {
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.0, -0.1, 1.0, 0.3, 0.0, 0.0, -0.7]);
        let tr = a.trace();
        let ac = a.clone();
        let field: PolicyFn = Arc::new(move |_t, x: &DVector<f64>| &ac * x);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DVector::from_vec(vec![0.3, -0.5, 1.0]);
        let est = divergence_of(&field, None, 0.5, &x, 4096, &mut rng);
        // Hutchinson variance for this A over 4096 probes
        assert!((est - tr).abs() < 0.1, "{est} vs {tr}");
    }

    #[test]
    fn probability_flow_linear_reduction() {
        // Z = Zhat = 0, linear f: trajectories follow Psi_t x0 exactly
        let op = synthetic_operator(&LaplacianSpec::new(LaplacianKind::Graph));
        let dyn_ = ReferenceDynamics::ts_heat_bm(op.clone(), 0.5, 0.1).unwrap();
        let n = op.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let grid = TimeGrid::unit(100);
        let ens = probability_flow(
            &dyn_,
            &PolicyPair::zero(n),
            &[x0.clone()],
            &grid,
            &Record::FinalOnly,
        )
        .unwrap();
        let expect = dyn_.cond_mean(1.0, 0.0, &x0);
        assert!((ens.final_states()[0].clone() - expect).amax() < 1e-8);
        // deterministic
        let again = probability_flow(
            &dyn_,
            &PolicyPair::zero(n),
            &[x0.clone()],
            &grid,
            &Record::FinalOnly,
        )
        .unwrap();
        assert_eq!(ens.final_states()[0], again.final_states()[0]);
    }

    #[test]
    fn weak_order_bias_shrinks_with_dt() {
        // scalar OU dX = -X dt + dW: Var(1) = (1 - e^{-2})/2
        let exact = (1.0 - (-2.0f64).exp()) / 2.0;
        let mut biases = Vec::new();
        for steps in [25, 50] {
            let init = vec![DVector::zeros(1); 40_000];
            let ens = euler_maruyama(
                |_t, x: &DVector<f64>| -x.clone(),
                |_t| 1.0,
                &init,
                &TimeGrid::unit(steps),
                21,
                Direction::Forward,
                &Record::FinalOnly,
            )
            .unwrap();
            let var = ensemble_cov(ens.final_states())[(0, 0)];
            biases.push((var - exact).abs());
        }
        let ratio = biases[0] / biases[1].max(1e-12);
        assert!(ratio > 1.3, "bias ratio {ratio}: {biases:?}");
    }

    #[test]
    fn general_linear_bias_in_em() {
        // dX = a dt exactly integrates the bias
        let opn = synthetic_operator(&LaplacianSpec::new(LaplacianKind::Graph));
        let n = opn.dim();
        let a = DVector::from_element(n, 0.5);
        let ac = a.clone();
        let dyn_ = ReferenceDynamics::general_linear(
            opn,
            CoefficientSchedule::zero(),
            Some(Arc::new(move |_t| ac.clone())),
            Coefficient::Constant(1.0),
        )
        .unwrap();
        let grid = TimeGrid::unit(40);
        let ens = euler_maruyama(
            |t, x: &DVector<f64>| dyn_.drift(t, x),
            |_t| 0.0,
            &[DVector::zeros(n)],
            &grid,
            1,
            Direction::Forward,
            &Record::FinalOnly,
        )
        .unwrap();
        assert!((ens.final_states()[0].clone() - &a).amax() < 1e-12);
    }
}
