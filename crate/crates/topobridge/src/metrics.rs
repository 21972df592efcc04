//! Distances and diagnostics: Bures-Wasserstein, Gaussian KL, empirical
//! Wasserstein (exact assignment and Sinkhorn), and the Dirichlet-energy
//! functional.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gtsb::GaussianMeasure;
use crate::spectral::eigendecompose;

/// Largest per-side sample count accepted by the exact solver.
pub const EXACT_OT_LIMIT: usize = 2000;

/// A computed distance with solver metadata.
#[derive(Debug, Clone, Serialize)]
pub struct DistanceReport {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
}

fn check_psd(m: &DMatrix<f64>) -> Result<crate::spectral::SpectralOperator> {
    let op = eigendecompose(m)?;
    let scale = op.max_eigenvalue().abs().max(1.0);
    if op.min_eigenvalue() < -1e-8 * scale {
        return Err(Error::NotPsd(op.min_eigenvalue()));
    }
    Ok(op)
}

/// `BW^2 = tr A + tr B - 2 tr (A^{1/2} B A^{1/2})^{1/2}`, plus the squared
/// mean gap when means are supplied; returns the square root.
pub fn bures_wasserstein(
    sigma_a: &DMatrix<f64>,
    sigma_b: &DMatrix<f64>,
    mu_a: Option<&DVector<f64>>,
    mu_b: Option<&DVector<f64>>,
) -> Result<f64> {
    let op_a = check_psd(sigma_a)?;
    check_psd(sigma_b)?;
    let a_sqrt = op_a.assemble(|l| l.max(0.0).sqrt());
    let inner = &a_sqrt * sigma_b * &a_sqrt;
    let inner_op = eigendecompose(&((&inner + inner.transpose()) * 0.5))?;
    let cross: f64 = inner_op.eigenvalues().iter().map(|&l| l.max(0.0).sqrt()).sum();
    let mut sq = (sigma_a.trace() + sigma_b.trace() - 2.0 * cross).max(0.0);
    match (mu_a, mu_b) {
        (Some(a), Some(b)) => sq += (a - b).norm_squared(),
        (None, None) => {}
        _ => return Err(Error::InvalidInput("provide both means or neither".into())),
    }
    Ok(sq.sqrt())
}

/// `KL(a || b)` between nondegenerate Gaussians.
pub fn gaussian_kl(nu_a: &GaussianMeasure, nu_b: &GaussianMeasure) -> Result<f64> {
    let n = nu_a.dim();
    if nu_b.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: nu_b.dim() });
    }
    let op_a = check_psd(nu_a.cov())?;
    let op_b = check_psd(nu_b.cov())?;
    let scale_b = op_b.max_eigenvalue().abs().max(1.0);
    if op_b.min_eigenvalue() < 1e-12 * scale_b {
        return Err(Error::SingularCovariance(op_b.min_eigenvalue()));
    }
    let scale_a = op_a.max_eigenvalue().abs().max(1.0);
    if op_a.min_eigenvalue() < 1e-12 * scale_a {
        return Err(Error::SingularCovariance(op_a.min_eigenvalue()));
    }
    let b_inv = op_b.assemble(|l| 1.0 / l);
    let trace = (&b_inv * nu_a.cov()).trace();
    let d = nu_b.mean() - nu_a.mean();
    let quad = (d.transpose() * &b_inv * &d)[(0, 0)];
    let logdet_b: f64 = op_b.eigenvalues().iter().map(|&l| l.ln()).sum();
    let logdet_a: f64 = op_a.eigenvalues().iter().map(|&l| l.ln()).sum();
    Ok(0.5 * (trace + quad - n as f64 + logdet_b - logdet_a))
}

/// How to solve the empirical OT problem.
#[derive(Debug, Clone, Copy)]
pub enum OtMethod {
    Exact,
    Sinkhorn { epsilon: f64, max_iter: usize },
}

fn cost_matrix(a: &[DVector<f64>], b: &[DVector<f64>], p: u32) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        let d = (&a[i] - &b[j]).norm();
        if p == 1 { d } else { d * d }
    })
}

/// Minimum-cost perfect matching via the Hungarian algorithm with
/// potentials (shortest augmenting paths); returns the total cost.
fn assignment_cost(cost: &DMatrix<f64>) -> f64 {
    let n = cost.nrows();
    // 1-based potentials/links per the classical formulation
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j] = row matched to column j
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[(p[j] - 1, j - 1)]).sum()
}

fn logsumexp(vals: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = vals.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn with uniform marginals; returns (cost, iterations,
/// residual).
fn sinkhorn_cost(
    cost: &DMatrix<f64>,
    epsilon: f64,
    max_iter: usize,
) -> Result<(f64, usize, f64)> {
    let (na, nb) = (cost.nrows(), cost.ncols());
    let log_a = -(na as f64).ln();
    let log_b = -(nb as f64).ln();
    let mut f = vec![0.0f64; na];
    let mut g = vec![0.0f64; nb];
    let mut residual = f64::INFINITY;
    let mut iters = 0;
    for it in 0..max_iter {
        iters = it + 1;
        for i in 0..na {
            let lse = logsumexp((0..nb).map(|j| (g[j] - cost[(i, j)]) / epsilon + log_b));
            f[i] = -epsilon * lse;
        }
        for j in 0..nb {
            let lse = logsumexp((0..na).map(|i| (f[i] - cost[(i, j)]) / epsilon + log_a));
            g[j] = -epsilon * lse;
        }
        // row-marginal violation of the implied plan
        residual = 0.0;
        for i in 0..na {
            let mass = (0..nb)
                .map(|j| ((f[i] + g[j] - cost[(i, j)]) / epsilon + log_a + log_b).exp())
                .sum::<f64>();
            residual = residual.max((mass - 1.0 / na as f64).abs());
        }
        if residual < 1e-9 {
            break;
        }
    }
    if residual >= 1e-6 {
        return Err(Error::NoConvergence { iters, residual });
    }
    let mut total = 0.0;
    for i in 0..na {
        for j in 0..nb {
            let pi = ((f[i] + g[j] - cost[(i, j)]) / epsilon + log_a + log_b).exp();
            total += pi * cost[(i, j)];
        }
    }
    Ok((total, iters, residual))
}

/// Order-p Wasserstein distance between two uniform empirical measures.
pub fn empirical_wasserstein(
    samples_a: &[DVector<f64>],
    samples_b: &[DVector<f64>],
    p: u32,
    method: OtMethod,
) -> Result<DistanceReport> {
    if samples_a.is_empty() || samples_b.is_empty() {
        return Err(Error::InvalidInput("empty sample set".into()));
    }
    if !(p == 1 || p == 2) {
        return Err(Error::InvalidInput(format!("unsupported order p = {p}")));
    }
    let cost = cost_matrix(samples_a, samples_b, p);
    match method {
        OtMethod::Exact => {
            let m = samples_a.len().max(samples_b.len());
            if m > EXACT_OT_LIMIT {
                return Err(Error::SizeLimitExceeded { limit: EXACT_OT_LIMIT, got: m });
            }
            if samples_a.len() != samples_b.len() {
                return Err(Error::InvalidInput(
                    "exact method requires equal sample counts (assignment formulation); \
                     use sinkhorn for unequal sizes"
                        .into(),
                ));
            }
            let total = assignment_cost(&cost) / samples_a.len() as f64;
            let value = if p == 1 { total } else { total.sqrt() };
            Ok(DistanceReport {
                name: format!("wasserstein_{p}_exact"),
                value,
                epsilon: None,
                iterations: None,
                residual: None,
            })
        }
        OtMethod::Sinkhorn { epsilon, max_iter } => {
            if epsilon <= 0.0 {
                return Err(Error::InvalidInput(format!("epsilon = {epsilon} must be > 0")));
            }
            let (total, iterations, residual) = sinkhorn_cost(&cost, epsilon, max_iter)?;
            let value = if p == 1 { total } else { total.max(0.0).sqrt() };
            Ok(DistanceReport {
                name: format!("wasserstein_{p}_sinkhorn"),
                value,
                epsilon: Some(epsilon),
                iterations: Some(iterations),
                residual: Some(residual),
            })
        }
    }
}

/// Dirichlet-energy functional
/// `F(nu) = c (1/2) (mu^T L mu + tr(L Sigma)) - (1/2) g^2 H(nu)` with `H`
/// the differential entropy; the Wasserstein gradient-flow potential of the
/// BM-driven reference dynamics.
pub fn dirichlet_functional(
    nu: &GaussianMeasure,
    l: &DMatrix<f64>,
    c: f64,
    g: f64,
) -> Result<f64> {
    let op = check_psd(nu.cov())?;
    let scale = op.max_eigenvalue().abs().max(1.0);
    if op.min_eigenvalue() < 1e-12 * scale {
        return Err(Error::SingularCovariance(op.min_eigenvalue()));
    }
    let mu = nu.mean();
    let dirichlet = 0.5 * ((mu.transpose() * l * mu)[(0, 0)] + (l * nu.cov()).trace());
    Ok(c * dirichlet - 0.5 * g * g * nu.entropy()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ReferenceDynamics;
    use crate::gp::sample_gp;
    use crate::topology::{build_complex, laplacian, LaplacianKind, LaplacianSpec};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn random_psd(n: usize, rng: &mut StdRng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn bw_zero_scalar_diagonal() {
        let a = DMatrix::from_element(1, 1, 4.0);
        let b = DMatrix::from_element(1, 1, 9.0);
        assert!(bures_wasserstein(&a, &a, None, None).unwrap() < 1e-12);
        assert!((bures_wasserstein(&a, &b, None, None).unwrap() - 1.0).abs() < 1e-10);
        let da = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let db = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let bw = bures_wasserstein(&da, &db, None, None).unwrap();
        assert!((bw - 2.0f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn bw_symmetry_and_triangle_inequality() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..100 {
            let a = random_psd(3, &mut rng);
            let b = random_psd(3, &mut rng);
            let c = random_psd(3, &mut rng);
            let ab = bures_wasserstein(&a, &b, None, None).unwrap();
            let ba = bures_wasserstein(&b, &a, None, None).unwrap();
            assert!((ab - ba).abs() < 1e-8);
            let bc = bures_wasserstein(&b, &c, None, None).unwrap();
            let ac = bures_wasserstein(&a, &c, None, None).unwrap();
            assert!(ac <= ab + bc + 1e-8);
        }
    }

    #[test]
    fn kl_basics_and_monte_carlo() {
        let a = GaussianMeasure::standard(2);
        assert!(gaussian_kl(&a, &a).unwrap().abs() < 1e-12);
        let b = GaussianMeasure::new(
            DVector::from_vec(vec![1.0]),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let a1 = GaussianMeasure::standard(1);
        assert!((gaussian_kl(&a1, &b).unwrap() - 0.5).abs() < 1e-12);

        let mut rng = StdRng::seed_from_u64(5);
        let nu_a = GaussianMeasure::new(
            DVector::from_fn(3, |_, _| rng.random_range(-0.5..0.5)),
            random_psd(3, &mut rng),
        )
        .unwrap();
        let nu_b = GaussianMeasure::new(
            DVector::from_fn(3, |_, _| rng.random_range(-0.5..0.5)),
            random_psd(3, &mut rng),
        )
        .unwrap();
        let kl = gaussian_kl(&nu_a, &nu_b).unwrap();
        let samples = sample_gp(nu_a.cov(), nu_a.mean(), 200_000, 11).unwrap();
        let mc: f64 = samples
            .iter()
            .map(|x| nu_a.log_density(x).unwrap() - nu_b.log_density(x).unwrap())
            .sum::<f64>()
            / samples.len() as f64;
        assert!(((mc - kl) / kl).abs() < 0.02, "mc {mc} vs kl {kl}");
    }

    #[test]
    fn exact_wasserstein_identical_and_sorted_oracle() {
        let a: Vec<DVector<f64>> =
            (0..50).map(|i| DVector::from_vec(vec![i as f64 * 0.1])).collect();
        let r = empirical_wasserstein(&a, &a, 1, OtMethod::Exact).unwrap();
        assert!(r.value < 1e-12);

        let mut rng = StdRng::seed_from_u64(3);
        let xs: Vec<f64> = (0..80).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ys: Vec<f64> = (0..80).map(|_| rng.random_range(-1.0..3.0)).collect();
        let a: Vec<DVector<f64>> = xs.iter().map(|&x| DVector::from_vec(vec![x])).collect();
        let b: Vec<DVector<f64>> = ys.iter().map(|&y| DVector::from_vec(vec![y])).collect();
        let r = empirical_wasserstein(&a, &b, 1, OtMethod::Exact).unwrap();
        let mut xs_s = xs.clone();
        let mut ys_s = ys.clone();
        xs_s.sort_by(|p, q| p.partial_cmp(q).unwrap());
        ys_s.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let oracle: f64 = xs_s
            .iter()
            .zip(&ys_s)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / xs.len() as f64;
        assert!((r.value - oracle).abs() < 1e-10);
    }

    #[test]
    fn exact_w2_close_to_gaussian_closed_form() {
        let mut rng = StdRng::seed_from_u64(8);
        let nu_a = GaussianMeasure::new(DVector::zeros(2), random_psd(2, &mut rng)).unwrap();
        let nu_b = GaussianMeasure::new(
            DVector::from_vec(vec![0.5, -0.3]),
            random_psd(2, &mut rng),
        )
        .unwrap();
        let closed = bures_wasserstein(
            nu_a.cov(),
            nu_b.cov(),
            Some(nu_a.mean()),
            Some(nu_b.mean()),
        )
        .unwrap();
        let sa = sample_gp(nu_a.cov(), nu_a.mean(), 2000, 1).unwrap();
        let sb = sample_gp(nu_b.cov(), nu_b.mean(), 2000, 2).unwrap();
        let r = empirical_wasserstein(&sa, &sb, 2, OtMethod::Exact).unwrap();
        assert!(
            ((r.value - closed) / closed).abs() < 0.10,
            "empirical {} vs closed {closed}",
            r.value
        );
    }

    #[test]
    fn sinkhorn_close_to_exact() {
        let mut rng = StdRng::seed_from_u64(13);
        let a: Vec<DVector<f64>> = (0..200)
            .map(|_| DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let b: Vec<DVector<f64>> = (0..200)
            .map(|_| DVector::from_fn(2, |_, _| rng.random_range(-0.5..1.5)))
            .collect();
        let exact = empirical_wasserstein(&a, &b, 2, OtMethod::Exact).unwrap();
        let sk = empirical_wasserstein(
            &a,
            &b,
            2,
            OtMethod::Sinkhorn { epsilon: 5e-3, max_iter: 20_000 },
        )
        .unwrap();
        // the entropic plan transports at a cost >= the optimal one
        assert!(sk.value >= exact.value - 1e-9);
        assert!(
            ((sk.value - exact.value) / exact.value).abs() < 0.10,
            "sinkhorn {} vs exact {}",
            sk.value,
            exact.value
        );
    }

    #[test]
    fn exact_size_limit() {
        let big: Vec<DVector<f64>> = (0..2001).map(|_| DVector::zeros(1)).collect();
        assert!(matches!(
            empirical_wasserstein(&big, &big, 1, OtMethod::Exact),
            Err(Error::SizeLimitExceeded { .. })
        ));
    }

    #[test]
    fn dirichlet_harmonic_mean_and_monotone_heat_flow() {
        let edges: Vec<[usize; 2]> = (0..5).map(|i| [i, i + 1]).collect();
        let sc = build_complex(&edges, &[], None).unwrap();
        let l = laplacian(&sc, &LaplacianSpec::new(LaplacianKind::Graph)).unwrap();
        let cov = DMatrix::identity(6, 6);
        let const_mean = GaussianMeasure::new(DVector::from_element(6, 3.0), cov.clone()).unwrap();
        let (c, g) = (0.5, 0.3);
        let f_const = dirichlet_functional(&const_mean, &l, c, g).unwrap();
        let expect = c * 0.5 * (&l * &cov).trace() - 0.5 * g * g * const_mean.entropy().unwrap();
        assert!((f_const - expect).abs() < 1e-10);
        // affine in c
        let f2 = dirichlet_functional(&const_mean, &l, 2.0 * c, g).unwrap();
        let entropy_part = -0.5 * g * g * const_mean.entropy().unwrap();
        assert!(((f2 - entropy_part) - 2.0 * (f_const - entropy_part)).abs() < 1e-10);

        // nonincreasing along TSHeat-BM marginals from a rough signal
        let op = Arc::new(eigendecompose(&l).unwrap());
        let dyn_ = ReferenceDynamics::ts_heat_bm(op, c, g).unwrap();
        let rough = GaussianMeasure::new(
            DVector::from_fn(6, |i, _| if i % 2 == 0 { 2.0 } else { -2.0 }),
            DMatrix::identity(6, 6) * 0.2,
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for t in [0.0, 0.25, 0.5, 1.0] {
            let m = dyn_.marginal_from_gaussian_init(&rough, t);
            let f = dirichlet_functional(
                &GaussianMeasure::new_unchecked(m.mean().clone(), m.cov().clone()),
                &l,
                c,
                g,
            )
            .unwrap();
            assert!(f <= prev + 1e-8, "t = {t}: {f} > {prev}");
            prev = f;
        }
    }
}
