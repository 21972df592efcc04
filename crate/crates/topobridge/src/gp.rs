//! Topological Gaussian process kernels: diffusion, Matérn and power
//! kernels on node/edge spaces, optionally restricted to a Hodge subspace,
//! plus deterministic eigenpair-based sampling.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{clamp_psd_eigenvalue, eigendecompose, matrix_function, SpectralOperator};
use crate::topology::HodgeProjectors;

/// Kernel family; both the kappa form and the raw-exponent form of the
/// diffusion kernel are exposed since exp(-20L)-style kernels leave the
/// kappa^2/2 factor implicit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    /// `exp(-kappa^2 L / 2)`.
    Diffusion { kappa: f64 },
    /// `exp(-exponent * L)`.
    DiffusionRaw { exponent: f64 },
    /// `(2 nu / kappa^2 I + L)^{-nu}`.
    Matern { kappa: f64, nu: f64 },
    /// `(shift I + L)^{-exponent}`.
    Power { shift: f64, exponent: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subspace {
    #[default]
    Full,
    Gradient,
    Curl,
    Harmonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GPKernelSpec {
    #[serde(flatten)]
    pub family: KernelFamily,
    #[serde(default)]
    pub subspace: Subspace,
    /// Variance scale `sigma^2` multiplying the kernel.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_sigma() -> f64 {
    1.0
}

impl GPKernelSpec {
    pub fn new(family: KernelFamily) -> Self {
        GPKernelSpec { family, subspace: Subspace::Full, sigma: 1.0 }
    }

    pub fn on_subspace(mut self, subspace: Subspace) -> Self {
        self.subspace = subspace;
        self
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.family {
            KernelFamily::Diffusion { kappa } => kappa >= 0.0,
            KernelFamily::DiffusionRaw { exponent } => exponent >= 0.0,
            KernelFamily::Matern { kappa, nu } => kappa > 0.0 && nu > 0.0,
            KernelFamily::Power { shift, exponent } => shift > 0.0 && exponent > 0.0,
        };
        if !ok || !(self.sigma > 0.0) {
            return Err(Error::InvalidInput(format!("invalid GP kernel parameters: {self:?}")));
        }
        Ok(())
    }

    fn eigen_fn(&self, lambda: f64) -> f64 {
        let l = clamp_psd_eigenvalue(lambda).max(0.0);
        let s2 = self.sigma * self.sigma;
        s2 * match self.family {
            KernelFamily::Diffusion { kappa } => (-0.5 * kappa * kappa * l).exp(),
            KernelFamily::DiffusionRaw { exponent } => (-exponent * l).exp(),
            KernelFamily::Matern { kappa, nu } => (2.0 * nu / (kappa * kappa) + l).powf(-nu),
            KernelFamily::Power { shift, exponent } => (shift + l).powf(-exponent),
        }
    }
}

/// Evaluates the kernel covariance through the operator's eigenbasis;
/// subspace-restricted kernels project with the matching Hodge projector,
/// which commutes with any function of the Laplacian.
pub fn gp_covariance(
    spec: &GPKernelSpec,
    operator: &SpectralOperator,
    projectors: Option<&HodgeProjectors>,
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let full = matrix_function(operator, |l| spec.eigen_fn(l))?;
    let p = match spec.subspace {
        Subspace::Full => return Ok(full),
        Subspace::Gradient => &projectors.ok_or(Error::MissingProjectors)?.gradient,
        Subspace::Curl => &projectors.ok_or(Error::MissingProjectors)?.curl,
        Subspace::Harmonic => &projectors.ok_or(Error::MissingProjectors)?.harmonic,
    };
    let mut m = p * full * p;
    let mt = m.transpose();
    m += mt;
    m.scale_mut(0.5);
    Ok(m)
}

/// Draws `count` samples from `N(mean, cov)` via the eigenpair square root,
/// keeping only eigenvalues above `1e-12` (rank-deficient covariances are
/// sampled on their support). Deterministic under a fixed seed.
pub fn sample_gp(
    cov: &DMatrix<f64>,
    mean: &DVector<f64>,
    count: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    sample_gp_truncated(cov, mean, count, seed, None)
}

/// As [`sample_gp`] but keeping only the `rank` largest eigenvalues.
pub fn sample_gp_truncated(
    cov: &DMatrix<f64>,
    mean: &DVector<f64>,
    count: usize,
    seed: u64,
    rank: Option<usize>,
) -> Result<Vec<DVector<f64>>> {
    let n = mean.len();
    if cov.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: cov.nrows() });
    }
    let op = eigendecompose(cov)?;
    let scale = op.max_eigenvalue().abs().max(1.0);
    if op.min_eigenvalue() < -1e-10 * scale {
        return Err(Error::NotPsd(op.min_eigenvalue()));
    }
    // eigenvalues ascending: keep the tail above tolerance (and rank cap)
    let mut kept: Vec<usize> =
        (0..n).filter(|&i| op.eigenvalues()[i] > 1e-12 * scale).collect();
    if let Some(r) = rank {
        let start = kept.len().saturating_sub(r);
        kept = kept[start..].to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut x = mean.clone();
        for &i in &kept {
            let z: f64 = StandardNormal.sample(&mut rng);
            let s = op.eigenvalues()[i].sqrt() * z;
            x += op.eigenvectors().column(i) * s;
        }
        out.push(x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{
        build_complex, hodge_projectors, laplacian, LaplacianKind, LaplacianSpec,
    };

    fn triangle_edge_setup() -> (SpectralOperator, HodgeProjectors) {
        let sc = build_complex(&[[0, 1], [0, 2], [1, 2]], &[[0, 1, 2]], None).unwrap();
        let l = laplacian(&sc, &LaplacianSpec::new(LaplacianKind::HodgeFull)).unwrap();
        let proj = hodge_projectors(&sc).unwrap();
        (eigendecompose(&l).unwrap(), proj)
    }

    fn path_graph_op(n: usize) -> SpectralOperator {
        let edges: Vec<[usize; 2]> = (0..n - 1).map(|i| [i, i + 1]).collect();
        let sc = build_complex(&edges, &[], None).unwrap();
        let l = laplacian(&sc, &LaplacianSpec::new(LaplacianKind::Graph)).unwrap();
        eigendecompose(&l).unwrap()
    }

    #[test]
    fn diffusion_zero_lengthscale_is_identity() {
        let op = path_graph_op(5);
        let spec = GPKernelSpec::new(KernelFamily::Diffusion { kappa: 0.0 });
        let cov = gp_covariance(&spec, &op, None).unwrap();
        assert!((cov - DMatrix::identity(5, 5)).amax() < 1e-10);
    }

    #[test]
    fn power_and_raw_diffusion_forms() {
        let op = path_graph_op(6);
        let power = gp_covariance(
            &GPKernelSpec::new(KernelFamily::Power { shift: 1.0, exponent: 1.5 }),
            &op,
            None,
        )
        .unwrap();
        let direct = op.assemble(|l| (1.0 + l).powf(-1.5));
        assert!((power - direct).amax() < 1e-12);

        let raw = gp_covariance(
            &GPKernelSpec::new(KernelFamily::DiffusionRaw { exponent: 20.0 }),
            &op,
            None,
        )
        .unwrap();
        let expm = op.assemble(|l| (-20.0 * l).exp());
        assert!((raw - &expm).amax() < 1e-12);
        // kappa form with kappa^2/2 = 20 agrees
        let kappa = gp_covariance(
            &GPKernelSpec::new(KernelFamily::Diffusion { kappa: 40.0f64.sqrt() }),
            &op,
            None,
        )
        .unwrap();
        assert!((kappa - expm).amax() < 1e-12);
    }

    #[test]
    fn gradient_subspace_kernel_annihilates_curl() {
        let (op, proj) = triangle_edge_setup();
        let spec = GPKernelSpec::new(KernelFamily::Diffusion { kappa: 1.0 })
            .on_subspace(Subspace::Gradient);
        let cov = gp_covariance(&spec, &op, Some(&proj)).unwrap();
        assert!((&proj.curl * &cov).amax() < 1e-10);
        assert!((&proj.gradient * &cov * &proj.gradient - &cov).amax() < 1e-10);
        // commutes with all projectors
        assert!((&proj.gradient * &cov - &cov * &proj.gradient).amax() < 1e-10);
        assert!(matches!(
            gp_covariance(&spec, &op, None),
            Err(Error::MissingProjectors)
        ));
    }

    #[test]
    fn matern_large_nu_approaches_diffusion_directionwise() {
        let op = path_graph_op(5);
        let kappa = 1.3;
        let nu = 500.0;
        let evs = op.eigenvalues();
        // the raw values underflow at nu = 500, so compare log-ratios,
        // which drop the nu-dependent prefactor
        let logf = |l: f64| -nu * (2.0 * nu / (kappa * kappa) + l).ln();
        let logg = |l: f64| -0.5 * kappa * kappa * l;
        for i in 1..4 {
            let r_m = logf(evs[i]) - logf(evs[0]);
            let r_d = logg(evs[i]) - logg(evs[0]);
            assert!(
                ((r_m - r_d) / r_d).abs() < 1e-2,
                "lambda = {}: {r_m} vs {r_d}",
                evs[i]
            );
        }
    }

    #[test]
    fn kernels_are_psd() {
        let (op, proj) = triangle_edge_setup();
        for spec in [
            GPKernelSpec::new(KernelFamily::Diffusion { kappa: 2.0 }),
            GPKernelSpec::new(KernelFamily::Matern { kappa: 1.0, nu: 2.5 }),
            GPKernelSpec::new(KernelFamily::Power { shift: 0.5, exponent: 2.0 }),
            GPKernelSpec::new(KernelFamily::Diffusion { kappa: 1.0 })
                .on_subspace(Subspace::Harmonic),
        ] {
            let cov = gp_covariance(&spec, &op, Some(&proj)).unwrap();
            let eig = eigendecompose(&cov).unwrap();
            assert!(eig.min_eigenvalue() > -1e-10, "{spec:?}");
        }
    }

    #[test]
    fn sampling_determinism_and_point_mass() {
        let op = path_graph_op(4);
        let cov = gp_covariance(
            &GPKernelSpec::new(KernelFamily::Matern { kappa: 1.0, nu: 1.5 }),
            &op,
            None,
        )
        .unwrap();
        let mean = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let a = sample_gp(&cov, &mean, 10, 99).unwrap();
        let b = sample_gp(&cov, &mean, 10, 99).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
        let zero = DMatrix::zeros(4, 4);
        for x in sample_gp(&zero, &mean, 5, 1).unwrap() {
            assert_eq!(x, mean);
        }
    }

    #[test]
    fn empirical_covariance_matches() {
        let cov = DMatrix::identity(2, 2);
        let mean = DVector::zeros(2);
        let samples = sample_gp(&cov, &mean, 50_000, 7).unwrap();
        let m = samples.len() as f64;
        let mut emp = DMatrix::zeros(2, 2);
        for x in &samples {
            emp += x * x.transpose();
        }
        emp /= m;
        assert!((emp - cov).norm() / 2.0f64.sqrt() < 0.03);
    }

    #[test]
    fn spec_json_roundtrip() {
        let json = r#"{"family":"matern","kappa":2.0,"nu":1.5,"subspace":"curl","sigma":1.0}"#;
        let spec: GPKernelSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.family, KernelFamily::Matern { kappa: 2.0, nu: 1.5 });
        assert_eq!(spec.subspace, Subspace::Curl);
        let back = serde_json::to_string(&spec).unwrap();
        let spec2: GPKernelSpec = serde_json::from_str(&back).unwrap();
        assert_eq!(spec, spec2);
    }
}
