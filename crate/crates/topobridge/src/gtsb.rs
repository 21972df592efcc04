//! The Gaussian Topological Schrödinger Bridge: static entropic coupling
//! via the closed-form Gaussian E-OT solution after a kernel-weighted
//! change of variables, stochastic-interpolant marginals, the closed-form
//! SDE drift, and endpoint-conditional laws.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::ReferenceDynamics;
use crate::error::{Error, Result};
use crate::spectral::{eigendecompose, psd_pinv_sqrt, psd_sqrt, SpectralOperator};

/// A Gaussian law on the signal space.
#[derive(Debug, Clone)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianMeasure {
    /// Validates symmetry (1e-10 relative) and PSD-ness (eigenvalues above
    /// -1e-10 relative) before accepting the covariance.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: cov.nrows() });
        }
        let scale = cov.amax().max(1.0);
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::NotSymmetric(asym, 1e-10 * scale));
        }
        let op = eigendecompose(&cov)?;
        if op.min_eigenvalue() < -1e-10 * scale {
            return Err(Error::NotPsd(op.min_eigenvalue()));
        }
        Ok(GaussianMeasure { mean, cov })
    }

    /// Skips validation; for internally-assembled moments that are PSD by
    /// construction.
    pub fn new_unchecked(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        GaussianMeasure { mean, cov }
    }

    pub fn standard(n: usize) -> Self {
        GaussianMeasure { mean: DVector::zeros(n), cov: DMatrix::identity(n, n) }
    }

    pub fn point_mass(mean: DVector<f64>) -> Self {
        let n = mean.len();
        GaussianMeasure { mean, cov: DMatrix::zeros(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Log-density at `x`; requires a nondegenerate covariance.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        let op = eigendecompose(&self.cov)?;
        if op.min_eigenvalue() <= 1e-300 {
            return Err(Error::SingularCovariance(op.min_eigenvalue()));
        }
        let w = op.to_eigenbasis(&(x - &self.mean));
        let n = self.dim() as f64;
        let mut quad = 0.0;
        let mut logdet = 0.0;
        for (i, &l) in op.eigenvalues().iter().enumerate() {
            quad += w[i] * w[i] / l;
            logdet += l.ln();
        }
        Ok(-0.5 * (n * (2.0 * std::f64::consts::PI).ln() + logdet + quad))
    }

    /// Score `grad log density = -Sigma^{-1}(x - mu)`, with a 1e-12
    /// eigenvalue floor.
    pub fn score(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let op = eigendecompose(&self.cov)?;
        Ok(-op.apply(|l| 1.0 / l.max(1e-12), &(x - &self.mean)))
    }

    /// Differential entropy `n/2 ln(2 pi e) + 1/2 ln det Sigma`, with
    /// eigenvalues floored at 1e-300 to keep degenerate cases finite.
    pub fn entropy(&self) -> Result<f64> {
        let op = eigendecompose(&self.cov)?;
        let n = self.dim() as f64;
        let logdet: f64 = op.eigenvalues().iter().map(|&l| l.max(1e-300).ln()).sum();
        Ok(0.5 * (n * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + logdet))
    }
}

/// Diagnostic intermediates of the tilde-space coupling computation.
#[derive(Debug, Clone)]
pub struct CouplingDiagnostics {
    pub sigma0_tilde: DMatrix<f64>,
    pub sigma1_tilde: DMatrix<f64>,
    pub d_tilde: DMatrix<f64>,
    pub c_tilde: DMatrix<f64>,
}

/// The optimal static Gaussian coupling: both marginals plus the
/// cross-covariance `C = Cov(X0, X1)`.
#[derive(Debug, Clone)]
pub struct StaticCoupling {
    pub marginal0: GaussianMeasure,
    pub marginal1: GaussianMeasure,
    pub cross_cov: DMatrix<f64>,
    pub diagnostics: CouplingDiagnostics,
}

impl StaticCoupling {
    /// The joint covariance `[[Sigma0, C], [C^T, Sigma1]]`.
    pub fn block_cov(&self) -> DMatrix<f64> {
        let n = self.marginal0.dim();
        let mut b = DMatrix::zeros(2 * n, 2 * n);
        b.view_mut((0, 0), (n, n)).copy_from(self.marginal0.cov());
        b.view_mut((0, n), (n, n)).copy_from(&self.cross_cov);
        b.view_mut((n, 0), (n, n)).copy_from(&self.cross_cov.transpose());
        b.view_mut((n, n), (n, n)).copy_from(self.marginal1.cov());
        b
    }
}

/// Closed-form entropic coupling of the tilde-space problem at sigma = 1:
/// `C = 1/2 (S0h D S0h^{-1} - sigma^2 I)` with
/// `D = (4 S0h Sigma1 S0h + sigma^4 I)^{1/2}`, `S0h = Sigma0^{1/2}`.
/// Rank-deficient `Sigma0` uses the pseudo-inverse square root.
fn janati_cross_cov(
    sigma0: &DMatrix<f64>,
    sigma1: &DMatrix<f64>,
    sigma: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = sigma0.nrows();
    let s0h = psd_sqrt(sigma0)?;
    let s0h_pinv = psd_pinv_sqrt(sigma0, 1e-12 * sigma0.amax().max(1.0))?;
    let inner = &s0h * sigma1 * &s0h * 4.0 + DMatrix::identity(n, n) * sigma.powi(4);
    let d = psd_sqrt(&inner)?;
    let c = (&s0h * &d * &s0h_pinv - DMatrix::identity(n, n) * (sigma * sigma)) * 0.5;
    Ok((c, d))
}

/// Static Gaussian entropic OT with quadratic cost and regularization
/// `sigma^2` (the classical, dynamics-free closed form).
pub fn classical_eot_coupling(
    nu0: &GaussianMeasure,
    nu1: &GaussianMeasure,
    sigma: f64,
) -> Result<StaticCoupling> {
    if sigma <= 0.0 {
        return Err(Error::InvalidInput(format!("regularization sigma = {sigma} must be > 0")));
    }
    let (c, d) = janati_cross_cov(nu0.cov(), nu1.cov(), sigma)?;
    Ok(StaticCoupling {
        marginal0: nu0.clone(),
        marginal1: nu1.clone(),
        cross_cov: c.clone(),
        diagnostics: CouplingDiagnostics {
            sigma0_tilde: nu0.cov().clone(),
            sigma1_tilde: nu1.cov().clone(),
            d_tilde: d,
            c_tilde: c,
        },
    })
}

/// Solves the static GTSB coupling for arbitrary reference dynamics via
/// the change of variables `Y~0 = K11^{-1/2}(Psi_1 Y0 + xi_1)`,
/// `Y~1 = K11^{-1/2} Y1` and the sigma = 1 closed form in tilde space.
///
/// The inverse transform is evaluated in the regression form
/// `C = (Sigma0 Psi_1 K11^{-1/2}) (S0~^+ C~) K11^{1/2}` with
/// `S0~^+ C~ = 2 P S1~ S0~^{1/2} (D + I)^{-1} S0~^{+1/2}`
/// (`P` the range projector of `S0~`). This avoids both `Psi_1^{-1}`,
/// whose entries overflow for stiff dynamics (e.g. TSHeat-VE with large
/// `c lambda`), and the catastrophic `D - I` cancellation: every factor
/// is bounded, and near-null tilde directions are damped by the prefix
/// instead of amplified.
pub fn solve_static(
    dyn_: &ReferenceDynamics,
    nu0: &GaussianMeasure,
    nu1: &GaussianMeasure,
) -> Result<StaticCoupling> {
    let op = dyn_.operator();
    let n = op.dim();
    if nu0.dim() != n || nu1.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: nu0.dim() });
    }
    let k11_eig: Vec<f64> =
        op.eigenvalues().iter().map(|&l| dyn_.cond_cov_eigenvalue(1.0, 0.0, l)).collect();
    let k11_min = k11_eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if k11_min <= 1e-14 {
        return Err(Error::SingularEndpointCovariance(k11_min));
    }
    let k_sqrt = op.assemble(|l| dyn_.cond_cov_eigenvalue(1.0, 0.0, l).sqrt());
    let k_isqrt = op.assemble(|l| 1.0 / dyn_.cond_cov_eigenvalue(1.0, 0.0, l).sqrt());
    let psi1 = dyn_.psi_matrix(1.0, 0.0);

    let mut sigma0_tilde = &k_isqrt * &psi1 * nu0.cov() * &psi1 * &k_isqrt;
    let s0t = sigma0_tilde.transpose();
    sigma0_tilde += s0t;
    sigma0_tilde.scale_mut(0.5);
    let mut sigma1_tilde = &k_isqrt * nu1.cov() * &k_isqrt;
    let s1t = sigma1_tilde.transpose();
    sigma1_tilde += s1t;
    sigma1_tilde.scale_mut(0.5);

    let remap = |e: Error| match e {
        Error::NotPsd(l) => Error::SingularMarginal(l),
        other => other,
    };
    let s0_op = eigendecompose(&sigma0_tilde).map_err(remap)?;
    let scale = s0_op.max_eigenvalue().abs().max(1.0);
    if s0_op.min_eigenvalue() < -1e-10 * scale {
        return Err(Error::SingularMarginal(s0_op.min_eigenvalue()));
    }
    let tol = 1e-12 * scale;
    let s0_sqrt = s0_op.assemble(|l| l.max(0.0).sqrt());
    let s0_pinv_sqrt = s0_op.assemble(|l| if l > tol { 1.0 / l.sqrt() } else { 0.0 });
    let range_proj = s0_op.assemble(|l| if l > tol { 1.0 } else { 0.0 });

    let mut inner = &s0_sqrt * &sigma1_tilde * &s0_sqrt * 4.0 + DMatrix::identity(n, n);
    let it = inner.transpose();
    inner += it;
    inner.scale_mut(0.5);
    let inner_op = eigendecompose(&inner).map_err(remap)?;
    let d_tilde = inner_op.assemble(|l| l.max(1.0).sqrt());
    let d_plus_inv = inner_op.assemble(|l| 1.0 / (l.max(1.0).sqrt() + 1.0));

    // regression matrix S0~^+ C~, bounded rows even for tiny tilde variances
    let core = (&range_proj * &sigma1_tilde * &s0_sqrt * &d_plus_inv * &s0_pinv_sqrt) * 2.0;
    let c_tilde = &sigma0_tilde * &core;
    let prefix = nu0.cov() * &psi1 * &k_isqrt;
    let c = &prefix * &core * &k_sqrt;
    Ok(StaticCoupling {
        marginal0: nu0.clone(),
        marginal1: nu1.clone(),
        cross_cov: c,
        diagnostics: CouplingDiagnostics { sigma0_tilde, sigma1_tilde, d_tilde, c_tilde },
    })
}

/// Marginal law at time t together with the interpolant building blocks.
#[derive(Debug, Clone)]
pub struct BridgeMarginal {
    pub measure: GaussianMeasure,
    pub r: DMatrix<f64>,
    pub rbar: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

/// Which endpoint a conditional law is pinned to.
#[derive(Debug, Clone, Copy)]
pub enum Endpoint<'a> {
    Initial(&'a DVector<f64>),
    Final(&'a DVector<f64>),
}

/// Per-eigenvalue interpolant coefficients at a fixed time.
struct Coeffs {
    r: DVector<f64>,
    rbar: DVector<f64>,
    gamma: DVector<f64>,
}

/// A solved Gaussian Topological Schrödinger Bridge.
#[derive(Debug, Clone)]
pub struct GTSBridge {
    dyn_: ReferenceDynamics,
    nu0: GaussianMeasure,
    nu1: GaussianMeasure,
    coupling: StaticCoupling,
    /// `K_{11}` eigenvalues, aligned with the operator's eigenbasis.
    k11_eig: DVector<f64>,
    xi1: DVector<f64>,
    has_bias: bool,
}

impl GTSBridge {
    pub fn solve(
        dyn_: ReferenceDynamics,
        nu0: GaussianMeasure,
        nu1: GaussianMeasure,
    ) -> Result<Self> {
        let coupling = solve_static(&dyn_, &nu0, &nu1)?;
        Self::from_coupling(dyn_, nu0, nu1, coupling)
    }

    /// Assembles a bridge around an externally supplied coupling (used by
    /// diagnostics that compare suboptimal couplings).
    pub fn from_coupling(
        dyn_: ReferenceDynamics,
        nu0: GaussianMeasure,
        nu1: GaussianMeasure,
        coupling: StaticCoupling,
    ) -> Result<Self> {
        let op = dyn_.operator().clone();
        let k11_eig = DVector::from_iterator(
            op.dim(),
            op.eigenvalues().iter().map(|&l| dyn_.cond_cov_eigenvalue(1.0, 0.0, l)),
        );
        if k11_eig.min() <= 1e-14 {
            return Err(Error::SingularEndpointCovariance(k11_eig.min()));
        }
        let xi1 = dyn_.xi(1.0);
        let has_bias = xi1.amax() > 0.0;
        Ok(GTSBridge { dyn_, nu0, nu1, coupling, k11_eig, xi1, has_bias })
    }

    pub fn dynamics(&self) -> &ReferenceDynamics {
        &self.dyn_
    }

    pub fn operator(&self) -> &SpectralOperator {
        self.dyn_.operator()
    }

    pub fn nu0(&self) -> &GaussianMeasure {
        &self.nu0
    }

    pub fn nu1(&self) -> &GaussianMeasure {
        &self.nu1
    }

    pub fn coupling(&self) -> &StaticCoupling {
        &self.coupling
    }

    pub fn dim(&self) -> usize {
        self.dyn_.dim()
    }

    fn coeffs(&self, t: f64) -> Coeffs {
        let op = self.dyn_.operator();
        let n = op.dim();
        let mut r = DVector::zeros(n);
        let mut rbar = DVector::zeros(n);
        let mut gamma = DVector::zeros(n);
        for (i, &l) in op.eigenvalues().iter().enumerate() {
            let kt1 = self.dyn_.cross_cov_eigenvalue(t, 1.0, l);
            let ktt = self.dyn_.cond_cov_eigenvalue(t, 0.0, l);
            r[i] = kt1 / self.k11_eig[i];
            rbar[i] =
                self.dyn_.psi_eigenvalue(t, 0.0, l) - r[i] * self.dyn_.psi_eigenvalue(1.0, 0.0, l);
            gamma[i] = (ktt - kt1 * kt1 / self.k11_eig[i]).max(0.0);
        }
        Coeffs { r, rbar, gamma }
    }

    /// Analytic time derivatives of the per-eigenvalue `R_t`, `Rbar_t`,
    /// using `d/dt K_{t1} = h_t K_{t1} + g_t^2 psi(1, t)`.
    fn coeff_derivs(&self, t: f64, co: &Coeffs) -> (DVector<f64>, DVector<f64>) {
        let op = self.dyn_.operator();
        let n = op.dim();
        let g2 = self.dyn_.diffusion_coeff(t).powi(2);
        let mut rdot = DVector::zeros(n);
        let mut rbardot = DVector::zeros(n);
        for (i, &l) in op.eigenvalues().iter().enumerate() {
            let h = self.dyn_.drift_eigenvalue(t, l);
            let kt1 = co.r[i] * self.k11_eig[i];
            let dk_t1 = h * kt1 + g2 * self.dyn_.psi_eigenvalue(1.0, t, l);
            rdot[i] = dk_t1 / self.k11_eig[i];
            rbardot[i] = h * self.dyn_.psi_eigenvalue(t, 0.0, l)
                - rdot[i] * self.dyn_.psi_eigenvalue(1.0, 0.0, l);
        }
        (rdot, rbardot)
    }

    fn mean_from_coeffs(&self, t: f64, co: &Coeffs) -> DVector<f64> {
        let op = self.dyn_.operator();
        let w0 = op.to_eigenbasis(self.nu0.mean());
        let w1 = op.to_eigenbasis(self.nu1.mean());
        let mut wm = DVector::zeros(op.dim());
        for i in 0..op.dim() {
            wm[i] = co.rbar[i] * w0[i] + co.r[i] * w1[i];
        }
        let mut mean = op.from_eigenbasis(&wm);
        if self.has_bias {
            mean += self.dyn_.xi(t);
            let mut wxi = op.to_eigenbasis(&self.xi1);
            for i in 0..op.dim() {
                wxi[i] *= co.r[i];
            }
            mean -= op.from_eigenbasis(&wxi);
        }
        mean
    }

    fn cov_from_coeffs(&self, co: &Coeffs) -> DMatrix<f64> {
        let op = self.dyn_.operator();
        let r = op.assemble_from(&co.r);
        let rbar = op.assemble_from(&co.rbar);
        let c = &self.coupling.cross_cov;
        let mut cov = &rbar * self.nu0.cov() * &rbar
            + &r * self.nu1.cov() * &r
            + &rbar * c * &r
            + &r * c.transpose() * &rbar
            + op.assemble_from(&co.gamma);
        let covt = cov.transpose();
        cov += covt;
        cov.scale_mut(0.5);
        cov
    }

    /// Marginal law at time t:
    /// `mu_t = Rbar_t mu0 + R_t mu1 + xi_t - R_t xi_1`,
    /// `Sigma_t = Rbar Sigma0 Rbar + R Sigma1 R + Rbar C R + R C^T Rbar + Gamma_t`.
    pub fn marginal(&self, t: f64) -> BridgeMarginal {
        let op = self.dyn_.operator();
        let co = self.coeffs(t);
        let mean = self.mean_from_coeffs(t, &co);
        let cov = self.cov_from_coeffs(&co);
        BridgeMarginal {
            measure: GaussianMeasure::new_unchecked(mean, cov),
            r: op.assemble_from(&co.r),
            rbar: op.assemble_from(&co.rbar),
            gamma: op.assemble_from(&co.gamma),
        }
    }

    /// Stochastic-interpolant draw
    /// `X_t = Rbar_t x0 + R_t x1 + xi_t - R_t xi_1 + Gamma_t^{1/2} z`.
    pub fn interpolant_sample(
        &self,
        x0: &DVector<f64>,
        x1: &DVector<f64>,
        t: f64,
        z: &DVector<f64>,
    ) -> DVector<f64> {
        let op = self.dyn_.operator();
        let co = self.coeffs(t);
        let w0 = op.to_eigenbasis(x0);
        let w1 = op.to_eigenbasis(x1);
        let wz = op.to_eigenbasis(z);
        let mut wm = DVector::zeros(op.dim());
        for i in 0..op.dim() {
            wm[i] = co.rbar[i] * w0[i] + co.r[i] * w1[i] + co.gamma[i].sqrt() * wz[i];
        }
        let mut out = op.from_eigenbasis(&wm);
        if self.has_bias {
            out += self.dyn_.xi(t);
            let mut wxi = op.to_eigenbasis(&self.xi1);
            for i in 0..op.dim() {
                wxi[i] *= co.r[i];
            }
            out -= op.from_eigenbasis(&wxi);
        }
        out
    }

    /// Time derivative of the marginal mean:
    /// `mudot_t = Rbardot mu0 + Rdot mu1 + xidot_t - Rdot xi_1`, with
    /// `xidot_t = H_t xi_t + alpha_t`.
    fn mean_derivative(
        &self,
        t: f64,
        rdot: &DVector<f64>,
        rbardot: &DVector<f64>,
    ) -> DVector<f64> {
        let op = self.dyn_.operator();
        let w0 = op.to_eigenbasis(self.nu0.mean());
        let w1 = op.to_eigenbasis(self.nu1.mean());
        let mut wm = DVector::zeros(op.dim());
        for i in 0..op.dim() {
            wm[i] = rbardot[i] * w0[i] + rdot[i] * w1[i];
        }
        let mut out = op.from_eigenbasis(&wm);
        if self.has_bias {
            let xi_t = self.dyn_.xi(t);
            // xidot = H_t xi_t + alpha_t, realized as drift(t, xi_t) since
            // the drift is exactly H_t x + alpha_t
            out += self.dyn_.drift(t, &xi_t);
            let mut wxi = op.to_eigenbasis(&self.xi1);
            for i in 0..op.dim() {
                wxi[i] *= rdot[i];
            }
            out -= op.from_eigenbasis(&wxi);
        }
        out
    }

    /// The affine pieces `(A_t, b_t)` of the Theorem-2 drift
    /// `f_T(t, x) = A_t x + b_t` with `A_t = S_t^T Sigma_t^{-1}` and
    /// `b_t = mudot_t - A_t mu_t`; precomputing them makes ensemble
    /// integration one mat-vec per path per step.
    pub fn sde_drift_affine(&self, t: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let op = self.dyn_.operator();
        let n = op.dim();
        let co = self.coeffs(t);
        let (rdot, rbardot) = self.coeff_derivs(t, &co);
        let mu = self.mean_from_coeffs(t, &co);
        let cov = self.cov_from_coeffs(&co);
        let cov_op = eigendecompose(&cov)?;
        let scale = cov_op.max_eigenvalue().abs().max(1e-30);
        if cov_op.min_eigenvalue() < 1e-13 * scale {
            return Err(Error::EndpointSingularity(t));
        }
        let cov_inv = cov_op.assemble(|l| 1.0 / l);

        let r = op.assemble_from(&co.r);
        let rbar = op.assemble_from(&co.rbar);
        let rdot_m = op.assemble_from(&rdot);
        let rbardot_m = op.assemble_from(&rbardot);
        let c = &self.coupling.cross_cov;
        // P_t = (R Sigma1 + Rbar C) Rdot^T
        let p = (&r * self.nu1.cov() + &rbar * c) * rdot_m.transpose();
        // Q_t = -Rbardot (C R^T + Sigma0 Rbar^T)
        let q = -(&rbardot_m * (c * r.transpose() + self.nu0.cov() * rbar.transpose()));
        // H_t K_tt - K_{t1} K11^{-1} Upsilon_t^T is diagonal in the
        // eigenbasis; Upsilon_t per eigenvalue equals d/dt K_{t1}
        let mut diag = DVector::zeros(n);
        for (i, &l) in op.eigenvalues().iter().enumerate() {
            let h = self.dyn_.drift_eigenvalue(t, l);
            let ktt = self.dyn_.cond_cov_eigenvalue(t, 0.0, l);
            let dk_t1 = rdot[i] * self.k11_eig[i];
            diag[i] = h * ktt - co.r[i] * dk_t1;
        }
        let s = p - q.transpose() + op.assemble_from(&diag);

        let a = s.transpose() * cov_inv;
        let mudot = self.mean_derivative(t, &rdot, &rbardot);
        let b = mudot - &a * mu;
        Ok((a, b))
    }

    /// Theorem-2 drift `f_T(t, x) = S_t^T Sigma_t^{-1}(x - mu_t) + mudot_t`.
    pub fn sde_drift(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (a, b) = self.sde_drift_affine(t)?;
        Ok(a * x + b)
    }

    /// Law of `X_t` given one endpoint sample.
    pub fn conditional_given_endpoint(
        &self,
        t: f64,
        endpoint: Endpoint<'_>,
    ) -> Result<GaussianMeasure> {
        let op = self.dyn_.operator();
        let co = self.coeffs(t);
        let r = op.assemble_from(&co.r);
        let rbar = op.assemble_from(&co.rbar);
        let gamma = op.assemble_from(&co.gamma);
        let c = &self.coupling.cross_cov;

        let (mut mean, mut cov) = match endpoint {
            Endpoint::Initial(x0) => {
                let s0_op = eigendecompose(self.nu0.cov())?;
                let s0_scale = s0_op.max_eigenvalue().abs().max(1e-30);
                if s0_op.min_eigenvalue() < 1e-12 * s0_scale {
                    return Err(Error::SingularMarginal(s0_op.min_eigenvalue()));
                }
                let s0_inv = s0_op.assemble(|l| 1.0 / l);
                let mean = &rbar * x0
                    + &r * self.nu1.mean()
                    + &r * c.transpose() * &s0_inv * (x0 - self.nu0.mean());
                let cov = &r * self.nu1.cov() * r.transpose()
                    - &r * c.transpose() * &s0_inv * c * r.transpose()
                    + gamma;
                (mean, cov)
            }
            Endpoint::Final(x1) => {
                let s1_op = eigendecompose(self.nu1.cov())?;
                let s1_scale = s1_op.max_eigenvalue().abs().max(1e-30);
                if s1_op.min_eigenvalue() < 1e-12 * s1_scale {
                    return Err(Error::SingularMarginal(s1_op.min_eigenvalue()));
                }
                let s1_inv = s1_op.assemble(|l| 1.0 / l);
                let mean = &rbar * self.nu0.mean()
                    + &r * x1
                    + &rbar * c * &s1_inv * (x1 - self.nu1.mean());
                let cov = &rbar * self.nu0.cov() * rbar.transpose()
                    - &rbar * c * &s1_inv * c.transpose() * rbar.transpose()
                    + gamma;
                (mean, cov)
            }
        };
        if self.has_bias {
            mean += self.dyn_.xi(t) - &r * &self.xi1;
        }
        let covt = cov.transpose();
        cov += covt;
        cov.scale_mut(0.5);
        Ok(GaussianMeasure::new_unchecked(mean, cov))
    }

    /// The TE-OT objective of the solved coupling.
    pub fn te_ot_objective(&self) -> Result<f64> {
        self.te_ot_objective_for_cross_cov(&self.coupling.cross_cov)
    }

    /// TE-OT objective for an arbitrary cross-covariance with the bridge's
    /// marginals: the expected squared tilde-space displacement plus the
    /// negative entropy of the Gaussian coupling, evaluated in closed form.
    pub fn te_ot_objective_for_cross_cov(&self, cross_cov: &DMatrix<f64>) -> Result<f64> {
        let op = self.dyn_.operator();
        let n = op.dim();
        let k_isqrt = op.assemble(|l| 1.0 / self.dyn_.cond_cov_eigenvalue(1.0, 0.0, l).sqrt());
        let psi1 = self.dyn_.psi_matrix(1.0, 0.0);

        let s0t = &k_isqrt * &psi1 * self.nu0.cov() * &psi1 * &k_isqrt;
        let s1t = &k_isqrt * self.nu1.cov() * &k_isqrt;
        let ct = &k_isqrt * &psi1 * cross_cov * &k_isqrt;
        let mu0t = &k_isqrt * (&psi1 * self.nu0.mean() + &self.xi1);
        let mu1t = &k_isqrt * self.nu1.mean();

        let disp = &mu1t - &mu0t;
        let cost = 0.5 * (disp.norm_squared() + s0t.trace() + s1t.trace() - 2.0 * ct.trace());

        let mut joint = DMatrix::zeros(2 * n, 2 * n);
        joint.view_mut((0, 0), (n, n)).copy_from(&((&s0t + s0t.transpose()) * 0.5));
        joint.view_mut((0, n), (n, n)).copy_from(&ct);
        joint.view_mut((n, 0), (n, n)).copy_from(&ct.transpose());
        joint.view_mut((n, n), (n, n)).copy_from(&((&s1t + s1t.transpose()) * 0.5));
        let jop = eigendecompose(&joint)?;
        let logdet: f64 = jop.eigenvalues().iter().map(|&l| l.max(1e-300).ln()).sum();
        let entropy = 0.5
            * (2.0 * n as f64 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + logdet);
        Ok(cost - entropy)
    }
}
