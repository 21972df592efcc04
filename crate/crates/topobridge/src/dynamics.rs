//! Reference topological SDEs: drift/diffusion schedules, Gaussian
//! transition kernels, marginal propagation, analytic scores, the Doob
//! h-transform drift, and the reference bridge conditional.
//!
//! Every quantity reduces to a scalar formula per eigenvalue of the
//! operator; matrices are assembled as `U diag(.) U^T`. BM and VE use
//! closed forms, VP and general linear dynamics fall back to adaptive
//! per-eigenvalue quadrature of the defining integral.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gtsb::GaussianMeasure;
use crate::quad;
use crate::spectral::{CoefficientSchedule, Coefficient, SpectralOperator, eigendecompose};

/// `expm1(x)/x`, continuous through 0; keeps the BM/VE closed forms
/// stable as `c lambda -> 0`.
fn em1x(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 + 0.5 * x + x * x / 6.0
    } else {
        x.exp_m1() / x
    }
}

type BiasFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Which reference SDE is being run; parameters per Examples 1-3 and the
/// heterogeneous-diffusion appendix.
#[derive(Clone)]
pub enum DynamicsVariant {
    /// `dY = -cL Y dt + g dW`.
    TSHeatBM { c: f64, g: f64 },
    /// `dY = -cL Y dt + sigma(t) sqrt(2 ln(smax/smin)) dW`,
    /// `sigma(t) = smin (smax/smin)^t`.
    TSHeatVE { c: f64, sigma_min: f64, sigma_max: f64 },
    /// `dY = -1/2 beta(t) (I + cL) Y dt + sqrt(beta(t)) dW`,
    /// `beta(t) = bmin + t (bmax - bmin)`.
    TSHeatVP { c: f64, beta_min: f64, beta_max: f64 },
    /// `dY = (H_t(L) Y + alpha_t) dt + g_t dW`.
    GeneralLinear { sched: CoefficientSchedule, alpha: Option<BiasFn>, g: Coefficient },
    /// `dY = -(c1 L_down + c2 L_up) Y dt + g dW`; the operator held by the
    /// dynamics is the combined `c1 L_d + c2 L_u`, so kernels reduce to the
    /// BM formulas with c = 1.
    Heterogeneous { c1: f64, c2: f64, g: f64 },
}

impl std::fmt::Debug for DynamicsVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DynamicsVariant::TSHeatBM { c, g } => write!(f, "TSHeatBM(c={c}, g={g})"),
            DynamicsVariant::TSHeatVE { c, sigma_min, sigma_max } => {
                write!(f, "TSHeatVE(c={c}, sigma_min={sigma_min}, sigma_max={sigma_max})")
            }
            DynamicsVariant::TSHeatVP { c, beta_min, beta_max } => {
                write!(f, "TSHeatVP(c={c}, beta_min={beta_min}, beta_max={beta_max})")
            }
            DynamicsVariant::GeneralLinear { sched, alpha, .. } => {
                write!(f, "GeneralLinear(degree={}, bias={})", sched.degree(), alpha.is_some())
            }
            DynamicsVariant::Heterogeneous { c1, c2, g } => {
                write!(f, "Heterogeneous(c1={c1}, c2={c2}, g={g})")
            }
        }
    }
}

/// A linear reference TSDE together with the spectral operator all of its
/// kernels evaluate through.
#[derive(Debug, Clone)]
pub struct ReferenceDynamics {
    variant: DynamicsVariant,
    operator: Arc<SpectralOperator>,
}

impl ReferenceDynamics {
    pub fn new(variant: DynamicsVariant, operator: Arc<SpectralOperator>) -> Result<Self> {
        let ok = match &variant {
            DynamicsVariant::TSHeatBM { c, g } => *c > 0.0 && *g > 0.0,
            DynamicsVariant::TSHeatVE { c, sigma_min, sigma_max } => {
                *c > 0.0 && *sigma_min > 0.0 && *sigma_max > *sigma_min
            }
            DynamicsVariant::TSHeatVP { c, beta_min, beta_max } => {
                *c >= 0.0 && *beta_min > 0.0 && *beta_max > *beta_min
            }
            DynamicsVariant::GeneralLinear { .. } => true,
            DynamicsVariant::Heterogeneous { c1, c2, g } => *c1 > 0.0 && *c2 > 0.0 && *g > 0.0,
        };
        if !ok {
            return Err(Error::InvalidInput(format!("invalid parameters for {variant:?}")));
        }
        let dyn_ = ReferenceDynamics { variant, operator };
        // g_t > 0 sampled on a 101-point grid
        for k in 0..=100 {
            let t = k as f64 / 100.0;
            if dyn_.diffusion_coeff(t) <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "diffusion coefficient is nonpositive at t = {t}"
                )));
            }
        }
        Ok(dyn_)
    }

    pub fn ts_heat_bm(operator: Arc<SpectralOperator>, c: f64, g: f64) -> Result<Self> {
        Self::new(DynamicsVariant::TSHeatBM { c, g }, operator)
    }

    pub fn ts_heat_ve(
        operator: Arc<SpectralOperator>,
        c: f64,
        sigma_min: f64,
        sigma_max: f64,
    ) -> Result<Self> {
        Self::new(DynamicsVariant::TSHeatVE { c, sigma_min, sigma_max }, operator)
    }

    pub fn ts_heat_vp(
        operator: Arc<SpectralOperator>,
        c: f64,
        beta_min: f64,
        beta_max: f64,
    ) -> Result<Self> {
        Self::new(DynamicsVariant::TSHeatVP { c, beta_min, beta_max }, operator)
    }

    pub fn general_linear(
        operator: Arc<SpectralOperator>,
        sched: CoefficientSchedule,
        alpha: Option<BiasFn>,
        g: Coefficient,
    ) -> Result<Self> {
        Self::new(DynamicsVariant::GeneralLinear { sched, alpha, g }, operator)
    }

    /// Driftless reference `dY = g dW` on the identity operator of size n.
    pub fn brownian(n: usize, g: f64) -> Self {
        let op = Arc::new(eigendecompose(&DMatrix::identity(n, n)).unwrap());
        Self::general_linear(op, CoefficientSchedule::zero(), None, Coefficient::Constant(g))
            .unwrap()
    }

    /// Heterogeneous heat diffusion on a combined `c1 L_down + c2 L_up`;
    /// validates Hodge orthogonality of the two parts.
    pub fn heterogeneous(
        l_down: &DMatrix<f64>,
        l_up: &DMatrix<f64>,
        c1: f64,
        c2: f64,
        g: f64,
    ) -> Result<Self> {
        let prod = (l_down * l_up).amax().max((l_up * l_down).amax());
        if prod > 1e-10 * l_down.amax().max(l_up.amax()).max(1.0) {
            return Err(Error::InvalidInput(format!(
                "L_down and L_up do not annihilate each other (|L_d L_u| = {prod:.3e})"
            )));
        }
        let combined = l_down * c1 + l_up * c2;
        let op = Arc::new(eigendecompose(&combined)?);
        Self::new(DynamicsVariant::Heterogeneous { c1, c2, g }, op)
    }

    pub fn variant(&self) -> &DynamicsVariant {
        &self.variant
    }

    pub fn operator(&self) -> &Arc<SpectralOperator> {
        &self.operator
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    fn beta(&self, t: f64) -> f64 {
        match self.variant {
            DynamicsVariant::TSHeatVP { beta_min, beta_max, .. } => {
                beta_min + t * (beta_max - beta_min)
            }
            _ => unreachable!(),
        }
    }

    /// `int_s^t beta`.
    fn beta_int(&self, t: f64, s: f64) -> f64 {
        match self.variant {
            DynamicsVariant::TSHeatVP { beta_min, beta_max, .. } => {
                beta_min * (t - s) + 0.5 * (beta_max - beta_min) * (t * t - s * s)
            }
            _ => unreachable!(),
        }
    }

    /// Scalar diffusion coefficient `g_t`.
    pub fn diffusion_coeff(&self, t: f64) -> f64 {
        match &self.variant {
            DynamicsVariant::TSHeatBM { g, .. } => *g,
            DynamicsVariant::TSHeatVE { sigma_min, sigma_max, .. } => {
                let lnr = (sigma_max / sigma_min).ln();
                sigma_min * (sigma_max / sigma_min).powf(t) * (2.0 * lnr).sqrt()
            }
            DynamicsVariant::TSHeatVP { .. } => self.beta(t).sqrt(),
            DynamicsVariant::GeneralLinear { g, .. } => g.eval(t),
            DynamicsVariant::Heterogeneous { g, .. } => *g,
        }
    }

    /// Drift eigenvalue `h(t, lambda)` of `H_t(L)`.
    pub fn drift_eigenvalue(&self, t: f64, lambda: f64) -> f64 {
        match &self.variant {
            DynamicsVariant::TSHeatBM { c, .. } | DynamicsVariant::TSHeatVE { c, .. } => {
                -c * lambda
            }
            DynamicsVariant::TSHeatVP { c, .. } => -0.5 * self.beta(t) * (1.0 + c * lambda),
            DynamicsVariant::GeneralLinear { sched, .. } => sched.drift_eigenvalue(t, lambda),
            DynamicsVariant::Heterogeneous { .. } => -lambda,
        }
    }

    /// Transition eigenvalue `psi(t, s, lambda)` of `Psi_{ts}`.
    pub fn psi_eigenvalue(&self, t: f64, s: f64, lambda: f64) -> f64 {
        match &self.variant {
            DynamicsVariant::TSHeatBM { c, .. } | DynamicsVariant::TSHeatVE { c, .. } => {
                (-c * lambda * (t - s)).exp()
            }
            DynamicsVariant::TSHeatVP { c, .. } => {
                (-0.5 * (1.0 + c * lambda) * self.beta_int(t, s)).exp()
            }
            DynamicsVariant::GeneralLinear { sched, .. } => {
                sched.integrated_eigenvalue(t, s, lambda).exp()
            }
            DynamicsVariant::Heterogeneous { .. } => (-lambda * (t - s)).exp(),
        }
    }

    /// Conditional covariance eigenvalue of `K_{t|s}` for `s <= t`:
    /// `psi_t^2 int_s^t g_tau^2 psi_tau^{-2} dtau` per eigenvalue.
    pub fn cond_cov_eigenvalue(&self, t: f64, s: f64, lambda: f64) -> f64 {
        let d = t - s;
        if d == 0.0 {
            return 0.0;
        }
        match &self.variant {
            DynamicsVariant::TSHeatBM { c, g } => g * g * d * em1x(-2.0 * c * lambda * d),
            DynamicsVariant::Heterogeneous { g, .. } => g * g * d * em1x(-2.0 * lambda * d),
            DynamicsVariant::TSHeatVE { c, sigma_min, sigma_max } => {
                // sigma_min^2 ln r (r^{2t} - r^{2s} e^{-2 c lambda d}) / A,
                // A = ln r + c lambda; expm1 form when the exponent gap is
                // small to avoid cancellation.
                let lnr = (sigma_max / sigma_min).ln();
                let a = lnr + c * lambda;
                let scale = sigma_min * sigma_min * lnr;
                if 2.0 * a * d < 0.5 {
                    scale
                        * (2.0 * s * lnr - 2.0 * c * lambda * d).exp()
                        * (2.0 * a * d).exp_m1()
                        / a
                } else {
                    scale
                        * ((2.0 * t * lnr).exp()
                            - (2.0 * s * lnr - 2.0 * c * lambda * d).exp())
                        / a
                }
            }
            DynamicsVariant::TSHeatVP { .. } | DynamicsVariant::GeneralLinear { .. } => {
                quad::adaptive(
                    &|tau| {
                        let g = self.diffusion_coeff(tau);
                        let psi = self.psi_eigenvalue(t, tau, lambda);
                        g * g * psi * psi
                    },
                    s,
                    t,
                    1e-10,
                )
            }
        }
    }

    /// Cross-covariance eigenvalue `k(t1, t2, lambda)` of `K_{t1 t2}`,
    /// via `K_{t1 t2} = Psi_{max,min} K_{min|0}`.
    pub fn cross_cov_eigenvalue(&self, t1: f64, t2: f64, lambda: f64) -> f64 {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        self.psi_eigenvalue(hi, lo, lambda) * self.cond_cov_eigenvalue(lo, 0.0, lambda)
    }

    /// `H_t(L) y + alpha_t`.
    pub fn drift(&self, t: f64, y: &DVector<f64>) -> DVector<f64> {
        let mut out = self.operator.apply(|l| self.drift_eigenvalue(t, l), y);
        if let DynamicsVariant::GeneralLinear { alpha: Some(a), .. } = &self.variant {
            out += a(t);
        }
        out
    }

    /// Analytic divergence of the drift: `tr(H_t)`.
    pub fn drift_divergence(&self, t: f64) -> f64 {
        self.operator.eigenvalues().iter().map(|&l| self.drift_eigenvalue(t, l)).sum()
    }

    /// Accumulated bias `Psi_t int_s^t Psi_tau^{-1} alpha_tau dtau`,
    /// evaluated in the eigenbasis on Gauss-Legendre panels.
    pub fn bias(&self, t: f64, s: f64) -> DVector<f64> {
        let n = self.dim();
        let alpha = match &self.variant {
            DynamicsVariant::GeneralLinear { alpha: Some(a), .. } => a,
            _ => return DVector::zeros(n),
        };
        if t == s {
            return DVector::zeros(n);
        }
        let mut acc = DVector::zeros(n);
        let panels = 4;
        for p in 0..panels {
            let a = s + (t - s) * p as f64 / panels as f64;
            let b = s + (t - s) * (p + 1) as f64 / panels as f64;
            for (tau, w) in quad::mapped_nodes(a, b) {
                let mut wv = self.operator.to_eigenbasis(&alpha(tau));
                for (i, v) in wv.iter_mut().enumerate() {
                    *v *= self.psi_eigenvalue(t, tau, self.operator.eigenvalues()[i]);
                }
                acc += wv * w;
            }
        }
        self.operator.from_eigenbasis(&acc)
    }

    /// `xi_t`: the bias accumulated from time 0.
    pub fn xi(&self, t: f64) -> DVector<f64> {
        self.bias(t, 0.0)
    }

    /// Transition matrix `Psi_{ts}` assembled from the eigenbasis.
    pub fn psi_matrix(&self, t: f64, s: f64) -> DMatrix<f64> {
        self.operator.assemble(|l| self.psi_eigenvalue(t, s, l))
    }

    /// `m_{t|s} = Psi_{ts} y_s + Psi_t int_s^t Psi_tau^{-1} alpha_tau dtau`.
    pub fn cond_mean(&self, t: f64, s: f64, y_s: &DVector<f64>) -> DVector<f64> {
        self.operator.apply(|l| self.psi_eigenvalue(t, s, l), y_s) + self.bias(t, s)
    }

    /// `K_{t1 t2}`.
    pub fn cross_cov(&self, t1: f64, t2: f64) -> DMatrix<f64> {
        self.operator.assemble(|l| self.cross_cov_eigenvalue(t1, t2, l))
    }

    /// `K_{t|s}` for `s <= t`.
    pub fn transition_cov(&self, t: f64, s: f64) -> DMatrix<f64> {
        self.operator.assemble(|l| self.cond_cov_eigenvalue(t, s, l))
    }

    /// Propagates a Gaussian initial law: `mu_t = Psi_t mu_0 + xi_t`,
    /// `Sigma_t = Psi_t Sigma_0 Psi_t^T + K_{tt}`.
    pub fn marginal_from_gaussian_init(&self, nu0: &GaussianMeasure, t: f64) -> GaussianMeasure {
        let psi = self.psi_matrix(t, 0.0);
        let mean = self.operator.apply(|l| self.psi_eigenvalue(t, 0.0, l), nu0.mean()) + self.xi(t);
        let mut cov = &psi * nu0.cov() * psi.transpose() + self.transition_cov(t, 0.0);
        let covt = cov.transpose();
        cov += covt;
        cov.scale_mut(0.5);
        GaussianMeasure::new_unchecked(mean, cov)
    }

    /// Score `grad log p_t(x) = -Sigma_t^{-1} (x - mu_t)` of the Gaussian
    /// marginal started from `nu0`; a 1e-12 eigenvalue floor stands in for
    /// the perturbed-operator path when `Sigma_t` degenerates.
    pub fn analytic_score(
        &self,
        nu0: &GaussianMeasure,
        t: f64,
        x: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let marg = self.marginal_from_gaussian_init(nu0, t);
        let op = eigendecompose(marg.cov())?;
        let resid = x - marg.mean();
        Ok(-op.apply(|l| 1.0 / l.max(1e-12), &resid))
    }

    /// Doob h-transform drift
    /// `f_t(x) + g_t^2 Psi_{1t}^T K_{1|t}^{-1} (x1 - m_{1|t}(x))`.
    pub fn doob_h_drift(
        &self,
        t: f64,
        x: &DVector<f64>,
        x1: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        if t >= 1.0 {
            return Err(Error::EndpointSingularity(t));
        }
        let g2 = self.diffusion_coeff(t).powi(2);
        let m = self.cond_mean(1.0, t, x);
        let mut w = self.operator.to_eigenbasis(&(x1 - m));
        for (i, v) in w.iter_mut().enumerate() {
            let l = self.operator.eigenvalues()[i];
            let k = self.cond_cov_eigenvalue(1.0, t, l).max(1e-300);
            *v *= g2 * self.psi_eigenvalue(1.0, t, l) / k;
        }
        Ok(self.drift(t, x) + self.operator.from_eigenbasis(&w))
    }

    /// Law of `Y_t | (Y_0 = y0, Y_1 = y1)` under the reference process:
    /// mean `Rbar_t y0 + R_t y1 + xi_t - R_t xi_1`, covariance
    /// `Gamma_t = K_{tt} - K_{t1} K_{11}^{-1} K_{1t}`.
    pub fn reference_bridge_conditional(
        &self,
        t: f64,
        y0: &DVector<f64>,
        y1: &DVector<f64>,
    ) -> Result<GaussianMeasure> {
        let op = &self.operator;
        let n = op.dim();
        let mut r = DVector::zeros(n);
        let mut rbar = DVector::zeros(n);
        let mut gamma = DVector::zeros(n);
        for (i, &l) in op.eigenvalues().iter().enumerate() {
            let k11 = self.cond_cov_eigenvalue(1.0, 0.0, l);
            if k11 <= 1e-14 {
                return Err(Error::SingularEndpointCovariance(k11));
            }
            let kt1 = self.cross_cov_eigenvalue(t, 1.0, l);
            let ktt = self.cond_cov_eigenvalue(t, 0.0, l);
            r[i] = kt1 / k11;
            rbar[i] = self.psi_eigenvalue(t, 0.0, l) - r[i] * self.psi_eigenvalue(1.0, 0.0, l);
            gamma[i] = (ktt - kt1 * kt1 / k11).max(0.0);
        }
        let w0 = op.to_eigenbasis(y0);
        let w1 = op.to_eigenbasis(y1);
        let mut wm = DVector::zeros(n);
        for i in 0..n {
            wm[i] = rbar[i] * w0[i] + r[i] * w1[i];
        }
        let mut mean = op.from_eigenbasis(&wm) + self.xi(t);
        if matches!(&self.variant, DynamicsVariant::GeneralLinear { alpha: Some(_), .. }) {
            let xi1 = self.xi(1.0);
            let mut w = op.to_eigenbasis(&xi1);
            for i in 0..n {
                w[i] *= r[i];
            }
            mean -= op.from_eigenbasis(&w);
        }
        Ok(GaussianMeasure::new_unchecked(mean, op.assemble_from(&gamma)))
    }
}
