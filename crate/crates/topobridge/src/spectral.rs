//! Eigendecomposition of symmetric operators and matrix functions
//! evaluated through the shared eigenbasis.
//!
//! Every kernel and transition matrix in this crate is a function of one
//! Laplacian-type operator `L = U diag(lambda) U^T`; the decomposition is
//! done once and all downstream evaluations are per-eigenvalue scalar
//! formulas assembled as `U diag(f(lambda)) U^T`.

use std::hash::{Hash, Hasher};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::quad;

/// Eigenvalues below this magnitude are treated as zero when inverting.
pub const EIG_FLOOR: f64 = 1e-12;

/// A symmetric PSD operator with cached eigendecomposition.
#[derive(Debug, Clone)]
pub struct SpectralOperator {
    dim: usize,
    /// Ascending.
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    source_hash: u64,
}

fn matrix_fingerprint(m: &DMatrix<f64>) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    m.nrows().hash(&mut h);
    for v in m.iter() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Factorizes a symmetric matrix; symmetrizes `(M + M^T)/2` first and
/// rejects inputs whose asymmetry exceeds the tolerance.
pub fn eigendecompose(matrix: &DMatrix<f64>) -> Result<SpectralOperator> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::DimensionMismatch { expected: n, got: matrix.ncols() });
    }
    let scale = matrix.amax().max(1.0);
    let asym = (matrix - matrix.transpose()).amax();
    let tol = 1e-8 * scale;
    if asym > tol {
        return Err(Error::NotSymmetric(asym, tol));
    }
    let sym = (matrix + matrix.transpose()) * 0.5;
    let source_hash = matrix_fingerprint(matrix);
    let eig = sym.clone().try_symmetric_eigen(1e-14, 10_000).ok_or(Error::ConvergenceFailure)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SpectralOperator { dim: n, eigenvalues, eigenvectors, source_hash })
}

impl SpectralOperator {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn source_hash(&self) -> u64 {
        self.source_hash
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.dim - 1]
    }

    /// Reconstructs `U diag(lambda) U^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.assemble(|l| l)
    }

    /// `U diag(f(lambda)) U^T`, symmetrized.
    pub fn assemble<F: Fn(f64) -> f64>(&self, f: F) -> DMatrix<f64> {
        let fv = DVector::from_iterator(self.dim, self.eigenvalues.iter().map(|&l| f(l)));
        self.assemble_from(&fv)
    }

    /// `U diag(values) U^T` for precomputed per-eigenvalue values.
    pub fn assemble_from(&self, values: &DVector<f64>) -> DMatrix<f64> {
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col.scale_mut(values[j]);
        }
        let mut m = scaled * u.transpose();
        let mt = m.transpose();
        m += mt;
        m.scale_mut(0.5);
        m
    }

    /// Applies `U diag(f(lambda)) U^T` to a vector.
    pub fn apply<F: Fn(f64) -> f64>(&self, f: F, x: &DVector<f64>) -> DVector<f64> {
        let mut w = self.eigenvectors.transpose() * x;
        for (i, v) in w.iter_mut().enumerate() {
            *v *= f(self.eigenvalues[i]);
        }
        &self.eigenvectors * w
    }

    /// Coordinates of `x` in the eigenbasis.
    pub fn to_eigenbasis(&self, x: &DVector<f64>) -> DVector<f64> {
        self.eigenvectors.transpose() * x
    }

    pub fn from_eigenbasis(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.eigenvectors * w
    }
}

/// Evaluates an arbitrary scalar function of the operator, failing if the
/// function is not finite on the spectrum.
pub fn matrix_function<F: Fn(f64) -> f64>(
    op: &SpectralOperator,
    f: F,
) -> Result<DMatrix<f64>> {
    let mut values = DVector::zeros(op.dim);
    for (i, &l) in op.eigenvalues.iter().enumerate() {
        let v = f(l);
        if !v.is_finite() {
            return Err(Error::SingularFunctionValue(l));
        }
        values[i] = v;
    }
    Ok(op.assemble_from(&values))
}

/// Clamps tiny negative eigenvalues of a PSD source before fractional
/// powers or inverses.
pub fn clamp_psd_eigenvalue(l: f64) -> f64 {
    if l > -1e-10 && l < 0.0 {
        0.0
    } else {
        l
    }
}

/// Matrix exponential `exp(s L)`.
pub fn matrix_exp(op: &SpectralOperator, s: f64) -> DMatrix<f64> {
    op.assemble(|l| (s * l).exp())
}

/// `(a I + L)^p` with PSD clamping.
pub fn matrix_shifted_power(op: &SpectralOperator, shift: f64, power: f64) -> Result<DMatrix<f64>> {
    matrix_function(op, |l| (shift + clamp_psd_eigenvalue(l)).powf(power))
}

/// Inverse with an eigenvalue floor; records nothing, callers decide the
/// floor policy.
pub fn matrix_inverse_floored(op: &SpectralOperator, floor: f64) -> DMatrix<f64> {
    op.assemble(|l| 1.0 / clamp_psd_eigenvalue(l).max(floor))
}

/// Symmetric PSD square root with negative-eigenvalue clamping.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let op = eigendecompose(m)?;
    Ok(op.assemble(|l| clamp_psd_eigenvalue(l).max(0.0).sqrt()))
}

/// Pseudo-inverse square root: eigenvalues below `tol` map to zero.
pub fn psd_pinv_sqrt(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let op = eigendecompose(m)?;
    Ok(op.assemble(|l| if l > tol { 1.0 / l.sqrt() } else { 0.0 }))
}

/// Time-varying polynomial coefficient `h_k(t)`.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    /// `intercept + slope * t`.
    Linear { intercept: f64, slope: f64 },
    Callable(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(f, "Constant({c})"),
            Coefficient::Linear { intercept, slope } => {
                write!(f, "Linear({intercept} + {slope} t)")
            }
            Coefficient::Callable(_) => write!(f, "Callable"),
        }
    }
}

impl Coefficient {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Linear { intercept, slope } => intercept + slope * t,
            Coefficient::Callable(f) => f(t),
        }
    }

    /// `int_s^t h(tau) dtau`; analytic for constant/linear forms.
    pub fn integral(&self, t: f64, s: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => c * (t - s),
            Coefficient::Linear { intercept, slope } => {
                intercept * (t - s) + 0.5 * slope * (t * t - s * s)
            }
            Coefficient::Callable(f) => {
                if t >= s {
                    quad::adaptive(&|tau| f(tau), s, t, 1e-10)
                } else {
                    -quad::adaptive(&|tau| f(tau), t, s, 1e-10)
                }
            }
        }
    }
}

/// Maximum supported polynomial degree of the drift in the operator.
pub const MAX_SCHEDULE_DEGREE: usize = 8;

/// Coefficients `h_0(t) .. h_K(t)` of the drift polynomial `H_t(L)`.
#[derive(Debug, Clone)]
pub struct CoefficientSchedule {
    coefficients: Vec<Coefficient>,
}

impl CoefficientSchedule {
    pub fn new(coefficients: Vec<Coefficient>) -> Result<Self> {
        if coefficients.len() > MAX_SCHEDULE_DEGREE + 1 {
            return Err(Error::InvalidInput(format!(
                "schedule degree {} exceeds the supported maximum {}",
                coefficients.len() - 1,
                MAX_SCHEDULE_DEGREE
            )));
        }
        Ok(CoefficientSchedule { coefficients })
    }

    pub fn zero() -> Self {
        CoefficientSchedule { coefficients: vec![] }
    }

    /// `H_t = -c L`.
    pub fn heat(c: f64) -> Self {
        CoefficientSchedule {
            coefficients: vec![Coefficient::Constant(0.0), Coefficient::Constant(-c)],
        }
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len().saturating_sub(1)
    }

    /// Drift eigenvalue `h(t, lambda) = sum_k h_k(t) lambda^k`.
    pub fn drift_eigenvalue(&self, t: f64, lambda: f64) -> f64 {
        let mut acc = 0.0;
        let mut p = 1.0;
        for c in &self.coefficients {
            acc += c.eval(t) * p;
            p *= lambda;
        }
        acc
    }

    /// `sum_k htilde_k(t, s) lambda^k` with `htilde_k = int_s^t h_k`.
    pub fn integrated_eigenvalue(&self, t: f64, s: f64, lambda: f64) -> f64 {
        let mut acc = 0.0;
        let mut p = 1.0;
        for c in &self.coefficients {
            acc += c.integral(t, s) * p;
            p *= lambda;
        }
        acc
    }
}

/// Transition matrix `Psi_{ts} = exp(int_s^t H_tau dtau)` of the linear ODE
/// `dY = H_t(L) Y dt`, evaluated per-eigenvalue.
pub fn transition_matrix(
    op: &SpectralOperator,
    sched: &CoefficientSchedule,
    t: f64,
    s: f64,
) -> DMatrix<f64> {
    op.assemble(|l| sched.integrated_eigenvalue(t, s, l).exp())
}
