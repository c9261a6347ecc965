//! Model declaration for the factor/discount/cashflow system
//!
//! ```text
//! dZ = m(Z) dt + σ(Z) dW,          σ = √c (symmetric PD root),
//! dR = (a + ½(θ'cθ + |η|²))(Z) dt + θ'σ(Z) dW + η(Z)' dB,
//! ```
//!
//! with cashflow rate `f(Z)`. Coefficients are plain callables over the state
//! slice; a small catalog builds the usual parametric families and registers
//! analytic derivatives where they are known, so simulation loops never pay
//! for numerical differentiation of standard models.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Writes a vector-valued coefficient into the output slice.
pub type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Writes a row-major `d × d` matrix coefficient into the output slice.
pub type MatrixFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Open box `∏ (lowerᵢ, upperᵢ)`, bounds possibly infinite.
#[derive(Clone, Debug)]
pub struct StateDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    label: String,
}

impl StateDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidInput(
                "domain needs matching non-empty bound vectors".into(),
            ));
        }
        for (lo, hi) in lower.iter().zip(upper.iter()) {
            if !(lo < hi) {
                return Err(Error::InvalidInput(format!(
                    "domain bounds must satisfy lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(StateDomain {
            lower,
            upper,
            label: label.into(),
        })
    }

    pub fn real_line(d: usize) -> Self {
        StateDomain {
            lower: vec![f64::NEG_INFINITY; d],
            upper: vec![f64::INFINITY; d],
            label: if d == 1 { "R".into() } else { format!("R^{d}") },
        }
    }

    /// The half line (0, ∞).
    pub fn positive_half_line() -> Self {
        StateDomain {
            lower: vec![0.0],
            upper: vec![f64::INFINITY],
            label: "(0,inf)".into(),
        }
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        StateDomain::new(vec![lo], vec![hi], format!("({lo},{hi})"))
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.dim()
            && z.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (lo, hi))| v > lo && v < hi)
    }
}

/// Immutable coefficient bundle. All closures must be pure; the spec is
/// freely shareable across threads once built, and cloning is cheap (the
/// coefficient callables are reference-counted).
#[derive(Clone)]
pub struct ModelSpec {
    domain: StateDomain,
    noise_dim: usize,
    drift: VectorFn,
    diffusion: MatrixFn,
    short_rate: ScalarFn,
    theta: VectorFn,
    eta: VectorFn,
    cashflow: ScalarFn,
    signed_cashflow: bool,
    constant_diffusion: Option<Vec<f64>>,
    cached_sigma: OnceLock<Vec<f64>>,
    div_diffusion: Option<VectorFn>,
    diffusion_deriv_1d: Option<ScalarFn>,
    div_c_theta: Option<ScalarFn>,
    gaussian_invariant: Option<(Vec<f64>, Vec<f64>)>,
    antiderivative_m_over_c: Option<ScalarFn>,
}

/// Finite-difference step used for divergence terms when no analytic
/// derivative is registered.
fn fd_step(z: f64) -> f64 {
    1e-5 * (1.0 + z.abs())
}

impl ModelSpec {
    pub fn builder(domain: StateDomain, noise_dim: usize) -> ModelBuilder {
        ModelBuilder::new(domain, noise_dim)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn domain(&self) -> &StateDomain {
        &self.domain
    }

    pub fn signed_cashflow(&self) -> bool {
        self.signed_cashflow
    }

    pub fn drift(&self, z: &[f64], out: &mut [f64]) {
        (self.drift)(z, out)
    }

    pub fn diffusion_matrix(&self, z: &[f64], out: &mut [f64]) {
        (self.diffusion)(z, out)
    }

    pub fn short_rate(&self, z: &[f64]) -> f64 {
        (self.short_rate)(z)
    }

    pub fn theta(&self, z: &[f64], out: &mut [f64]) {
        (self.theta)(z, out)
    }

    pub fn eta(&self, z: &[f64], out: &mut [f64]) {
        (self.eta)(z, out)
    }

    pub fn cashflow(&self, z: &[f64]) -> f64 {
        (self.cashflow)(z)
    }

    /// σ(z) = √c(z). Constant diffusions are rooted once and cached; the
    /// general path takes the symmetric root per call.
    pub fn sigma(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        if let Some(c) = &self.constant_diffusion {
            let sigma = self.cached_sigma.get_or_init(|| {
                let m = DMatrix::from_row_slice(d, d, c);
                let s = linalg::sqrt_spd(&m).expect("constant diffusion must be SPD");
                s.transpose().as_slice().to_vec() // row-major
            });
            out.copy_from_slice(sigma);
            return Ok(());
        }
        if d == 1 {
            let mut c = [0.0];
            (self.diffusion)(z, &mut c);
            if !(c[0] > 0.0) {
                return Err(Error::NotPositiveDefinite {
                    eigenvalue: c[0],
                    threshold: 0.0,
                });
            }
            out[0] = c[0].sqrt();
            return Ok(());
        }
        let mut buf = vec![0.0; d * d];
        (self.diffusion)(z, &mut buf);
        let m = DMatrix::from_row_slice(d, d, &buf);
        let s = linalg::sqrt_spd(&m)?;
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = s[(i, j)];
            }
        }
        Ok(())
    }

    /// Matrix divergence `(div c)ᵢ = ∂ⱼ cⁱʲ`. Analytic if registered, zero
    /// for constant diffusions, central differences otherwise.
    pub fn div_diffusion(&self, z: &[f64], out: &mut [f64]) {
        if let Some(f) = &self.div_diffusion {
            f(z, out);
            return;
        }
        if self.constant_diffusion.is_some() {
            out.fill(0.0);
            return;
        }
        let d = self.dim();
        let mut zp = z.to_vec();
        let mut cp = vec![0.0; d * d];
        let mut cm = vec![0.0; d * d];
        out.fill(0.0);
        for j in 0..d {
            let h = fd_step(z[j]);
            zp[j] = z[j] + h;
            (self.diffusion)(&zp, &mut cp);
            zp[j] = z[j] - h;
            (self.diffusion)(&zp, &mut cm);
            zp[j] = z[j];
            for i in 0..d {
                out[i] += (cp[i * d + j] - cm[i * d + j]) / (2.0 * h);
            }
        }
    }

    /// `c'(z)` for one-dimensional factors.
    pub fn diffusion_deriv_1d(&self, z: f64) -> f64 {
        if let Some(f) = &self.diffusion_deriv_1d {
            return f(&[z]);
        }
        if self.constant_diffusion.is_some() {
            return 0.0;
        }
        let h = fd_step(z);
        let mut cp = [0.0];
        let mut cm = [0.0];
        (self.diffusion)(&[z + h], &mut cp);
        (self.diffusion)(&[z - h], &mut cm);
        (cp[0] - cm[0]) / (2.0 * h)
    }

    /// Vector divergence `∇·(cθ)`.
    pub fn div_c_theta(&self, z: &[f64]) -> f64 {
        if let Some(f) = &self.div_c_theta {
            return f(z);
        }
        let d = self.dim();
        let mut zp = z.to_vec();
        let mut c = vec![0.0; d * d];
        let mut th = vec![0.0; d];
        let mut total = 0.0;
        for i in 0..d {
            let h = fd_step(z[i]);
            let mut w = [0.0, 0.0];
            for (s, sign) in [(0usize, 1.0f64), (1usize, -1.0f64)] {
                zp[i] = z[i] + sign * h;
                (self.diffusion)(&zp, &mut c);
                (self.theta)(&zp, &mut th);
                w[s] = (0..d).map(|j| c[i * d + j] * th[j]).sum();
            }
            zp[i] = z[i];
            total += (w[0] - w[1]) / (2.0 * h);
        }
        total
    }

    /// Quadratic discount load `θ'cθ + η'η`.
    pub fn quadratic_load(&self, z: &[f64]) -> f64 {
        let d = self.dim();
        let k = self.noise_dim;
        let mut th = vec![0.0; d];
        let mut c = vec![0.0; d * d];
        let mut et = vec![0.0; k];
        (self.theta)(z, &mut th);
        (self.diffusion)(z, &mut c);
        (self.eta)(z, &mut et);
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += th[i] * c[i * d + j] * th[j];
            }
        }
        q + et.iter().map(|e| e * e).sum::<f64>()
    }

    /// Drift of the log-discount `R`: `a + ½(θ'cθ + |η|²)`.
    pub fn log_discount_drift(&self, z: &[f64]) -> f64 {
        self.short_rate(z) + 0.5 * self.quadratic_load(z)
    }

    /// Gaussian invariant-law hint `(mean, covariance)` registered by the
    /// catalog; enables direct sampling of the initial state.
    pub fn gaussian_invariant_hint(&self) -> Option<(&[f64], &[f64])> {
        self.gaussian_invariant
            .as_ref()
            .map(|(m, c)| (m.as_slice(), c.as_slice()))
    }

    /// Analytic antiderivative of `m/c` (one-dimensional factors), up to an
    /// additive constant.
    pub fn antiderivative_m_over_c(&self) -> Option<&ScalarFn> {
        self.antiderivative_m_over_c.as_ref()
    }
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("domain", &self.domain)
            .field("noise_dim", &self.noise_dim)
            .field("signed_cashflow", &self.signed_cashflow)
            .finish_non_exhaustive()
    }
}

pub struct ModelBuilder {
    domain: StateDomain,
    noise_dim: usize,
    drift: VectorFn,
    diffusion: MatrixFn,
    short_rate: ScalarFn,
    theta: VectorFn,
    eta: VectorFn,
    cashflow: ScalarFn,
    signed_cashflow: bool,
    constant_diffusion: Option<Vec<f64>>,
    div_diffusion: Option<VectorFn>,
    diffusion_deriv_1d: Option<ScalarFn>,
    div_c_theta: Option<ScalarFn>,
    gaussian_invariant: Option<(Vec<f64>, Vec<f64>)>,
    antiderivative_m_over_c: Option<ScalarFn>,
}

impl ModelBuilder {
    pub fn new(domain: StateDomain, noise_dim: usize) -> Self {
        let d = domain.dim();
        ModelBuilder {
            domain,
            noise_dim,
            drift: Arc::new(|_z, out| out.fill(0.0)),
            diffusion: Arc::new(move |_z, out| {
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = 1.0;
                }
            }),
            short_rate: Arc::new(|_z| 0.0),
            theta: Arc::new(|_z, out| out.fill(0.0)),
            eta: Arc::new(|_z, out| out.fill(0.0)),
            cashflow: Arc::new(|_z| 0.0),
            signed_cashflow: false,
            constant_diffusion: Some({
                let mut c = vec![0.0; d * d];
                for i in 0..d {
                    c[i * d + i] = 1.0;
                }
                c
            }),
            div_diffusion: None,
            diffusion_deriv_1d: None,
            div_c_theta: None,
            gaussian_invariant: None,
            antiderivative_m_over_c: None,
        }
    }

    pub fn drift(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.drift = Arc::new(f);
        // Invariant-law hints are tied to the coefficients that produced them.
        self.gaussian_invariant = None;
        self.antiderivative_m_over_c = None;
        self
    }

    pub fn drift_1d(self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.drift(move |z, out| out[0] = f(z[0]))
    }

    pub fn diffusion(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.diffusion = Arc::new(f);
        self.constant_diffusion = None;
        self.gaussian_invariant = None;
        self.antiderivative_m_over_c = None;
        self.diffusion_deriv_1d = None;
        self.div_diffusion = None;
        self
    }

    pub fn diffusion_1d(self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.diffusion(move |z, out| out[0] = f(z[0]))
    }

    /// Constant diffusion matrix (row-major); enables the cached σ and a
    /// zero matrix divergence.
    pub fn constant_diffusion(mut self, c: Vec<f64>) -> Self {
        let d = self.domain.dim();
        assert_eq!(c.len(), d * d, "constant diffusion must be d×d row-major");
        let stored = c.clone();
        self.diffusion = Arc::new(move |_z, out| out.copy_from_slice(&stored));
        self.constant_diffusion = Some(c);
        self.gaussian_invariant = None;
        self.antiderivative_m_over_c = None;
        self.diffusion_deriv_1d = None;
        self.div_diffusion = None;
        self
    }

    pub fn short_rate(mut self, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.short_rate = Arc::new(f);
        self
    }

    pub fn short_rate_const(self, a: f64) -> Self {
        self.short_rate(move |_z| a)
    }

    pub fn theta(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.theta = Arc::new(f);
        self
    }

    pub fn theta_const(self, v: Vec<f64>) -> Self {
        self.theta(move |_z, out| out.copy_from_slice(&v))
    }

    pub fn eta(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.eta = Arc::new(f);
        self
    }

    pub fn eta_const(self, v: Vec<f64>) -> Self {
        assert_eq!(v.len(), self.noise_dim, "eta length must match noise_dim");
        self.eta(move |_z, out| out.copy_from_slice(&v))
    }

    pub fn cashflow(mut self, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.cashflow = Arc::new(f);
        self
    }

    pub fn cashflow_const(self, v: f64) -> Self {
        self.cashflow(move |_z| v)
    }

    pub fn signed_cashflow(mut self, allow: bool) -> Self {
        self.signed_cashflow = allow;
        self
    }

    pub fn div_diffusion(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.div_diffusion = Some(Arc::new(f));
        self
    }

    pub fn diffusion_deriv_1d(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.diffusion_deriv_1d = Some(Arc::new(move |z: &[f64]| f(z[0])));
        self
    }

    pub fn div_c_theta(mut self, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.div_c_theta = Some(Arc::new(f));
        self
    }

    pub fn gaussian_invariant_hint(mut self, mean: Vec<f64>, cov: Vec<f64>) -> Self {
        self.gaussian_invariant = Some((mean, cov));
        self
    }

    pub fn antiderivative_m_over_c(
        mut self,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.antiderivative_m_over_c = Some(Arc::new(move |z: &[f64]| f(z[0])));
        self
    }

    pub fn build(self) -> ModelSpec {
        ModelSpec {
            domain: self.domain,
            noise_dim: self.noise_dim,
            drift: self.drift,
            diffusion: self.diffusion,
            short_rate: self.short_rate,
            theta: self.theta,
            eta: self.eta,
            cashflow: self.cashflow,
            signed_cashflow: self.signed_cashflow,
            constant_diffusion: self.constant_diffusion,
            cached_sigma: OnceLock::new(),
            div_diffusion: self.div_diffusion,
            diffusion_deriv_1d: self.diffusion_deriv_1d,
            div_c_theta: self.div_c_theta,
            gaussian_invariant: self.gaussian_invariant,
            antiderivative_m_over_c: self.antiderivative_m_over_c,
        }
    }
}

// ---- validation -----------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    pub notices: Vec<String>,
    pub passed: bool,
}

/// Probes the coefficient bundle at the given states: SPD diffusion,
/// cashflow sign (unless the signed override is set) and finiteness of every
/// coefficient. Non-finite values are a hard failure naming the point.
pub fn validate_model(spec: &ModelSpec, probe_points: &[Vec<f64>]) -> Result<ValidationReport> {
    let d = spec.dim();
    let k = spec.noise_dim();
    if probe_points.is_empty() {
        return Err(Error::InvalidInput("validation needs at least one probe point".into()));
    }
    let mut spd_ok = true;
    let mut spd_detail = String::new();
    let mut sign_ok = true;
    let mut sign_detail = String::new();
    let mut signed_notice = false;

    let mut m = vec![0.0; d];
    let mut c = vec![0.0; d * d];
    let mut th = vec![0.0; d];
    let mut et = vec![0.0; k];

    for z in probe_points {
        if !spec.domain().contains(z) {
            return Err(Error::InvalidInput(format!(
                "probe point {z:?} lies outside the declared domain"
            )));
        }
        spec.drift(z, &mut m);
        spec.diffusion_matrix(z, &mut c);
        spec.theta(z, &mut th);
        spec.eta(z, &mut et);
        let a = spec.short_rate(z);
        let f = spec.cashflow(z);
        for (what, vals) in [
            ("drift m", m.as_slice()),
            ("diffusion c", c.as_slice()),
            ("theta", th.as_slice()),
            ("eta", et.as_slice()),
        ] {
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: what.into(),
                    point: z.clone(),
                });
            }
        }
        if !a.is_finite() {
            return Err(Error::NonFinite { what: "short rate a".into(), point: z.clone() });
        }
        if !f.is_finite() {
            return Err(Error::NonFinite { what: "cashflow f".into(), point: z.clone() });
        }

        let cm = DMatrix::from_row_slice(d, d, &c);
        if let Err(e) = linalg::spd_check(&cm) {
            if spd_ok {
                spd_detail = format!("at {z:?}: {e}");
            }
            spd_ok = false;
        }
        if f < 0.0 {
            if spec.signed_cashflow() {
                signed_notice = true;
            } else if sign_ok {
                sign_detail = format!("f({z:?}) = {f} < 0 without signed-cashflow override");
                sign_ok = false;
            }
        }
    }

    let checks = vec![
        CheckResult {
            name: "diffusion_spd".into(),
            passed: spd_ok,
            detail: if spd_ok {
                format!("c SPD at all {} probes", probe_points.len())
            } else {
                spd_detail
            },
        },
        CheckResult {
            name: "cashflow_sign".into(),
            passed: sign_ok,
            detail: if sign_ok { "ok".into() } else { sign_detail },
        },
        CheckResult {
            name: "coefficients_finite".into(),
            passed: true,
            detail: "all coefficients finite at probes".into(),
        },
    ];
    let mut notices = Vec::new();
    if signed_notice {
        notices.push("cashflow takes negative values; signed-cashflow override active".into());
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(ValidationReport {
        checks,
        notices,
        passed,
    })
}

/// The unique symmetric positive definite σ with σσ = c.
pub fn sigma_from_c(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::sqrt_spd(c)
}

// ---- catalog ---------------------------------------------------------------

/// Preset builders for the coefficient families used throughout: they
/// register analytic derivatives and invariant-law hints alongside the
/// coefficients so downstream code never re-derives them numerically.
pub mod catalog {
    use super::*;

    /// 1-D Ornstein-Uhlenbeck factor `dZ = -γ Z dt + dW` on ℝ (c ≡ 1).
    /// Invariant law N(0, 1/(2γ)).
    pub fn ou_builder(gamma: f64) -> ModelBuilder {
        assert!(gamma > 0.0, "OU mean-reversion speed must be positive");
        ModelBuilder::new(StateDomain::real_line(1), 0)
            .drift_1d(move |z| -gamma * z)
            .constant_diffusion(vec![1.0])
            .antiderivative_m_over_c(move |z| -0.5 * gamma * z * z)
            .gaussian_invariant_hint(vec![0.0], vec![1.0 / (2.0 * gamma)])
    }

    /// The linear-cashflow perpetuity: OU factor, constant short rate `a`,
    /// cashflow `f(z) = z` (signed), no stochastic discount terms.
    pub fn ou_linear_cashflow(gamma: f64, a_rate: f64) -> ModelSpec {
        ou_builder(gamma)
            .short_rate_const(a_rate)
            .cashflow(|z| z[0])
            .signed_cashflow(true)
            .build()
    }

    /// Square-root mean-reverting factor `dZ = κ(θ̄ - Z) dt + ξ√Z dW` on
    /// (0, ∞); the invariant law is Gamma(2κθ̄/ξ², 2κ/ξ²).
    pub fn cir_builder(kappa: f64, level: f64, xi: f64) -> ModelBuilder {
        assert!(kappa > 0.0 && level > 0.0 && xi != 0.0);
        let c_of = move |z: f64| xi * xi * z;
        ModelBuilder::new(StateDomain::positive_half_line(), 0)
            .drift_1d(move |z| kappa * (level - z))
            .diffusion_1d(c_of)
            .diffusion_deriv_1d(move |_z| xi * xi)
            .div_diffusion(move |_z, out| out[0] = xi * xi)
            // ∫ m/c = (κθ̄/ξ²) ln z - (κ/ξ²) z
            .antiderivative_m_over_c(move |z| {
                (kappa * level / (xi * xi)) * z.ln() - (kappa / (xi * xi)) * z
            })
    }

    /// Multi-dimensional Ornstein-Uhlenbeck factor
    /// `dZ = -γ (Z - mean) dt + σ dW` with σ symmetric positive definite.
    pub fn ou_multi_builder(
        gamma: &DMatrix<f64>,
        mean: &DVector<f64>,
        sigma: &DMatrix<f64>,
    ) -> Result<ModelBuilder> {
        let d = gamma.nrows();
        if gamma.ncols() != d || sigma.nrows() != d || sigma.ncols() != d || mean.len() != d {
            return Err(Error::InvalidInput("inconsistent OU dimensions".into()));
        }
        linalg::spd_check(sigma)?;
        let c = sigma * sigma;
        let g = gamma.clone();
        let mu = mean.clone();
        Ok(ModelBuilder::new(StateDomain::real_line(d), 0)
            .drift(move |z, out| {
                for i in 0..d {
                    let mut s = 0.0;
                    for j in 0..d {
                        s += g[(i, j)] * (z[j] - mu[j]);
                    }
                    out[i] = -s;
                }
            })
            .constant_diffusion(c.transpose().as_slice().to_vec()))
    }

    /// Geometric-discount perpetuity `X₀ = ∫ exp(-σ B_t - ν t) dt`: constant
    /// coefficients `a = ν - σ²/2`, `η = σ`, `f ≡ 1`, with a spectator OU
    /// factor (the factor plays no role in the discount or the cashflow).
    pub fn dufresne_builder(nu: f64, sigma: f64) -> ModelBuilder {
        assert!(sigma > 0.0);
        ou_builder(1.0)
            .short_rate_const(nu - 0.5 * sigma * sigma)
            .eta_const_with_noise_dim(vec![sigma])
            .cashflow_const(1.0)
    }

    impl ModelBuilder {
        /// Sets a constant η and adjusts the builder's noise dimension to match.
        pub fn eta_const_with_noise_dim(mut self, v: Vec<f64>) -> ModelBuilder {
            self.noise_dim = v.len();
            self.eta_const(v)
        }
    }
}

// ---- JSON model files -------------------------------------------------------

/// Scalar-function specification usable from JSON model files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FnSpec {
    Constant { value: f64 },
    /// `f(z) = z[index]`.
    Coordinate {
        #[serde(default)]
        index: usize,
    },
    /// 1-D polynomial `Σ coeffs[i] zⁱ`.
    Polynomial { coeffs: Vec<f64> },
}

impl Default for FnSpec {
    fn default() -> Self {
        FnSpec::Coordinate { index: 0 }
    }
}

impl FnSpec {
    pub fn to_scalar_fn(&self, d: usize) -> Result<ScalarFn> {
        match self {
            FnSpec::Constant { value } => {
                let v = *value;
                Ok(Arc::new(move |_z| v))
            }
            FnSpec::Coordinate { index } => {
                if *index >= d {
                    return Err(Error::InvalidInput(format!(
                        "coordinate index {index} out of range for d = {d}"
                    )));
                }
                let i = *index;
                Ok(Arc::new(move |z: &[f64]| z[i]))
            }
            FnSpec::Polynomial { coeffs } => {
                if d != 1 {
                    return Err(Error::InvalidInput(
                        "polynomial cashflows are only supported for d = 1".into(),
                    ));
                }
                let c = coeffs.clone();
                Ok(Arc::new(move |z: &[f64]| {
                    c.iter().rev().fold(0.0, |acc, &a| acc * z[0] + a)
                }))
            }
        }
    }

}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FlagsFile {
    #[serde(default)]
    pub signed_cashflow: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientsFile {
    Ou1d {
        gamma: f64,
        a: f64,
        #[serde(default)]
        eta: Vec<f64>,
        #[serde(default)]
        theta: f64,
        #[serde(default)]
        cashflow: FnSpec,
    },
    Cir1d {
        kappa: f64,
        level: f64,
        xi: f64,
        a: f64,
        #[serde(default)]
        eta: Vec<f64>,
        #[serde(default)]
        cashflow: FnSpec,
    },
    OuMulti {
        gamma: Vec<Vec<f64>>,
        #[serde(default)]
        mean: Option<Vec<f64>>,
        #[serde(default)]
        sigma: Option<Vec<Vec<f64>>>,
        a: f64,
        #[serde(default)]
        cashflow: FnSpec,
    },
    Dufresne { nu: f64, sigma: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub coefficients: CoefficientsFile,
    #[serde(default)]
    pub flags: FlagsFile,
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<ModelFile> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("model file parse error: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model file serialization")
    }

    pub fn build(&self) -> Result<ModelSpec> {
        let signed = self.flags.signed_cashflow;
        let spec = match &self.coefficients {
            CoefficientsFile::Ou1d {
                gamma,
                a,
                eta,
                theta,
                cashflow,
            } => {
                let f = cashflow.to_scalar_fn(1)?;
                let mut b = catalog::ou_builder(*gamma)
                    .short_rate_const(*a)
                    .cashflow(move |z| f(z));
                if !eta.is_empty() {
                    b = b.eta_const_with_noise_dim(eta.clone());
                }
                if *theta != 0.0 {
                    let th = *theta;
                    b = b.theta_const(vec![th]);
                }
                b.signed_cashflow(signed).build()
            }
            CoefficientsFile::Cir1d {
                kappa,
                level,
                xi,
                a,
                eta,
                cashflow,
            } => {
                let f = cashflow.to_scalar_fn(1)?;
                let mut b = catalog::cir_builder(*kappa, *level, *xi)
                    .short_rate_const(*a)
                    .cashflow(move |z| f(z));
                if !eta.is_empty() {
                    b = b.eta_const_with_noise_dim(eta.clone());
                }
                b.signed_cashflow(signed).build()
            }
            CoefficientsFile::OuMulti {
                gamma,
                mean,
                sigma,
                a,
                cashflow,
            } => {
                let d = gamma.len();
                let gm = DMatrix::from_fn(d, d, |i, j| gamma[i][j]);
                let mu = DVector::from_vec(mean.clone().unwrap_or_else(|| vec![0.0; d]));
                let sg = match sigma {
                    Some(rows) => DMatrix::from_fn(d, d, |i, j| rows[i][j]),
                    None => DMatrix::identity(d, d),
                };
                let f = cashflow.to_scalar_fn(d)?;
                catalog::ou_multi_builder(&gm, &mu, &sg)?
                    .short_rate_const(*a)
                    .cashflow(move |z| f(z))
                    .signed_cashflow(signed)
                    .build()
            }
            CoefficientsFile::Dufresne { nu, sigma } => {
                catalog::dufresne_builder(*nu, *sigma).build()
            }
        };
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probes_1d(lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| vec![lo + (hi - lo) * i as f64 / (n - 1) as f64])
            .collect()
    }

    #[test]
    fn ou_spec_passes_with_signed_notice() {
        let spec = catalog::ou_linear_cashflow(2.0, 1.0);
        let report = validate_model(&spec, &probes_1d(-3.0, 3.0, 21)).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.notices.len(), 1, "expected the signed-f notice");
    }

    #[test]
    fn unsigned_negative_cashflow_fails_check() {
        let spec = catalog::ou_builder(1.0)
            .short_rate_const(1.0)
            .cashflow(|z| z[0])
            .build();
        let report = validate_model(&spec, &probes_1d(-2.0, 2.0, 9)).unwrap();
        assert!(!report.passed);
        assert!(report.checks.iter().any(|c| c.name == "cashflow_sign" && !c.passed));
    }

    #[test]
    fn zero_diffusion_fails_spd() {
        let spec = ModelBuilder::new(StateDomain::real_line(1), 0)
            .diffusion_1d(|_z| 0.0)
            .cashflow_const(1.0)
            .build();
        let report = validate_model(&spec, &probes_1d(-1.0, 1.0, 5)).unwrap();
        assert!(!report.passed);
        assert!(report.checks.iter().any(|c| c.name == "diffusion_spd" && !c.passed));
    }

    #[test]
    fn nonfinite_coefficient_is_hard_failure() {
        let spec = ModelBuilder::new(StateDomain::real_line(1), 0)
            .drift_1d(|z| 1.0 / z) // blows up at 0
            .cashflow_const(1.0)
            .build();
        match validate_model(&spec, &[vec![0.0]]) {
            Err(Error::NonFinite { point, .. }) => assert_eq!(point, vec![0.0]),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn random_spd_diffusion_passes() {
        // 3×3 SPD built as A'A + I.
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[0.3, -1.2, 0.7, 0.9, 0.1, -0.4, -0.6, 0.8, 1.5],
        );
        let c = a.transpose() * &a + DMatrix::identity(3, 3);
        let c_row: Vec<f64> = c.transpose().as_slice().to_vec();
        let spec = ModelBuilder::new(StateDomain::real_line(3), 0)
            .constant_diffusion(c_row)
            .cashflow_const(1.0)
            .build();
        let report = validate_model(&spec, &[vec![0.0, 0.0, 0.0], vec![1.0, -2.0, 0.5]]).unwrap();
        assert!(report.passed);

        // Independent characteristic-polynomial check that c really is PD:
        // all leading principal minors positive (Sylvester).
        for k in 1..=3 {
            let minor = c.view((0, 0), (k, k)).determinant();
            assert!(minor > 0.0);
        }
    }

    #[test]
    fn validation_deterministic() {
        let spec = catalog::ou_linear_cashflow(2.0, 1.0);
        let probes = probes_1d(-3.0, 3.0, 13);
        let r1 = validate_model(&spec, &probes).unwrap();
        let r2 = validate_model(&spec, &probes).unwrap();
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
    }

    #[test]
    fn sigma_reconstructs_c() {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let s = sigma_from_c(&c).unwrap();
        assert!(linalg::is_symmetric(&s, 1e-12));
        let back = &s * &s;
        assert!(linalg::frobenius(&(&back - &c)) / linalg::frobenius(&c) < 1e-12);
    }

    #[test]
    fn cir_derivative_registrations_match_numerics() {
        let spec = catalog::cir_builder(1.0, 1.0, 0.5)
            .short_rate_const(1.0)
            .cashflow_const(1.0)
            .build();
        // c'(z) = ξ² against the registered value.
        assert!((spec.diffusion_deriv_1d(0.7) - 0.25).abs() < 1e-12);
        let mut dv = [0.0];
        spec.div_diffusion(&[0.7], &mut dv);
        assert!((dv[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn div_c_theta_finite_difference() {
        // c = [[1+z0², 0],[0,1]], θ = (z1, z0) ⇒ cθ = ((1+z0²) z1, z0),
        // ∇·(cθ) = 2 z0 z1.
        let spec = ModelBuilder::new(StateDomain::real_line(2), 0)
            .diffusion(|z, out| {
                out.copy_from_slice(&[1.0 + z[0] * z[0], 0.0, 0.0, 1.0]);
            })
            .theta(|z, out| {
                out[0] = z[1];
                out[1] = z[0];
            })
            .cashflow_const(1.0)
            .build();
        let v = spec.div_c_theta(&[0.8, -1.3]);
        assert!((v - 2.0 * 0.8 * (-1.3)).abs() < 1e-6, "got {v}");
    }

    #[test]
    fn model_file_roundtrip() {
        let text = r#"{
            "schema_version": 1,
            "coefficients": {"kind": "ou1d", "gamma": 2.0, "a": 1.0},
            "flags": {"signed_cashflow": true}
        }"#;
        let file = ModelFile::from_json(text).unwrap();
        let spec = file.build().unwrap();
        assert_eq!(spec.dim(), 1);
        let mut m = [0.0];
        spec.drift(&[1.5], &mut m);
        assert!((m[0] + 3.0).abs() < 1e-15);
        assert!((spec.cashflow(&[0.7]) - 0.7).abs() < 1e-15);
        let round = ModelFile::from_json(&file.to_json()).unwrap();
        assert!(matches!(round.coefficients, CoefficientsFile::Ou1d { .. }));
    }

    #[test]
    fn domain_invariants() {
        assert!(StateDomain::interval(1.0, 1.0).is_err());
        let d = StateDomain::positive_half_line();
        assert!(d.contains(&[1e-9]));
        assert!(!d.contains(&[0.0]));
        assert!(!d.contains(&[-1.0]));
    }
}
