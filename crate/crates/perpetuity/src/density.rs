//! Invariant density of the factor diffusion, via the three constructive
//! routes available in closed(ish) form:
//!
//! * `density_1d` — the 1-D formula `p(z) = K⁻¹ c⁻¹(z) exp(2∫ m/c)`;
//! * `reversing_check` — detailed-balance test: when `c⁻¹(2m − div c)` is a
//!   gradient field `∇H`, then `p = e^H / K`;
//! * `riccati_stationary_ou` — the stabilizing solution `J` of
//!   `JJ = σγ'σ⁻¹J + Jσ⁻¹γσ`, giving the Gaussian law N(Θ, σJ⁻¹σ) for a
//!   multi-dimensional Ornstein-Uhlenbeck factor.
//!
//! Every produced density carries the score `∇p/p` (it enters the reversed
//! drift) and can be screened against the stationarity equation `L̃ᶻ p = 0`
//! through `adjoint_residual`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ModelSpec, ScalarFn, VectorFn};
use crate::numeric::{self, CachedCurve, QuantileTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum Provenance {
    ClosedForm1D,
    ReversingPotential,
    OuRiccati,
    UserSupplied,
}

/// How the density can be sampled directly (reversal initial states).
pub(crate) enum Sampler {
    Gaussian {
        mean: Vec<f64>,
        chol_lower: Vec<f64>, // row-major d×d lower factor of the covariance
    },
    Quantile1D(QuantileTable),
    Unavailable(String),
}

/// Invariant density up to normalization: `p = exp(log_p) / K`.
///
/// Immutable and freely shareable; the interpolation caches behind the
/// log-density and the quantile sampler are built eagerly by the
/// constructors.
pub struct InvariantDensity {
    dim: usize,
    log_density: ScalarFn,
    score_fn: VectorFn,
    k_norm: f64,
    provenance: Provenance,
    pub(crate) sampler: Sampler,
    support_lo: Vec<f64>,
    support_hi: Vec<f64>,
}

impl InvariantDensity {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Normalization constant `K = ∫ exp(log_p) dz`.
    pub fn normalization(&self) -> f64 {
        self.k_norm
    }

    /// Unnormalized log-density.
    pub fn log_p(&self, z: &[f64]) -> f64 {
        (self.log_density)(z)
    }

    /// Normalized density value.
    pub fn density(&self, z: &[f64]) -> f64 {
        (self.log_density)(z).exp() / self.k_norm
    }

    /// Score `∇p/p = ∇ log p`.
    pub fn score(&self, z: &[f64], out: &mut [f64]) {
        (self.score_fn)(z, out)
    }

    /// Effective support box: carries all but a ≲ e⁻⁸⁰ relative amount of
    /// mass; used for quadrature ranges and screening grids.
    pub fn support(&self) -> (&[f64], &[f64]) {
        (&self.support_lo, &self.support_hi)
    }

    /// Quantile of a one-dimensional density.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if self.dim != 1 {
            return Err(Error::InvalidInput("quantile requires a 1-D density".into()));
        }
        match &self.sampler {
            Sampler::Gaussian { mean, chol_lower } => {
                let n = Normal::new(mean[0], chol_lower[0])
                    .map_err(|e| Error::InvalidInput(format!("gaussian quantile: {e}")))?;
                Ok(n.inverse_cdf(u.clamp(1e-300, 1.0 - 1e-16)))
            }
            Sampler::Quantile1D(table) => Ok(table.quantile(u)),
            Sampler::Unavailable(what) => Err(Error::UnsupportedSampler(what.clone())),
        }
    }

    /// CDF of a one-dimensional density.
    pub fn cdf_1d(&self, x: f64) -> Result<f64> {
        if self.dim != 1 {
            return Err(Error::InvalidInput("cdf_1d requires a 1-D density".into()));
        }
        match &self.sampler {
            Sampler::Gaussian { mean, chol_lower } => {
                let n = Normal::new(mean[0], chol_lower[0])
                    .map_err(|e| Error::InvalidInput(format!("gaussian cdf: {e}")))?;
                Ok(n.cdf(x))
            }
            Sampler::Quantile1D(table) => Ok(table.cdf(x)),
            Sampler::Unavailable(what) => Err(Error::UnsupportedSampler(what.clone())),
        }
    }

    /// Gaussian density N(mean, cov) with the given provenance tag.
    /// Degenerate covariances (any direction of zero variance) are rejected.
    pub fn gaussian(mean: &[f64], cov_row_major: &[f64], provenance: Provenance) -> Result<Self> {
        let d = mean.len();
        if cov_row_major.len() != d * d {
            return Err(Error::InvalidInput("covariance must be d×d row-major".into()));
        }
        let cov = DMatrix::from_row_slice(d, d, cov_row_major);
        linalg::spd_check(&cov)?;
        let chol = cov.clone().cholesky().ok_or(Error::NotPositiveDefinite {
            eigenvalue: f64::NAN,
            threshold: 0.0,
        })?;
        let prec = chol.inverse();
        let k_norm = (2.0 * std::f64::consts::PI).powf(d as f64 / 2.0) * cov.determinant().sqrt();

        let mean_v = mean.to_vec();
        let mut prec_flat = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                prec_flat[i * d + j] = prec[(i, j)];
            }
        }
        let (mean_c, prec_c) = (mean_v.clone(), prec_flat.clone());
        let log_density: ScalarFn = Arc::new(move |z: &[f64]| {
            let mut q = 0.0;
            for i in 0..d {
                let ui = z[i] - mean_c[i];
                for j in 0..d {
                    q += ui * prec_c[i * d + j] * (z[j] - mean_c[j]);
                }
            }
            -0.5 * q
        });
        let (mean_s, prec_s) = (mean_v.clone(), prec_flat);
        let score_fn: VectorFn = Arc::new(move |z: &[f64], out: &mut [f64]| {
            for i in 0..d {
                let mut s = 0.0;
                for j in 0..d {
                    s += prec_s[i * d + j] * (z[j] - mean_s[j]);
                }
                out[i] = -s;
            }
        });

        let l = chol.l();
        let mut chol_flat = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                chol_flat[i * d + j] = l[(i, j)];
            }
        }
        // 13 marginal standard deviations ≈ e⁻⁸⁴ relative density.
        let mut lo = vec![0.0; d];
        let mut hi = vec![0.0; d];
        for i in 0..d {
            let sd = cov[(i, i)].sqrt();
            lo[i] = mean[i] - 13.0 * sd;
            hi[i] = mean[i] + 13.0 * sd;
        }
        Ok(InvariantDensity {
            dim: d,
            log_density,
            score_fn,
            k_norm,
            provenance,
            sampler: Sampler::Gaussian {
                mean: mean_v,
                chol_lower: chol_flat,
            },
            support_lo: lo,
            support_hi: hi,
        })
    }

    /// User-supplied 1-D density (log-density and score callables). The
    /// constructor normalizes it and refuses densities that fail the
    /// stationarity screen `adjoint_residual ≤ 1e-4`: a wrong `p` silently
    /// corrupts the reversed drift.
    pub fn user_supplied_1d(
        spec: &ModelSpec,
        log_density: impl Fn(f64) -> f64 + Send + Sync + 'static,
        score: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if spec.dim() != 1 {
            return Err(Error::InvalidInput("user_supplied_1d requires d = 1".into()));
        }
        let raw: ScalarFn = Arc::new(move |z: &[f64]| log_density(z[0]));
        let score_fn: VectorFn = Arc::new(move |z: &[f64], out: &mut [f64]| out[0] = score(z[0]));
        let density = finish_density_1d(spec, raw, score_fn, Provenance::UserSupplied, None)?;
        let lattice = Lattice::standard_for(&density)?;
        let residual = adjoint_residual(spec, &density, &lattice)?;
        if residual > 1e-4 {
            return Err(Error::Validity(format!(
                "user-supplied density fails the stationarity screen: \
                 adjoint residual {residual:.3e} > 1e-4"
            )));
        }
        Ok(density)
    }

    #[cfg(test)]
    pub(crate) fn raw_for_tests(
        dim: usize,
        log_density: ScalarFn,
        score_fn: VectorFn,
        k_norm: f64,
        support: (Vec<f64>, Vec<f64>),
    ) -> Self {
        InvariantDensity {
            dim,
            log_density,
            score_fn,
            k_norm,
            provenance: Provenance::UserSupplied,
            sampler: Sampler::Unavailable("test density".into()),
            support_lo: support.0,
            support_hi: support.1,
        }
    }
}

impl std::fmt::Debug for InvariantDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InvariantDensity")
            .field("dim", &self.dim)
            .field("provenance", &self.provenance)
            .field("k_norm", &self.k_norm)
            .field("support", &(&self.support_lo, &self.support_hi))
            .finish_non_exhaustive()
    }
}

// ---- small coefficient adapters ----------------------------------------------

fn make_m(spec: &ModelSpec) -> Arc<dyn Fn(f64) -> f64 + Send + Sync> {
    let s = spec.clone();
    Arc::new(move |z: f64| {
        let mut out = [0.0];
        s.drift(&[z], &mut out);
        out[0]
    })
}

fn make_c(spec: &ModelSpec) -> Arc<dyn Fn(f64) -> f64 + Send + Sync> {
    let s = spec.clone();
    Arc::new(move |z: f64| {
        let mut out = [0.0];
        s.diffusion_matrix(&[z], &mut out);
        out[0]
    })
}

// ---- 1-D closed form ----------------------------------------------------------

/// Relative log-density drop that defines the effective support.
const SUPPORT_LOG_DROP: f64 = 80.0;

struct SideScanOutcome {
    endpoint: f64,
    max_log_q: f64,
}

/// Expands one side of the support of `log q` until the density has dropped
/// by `SUPPORT_LOG_DROP` relative to the running maximum, watching the
/// partial masses for divergence (growth by a factor > 1.5 three times in a
/// row, or overflow).
fn scan_side(
    log_q: &dyn Fn(f64) -> f64,
    z0: f64,
    boundary: f64,
    mut max_log_q: f64,
) -> Result<SideScanOutcome> {
    let infinite = boundary.is_infinite();
    let dir = if infinite {
        boundary.signum()
    } else {
        (boundary - z0).signum()
    };
    let mut z_prev = z0;
    let mut partial = 0.0f64;
    let mut prev_partial: Option<f64> = None;
    let mut growth = 0u32;
    let max_steps = if infinite { 44 } else { 52 };

    for j in 0..max_steps {
        let z_next = if infinite {
            z0 + dir * f64::exp2(j as f64)
        } else {
            boundary - (boundary - z0) * f64::exp2(-((j + 1) as f64))
        };
        let shift = max_log_q;
        let seg = numeric::integrate(&|z| (log_q(z) - shift).exp(), z_prev, z_next, 1e-12).abs();
        partial += seg;
        let lq = log_q(z_next);
        if lq.is_nan() {
            return Err(Error::NonFinite {
                what: "log-density".into(),
                point: vec![z_next],
            });
        }
        max_log_q = max_log_q.max(lq);
        if !partial.is_finite() || partial > 1e200 {
            return Err(Error::NotPositiveRecurrent(format!(
                "density mass diverges toward {boundary} (overflow near z = {z_next:.4e})"
            )));
        }
        if let Some(prev) = prev_partial {
            if prev > 1e-12 && partial / prev > 1.5 {
                growth += 1;
                if growth >= 3 {
                    return Err(Error::NotPositiveRecurrent(format!(
                        "density mass keeps growing toward {boundary} \
                         (partials {prev:.3e} -> {partial:.3e})"
                    )));
                }
            } else {
                growth = 0;
            }
        }
        prev_partial = Some(partial);
        if lq <= max_log_q - SUPPORT_LOG_DROP {
            return Ok(SideScanOutcome {
                endpoint: z_next,
                max_log_q,
            });
        }
        z_prev = z_next;
    }
    if infinite {
        Err(Error::NotPositiveRecurrent(format!(
            "density does not decay toward {boundary} within the scanned range"
        )))
    } else {
        // Integrable boundary behavior: accept the tightest probed inset.
        Ok(SideScanOutcome {
            endpoint: z_prev,
            max_log_q,
        })
    }
}

fn default_anchor(lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo + 1.0,
        (false, true) => hi - 1.0,
        (false, false) => 0.0,
    }
}

/// Shared tail of the 1-D constructors: support discovery from the raw
/// log-density, normalization and sampler construction. The stored
/// log-density is shifted so its observed peak sits at zero.
fn finish_density_1d(
    spec: &ModelSpec,
    raw_log_p: ScalarFn,
    score_fn: VectorFn,
    provenance: Provenance,
    anchor: Option<f64>,
) -> Result<InvariantDensity> {
    let (dom_lo, dom_hi) = (spec.domain().lower()[0], spec.domain().upper()[0]);
    let z0 = anchor.unwrap_or_else(|| default_anchor(dom_lo, dom_hi));
    let log_q = |z: f64| raw_log_p(&[z]);
    let start_val = log_q(z0);
    if !start_val.is_finite() {
        return Err(Error::NonFinite {
            what: "log-density at the anchor".into(),
            point: vec![z0],
        });
    }
    let right = scan_side(&log_q, z0, dom_hi, start_val)?;
    let left = scan_side(&log_q, z0, dom_lo, right.max_log_q)?;
    let (lo, hi) = (left.endpoint, right.endpoint);
    let peak = left.max_log_q;

    let shifted: ScalarFn = {
        let inner = raw_log_p.clone();
        Arc::new(move |z: &[f64]| inner(z) - peak)
    };
    let k_norm = numeric::integrate(&|z| (log_q(z) - peak).exp(), lo, hi, 1e-13);
    if !(k_norm > 0.0) || !k_norm.is_finite() {
        return Err(Error::NotPositiveRecurrent(format!(
            "normalization integral evaluated to {k_norm}"
        )));
    }

    // The catalog's Gaussian hint describes the law produced by the 1-D
    // closed form; other routes sample through the quantile table.
    let sampler = match (provenance, spec.gaussian_invariant_hint()) {
        (Provenance::ClosedForm1D, Some((mean, cov))) => Sampler::Gaussian {
            mean: mean.to_vec(),
            chol_lower: vec![cov[0].sqrt()],
        },
        _ => {
            let pdf = |z: f64| (log_q(z) - peak).exp();
            Sampler::Quantile1D(QuantileTable::build(&pdf, lo, hi)?)
        }
    };

    Ok(InvariantDensity {
        dim: 1,
        log_density: shifted,
        score_fn,
        k_norm,
        provenance,
        sampler,
        support_lo: vec![lo],
        support_hi: vec![hi],
    })
}

/// 1-D invariant density `p(z) = K⁻¹ c⁻¹(z) exp(2 ∫_{z0}^z m/c ds)`.
///
/// The antiderivative of `m/c` comes from the coefficient catalog when an
/// analytic form is registered, and is otherwise cached on an adaptive grid
/// with cubic Hermite interpolation (the curve is evaluated heavily by
/// normalization, quantiles and downstream quadrature). A divergent
/// normalization is rejected as not positive recurrent.
pub fn density_1d(spec: &ModelSpec, z0: f64) -> Result<InvariantDensity> {
    if spec.dim() != 1 {
        return Err(Error::InvalidInput("density_1d requires d = 1".into()));
    }
    if !spec.domain().contains(&[z0]) {
        return Err(Error::InvalidInput(format!(
            "z0 = {z0} is not interior to the domain"
        )));
    }
    let (dom_lo, dom_hi) = (spec.domain().lower()[0], spec.domain().upper()[0]);

    let antideriv: Arc<dyn Fn(f64) -> f64 + Send + Sync> =
        if let Some(h) = spec.antiderivative_m_over_c() {
            let h = h.clone();
            let base = h(&[z0]);
            Arc::new(move |z: f64| h(&[z]) - base)
        } else {
            let m = make_m(spec);
            let c = make_c(spec);
            let g = move |z: f64| m(z) / c(z);
            let (lo, hi) = provisional_support(spec, &g, z0, dom_lo, dom_hi)?;
            let curve = CachedCurve::antiderivative(&g, lo, hi, z0)?;
            Arc::new(move |z: f64| curve.eval(z))
        };

    let c_fn = make_c(spec);
    let raw_log_p: ScalarFn = {
        let c = c_fn.clone();
        let a = antideriv.clone();
        Arc::new(move |z: &[f64]| -(c(z[0])).ln() + 2.0 * a(z[0]))
    };

    let score_fn: VectorFn = {
        let m = make_m(spec);
        let c = c_fn;
        let s = spec.clone();
        Arc::new(move |z: &[f64], out: &mut [f64]| {
            let cv = c(z[0]);
            out[0] = 2.0 * m(z[0]) / cv - s.diffusion_deriv_1d(z[0]) / cv;
        })
    };

    finish_density_1d(spec, raw_log_p, score_fn, Provenance::ClosedForm1D, Some(z0))
}

/// Incremental support discovery when no analytic antiderivative exists:
/// walks outward accumulating `A = ∫ m/c` segment by segment.
fn provisional_support(
    spec: &ModelSpec,
    g: &(impl Fn(f64) -> f64 + Send + Sync),
    z0: f64,
    dom_lo: f64,
    dom_hi: f64,
) -> Result<(f64, f64)> {
    let c = make_c(spec);
    let log_q0 = -(c(z0)).ln();
    let mut endpoints = [z0, z0];
    for (side, boundary) in [(0usize, dom_lo), (1usize, dom_hi)] {
        let infinite = boundary.is_infinite();
        let dir = if infinite {
            boundary.signum()
        } else {
            (boundary - z0).signum()
        };
        let mut z_prev = z0;
        let mut a_prev = 0.0f64;
        let mut max_log_q = log_q0;
        let max_steps = if infinite { 44 } else { 52 };
        let mut done = false;
        for j in 0..max_steps {
            let z_next = if infinite {
                z0 + dir * f64::exp2(j as f64)
            } else {
                boundary - (boundary - z0) * f64::exp2(-((j + 1) as f64))
            };
            let (a, b) = if z_prev < z_next {
                (z_prev, z_next)
            } else {
                (z_next, z_prev)
            };
            let local = CachedCurve::antiderivative(g, a, b, z_prev)?;
            let a_next = a_prev + local.eval(z_next);
            let lq = -(c(z_next)).ln() + 2.0 * a_next;
            if lq.is_nan() {
                return Err(Error::NonFinite {
                    what: "log-density".into(),
                    point: vec![z_next],
                });
            }
            max_log_q = max_log_q.max(lq);
            if lq <= max_log_q - SUPPORT_LOG_DROP {
                endpoints[side] = z_next;
                done = true;
                break;
            }
            z_prev = z_next;
            a_prev = a_next;
        }
        if !done {
            if infinite {
                return Err(Error::NotPositiveRecurrent(format!(
                    "density does not decay toward {boundary}"
                )));
            }
            endpoints[side] = z_prev;
        }
    }
    Ok((
        endpoints[0].min(endpoints[1]),
        endpoints[0].max(endpoints[1]),
    ))
}

// ---- recurrence classification --------------------------------------------------

#[derive(Clone, Debug)]
pub enum Recurrence {
    PositiveRecurrent,
    NullRecurrentOrTransient,
    /// The scale/speed integrals could not be classified; the detail names
    /// the unresolved integral and the partial values seen.
    Inconclusive { detail: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum IntegralClass {
    Diverged,
    Converged,
    Unknown,
}

/// Classifies positive recurrence of a 1-D factor through the scale and
/// speed integrals: positive recurrent iff both one-sided scale integrals
/// `∫ exp(-2∫m/c)` diverge at the boundaries and the speed integral
/// `∫ c⁻¹ exp(2∫m/c)` converges.
pub fn check_recurrence_1d(spec: &ModelSpec, z0: f64) -> Result<Recurrence> {
    if spec.dim() != 1 {
        return Err(Error::InvalidInput("check_recurrence_1d requires d = 1".into()));
    }
    if !spec.domain().contains(&[z0]) {
        return Err(Error::InvalidInput(format!(
            "z0 = {z0} is not interior to the domain"
        )));
    }
    let m = make_m(spec);
    let c = make_c(spec);
    let g = move |z: f64| m(z) / c(z);
    let c = make_c(spec);
    let (dom_lo, dom_hi) = (spec.domain().lower()[0], spec.domain().upper()[0]);

    let mut scale = [IntegralClass::Unknown; 2];
    let mut speed = [IntegralClass::Unknown; 2];
    let mut details = Vec::new();

    for (side, boundary) in [(0usize, dom_lo), (1usize, dom_hi)] {
        let infinite = boundary.is_infinite();
        let dir = if infinite {
            boundary.signum()
        } else {
            (boundary - z0).signum()
        };
        let max_steps = if infinite { 44 } else { 56 };

        let mut z_prev = z0;
        let mut a_prev = 0.0f64;
        let mut scale_sum = 0.0f64;
        let mut speed_sum = 0.0f64;
        let mut scale_state = (None, 0u32, 0u32); // (prev, growth, conv)
        let mut speed_state = (None, 0u32, 0u32);

        for j in 0..max_steps {
            let z_next = if infinite {
                z0 + dir * f64::exp2(j as f64)
            } else {
                boundary - (boundary - z0) * f64::exp2(-((j + 1) as f64))
            };
            let (a, b) = if z_prev < z_next {
                (z_prev, z_next)
            } else {
                (z_next, z_prev)
            };
            let local = CachedCurve::antiderivative(&g, a, b, z_prev)?;

            if scale[side] == IntegralClass::Unknown {
                let seg = numeric::integrate(
                    &|z| (-2.0 * (a_prev + local.eval(z))).exp(),
                    z_prev,
                    z_next,
                    1e-12,
                )
                .abs();
                scale_sum += seg;
                scale[side] = classify_step(scale_sum, &mut scale_state);
            }
            if speed[side] == IntegralClass::Unknown {
                let seg = numeric::integrate(
                    &|z| (2.0 * (a_prev + local.eval(z))).exp() / c(z),
                    z_prev,
                    z_next,
                    1e-12,
                )
                .abs();
                speed_sum += seg;
                speed[side] = classify_step(speed_sum, &mut speed_state);
            }
            if scale[side] != IntegralClass::Unknown && speed[side] != IntegralClass::Unknown {
                break;
            }
            a_prev += local.eval(z_next);
            z_prev = z_next;
        }
        if scale[side] == IntegralClass::Unknown {
            details.push(format!(
                "scale integral toward {boundary} unresolved (partial {scale_sum:.4e})"
            ));
        }
        if speed[side] == IntegralClass::Unknown {
            details.push(format!(
                "speed integral toward {boundary} unresolved (partial {speed_sum:.4e})"
            ));
        }
    }

    // Decisive negatives first: a convergent scale integral or a divergent
    // speed integral rules out positive recurrence on its own.
    if scale.contains(&IntegralClass::Converged) || speed.contains(&IntegralClass::Diverged) {
        return Ok(Recurrence::NullRecurrentOrTransient);
    }
    if scale == [IntegralClass::Diverged; 2] && speed == [IntegralClass::Converged; 2] {
        return Ok(Recurrence::PositiveRecurrent);
    }
    Ok(Recurrence::Inconclusive {
        detail: details.join("; "),
    })
}

fn classify_step(sum: f64, state: &mut (Option<f64>, u32, u32)) -> IntegralClass {
    if !sum.is_finite() || sum > 1e250 {
        return IntegralClass::Diverged;
    }
    let (prev, growth, conv) = state;
    let mut verdict = IntegralClass::Unknown;
    if let Some(p) = *prev {
        if p > 1e-12 && sum / p > 1.5 {
            *growth += 1;
            *conv = 0;
            if *growth >= 3 {
                verdict = IntegralClass::Diverged;
            }
        } else {
            *growth = 0;
            if (sum - p).abs() <= 1e-12f64.max(1e-9 * sum.abs()) {
                *conv += 1;
                if *conv >= 2 {
                    verdict = IntegralClass::Converged;
                }
            } else {
                *conv = 0;
            }
        }
    }
    *prev = Some(sum);
    verdict
}

// ---- Riccati route for multi-dimensional OU factors ------------------------------

/// Stabilizing solution of `JJ = σγ'σ⁻¹J + Jσ⁻¹γσ` together with the
/// stationary covariance `Σ = σ J⁻¹ σ`.
#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub j: DMatrix<f64>,
    pub sigma_cov: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
    mean: DVector<f64>,
}

impl RiccatiSolution {
    /// The Gaussian invariant density N(mean, σ J⁻¹ σ).
    pub fn invariant_density(&self) -> Result<InvariantDensity> {
        let d = self.mean.len();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] = self.sigma_cov[(i, j)];
            }
        }
        InvariantDensity::gaussian(self.mean.as_slice(), &cov, Provenance::OuRiccati)
    }
}

/// Newton iteration (one Lyapunov solve per step) for the OU Riccati
/// equation, started at the symmetrized `σγ'σ⁻¹ + σ⁻¹γσ`; that start makes
/// `A − J₀ = −A'` stable, which keeps every iterate stabilizing. Requires
/// all eigenvalues of γ to have strictly positive real part.
pub fn riccati_stationary_ou(
    gamma: &DMatrix<f64>,
    mean: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<RiccatiSolution> {
    let d = gamma.nrows();
    if gamma.ncols() != d || sigma.nrows() != d || sigma.ncols() != d || mean.len() != d {
        return Err(Error::InvalidInput(
            "riccati_stationary_ou: inconsistent dimensions".into(),
        ));
    }
    linalg::spd_check(sigma)?;
    if !linalg::spectrum_strictly_positive(gamma) {
        return Err(Error::Spectrum(
            "gamma has an eigenvalue with non-positive real part".into(),
        ));
    }
    let sigma_inv = sigma
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite {
            eigenvalue: f64::NAN,
            threshold: 0.0,
        })?
        .inverse();
    let a = &sigma_inv * gamma * sigma; // σ⁻¹γσ; its transpose is σγ'σ⁻¹
    let at = a.transpose();

    let residual_of =
        |j: &DMatrix<f64>| -> f64 { linalg::frobenius(&(j * j - &at * j - j * &a)) };

    let mut j = &a + &at;
    let mut iterations = 0usize;
    let mut residual = residual_of(&j);
    while residual >= 1e-10 && iterations < 100 {
        let m = &a - &j;
        let rhs = -(&j * &j);
        let x = linalg::lyapunov_solve(&m, &rhs)?;
        j = 0.5 * (&x + x.transpose());
        residual = residual_of(&j);
        iterations += 1;
    }
    if residual >= 1e-8 {
        return Err(Error::Convergence {
            what: "Riccati Newton iteration".into(),
            residual,
            iterations,
        });
    }
    linalg::spd_check(&j)?;
    let j_inv = j
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite {
            eigenvalue: f64::NAN,
            threshold: 0.0,
        })?
        .inverse();
    let sigma_cov = sigma * j_inv * sigma;
    linalg::spd_check(&sigma_cov)?;
    Ok(RiccatiSolution {
        j,
        sigma_cov,
        residual,
        iterations,
        mean: mean.clone(),
    })
}

// ---- reversing-potential route -----------------------------------------------------

#[derive(Debug)]
pub enum PotentialCheck {
    /// `c⁻¹(2m − div c)` is (numerically) a gradient field `∇H`; the density
    /// `p = e^H/K` is returned with `H` obtained by line integration from a
    /// base point.
    Reversing {
        density: InvariantDensity,
        max_asymmetry: f64,
    },
    NotReversing { max_asymmetry: f64 },
}

type FieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// `v = c⁻¹ (2m − div c)` as a reusable closure.
fn make_field(spec: &ModelSpec) -> FieldFn {
    let s = spec.clone();
    let d = spec.dim();
    Arc::new(move |z: &[f64], out: &mut [f64]| {
        let mut m = vec![0.0; d];
        let mut dv = vec![0.0; d];
        s.drift(z, &mut m);
        s.div_diffusion(z, &mut dv);
        if d == 1 {
            let mut c = [0.0];
            s.diffusion_matrix(z, &mut c);
            out[0] = (2.0 * m[0] - dv[0]) / c[0];
            return;
        }
        let mut c = vec![0.0; d * d];
        s.diffusion_matrix(z, &mut c);
        let cm = DMatrix::from_row_slice(d, d, &c);
        let rhs = DVector::from_fn(d, |i, _| 2.0 * m[i] - dv[i]);
        match cm.lu().solve(&rhs) {
            Some(sol) => out.copy_from_slice(sol.as_slice()),
            None => out.fill(f64::NAN),
        }
    })
}

/// Tests whether the factor diffusion is reversing (detailed balance) via
/// the mixed-partial symmetry of `v = c⁻¹(2m − div c)` at the probe points;
/// on success builds the invariant density from the potential. Scalar fields
/// are always gradients, so 1-D specs always come back `Reversing`.
///
/// Normalization of the potential density is implemented for d ≤ 2; higher
/// dimensions should use the Riccati route (Gaussian case) or forward
/// reversal, which needs no density at all.
pub fn reversing_check(spec: &ModelSpec, probe_points: &[Vec<f64>]) -> Result<PotentialCheck> {
    let d = spec.dim();
    if probe_points.is_empty() {
        return Err(Error::InvalidInput("reversing_check needs probe points".into()));
    }
    let v = make_field(spec);

    let mut max_asym = 0.0f64;
    if d > 1 {
        let mut scale = 1.0f64;
        let mut buf = vec![0.0; d];
        for z in probe_points {
            if !spec.domain().contains(z) {
                return Err(Error::InvalidInput(format!("probe {z:?} outside the domain")));
            }
            for i in 0..d {
                for j in (i + 1)..d {
                    // ∂_j v_i and ∂_i v_j by central differences.
                    let dji = {
                        let h = 1e-4 * (1.0 + z[j].abs());
                        let mut zp = z.clone();
                        zp[j] = z[j] + h;
                        v(&zp, &mut buf);
                        let up = buf[i];
                        zp[j] = z[j] - h;
                        v(&zp, &mut buf);
                        (up - buf[i]) / (2.0 * h)
                    };
                    let dij = {
                        let h = 1e-4 * (1.0 + z[i].abs());
                        let mut zp = z.clone();
                        zp[i] = z[i] + h;
                        v(&zp, &mut buf);
                        let up = buf[j];
                        zp[i] = z[i] - h;
                        v(&zp, &mut buf);
                        (up - buf[j]) / (2.0 * h)
                    };
                    scale = scale.max(dij.abs()).max(dji.abs());
                    max_asym = max_asym.max((dij - dji).abs());
                }
            }
        }
        max_asym /= scale;
        if max_asym > 1e-4 {
            return Ok(PotentialCheck::NotReversing {
                max_asymmetry: max_asym,
            });
        }
    }

    if d > 2 {
        return Err(Error::InvalidInput(
            "reversing potential densities are normalized only for d ≤ 2".into(),
        ));
    }

    let mut base = vec![0.0; d];
    for z in probe_points {
        for i in 0..d {
            base[i] += z[i] / probe_points.len() as f64;
        }
    }

    let potential = make_potential(v, base.clone(), d);
    let score_fn: VectorFn = {
        let v = make_field(spec);
        Arc::new(move |z: &[f64], out: &mut [f64]| v(z, out))
    };
    let raw_log_p: ScalarFn = {
        let p = potential.clone();
        Arc::new(move |z: &[f64]| p(z))
    };

    let density = if d == 1 {
        finish_density_1d(
            spec,
            raw_log_p,
            score_fn,
            Provenance::ReversingPotential,
            Some(base[0]),
        )?
    } else {
        finish_density_2d(spec, raw_log_p, score_fn)?
    };
    Ok(PotentialCheck::Reversing {
        density,
        max_asymmetry: max_asym,
    })
}

/// Straight-line integral `H(z) = ∫₀¹ v(base + t(z − base)) · (z − base) dt`.
fn make_potential(v: FieldFn, base: Vec<f64>, d: usize) -> ScalarFn {
    Arc::new(move |z: &[f64]| {
        let dir: Vec<f64> = (0..d).map(|i| z[i] - base[i]).collect();
        numeric::integrate(
            &|t: f64| {
                let mut pt = vec![0.0; d];
                let mut buf = vec![0.0; d];
                for i in 0..d {
                    pt[i] = base[i] + t * dir[i];
                }
                v(&pt, &mut buf);
                (0..d).map(|i| buf[i] * dir[i]).sum::<f64>()
            },
            0.0,
            1.0,
            1e-11,
        )
    })
}

/// Support discovery and normalization for a 2-D potential density:
/// per-axis scans from the base point, face growth until the boundary
/// density is negligible, then tensor quadrature for `K`.
fn finish_density_2d(
    spec: &ModelSpec,
    raw_log_p: ScalarFn,
    score_fn: VectorFn,
) -> Result<InvariantDensity> {
    let d = 2usize;
    // Base point = where the potential is anchored (H(base) = 0).
    let mut base = vec![0.0; d];
    for i in 0..d {
        base[i] = default_anchor(spec.domain().lower()[i], spec.domain().upper()[i]);
    }
    let peak0 = raw_log_p(&base);
    let mut lo = vec![0.0; d];
    let mut hi = vec![0.0; d];
    for axis in 0..d {
        let line = |t: f64| {
            let mut z = base.clone();
            z[axis] = t;
            raw_log_p(&z)
        };
        let up = scan_side(&line, base[axis], spec.domain().upper()[axis], peak0)?;
        let down = scan_side(&line, base[axis], spec.domain().lower()[axis], up.max_log_q)?;
        lo[axis] = down.endpoint;
        hi[axis] = up.endpoint;
    }
    // Correlated densities can leak past an axis-aligned scan; grow the box
    // until every face is negligible.
    let face_max = |lo: &[f64], hi: &[f64]| -> f64 {
        let mut m = f64::NEG_INFINITY;
        let n = 17;
        for axis in 0..d {
            let other = 1 - axis;
            for &edge in &[lo[axis], hi[axis]] {
                for k in 0..n {
                    let t = lo[other] + (hi[other] - lo[other]) * k as f64 / (n - 1) as f64;
                    let mut z = vec![0.0; d];
                    z[axis] = edge;
                    z[other] = t;
                    m = m.max(raw_log_p(&z));
                }
            }
        }
        m
    };
    let mut grow = 0;
    while face_max(&lo, &hi) > peak0 - 60.0 && grow < 8 {
        for axis in 0..d {
            let half = 0.5 * (hi[axis] - lo[axis]);
            let center = 0.5 * (hi[axis] + lo[axis]);
            lo[axis] = (center - 1.4 * half).max(spec.domain().lower()[axis]);
            hi[axis] = (center + 1.4 * half).min(spec.domain().upper()[axis]);
        }
        grow += 1;
    }

    // Peak over a coarse lattice for the exponential shift.
    let mut peak = peak0;
    let n = 33;
    for i in 0..n {
        for j in 0..n {
            let z = [
                lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64,
                lo[1] + (hi[1] - lo[1]) * j as f64 / (n - 1) as f64,
            ];
            peak = peak.max(raw_log_p(&z));
        }
    }
    let shifted: ScalarFn = {
        let inner = raw_log_p.clone();
        Arc::new(move |z: &[f64]| inner(z) - peak)
    };
    let k_norm = {
        let f = shifted.clone();
        let (lo1, hi1) = (lo[1], hi[1]);
        numeric::integrate(
            &|z0: f64| numeric::integrate(&|z1: f64| f(&[z0, z1]).exp(), lo1, hi1, 1e-11),
            lo[0],
            hi[0],
            1e-10,
        )
    };
    if !(k_norm > 0.0) || !k_norm.is_finite() {
        return Err(Error::NotPositiveRecurrent(format!(
            "2-D normalization integral evaluated to {k_norm}"
        )));
    }
    Ok(InvariantDensity {
        dim: d,
        log_density: shifted,
        score_fn,
        k_norm,
        provenance: Provenance::ReversingPotential,
        sampler: Sampler::Unavailable(
            "2-D potential density has no direct sampler; use forward reversal".into(),
        ),
        support_lo: lo,
        support_hi: hi,
    })
}

// ---- adjoint residual ------------------------------------------------------------

/// Uniform lattice for the stationarity screen.
#[derive(Clone, Debug)]
pub struct Lattice {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<usize>,
}

impl Lattice {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, nodes: Vec<usize>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != nodes.len() || lower.is_empty() {
            return Err(Error::InvalidInput(
                "lattice vectors must have equal nonzero length".into(),
            ));
        }
        if nodes.iter().any(|&n| n < 9) {
            return Err(Error::InvalidInput("lattice needs at least 9 nodes per axis".into()));
        }
        for (lo, hi) in lower.iter().zip(upper.iter()) {
            if !(lo < hi) {
                return Err(Error::InvalidInput(
                    "lattice bounds must satisfy lower < upper".into(),
                ));
            }
        }
        Ok(Lattice { lower, upper, nodes })
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.nodes[axis] - 1) as f64
    }

    /// The default screening grid: central 1 − 2e-6 mass window with 601
    /// nodes for 1-D densities, ±4.75 marginal standard deviations with 41
    /// nodes per axis for Gaussian ones.
    pub fn standard_for(density: &InvariantDensity) -> Result<Lattice> {
        let d = density.dim();
        if d == 1 {
            let lo = density.quantile(1e-6)?;
            let hi = density.quantile(1.0 - 1e-6)?;
            return Lattice::new(vec![lo], vec![hi], vec![601]);
        }
        match &density.sampler {
            Sampler::Gaussian { mean, chol_lower } => {
                let mut lo = vec![0.0; d];
                let mut hi = vec![0.0; d];
                for i in 0..d {
                    let var: f64 = (0..d).map(|j| chol_lower[i * d + j].powi(2)).sum();
                    let sd = var.sqrt();
                    lo[i] = mean[i] - 4.7534 * sd;
                    hi[i] = mean[i] + 4.7534 * sd;
                }
                Lattice::new(lo, hi, vec![41; d])
            }
            _ => Err(Error::InvalidInput(
                "no standard lattice for this density; provide one explicitly".into(),
            )),
        }
    }
}

/// Max-norm residual of the stationarity equation
/// `L̃ᶻ p = ½ Σᵢⱼ ∂²ᵢⱼ(cⁱʲ p) − Σᵢ ∂ᵢ(mⁱ p) = 0`
/// at interior lattice nodes, normalized by the maximum of `p` on the
/// lattice. Central differences (fourth order) act directly on the products
/// `cⁱʲ p` and `mⁱ p`, so the screen shares nothing with the density
/// construction it checks.
pub fn adjoint_residual(
    spec: &ModelSpec,
    density: &InvariantDensity,
    lattice: &Lattice,
) -> Result<f64> {
    let d = spec.dim();
    if density.dim() != d || lattice.lower.len() != d {
        return Err(Error::InvalidInput("dimension mismatch in adjoint_residual".into()));
    }
    // Stencil points reach 2h beyond the lattice and must stay inside the
    // domain.
    for axis in 0..d {
        let h = lattice.spacing(axis);
        if lattice.lower[axis] - 2.0 * h <= spec.domain().lower()[axis]
            || lattice.upper[axis] + 2.0 * h >= spec.domain().upper()[axis]
        {
            return Err(Error::InvalidInput(format!(
                "lattice axis {axis} leaves the domain once the stencil margin is added"
            )));
        }
    }

    // Peak of log p over the lattice for a stable exponential shift; the
    // normalizing max p is then exp(0) = 1.
    let mut peak = f64::NEG_INFINITY;
    let mut idx = vec![0usize; d];
    let mut z = vec![0.0; d];
    loop {
        for a in 0..d {
            z[a] = lattice.lower[a] + lattice.spacing(a) * idx[a] as f64;
        }
        peak = peak.max(density.log_p(&z));
        if !advance(&mut idx, &lattice.nodes) {
            break;
        }
    }

    let p = |zz: &[f64]| (density.log_p(zz) - peak).exp();
    let w_ij = |zz: &[f64], i: usize, j: usize| -> f64 {
        let mut cb = vec![0.0; d * d];
        spec.diffusion_matrix(zz, &mut cb);
        cb[i * d + j] * p(zz)
    };
    let v_i = |zz: &[f64], i: usize| -> f64 {
        let mut mb = vec![0.0; d];
        spec.drift(zz, &mut mb);
        mb[i] * p(zz)
    };

    let mut max_res = 0.0f64;
    let mut idx = vec![0usize; d];
    loop {
        let interior = (0..d).all(|a| idx[a] >= 2 && idx[a] + 2 < lattice.nodes[a]);
        if interior {
            for a in 0..d {
                z[a] = lattice.lower[a] + lattice.spacing(a) * idx[a] as f64;
            }
            let mut res = 0.0f64;
            for i in 0..d {
                let hi = lattice.spacing(i);
                let zi = z[i];
                res += 0.5
                    * numeric::d2_c4(
                        &|x| {
                            let mut zz = z.clone();
                            zz[i] = x;
                            w_ij(&zz, i, i)
                        },
                        zi,
                        hi,
                    );
                res -= numeric::d1_c4(
                    &|x| {
                        let mut zz = z.clone();
                        zz[i] = x;
                        v_i(&zz, i)
                    },
                    zi,
                    hi,
                );
                for j in 0..d {
                    if j == i {
                        continue;
                    }
                    let hj = lattice.spacing(j);
                    let zj = z[j];
                    res += 0.5
                        * numeric::d1_c4(
                            &|xi| {
                                numeric::d1_c4(
                                    &|xj| {
                                        let mut zz = z.clone();
                                        zz[i] = xi;
                                        zz[j] = xj;
                                        w_ij(&zz, i, j)
                                    },
                                    zj,
                                    hj,
                                )
                            },
                            zi,
                            hi,
                        );
                }
            }
            max_res = max_res.max(res.abs());
        }
        if !advance(&mut idx, &lattice.nodes) {
            break;
        }
    }
    Ok(max_res)
}

fn advance(idx: &mut [usize], nodes: &[usize]) -> bool {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] < nodes[a] {
            return true;
        }
        idx[a] = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{catalog, ModelBuilder, StateDomain};

    fn ou_spec(gamma: f64) -> ModelSpec {
        catalog::ou_linear_cashflow(gamma, 1.0)
    }

    #[test]
    fn ou_density_is_gaussian() {
        let spec = ou_spec(2.0);
        let p = density_1d(&spec, 0.0).unwrap();
        // N(0, 1/4): pdf = sqrt(2/pi) exp(-2z²)
        for &z in &[-1.5f64, -0.3, 0.0, 0.7, 2.0] {
            let exact = (2.0 / std::f64::consts::PI).sqrt() * (-2.0 * z * z).exp();
            assert!(
                (p.density(&[z]) - exact).abs() < 1e-9,
                "z={z}: {} vs {exact}",
                p.density(&[z])
            );
        }
        let mut s = [0.0];
        p.score(&[0.7], &mut s);
        assert!((s[0] - (-4.0 * 0.7)).abs() < 1e-12);
    }

    #[test]
    fn ou_density_without_analytic_antiderivative_agrees() {
        // Same dynamics, generic closures: exercises the cached-curve path.
        let spec = ModelBuilder::new(StateDomain::real_line(1), 0)
            .drift_1d(|z| -2.0 * z)
            .diffusion_1d(|_z| 1.0)
            .cashflow(|z| z[0])
            .signed_cashflow(true)
            .build();
        let p = density_1d(&spec, 0.0).unwrap();
        let q = density_1d(&ou_spec(2.0), 0.0).unwrap();
        for &z in &[-2.0, -0.4, 0.0, 1.1, 2.5] {
            let diff_p = p.log_p(&[z]) - p.log_p(&[0.0]);
            let diff_q = q.log_p(&[z]) - q.log_p(&[0.0]);
            assert!(
                (diff_p - diff_q).abs() < 1e-8,
                "log-density difference mismatch at z={z}: {diff_p} vs {diff_q}"
            );
        }
    }

    #[test]
    fn flat_density_not_positive_recurrent() {
        let spec = ModelBuilder::new(StateDomain::real_line(1), 0)
            .cashflow_const(1.0)
            .build(); // m = 0, c = 1
        match density_1d(&spec, 0.0) {
            Err(Error::NotPositiveRecurrent(_)) => {}
            other => panic!("expected NotPositiveRecurrent, got {other:?}"),
        }
    }

    #[test]
    fn cir_density_matches_gamma_law() {
        // κ = θ̄ = 1, ξ = 0.5 ⇒ Gamma(shape 8, rate 8).
        let spec = catalog::cir_builder(1.0, 1.0, 0.5)
            .short_rate_const(1.0)
            .cashflow_const(1.0)
            .build();
        let p = density_1d(&spec, 1.0).unwrap();
        let ln_gamma_8 = (1..8).map(|k| (k as f64).ln()).sum::<f64>(); // ln(7!)
        let exact =
            |z: f64| (8.0f64.ln() * 8.0 - ln_gamma_8 + 7.0 * z.ln() - 8.0 * z).exp();
        for &z in &[0.3, 0.7, 1.0, 1.8, 3.0] {
            let rel = (p.density(&[z]) - exact(z)).abs() / exact(z);
            assert!(rel < 1e-7, "z={z}: {} vs {}", p.density(&[z]), exact(z));
        }
        // And it satisfies the stationarity equation on the standard grid.
        let lattice = Lattice::standard_for(&p).unwrap();
        let res = adjoint_residual(&spec, &p, &lattice).unwrap();
        assert!(res < 1e-5, "CIR adjoint residual {res}");
    }

    #[test]
    fn recurrence_classification() {
        assert!(matches!(
            check_recurrence_1d(&ou_spec(2.0), 0.0).unwrap(),
            Recurrence::PositiveRecurrent
        ));
        let flat = ModelBuilder::new(StateDomain::real_line(1), 0)
            .cashflow_const(1.0)
            .build();
        assert!(matches!(
            check_recurrence_1d(&flat, 0.0).unwrap(),
            Recurrence::NullRecurrentOrTransient
        ));
        let repelling = ModelBuilder::new(StateDomain::real_line(1), 0)
            .drift_1d(|z| z)
            .cashflow_const(1.0)
            .build();
        assert!(matches!(
            check_recurrence_1d(&repelling, 0.0).unwrap(),
            Recurrence::NullRecurrentOrTransient
        ));
    }

    #[test]
    fn riccati_scalar_family() {
        for &g0 in &[0.5, 1.0, 2.0] {
            let gamma = DMatrix::from_diagonal_element(2, 2, g0);
            let mean = DVector::zeros(2);
            let sigma = DMatrix::identity(2, 2);
            let sol = riccati_stationary_ou(&gamma, &mean, &sigma).unwrap();
            assert!(
                linalg::frobenius(&(&sol.j - DMatrix::from_diagonal_element(2, 2, 2.0 * g0)))
                    < 1e-9,
                "J != 2γ₀ I for γ₀ = {g0}"
            );
            assert!(
                linalg::frobenius(
                    &(&sol.sigma_cov - DMatrix::from_diagonal_element(2, 2, 0.5 / g0))
                ) < 1e-9
            );
        }
    }

    #[test]
    fn riccati_nonsymmetric_substituted_back() {
        let gamma = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let mean = DVector::zeros(2);
        let sigma = DMatrix::identity(2, 2);
        let sol = riccati_stationary_ou(&gamma, &mean, &sigma).unwrap();
        assert!(sol.residual < 1e-10, "residual {}", sol.residual);
        linalg::spd_check(&sol.j).unwrap();
        // Substitute back into the defining equation.
        let lhs = &sol.j * &sol.j;
        let rhs = gamma.transpose() * &sol.j + &sol.j * &gamma; // σ = I
        assert!(linalg::frobenius(&(lhs - rhs)) < 1e-8);
    }

    #[test]
    fn riccati_scaling_invariance() {
        // J(λγ) = λ J(γ).
        let gamma = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let mean = DVector::zeros(2);
        let sigma = DMatrix::identity(2, 2);
        let j1 = riccati_stationary_ou(&gamma, &mean, &sigma).unwrap().j;
        let lambda = 3.7;
        let j2 = riccati_stationary_ou(&(lambda * &gamma), &mean, &sigma).unwrap().j;
        let rel = linalg::frobenius(&(&j2 - lambda * &j1)) / linalg::frobenius(&j2);
        assert!(rel < 1e-8, "scaling relative error {rel}");
    }

    #[test]
    fn riccati_rejects_bad_spectrum() {
        let gamma = -DMatrix::identity(2, 2);
        let mean = DVector::zeros(2);
        let sigma = DMatrix::identity(2, 2);
        match riccati_stationary_ou(&gamma, &mean, &sigma) {
            Err(Error::Spectrum(_)) => {}
            other => panic!("expected SpectrumError, got {other:?}"),
        }
    }

    #[test]
    fn one_dimensional_specs_always_reverse() {
        let spec = ou_spec(2.0);
        match reversing_check(&spec, &[vec![-1.0], vec![0.0], vec![1.0]]).unwrap() {
            PotentialCheck::Reversing { density, .. } => {
                // Potential route agrees with the closed form on log-density
                // differences.
                let closed = density_1d(&spec, 0.0).unwrap();
                for &z in &[-1.2, 0.4, 1.7] {
                    let a = density.log_p(&[z]) - density.log_p(&[0.0]);
                    let b = closed.log_p(&[z]) - closed.log_p(&[0.0]);
                    assert!((a - b).abs() < 1e-8, "z={z}: {a} vs {b}");
                }
            }
            other => panic!("1-D spec must be reversing, got {other:?}"),
        }
    }

    #[test]
    fn symmetric_ou_reverses_nonsymmetric_does_not() {
        let mean = DVector::zeros(2);
        let sigma = DMatrix::identity(2, 2);
        let probes = vec![
            vec![0.0, 0.0],
            vec![0.5, -0.3],
            vec![-0.8, 0.6],
            vec![1.0, 1.0],
        ];

        let sym = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 3.0]);
        let spec = catalog::ou_multi_builder(&sym, &mean, &sigma)
            .unwrap()
            .short_rate_const(1.0)
            .cashflow_const(1.0)
            .build();
        match reversing_check(&spec, &probes).unwrap() {
            PotentialCheck::Reversing { density, .. } => {
                // p should be N(0, γ⁻¹/2): compare log-density differences.
                let cov = 0.5 * sym.clone().try_inverse().unwrap();
                let cov_flat = [cov[(0, 0)], cov[(0, 1)], cov[(1, 0)], cov[(1, 1)]];
                let exact =
                    InvariantDensity::gaussian(&[0.0, 0.0], &cov_flat, Provenance::UserSupplied)
                        .unwrap();
                for z in [[0.4, -0.2], [1.0, 0.8], [-0.7, 0.1]] {
                    let a = density.log_p(&z) - density.log_p(&[0.0, 0.0]);
                    let b = exact.log_p(&z) - exact.log_p(&[0.0, 0.0]);
                    assert!((a - b).abs() < 1e-6, "{a} vs {b}");
                }
            }
            other => panic!("symmetric OU must reverse, got {other:?}"),
        }

        let nonsym = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let spec = catalog::ou_multi_builder(&nonsym, &mean, &sigma)
            .unwrap()
            .short_rate_const(1.0)
            .cashflow_const(1.0)
            .build();
        match reversing_check(&spec, &probes).unwrap() {
            PotentialCheck::NotReversing { max_asymmetry } => {
                assert!(max_asymmetry > 1e-2, "asymmetry {max_asymmetry}");
            }
            other => panic!("non-symmetric OU must not reverse, got {other:?}"),
        }
    }

    #[test]
    fn adjoint_residual_ou_closed_form() {
        let spec = ou_spec(2.0);
        let p = density_1d(&spec, 0.0).unwrap();
        let lattice = Lattice::new(vec![-3.0], vec![3.0], vec![601]).unwrap();
        let res = adjoint_residual(&spec, &p, &lattice).unwrap();
        assert!(res <= 1e-6, "OU adjoint residual {res}");
    }

    #[test]
    fn adjoint_residual_detects_wrong_variance() {
        let spec = ou_spec(2.0);
        // Variance 1/2 instead of 1/4.
        let wrong =
            InvariantDensity::gaussian(&[0.0], &[0.5], Provenance::UserSupplied).unwrap();
        let lattice = Lattice::new(vec![-3.0], vec![3.0], vec![601]).unwrap();
        let res = adjoint_residual(&spec, &wrong, &lattice).unwrap();
        assert!(res >= 0.1, "wrong density must be flagged, residual {res}");
    }

    #[test]
    fn adjoint_residual_constant_density_driftless_model() {
        let spec = ModelBuilder::new(StateDomain::real_line(1), 0)
            .cashflow_const(1.0)
            .build(); // m = 0, c = 1
        let flat = InvariantDensity::raw_for_tests(
            1,
            Arc::new(|_z: &[f64]| 0.0),
            Arc::new(|_z: &[f64], out: &mut [f64]| out[0] = 0.0),
            1.0,
            (vec![-1.0], vec![1.0]),
        );
        let lattice = Lattice::new(vec![-1.0], vec![1.0], vec![101]).unwrap();
        let res = adjoint_residual(&spec, &flat, &lattice).unwrap();
        assert!(res < 1e-13, "constant density residual {res}");
    }

    #[test]
    fn score_matches_log_density_gradient() {
        let spec = catalog::cir_builder(1.0, 1.0, 0.5)
            .short_rate_const(1.0)
            .cashflow_const(1.0)
            .build();
        let p = density_1d(&spec, 1.0).unwrap();
        // 100 deterministic probe points in the bulk.
        let mut max_rel = 0.0f64;
        for k in 0..100 {
            let z = 0.3 + 2.2 * k as f64 / 99.0;
            let h = 1e-5 * (1.0 + z.abs());
            let fd = (p.log_p(&[z + h]) - p.log_p(&[z - h])) / (2.0 * h);
            let mut s = [0.0];
            p.score(&[z], &mut s);
            max_rel = max_rel.max((fd - s[0]).abs() / (1.0 + s[0].abs()));
        }
        assert!(max_rel < 1e-4, "score/gradient mismatch {max_rel}");
    }

    #[test]
    fn normalization_integrates_to_one() {
        for p in [
            density_1d(&ou_spec(2.0), 0.0).unwrap(),
            density_1d(
                &catalog::cir_builder(1.0, 1.0, 0.5)
                    .short_rate_const(1.0)
                    .cashflow_const(1.0)
                    .build(),
                1.0,
            )
            .unwrap(),
        ] {
            let (lo, hi) = p.support();
            // Independent check: plain Simpson mass of the normalized density.
            let n = 20_001;
            let h = (hi[0] - lo[0]) / (n - 1) as f64;
            let mut acc = 0.0;
            for i in 0..n {
                let z = lo[0] + h * i as f64;
                let w = if i == 0 || i == n - 1 {
                    0.5
                } else {
                    1.0
                };
                acc += w * p.density(&[z]);
            }
            let mass = acc * h;
            assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
        }
    }

    #[test]
    fn user_supplied_screening() {
        let spec = ou_spec(2.0);
        // Correct density passes.
        let ok = InvariantDensity::user_supplied_1d(
            &spec,
            |z| -2.0 * z * z,
            |z| -4.0 * z,
        );
        assert!(ok.is_ok(), "{ok:?}");
        // Wrong variance is rejected.
        let bad = InvariantDensity::user_supplied_1d(&spec, |z| -z * z, |z| -2.0 * z);
        match bad {
            Err(Error::Validity(_)) => {}
            other => panic!("expected Validity error, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_gaussian_rejected() {
        match InvariantDensity::gaussian(&[0.0], &[0.0], Provenance::UserSupplied) {
            Err(Error::NotPositiveDefinite { .. }) => {}
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }
}
