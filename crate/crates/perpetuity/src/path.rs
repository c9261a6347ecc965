//! Path simulation: the forward system `(Z, R)` and the time-reversed
//! system `(ζ, Δ, χˣ)`.
//!
//! The reversed factor follows
//!
//! ```text
//! dζ = (c ∇p/p + div c − m)(ζ) dt + σ(ζ) dW,
//! ```
//!
//! and the discount ratio / reversed perpetuity are built in closed form,
//!
//! ```text
//! log Δ = ∫ (θ'(m − div c) + ∇·(cθ) − a)(ζ) dt + M − ½⟨M⟩,
//!   M   = ∫ η(ζ)' dB + ∫ θ(ζ)' dζ,
//! χˣ  = Δ · (x + ∫ f(ζ)/Δ dt),
//! ```
//!
//! carried in log space throughout: at horizons in the thousands `Δ` itself
//! underflows while `log Δ` stays perfectly representable. The trapezoidal
//! `∫ f/Δ` is folded into the one-step ratio recurrence
//! `ψ_{n+1} = r_n ψ_n + δ/2 (r_n f_n + f_{n+1})` with `r_n = exp(Δ log Δ)`,
//! so `χˣ_n = Δ_n x + ψ_n` shares `Δ` and `ψ` across all starting values —
//! the linearity `χˣ − χʸ = Δ (x − y)` is exact algebra, not a numerical
//! coincidence.
//!
//! Both reversal variants produce the same `ReversedPath` type: starting
//! `ζ₀` from the invariant density, or reversing the second half of a
//! forward run of length `2T` (no density required).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::density::InvariantDensity;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::numeric::{autocorrelation, Kahan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum Scheme {
    EulerMaruyama,
}

/// Discretization and randomness configuration for one path.
#[derive(Clone, Debug)]
pub struct PathConfig {
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
    /// Replicate index; distinct streams are statistically independent and
    /// individually reproducible.
    pub stream_id: u64,
    pub scheme: Scheme,
    /// Reflect at an ε-inset when a step leaves a bounded coordinate
    /// (otherwise leaving the domain is an error).
    pub reflect_at_boundary: bool,
    pub boundary_inset: f64,
}

impl PathConfig {
    pub fn new(horizon: f64, step: f64, seed: u64) -> Result<Self> {
        if !(horizon > 0.0) || !(step > 0.0) || step > horizon {
            return Err(Error::InvalidInput(format!(
                "need 0 < step ≤ horizon, got step = {step}, horizon = {horizon}"
            )));
        }
        let n = horizon / step;
        if n > 1e12 {
            return Err(Error::InvalidInput(format!(
                "horizon/step = {n:.3e} exceeds the supported step count"
            )));
        }
        Ok(PathConfig {
            horizon,
            step,
            seed,
            stream_id: 0,
            scheme: Scheme::EulerMaruyama,
            reflect_at_boundary: true,
            boundary_inset: 1e-8,
        })
    }

    pub fn with_stream(mut self, stream_id: u64) -> Self {
        self.stream_id = stream_id;
        self
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }
}

// RNG lanes: one ChaCha stream per purpose so the forward noise, the
// discount noise and the initial draw never alias across methods.
const LANE_INIT: u64 = 0;
const LANE_W: u64 = 1;
const LANE_B: u64 = 2;
const LANE_B_REVERSAL: u64 = 3;

fn lane_rng(config: &PathConfig, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(config.stream_id.wrapping_mul(8).wrapping_add(lane));
    rng
}

/// Draws an initial state from the invariant density: Gaussian laws by an
/// affine transform of standard normals, one-dimensional numeric laws
/// through the cached inverse-CDF table.
pub fn sample_initial(density: &InvariantDensity, rng: &mut impl Rng) -> Result<Vec<f64>> {
    use crate::density::Sampler;
    match &density.sampler {
        Sampler::Gaussian { mean, chol_lower } => {
            let d = mean.len();
            let xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let mut z = mean.clone();
            for i in 0..d {
                for j in 0..=i {
                    z[i] += chol_lower[i * d + j] * xi[j];
                }
            }
            Ok(z)
        }
        Sampler::Quantile1D(table) => {
            let u: f64 = rng.random();
            Ok(vec![table.sample(u)])
        }
        Sampler::Unavailable(what) => Err(Error::UnsupportedSampler(format!(
            "{what}; start the reversal from a forward run instead"
        ))),
    }
}

/// One forward trajectory of `(Z, R)` with the truncated perpetuity
/// `∫₀^T e^{-R} f(Z) dt` accumulated by the trapezoid rule.
#[derive(Clone, Debug)]
pub struct ForwardPath {
    pub dim: usize,
    pub step: f64,
    /// `(n+1) × d` row-major states.
    pub states: Vec<f64>,
    /// Log-discount `R`, with `R₀ = 0` so `D = exp(-R) ∈ (0, ∞)`.
    pub log_discount: Vec<f64>,
    pub x0_truncated: f64,
    pub reflections: u64,
}

impl ForwardPath {
    pub fn n_steps(&self) -> usize {
        self.log_discount.len() - 1
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn discount(&self, i: usize) -> f64 {
        (-self.log_discount[i]).exp()
    }
}

/// Initial state for a forward run.
pub enum StartState<'a> {
    Fixed(&'a [f64]),
    FromInvariant(&'a InvariantDensity),
}

/// Euler-Maruyama simulation of the forward system. Identical
/// `(seed, stream_id, config, model)` inputs produce bit-identical paths.
pub fn simulate_forward(
    spec: &ModelSpec,
    config: &PathConfig,
    start: StartState<'_>,
) -> Result<ForwardPath> {
    let d = spec.dim();
    let k = spec.noise_dim();
    let n = config.n_steps();
    let dt = config.step;
    let sqrt_dt = dt.sqrt();

    let mut z = match start {
        StartState::Fixed(z0) => {
            if !spec.domain().contains(z0) {
                return Err(Error::InvalidInput(format!(
                    "starting state {z0:?} lies outside the domain"
                )));
            }
            z0.to_vec()
        }
        StartState::FromInvariant(density) => {
            let mut rng = lane_rng(config, LANE_INIT);
            let z0 = sample_initial(density, &mut rng)?;
            if !spec.domain().contains(&z0) {
                return Err(Error::InvalidInput(
                    "sampled initial state lies outside the domain".into(),
                ));
            }
            z0
        }
    };

    let mut rng_w = lane_rng(config, LANE_W);
    let mut rng_b = lane_rng(config, LANE_B);

    let mut states = Vec::with_capacity((n + 1) * d);
    let mut log_discount: Vec<f64> = Vec::with_capacity(n + 1);
    states.extend_from_slice(&z);
    log_discount.push(0.0);

    let mut m = vec![0.0; d];
    let mut sig = vec![0.0; d * d];
    let mut th = vec![0.0; d];
    let mut et = vec![0.0; k];
    let mut dw = vec![0.0; d];
    let mut sig_theta = vec![0.0; d];
    let mut z_next = vec![0.0; d];

    let mut r = Kahan::default();
    let mut x0 = Kahan::default();
    let mut f_prev = spec.cashflow(&z);
    let mut reflections = 0u64;

    for step_idx in 0..n {
        spec.drift(&z, &mut m);
        spec.sigma(&z, &mut sig)?;
        spec.theta(&z, &mut th);
        spec.eta(&z, &mut et);
        let a = spec.short_rate(&z);

        for w in dw.iter_mut() {
            let xi: f64 = rng_w.sample(StandardNormal);
            *w = xi * sqrt_dt;
        }
        // s = σθ (σ symmetric), so θ'σ dW = s·dW and θ'cθ = |s|².
        for i in 0..d {
            sig_theta[i] = (0..d).map(|j| sig[j * d + i] * th[j]).sum();
        }
        let theta_c_theta: f64 = sig_theta.iter().map(|v| v * v).sum();
        let eta_sq: f64 = et.iter().map(|v| v * v).sum();

        let mut stoch = 0.0;
        for i in 0..d {
            stoch += sig_theta[i] * dw[i];
        }
        for l in 0..k {
            let xi: f64 = rng_b.sample(StandardNormal);
            stoch += et[l] * xi * sqrt_dt;
        }
        r.add((a + 0.5 * (theta_c_theta + eta_sq)) * dt + stoch);

        for i in 0..d {
            let mut v = z[i] + m[i] * dt;
            for j in 0..d {
                v += sig[i * d + j] * dw[j];
            }
            z_next[i] = v;
        }
        apply_boundary(spec, config, &mut z_next, &mut reflections, (step_idx + 1) as f64 * dt)?;

        let r_next = r.value();
        let f_next = spec.cashflow(&z_next);
        let d_prev = (-log_discount[step_idx]).exp();
        let d_next = (-r_next).exp();
        x0.add(0.5 * dt * (d_prev * f_prev + d_next * f_next));

        states.extend_from_slice(&z_next);
        log_discount.push(r_next);
        z.copy_from_slice(&z_next);
        f_prev = f_next;
    }

    Ok(ForwardPath {
        dim: d,
        step: dt,
        states,
        log_discount,
        x0_truncated: x0.value(),
        reflections,
    })
}

fn apply_boundary(
    spec: &ModelSpec,
    config: &PathConfig,
    z: &mut [f64],
    reflections: &mut u64,
    time: f64,
) -> Result<()> {
    let lower = spec.domain().lower();
    let upper = spec.domain().upper();
    for i in 0..z.len() {
        let lo = lower[i];
        let hi = upper[i];
        let mut iterations = 0;
        loop {
            let below = lo.is_finite() && z[i] < lo + config.boundary_inset;
            let above = hi.is_finite() && z[i] > hi - config.boundary_inset;
            if !below && !above {
                break;
            }
            if !config.reflect_at_boundary {
                return Err(Error::DomainExit {
                    time,
                    point: z.to_vec(),
                });
            }
            if below {
                z[i] = 2.0 * (lo + config.boundary_inset) - z[i];
            } else {
                z[i] = 2.0 * (hi - config.boundary_inset) - z[i];
            }
            *reflections += 1;
            iterations += 1;
            if iterations > 64 {
                return Err(Error::DomainExit {
                    time,
                    point: z.to_vec(),
                });
            }
        }
    }
    Ok(())
}

/// How a reversed path obtained its `ζ₀`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub enum ReversalOrigin {
    /// `ζ₀` drawn from the invariant density.
    InvariantStart,
    /// `ζ` is the index reversal of the second half of a forward run; the
    /// first half (length `burn_in`) only decorrelates the start.
    ForwardReversal { burn_in: f64 },
}

/// One reversed trajectory `(ζ, Δ, χˣ)`.
///
/// `Δ` is stored as `log Δ` (it underflows f64 on long horizons) and `χˣ`
/// in the shared decomposition `χˣ_i = Δ_i·x + ψ_i`.
#[derive(Clone, Debug)]
pub struct ReversedPath {
    pub dim: usize,
    pub step: f64,
    /// `(n+1) × d` row-major reversed factor states.
    pub zeta: Vec<f64>,
    /// `log Δ`, with `Δ₀ = 1`.
    pub log_delta: Vec<f64>,
    /// `ψ_i = Δ_i ∫₀^{t_i} f(ζ)/Δ` (trapezoid), shared across starts.
    pub psi: Vec<f64>,
    pub x_values: Vec<f64>,
    /// Brownian increments driving ζ (empty for forward-reversal paths).
    pub increments_w: Vec<f64>,
    /// Brownian increments driving the discount.
    pub increments_b: Vec<f64>,
    pub reflections: u64,
    pub origin: ReversalOrigin,
    /// Lag-autocorrelation diagnostic of the first ζ coordinate:
    /// (lag in time units, correlation).
    pub mixing_autocorr: Vec<(f64, f64)>,
}

impl ReversedPath {
    pub fn n_steps(&self) -> usize {
        self.log_delta.len() - 1
    }

    pub fn zeta_at(&self, i: usize) -> &[f64] {
        &self.zeta[i * self.dim..(i + 1) * self.dim]
    }

    pub fn delta(&self, i: usize) -> f64 {
        self.log_delta[i].exp()
    }

    /// `χˣ` at grid index `i` for starting value `x`.
    pub fn chi(&self, x: f64, i: usize) -> f64 {
        self.delta(i) * x + self.psi[i]
    }

    pub fn chi_series(&self, x: f64) -> Vec<f64> {
        (0..self.log_delta.len()).map(|i| self.chi(x, i)).collect()
    }

    pub fn delta_series(&self) -> Vec<f64> {
        self.log_delta.iter().map(|l| l.exp()).collect()
    }
}

/// Reversed drift `μ = c ∇p/p + div c − m` at a state.
pub fn reversed_drift(
    spec: &ModelSpec,
    density: &InvariantDensity,
    z: &[f64],
    out: &mut [f64],
) {
    let d = spec.dim();
    let mut score = vec![0.0; d];
    let mut c = vec![0.0; d * d];
    let mut dc = vec![0.0; d];
    let mut m = vec![0.0; d];
    density.score(z, &mut score);
    spec.diffusion_matrix(z, &mut c);
    spec.div_diffusion(z, &mut dc);
    spec.drift(z, &mut m);
    for i in 0..d {
        let mut v = dc[i] - m[i];
        for j in 0..d {
            v += c[i * d + j] * score[j];
        }
        out[i] = v;
    }
}

/// Reversal started from the invariant density: `ζ₀ ∼ p`, reversed-drift
/// Euler-Maruyama for ζ, closed-form discount and perpetuity.
pub fn simulate_reversed(
    spec: &ModelSpec,
    density: &InvariantDensity,
    config: &PathConfig,
    x_values: &[f64],
) -> Result<ReversedPath> {
    if density.dim() != spec.dim() {
        return Err(Error::InvalidInput("density/model dimension mismatch".into()));
    }
    let d = spec.dim();
    let n = config.n_steps();
    let dt = config.step;
    let sqrt_dt = dt.sqrt();

    let mut rng_init = lane_rng(config, LANE_INIT);
    let mut z = sample_initial(density, &mut rng_init)?;
    if !spec.domain().contains(&z) {
        return Err(Error::InvalidInput(
            "sampled initial state lies outside the domain".into(),
        ));
    }
    let mut rng_w = lane_rng(config, LANE_W);

    let mut zeta = Vec::with_capacity((n + 1) * d);
    let mut increments_w = Vec::with_capacity(n * d);
    zeta.extend_from_slice(&z);

    let mut score = vec![0.0; d];
    let mut c = vec![0.0; d * d];
    let mut dc = vec![0.0; d];
    let mut m = vec![0.0; d];
    let mut sig = vec![0.0; d * d];
    let mut dw = vec![0.0; d];
    let mut z_next = vec![0.0; d];
    let mut reflections = 0u64;

    for step_idx in 0..n {
        density.score(&z, &mut score);
        spec.diffusion_matrix(&z, &mut c);
        spec.div_diffusion(&z, &mut dc);
        spec.drift(&z, &mut m);
        spec.sigma(&z, &mut sig)?;
        for w in dw.iter_mut() {
            let xi: f64 = rng_w.sample(StandardNormal);
            *w = xi * sqrt_dt;
        }
        for i in 0..d {
            let mut mu = dc[i] - m[i];
            for j in 0..d {
                mu += c[i * d + j] * score[j];
            }
            let mut v = z[i] + mu * dt;
            for j in 0..d {
                v += sig[i * d + j] * dw[j];
            }
            z_next[i] = v;
        }
        apply_boundary(spec, config, &mut z_next, &mut reflections, (step_idx + 1) as f64 * dt)?;
        increments_w.extend_from_slice(&dw);
        zeta.extend_from_slice(&z_next);
        z.copy_from_slice(&z_next);
    }

    let mut rng_b = lane_rng(config, LANE_B);
    let (log_delta, psi, increments_b) = build_discount(spec, &zeta, d, n, dt, &mut rng_b);
    let mixing_autocorr = mixing_diagnostic(&zeta, d, n, dt);

    Ok(ReversedPath {
        dim: d,
        step: dt,
        zeta,
        log_delta,
        psi,
        x_values: x_values.to_vec(),
        increments_w,
        increments_b,
        reflections,
        origin: ReversalOrigin::InvariantStart,
        mixing_autocorr,
    })
}

/// Reversal without the invariant density: runs `Z` forward on `[0, 2T]`
/// from `z0`, sets `ζ_t = Z_{2T−t}` for `t ∈ [0, T]` (plain index reversal)
/// and builds the discount and perpetuity with the same closed forms, driven
/// by a fresh independent Brownian stream. The forward path is returned too.
pub fn reverse_from_forward(
    spec: &ModelSpec,
    config: &PathConfig,
    z0: &[f64],
    x_values: &[f64],
) -> Result<(ReversedPath, ForwardPath)> {
    let d = spec.dim();
    let n = config.n_steps();
    let mut fwd_config = config.clone();
    fwd_config.horizon = 2.0 * config.horizon;
    let forward = simulate_forward(spec, &fwd_config, StartState::Fixed(z0))?;
    let n2 = forward.n_steps();

    let mut zeta = Vec::with_capacity((n + 1) * d);
    for i in 0..=n {
        zeta.extend_from_slice(forward.state(n2 - i));
    }

    let mut rng_b = lane_rng(config, LANE_B_REVERSAL);
    let (log_delta, psi, increments_b) = build_discount(spec, &zeta, d, n, config.step, &mut rng_b);
    let mixing_autocorr = mixing_diagnostic(&zeta, d, n, config.step);

    Ok((
        ReversedPath {
            dim: d,
            step: config.step,
            zeta,
            log_delta,
            psi,
            x_values: x_values.to_vec(),
            increments_w: Vec::new(),
            increments_b,
            reflections: forward.reflections,
            origin: ReversalOrigin::ForwardReversal {
                burn_in: config.horizon,
            },
            mixing_autocorr,
        },
        forward,
    ))
}

/// Closed-form discount and perpetuity driven by a realized ζ path:
///
/// ```text
/// λ_n = (θ'(m − div c) + ∇·(cθ) − a)(ζ_n) δ + η(ζ_n)'ΔB_n + θ(ζ_n)'Δζ_n
///       − ½ (θ'cθ + η'η)(ζ_n) δ
/// ```
///
/// accumulated with compensated summation, plus the ψ recurrence for the
/// trapezoidal `Δ ∫ f/Δ`.
fn build_discount(
    spec: &ModelSpec,
    zeta: &[f64],
    d: usize,
    n: usize,
    dt: f64,
    rng_b: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let k = spec.noise_dim();
    let sqrt_dt = dt.sqrt();

    let mut log_delta = Vec::with_capacity(n + 1);
    let mut psi = Vec::with_capacity(n + 1);
    let mut increments_b = Vec::with_capacity(n * k);
    log_delta.push(0.0);
    psi.push(0.0);

    let mut m = vec![0.0; d];
    let mut dc = vec![0.0; d];
    let mut th = vec![0.0; d];
    let mut et = vec![0.0; k];
    let mut c = vec![0.0; d * d];

    let mut lam_acc = Kahan::default();
    let mut psi_cur = 0.0f64;
    let mut f_prev = spec.cashflow(&zeta[0..d]);

    for step_idx in 0..n {
        let z = &zeta[step_idx * d..(step_idx + 1) * d];
        let z_next = &zeta[(step_idx + 1) * d..(step_idx + 2) * d];
        spec.drift(z, &mut m);
        spec.div_diffusion(z, &mut dc);
        spec.theta(z, &mut th);
        spec.eta(z, &mut et);
        spec.diffusion_matrix(z, &mut c);
        let a = spec.short_rate(z);
        let div_c_theta = spec.div_c_theta(z);

        let mut theta_c_theta = 0.0;
        for i in 0..d {
            for j in 0..d {
                theta_c_theta += th[i] * c[i * d + j] * th[j];
            }
        }
        let eta_sq: f64 = et.iter().map(|v| v * v).sum();

        let mut lambda = (0..d).map(|i| th[i] * (m[i] - dc[i])).sum::<f64>();
        lambda += div_c_theta - a;
        lambda -= 0.5 * (theta_c_theta + eta_sq);
        lambda *= dt;
        for l in 0..k {
            let xi: f64 = rng_b.sample(StandardNormal);
            let db = xi * sqrt_dt;
            increments_b.push(db);
            lambda += et[l] * db;
        }
        for i in 0..d {
            lambda += th[i] * (z_next[i] - z[i]);
        }

        lam_acc.add(lambda);
        log_delta.push(lam_acc.value());

        let r = lambda.exp();
        let f_next = spec.cashflow(z_next);
        psi_cur = r * psi_cur + 0.5 * dt * (r * f_prev + f_next);
        psi.push(psi_cur);
        f_prev = f_next;
    }
    (log_delta, psi, increments_b)
}

/// Lag autocorrelation of the first ζ coordinate at a short menu of lags.
fn mixing_diagnostic(zeta: &[f64], d: usize, n: usize, dt: f64) -> Vec<(f64, f64)> {
    let series: Vec<f64> = (0..=n).map(|i| zeta[i * d]).collect();
    let mut out = Vec::new();
    for lag_time in [dt, 1.0, 10.0] {
        let lag = (lag_time / dt).round() as usize;
        if lag >= 1 && lag <= n / 4 {
            out.push((lag as f64 * dt, autocorrelation(&series, lag)));
        }
    }
    out
}
