//! Simulation toolkit for the joint law of an ergodic diffusion factor `Z₀`
//! and the continuous-time perpetuity
//!
//! ```text
//! X₀ = ∫₀^∞ D_t f(Z_t) dt,    D = exp(-R),
//! ```
//!
//! where `Z` solves `dZ = m(Z) dt + σ(Z) dW` on a domain `E` and the
//! log-discount `R` accumulates a short rate `a` together with stochastic
//! terms driven by `θ` and `η`.
//!
//! The joint law of `(Z₀, X₀)` equals the stationary law of the time-reversed
//! pair `(ζ, χ)`, so a *single* long path of `(ζ, χ)` estimates the whole
//! distribution. Two ways to start the reversal are provided:
//!
//! * **Method A** — draw `ζ₀` from the invariant density `p` of `Z` and run
//!   the reversed dynamics `dζ = (c ∇p/p + div c − m)(ζ) dt + σ(ζ) dW`.
//! * **Method B** — run `Z` forward on `[0, 2T]` from any point and set
//!   `ζ_t = Z_{2T−t}`; no knowledge of `p` is required.
//!
//! In both cases the discount ratio `Δ` and the reversed perpetuity `χˣ` are
//! built in closed form from `ζ` (a stochastic exponential plus one ordinary
//! integral), so `χˣ − χʸ = Δ·(x − y)` holds exactly on the grid.
//!
//! Supporting modules supply the invariant density (1-D closed form,
//! reversing-potential form, and the matrix Riccati equation for
//! Ornstein-Uhlenbeck factors), finiteness checks for `X₀`, a
//! finite-difference solver for the PDE satisfied by the conditional CDF
//! `g(z, x) = P[X₀ ≤ x | Z₀ = z]`, Kolmogorov-Smirnov analytics against
//! closed-form reference laws, and a benchmark harness comparing the reversal
//! estimator against naive forward Monte Carlo.

pub mod analytics;
pub mod bench;
pub mod density;
pub mod error;
pub mod linalg;
pub mod measure;
pub mod model;
pub mod numeric;
pub mod path;
pub mod pde;
pub mod wellposed;

pub use error::{Error, Result};
