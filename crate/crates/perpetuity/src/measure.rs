//! Distribution estimators: the time-average occupation measure of one
//! reversed path and the iid measure of naive forward Monte Carlo.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::density::InvariantDensity;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::path::{
    reverse_from_forward, simulate_forward, simulate_reversed, PathConfig, ReversedPath,
    StartState,
};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub enum MeasureKind {
    /// Occupation measure `(1/T) ∫ δ_{(ζ_t, χ_t)} dt` over one trajectory.
    TimeAverage { total_time: f64 },
    /// Equal-weight iid samples of `(Z₀, X₀)`.
    Iid { count: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Marginal {
    Factor(usize),
    Perpetuity,
}

/// Uniform-weight empirical measure on `E × (0, ∞)`: factor states plus the
/// perpetuity value per sample. Marginal views are sorted lazily and cached.
pub struct EmpiricalJointMeasure {
    dim: usize,
    states: Vec<f64>, // n × d row-major
    values: Vec<f64>, // n
    kind: MeasureKind,
    sorted: Vec<OnceLock<Vec<f64>>>, // d factor marginals + the perpetuity
}

/// Sample cap for occupation measures; beyond it the grid is thinned by a
/// uniform stride, which preserves the time-average law.
const MAX_SAMPLES: usize = 10_000_000;

impl EmpiricalJointMeasure {
    fn new(dim: usize, states: Vec<f64>, values: Vec<f64>, kind: MeasureKind) -> Self {
        let sorted = (0..=dim).map(|_| OnceLock::new()).collect();
        EmpiricalJointMeasure {
            dim,
            states,
            values,
            kind,
            sorted,
        }
    }

    /// Occupation measure of a reversed path for starting value `x`,
    /// sampling the grid times in `(0, T]`.
    pub fn from_reversed_path(path: &ReversedPath, x: f64) -> Self {
        let n = path.n_steps();
        let stride = n.div_ceil(MAX_SAMPLES);
        let mut states = Vec::with_capacity(n / stride * path.dim);
        let mut values = Vec::with_capacity(n / stride);
        let mut i = stride.max(1);
        while i <= n {
            states.extend_from_slice(path.zeta_at(i));
            values.push(path.chi(x, i));
            i += stride.max(1);
        }
        EmpiricalJointMeasure::new(
            path.dim,
            states,
            values,
            MeasureKind::TimeAverage {
                total_time: path.step * n as f64,
            },
        )
    }

    pub fn from_iid(dim: usize, states: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if states.len() != values.len() * dim || values.is_empty() {
            return Err(Error::InvalidInput("inconsistent iid sample arrays".into()));
        }
        let count = values.len();
        Ok(EmpiricalJointMeasure::new(
            dim,
            states,
            values,
            MeasureKind::Iid { count },
        ))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    /// Per-sample weight; the weights always sum to one.
    pub fn weight(&self) -> f64 {
        1.0 / self.values.len() as f64
    }

    pub fn factor_sample(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn perpetuity_samples(&self) -> &[f64] {
        &self.values
    }

    /// Sorted marginal samples (cached after the first request).
    pub fn sorted_marginal(&self, which: Marginal) -> Result<&[f64]> {
        let idx = match which {
            Marginal::Factor(i) => {
                if i >= self.dim {
                    return Err(Error::InvalidInput(format!(
                        "factor index {i} out of range for d = {}",
                        self.dim
                    )));
                }
                i
            }
            Marginal::Perpetuity => self.dim,
        };
        Ok(self.sorted[idx].get_or_init(|| {
            let mut v: Vec<f64> = match which {
                Marginal::Factor(i) => (0..self.len()).map(|s| self.states[s * self.dim + i]).collect(),
                Marginal::Perpetuity => self.values.clone(),
            };
            crate::numeric::sort_unstable_f64(&mut v);
            v
        }))
    }

    /// Empirical CDF `F̂(point) = (weight of samples ≤ point)` at sorted
    /// query points.
    pub fn ecdf_eval(&self, which: Marginal, points: &[f64]) -> Result<Vec<f64>> {
        if points.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidInput("ecdf_eval expects sorted query points".into()));
        }
        let sorted = self.sorted_marginal(which)?;
        let n = sorted.len() as f64;
        let mut out = Vec::with_capacity(points.len());
        let mut idx = 0usize;
        for &p in points {
            while idx < sorted.len() && sorted[idx] <= p {
                idx += 1;
            }
            out.push(idx as f64 / n);
        }
        Ok(out)
    }

    /// Merges two iid measures; the result weights each underlying sample
    /// equally (counts add).
    pub fn merge(&self, other: &EmpiricalJointMeasure) -> Result<EmpiricalJointMeasure> {
        let (MeasureKind::Iid { .. }, MeasureKind::Iid { .. }) = (self.kind, other.kind) else {
            return Err(Error::InvalidInput("merge is defined for iid measures".into()));
        };
        if self.dim != other.dim {
            return Err(Error::InvalidInput("dimension mismatch in merge".into()));
        }
        let mut states = self.states.clone();
        states.extend_from_slice(&other.states);
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        EmpiricalJointMeasure::from_iid(self.dim, states, values)
    }

    /// Sample variances and covariance of (first factor coordinate,
    /// perpetuity).
    pub fn second_moments(&self) -> (f64, f64, f64) {
        let n = self.len() as f64;
        let mean_z = (0..self.len()).map(|i| self.states[i * self.dim]).sum::<f64>() / n;
        let mean_x = self.values.iter().sum::<f64>() / n;
        let mut var_z = 0.0;
        let mut var_x = 0.0;
        let mut cov = 0.0;
        for i in 0..self.len() {
            let dz = self.states[i * self.dim] - mean_z;
            let dx = self.values[i] - mean_x;
            var_z += dz * dz;
            var_x += dx * dx;
            cov += dz * dx;
        }
        (var_z / n, var_x / n, cov / n)
    }

    /// 2-D histogram view over (factor coordinate, perpetuity).
    pub fn hist2d(&self, factor_axis: usize, bins: usize) -> Result<Hist2D> {
        if factor_axis >= self.dim {
            return Err(Error::InvalidInput("factor axis out of range".into()));
        }
        if bins < 2 {
            return Err(Error::InvalidInput("need at least 2 bins".into()));
        }
        let zs: Vec<f64> = (0..self.len()).map(|i| self.states[i * self.dim + factor_axis]).collect();
        let (z_lo, z_hi) = min_max(&zs);
        let (x_lo, x_hi) = min_max(&self.values);
        let mut mass = vec![0.0f64; bins * bins];
        let w = self.weight();
        for i in 0..self.len() {
            let bz = bin_of(zs[i], z_lo, z_hi, bins);
            let bx = bin_of(self.values[i], x_lo, x_hi, bins);
            mass[bz * bins + bx] += w;
        }
        Ok(Hist2D {
            z_lo,
            z_hi,
            x_lo,
            x_hi,
            bins,
            mass,
        })
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if lo == hi {
        hi = lo + 1.0;
    }
    (lo, hi)
}

fn bin_of(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = ((x - lo) / (hi - lo) * bins as f64).floor();
    (t.max(0.0) as usize).min(bins - 1)
}

#[derive(Clone, Debug)]
pub struct Hist2D {
    pub z_lo: f64,
    pub z_hi: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub bins: usize,
    /// Row-major [z_bin][x_bin] mass; sums to 1.
    pub mass: Vec<f64>,
}

impl Hist2D {
    pub fn bin_edges_z(&self) -> Vec<f64> {
        (0..self.bins)
            .map(|i| self.z_lo + (self.z_hi - self.z_lo) * i as f64 / self.bins as f64)
            .collect()
    }
    pub fn bin_edges_x(&self) -> Vec<f64> {
        (0..self.bins)
            .map(|i| self.x_lo + (self.x_hi - self.x_lo) * i as f64 / self.bins as f64)
            .collect()
    }
}

/// How to obtain the reversed path behind an occupation-measure estimate.
pub enum ReversalSource<'a> {
    /// Start `ζ₀` from the invariant density.
    InvariantStart(&'a InvariantDensity),
    /// Reverse a forward run of length `2T` started at the given state.
    ForwardReversal { z0: &'a [f64] },
}

/// One-path reversal estimate of the joint law: the time-average measure of
/// `(ζ_t, χˣ_t)` over `t ∈ (0, T]`.
pub fn estimate_reversal(
    spec: &ModelSpec,
    source: ReversalSource<'_>,
    config: &PathConfig,
    x: f64,
) -> Result<EmpiricalJointMeasure> {
    if !(x > 0.0) {
        return Err(Error::InvalidInput("the starting value x must be positive".into()));
    }
    let path = match source {
        ReversalSource::InvariantStart(density) => {
            simulate_reversed(spec, density, config, &[x])?
        }
        ReversalSource::ForwardReversal { z0 } => {
            reverse_from_forward(spec, config, z0, &[x])?.0
        }
    };
    Ok(EmpiricalJointMeasure::from_reversed_path(&path, x))
}

/// Naive iid estimate: `n_paths` independent forward simulations of
/// `(Z₀, X₀ᵀ)` with `Z₀ ∼ p`, truncation horizon `config.horizon`. Paths are
/// distributed across threads with disjoint RNG streams
/// (`config.stream_id + path index`), so the result does not depend on the
/// thread count.
pub fn estimate_naive(
    spec: &ModelSpec,
    density: &InvariantDensity,
    config: &PathConfig,
    n_paths: usize,
) -> Result<EmpiricalJointMeasure> {
    if n_paths == 0 {
        return Err(Error::InvalidInput("need at least one path".into()));
    }
    let d = spec.dim();
    let results: Result<Vec<(Vec<f64>, f64)>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let cfg = config.clone().with_stream(config.stream_id + i as u64);
            let path = simulate_forward(spec, &cfg, StartState::FromInvariant(density))?;
            Ok((path.state(0).to_vec(), path.x0_truncated))
        })
        .collect();
    let results = results?;
    let mut states = Vec::with_capacity(n_paths * d);
    let mut values = Vec::with_capacity(n_paths);
    for (z0, x0) in results {
        states.extend_from_slice(&z0);
        values.push(x0);
    }
    EmpiricalJointMeasure::from_iid(d, states, values)
}

/// Default truncation horizon for the naive estimator: `max(100, 20/κ)`
/// keeps the discount tail factor below e⁻²⁰.
pub fn naive_truncation_horizon(kappa: Option<f64>) -> f64 {
    match kappa {
        Some(k) if k > 0.0 => (20.0 / k).max(100.0),
        _ => 100.0,
    }
}
