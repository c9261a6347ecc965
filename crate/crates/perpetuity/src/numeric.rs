//! Shared numerical machinery: adaptive quadrature, improper integrals with
//! divergence detection, cached antiderivatives, quantile tables, finite
//! differences and small statistics helpers.

use crate::error::{Error, Result};

/// Kahan-compensated accumulator. Long-horizon log-discount sums add ~1e5
/// increments; plain summation would lose the low bits that the closed-form
/// discount identities rely on.
#[derive(Clone, Copy, Debug, Default)]
pub struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    pub fn new(start: f64) -> Self {
        Kahan {
            sum: start,
            carry: 0.0,
        }
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum
    }
}

// 5-point Gauss-Legendre on [-1, 1].
const GL5_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL5_W: [f64; 5] = [
    0.236_926_885_056_189_08,
    0.478_628_670_499_366_47,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_47,
    0.236_926_885_056_189_08,
];

fn gl5(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut s = 0.0;
    for i in 0..5 {
        s += GL5_W[i] * f(mid + half * GL5_X[i]);
    }
    s * half
}

/// Adaptive quadrature over a finite interval (Gauss-Legendre panels with
/// bisection refinement). `tol` is treated as an absolute tolerance combined
/// with a relative one of the same magnitude.
pub fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let left = gl5(f, a, m);
        let right = gl5(f, m, b);
        let refined = left + right;
        if depth >= 48 || (refined - whole).abs() <= tol.max(1e-15 * refined.abs()) {
            return refined;
        }
        rec(f, a, m, left, 0.5 * tol, depth + 1) + rec(f, m, b, right, 0.5 * tol, depth + 1)
    }
    if a == b {
        return 0.0;
    }
    rec(f, a, b, gl5(f, a, b), tol, 0)
}

/// Outcome of an improper integral evaluated on geometrically growing (or
/// boundary-approaching) truncations.
#[derive(Clone, Debug)]
pub enum TailIntegral {
    Converged(f64),
    Diverged { last_partial: f64 },
    Inconclusive { detail: String },
}

impl TailIntegral {
    pub fn is_diverged(&self) -> bool {
        matches!(self, TailIntegral::Diverged { .. })
    }
    pub fn is_converged(&self) -> bool {
        matches!(self, TailIntegral::Converged(_))
    }
}

/// Integrates `f` from `anchor` toward `boundary` (finite or ±infinite).
///
/// Partial integrals are accumulated on truncations that grow geometrically
/// (for infinite boundaries) or approach the boundary geometrically (finite
/// ones). Divergence is declared when successive partials grow by a factor
/// > 1.5 three times in a row or overflow; convergence when two successive
/// increments are negligible. Anything else is reported as inconclusive
/// rather than silently classified.
pub fn integrate_to_boundary(f: &impl Fn(f64) -> f64, anchor: f64, boundary: f64) -> TailIntegral {
    let infinite = boundary.is_infinite();
    if !infinite && (boundary - anchor).abs() < 1e-300 {
        return TailIntegral::Converged(0.0);
    }
    let dir = if infinite {
        boundary.signum()
    } else {
        (boundary - anchor).signum()
    };

    let mut total = 0.0f64;
    let mut prev_total: Option<f64> = None;
    let mut growth_count = 0u32;
    let mut conv_count = 0u32;
    let mut cur = anchor;
    let max_steps = if infinite { 52 } else { 60 };

    for j in 0..max_steps {
        let next = if infinite {
            anchor + dir * f64::exp2(j as f64)
        } else {
            boundary - (boundary - anchor) * f64::exp2(-((j + 1) as f64))
        };
        let seg = integrate(f, cur, next, 1e-12);
        total += seg;
        cur = next;

        if !total.is_finite() || total.abs() > 1e250 {
            return TailIntegral::Diverged { last_partial: total };
        }
        if let Some(prev) = prev_total {
            let increment = (total - prev).abs();
            if prev.abs() > 1e-12 && total.abs() / prev.abs() > 1.5 {
                growth_count += 1;
                if growth_count >= 3 {
                    return TailIntegral::Diverged { last_partial: total };
                }
            } else {
                growth_count = 0;
            }
            if increment <= 1e-12f64.max(1e-9 * total.abs()) {
                conv_count += 1;
                if conv_count >= 2 {
                    return TailIntegral::Converged(total);
                }
            } else {
                conv_count = 0;
            }
        }
        prev_total = Some(total);
    }
    TailIntegral::Inconclusive {
        detail: format!(
            "no verdict after {} truncations toward {} (last partial {:.6e})",
            max_steps, boundary, total
        ),
    }
}

/// Cached antiderivative: piecewise cubic Hermite through adaptively placed
/// nodes, with exact slopes supplied by the integrand itself. Built once,
/// evaluated millions of times inside simulation loops.
#[derive(Clone, Debug)]
pub struct CachedCurve {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl CachedCurve {
    /// Antiderivative of `deriv` over `[lo, hi]`, anchored so the returned
    /// curve is zero at `anchor` (which must lie inside the range).
    pub fn antiderivative(
        deriv: &impl Fn(f64) -> f64,
        lo: f64,
        hi: f64,
        anchor: f64,
    ) -> Result<CachedCurve> {
        if !(lo < hi) || !(anchor >= lo && anchor <= hi) {
            return Err(Error::InvalidInput(format!(
                "antiderivative range [{lo}, {hi}] must contain anchor {anchor}"
            )));
        }
        // Seed nodes: uniform grid plus the anchor.
        let n0 = 129usize;
        let mut seeds: Vec<f64> = (0..n0)
            .map(|i| lo + (hi - lo) * i as f64 / (n0 - 1) as f64)
            .collect();
        seeds.push(anchor);
        seeds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        seeds.dedup();

        let mut xs = Vec::with_capacity(512);
        let mut ys = Vec::with_capacity(512);
        xs.push(seeds[0]);
        ys.push(0.0); // shifted to the anchor afterwards
        for w in seeds.windows(2) {
            let y0 = *ys.last().unwrap();
            subdivide(deriv, w[0], y0, w[1], 0, &mut xs, &mut ys)?;
        }
        let slopes: Vec<f64> = xs.iter().map(|&x| deriv(x)).collect();
        for (&x, &s) in xs.iter().zip(slopes.iter()) {
            if !x.is_finite() || !s.is_finite() {
                return Err(Error::NonFinite {
                    what: "antiderivative integrand".into(),
                    point: vec![x],
                });
            }
        }
        let mut curve = CachedCurve { xs, ys, slopes };
        let shift = curve.eval(anchor);
        for y in curve.ys.iter_mut() {
            *y -= shift;
        }
        Ok(curve)
    }

    /// Hermite evaluation; linear extrapolation with the end slope outside
    /// the cached range.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0] + self.slopes[0] * (x - self.xs[0]);
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1] + self.slopes[n - 1] * (x - self.xs[n - 1]);
        }
        let idx = self.xs.partition_point(|&t| t <= x) - 1;
        let (x0, x1) = (self.xs[idx], self.xs[idx + 1]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[idx]
            + h10 * h * self.slopes[idx]
            + h01 * self.ys[idx + 1]
            + h11 * h * self.slopes[idx + 1]
    }

    pub fn range(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    pub fn node_count(&self) -> usize {
        self.xs.len()
    }
}

fn subdivide(
    deriv: &impl Fn(f64) -> f64,
    a: f64,
    ya: f64,
    b: f64,
    depth: u32,
    xs: &mut Vec<f64>,
    ys: &mut Vec<f64>,
) -> Result<()> {
    let m = 0.5 * (a + b);
    let left = gl5(deriv, a, m);
    let right = gl5(deriv, m, b);
    let whole = gl5(deriv, a, b);
    let refined = left + right;
    if !refined.is_finite() {
        return Err(Error::NonFinite {
            what: "antiderivative integrand".into(),
            point: vec![m],
        });
    }
    // Quadrature agreement and Hermite reproduction of the midpoint value.
    let quad_ok = (refined - whole).abs() <= 1e-13f64.max(1e-13 * refined.abs());
    let hermite_mid = {
        let h = b - a;
        let (d0, d1) = (deriv(a), deriv(b));
        0.5 * (ya + (ya + refined)) + 0.125 * h * (d0 - d1)
    };
    let interp_ok = (hermite_mid - (ya + left)).abs() <= 1e-12f64.max(1e-13 * ya.abs());
    if (quad_ok && interp_ok) || depth >= 24 || xs.len() > 400_000 {
        xs.push(m);
        ys.push(ya + left);
        xs.push(b);
        ys.push(ya + refined);
        return Ok(());
    }
    subdivide(deriv, a, ya, m, depth + 1, xs, ys)?;
    let ym = *ys.last().unwrap();
    subdivide(deriv, m, ym, b, depth + 1, xs, ys)
}

/// Inverse-CDF table for a one-dimensional density known up to normalization.
///
/// The CDF is accumulated on a dense grid; sampling goes through a uniform
/// table in `u` at 1e-4 resolution with linear interpolation between entries.
#[derive(Clone, Debug)]
pub struct QuantileTable {
    cdf_x: Vec<f64>,
    cdf_v: Vec<f64>,
    table: Vec<f64>,
}

pub const QUANTILE_TABLE_POINTS: usize = 10_001;

impl QuantileTable {
    pub fn build(pdf: &impl Fn(f64) -> f64, lo: f64, hi: f64) -> Result<QuantileTable> {
        const GRID: usize = 32_769;
        let mut cdf_x = Vec::with_capacity(GRID);
        let mut cdf_v = Vec::with_capacity(GRID);
        let h = (hi - lo) / (GRID - 1) as f64;
        let mut acc = Kahan::default();
        let mut prev = pdf(lo).max(0.0);
        cdf_x.push(lo);
        cdf_v.push(0.0);
        for i in 1..GRID {
            let x = lo + h * i as f64;
            let cur = pdf(x).max(0.0);
            if !cur.is_finite() {
                return Err(Error::NonFinite {
                    what: "density".into(),
                    point: vec![x],
                });
            }
            acc.add(0.5 * (prev + cur) * h);
            cdf_x.push(x);
            cdf_v.push(acc.value());
            prev = cur;
        }
        let total = acc.value();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidInput(
                "density mass is zero or non-finite on the requested range".into(),
            ));
        }
        for v in cdf_v.iter_mut() {
            *v /= total;
        }
        // Enforce monotonicity against rounding.
        for i in 1..GRID {
            if cdf_v[i] < cdf_v[i - 1] {
                cdf_v[i] = cdf_v[i - 1];
            }
        }
        let mut table = Vec::with_capacity(QUANTILE_TABLE_POINTS);
        for i in 0..QUANTILE_TABLE_POINTS {
            let u = i as f64 / (QUANTILE_TABLE_POINTS - 1) as f64;
            table.push(invert_monotone(&cdf_x, &cdf_v, u));
        }
        Ok(QuantileTable {
            cdf_x,
            cdf_v,
            table,
        })
    }

    /// Quantile via the cached uniform-in-`u` table (fast path for sampling).
    pub fn sample(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let pos = u * (self.table.len() - 1) as f64;
        let idx = (pos.floor() as usize).min(self.table.len() - 2);
        let frac = pos - idx as f64;
        self.table[idx] * (1.0 - frac) + self.table[idx + 1] * frac
    }

    /// Quantile from the dense CDF grid; resolves tail probabilities far
    /// below the sampling table's 1e-4 step.
    pub fn quantile(&self, u: f64) -> f64 {
        invert_monotone(&self.cdf_x, &self.cdf_v, u.clamp(0.0, 1.0))
    }

    /// CDF at `x` by interpolation on the dense grid.
    pub fn cdf(&self, x: f64) -> f64 {
        let n = self.cdf_x.len();
        if x <= self.cdf_x[0] {
            return 0.0;
        }
        if x >= self.cdf_x[n - 1] {
            return 1.0;
        }
        let idx = self.cdf_x.partition_point(|&t| t <= x) - 1;
        let (x0, x1) = (self.cdf_x[idx], self.cdf_x[idx + 1]);
        let t = (x - x0) / (x1 - x0);
        self.cdf_v[idx] * (1.0 - t) + self.cdf_v[idx + 1] * t
    }
}

fn invert_monotone(xs: &[f64], vs: &[f64], u: f64) -> f64 {
    if u <= vs[0] {
        return xs[0];
    }
    let n = vs.len();
    if u >= vs[n - 1] {
        return xs[n - 1];
    }
    let idx = vs.partition_point(|&v| v < u) - 1;
    let (v0, v1) = (vs[idx], vs[idx + 1]);
    if v1 <= v0 {
        return xs[idx + 1];
    }
    let t = (u - v0) / (v1 - v0);
    xs[idx] * (1.0 - t) + xs[idx + 1] * t
}

// ---- finite differences -------------------------------------------------

/// Second-order central first derivative.
pub fn d1_c2(f: &impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Fourth-order central first derivative.
pub fn d1_c4(f: &impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Fourth-order central second derivative.
pub fn d2_c4(f: &impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h) - f(x - 2.0 * h))
        / (12.0 * h * h)
}

// ---- order statistics ----------------------------------------------------

pub fn sort_unstable_f64(v: &mut [f64]) {
    v.sort_unstable_by(|a, b| a.partial_cmp(b).expect("NaN in sample"));
}

/// Percentile with linear interpolation at rank `p * (n - 1)`, `p` in [0, 1].
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let idx = (pos.floor() as usize).min(sorted.len() - 1);
    let frac = pos - idx as f64;
    if frac == 0.0 || idx + 1 >= sorted.len() {
        sorted[idx]
    } else {
        sorted[idx] * (1.0 - frac) + sorted[idx + 1] * frac
    }
}

pub fn median_sorted(sorted: &[f64]) -> f64 {
    percentile_sorted(sorted, 0.5)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n-1 denominator); 0 for fewer than 2 samples.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (v.len() - 1) as f64).sqrt()
}

/// Advances a multi-index over a uniform lattice with `n` nodes per axis;
/// returns false once exhausted.
pub fn advance_index(idx: &mut [usize], n: usize) -> bool {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] < n {
            return true;
        }
        idx[a] = 0;
    }
    false
}

/// Empirical lag autocorrelation.
pub fn autocorrelation(series: &[f64], lag: usize) -> f64 {
    if series.len() <= lag + 1 {
        return f64::NAN;
    }
    let m = mean(series);
    let var: f64 = series.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    if var == 0.0 {
        return 1.0;
    }
    let cov: f64 = series[..series.len() - lag]
        .iter()
        .zip(series[lag..].iter())
        .map(|(a, b)| (a - m) * (b - m))
        .sum();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrate_polynomial_exact() {
        let f = |x: f64| 3.0 * x * x;
        let v = integrate(&f, 0.0, 2.0, 1e-12);
        assert!((v - 8.0).abs() < 1e-12);
    }

    #[test]
    fn integrate_gaussian() {
        let f = |x: f64| (-x * x / 2.0).exp();
        let v = integrate(&f, -8.0, 8.0, 1e-12);
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn tail_integral_gaussian_converges() {
        let f = |x: f64| (-x * x).exp();
        match integrate_to_boundary(&f, 0.0, f64::INFINITY) {
            TailIntegral::Converged(v) => {
                assert!((v - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-8)
            }
            other => panic!("expected convergence, got {other:?}"),
        }
    }

    #[test]
    fn tail_integral_constant_diverges() {
        let f = |_x: f64| 1.0;
        assert!(integrate_to_boundary(&f, 0.0, f64::INFINITY).is_diverged());
    }

    #[test]
    fn tail_integral_nonintegrable_singularity_diverges() {
        let f = |x: f64| 1.0 / (x * x);
        assert!(integrate_to_boundary(&f, 1.0, 0.0).is_diverged());
    }

    #[test]
    fn tail_integral_integrable_singularity_converges() {
        let f = |x: f64| 1.0 / x.sqrt();
        match integrate_to_boundary(&f, 1.0, 0.0) {
            TailIntegral::Converged(v) => assert!((v - (-2.0)).abs() < 1e-6, "got {v}"),
            other => panic!("expected convergence, got {other:?}"),
        }
    }

    #[test]
    fn cached_antiderivative_matches_closed_form() {
        // d/dz of -z^2 + 4 ln z on (0, inf)
        let g = |z: f64| -2.0 * z + 4.0 / z;
        let curve = CachedCurve::antiderivative(&g, 0.05, 12.0, 1.0).unwrap();
        for &z in &[0.06f64, 0.1, 0.5, 1.0, 2.0, 5.0, 11.9] {
            let exact = -(z * z) + 4.0 * z.ln() - (-1.0);
            assert!(
                (curve.eval(z) - exact).abs() < 1e-9,
                "z={z}: {} vs {exact}",
                curve.eval(z)
            );
        }
    }

    #[test]
    fn quantile_table_roundtrip_gaussian() {
        let pdf = |x: f64| (-x * x / 2.0).exp();
        let t = QuantileTable::build(&pdf, -9.0, 9.0).unwrap();
        // Known standard normal quantiles.
        assert!((t.sample(0.5) - 0.0).abs() < 1e-3);
        assert!((t.sample(0.841344746) - 1.0).abs() < 2e-3);
        assert!((t.quantile(0.02275013) - (-2.0)).abs() < 5e-3);
        assert!((t.cdf(1.644853) - 0.95).abs() < 1e-4);
    }

    #[test]
    fn derivative_stencils() {
        let f = |x: f64| x.sin();
        assert!((d1_c4(&f, 0.7, 1e-2) - 0.7f64.cos()).abs() < 1e-9);
        assert!((d2_c4(&f, 0.7, 1e-2) + 0.7f64.sin()).abs() < 1e-8);
        assert!((d1_c2(&f, 0.7, 1e-5) - 0.7f64.cos()).abs() < 1e-9);
    }

    #[test]
    fn percentile_linear_interpolation() {
        let xs = [0.1, 0.2, 0.3];
        assert_eq!(median_sorted(&xs), 0.2);
        assert!((percentile_sorted(&xs, 0.25) - 0.15).abs() < 1e-15);
        assert_eq!(percentile_sorted(&[0.1], 0.99), 0.1);
    }

    #[test]
    fn kahan_beats_naive_on_long_sums() {
        let mut k = Kahan::default();
        for _ in 0..1_000_000 {
            k.add(0.1);
        }
        assert!((k.value() - 100_000.0).abs() < 1e-9);
    }
}
