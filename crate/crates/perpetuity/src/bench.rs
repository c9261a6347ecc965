//! Benchmark harness: KS-distance distributions of the reversal estimators
//! (invariant start and forward reversal) on the linear-cashflow OU
//! perpetuity, the path-count-to-target experiment for the naive estimator,
//! and speedup reporting.

use std::time::Instant;

use rayon::prelude::*;

use crate::analytics::{ks_distance, ou_reference_law, summary_stats, KSReport, SummaryTable};
use crate::density::{density_1d, InvariantDensity};
use crate::error::{Error, Result};
use crate::measure::{EmpiricalJointMeasure, Marginal, ReversalSource};
use crate::model::{catalog, ModelSpec};
use crate::path::{simulate_forward, PathConfig, StartState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum Method {
    /// Reversal started from the invariant density.
    A,
    /// Reversal of a forward run of length 2T.
    B,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct BenchConfig {
    pub gamma: f64,
    pub a_rate: f64,
    pub horizon: f64,
    pub step: f64,
    pub n_trials: usize,
    pub base_seed: u64,
    /// Target KS distance for the naive path-count experiment.
    pub ks_target: Option<f64>,
    pub max_paths: usize,
    /// Truncation horizon of the naive integral.
    pub naive_horizon: f64,
    /// Starting value of the reversed perpetuity.
    pub x_start: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            gamma: 2.0,
            a_rate: 1.0,
            horizon: 10_000.0,
            step: 1.0 / 24.0,
            n_trials: 20,
            base_seed: 0x5EED,
            ks_target: None,
            max_paths: 200_000,
            naive_horizon: 100.0,
            x_start: 1.0,
        }
    }
}

impl BenchConfig {
    pub fn model(&self) -> ModelSpec {
        catalog::ou_linear_cashflow(self.gamma, self.a_rate)
    }

    pub fn density(&self) -> Result<InvariantDensity> {
        density_1d(&self.model(), 0.0)
    }

    fn path_config(&self, stream: u64) -> Result<PathConfig> {
        Ok(PathConfig::new(self.horizon, self.step, self.base_seed)?.with_stream(stream))
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub ks: f64,
    pub seconds: f64,
}

/// `n_trials` independent single-path reversal runs; per trial the KS
/// distance of the perpetuity marginal against the closed-form Gaussian law
/// and the wall-clock time of path generation plus KS evaluation (report
/// I/O excluded). Trials run concurrently on disjoint RNG streams, so the
/// KS values are reproducible regardless of thread count.
pub fn run_reversal_bench(cfg: &BenchConfig, method: Method) -> Result<(SummaryTable, Vec<TrialRecord>)> {
    if cfg.n_trials == 0 {
        return Err(Error::InvalidInput("need at least one trial".into()));
    }
    let spec = cfg.model();
    let density = cfg.density()?;
    let law = ou_reference_law(cfg.gamma, cfg.a_rate)?.perpetuity_marginal();

    let records: Result<Vec<TrialRecord>> = (0..cfg.n_trials)
        .into_par_iter()
        .map(|trial| {
            let started = Instant::now();
            let config = cfg.path_config(trial as u64)?;
            let source = match method {
                Method::A => ReversalSource::InvariantStart(&density),
                Method::B => ReversalSource::ForwardReversal { z0: &[0.0] },
            };
            let measure = crate::measure::estimate_reversal(&spec, source, &config, cfg.x_start)?;
            let report = ks_distance(measure.sorted_marginal(Marginal::Perpetuity)?, &law)?;
            Ok(TrialRecord {
                trial,
                ks: report.distance,
                seconds: started.elapsed().as_secs_f64(),
            })
        })
        .collect();
    let records = records?;
    let reports: Vec<KSReport> = records
        .iter()
        .map(|r| KSReport {
            distance: r.ks,
            argmax_point: f64::NAN,
            n_samples: 0,
        })
        .collect();
    let seconds: Vec<f64> = records.iter().map(|r| r.seconds).collect();
    let table = summary_stats(&reports, &seconds)?;
    Ok((table, records))
}

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct NaiveReport {
    /// First sample size at which the running KS fell below the target
    /// (capped at `max_paths` when censored).
    pub paths_needed: usize,
    pub seconds: f64,
    pub censored: bool,
    pub ks_achieved: f64,
}

/// Grows the naive iid sample path-by-path until its KS distance against
/// the closed-form law first falls below `ks_target`. The KS statistic is
/// recomputed every 100 paths (exact per-path recomputation is quadratic),
/// then the first crossing inside the final block is located exactly, so
/// the reported `N` retains its per-path meaning.
pub fn run_naive_until(cfg: &BenchConfig) -> Result<NaiveReport> {
    let target = cfg.ks_target.ok_or_else(|| {
        Error::InvalidInput("run_naive_until needs ks_target".into())
    })?;
    if !(target > 0.0) {
        return Err(Error::InvalidInput("ks_target must be positive".into()));
    }
    let spec = cfg.model();
    let density = cfg.density()?;
    let law = ou_reference_law(cfg.gamma, cfg.a_rate)?.perpetuity_marginal();
    let started = Instant::now();

    const BLOCK: usize = 100;
    let mut sorted: Vec<f64> = Vec::new();
    let mut block_history: Vec<f64> = Vec::with_capacity(BLOCK);
    let mut produced = 0usize;

    let simulate_one = |idx: usize| -> Result<f64> {
        let config = PathConfig::new(cfg.naive_horizon, cfg.step, cfg.base_seed)?
            .with_stream(idx as u64);
        Ok(simulate_forward(&spec, &config, StartState::FromInvariant(&density))?.x0_truncated)
    };

    while produced < cfg.max_paths {
        block_history.clear();
        let block_n = BLOCK.min(cfg.max_paths - produced);
        for i in 0..block_n {
            let v = simulate_one(produced + i)?;
            block_history.push(v);
            let pos = sorted.partition_point(|&s| s <= v);
            sorted.insert(pos, v);
        }
        produced += block_n;
        let d = ks_distance(&sorted, &law)?.distance;
        if d < target {
            // Rewind the block and replay path-by-path for the exact first
            // crossing.
            for v in &block_history {
                let pos = sorted.partition_point(|&s| s <= *v) - 1;
                // Remove one occurrence of v (the one we inserted).
                debug_assert!(sorted[pos] == *v);
                sorted.remove(pos);
            }
            let base = produced - block_n;
            for (i, &v) in block_history.iter().enumerate() {
                let pos = sorted.partition_point(|&s| s <= v);
                sorted.insert(pos, v);
                let d = ks_distance(&sorted, &law)?.distance;
                if d < target {
                    return Ok(NaiveReport {
                        paths_needed: base + i + 1,
                        seconds: started.elapsed().as_secs_f64(),
                        censored: false,
                        ks_achieved: d,
                    });
                }
            }
            // The block-level statistic crossed but no prefix did (possible
            // only through removal/insertion asymmetry); fall through and
            // keep growing.
        }
    }
    let d = ks_distance(&sorted, &law)?.distance;
    Ok(NaiveReport {
        paths_needed: cfg.max_paths,
        seconds: started.elapsed().as_secs_f64(),
        censored: true,
        ks_achieved: d,
    })
}

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct SpeedupReport {
    /// Median naive seconds / median reversal seconds.
    pub time_ratio: f64,
    /// Naive paths needed per single reversal path.
    pub path_ratio: f64,
}

/// Ratio report comparing a reversal summary with a naive path-count run.
/// Absolute timings are hardware-specific; the ratios are what carries
/// meaning across machines.
pub fn speedup_report(reversal: &SummaryTable, naive: &NaiveReport) -> SpeedupReport {
    SpeedupReport {
        time_ratio: naive.seconds / reversal.median_seconds,
        path_ratio: naive.paths_needed as f64,
    }
}

/// One-shot naive estimate (fixed path count) scored against the
/// closed-form law; used by paired-seed comparisons.
pub fn naive_ks_at(cfg: &BenchConfig, n_paths: usize, seed: u64) -> Result<f64> {
    let spec = cfg.model();
    let density = cfg.density()?;
    let law = ou_reference_law(cfg.gamma, cfg.a_rate)?.perpetuity_marginal();
    let config = PathConfig::new(cfg.naive_horizon, cfg.step, seed)?;
    let measure = crate::measure::estimate_naive(&spec, &density, &config, n_paths)?;
    Ok(ks_distance(measure.sorted_marginal(Marginal::Perpetuity)?, &law)?.distance)
}

/// One-shot single-path reversal KS; paired partner of `naive_ks_at`.
pub fn reversal_ks_at(cfg: &BenchConfig, method: Method, seed: u64) -> Result<f64> {
    let spec = cfg.model();
    let density = cfg.density()?;
    let law = ou_reference_law(cfg.gamma, cfg.a_rate)?.perpetuity_marginal();
    let config = PathConfig::new(cfg.horizon, cfg.step, seed)?;
    let source = match method {
        Method::A => ReversalSource::InvariantStart(&density),
        Method::B => ReversalSource::ForwardReversal { z0: &[0.0] },
    };
    let measure = crate::measure::estimate_reversal(&spec, source, &config, cfg.x_start)?;
    Ok(ks_distance(measure.sorted_marginal(Marginal::Perpetuity)?, &law)?.distance)
}

/// Builds an occupation-measure estimate under the bench configuration;
/// exposed for report generation in the CLI.
pub fn reversal_measure(cfg: &BenchConfig, method: Method, stream: u64) -> Result<EmpiricalJointMeasure> {
    let spec = cfg.model();
    let density = cfg.density()?;
    let config = cfg.path_config(stream)?;
    let source = match method {
        Method::A => ReversalSource::InvariantStart(&density),
        Method::B => ReversalSource::ForwardReversal { z0: &[0.0] },
    };
    crate::measure::estimate_reversal(&spec, source, &config, cfg.x_start)
}
