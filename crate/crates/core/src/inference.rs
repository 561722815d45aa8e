//! Nonparametric bootstrap over rows.
//!
//! Replication `b` draws its resample from a ChaCha stream seeded with
//! `mix(seed, b)`, so results depend only on `(seed, b)` and never on
//! scheduling or the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Sample;
use crate::error::{MteError, Result};
use crate::pipeline::{estimate_with_propensity, EstimationConfig, Estimates, StatBlock};
use crate::propensity::fit_propensity;
use crate::smoothing::quantile_sorted;

/// Maximum share of failed replications before the bootstrap errors.
pub const MAX_FAILED_SHARE: f64 = 0.2;

/// SplitMix64 finalizer applied to `seed + b·γ`.
pub fn mix(seed: u64, b: u64) -> u64 {
    let mut z = seed.wrapping_add(b.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Row indices of replication `b`.
pub fn resample_indices(n: usize, seed: u64, b: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, b));
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub requested: usize,
    pub level: f64,
    /// Successful replications in replication order.
    pub draws: Vec<Vec<f64>>,
    /// Replication numbers that failed.
    pub failed: Vec<usize>,
    pub se: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
}

impl BootstrapResult {
    pub fn replications(&self) -> usize {
        self.draws.len()
    }
}

/// Bootstraps `statistic`, which maps resampled row indices to a vector of
/// fixed length. Percentile intervals at `level`; standard errors use the
/// `B - 1` denominator.
pub fn bootstrap<F>(n: usize, replications: usize, seed: u64, level: f64, statistic: F) -> Result<BootstrapResult>
where
    F: Fn(&[usize]) -> Result<Vec<f64>> + Sync,
{
    if replications < 2 {
        return Err(MteError::InvalidArgument(format!("need at least 2 replications, got {replications}")));
    }
    if n == 0 {
        return Err(MteError::EmptySample("nothing to resample".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(MteError::InvalidArgument(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let outcomes: Vec<Result<Vec<f64>>> = (0..replications)
        .into_par_iter()
        .map(|b| statistic(&resample_indices(n, seed, b as u64)))
        .collect();
    let mut draws = Vec::with_capacity(replications);
    let mut failed = Vec::new();
    for (b, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(v) if v.iter().all(|x| x.is_finite()) => draws.push(v),
            Ok(_) => {
                log::warn!("bootstrap replication {b}: non-finite statistic");
                failed.push(b);
            }
            Err(e) => {
                log::warn!("bootstrap replication {b}: {e}");
                failed.push(b);
            }
        }
    }
    if failed.len() as f64 > MAX_FAILED_SHARE * replications as f64 || draws.len() < 2 {
        return Err(MteError::BootstrapFailed { failed: failed.len(), total: replications });
    }
    let width = draws[0].len();
    if draws.iter().any(|d| d.len() != width) {
        return Err(MteError::InvalidArgument("statistic length varies across replications".into()));
    }
    let alpha = (1.0 - level) / 2.0;
    let mut se = Vec::with_capacity(width);
    let mut ci_lo = Vec::with_capacity(width);
    let mut ci_hi = Vec::with_capacity(width);
    let mut column = vec![0.0; draws.len()];
    for k in 0..width {
        for (c, d) in column.iter_mut().zip(&draws) {
            *c = d[k];
        }
        let m = column.iter().sum::<f64>() / column.len() as f64;
        let var = column.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (column.len() - 1) as f64;
        se.push(var.sqrt());
        column.sort_by(f64::total_cmp);
        ci_lo.push(quantile_sorted(&column, alpha));
        ci_hi.push(quantile_sorted(&column, 1.0 - alpha));
    }
    Ok(BootstrapResult { requested: replications, level, draws, failed, se, ci_lo, ci_hi })
}

/// Bootstrap of every statistic of a pipeline estimate. Each replication
/// refits the propensity score and re-resolves all bandwidths, keeping the
/// grid, profile and `π(x)` of the original estimate.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineBootstrap {
    pub result: BootstrapResult,
    pub layout: Vec<StatBlock>,
}

/// Standard errors and interval bounds of one named block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockSummary {
    pub se: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
}

impl PipelineBootstrap {
    pub fn block(&self, name: &str) -> Option<BlockSummary> {
        let b = self.layout.iter().find(|b| b.name == name)?;
        let r = b.start..b.start + b.len;
        Some(BlockSummary {
            se: self.result.se[r.clone()].to_vec(),
            ci_lo: self.result.ci_lo[r.clone()].to_vec(),
            ci_hi: self.result.ci_hi[r].to_vec(),
        })
    }
}

pub fn bootstrap_pipeline(
    sample: &Sample,
    config: &EstimationConfig,
    estimate: &Estimates,
    replications: usize,
    seed: u64,
    level: f64,
) -> Result<PipelineBootstrap> {
    let (_, layout) = estimate.statistics();
    let replicate = estimate.replication_config(config);
    let result = bootstrap(sample.len(), replications, seed, level, |rows| {
        let resampled = sample.select_rows(rows)?;
        resampled.require_both_arms()?;
        let raw = fit_propensity(&resampled, &replicate.propensity)?;
        let est = estimate_with_propensity(&resampled, &raw, &replicate)?;
        let (values, got) = est.statistics();
        if got != layout {
            return Err(MteError::InvalidArgument("replication statistics have a different layout".into()));
        }
        Ok(values)
    })?;
    Ok(PipelineBootstrap { result, layout })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    #[test]
    fn mix_is_a_bijection_sample() {
        let mut seen: Vec<u64> = (0..1000).map(|b| mix(42, b)).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 1000);
        assert_ne!(mix(1, 0), mix(2, 0));
    }

    #[test]
    fn mean_standard_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..400).map(|_| rng.sample(StandardNormal)).collect();
        let r = bootstrap(x.len(), 500, 11, 0.9, |rows| {
            Ok(vec![rows.iter().map(|&i| x[i]).sum::<f64>() / rows.len() as f64])
        })
        .unwrap();
        assert!((0.04..=0.06).contains(&r.se[0]), "{}", r.se[0]);
        assert!(r.ci_lo[0] <= r.ci_hi[0]);
    }

    #[test]
    fn two_replications_are_enough() {
        let r = bootstrap(10, 2, 1, 0.9, |rows| Ok(vec![rows[0] as f64])).unwrap();
        assert_eq!(r.replications(), 2);
        assert!(r.ci_lo[0] <= r.ci_hi[0]);
        assert!(bootstrap(10, 1, 1, 0.9, |_| Ok(vec![0.0])).is_err());
    }

    #[test]
    fn too_many_failures_abort() {
        let r = bootstrap(10, 10, 3, 0.9, |rows| {
            if rows[0] % 2 == 0 {
                Err(MteError::EmptyArm { arm: 0 })
            } else {
                Ok(vec![1.0])
            }
        });
        match r {
            Err(MteError::BootstrapFailed { failed, total }) => {
                assert_eq!(total, 10);
                assert!(failed > 2);
            }
            Ok(res) => assert!(res.failed.len() <= 2),
            Err(e) => panic!("{e}"),
        }
        let err = bootstrap(10, 10, 3, 0.9, |_| Err(MteError::EmptyArm { arm: 0 })).unwrap_err();
        assert!(matches!(err, MteError::BootstrapFailed { failed: 10, total: 10 }));
    }

    #[test]
    fn identical_across_thread_counts() {
        let x: Vec<f64> = (0..300).map(|i| (i as f64 * 0.77).sin()).collect();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                bootstrap(x.len(), 64, 5, 0.9, |rows| {
                    Ok(vec![rows.iter().map(|&i| x[i]).sum::<f64>(), rows.iter().map(|&i| x[i] * x[i]).sum()])
                })
                .unwrap()
            })
        };
        assert_eq!(run(1), run(4));
    }
}
