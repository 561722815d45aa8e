//! Adapted local IV without an instrument.
//!
//! The whole-sample regression is `Y = X'β_0 + P·X'δ + r(P) + error` with
//! `r(p) = α_0 + q(p)`. A pairwise-difference regression on `(X, P̂X)`
//! removes `r` and yields `(β̂_0, δ̂)`; a local-linear regression of
//! `Y - X'β̂_0 - P̂X'δ̂` on `P̂` gives `r̂` and `q̂'`, and the MTE is
//! `x'δ̂ + q̂'(v)`.

use crate::data::Sample;
use crate::error::{MteError, Result};
use crate::linalg;
use crate::propensity::PropensityFit;
use crate::separate::{pair_system, rows_by_score, CurveGrid, ResidualSmoother, SecondStepConfig};
use crate::smoothing::Kernel;

/// Output of the adapted LIV procedure. `curve.level` is `r̂` and
/// `curve.slope` is `q̂'`.
#[derive(Debug, Clone)]
pub struct LivFit {
    pub beta0: Vec<f64>,
    pub delta: Vec<f64>,
    pub curve: CurveGrid,
    smoother: ResidualSmoother,
}

impl LivFit {
    /// `(r̂(p), q̂'(p))`, falling back to the grid where the local fit is singular.
    pub fn at(&self, p: f64) -> (f64, f64) {
        self.smoother.eval(p).unwrap_or_else(|_| crate::separate::interpolate(&self.curve, p))
    }

    /// `r̂(p)` under the same nearest-grid-end rule as the separate arms.
    pub fn boundary_value(&self, p: f64) -> (f64, bool) {
        match self.curve.nearest_end(p) {
            Some(k) => (self.curve.level[k], true),
            None => (self.at(p).0, false),
        }
    }

    pub fn smoother(&self) -> &ResidualSmoother {
        &self.smoother
    }
}

/// `(β̂_0, δ̂)` from the pairwise-difference regression over all kept pairs.
pub fn liv_pairwise(sample: &Sample, fit: &PropensityFit, kernel: Kernel, h2: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = rows_by_score(fit, None);
    let k = sample.dim();
    if rows.len() < 2 * k + 1 {
        return Err(MteError::InvalidSample(format!(
            "{} kept rows, need at least {}",
            rows.len(),
            2 * k + 1
        )));
    }
    let scores: Vec<f64> = rows.iter().map(|&i| fit.scores()[i]).collect();
    let y: Vec<f64> = rows.iter().map(|&i| sample.y()[i]).collect();
    let mut z = Vec::with_capacity(rows.len() * 2 * k);
    let mut x = Vec::with_capacity(k);
    for (&i, &p) in rows.iter().zip(&scores) {
        sample.write_design_row(i, &mut x);
        z.extend_from_slice(&x);
        z.extend(x.iter().map(|v| p * v));
    }
    let system = pair_system(&scores, &z, &y, 2 * k, kernel, h2);
    if system.total_weight <= 0.0 {
        return Err(MteError::BandwidthTooSmall(format!("whole sample (h2 = {h2})")));
    }
    let coef = linalg::solve_spd(&system.gram, &system.rhs).map_err(|_| MteError::LivCollinear)?;
    Ok((coef.rows(0, k).iter().copied().collect(), coef.rows(k, k).iter().copied().collect()))
}

fn liv_smoother(
    sample: &Sample,
    fit: &PropensityFit,
    beta0: &[f64],
    delta: &[f64],
    kernel: Kernel,
    h3: f64,
) -> Result<ResidualSmoother> {
    let k = sample.dim();
    if beta0.len() != k || delta.len() != k {
        return Err(MteError::InvalidArgument(format!(
            "beta0/delta have {}/{} entries for {k} covariates",
            beta0.len(),
            delta.len()
        )));
    }
    let rows = rows_by_score(fit, None);
    if rows.len() < 2 {
        return Err(MteError::InvalidSample("fewer than 2 kept rows".into()));
    }
    let mut x = Vec::with_capacity(k);
    let (scores, residuals): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .map(|&i| {
            sample.write_design_row(i, &mut x);
            let p = fit.scores()[i];
            let fitted: f64 = x.iter().zip(beta0.iter().zip(delta)).map(|(v, (b, d))| v * (b + p * d)).sum();
            (p, sample.y()[i] - fitted)
        })
        .unzip();
    Ok(ResidualSmoother::new(scores, residuals, kernel, h3))
}

/// `(r̂, q̂')` on `p_grid` from the whole-sample residuals `Y - X'β̂_0 - P̂X'δ̂`.
pub fn liv_local_linear(
    sample: &Sample,
    fit: &PropensityFit,
    beta0: &[f64],
    delta: &[f64],
    p_grid: &[f64],
    kernel: Kernel,
    h3: f64,
) -> Result<CurveGrid> {
    liv_smoother(sample, fit, beta0, delta, kernel, h3)?.curve(p_grid)
}

/// Both LIV steps with the resolved bandwidths.
pub fn fit_liv(
    sample: &Sample,
    fit: &PropensityFit,
    config: &SecondStepConfig,
    h2: f64,
    h3: f64,
    grid: &[f64],
) -> Result<LivFit> {
    let (beta0, delta) = liv_pairwise(sample, fit, config.pair_kernel, h2)?;
    let smoother = liv_smoother(sample, fit, &beta0, &delta, config.local_kernel, h3)?;
    let curve = smoother.curve(grid)?;
    let flagged = curve.flagged.iter().filter(|&&f| f).count();
    if flagged > 0 {
        log::warn!("liv: {flagged} singular grid point(s) interpolated");
    }
    Ok(LivFit { beta0, delta, curve, smoother })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::separate::uniform_grid;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_score_is_collinear() {
        let n = 50;
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let d: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let s = Sample::from_parts(x.clone(), d.clone(), x, 1, vec![], 0).unwrap();
        let fit = PropensityFit::from_scores(vec![0.5; n], d).unwrap();
        let err = liv_pairwise(&s, &fit, Kernel::Gaussian, 0.1).unwrap_err();
        assert!(matches!(err, MteError::LivCollinear));
        assert_eq!(err.to_string(), "P·X collinear with X (insufficient propensity variation)");
    }

    #[test]
    fn noiseless_recovery() {
        // Y = 0.7 x + P·x·(-0.4) + sin(3P); x and P vary independently
        let n = 400;
        let scores: Vec<f64> = (0..n).map(|i| 0.1 + 0.8 * ((i * 37) % n) as f64 / n as f64).collect();
        let x: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let y: Vec<f64> = (0..n).map(|i| 0.7 * x[i] - 0.4 * scores[i] * x[i] + (3.0 * scores[i]).sin()).collect();
        let d: Vec<bool> = (0..n).map(|i| i % 3 != 0).collect();
        let s = Sample::from_parts(y, d.clone(), x, 1, vec![], 0).unwrap();
        let fit = PropensityFit::from_scores(scores, d).unwrap();
        let (b0, delta) = liv_pairwise(&s, &fit, Kernel::Epanechnikov, 0.005).unwrap();
        assert_abs_diff_eq!(b0[0], 0.7, epsilon = 1e-3);
        assert_abs_diff_eq!(delta[0], -0.4, epsilon = 1e-3);
    }

    #[test]
    fn constant_residuals_reproduced() {
        let n = 200;
        let scores: Vec<f64> = (0..n).map(|i| 0.05 + 0.9 * i as f64 / n as f64).collect();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
        let y: Vec<f64> = (0..n).map(|i| 2.5 + x[i] * (1.0 + scores[i])).collect();
        let d: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let s = Sample::from_parts(y, d.clone(), x, 1, vec![], 0).unwrap();
        let fit = PropensityFit::from_scores(scores, d).unwrap();
        let grid = uniform_grid(0.2, 0.8, 13);
        let c = liv_local_linear(&s, &fit, &[1.0], &[1.0], &grid, Kernel::Epanechnikov, 0.1).unwrap();
        for k in 0..grid.len() {
            assert_abs_diff_eq!(c.level[k], 2.5, epsilon = 1e-10);
            assert_abs_diff_eq!(c.slope[k], 0.0, epsilon = 1e-10);
        }
    }
}
