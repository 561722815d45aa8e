//! Separate estimation by treatment arm.
//!
//! Within arm `d` the regression `E[Y | X, D = d] = X'β_d + g_d(π(X))` is
//! partially linear. `β_d` comes from a kernel-weighted pairwise-difference
//! regression that differences out `g_d` among pairs with close scores; `g_d`
//! and its slope then come from a local-linear regression of the residuals
//! `Y - X'β_d` on the score.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{MteError, Result};
use crate::linalg::{self, block_sum, BLOCK};
use crate::normal;
use crate::propensity::PropensityFit;
use crate::smoothing::{BandwidthSpec, Kernel};

/// Kernels and bandwidths of the pairwise (`k_2`, `h_2`) and local-linear
/// (`k_3`, `h_3`) steps, shared by the separate and LIV procedures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecondStepConfig {
    pub pair_kernel: Kernel,
    pub pair_bandwidth: BandwidthSpec,
    pub local_kernel: Kernel,
    pub local_bandwidth: BandwidthSpec,
    /// Points of the default p-grid over the common support.
    pub grid_points: usize,
}

impl Default for SecondStepConfig {
    fn default() -> Self {
        Self {
            pair_kernel: Kernel::Epanechnikov,
            pair_bandwidth: BandwidthSpec::RuleOfThumb,
            local_kernel: Kernel::Epanechnikov,
            local_bandwidth: BandwidthSpec::RuleOfThumb,
            grid_points: 101,
        }
    }
}

/// Kept rows of one arm (or of both arms when `arm` is `None`), sorted by
/// `(score, row index)`.
pub(crate) fn rows_by_score(fit: &PropensityFit, arm: Option<bool>) -> Vec<usize> {
    let scores = fit.scores();
    let mut rows: Vec<usize> = (0..scores.len())
        .filter(|&i| fit.kept()[i] && arm.is_none_or(|a| fit.treatment()[i] == a))
        .collect();
    rows.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    rows
}

/// Weighted pairwise-difference normal equations over all pairs `i < j` of
/// `rows` (sorted by score), weight `k((P_i - P_j)/h)`. Regressors come from
/// the row-major matrix `z` (one row per entry of `rows`).
pub(crate) struct PairSystem {
    pub gram: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub total_weight: f64,
}

pub(crate) fn pair_system(
    scores: &[f64],
    z: &[f64],
    y: &[f64],
    width: usize,
    kernel: Kernel,
    h: f64,
) -> PairSystem {
    let m = scores.len();
    let acc_width = width * width + width + 1;
    let radius = kernel.support_radius().map(|r| r * h);
    let n_blocks = m.div_ceil(BLOCK);
    let sums = block_sum(n_blocks, acc_width, |b, acc| {
        let mut dz = vec![0.0; width];
        for i in b * BLOCK..((b + 1) * BLOCK).min(m) {
            let zi = &z[i * width..(i + 1) * width];
            for j in i + 1..m {
                let gap = scores[j] - scores[i];
                if let Some(r) = radius {
                    if gap >= r {
                        break;
                    }
                }
                let w = kernel.eval(gap / h);
                if w == 0.0 {
                    continue;
                }
                let zj = &z[j * width..(j + 1) * width];
                for k in 0..width {
                    dz[k] = zi[k] - zj[k];
                }
                let dy = y[i] - y[j];
                for a in 0..width {
                    let wa = w * dz[a];
                    for c in a..width {
                        acc[a * width + c] += wa * dz[c];
                    }
                    acc[width * width + a] += wa * dy;
                }
                acc[acc_width - 1] += w;
            }
        }
    });
    let mut gram = DMatrix::zeros(width, width);
    for a in 0..width {
        for c in a..width {
            gram[(a, c)] = sums[a * width + c];
            gram[(c, a)] = sums[a * width + c];
        }
    }
    let rhs = DVector::from_iterator(width, sums[width * width..width * width + width].iter().copied());
    PairSystem { gram, rhs, total_weight: sums[acc_width - 1] }
}

/// `β̂_d` from the weighted pairwise-difference least squares regression
/// within arm `arm`, weights `k_2((P̂_i - P̂_j)/h_2)`. The intercept is
/// differenced out and is absorbed into `ĝ_d`.
pub fn pairwise_difference_beta(
    sample: &Sample,
    fit: &PropensityFit,
    arm: bool,
    kernel: Kernel,
    h2: f64,
) -> Result<Vec<f64>> {
    let rows = rows_by_score(fit, Some(arm));
    let k = sample.dim();
    if rows.len() < k + 1 {
        return Err(MteError::InvalidSample(format!(
            "arm {} has {} kept rows, need at least {}",
            arm as u8,
            rows.len(),
            k + 1
        )));
    }
    let scores: Vec<f64> = rows.iter().map(|&i| fit.scores()[i]).collect();
    let y: Vec<f64> = rows.iter().map(|&i| sample.y()[i]).collect();
    let mut z = Vec::with_capacity(rows.len() * k);
    for &i in &rows {
        z.extend(sample.design_row(i));
    }
    let system = pair_system(&scores, &z, &y, k, kernel, h2);
    if system.total_weight <= 0.0 {
        return Err(MteError::BandwidthTooSmall(format!("arm {} (h2 = {h2})", arm as u8)));
    }
    linalg::solve_spd(&system.gram, &system.rhs)
        .map(|b| b.iter().copied().collect())
        .map_err(|bad| {
            let names: Vec<&str> = bad.iter().map(|&c| sample.names()[c].as_str()).collect();
            MteError::CollinearDifferences(format!("arm {}: {}", arm as u8, names.join(", ")))
        })
}

/// Local-linear level and slope at `p` from points `(t, r)` sorted by `t`.
pub(crate) fn local_linear_at(t: &[f64], r: &[f64], p: f64, kernel: Kernel, h: f64) -> Result<(f64, f64)> {
    let n = t.len();
    let (start, end) = match kernel.support_radius() {
        None => (0, n),
        Some(rad) => (
            t.partition_point(|&v| v <= p - rad * h),
            t.partition_point(|&v| v < p + rad * h),
        ),
    };
    let mut s0 = 0.0;
    let mut st = 0.0;
    let mut sr = 0.0;
    for i in start..end {
        let w = kernel.eval((t[i] - p) / h);
        s0 += w;
        st += w * (t[i] - p);
        sr += w * r[i];
    }
    if s0 <= 0.0 {
        return Err(MteError::SingularLocalFit { p });
    }
    let t_bar = st / s0;
    let r_bar = sr / s0;
    let mut stt = 0.0;
    let mut str = 0.0;
    for i in start..end {
        let w = kernel.eval((t[i] - p) / h);
        let dt = t[i] - p - t_bar;
        stt += w * dt * dt;
        str += w * dt * (r[i] - r_bar);
    }
    // all local scores (numerically) equal
    if stt <= 1e-12 * h * h * s0 {
        return Err(MteError::SingularLocalFit { p });
    }
    let slope = str / stt;
    Ok((r_bar - slope * t_bar, slope))
}

/// Level and slope of a control function on a strictly increasing grid.
/// Points where the local system was singular are flagged and filled by
/// linear interpolation from unflagged neighbours (constant beyond the ends).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveGrid {
    pub p: Vec<f64>,
    pub level: Vec<f64>,
    pub slope: Vec<f64>,
    pub flagged: Vec<bool>,
}

impl CurveGrid {
    pub(crate) fn from_points(p: &[f64], values: Vec<Result<(f64, f64)>>) -> Result<Self> {
        check_grid(p)?;
        let flagged: Vec<bool> = values.iter().map(|v| v.is_err()).collect();
        if flagged.iter().all(|&f| f) {
            if let Some(Err(e)) = values.into_iter().next() {
                return Err(e);
            }
            unreachable!("non-empty grid with every point flagged");
        }
        let mut level: Vec<f64> = values.iter().map(|v| v.as_ref().map_or(f64::NAN, |x| x.0)).collect();
        let mut slope: Vec<f64> = values.iter().map(|v| v.as_ref().map_or(f64::NAN, |x| x.1)).collect();
        fill_flagged(p, &mut level, &flagged);
        fill_flagged(p, &mut slope, &flagged);
        Ok(Self { p: p.to_vec(), level, slope, flagged })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    /// Index of the nearest grid end when `p` lies outside the grid.
    pub fn nearest_end(&self, p: f64) -> Option<usize> {
        if p < self.p[0] {
            Some(0)
        } else if p > self.p[self.len() - 1] {
            Some(self.len() - 1)
        } else {
            None
        }
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

pub(crate) fn check_grid(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(MteError::GridMismatch("empty grid".into()));
    }
    if p.iter().any(|v| !v.is_finite()) || p.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MteError::GridMismatch("grid must be finite and strictly increasing".into()));
    }
    Ok(())
}

fn fill_flagged(p: &[f64], values: &mut [f64], flagged: &[bool]) {
    let good: Vec<usize> = (0..p.len()).filter(|&i| !flagged[i]).collect();
    for i in (0..p.len()).filter(|&i| flagged[i]) {
        let right = good.partition_point(|&g| g < i);
        values[i] = match (right.checked_sub(1).map(|k| good[k]), good.get(right)) {
            (Some(a), Some(&b)) => {
                let frac = (p[i] - p[a]) / (p[b] - p[a]);
                values[a] + frac * (values[b] - values[a])
            }
            (Some(a), None) => values[a],
            (None, Some(&b)) => values[b],
            (None, None) => f64::NAN,
        };
    }
}

/// `n` equally spaced points spanning `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Residuals `(P̂_i, Y_i - X_i'β)` of one arm (or the whole kept sample),
/// sorted by score, with the local-linear smoother that evaluates them.
#[derive(Debug, Clone)]
pub struct ResidualSmoother {
    scores: Vec<f64>,
    residuals: Vec<f64>,
    kernel: Kernel,
    bandwidth: f64,
}

impl ResidualSmoother {
    pub(crate) fn new(scores: Vec<f64>, residuals: Vec<f64>, kernel: Kernel, bandwidth: f64) -> Self {
        Self { scores, residuals, kernel, bandwidth }
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn score_range(&self) -> (f64, f64) {
        (self.scores[0], self.scores[self.scores.len() - 1])
    }

    /// Level and slope at `p`.
    pub fn eval(&self, p: f64) -> Result<(f64, f64)> {
        local_linear_at(&self.scores, &self.residuals, p, self.kernel, self.bandwidth)
    }

    pub fn curve(&self, grid: &[f64]) -> Result<CurveGrid> {
        let values: Vec<Result<(f64, f64)>> = grid.par_iter().map(|&p| self.eval(p)).collect();
        CurveGrid::from_points(grid, values)
    }
}

/// `(ĝ_d, ĝ_d^(1))` on `p_grid` from the local-linear regression of
/// `Y_i - X_i'β_d` on `P̂_i` within arm `arm`.
pub fn local_linear_g(
    sample: &Sample,
    fit: &PropensityFit,
    arm: bool,
    beta: &[f64],
    p_grid: &[f64],
    kernel: Kernel,
    h3: f64,
) -> Result<CurveGrid> {
    arm_smoother(sample, fit, arm, beta, kernel, h3)?.curve(p_grid)
}

pub(crate) fn arm_smoother(
    sample: &Sample,
    fit: &PropensityFit,
    arm: bool,
    beta: &[f64],
    kernel: Kernel,
    h3: f64,
) -> Result<ResidualSmoother> {
    if beta.len() != sample.dim() {
        return Err(MteError::InvalidArgument(format!(
            "beta has {} entries for {} covariates",
            beta.len(),
            sample.dim()
        )));
    }
    let rows = rows_by_score(fit, Some(arm));
    if rows.len() < 2 {
        return Err(MteError::InvalidSample(format!("arm {} has fewer than 2 kept rows", arm as u8)));
    }
    let mut x = Vec::with_capacity(sample.dim());
    let (scores, residuals): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .map(|&i| {
            sample.write_design_row(i, &mut x);
            let fitted: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
            (fit.scores()[i], sample.y()[i] - fitted)
        })
        .unzip();
    Ok(ResidualSmoother::new(scores, residuals, kernel, h3))
}

/// Parametric forms for `E[U_d | V = v]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family", content = "order")]
pub enum ParametricFamily {
    /// `Σ_{j=0}^{J} θ_j Φ⁻¹(v)^j`; `J = 1` is the normal selection model.
    NormalPolynomial(usize),
    /// `Σ_{j=0}^{J} θ_j v^j`.
    Polynomial(usize),
}

impl ParametricFamily {
    pub fn order(self) -> usize {
        match self {
            ParametricFamily::NormalPolynomial(j) | ParametricFamily::Polynomial(j) => j,
        }
    }

    /// Correction basis `E[b_j(V) | selection]` for j = 1..=J: `V ≤ p` for
    /// the treated arm and `V > p` for the untreated arm.
    pub fn correction_basis(self, arm: bool, p: f64) -> Vec<f64> {
        // selection on everything: unconditional moments
        if (arm && p >= 1.0) || (!arm && p <= 0.0) {
            return self.unconditional_moments();
        }
        match (self, arm) {
            (ParametricFamily::NormalPolynomial(j), true) => normal::lower_normal_moments(p, j),
            (ParametricFamily::NormalPolynomial(j), false) => normal::upper_normal_moments(p, j),
            (ParametricFamily::Polynomial(j), true) => normal::lower_power_moments(p, j),
            (ParametricFamily::Polynomial(j), false) => normal::upper_power_moments(p, j),
        }
    }

    /// `E[b_j(V)]` for j = 1..=J.
    fn unconditional_moments(self) -> Vec<f64> {
        match self {
            ParametricFamily::NormalPolynomial(j) => (1..=j)
                .map(|k| if k % 2 == 1 { 0.0 } else { (1..k).step_by(2).map(|m| m as f64).product() })
                .collect(),
            ParametricFamily::Polynomial(j) => (1..=j).map(|k| 1.0 / (k as f64 + 1.0)).collect(),
        }
    }

    /// `b_j(v)` for j = 1..=J.
    pub fn basis(self, v: f64) -> Vec<f64> {
        match self {
            ParametricFamily::NormalPolynomial(j) => {
                let z = normal::quantile(v);
                (1..=j).map(|k| z.powi(k as i32)).collect()
            }
            ParametricFamily::Polynomial(j) => (1..=j).map(|k| v.powi(k as i32)).collect(),
        }
    }
}

/// Parametric second step for one arm.
#[derive(Debug, Clone, Serialize)]
pub struct ParametricFit {
    pub family: ParametricFamily,
    pub arm: bool,
    pub beta: Vec<f64>,
    pub beta_se: Vec<f64>,
    /// `θ_0` (the arm intercept `α_d`) followed by `θ_1..θ_J`.
    pub theta: Vec<f64>,
    pub theta_se: Vec<f64>,
}

impl ParametricFit {
    /// `E[U_d | V = v]`.
    pub fn conditional_mean(&self, v: f64) -> f64 {
        self.theta[0] + dot(&self.theta[1..], &self.family.basis(v))
    }

    /// `g_d(p)`.
    pub fn control(&self, p: f64) -> f64 {
        self.theta[0] + dot(&self.theta[1..], &self.family.correction_basis(self.arm, p))
    }

    /// `g_d^(1)(p)`, from `E[U_1|V=p] = g_1 + p g_1'` and
    /// `E[U_0|V=p] = g_0 - (1-p) g_0'`.
    pub fn control_slope(&self, p: f64) -> f64 {
        let g = self.control(p);
        let m = self.conditional_mean(p);
        if self.arm {
            (m - g) / p
        } else {
            (g - m) / (1.0 - p)
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least squares of `Y` on `[X, 1, E[b_j(V) | selection at P̂]]` within one
/// arm, returning `(β_d, θ_d)` with classical standard errors.
pub fn parametric_second_step(
    sample: &Sample,
    fit: &PropensityFit,
    arm: bool,
    family: ParametricFamily,
) -> Result<ParametricFit> {
    let j = family.order();
    if j == 0 {
        return Err(MteError::InvalidArgument("parametric order J must be at least 1".into()));
    }
    let rows = rows_by_score(fit, Some(arm));
    let k = sample.dim();
    let width = k + 1 + j;
    let mut design = Vec::with_capacity(rows.len() * width);
    let mut y = Vec::with_capacity(rows.len());
    for &i in &rows {
        let p = fit.scores()[i];
        if !(p > 0.0 && p < 1.0) {
            return Err(MteError::DegenerateScore(format!(
                "score {p} at row {i} is on the boundary; trim before the parametric step"
            )));
        }
        design.extend(sample.design_row(i));
        design.push(1.0);
        design.extend(family.correction_basis(arm, p));
        y.push(sample.y()[i]);
    }
    let names: Vec<String> = sample
        .names()
        .iter()
        .cloned()
        .chain(std::iter::once("intercept".to_string()))
        .chain((1..=j).map(|q| format!("correction_{q}")))
        .collect();
    let ls = linalg::least_squares(&design, width, &y)
        .map_err(|bad| MteError::RankDeficient(bad.iter().map(|&c| names[c].clone()).collect()))?;
    Ok(ParametricFit {
        family,
        arm,
        beta: ls.coef[..k].to_vec(),
        beta_se: ls.se[..k].to_vec(),
        theta: ls.coef[k..].to_vec(),
        theta_se: ls.se[k..].to_vec(),
    })
}

/// How an arm's control function is represented.
#[derive(Debug, Clone)]
pub enum ControlModel {
    LocalLinear(ResidualSmoother),
    Parametric(ParametricFit),
}

/// Everything estimated for one treatment arm.
#[derive(Debug, Clone)]
pub struct ArmFit {
    pub arm: bool,
    pub beta: Vec<f64>,
    pub grid: CurveGrid,
    pub model: ControlModel,
}

impl ArmFit {
    /// `(ĝ_d(p), ĝ_d^(1)(p))` at any `p` the model can evaluate. Local-linear
    /// failures fall back to interpolating the grid.
    pub fn at(&self, p: f64) -> (f64, f64) {
        match &self.model {
            ControlModel::Parametric(fit) => (fit.control(p), fit.control_slope(p)),
            ControlModel::LocalLinear(smoother) => smoother
                .eval(p)
                .unwrap_or_else(|_| interpolate(&self.grid, p)),
        }
    }

    /// `ĝ_d(p)` under the boundary rule: a local-linear fit outside the
    /// grid takes the level at the nearest grid end, reported by the flag.
    pub fn boundary_value(&self, p: f64) -> (f64, bool) {
        match &self.model {
            ControlModel::Parametric(fit) => (fit.control(p.clamp(0.0, 1.0)), false),
            ControlModel::LocalLinear(_) => match self.grid.nearest_end(p) {
                Some(k) => (self.grid.level[k], true),
                None => (self.at(p).0, false),
            },
        }
    }

    /// `E[U_d | V = v]` recovered from the control function.
    pub fn conditional_mean(&self, v: f64) -> f64 {
        let (g, slope) = self.at(v);
        if self.arm {
            g + v * slope
        } else {
            g - (1.0 - v) * slope
        }
    }
}

pub(crate) fn interpolate(grid: &CurveGrid, p: f64) -> (f64, f64) {
    let n = grid.len();
    let k = grid.p.partition_point(|&v| v < p);
    if k == 0 {
        return (grid.level[0], grid.slope[0]);
    }
    if k >= n {
        return (grid.level[n - 1], grid.slope[n - 1]);
    }
    let frac = (p - grid.p[k - 1]) / (grid.p[k] - grid.p[k - 1]);
    (
        grid.level[k - 1] + frac * (grid.level[k] - grid.level[k - 1]),
        grid.slope[k - 1] + frac * (grid.slope[k] - grid.slope[k - 1]),
    )
}

/// Semiparametric arm fit: pairwise-difference `β̂_d`, then local-linear
/// `ĝ_d` on `grid`.
pub fn fit_arm_semiparametric(
    sample: &Sample,
    fit: &PropensityFit,
    arm: bool,
    config: &SecondStepConfig,
    h2: f64,
    h3: f64,
    grid: &[f64],
) -> Result<ArmFit> {
    let beta = pairwise_difference_beta(sample, fit, arm, config.pair_kernel, h2)?;
    let smoother = arm_smoother(sample, fit, arm, &beta, config.local_kernel, h3)?;
    let curve = smoother.curve(grid)?;
    let flagged = curve.flagged.iter().filter(|&&f| f).count();
    if flagged > 0 {
        log::warn!("arm {}: {flagged} singular grid point(s) interpolated", arm as u8);
    }
    Ok(ArmFit { arm, beta, grid: curve, model: ControlModel::LocalLinear(smoother) })
}

/// Parametric arm fit with its control function tabulated on `grid`.
pub fn fit_arm_parametric(
    sample: &Sample,
    fit: &PropensityFit,
    arm: bool,
    family: ParametricFamily,
    grid: &[f64],
) -> Result<ArmFit> {
    check_grid(grid)?;
    let pf = parametric_second_step(sample, fit, arm, family)?;
    let level = grid.iter().map(|&p| pf.control(p)).collect();
    let slope = grid.iter().map(|&p| pf.control_slope(p)).collect();
    let curve = CurveGrid { p: grid.to_vec(), level, slope, flagged: vec![false; grid.len()] };
    Ok(ArmFit { arm, beta: pf.beta.clone(), grid: curve, model: ControlModel::Parametric(pf) })
}
