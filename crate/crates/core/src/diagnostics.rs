//! Empirical checks of the nonlinearity conditions on the propensity score.
//!
//! All checks work on a cell-wise slice `π_0(x^C) = π(x^C, x^D = key)` and
//! only evaluate the score function, so they apply equally to a fitted
//! propensity and to the exact propensity of a simulation design.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_cells, Cell, Sample};
use crate::error::{MteError, Result};
use crate::inference::bootstrap;
use crate::propensity::{fit_propensity, HistogramBin, PropensityConfig, PropensityFit};
use crate::separate::{local_linear_at, uniform_grid, CurveGrid};
use crate::simulate::PropensityLaw;
use crate::smoothing::{std_dev, Kernel};

/// Anything that maps covariates to a treatment probability.
pub trait ScoreFunction: Sync {
    fn score(&self, x_cont: &[f64], x_disc: &[i64]) -> Result<f64>;
}

impl ScoreFunction for PropensityFit {
    fn score(&self, x_cont: &[f64], x_disc: &[i64]) -> Result<f64> {
        self.evaluate(x_cont, x_disc)
    }
}

impl ScoreFunction for PropensityLaw {
    fn score(&self, x_cont: &[f64], x_disc: &[i64]) -> Result<f64> {
        Ok(self.eval(x_cont, x_disc))
    }
}

/// Where in covariate space a cell's slice is examined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellView {
    pub key: Vec<i64>,
    pub size: usize,
    /// Cell means of the continuous covariates.
    pub center: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl CellView {
    pub fn new(sample: &Sample, cell: &Cell) -> Result<Self> {
        if cell.is_empty() {
            return Err(MteError::InvalidSample("empty cell".into()));
        }
        let p = sample.n_cont();
        let mut center = vec![0.0; p];
        let mut lo = vec![f64::INFINITY; p];
        let mut hi = vec![f64::NEG_INFINITY; p];
        for &i in &cell.row_indices {
            for (l, &v) in sample.cont_row(i).iter().enumerate() {
                center[l] += v / cell.len() as f64;
                lo[l] = lo[l].min(v);
                hi[l] = hi[l].max(v);
            }
        }
        Ok(Self { key: cell.key.clone(), size: cell.len(), center, lo, hi })
    }

    /// The cell with the most rows (ties go to the smallest key).
    pub fn largest(sample: &Sample) -> Result<Self> {
        let cells = split_cells(sample);
        let best = cells
            .iter()
            .fold(None::<&Cell>, |best, c| match best {
                Some(b) if b.len() >= c.len() => Some(b),
                _ => Some(c),
            })
            .ok_or_else(|| MteError::EmptySample("no cells".into()))?;
        Self::new(sample, best)
    }

    pub fn with_key(sample: &Sample, key: &[i64]) -> Result<Self> {
        let cells = split_cells(sample);
        let cell = cells
            .iter()
            .find(|c| c.key == key)
            .ok_or_else(|| MteError::InvalidArgument(format!("no rows with discrete covariates {key:?}")))?;
        Self::new(sample, cell)
    }

    fn require(&self, min_size: usize, dims: &[usize]) -> Result<()> {
        if self.size < min_size {
            return Err(MteError::InvalidSample(format!(
                "cell {:?} has {} rows, need at least {min_size}",
                self.key, self.size
            )));
        }
        for &k in dims {
            if k >= self.center.len() {
                return Err(MteError::InvalidArgument(format!(
                    "continuous covariate {k} out of range ({} available)",
                    self.center.len()
                )));
            }
            if !(self.hi[k] > self.lo[k]) {
                return Err(MteError::InvalidSample(format!("continuous covariate {k} is constant in the cell")));
            }
        }
        Ok(())
    }

    /// The center with coordinate `k` replaced by `value`.
    fn point(&self, k: usize, value: f64) -> Vec<f64> {
        let mut x = self.center.clone();
        x[k] = value;
        x
    }

    /// Grid over the interior of coordinate `k`, excluding `margin` of the
    /// range at each end.
    fn axis_grid(&self, k: usize, points: usize, margin: f64) -> Vec<f64> {
        let span = self.hi[k] - self.lo[k];
        uniform_grid(self.lo[k] + margin * span, self.hi[k] - margin * span, points)
    }
}

/// Settings shared by all checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticConfig {
    /// Score tolerance for level matching and monotonicity.
    pub tolerance: f64,
    /// Tolerance below which a derivative counts as zero.
    pub slope_tolerance: f64,
    pub grid_points: usize,
    /// Share of each covariate range left out at both ends.
    pub margin: f64,
    /// Half-width of the derivative stencil as a share of the covariate range.
    pub stencil: f64,
    pub min_cell_size: usize,
}

impl Default for DiagnosticConfig {
    fn default() -> Self {
        Self { tolerance: 0.02, slope_tolerance: 0.02, grid_points: 201, margin: 0.05, stencil: 0.02, min_cell_size: 10 }
    }
}

/// Local-linear slope of `t ↦ π(x + t e_k)` on a symmetric 9-point stencil
/// of half-width `step`.
pub fn partial_derivative(
    score: &dyn ScoreFunction,
    x_cont: &[f64],
    key: &[i64],
    k: usize,
    step: f64,
) -> Result<f64> {
    const HALF: usize = 4;
    let t: Vec<f64> = (0..=2 * HALF).map(|i| step * (i as f64 - HALF as f64) / HALF as f64).collect();
    let mut x = x_cont.to_vec();
    let mut values = Vec::with_capacity(t.len());
    for &ti in &t {
        x[k] = x_cont[k] + ti;
        values.push(score.score(&x, key)?);
    }
    local_linear_at(&t, &values, 0.0, Kernel::Epanechnikov, step * 1.25).map(|(_, slope)| slope)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Nl1Finding {
    pub covariate: usize,
    pub detected: bool,
    /// Every evaluated score is the same.
    pub degenerate: bool,
    /// Two different covariate values with (nearly) equal scores.
    pub witness: Option<[f64; 2]>,
    pub witness_scores: Option<[f64; 2]>,
    pub score_gap: Option<f64>,
    /// Turning point that separates the witnesses.
    pub turning_point: Option<f64>,
    /// `(x, π̂_0(x))` over the grid.
    pub curve: Vec<[f64; 2]>,
    pub tolerance: f64,
}

fn score_curve(score: &dyn ScoreFunction, view: &CellView, k: usize, grid: &[f64]) -> Result<Vec<f64>> {
    grid.par_iter().map(|&x| score.score(&view.point(k, x), &view.key)).collect()
}

/// Level of `π` inside `[a, b]` located by bisection between a point below
/// and a point above `level`.
fn bisect(f: impl Fn(f64) -> Result<f64>, mut below: f64, mut above: f64, level: f64) -> Result<f64> {
    for _ in 0..60 {
        let mid = 0.5 * (below + above);
        if f(mid)? < level {
            below = mid;
        } else {
            above = mid;
        }
    }
    Ok(0.5 * (below + above))
}

/// Nonmonotonicity of `π_0` along covariate `k`: grid points `a < b < c`
/// with `(π(b) - π(a))(π(c) - π(b)) < -tol²`, plus a level-matched witness
/// pair on either side of the turning point.
pub fn check_nl1(
    score: &dyn ScoreFunction,
    view: &CellView,
    k: usize,
    config: &DiagnosticConfig,
) -> Result<Nl1Finding> {
    view.require(config.min_cell_size, &[k])?;
    let tol = config.tolerance;
    let grid = view.axis_grid(k, config.grid_points.max(3), 0.0);
    let values = score_curve(score, view, k, &grid)?;
    let curve: Vec<[f64; 2]> = grid.iter().zip(&values).map(|(&x, &p)| [x, p]).collect();
    let base = Nl1Finding {
        covariate: k,
        detected: false,
        degenerate: false,
        witness: None,
        witness_scores: None,
        score_gap: None,
        turning_point: None,
        curve,
        tolerance: tol,
    };
    let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if max - min <= 1e-12 {
        return Ok(Nl1Finding {
            detected: true,
            degenerate: true,
            witness: Some([grid[0], grid[grid.len() - 1]]),
            witness_scores: Some([values[0], values[values.len() - 1]]),
            score_gap: Some((values[0] - values[values.len() - 1]).abs()),
            ..base
        });
    }

    // for each b: largest rise from the left and fall to the right, for
    // peaks (sign +1) and troughs (sign -1)
    let m = values.len();
    let mut best: Option<(f64, usize, f64)> = None;
    for sign in [1.0, -1.0] {
        let s: Vec<f64> = values.iter().map(|v| sign * v).collect();
        let mut prefix_min = vec![f64::INFINITY; m];
        let mut suffix_min = vec![f64::INFINITY; m];
        for b in 1..m {
            prefix_min[b] = prefix_min[b - 1].min(s[b - 1]);
        }
        for b in (0..m - 1).rev() {
            suffix_min[b] = suffix_min[b + 1].min(s[b + 1]);
        }
        for b in 1..m - 1 {
            let rise = s[b] - prefix_min[b];
            let fall = s[b] - suffix_min[b];
            if rise > 0.0 && fall > 0.0 && rise * fall > tol * tol {
                let depth = rise.min(fall);
                if best.is_none_or(|(d, _, _)| depth > d) {
                    best = Some((depth, b, sign));
                }
            }
        }
    }
    let Some((depth, b, sign)) = best else {
        return Ok(base);
    };

    // level-matched pair on both sides of the turning point
    let level = sign * (sign * values[b] - depth / 2.0);
    let f = |x: f64| score.score(&view.point(k, x), &view.key).map(|p| sign * p);
    let target = sign * level;
    let left = (0..b).rev().find(|&a| sign * values[a] < target).expect("rise below the level");
    let right = (b + 1..m).find(|&c| sign * values[c] < target).expect("fall below the level");
    let x_left = bisect(f, grid[left], grid[b], target)?;
    let x_right = bisect(f, grid[right], grid[b], target)?;
    let p_left = score.score(&view.point(k, x_left), &view.key)?;
    let p_right = score.score(&view.point(k, x_right), &view.key)?;
    let gap = (p_left - p_right).abs();
    Ok(Nl1Finding {
        detected: gap <= tol,
        witness: Some([x_left, x_right]),
        witness_scores: Some([p_left, p_right]),
        score_gap: Some(gap),
        turning_point: Some(grid[b]),
        ..base
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Nl2Finding {
    pub k: usize,
    pub j: usize,
    pub points: [Vec<f64>; 2],
    /// `[[∂_k π(x), ∂_j π(x)], [∂_k π(x̃), ∂_j π(x̃)]]`.
    pub derivatives: [[f64; 2]; 2],
    /// `∂_k π / ∂_j π` at both points, when both clauses on `∂_j` hold.
    pub ratios: [Option<f64>; 2],
    /// Clauses (i)–(v).
    pub clauses: [bool; 5],
    pub detected: bool,
}

/// Points `x`, `x̃` at a quarter and three quarters of the ranges of `k`
/// and `j`, crossed.
pub fn default_nl2_points(view: &CellView, k: usize, j: usize) -> [Vec<f64>; 2] {
    let at = |l: usize, q: f64| view.lo[l] + q * (view.hi[l] - view.lo[l]);
    let mut a = view.center.clone();
    let mut b = view.center.clone();
    a[k] = at(k, 0.25);
    a[j] = at(j, 0.75);
    b[k] = at(k, 0.75);
    b[j] = at(j, 0.25);
    [a, b]
}

/// Partial derivatives of `π_0` in directions `k` and `j` at two points and
/// clauses (i)–(v) of the gradient-ratio condition.
pub fn check_nl2(
    score: &dyn ScoreFunction,
    view: &CellView,
    k: usize,
    j: usize,
    points: &[Vec<f64>; 2],
    config: &DiagnosticConfig,
) -> Result<Nl2Finding> {
    if view.center.len() < 2 {
        return Err(MteError::InvalidArgument("the gradient-ratio check needs two continuous covariates".into()));
    }
    if k == j {
        return Err(MteError::InvalidArgument("k and j must differ".into()));
    }
    view.require(config.min_cell_size, &[k, j])?;
    for p in points {
        if p.len() != view.center.len() {
            return Err(MteError::InvalidArgument(format!(
                "evaluation point has {} entries for {} continuous covariates",
                p.len(),
                view.center.len()
            )));
        }
    }
    let step = |l: usize| config.stencil * (view.hi[l] - view.lo[l]);
    let mut derivatives = [[0.0; 2]; 2];
    for (q, p) in points.iter().enumerate() {
        derivatives[q][0] = partial_derivative(score, p, &view.key, k, step(k))?;
        derivatives[q][1] = partial_derivative(score, p, &view.key, j, step(j))?;
    }
    let tol = config.slope_tolerance;
    let nonzero = |v: f64| v.abs() > tol;
    let c = [
        nonzero(derivatives[0][0]),
        nonzero(derivatives[0][1]),
        nonzero(derivatives[1][0]),
        nonzero(derivatives[1][1]),
    ];
    let ratios = [
        c[1].then(|| derivatives[0][0] / derivatives[0][1]),
        c[3].then(|| derivatives[1][0] / derivatives[1][1]),
    ];
    let fifth = match ratios {
        [Some(a), Some(b)] => (a - b).abs() > config.tolerance,
        _ => false,
    };
    let clauses = [c[0], c[1], c[2], c[3], fifth];
    Ok(Nl2Finding {
        k,
        j,
        points: points.clone(),
        derivatives,
        ratios,
        clauses,
        detected: clauses.iter().all(|&x| x),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryFinding {
    pub covariate: usize,
    pub detected: bool,
    pub degenerate: bool,
    /// Where the slope is smallest in magnitude or changes sign.
    pub location: Option<f64>,
    pub slope_at_location: Option<f64>,
    /// Largest slope magnitude on the grid.
    pub max_abs_slope: f64,
    pub slopes: Vec<[f64; 2]>,
}

/// Stationary point of `π_0` along covariate `k`: a sign change of the
/// local-linear slope or a slope within `slope_tolerance` of zero.
pub fn check_stationary(
    score: &dyn ScoreFunction,
    view: &CellView,
    k: usize,
    config: &DiagnosticConfig,
) -> Result<StationaryFinding> {
    view.require(config.min_cell_size, &[k])?;
    let step = config.stencil * (view.hi[k] - view.lo[k]);
    let grid = view.axis_grid(k, config.grid_points.max(3), config.margin.max(config.stencil));
    let slopes: Vec<f64> = grid
        .par_iter()
        .map(|&x| partial_derivative(score, &view.point(k, x), &view.key, k, step))
        .collect::<Result<_>>()?;
    let max_abs_slope = slopes.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let table: Vec<[f64; 2]> = grid.iter().zip(&slopes).map(|(&x, &s)| [x, s]).collect();
    if max_abs_slope <= 1e-12 {
        return Ok(StationaryFinding {
            covariate: k,
            detected: true,
            degenerate: true,
            location: Some(grid[0]),
            slope_at_location: Some(slopes[0]),
            max_abs_slope,
            slopes: table,
        });
    }
    let crossing = (1..slopes.len()).find(|&i| slopes[i - 1] * slopes[i] < 0.0).map(|i| {
        // linear interpolation of the zero
        let (s0, s1) = (slopes[i - 1], slopes[i]);
        grid[i - 1] + (grid[i] - grid[i - 1]) * s0 / (s0 - s1)
    });
    let (argmin, min_abs) = slopes
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, s)| if s.abs() < bv { (i, s.abs()) } else { (bi, bv) });
    let (detected, location, slope) = match crossing {
        Some(x) => (true, Some(x), Some(0.0)),
        None if min_abs <= config.slope_tolerance => (true, Some(grid[argmin]), Some(slopes[argmin])),
        None => (false, None, None),
    };
    Ok(StationaryFinding {
        covariate: k,
        detected,
        degenerate: false,
        location,
        slope_at_location: slope,
        max_abs_slope,
        slopes: table,
    })
}

/// Findings for the variants that replace the main nonlinearity condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantFindings {
    /// Level-matched pair along covariate `k` with the others fixed and a
    /// nonzero `∂_k π` somewhere, per covariate.
    pub axis_level_match: Vec<bool>,
    /// Zero and nonzero `∂_k π` along covariate `k`, per covariate.
    pub axis_stationary: Vec<bool>,
    /// Score values at which both control-function slopes vanish, when arm
    /// fits are supplied and the slice attains them.
    pub flat_controls: Option<Vec<f64>>,
}

/// Score values in `[lo, hi]` where both `|g_0'|` and `|g_1'|` are within
/// `tol` of zero.
pub fn flat_control_points(g0: &CurveGrid, g1: &CurveGrid, lo: f64, hi: f64, tol: f64) -> Vec<f64> {
    g0.p.iter()
        .zip(g0.slope.iter().zip(&g1.slope))
        .filter(|(p, (a, b))| (lo..=hi).contains(*p) && a.abs() <= tol && b.abs() <= tol)
        .map(|(p, _)| *p)
        .collect()
}

/// Common support and trimming summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportReport {
    pub support: (f64, f64),
    pub untreated_range: Option<(f64, f64)>,
    pub treated_range: Option<(f64, f64)>,
    pub kept: usize,
    pub trimmed_lower: usize,
    pub trimmed_upper: usize,
    pub dropped_cells: Vec<Vec<i64>>,
    pub histogram: Vec<HistogramBin>,
}

pub fn support_report(fit: &PropensityFit, bins: usize) -> SupportReport {
    let (trimmed_lower, trimmed_upper) = fit.trimmed_counts();
    SupportReport {
        support: fit.support(),
        untreated_range: fit.arm_range(false),
        treated_range: fit.arm_range(true),
        kept: fit.kept_rows().len(),
        trimmed_lower,
        trimmed_upper,
        dropped_cells: fit.dropped_cells().to_vec(),
        histogram: fit.histogram(bins),
    }
}

/// Everything the diagnose command reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticReport {
    pub cell: Vec<i64>,
    pub cell_size: usize,
    pub tolerance: f64,
    pub slope_tolerance: f64,
    pub nl1: Vec<Nl1Finding>,
    pub nl2: Option<Nl2Finding>,
    pub stationary: Vec<StationaryFinding>,
    pub variants: VariantFindings,
    pub support: Option<SupportReport>,
    /// Some nonlinearity condition (main or variant) is detected.
    pub identified: bool,
    pub notes: Vec<String>,
}

/// Runs every applicable check on one cell. With one continuous covariate
/// the level-matching and stationary-point checks apply; with two or more
/// the gradient-ratio check on covariates 0 and 1 plus the per-axis variants.
pub fn diagnose(
    score: &dyn ScoreFunction,
    view: &CellView,
    config: &DiagnosticConfig,
    controls: Option<(&CurveGrid, &CurveGrid)>,
) -> Result<DiagnosticReport> {
    let p = view.center.len();
    let mut notes = Vec::new();
    let mut nl1 = Vec::new();
    let mut stationary = Vec::new();
    let mut axis_level_match = Vec::new();
    let mut axis_stationary = Vec::new();
    for k in 0..p {
        if !(view.hi[k] > view.lo[k]) {
            notes.push(format!("continuous covariate {k} is constant in cell {:?}", view.key));
            axis_level_match.push(false);
            axis_stationary.push(false);
            continue;
        }
        let level = check_nl1(score, view, k, config)?;
        let flat = check_stationary(score, view, k, config)?;
        let moving = flat.max_abs_slope > config.slope_tolerance;
        axis_level_match.push(level.detected && moving);
        axis_stationary.push(flat.detected && moving);
        if level.degenerate {
            notes.push(format!("degenerate: constant score along covariate {k}"));
        }
        nl1.push(level);
        stationary.push(flat);
    }
    let nl2 = if p >= 2 && view.hi[0] > view.lo[0] && view.hi[1] > view.lo[1] {
        Some(check_nl2(score, view, 0, 1, &default_nl2_points(view, 0, 1), config)?)
    } else {
        None
    };
    let flat_controls = controls.map(|(g0, g1)| {
        let scores: Vec<f64> = nl1.iter().flat_map(|f| f.curve.iter().map(|c| c[1])).collect();
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        flat_control_points(g0, g1, lo, hi, config.slope_tolerance)
    });
    let identified = match p {
        0 => {
            notes.push("no continuous covariates: the nonlinearity checks do not apply".into());
            false
        }
        1 => nl1[0].detected || stationary[0].detected,
        _ => {
            nl2.as_ref().is_some_and(|f| f.detected)
                || axis_level_match.iter().any(|&b| b)
                || axis_stationary.iter().any(|&b| b)
                || flat_controls.as_ref().is_some_and(|v| !v.is_empty())
        }
    };
    Ok(DiagnosticReport {
        cell: view.key.clone(),
        cell_size: view.size,
        tolerance: config.tolerance,
        slope_tolerance: config.slope_tolerance,
        nl1,
        nl2,
        stationary,
        variants: VariantFindings { axis_level_match, axis_stationary, flat_controls },
        support: None,
        identified,
        notes,
    })
}

/// Bootstrap tolerances: twice the median standard error of `π̂_0` and of
/// `∂_k π̂_0` over the level-matching grid of covariate `k`, refitting the
/// propensity score on each resample.
pub fn bootstrap_tolerances(
    sample: &Sample,
    propensity: &PropensityConfig,
    view: &CellView,
    k: usize,
    config: &DiagnosticConfig,
    replications: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    view.require(config.min_cell_size, &[k])?;
    let points = 21;
    let grid = view.axis_grid(k, points, config.margin.max(config.stencil));
    let step = config.stencil * (view.hi[k] - view.lo[k]);
    let result = bootstrap(sample.len(), replications, seed, 0.9, |rows| {
        let resampled = sample.select_rows(rows)?;
        let fit = fit_propensity(&resampled, propensity)?;
        let mut out = Vec::with_capacity(2 * points);
        for &x in &grid {
            out.push(fit.score(&view.point(k, x), &view.key)?);
        }
        for &x in &grid {
            out.push(partial_derivative(&fit, &view.point(k, x), &view.key, k, step)?);
        }
        Ok(out)
    })?;
    let median = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        crate::smoothing::quantile_sorted(&s, 0.5)
    };
    Ok((2.0 * median(&result.se[..points]), 2.0 * median(&result.se[points..])))
}

/// Spread of the scores, used to sanity-check tolerances.
pub fn score_spread(fit: &PropensityFit) -> f64 {
    let kept: Vec<f64> = fit.kept_rows().iter().map(|&i| fit.scores()[i]).collect();
    if kept.len() < 2 {
        0.0
    } else {
        std_dev(&kept)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view_1d(lo: f64, hi: f64) -> CellView {
        CellView { key: vec![], size: 1000, center: vec![0.5 * (lo + hi)], lo: vec![lo], hi: vec![hi] }
    }

    fn view_2d() -> CellView {
        CellView { key: vec![], size: 1000, center: vec![0.0, 0.0], lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0] }
    }

    #[test]
    fn sine_is_nonmonotone_with_witness() {
        let law = PropensityLaw::Sine { amplitude: 0.4, disc_shift: 0.0 };
        let f = check_nl1(&law, &view_1d(0.0, 2.0 * std::f64::consts::PI), 0, &DiagnosticConfig::default()).unwrap();
        assert!(f.detected && !f.degenerate);
        let [a, b] = f.witness.unwrap();
        assert!((a - b).abs() > 0.5);
        assert!(f.score_gap.unwrap() < 1e-9);
    }

    #[test]
    fn probit_is_monotone() {
        let law = PropensityLaw::Probit { intercept: 0.0, slope: 1.0, disc_shift: 0.0 };
        let f = check_nl1(&law, &view_1d(-2.0, 2.0), 0, &DiagnosticConfig::default()).unwrap();
        assert!(!f.detected);
        assert!(f.witness.is_none());
        let s = check_stationary(&law, &view_1d(-2.0, 2.0), 0, &DiagnosticConfig::default()).unwrap();
        assert!(!s.detected);
    }

    #[test]
    fn constant_score_is_degenerate() {
        let law = PropensityLaw::Constant { p: 0.4 };
        let cfg = DiagnosticConfig::default();
        let f = check_nl1(&law, &view_1d(0.0, 1.0), 0, &cfg).unwrap();
        assert!(f.detected && f.degenerate);
        let s = check_stationary(&law, &view_1d(0.0, 1.0), 0, &cfg).unwrap();
        assert!(s.detected && s.degenerate);
    }

    #[test]
    fn cubic_has_stationary_point_at_zero() {
        let s = check_stationary(&PropensityLaw::CubicStationary, &view_1d(-1.5, 1.5), 0, &DiagnosticConfig::default())
            .unwrap();
        assert!(s.detected);
        assert!(s.location.unwrap().abs() < 0.1, "{:?}", s.location);
    }

    #[test]
    fn interaction_ratio_matches_formula() {
        let (g1, g2, g3) = (0.8, 0.6, 1.0);
        let law = PropensityLaw::Index { gamma1: g1, gamma2: g2, gamma3: g3 };
        let view = view_2d();
        let points = default_nl2_points(&view, 0, 1);
        let f = check_nl2(&law, &view, 0, 1, &points, &DiagnosticConfig::default()).unwrap();
        assert!(f.detected);
        for (q, p) in points.iter().enumerate() {
            let expected = (g1 + g3 * p[1]) / (g2 + g3 * p[0]);
            let got = f.ratios[q].unwrap();
            assert!((got - expected).abs() < 1e-3 * expected.abs(), "{got} vs {expected}");
        }
    }

    #[test]
    fn single_index_ratio_is_constant() {
        let law = PropensityLaw::Index { gamma1: 0.8, gamma2: 0.6, gamma3: 0.0 };
        let view = view_2d();
        let f = check_nl2(&law, &view, 0, 1, &default_nl2_points(&view, 0, 1), &DiagnosticConfig::default()).unwrap();
        assert!(!f.detected);
        assert!(f.clauses[..4].iter().all(|&c| c));
        assert!((f.ratios[0].unwrap() - 0.8 / 0.6).abs() < 1e-4);
    }

    #[test]
    fn zero_partial_fails_clauses() {
        // π depends on x1 only: ∂_2 π = 0 everywhere
        let law = PropensityLaw::Index { gamma1: 0.8, gamma2: 0.0, gamma3: 0.0 };
        let view = view_2d();
        let f = check_nl2(&law, &view, 0, 1, &default_nl2_points(&view, 0, 1), &DiagnosticConfig::default()).unwrap();
        assert!(!f.clauses[1] && !f.clauses[3]);
        assert!(!f.detected);
        assert_eq!(f.ratios, [None, None]);
    }

    #[test]
    fn single_index_ratio_equal_for_any_stencil() {
        let law = PropensityLaw::Index { gamma1: 0.8, gamma2: 0.6, gamma3: 0.0 };
        let view = view_2d();
        let gaps: Vec<f64> = [0.2, 0.1, 0.05, 0.02]
            .iter()
            .map(|&stencil| {
                let cfg = DiagnosticConfig { stencil, ..Default::default() };
                let f = check_nl2(&law, &view, 0, 1, &default_nl2_points(&view, 0, 1), &cfg).unwrap();
                (f.ratios[0].unwrap() - f.ratios[1].unwrap()).abs()
            })
            .collect();
        assert!(gaps.iter().all(|&g| g < 1e-8), "{gaps:?}");
    }

    #[test]
    fn report_for_one_covariate() {
        let law = PropensityLaw::Sine { amplitude: 0.4, disc_shift: 0.0 };
        let r = diagnose(&law, &view_1d(0.0, 6.0), &DiagnosticConfig::default(), None).unwrap();
        assert!(r.identified);
        assert_eq!(r.nl1.len(), 1);
        assert!(r.nl2.is_none());
    }

    #[test]
    fn too_small_cell_is_an_error() {
        let mut view = view_1d(0.0, 1.0);
        view.size = 3;
        let law = PropensityLaw::Constant { p: 0.3 };
        assert!(check_nl1(&law, &view, 0, &DiagnosticConfig::default()).is_err());
    }
}
