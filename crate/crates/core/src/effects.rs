//! MTE curves, causal parameters and marginal functions assembled from
//! fitted components.

use serde::Serialize;

use crate::error::{MteError, Result};
use crate::propensity::PropensityFit;
use crate::data::Sample;
use crate::separate::CurveGrid;

/// `Δ̂(x, v)` on a grid of `v`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MteCurve {
    pub v: Vec<f64>,
    pub values: Vec<f64>,
    pub profile: Vec<f64>,
    /// Grid points whose inputs were interpolated.
    pub flagged: Vec<bool>,
}

/// Scalar causal parameters at one covariate profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CausalSummary {
    pub ate: f64,
    pub tt: f64,
    pub tut: f64,
    pub late: f64,
    pub pi_x: f64,
    pub v1: f64,
    pub v2: f64,
    pub profile: Vec<f64>,
    /// Some required control-function value lay outside the fitted support.
    pub extrapolated: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn difference(beta0: &[f64], beta1: &[f64]) -> Vec<f64> {
    beta1.iter().zip(beta0).map(|(b1, b0)| b1 - b0).collect()
}

fn check_profile(x: &[f64], k: usize) -> Result<()> {
    if x.len() != k {
        return Err(MteError::InvalidArgument(format!("profile has {} entries for {k} coefficients", x.len())));
    }
    Ok(())
}

fn check_parameters(pi_x: f64, v1: f64, v2: f64) -> Result<()> {
    if !(pi_x > 0.0 && pi_x < 1.0) {
        return Err(MteError::InvalidArgument(format!("π(x) = {pi_x} must lie strictly inside (0, 1)")));
    }
    if !(0.0..=1.0).contains(&v1) || !(0.0..=1.0).contains(&v2) || v1 >= v2 {
        return Err(MteError::InvalidArgument(format!("LATE bounds need 0 ≤ v1 < v2 ≤ 1, got {v1}, {v2}")));
    }
    Ok(())
}

/// `Δ̂ = x'(β_1 - β_0) + [g_1 - g_0] + v g_1' + (1 - v) g_0'` on the shared grid.
pub fn assemble_mte(beta0: &[f64], beta1: &[f64], g0: &CurveGrid, g1: &CurveGrid, x: &[f64]) -> Result<MteCurve> {
    if beta0.len() != beta1.len() {
        return Err(MteError::InvalidArgument("β_0 and β_1 differ in length".into()));
    }
    check_profile(x, beta0.len())?;
    if g0.p != g1.p || g0.level.len() != g0.len() || g1.level.len() != g1.len() {
        return Err(MteError::GridMismatch("control functions are tabulated on different grids".into()));
    }
    let base = dot(x, &difference(beta0, beta1));
    let values = (0..g0.len())
        .map(|k| {
            let v = g0.p[k];
            base + (g1.level[k] - g0.level[k]) + v * g1.slope[k] + (1.0 - v) * g0.slope[k]
        })
        .collect();
    let flagged = g0.flagged.iter().zip(&g1.flagged).map(|(a, b)| *a || *b).collect();
    Ok(MteCurve { v: g0.p.clone(), values, profile: x.to_vec(), flagged })
}

/// LIV curve `x'δ̂ + q̂'(v)`.
pub fn liv_mte(delta: &[f64], curve: &CurveGrid, x: &[f64]) -> Result<MteCurve> {
    check_profile(x, delta.len())?;
    let base = dot(x, delta);
    Ok(MteCurve {
        v: curve.p.clone(),
        values: curve.slope.iter().map(|s| base + s).collect(),
        profile: x.to_vec(),
        flagged: curve.flagged.clone(),
    })
}

/// `w·g` with the convention `0·g = 0`, so control functions need not be
/// finite where their weight vanishes.
fn weighted(w: f64, g: impl FnOnce() -> f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w * g()
    }
}

/// ATE, TT, TUT and LATE from the two control functions:
///
/// * `ATE = x'δ + g_1(1) - g_0(0)`
/// * `TT = x'δ + g_1(π) + [(1 - π) g_0(π) - g_0(0)] / π`
/// * `TUT = x'δ + [g_1(1) - π g_1(π)] / (1 - π) - g_0(π)`
/// * `LATE = x'δ + [v_2 g_1(v_2) - v_1 g_1(v_1) + (1 - v_2) g_0(v_2) - (1 - v_1) g_0(v_1)] / (v_2 - v_1)`
///
/// `g0` and `g1` return the value and whether it was extrapolated.
#[allow(clippy::too_many_arguments)]
pub fn causal_params(
    beta0: &[f64],
    beta1: &[f64],
    g0: impl Fn(f64) -> (f64, bool),
    g1: impl Fn(f64) -> (f64, bool),
    x: &[f64],
    pi_x: f64,
    v1: f64,
    v2: f64,
) -> Result<CausalSummary> {
    if beta0.len() != beta1.len() {
        return Err(MteError::InvalidArgument("β_0 and β_1 differ in length".into()));
    }
    check_profile(x, beta0.len())?;
    check_parameters(pi_x, v1, v2)?;
    let mut extrapolated = false;
    let mut eval0 = |p: f64| {
        let (g, e) = g0(p);
        extrapolated |= e;
        g
    };
    let g0_zero = eval0(0.0);
    let g0_pi = eval0(pi_x);
    let g0_v1 = if v1 < 1.0 { eval0(v1) } else { 0.0 };
    let g0_v2 = if v2 < 1.0 { eval0(v2) } else { 0.0 };
    let mut ext1 = false;
    let mut eval1 = |p: f64| {
        let (g, e) = g1(p);
        ext1 |= e;
        g
    };
    let g1_one = eval1(1.0);
    let g1_pi = eval1(pi_x);
    let g1_v1 = if v1 > 0.0 { eval1(v1) } else { 0.0 };
    let g1_v2 = eval1(v2);
    let extrapolated = extrapolated || ext1;

    let base = dot(x, &difference(beta0, beta1));
    let ate = base + g1_one - g0_zero;
    let tt = base + g1_pi + ((1.0 - pi_x) * g0_pi - g0_zero) / pi_x;
    let tut = base + (g1_one - pi_x * g1_pi) / (1.0 - pi_x) - g0_pi;
    let late = base
        + (v2 * g1_v2 - weighted(v1, || g1_v1) + weighted(1.0 - v2, || g0_v2) - (1.0 - v1) * g0_v1)
            / (v2 - v1);
    Ok(CausalSummary { ate, tt, tut, late, pi_x, v1, v2, profile: x.to_vec(), extrapolated })
}

/// LIV parameters from `r̂`:
/// `ATE = x'δ + r(1) - r(0)`, `TT = x'δ + [r(π) - r(0)] / π`,
/// `TUT = x'δ + [r(1) - r(π)] / (1 - π)`, `LATE = x'δ + [r(v_2) - r(v_1)] / (v_2 - v_1)`.
pub fn liv_causal_params(
    delta: &[f64],
    r: impl Fn(f64) -> (f64, bool),
    x: &[f64],
    pi_x: f64,
    v1: f64,
    v2: f64,
) -> Result<CausalSummary> {
    check_profile(x, delta.len())?;
    check_parameters(pi_x, v1, v2)?;
    let mut extrapolated = false;
    let mut eval = |p: f64| {
        let (value, e) = r(p);
        extrapolated |= e;
        value
    };
    let (r0, r1, r_pi, r_v1, r_v2) = (eval(0.0), eval(1.0), eval(pi_x), eval(v1), eval(v2));
    let base = dot(x, delta);
    Ok(CausalSummary {
        ate: base + r1 - r0,
        tt: base + (r_pi - r0) / pi_x,
        tut: base + (r1 - r_pi) / (1.0 - pi_x),
        late: base + (r_v2 - r_v1) / (v2 - v1),
        pi_x,
        v1,
        v2,
        profile: x.to_vec(),
        extrapolated,
    })
}

/// `E[Y_d | V = v] = E[X]'β_d + E[U_d | V = v]` pointwise.
pub fn marginal_structural(beta_d: &[f64], conditional_mean: &[f64], mean_x: &[f64]) -> Result<Vec<f64>> {
    check_profile(mean_x, beta_d.len())?;
    let level = dot(mean_x, beta_d);
    Ok(conditional_mean.iter().map(|u| level + u).collect())
}

/// Marginal participation and outcome curves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponseCurves {
    pub v: Vec<f64>,
    /// `E[D | V = v] = Pr(P̂ ≥ v)`.
    pub participation: Vec<f64>,
    /// `E[Y | V = v]`.
    pub outcome: Vec<f64>,
}

/// `E[D | V = v] = Pr(P̂ ≥ v)` and
/// `E[Y | V = v] = E[Y_0 | V = v] + mean(1{P̂ ≥ v} X)'(β_1 - β_0) + Pr(P̂ ≥ v) E[U_1 - U_0 | V = v]`
/// over the kept rows. `structural0` is `E[Y_0 | V = v]` and `gain` is
/// `E[U_1 - U_0 | V = v]` on `v`.
pub fn marginal_response(
    sample: &Sample,
    fit: &PropensityFit,
    beta0: &[f64],
    beta1: &[f64],
    v: &[f64],
    structural0: &[f64],
    gain: &[f64],
) -> Result<ResponseCurves> {
    if structural0.len() != v.len() || gain.len() != v.len() {
        return Err(MteError::GridMismatch("response inputs are not tabulated on v".into()));
    }
    check_profile(beta0, sample.dim())?;
    let delta = difference(beta0, beta1);
    let rows = fit.kept_rows();
    if rows.is_empty() {
        return Err(MteError::EmptySample("no kept rows".into()));
    }
    let mut kept: Vec<(f64, f64)> =
        rows.iter().map(|&i| (fit.scores()[i], dot(&sample.design_row(i), &delta))).collect();
    kept.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    // suffix sums over rows sorted by score
    let n = kept.len();
    let mut tail = vec![0.0; n + 1];
    for k in (0..n).rev() {
        tail[k] = tail[k + 1] + kept[k].1;
    }
    let mut participation = Vec::with_capacity(v.len());
    let mut outcome = Vec::with_capacity(v.len());
    for (k, &vk) in v.iter().enumerate() {
        let first = kept.partition_point(|r| r.0 < vk);
        let share = (n - first) as f64 / n as f64;
        participation.push(share);
        outcome.push(structural0[k] + tail[first] / n as f64 + weighted(share, || gain[k]));
    }
    Ok(ResponseCurves { v: v.to_vec(), participation, outcome })
}

/// Trapezoid rule on a strictly increasing grid.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}
