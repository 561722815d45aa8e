//! The full estimation pipeline: propensity, trimming, second step, effects.

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::effects::{self, CausalSummary, MteCurve, ResponseCurves};
use crate::error::{MteError, Result};
use crate::liv::{self, LivFit};
use crate::propensity::{fit_propensity, PropensityConfig, PropensityFit};
use crate::separate::{
    fit_arm_parametric, fit_arm_semiparametric, rows_by_score, uniform_grid, ArmFit, ParametricFamily,
    SecondStepConfig,
};

/// Which second-step procedures run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    #[default]
    Separate,
    Liv,
    Both,
}

impl Procedure {
    pub fn separate(self) -> bool {
        matches!(self, Procedure::Separate | Procedure::Both)
    }

    pub fn liv(self) -> bool {
        matches!(self, Procedure::Liv | Procedure::Both)
    }
}

/// Representation of the control functions in the separate procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SecondStep {
    #[default]
    Semiparametric,
    Normal { order: usize },
    Polynomial { order: usize },
}

impl SecondStep {
    pub fn family(self) -> Option<ParametricFamily> {
        match self {
            SecondStep::Semiparametric => None,
            SecondStep::Normal { order } => Some(ParametricFamily::NormalPolynomial(order)),
            SecondStep::Polynomial { order } => Some(ParametricFamily::Polynomial(order)),
        }
    }
}

/// Everything that determines an estimate, apart from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub procedure: Procedure,
    pub second_step: SecondStep,
    pub propensity: PropensityConfig,
    pub smoothing: SecondStepConfig,
    pub trim_lower: f64,
    pub trim_upper: f64,
    /// Grid bounds; default to the common support of the two arms.
    pub grid_lo: Option<f64>,
    pub grid_hi: Option<f64>,
    /// Covariate profile in design order; defaults to the sample means.
    pub profile: Option<Vec<f64>>,
    /// `π(x)` for TT and TUT; defaults to the mean kept score.
    pub pi_x: Option<f64>,
    pub late_bounds: [f64; 2],
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            procedure: Procedure::Separate,
            second_step: SecondStep::Semiparametric,
            propensity: PropensityConfig::default(),
            smoothing: SecondStepConfig::default(),
            trim_lower: 0.01,
            trim_upper: 0.01,
            grid_lo: None,
            grid_hi: None,
            profile: None,
            pi_x: None,
            late_bounds: [0.25, 0.75],
        }
    }
}

/// Resolved second-step bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Bandwidths {
    pub propensity: Vec<f64>,
    /// `[untreated, treated]`.
    pub pair: Option<[f64; 2]>,
    pub local: Option<[f64; 2]>,
    pub liv_pair: Option<f64>,
    pub liv_local: Option<f64>,
}

/// Marginal structural functions `E[Y_d | V = v]` at the mean covariates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructuralCurves {
    pub v: Vec<f64>,
    pub untreated: Vec<f64>,
    pub treated: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SeparateEstimates {
    pub untreated: ArmFit,
    pub treated: ArmFit,
    pub mte: MteCurve,
    pub summary: CausalSummary,
    pub structural: StructuralCurves,
    pub response: ResponseCurves,
}

impl SeparateEstimates {
    pub fn delta(&self) -> Vec<f64> {
        self.treated.beta.iter().zip(&self.untreated.beta).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LivEstimates {
    pub fit: LivFit,
    pub mte: MteCurve,
    pub summary: CausalSummary,
}

/// Output of [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct Estimates {
    pub names: Vec<String>,
    pub n: usize,
    pub propensity: PropensityFit,
    pub bandwidths: Bandwidths,
    pub grid: Vec<f64>,
    pub profile: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub pi_x: f64,
    pub separate: Option<SeparateEstimates>,
    pub liv: Option<LivEstimates>,
}

impl EstimationConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let fail = |m: String| Err(MteError::Config(m));
        for (name, t) in [("trim_lower", self.trim_lower), ("trim_upper", self.trim_upper)] {
            if !(0.0..0.5).contains(&t) {
                return fail(format!("{name} must lie in [0, 0.5), got {t}"));
            }
        }
        if self.smoothing.grid_points < 2 {
            return fail("grid_points must be at least 2".into());
        }
        if let Some(family) = self.second_step.family() {
            if family.order() == 0 {
                return fail("parametric order must be at least 1".into());
            }
        }
        if let Some(p) = &self.profile {
            if p.len() != dim {
                return fail(format!("profile has {} entries for {dim} covariates", p.len()));
            }
        }
        if let Some(pi) = self.pi_x {
            if !(pi > 0.0 && pi < 1.0) {
                return fail(format!("pi_x must lie in (0, 1), got {pi}"));
            }
        }
        let [v1, v2] = self.late_bounds;
        if !(0.0 <= v1 && v1 < v2 && v2 <= 1.0) {
            return fail(format!("late_bounds need 0 ≤ v1 < v2 ≤ 1, got [{v1}, {v2}]"));
        }
        match (self.grid_lo, self.grid_hi) {
            (Some(lo), Some(hi)) if !(0.0 < lo && lo < hi && hi < 1.0) => {
                fail(format!("grid bounds need 0 < lo < hi < 1, got [{lo}, {hi}]"))
            }
            _ => Ok(()),
        }
    }
}

fn scores_of(fit: &PropensityFit, arm: Option<bool>) -> Vec<f64> {
    rows_by_score(fit, arm).iter().map(|&i| fit.scores()[i]).collect()
}

/// Runs every configured step on `sample`.
pub fn run_pipeline(sample: &Sample, config: &EstimationConfig) -> Result<Estimates> {
    config.validate(sample.dim())?;
    sample.require_both_arms()?;
    let raw = fit_propensity(sample, &config.propensity)?;
    estimate_with_propensity(sample, &raw, config)
}

/// Runs every step after the first on an untrimmed propensity fit, which
/// may come from [`PropensityFit::from_scores`].
pub fn estimate_with_propensity(sample: &Sample, raw: &PropensityFit, config: &EstimationConfig) -> Result<Estimates> {
    config.validate(sample.dim())?;
    if raw.scores().len() != sample.len() || raw.treatment() != sample.d() {
        return Err(MteError::InvalidArgument("propensity fit does not belong to this sample".into()));
    }
    let fit = raw.trim(config.trim_lower, config.trim_upper)?;

    let (lo0, hi0) = fit.arm_range(false).ok_or(MteError::EmptyArm { arm: 0 })?;
    let (lo1, hi1) = fit.arm_range(true).ok_or(MteError::EmptyArm { arm: 1 })?;
    let lo = config.grid_lo.unwrap_or(lo0.max(lo1));
    let hi = config.grid_hi.unwrap_or(hi0.min(hi1));
    if !(lo < hi) {
        return Err(MteError::GridMismatch(format!(
            "the arms share no score support: [{lo0}, {hi0}] and [{lo1}, {hi1}]"
        )));
    }
    let grid = uniform_grid(lo, hi, config.smoothing.grid_points);

    let mean_x = sample.design_means();
    let profile = config.profile.clone().unwrap_or_else(|| mean_x.clone());
    let pi_x = match config.pi_x {
        Some(p) => p,
        None => {
            let kept = scores_of(&fit, None);
            kept.iter().sum::<f64>() / kept.len() as f64
        }
    };
    let [v1, v2] = config.late_bounds;
    let smoothing = &config.smoothing;
    let mut bandwidths = Bandwidths { propensity: fit.bandwidths().to_vec(), ..Default::default() };

    let separate = if config.procedure.separate() {
        let (untreated, treated) = match config.second_step.family() {
            Some(family) => (
                fit_arm_parametric(sample, &fit, false, family, &grid)?,
                fit_arm_parametric(sample, &fit, true, family, &grid)?,
            ),
            None => {
                let mut arms = Vec::with_capacity(2);
                let mut pair = [0.0; 2];
                let mut local = [0.0; 2];
                for arm in [false, true] {
                    let scores = scores_of(&fit, Some(arm));
                    let h2 = smoothing.pair_bandwidth.resolve(&scores)?;
                    let h3 = smoothing.local_bandwidth.resolve(&scores)?;
                    pair[arm as usize] = h2;
                    local[arm as usize] = h3;
                    arms.push(fit_arm_semiparametric(sample, &fit, arm, smoothing, h2, h3, &grid)?);
                }
                bandwidths.pair = Some(pair);
                bandwidths.local = Some(local);
                let treated = arms.pop().expect("two arms");
                (arms.pop().expect("two arms"), treated)
            }
        };
        let mte = effects::assemble_mte(&untreated.beta, &treated.beta, &untreated.grid, &treated.grid, &profile)?;
        let summary = effects::causal_params(
            &untreated.beta,
            &treated.beta,
            |p| untreated.boundary_value(p),
            |p| treated.boundary_value(p),
            &profile,
            pi_x,
            v1,
            v2,
        )?;
        let u0: Vec<f64> = grid.iter().map(|&v| untreated.conditional_mean(v)).collect();
        let u1: Vec<f64> = grid.iter().map(|&v| treated.conditional_mean(v)).collect();
        let structural = StructuralCurves {
            v: grid.clone(),
            untreated: effects::marginal_structural(&untreated.beta, &u0, &mean_x)?,
            treated: effects::marginal_structural(&treated.beta, &u1, &mean_x)?,
        };
        let gain: Vec<f64> = u1.iter().zip(&u0).map(|(a, b)| a - b).collect();
        let response = effects::marginal_response(
            sample,
            &fit,
            &untreated.beta,
            &treated.beta,
            &grid,
            &structural.untreated,
            &gain,
        )?;
        Some(SeparateEstimates { untreated, treated, mte, summary, structural, response })
    } else {
        None
    };

    let liv = if config.procedure.liv() {
        let scores = scores_of(&fit, None);
        let h2 = smoothing.pair_bandwidth.resolve(&scores)?;
        let h3 = smoothing.local_bandwidth.resolve(&scores)?;
        bandwidths.liv_pair = Some(h2);
        bandwidths.liv_local = Some(h3);
        let liv_fit = liv::fit_liv(sample, &fit, smoothing, h2, h3, &grid)?;
        let mte = effects::liv_mte(&liv_fit.delta, &liv_fit.curve, &profile)?;
        let summary =
            effects::liv_causal_params(&liv_fit.delta, |p| liv_fit.boundary_value(p), &profile, pi_x, v1, v2)?;
        Some(LivEstimates { fit: liv_fit, mte, summary })
    } else {
        None
    };

    Ok(Estimates {
        names: sample.names().to_vec(),
        n: sample.len(),
        propensity: fit,
        bandwidths,
        grid,
        profile,
        mean_x,
        pi_x,
        separate,
        liv,
    })
}

/// A named, contiguous block of the flattened statistic vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatBlock {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl Estimates {
    /// Every bootstrapped quantity as named blocks, in a fixed order.
    pub fn statistic_blocks(&self) -> Vec<(&'static str, Vec<f64>)> {
        let mut blocks = Vec::new();
        let params = |s: &CausalSummary| vec![s.ate, s.tt, s.tut, s.late];
        if let Some(sep) = &self.separate {
            blocks.push(("beta_untreated", sep.untreated.beta.clone()));
            blocks.push(("beta_treated", sep.treated.beta.clone()));
            blocks.push(("delta", sep.delta()));
            blocks.push(("effects", params(&sep.summary)));
            blocks.push(("mte", sep.mte.values.clone()));
            blocks.push(("g0", sep.untreated.grid.level.clone()));
            blocks.push(("g0_slope", sep.untreated.grid.slope.clone()));
            blocks.push(("g1", sep.treated.grid.level.clone()));
            blocks.push(("g1_slope", sep.treated.grid.slope.clone()));
            blocks.push(("structural_untreated", sep.structural.untreated.clone()));
            blocks.push(("structural_treated", sep.structural.treated.clone()));
            blocks.push(("participation", sep.response.participation.clone()));
            blocks.push(("response_outcome", sep.response.outcome.clone()));
        }
        if let Some(liv) = &self.liv {
            blocks.push(("liv_beta_untreated", liv.fit.beta0.clone()));
            let treated = liv.fit.beta0.iter().zip(&liv.fit.delta).map(|(b, d)| b + d).collect();
            blocks.push(("liv_beta_treated", treated));
            blocks.push(("liv_delta", liv.fit.delta.clone()));
            blocks.push(("liv_effects", params(&liv.summary)));
            blocks.push(("liv_mte", liv.mte.values.clone()));
            blocks.push(("liv_r", liv.fit.curve.level.clone()));
            blocks.push(("liv_q_slope", liv.fit.curve.slope.clone()));
        }
        blocks
    }

    /// Flattened statistics with their block layout.
    pub fn statistics(&self) -> (Vec<f64>, Vec<StatBlock>) {
        let mut values = Vec::new();
        let mut layout = Vec::new();
        for (name, block) in self.statistic_blocks() {
            layout.push(StatBlock { name: name.to_string(), start: values.len(), len: block.len() });
            values.extend(block);
        }
        (values, layout)
    }

    /// The configuration a bootstrap replication uses: the same grid,
    /// profile and `π(x)` as this estimate, so draws line up pointwise.
    pub fn replication_config(&self, config: &EstimationConfig) -> EstimationConfig {
        EstimationConfig {
            grid_lo: Some(self.grid[0]),
            grid_hi: Some(self.grid[self.grid.len() - 1]),
            profile: Some(self.profile.clone()),
            pi_x: Some(self.pi_x),
            ..config.clone()
        }
    }
}
