//! Data-generating processes with closed-form treatment-effect oracles.
//!
//! Every design draws `V ~ U(0,1)` independently of `X`, assigns
//! `D = 1{π(X) ≥ V}` and sets `U_d = α_d + ρ_d Φ⁻¹(V) + σ ε_d` with
//! `ε_d ~ N(0,1)` independent of `(X, V)`, so conditional mean independence
//! holds exactly and `E[U_1 - U_0 | V = v] = (α_1 - α_0) + (ρ_1 - ρ_0) Φ⁻¹(v)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{MteError, Result};
use crate::normal;

/// Law of one continuous covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum ContinuousLaw {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

/// Propensity function `π(x)`. `x1`, `x2` are the first two continuous
/// covariates and `s` the sum of the discrete covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PropensityLaw {
    /// `0.5 + a·sin(x1 + shift·s)`: nonmonotone, level-matched pairs abound.
    Sine { amplitude: f64, disc_shift: f64 },
    /// `Φ(intercept + slope·x1 + disc_shift·s)`: strictly monotone.
    Probit { intercept: f64, slope: f64, disc_shift: f64 },
    /// `0.2 + 0.6·Φ(x1³)`: monotone with a stationary point at 0.
    CubicStationary,
    /// `Φ(γ1 x1 + γ2 x2 + γ3 x1 x2)`; `γ3 = 0` is a single index.
    Index { gamma1: f64, gamma2: f64, gamma3: f64 },
    /// Heteroscedastic linear index: `D = 1{a + b·x1 ≥ exp(c·x1)·Ũ}` with
    /// `Ũ ~ N(0,1)`, so `V = Φ(Ũ)` and `π(x) = Φ((a + b x1) / exp(c x1))`.
    Heteroscedastic { intercept: f64, slope: f64, sigma_slope: f64 },
    Constant { p: f64 },
}

impl PropensityLaw {
    fn required_cont(self) -> usize {
        match self {
            PropensityLaw::Index { .. } => 2,
            PropensityLaw::Constant { .. } => 0,
            _ => 1,
        }
    }

    pub fn eval(self, x_cont: &[f64], x_disc: &[i64]) -> f64 {
        let s: f64 = x_disc.iter().map(|&v| v as f64).sum();
        match self {
            PropensityLaw::Sine { amplitude, disc_shift } => 0.5 + amplitude * (x_cont[0] + disc_shift * s).sin(),
            PropensityLaw::Probit { intercept, slope, disc_shift } => {
                normal::cdf(intercept + slope * x_cont[0] + disc_shift * s)
            }
            PropensityLaw::CubicStationary => 0.2 + 0.6 * normal::cdf(x_cont[0].powi(3)),
            PropensityLaw::Index { gamma1, gamma2, gamma3 } => {
                normal::cdf(gamma1 * x_cont[0] + gamma2 * x_cont[1] + gamma3 * x_cont[0] * x_cont[1])
            }
            PropensityLaw::Heteroscedastic { intercept, slope, sigma_slope } => {
                normal::cdf(heteroscedastic_index(intercept, slope, sigma_slope, x_cont[0]))
            }
            PropensityLaw::Constant { p } => p,
        }
    }
}

fn heteroscedastic_index(a: f64, b: f64, c: f64, x: f64) -> f64 {
    (a + b * x) / (c * x).exp()
}

/// A complete simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub n: usize,
    pub seed: u64,
    pub continuous: Vec<ContinuousLaw>,
    /// Success probability of each Bernoulli discrete covariate.
    #[serde(default)]
    pub discrete: Vec<f64>,
    pub propensity: PropensityLaw,
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub rho0: f64,
    pub rho1: f64,
    /// Scale `σ` of the idiosyncratic outcome noise.
    pub noise: f64,
}

/// Names accepted by [`DgpSpec::preset`].
pub const PRESETS: &[&str] = &[
    "separable",
    "no_selection",
    "null_effect",
    "probit",
    "stationary",
    "interaction",
    "single_index",
    "heteroscedastic",
];

impl DgpSpec {
    /// Built-in designs:
    ///
    /// * `separable` – one `U(-π/2, 3π/2)` covariate and one Bernoulli(0.5)
    ///   covariate, `π = 0.5 + 0.4 sin(x1 + π s)`, selection on gains.
    /// * `no_selection` – `separable` with `ρ_0 = ρ_1 = 0`.
    /// * `null_effect` – `separable` with identical arms (zero effect).
    /// * `probit` – monotone `π = Φ(x1)`, `x1 ~ U(-2, 2)`.
    /// * `stationary` – `π = 0.2 + 0.6 Φ(x1³)`, `x1 ~ U(-1.5, 1.5)`.
    /// * `interaction` / `single_index` – two `U(-1, 1)` covariates with
    ///   `π = Φ(0.8 x1 + 0.6 x2 + γ3 x1 x2)`, `γ3 = 1` or `0`.
    /// * `heteroscedastic` – structural linear index with error scale
    ///   `exp(0.6 x1)`, `x1 ~ U(-1.5, 3)`.
    pub fn preset(name: &str, n: usize, seed: u64) -> Result<Self> {
        let separable = DgpSpec {
            n,
            seed,
            continuous: vec![ContinuousLaw::Uniform { lo: -0.5 * PI, hi: 1.5 * PI }],
            discrete: vec![0.5],
            propensity: PropensityLaw::Sine { amplitude: 0.4, disc_shift: PI },
            alpha0: 0.0,
            alpha1: 0.4,
            beta0: vec![0.5, 0.3],
            beta1: vec![1.0, 0.6],
            rho0: -0.5,
            rho1: 0.5,
            noise: 0.3,
        };
        let one_cont = |law: ContinuousLaw, propensity: PropensityLaw| DgpSpec {
            continuous: vec![law],
            discrete: vec![],
            propensity,
            beta0: vec![0.5],
            beta1: vec![1.0],
            ..separable.clone()
        };
        let two_index = |gamma3: f64| DgpSpec {
            continuous: vec![ContinuousLaw::Uniform { lo: -1.0, hi: 1.0 }; 2],
            discrete: vec![],
            propensity: PropensityLaw::Index { gamma1: 0.8, gamma2: 0.6, gamma3 },
            beta0: vec![0.5, -0.2],
            beta1: vec![1.0, 0.2],
            ..separable.clone()
        };
        let spec = match name {
            "separable" => separable.clone(),
            "no_selection" => DgpSpec { rho0: 0.0, rho1: 0.0, ..separable.clone() },
            "null_effect" => DgpSpec {
                alpha1: separable.alpha0,
                beta1: separable.beta0.clone(),
                rho1: separable.rho0,
                ..separable.clone()
            },
            "probit" => one_cont(
                ContinuousLaw::Uniform { lo: -2.0, hi: 2.0 },
                PropensityLaw::Probit { intercept: 0.0, slope: 1.0, disc_shift: 0.0 },
            ),
            "stationary" => one_cont(ContinuousLaw::Uniform { lo: -1.5, hi: 1.5 }, PropensityLaw::CubicStationary),
            "interaction" => two_index(1.0),
            "single_index" => two_index(0.0),
            "heteroscedastic" => one_cont(
                ContinuousLaw::Uniform { lo: -1.5, hi: 3.0 },
                PropensityLaw::Heteroscedastic { intercept: 0.5, slope: 1.0, sigma_slope: 0.6 },
            ),
            other => {
                return Err(MteError::Config(format!(
                    "unknown preset {other:?}; available presets: {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.continuous.len() + self.discrete.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(MteError::Config(msg));
        if self.n == 0 {
            return fail("n must be at least 1".into());
        }
        if self.beta0.len() != self.dim() || self.beta1.len() != self.dim() {
            return fail(format!(
                "beta0/beta1 need {} entries, got {}/{}",
                self.dim(),
                self.beta0.len(),
                self.beta1.len()
            ));
        }
        if self.continuous.len() < self.propensity.required_cont() {
            return fail(format!(
                "propensity law needs {} continuous covariates",
                self.propensity.required_cont()
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail(format!("noise scale must be nonnegative, got {}", self.noise));
        }
        if self.discrete.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return fail("discrete probabilities must lie in [0, 1]".into());
        }
        for law in &self.continuous {
            match *law {
                ContinuousLaw::Uniform { lo, hi } if !(lo < hi) => {
                    return fail(format!("uniform law needs lo < hi, got [{lo}, {hi}]"))
                }
                ContinuousLaw::Normal { sd, .. } if !(sd > 0.0) => {
                    return fail(format!("normal law needs sd > 0, got {sd}"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// `π(x)` of the design.
    pub fn propensity(&self, x_cont: &[f64], x_disc: &[i64]) -> f64 {
        self.propensity.eval(x_cont, x_disc)
    }

    pub fn oracle(&self) -> OracleMte {
        OracleMte {
            alpha0: self.alpha0,
            alpha1: self.alpha1,
            beta0: self.beta0.clone(),
            beta1: self.beta1.clone(),
            rho0: self.rho0,
            rho1: self.rho1,
        }
    }
}

/// True marginal treatment effect and summary parameters of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleMte {
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub rho0: f64,
    pub rho1: f64,
}

impl OracleMte {
    pub fn delta(&self) -> Vec<f64> {
        self.beta1.iter().zip(&self.beta0).map(|(a, b)| a - b).collect()
    }

    /// `(α_1 - α_0) + x'(β_1 - β_0)`.
    fn observed_part(&self, x: &[f64]) -> f64 {
        self.alpha1 - self.alpha0 + x.iter().zip(self.delta()).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `Δ(x, v) = (α_1 - α_0) + x'(β_1 - β_0) + (ρ_1 - ρ_0) Φ⁻¹(v)`.
    pub fn mte(&self, x: &[f64], v: f64) -> f64 {
        self.observed_part(x) + (self.rho1 - self.rho0) * normal::quantile(v)
    }

    /// `E[Y_d | V = v]` at covariates `x`.
    pub fn structural(&self, arm: bool, x: &[f64], v: f64) -> f64 {
        let (alpha, beta, rho) = if arm {
            (self.alpha1, &self.beta1, self.rho1)
        } else {
            (self.alpha0, &self.beta0, self.rho0)
        };
        alpha + x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + rho * normal::quantile(v)
    }

    pub fn ate(&self, x: &[f64]) -> f64 {
        self.observed_part(x)
    }

    /// Uses `E[Φ⁻¹(V) | V ≤ π] = -φ(Φ⁻¹(π))/π`.
    pub fn tt(&self, x: &[f64], pi: f64) -> f64 {
        self.observed_part(x) + normal::treated_correction(self.rho1 - self.rho0, pi)
    }

    /// Uses `E[Φ⁻¹(V) | V > π] = φ(Φ⁻¹(π))/(1 - π)`.
    pub fn tut(&self, x: &[f64], pi: f64) -> f64 {
        self.observed_part(x) + normal::untreated_correction(self.rho1 - self.rho0, pi)
    }

    /// Average MTE over `v ∈ (v1, v2)`.
    pub fn late(&self, x: &[f64], v1: f64, v2: f64) -> f64 {
        let upper = -normal::pdf(normal::quantile(v2));
        let lower = -normal::pdf(normal::quantile(v1));
        self.observed_part(x) + (self.rho1 - self.rho0) * (upper - lower) / (v2 - v1)
    }
}

/// True ATE/TT/TUT/LATE at one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleParams {
    pub ate: f64,
    pub tt: f64,
    pub tut: f64,
    pub late: f64,
}

pub fn oracle_params(spec: &DgpSpec, x: &[f64], pi_x: f64, v1: f64, v2: f64) -> Result<OracleParams> {
    if !(pi_x > 0.0 && pi_x < 1.0) {
        return Err(MteError::InvalidArgument(format!("π(x) = {pi_x} must lie in (0, 1)")));
    }
    if !(0.0 < v1 && v1 < v2 && v2 < 1.0) {
        return Err(MteError::InvalidArgument(format!("need 0 < v1 < v2 < 1, got {v1}, {v2}")));
    }
    if x.len() != spec.dim() {
        return Err(MteError::InvalidArgument(format!("profile has {} entries, need {}", x.len(), spec.dim())));
    }
    let o = spec.oracle();
    Ok(OracleParams { ate: o.ate(x), tt: o.tt(x, pi_x), tut: o.tut(x, pi_x), late: o.late(x, v1, v2) })
}

/// Latent draws behind a generated sample, for tests that need them.
#[derive(Debug, Clone)]
pub struct Latent {
    pub v: Vec<f64>,
    pub pi: Vec<f64>,
}

/// Draws a sample from `spec`. The same seed always gives the same sample.
pub fn generate(spec: &DgpSpec) -> Result<(Sample, OracleMte)> {
    generate_with_latent(spec).map(|(s, o, _)| (s, o))
}

pub fn generate_with_latent(spec: &DgpSpec) -> Result<(Sample, OracleMte, Latent)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let (nc, nd) = (spec.continuous.len(), spec.discrete.len());
    let mut y = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut x_cont = Vec::with_capacity(n * nc);
    let mut x_disc = Vec::with_capacity(n * nd);
    let mut vs = Vec::with_capacity(n);
    let mut pis = Vec::with_capacity(n);
    let mut xc = vec![0.0; nc];
    let mut xd = vec![0i64; nd];
    for row in 0..n {
        for (k, law) in spec.continuous.iter().enumerate() {
            xc[k] = match *law {
                ContinuousLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
                ContinuousLaw::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            };
        }
        for (k, &p) in spec.discrete.iter().enumerate() {
            xd[k] = (rng.gen::<f64>() < p) as i64;
        }
        let pi = spec.propensity(&xc, &xd);
        if !(pi > 0.0 && pi < 1.0) {
            return Err(MteError::Config(format!("π(x) = {pi} outside (0, 1) at draw {row}")));
        }
        let (v, treated) = match spec.propensity {
            PropensityLaw::Heteroscedastic { intercept, slope, sigma_slope } => {
                // structural draw: D = 1{a + b x ≥ σ(x) Ũ}, V = Φ(Ũ)
                let u_tilde: f64 = rng.sample(StandardNormal);
                let treated = intercept + slope * xc[0] >= (sigma_slope * xc[0]).exp() * u_tilde;
                (normal::cdf(u_tilde).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON), treated)
            }
            _ => loop {
                let v: f64 = rng.gen();
                if v > 0.0 {
                    break (v, pi >= v);
                }
            },
        };
        let z = normal::quantile(v);
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        let x_row: Vec<f64> = xc.iter().copied().chain(xd.iter().map(|&v| v as f64)).collect();
        let lin = |beta: &[f64]| x_row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
        let y0 = lin(&spec.beta0) + spec.alpha0 + spec.rho0 * z + spec.noise * e0;
        let y1 = lin(&spec.beta1) + spec.alpha1 + spec.rho1 * z + spec.noise * e1;
        y.push(if treated { y1 } else { y0 });
        d.push(treated);
        x_cont.extend_from_slice(&xc);
        x_disc.extend_from_slice(&xd);
        vs.push(v);
        pis.push(pi);
    }
    let sample = Sample::from_parts(y, d, x_cont, nc, x_disc, nd)?;
    Ok((sample, spec.oracle(), Latent { v: vs, pi: pis }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn same_seed_same_sample() {
        let spec = DgpSpec::preset("separable", 500, 9).unwrap();
        assert_eq!(generate(&spec).unwrap().0, generate(&spec).unwrap().0);
        let other = DgpSpec { seed: 10, ..spec };
        assert_ne!(generate(&other).unwrap().0.y(), generate(&DgpSpec::preset("separable", 500, 9).unwrap()).unwrap().0.y());
    }

    #[test]
    fn validation() {
        assert!(DgpSpec::preset("separable", 0, 1).unwrap().validate().is_err());
        let err = DgpSpec::preset("nope", 10, 1).unwrap_err();
        assert!(err.to_string().contains("separable"));
        let mut spec = DgpSpec::preset("separable", 10, 1).unwrap();
        spec.noise = -1.0;
        assert!(spec.validate().is_err());
        spec.noise = 0.1;
        spec.beta1.pop();
        assert!(spec.validate().is_err());
        let mut spec = DgpSpec::preset("separable", 10, 1).unwrap();
        spec.propensity = PropensityLaw::Constant { p: 1.0 };
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn every_preset_generates() {
        for name in PRESETS {
            let spec = DgpSpec::preset(name, 200, 3).unwrap();
            let (s, _) = generate(&spec).unwrap();
            assert_eq!(s.len(), 200);
            assert_eq!(s.dim(), spec.dim());
            s.require_both_arms().unwrap();
        }
    }

    #[test]
    fn no_selection_mte_is_flat() {
        let spec = DgpSpec { noise: 0.0, ..DgpSpec::preset("no_selection", 50, 1).unwrap() };
        let (s, o, _) = generate_with_latent(&spec).unwrap();
        let x = [1.0, 1.0];
        assert_abs_diff_eq!(o.mte(&x, 0.1), o.mte(&x, 0.9), epsilon = 1e-15);
        assert_abs_diff_eq!(o.mte(&x, 0.3), 0.4 + 0.5 + 0.3, epsilon = 1e-12);
        // Y depends on X only
        for i in 0..s.len() {
            let x = s.design_row(i);
            let expect = if s.d()[i] { 0.4 + x[0] + 0.6 * x[1] } else { 0.5 * x[0] + 0.3 * x[1] };
            assert_abs_diff_eq!(s.y()[i], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn treatment_rate_matches_mean_propensity() {
        let spec = DgpSpec::preset("separable", 10_000, 42).unwrap();
        let (s, _, latent) = generate_with_latent(&spec).unwrap();
        let n = s.len() as f64;
        let rate = s.count_treated() as f64 / n;
        let mean_pi = latent.pi.iter().sum::<f64>() / n;
        assert!((rate - mean_pi).abs() < 3.0 / n.sqrt());
    }

    #[test]
    fn resistance_uncorrelated_with_covariates() {
        let spec = DgpSpec::preset("separable", 10_000, 43).unwrap();
        let (s, _, latent) = generate_with_latent(&spec).unwrap();
        let n = s.len();
        for k in 0..s.dim() {
            let col: Vec<f64> = (0..n).map(|i| s.design_row(i)[k]).collect();
            let r = correlation(&col, &latent.v);
            assert!(r.abs() < 3.0 / (n as f64).sqrt(), "column {k}: r = {r}");
        }
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn heteroscedastic_draw_follows_reduced_form() {
        let spec = DgpSpec::preset("heteroscedastic", 2000, 5).unwrap();
        let (s, _, latent) = generate_with_latent(&spec).unwrap();
        let agree = (0..s.len()).filter(|&i| s.d()[i] == (latent.pi[i] >= latent.v[i])).count();
        // identical up to rounding of Φ at exact ties
        assert!(agree >= s.len() - 1, "{agree}");
    }

    #[test]
    fn oracle_closed_forms() {
        let spec = DgpSpec {
            alpha0: 0.0,
            alpha1: 0.0,
            beta0: vec![0.0, 0.0],
            beta1: vec![0.0, 0.0],
            rho0: 0.0,
            rho1: 1.0,
            ..DgpSpec::preset("separable", 10, 1).unwrap()
        };
        let p = oracle_params(&spec, &[0.0, 0.0], 0.5, 0.2, 0.6).unwrap();
        assert_abs_diff_eq!(p.ate, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.tt, -0.797885, epsilon = 1e-6);
        assert_abs_diff_eq!(p.tut, 0.797885, epsilon = 1e-6);
        let o = spec.oracle();
        let eps = 1e-4;
        assert_abs_diff_eq!(o.late(&[0.0, 0.0], eps, 1.0 - eps), p.ate, epsilon = 1e-3);
        assert!(oracle_params(&spec, &[0.0, 0.0], 1.0, 0.2, 0.6).is_err());
        assert!(oracle_params(&spec, &[0.0, 0.0], 0.5, 0.6, 0.2).is_err());
    }
}
