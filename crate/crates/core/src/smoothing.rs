//! Kernels and bandwidth rules shared by every smoothing step.

use serde::{Deserialize, Serialize};

use crate::error::{MteError, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Second-order univariate kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Gaussian,
    Epanechnikov,
}

impl Kernel {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => INV_SQRT_2PI * (-0.5 * u * u).exp(),
            Kernel::Epanechnikov => {
                if u.abs() < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// Half-width of the support in units of the bandwidth, if compact.
    pub fn support_radius(self) -> Option<f64> {
        match self {
            Kernel::Gaussian => None,
            Kernel::Epanechnikov => Some(1.0),
        }
    }
}

/// Free-function form of [`Kernel::eval`].
pub fn kernel_eval(kernel: Kernel, u: f64) -> f64 {
    kernel.eval(u)
}

/// How a bandwidth is chosen for one smoothing step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthSpec {
    #[default]
    RuleOfThumb,
    Fixed(f64),
}

impl BandwidthSpec {
    /// Resolves against the data the step smooths over.
    pub fn resolve(self, values: &[f64]) -> Result<f64> {
        match self {
            BandwidthSpec::Fixed(h) if h.is_finite() && h > 0.0 => Ok(h),
            BandwidthSpec::Fixed(h) => {
                Err(MteError::DegenerateBandwidth(format!("fixed bandwidth {h} is not positive")))
            }
            BandwidthSpec::RuleOfThumb => rule_of_thumb(values),
        }
    }
}

/// Silverman's rule with robust spread: `1.06 · min(sd, IQR/1.349) · n^(-1/5)`.
///
/// When the interquartile range is zero but the standard deviation is not,
/// the standard deviation alone is used.
pub fn rule_of_thumb(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(MteError::DegenerateBandwidth(format!("need at least 2 values, got {n}")));
    }
    let sd = std_dev(values);
    if !(sd.is_finite() && sd > 0.0) {
        return Err(MteError::DegenerateBandwidth("values have zero spread".into()));
    }
    let iqr = quantile(values, 0.75) - quantile(values, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.349) } else { sd };
    Ok(1.06 * spread * (n as f64).powf(-0.2))
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation with `n - 1` denominator.
pub(crate) fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() as f64 - 1.0)).sqrt()
}

/// Linear-interpolation quantile (type 7).
pub(crate) fn quantile(values: &[f64], prob: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, prob)
}

pub(crate) fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = prob.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn integrate(kernel: Kernel) -> f64 {
        // composite Simpson on [-10, 10]
        let m = 20_000;
        let h = 20.0 / m as f64;
        let mut acc = kernel.eval(-10.0) + kernel.eval(10.0);
        for k in 1..m {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * kernel.eval(-10.0 + k as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel_eval(Kernel::Epanechnikov, 1.0), 0.0);
        assert_eq!(kernel_eval(Kernel::Epanechnikov, -1.0), 0.0);
        assert_abs_diff_eq!(kernel_eval(Kernel::Epanechnikov, 0.0), 0.75);
        assert_abs_diff_eq!(kernel_eval(Kernel::Gaussian, 0.0), 0.398942, epsilon = 1e-6);
    }

    #[test]
    fn kernels_integrate_to_one() {
        assert_abs_diff_eq!(integrate(Kernel::Gaussian), 1.0, epsilon = 1e-6);
        // the kink at |u| = 1 falls on a Simpson node
        assert_abs_diff_eq!(integrate(Kernel::Epanechnikov), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn rule_of_thumb_standard_case() {
        // sd = 1 exactly and IQR/1.349 > 1: spread 1
        let n = 100;
        let base: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let sd = std_dev(&base);
        let scaled: Vec<f64> = base.iter().map(|v| v / sd).collect();
        let iqr = quantile(&scaled, 0.75) - quantile(&scaled, 0.25);
        assert!(iqr / 1.349 >= 1.0);
        // 1.06 · 100^(-1/5) = 0.4219936
        assert_abs_diff_eq!(rule_of_thumb(&scaled).unwrap(), 0.4219936, epsilon = 1e-7);
    }

    #[test]
    fn rule_of_thumb_rejects_constant() {
        let err = rule_of_thumb(&[2.0; 10]).unwrap_err();
        assert!(err.to_string().contains("degenerate bandwidth"));
        assert!(rule_of_thumb(&[1.0]).is_err());
    }

    #[test]
    fn fixed_bandwidth_must_be_positive() {
        assert_eq!(BandwidthSpec::Fixed(0.3).resolve(&[]).unwrap(), 0.3);
        assert!(BandwidthSpec::Fixed(0.0).resolve(&[1.0, 2.0]).is_err());
        assert!(BandwidthSpec::Fixed(f64::NAN).resolve(&[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn kernels_symmetric_nonnegative(u in -20.0f64..20.0) {
            for k in [Kernel::Gaussian, Kernel::Epanechnikov] {
                prop_assert!(k.eval(u) >= 0.0);
                prop_assert_eq!(k.eval(u), k.eval(-u));
            }
        }

        #[test]
        fn rule_of_thumb_scale_and_shift(
            values in proptest::collection::vec(-50.0f64..50.0, 5..80),
            scale in 0.01f64..100.0,
            shift in -1e3f64..1e3,
        ) {
            prop_assume!(std_dev(&values) > 1e-6);
            let h = rule_of_thumb(&values).unwrap();
            let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
            let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
            prop_assert!((rule_of_thumb(&scaled).unwrap() - scale * h).abs() <= 1e-9 * scale * h.max(1.0));
            prop_assert!((rule_of_thumb(&shifted).unwrap() - h).abs() <= 1e-6 * h.max(1.0));
        }
    }
}
