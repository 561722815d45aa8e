//! Standard normal helpers and the closed-form selection corrections.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn standard() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Standard normal density φ.
pub fn pdf(z: f64) -> f64 {
    standard().pdf(z)
}

/// Standard normal distribution function Φ.
pub fn cdf(z: f64) -> f64 {
    standard().cdf(z)
}

/// Standard normal quantile Φ⁻¹ on (0, 1), polished with one Newton step
/// against [`cdf`].
pub fn quantile(p: f64) -> f64 {
    let n = standard();
    let z = n.inverse_cdf(p);
    if !z.is_finite() {
        return z;
    }
    let density = n.pdf(z);
    if density > 0.0 {
        z - (n.cdf(z) - p) / density
    } else {
        z
    }
}

/// `∫_{-∞}^{c} z^j φ(z) dz` for j = 0..=max_j.
fn lower_partial_moments(c: f64, max_j: usize) -> Vec<f64> {
    let phi = pdf(c);
    let mut m = Vec::with_capacity(max_j + 1);
    m.push(cdf(c));
    if max_j >= 1 {
        m.push(-phi);
    }
    for j in 2..=max_j {
        let next = -c.powi(j as i32 - 1) * phi + (j as f64 - 1.0) * m[j - 2];
        m.push(next);
    }
    m
}

/// `∫_{c}^{∞} z^j φ(z) dz` for j = 0..=max_j.
fn upper_partial_moments(c: f64, max_j: usize) -> Vec<f64> {
    let phi = pdf(c);
    let mut m = Vec::with_capacity(max_j + 1);
    m.push(1.0 - cdf(c));
    if max_j >= 1 {
        m.push(phi);
    }
    for j in 2..=max_j {
        let next = c.powi(j as i32 - 1) * phi + (j as f64 - 1.0) * m[j - 2];
        m.push(next);
    }
    m
}

/// `E[Φ⁻¹(V)^j | V ≤ p]` for `V ~ U(0,1)`, j = 1..=max_j.
///
/// For j = 1 this is `-φ(Φ⁻¹(p)) / p`.
pub fn lower_normal_moments(p: f64, max_j: usize) -> Vec<f64> {
    let c = quantile(p);
    let m = lower_partial_moments(c, max_j);
    m[1..].iter().map(|v| v / p).collect()
}

/// `E[Φ⁻¹(V)^j | V > p]` for `V ~ U(0,1)`, j = 1..=max_j.
///
/// For j = 1 this is `φ(Φ⁻¹(p)) / (1 - p)`.
pub fn upper_normal_moments(p: f64, max_j: usize) -> Vec<f64> {
    let c = quantile(p);
    let m = upper_partial_moments(c, max_j);
    m[1..].iter().map(|v| v / (1.0 - p)).collect()
}

/// `E[V^j | V ≤ p] = p^j / (j + 1)`, j = 1..=max_j.
pub fn lower_power_moments(p: f64, max_j: usize) -> Vec<f64> {
    (1..=max_j).map(|j| p.powi(j as i32) / (j as f64 + 1.0)).collect()
}

/// `E[V^j | V > p] = (1 - p^{j+1}) / ((j + 1)(1 - p))`, j = 1..=max_j.
pub fn upper_power_moments(p: f64, max_j: usize) -> Vec<f64> {
    (1..=max_j)
        .map(|j| (1.0 - p.powi(j as i32 + 1)) / ((j as f64 + 1.0) * (1.0 - p)))
        .collect()
}

/// Treated-arm Heckman correction `ρ · E[Φ⁻¹(V) | V ≤ p] = -ρ φ(Φ⁻¹(p)) / p`.
pub fn treated_correction(rho: f64, p: f64) -> f64 {
    -rho * pdf(quantile(p)) / p
}

/// Untreated-arm Heckman correction `ρ · E[Φ⁻¹(V) | V > p] = ρ φ(Φ⁻¹(p)) / (1 - p)`.
pub fn untreated_correction(rho: f64, p: f64) -> f64 {
    rho * pdf(quantile(p)) / (1.0 - p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn correction_at_half() {
        assert_abs_diff_eq!(treated_correction(1.0, 0.5), -0.797885, epsilon = 1e-6);
        assert_abs_diff_eq!(untreated_correction(1.0, 0.5), 0.797885, epsilon = 1e-6);
    }

    #[test]
    fn quantile_roundtrip() {
        for p in [1e-6, 0.01, 0.3, 0.5, 0.9, 1.0 - 1e-6] {
            assert_abs_diff_eq!(cdf(quantile(p)), p, epsilon = 1e-14);
        }
    }

    #[test]
    fn conditional_moments_are_consistent_with_total() {
        // p·E[Z^j|V≤p] + (1-p)·E[Z^j|V>p] = E[Z^j] = 0, 1, 0, 3
        let total = [0.0, 1.0, 0.0, 3.0];
        for p in [0.1, 0.37, 0.8] {
            let lo = lower_normal_moments(p, 4);
            let hi = upper_normal_moments(p, 4);
            for j in 0..4 {
                assert_abs_diff_eq!(p * lo[j] + (1.0 - p) * hi[j], total[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn power_moments() {
        let lo = lower_power_moments(0.4, 2);
        assert_abs_diff_eq!(lo[0], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(lo[1], 0.16 / 3.0, epsilon = 1e-15);
        let hi = upper_power_moments(0.4, 1);
        assert_abs_diff_eq!(hi[0], 0.7, epsilon = 1e-15);
    }
}
