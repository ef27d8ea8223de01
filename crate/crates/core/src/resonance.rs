//! Geometry of the two-dimensional three-wave resonant manifold.
//!
//! For fixed magnitudes the momentum delta integrates over both directions to
//! `int dθ1 dθ2 δ²(k - k1 - k2) = 2 / S`, where `S` is twice the area of the
//! triangle with sides `k, k1, k2` (two mirror-image triangles contribute).
//! This is the weight by which an isotropic `d²k1 d²k2` integral reduces to
//! `k1 k2 (2/S) dk1 dk2`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Result, WtError};
use crate::system::WaveSystem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TriadGeometry {
    pub k: f64,
    pub k1: f64,
    pub k2: f64,
    pub s: f64,
    pub angular_weight: f64,
}

impl TriadGeometry {
    /// `None` off the triangle domain and on collinear triads.
    pub fn new(k: f64, k1: f64, k2: f64) -> Result<Option<Self>> {
        Ok(match triangle_factor(k, k1, k2)? {
            Some(s) if s > 0.0 => Some(TriadGeometry {
                k,
                k1,
                k2,
                s,
                angular_weight: 2.0 / s,
            }),
            _ => None,
        })
    }
}

/// A triad `sum = a + b` together with the gaps `sum - a` and `sum - b`.
///
/// On thin triads the gaps carry information that is lost when the sides are
/// subtracted in floating point, so the triangle defects
/// `e0 = a + b - sum`, `e1 = sum + b - a`, `e2 = sum + a - b` are formed from
/// them instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Triad {
    pub sum: f64,
    pub a: f64,
    pub b: f64,
    pub gap_a: f64,
    pub gap_b: f64,
}

impl Triad {
    pub fn new(sum: f64, a: f64, b: f64) -> Self {
        Triad {
            sum,
            a,
            b,
            gap_a: sum - a,
            gap_b: sum - b,
        }
    }

    /// `[e0, e1, e2]`; all non-negative exactly on the triangle domain.
    pub fn defects(&self) -> [f64; 3] {
        let e0 = if self.a <= self.b { self.a - self.gap_b } else { self.b - self.gap_a };
        [e0, self.gap_a + self.b, self.gap_b + self.a]
    }

    /// Triangle factor `S`, `None` off the triangle domain.
    pub fn triangle_factor(&self) -> Option<f64> {
        let [e0, e1, e2] = self.defects();
        let radicand = (self.sum + self.a + self.b) * e0 * e1 * e2;
        (radicand >= 0.0).then(|| 0.5 * radicand.sqrt())
    }

    /// `2 / S`, `None` off the domain or on collinear triads.
    pub fn angular_weight(&self) -> Option<f64> {
        self.triangle_factor().filter(|s| *s > 0.0).map(|s| 2.0 / s)
    }
}

fn check_positive(k: f64, k1: f64, k2: f64) -> Result<()> {
    if k > 0.0 && k1 > 0.0 && k2 > 0.0 && k.is_finite() && k1.is_finite() && k2.is_finite() {
        Ok(())
    } else {
        Err(WtError::domain(format!(
            "triad magnitudes must be positive, got ({k}, {k1}, {k2})"
        )))
    }
}

/// `S = ½ sqrt(2((k k1)² + (k k2)² + (k1 k2)²) - k⁴ - k1⁴ - k2⁴)`, or `None`
/// when the triangle inequality fails.
///
/// The radicand is evaluated in Heron's factored form, which is exact for
/// collinear triads and avoids cancellation on thin ones.
pub fn triangle_factor(k: f64, k1: f64, k2: f64) -> Result<Option<f64>> {
    check_positive(k, k1, k2)?;
    let radicand = (k + k1 + k2) * (-k + k1 + k2) * (k - k1 + k2) * (k + k1 - k2);
    if radicand < 0.0 {
        return Ok(None);
    }
    Ok(Some(0.5 * radicand.sqrt()))
}

/// `2 / S`; `None` off the triangle domain or on a collinear triad where the
/// weight diverges.
pub fn angular_weight(k: f64, k1: f64, k2: f64) -> Result<Option<f64>> {
    Ok(triangle_factor(k, k1, k2)?.filter(|s| *s > 0.0).map(|s| 2.0 / s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleEstimate {
    pub estimate: f64,
    pub std_error: f64,
    /// `|I(h) - I(h/2)|` for mollifier width `h`.
    pub bias_check: f64,
    pub mollifier_width: f64,
    pub samples: usize,
    pub converged: bool,
}

impl OracleEstimate {
    pub fn agrees_with(&self, value: f64, sigmas: f64) -> bool {
        self.converged && (self.estimate - value).abs() <= sigmas * self.std_error
    }
}

/// Monte-Carlo estimate of `int dθ1 dθ2 δ²(k - k1 - k2)` at fixed magnitudes.
///
/// The second angle is integrated in polar form, leaving the radial delta
/// `δ(|k - k1| - k2) / k2`, which is smeared with a Gaussian of width
/// `10⁻³ · min(k, k1, k2)`. The first angle is sampled with one jittered
/// point per stratum. The value is Richardson-extrapolated from widths `h`
/// and `h/2`; a relative change above 1% between them, as happens on
/// degenerate triads where the estimate grows without bound as `h → 0`,
/// marks the estimate as not converged.
pub fn mc_angular_oracle(k: f64, k1: f64, k2: f64, samples: usize, seed: u64) -> Result<OracleEstimate> {
    check_positive(k, k1, k2)?;
    if samples < 10_000 {
        return Err(WtError::domain(format!("oracle needs at least 1e4 samples, got {samples}")));
    }
    let n = samples - samples % 2;
    let h = 1e-3 * k.min(k1).min(k2);
    let half = 0.5 * h;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dtheta = 2.0 * PI / n as f64;
    let gauss = |x: f64, w: f64| (-0.5 * (x / w).powi(2)).exp() / (w * (2.0 * PI).sqrt());

    let (mut sum_h, mut sum_half, mut var) = (0.0, 0.0, 0.0);
    let mut prev_r = 0.0;
    for i in 0..n {
        let theta = (i as f64 + rng.gen::<f64>()) * dtheta;
        let q = (k * k + k1 * k1 - 2.0 * k * k1 * theta.cos()).max(0.0).sqrt();
        let f_h = gauss(q - k2, h) / k2;
        let f_half = gauss(q - k2, half) / k2;
        let r = (4.0 * f_half - f_h) / 3.0;
        sum_h += f_h;
        sum_half += f_half;
        if i % 2 == 1 {
            var += (r - prev_r).powi(2);
        }
        prev_r = r;
    }
    let i_h = sum_h * dtheta;
    let i_half = sum_half * dtheta;
    let estimate = (4.0 * i_half - i_h) / 3.0;
    let std_error = var.sqrt() * dtheta;
    let bias_check = (i_h - i_half).abs();
    let converged = estimate > 0.0 && std_error.is_finite() && bias_check <= 1e-2 * estimate.abs();
    Ok(OracleEstimate {
        estimate,
        std_error,
        bias_check,
        mollifier_width: h,
        samples: n,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResonantPartner {
    pub k2: f64,
    /// `1 / |dω/dk|` at `k2`, the Jacobian of the frequency delta.
    pub jacobian: f64,
    /// The resonant triad, sum wave first, with cancellation-free gaps.
    pub triad: Triad,
}

/// Solves `ω(k) = ω(k1) + ω(k2)` for `k2`. The triad is `(k; k1, k2)`.
pub fn resonant_partner(system: &WaveSystem, k: f64, k1: f64) -> Result<Option<ResonantPartner>> {
    if !(k > 0.0 && k1 > 0.0) {
        return Err(WtError::domain(format!("need k, k1 > 0, got ({k}, {k1})")));
    }
    if let Some((_, alpha)) = system.dispersion.power_law() {
        let r = (k1 / k).powf(alpha);
        if !(r < 1.0) {
            return Ok(None);
        }
        // k2 = k (1 - r)^{1/α}, and k - k2 from expm1 so that it survives k2 ≈ k.
        let l = (-r).ln_1p() / alpha;
        let k2 = k * l.exp();
        let triad = Triad {
            sum: k,
            a: k1,
            b: k2,
            gap_a: k - k1,
            gap_b: -k * l.exp_m1(),
        };
        return with_jacobian(system, k2, triad).map(Some);
    }
    let w = system.omega(k) - system.omega(k1);
    if !(w > 0.0) {
        return Ok(None);
    }
    let k2 = system.dispersion.inverse(w)?;
    with_jacobian(system, k2, Triad::new(k, k1, k2)).map(Some)
}

/// Solves `ω(k2) = ω(k) + ω(k1)` for `k2`. The triad is `(k2; k, k1)`.
pub fn sum_partner(system: &WaveSystem, k: f64, k1: f64) -> Result<ResonantPartner> {
    if !(k > 0.0 && k1 > 0.0) {
        return Err(WtError::domain(format!("need k, k1 > 0, got ({k}, {k1})")));
    }
    if let Some((_, alpha)) = system.dispersion.power_law() {
        let gap = |u: f64, v: f64| u * ((v / u).powf(alpha).ln_1p() / alpha).exp_m1();
        let (gap_a, gap_b) = (gap(k, k1), gap(k1, k));
        let k2 = if k >= k1 { k + gap_a } else { k1 + gap_b };
        let triad = Triad {
            sum: k2,
            a: k,
            b: k1,
            gap_a,
            gap_b,
        };
        return with_jacobian(system, k2, triad);
    }
    let k2 = system.dispersion.inverse(system.omega(k) + system.omega(k1))?;
    with_jacobian(system, k2, Triad::new(k2, k, k1))
}

fn with_jacobian(system: &WaveSystem, k2: f64, triad: Triad) -> Result<ResonantPartner> {
    let d = system.omega_derivative(k2).abs();
    if !(d > 0.0) || !k2.is_finite() {
        return Err(WtError::RootFinding(format!("no usable partner at k2 = {k2}")));
    }
    Ok(ResonantPartner {
        k2,
        jacobian: 1.0 / d,
        triad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{capillary_system, power_law_system};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn triangle_factor_examples() {
        assert_relative_eq!(triangle_factor(1.0, 1.0, 1.0).unwrap().unwrap(), 3f64.sqrt() / 2.0);
        assert_eq!(triangle_factor(2.0, 1.0, 1.0).unwrap(), Some(0.0));
        assert_relative_eq!(triangle_factor(5.0, 4.0, 3.0).unwrap().unwrap(), 12.0);
        assert_eq!(triangle_factor(3.0, 1.0, 1.0).unwrap(), None);
        assert!(triangle_factor(0.0, 1.0, 1.0).is_err());
        assert!(triangle_factor(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn angular_weight_examples() {
        assert_relative_eq!(angular_weight(1.0, 1.0, 1.0).unwrap().unwrap(), 4.0 / 3f64.sqrt());
        assert_relative_eq!(angular_weight(1.0, 1.0, 1.0).unwrap().unwrap(), 2.3094, max_relative = 1e-4);
        assert_relative_eq!(angular_weight(5.0, 4.0, 3.0).unwrap().unwrap(), 1.0 / 6.0);
        assert_eq!(angular_weight(3.0, 1.0, 1.0).unwrap(), None);
        assert_eq!(angular_weight(2.0, 1.0, 1.0).unwrap(), None);
        assert!(TriadGeometry::new(2.0, 1.0, 1.0).unwrap().is_none());
    }

    #[test]
    fn oracle_examples() {
        let eq = mc_angular_oracle(1.0, 1.0, 1.0, 1_000_000, 7).unwrap();
        assert!(eq.converged);
        assert_relative_eq!(eq.estimate, 2.309, max_relative = 1e-2);
        assert!(eq.agrees_with(4.0 / 3f64.sqrt(), 3.0), "{eq:?}");

        let right = mc_angular_oracle(5.0, 4.0, 3.0, 1_000_000, 8).unwrap();
        assert_relative_eq!(right.estimate, 0.1667, max_relative = 1e-2);
        assert!(right.agrees_with(1.0 / 6.0, 3.0), "{right:?}");

        let degenerate = mc_angular_oracle(2.0, 1.0, 1.0, 1_000_000, 9).unwrap();
        assert!(!degenerate.converged, "{degenerate:?}");
        assert!(mc_angular_oracle(1.0, 1.0, 1.0, 100, 0).is_err());
    }

    #[test]
    fn thin_triad_gap_is_resolved() {
        // k - k2 = (2/3) s^{3/2} to leading order, far below the spacing of floats near 1.
        let cap = capillary_system(1.0, 1.0).unwrap();
        let s = 1e-20;
        let p = resonant_partner(&cap, 1.0, s).unwrap().unwrap();
        assert_eq!(p.k2, 1.0);
        assert_relative_eq!(p.triad.gap_b, (2.0 / 3.0) * 1e-30, max_relative = 1e-9);
        let q = sum_partner(&cap, 1.0, s).unwrap();
        assert_relative_eq!(q.triad.gap_a, (2.0 / 3.0) * 1e-30, max_relative = 1e-9);
        assert_relative_eq!(q.triad.triangle_factor().unwrap(), s, max_relative = 1e-9);
    }

    #[test]
    fn oracle_is_seed_deterministic() {
        let a = mc_angular_oracle(1.0, 0.8, 0.7, 20_000, 3).unwrap();
        let b = mc_angular_oracle(1.0, 0.8, 0.7, 20_000, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resonant_partner_examples() {
        let cap = capillary_system(1.0, 1.0).unwrap();
        let k1 = 2f64.powf(-2.0 / 3.0);
        let p = resonant_partner(&cap, 1.0, k1).unwrap().unwrap();
        assert_relative_eq!(p.k2, k1, max_relative = 1e-14);
        assert_relative_eq!(p.jacobian, (2.0 / 3.0) / p.k2.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(p.jacobian, 0.8399, max_relative = 1e-4);

        let linear = power_law_system(1.0, 1.0, 1.0, 2, 1.0).unwrap();
        let p = resonant_partner(&linear, 1.0, 0.25).unwrap().unwrap();
        assert_relative_eq!(p.k2, 0.75, max_relative = 1e-14);
        assert_relative_eq!(p.jacobian, 1.0);

        assert_eq!(resonant_partner(&cap, 1.0, 1.0).unwrap(), None);
        assert_eq!(resonant_partner(&cap, 1.0, 2.0).unwrap(), None);
        assert!(resonant_partner(&cap, 0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn triangle_factor_is_permutation_invariant(a in 0.01f64..10.0, b in 0.01f64..10.0, c in 0.01f64..10.0) {
            let s = triangle_factor(a, b, c).unwrap();
            for (x, y, z) in [(a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)] {
                let t = triangle_factor(x, y, z).unwrap();
                match (s, t) {
                    (Some(s), Some(t)) => prop_assert!((s - t).abs() <= 1e-12 * s.max(1e-300) + 1e-300),
                    (None, None) => {}
                    _ => prop_assert!(false, "domain mismatch"),
                }
            }
        }

        #[test]
        fn heron_matches_expanded_radicand(a in 0.1f64..5.0, b in 0.1f64..5.0, c in 0.1f64..5.0) {
            let expanded = 2.0 * ((a * b).powi(2) + (a * c).powi(2) + (b * c).powi(2))
                - a.powi(4) - b.powi(4) - c.powi(4);
            if let Some(s) = triangle_factor(a, b, c).unwrap() {
                prop_assert!((4.0 * s * s - expanded).abs() <= 1e-9 * (a + b + c).powi(4));
            } else {
                prop_assert!(expanded < 1e-9 * (a + b + c).powi(4));
            }
        }

        #[test]
        fn partner_gaps_match_plain_differences(alpha in 1.05f64..3.0, k in 0.1f64..10.0, frac in 0.01f64..0.99) {
            let sys = power_law_system(1.0, alpha, 1.0, 2, 1.0).unwrap();
            let p = resonant_partner(&sys, k, frac * k).unwrap().unwrap();
            prop_assert!((p.triad.gap_b - (k - p.k2)).abs() <= 1e-12 * k);
            let q = sum_partner(&sys, k, frac * k).unwrap();
            prop_assert!((q.triad.gap_a - (q.k2 - k)).abs() <= 1e-12 * q.k2);
            prop_assert!((q.triad.gap_b - (q.k2 - frac * k)).abs() <= 1e-12 * q.k2);
            let s = triangle_factor(q.k2, k, frac * k).unwrap().unwrap_or(0.0);
            let t = q.triad.triangle_factor().unwrap();
            prop_assert!((s - t).abs() <= 1e-6 * t);
        }

        #[test]
        fn resonance_closure(alpha in 1.05f64..3.0, k in 0.1f64..10.0, frac in 0.01f64..0.99) {
            let sys = power_law_system(1.3, alpha, 1.0, 2, 1.0).unwrap();
            let k1 = frac * k;
            let p = resonant_partner(&sys, k, k1).unwrap().unwrap();
            let w = sys.omega(k);
            prop_assert!((w - sys.omega(k1) - sys.omega(p.k2)).abs() < 1e-10 * w);
        }
    }
}
