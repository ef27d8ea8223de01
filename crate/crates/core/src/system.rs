//! Three-wave media: dispersion law, interaction vertex and physical parameters.
//!
//! A [`WaveSystem`] is evaluated only on magnitudes. The vertex `V(k, k1, k2)`
//! is the coupling of the triad in which `k` is the sum wave, `k = k1 + k2` as
//! vectors, so every dot product it needs is fixed by the three side lengths.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WtError};
use crate::resonance::Triad;

/// Zakharov-Filonenko constant for capillary waves.
pub const ZF_CONSTANT: f64 = 13.98;

/// Spectral exponent of the capillary constant-flux spectrum, `n ~ k^-17/4`.
pub const ZF_EXPONENT: f64 = 17.0 / 4.0;

/// Homogeneity degree of the capillary vertex.
pub const CAPILLARY_VERTEX_DEGREE: f64 = 9.0 / 4.0;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type TriadFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Dispersion {
    /// `omega = coefficient * k^exponent`.
    PowerLaw { coefficient: f64, exponent: f64 },
    /// Arbitrary strictly increasing law with its derivative.
    Custom { omega: ScalarFn, derivative: ScalarFn },
}

impl Dispersion {
    pub fn omega(&self, k: f64) -> f64 {
        match self {
            Dispersion::PowerLaw {
                coefficient,
                exponent,
            } => coefficient * k.powf(*exponent),
            Dispersion::Custom { omega, .. } => omega(k),
        }
    }

    pub fn derivative(&self, k: f64) -> f64 {
        match self {
            Dispersion::PowerLaw {
                coefficient,
                exponent,
            } => coefficient * exponent * k.powf(exponent - 1.0),
            Dispersion::Custom { derivative, .. } => derivative(k),
        }
    }

    /// Wavenumber with `omega(k) = w`, for `w > 0`.
    pub fn inverse(&self, w: f64) -> Result<f64> {
        if !(w > 0.0) || !w.is_finite() {
            return Err(WtError::domain(format!("cannot invert dispersion at omega = {w}")));
        }
        match self {
            Dispersion::PowerLaw {
                coefficient,
                exponent,
            } => Ok((w / coefficient).powf(1.0 / exponent)),
            Dispersion::Custom { omega, .. } => invert_monotone(omega.as_ref(), w),
        }
    }

    pub fn power_law(&self) -> Option<(f64, f64)> {
        match self {
            Dispersion::PowerLaw {
                coefficient,
                exponent,
            } => Some((*coefficient, *exponent)),
            Dispersion::Custom { .. } => None,
        }
    }
}

impl fmt::Debug for Dispersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dispersion::PowerLaw {
                coefficient,
                exponent,
            } => write!(f, "PowerLaw({coefficient} k^{exponent})"),
            Dispersion::Custom { .. } => write!(f, "Custom"),
        }
    }
}

/// Bracketed bisection/secant hybrid on a strictly increasing function,
/// converged to 1e-12 relative.
fn invert_monotone(omega: &(dyn Fn(f64) -> f64 + Send + Sync), w: f64) -> Result<f64> {
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let mut expansions = 0;
    while omega(hi) < w {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 2000 {
            return Err(WtError::RootFinding(format!("no bracket for omega = {w}")));
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if omega(mid) < w {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(WtError::RootFinding(format!(
        "bisection stalled for omega = {w} in [{lo}, {hi}]"
    )))
}

#[derive(Clone)]
pub enum Vertex {
    /// Deep-water capillary coupling, `amplitude * W(k, k1, k2)`.
    Capillary { amplitude: f64 },
    Constant(f64),
    /// Arbitrary coupling; `homogeneity` is its scaling degree when known.
    Custom {
        f: TriadFn,
        homogeneity: Option<f64>,
    },
}

impl Vertex {
    pub fn eval(&self, k: f64, k1: f64, k2: f64) -> f64 {
        self.eval_triad(&Triad::new(k, k1, k2))
    }

    pub fn eval_triad(&self, t: &Triad) -> f64 {
        let (k, k1, k2) = (t.sum, t.a, t.b);
        match self {
            Vertex::Capillary { amplitude } => amplitude * capillary_shape_triad(t),
            Vertex::Constant(v) => *v,
            Vertex::Custom { f, .. } => f(k, k1, k2),
        }
    }

    pub fn homogeneity(&self) -> Option<f64> {
        match self {
            Vertex::Capillary { .. } => Some(CAPILLARY_VERTEX_DEGREE),
            Vertex::Constant(_) => Some(0.0),
            Vertex::Custom { homogeneity, .. } => *homogeneity,
        }
    }

    /// Overall amplitude multiplying a dimensionless shape, for scale-invariant couplings.
    fn amplitude(&self) -> Option<f64> {
        match self {
            Vertex::Capillary { amplitude } => Some(*amplitude),
            Vertex::Constant(v) => Some(*v),
            Vertex::Custom { homogeneity, .. } => homogeneity.map(|_| 1.0),
        }
    }
}

impl fmt::Debug for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Vertex::Capillary { amplitude } => write!(f, "Capillary({amplitude:e})"),
            Vertex::Constant(v) => write!(f, "Constant({v})"),
            Vertex::Custom { homogeneity, .. } => write!(f, "Custom(m = {homogeneity:?})"),
        }
    }
}

/// Shape of the capillary coupling at unit surface tension and density,
/// without the `1/(8 pi sqrt 2)` prefactor.
///
/// With `L(a, b) = a.b + |a||b|` and `k = k1 + k2`:
///
/// `W = L(k1,k2) (k1 k2/k)^{1/4} - L(-k,k1) (k k1/k2)^{1/4} - L(-k,k2) (k k2/k1)^{1/4}`.
pub fn capillary_shape(k: f64, k1: f64, k2: f64) -> f64 {
    capillary_shape_triad(&Triad::new(k, k1, k2))
}

/// [`capillary_shape`] on a triad with known gaps.
///
/// With `x, y, z` the square roots of `sum, a, b` the bracket
/// `e1 e2 yz - e0 e1 xy - e0 e2 xz` loses the leading order of its first two
/// terms when `a` is short; they combine into
/// `e1 y (x - z)(x + z - y)(x + y + z)`, with `x - z` taken from the gap.
/// The mirror form is used when `b` is the shorter side.
pub fn capillary_shape_triad(t: &Triad) -> f64 {
    let [e0, e1, e2] = t.defects();
    let (x, y, z) = (t.sum.sqrt(), t.a.sqrt(), t.b.sqrt());
    let bracket = if t.a <= t.b {
        let x_minus_z = t.gap_b / (x + z);
        e1 * y * x_minus_z * (x + z - y) * (x + y + z) - e0 * e2 * x * z
    } else {
        let x_minus_y = t.gap_a / (x + y);
        e2 * z * x_minus_y * (x + y - z) * (x + y + z) - e0 * e1 * x * y
    };
    0.5 * bracket / (t.sum * t.a * t.b).powf(0.25)
}

/// Power-law structure of a scale-invariant system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleInvariance {
    pub dispersion_coefficient: f64,
    pub dispersion_exponent: f64,
    pub vertex_homogeneity: f64,
    /// Dimensional factor `s` in `gamma = I * A * s / (16 pi) * k^y`.
    pub rate_scale: f64,
}

impl ScaleInvariance {
    /// Exponent `x` of the constant energy-flux spectrum `n ~ k^-x`.
    pub fn kz_exponent(&self, dimension: u32) -> f64 {
        self.vertex_homogeneity + f64::from(dimension)
    }

    /// Scaling exponent of a rate for a power-law spectrum `n ~ k^-x`.
    pub fn rate_exponent(&self, dimension: u32, x: f64) -> f64 {
        2.0 * self.vertex_homogeneity + f64::from(dimension) - x - self.dispersion_exponent
    }
}

#[derive(Clone)]
pub struct WaveSystem {
    pub name: String,
    pub dispersion: Dispersion,
    pub vertex: Vertex,
    pub dimension: u32,
    pub epsilon: f64,
}

impl fmt::Debug for WaveSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WaveSystem")
            .field("name", &self.name)
            .field("dispersion", &self.dispersion)
            .field("vertex", &self.vertex)
            .field("dimension", &self.dimension)
            .field("epsilon", &self.epsilon)
            .finish()
    }
}

impl WaveSystem {
    pub fn new(
        name: impl Into<String>,
        dispersion: Dispersion,
        vertex: Vertex,
        dimension: u32,
        epsilon: f64,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(WtError::domain("spatial dimension must be positive"));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(WtError::domain(format!("epsilon must be positive, got {epsilon}")));
        }
        if let Dispersion::PowerLaw {
            coefficient,
            exponent,
        } = dispersion
        {
            if !(coefficient > 0.0 && exponent > 0.0) {
                return Err(WtError::domain(
                    "power-law dispersion needs positive coefficient and exponent",
                ));
            }
        }
        Ok(WaveSystem {
            name: name.into(),
            dispersion,
            vertex,
            dimension,
            epsilon,
        })
    }

    #[inline]
    pub fn omega(&self, k: f64) -> f64 {
        self.dispersion.omega(k)
    }

    #[inline]
    pub fn omega_derivative(&self, k: f64) -> f64 {
        self.dispersion.derivative(k)
    }

    #[inline]
    pub fn vertex(&self, k: f64, k1: f64, k2: f64) -> f64 {
        self.vertex.eval(k, k1, k2)
    }

    #[inline]
    pub fn vertex_triad(&self, t: &Triad) -> f64 {
        self.vertex.eval_triad(t)
    }

    pub fn vertex_homogeneity(&self) -> Option<f64> {
        self.vertex.homogeneity()
    }

    pub fn scale_invariance(&self) -> Option<ScaleInvariance> {
        let (c, alpha) = self.dispersion.power_law()?;
        let m = self.vertex.homogeneity()?;
        let amp = self.vertex.amplitude()?;
        let eps2 = self.epsilon * self.epsilon;
        Some(ScaleInvariance {
            dispersion_coefficient: c,
            dispersion_exponent: alpha,
            vertex_homogeneity: m,
            rate_scale: 128.0 * PI * PI * eps2 * amp * amp / c,
        })
    }
}

/// Deep-water capillary waves.
///
/// `omega = (sigma/rho)^{1/2} k^{3/2}` in two dimensions, with the coupling
/// `V = sigma^{1/2} / (8 pi sqrt(2) rho) * W(k, k1, k2)`. The
/// `sigma^{1/2}/rho` dependence makes the growth rate on the flux spectrum
/// scale as `A sqrt(sigma) / rho^{3/2}`.
pub fn capillary_system(surface_tension: f64, density: f64) -> Result<WaveSystem> {
    if !(surface_tension > 0.0 && surface_tension.is_finite()) {
        return Err(WtError::domain(format!(
            "surface tension must be positive, got {surface_tension}"
        )));
    }
    if !(density > 0.0 && density.is_finite()) {
        return Err(WtError::domain(format!("density must be positive, got {density}")));
    }
    let amplitude = surface_tension.sqrt() / (density * 8.0 * PI * SQRT_2);
    WaveSystem::new(
        "capillary",
        Dispersion::PowerLaw {
            coefficient: (surface_tension / density).sqrt(),
            exponent: 1.5,
        },
        Vertex::Capillary { amplitude },
        2,
        1.0,
    )
}

/// Power-law dispersion with a constant coupling.
pub fn power_law_system(
    coefficient: f64,
    exponent: f64,
    coupling: f64,
    dimension: u32,
    epsilon: f64,
) -> Result<WaveSystem> {
    WaveSystem::new(
        format!("power-law(alpha={exponent})"),
        Dispersion::PowerLaw {
            coefficient,
            exponent,
        },
        Vertex::Constant(coupling),
        dimension,
        epsilon,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub surface_tension: f64,
    pub density: f64,
    pub energy_flux: f64,
    pub kz_constant: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            surface_tension: 1.0,
            density: 1.0,
            energy_flux: 1.0,
            kz_constant: ZF_CONSTANT,
        }
    }
}

impl PhysicalParams {
    pub fn new(surface_tension: f64, density: f64, energy_flux: f64, kz_constant: f64) -> Result<Self> {
        let p = PhysicalParams {
            surface_tension,
            density,
            energy_flux,
            kz_constant,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("surface_tension", self.surface_tension),
            ("density", self.density),
            ("energy_flux", self.energy_flux),
            ("kz_constant", self.kz_constant),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(WtError::domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// `A = sqrt(P) rho^{3/2} C / sigma^{1/4}`.
    pub fn zf_amplitude(&self) -> f64 {
        self.energy_flux.sqrt() * self.density.powf(1.5) * self.kz_constant
            / self.surface_tension.powf(0.25)
    }

    /// `sqrt(sigma) / rho^{3/2}`, the factor multiplying `A I / (16 pi)` in the growth rate.
    pub fn rate_scale(&self) -> f64 {
        self.surface_tension.sqrt() / self.density.powf(1.5)
    }

    pub fn system(&self) -> Result<WaveSystem> {
        capillary_system(self.surface_tension, self.density)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn capillary_dispersion_examples() {
        let sys = capillary_system(1.0, 1.0).unwrap();
        assert_relative_eq!(sys.omega(1.0), 1.0);
        assert_relative_eq!(sys.omega(4.0), 8.0, max_relative = 1e-15);
        assert_eq!(sys.dimension, 2);
        assert_eq!(sys.vertex_homogeneity(), Some(2.25));
    }

    #[test]
    fn capillary_rejects_non_positive_inputs() {
        assert!(capillary_system(0.0, 1.0).is_err());
        assert!(capillary_system(1.0, -2.0).is_err());
        assert!(capillary_system(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn capillary_vertex_is_symmetric_and_homogeneous() {
        let sys = capillary_system(0.7, 1.3).unwrap();
        for &(k, k1, k2) in &[(1.0, 0.6, 0.7), (2.0, 1.5, 0.8), (1.0, 0.63, 0.63), (3.0, 0.2, 2.9)] {
            assert_relative_eq!(sys.vertex(k, k1, k2), sys.vertex(k, k2, k1), max_relative = 1e-14);
            let ratio = sys.vertex(2.0 * k, 2.0 * k1, 2.0 * k2) / sys.vertex(k, k1, k2);
            assert_relative_eq!(ratio, 2f64.powf(2.25), max_relative = 1e-10);
        }
        assert_relative_eq!(2f64.powf(2.25), 4.7568, max_relative = 1e-4);
    }

    #[test]
    fn rate_scale_matches_capillary_prefactor() {
        let params = PhysicalParams::new(2.0, 3.0, 1.0, ZF_CONSTANT).unwrap();
        let sys = params.system().unwrap();
        let inv = sys.scale_invariance().unwrap();
        assert_relative_eq!(inv.rate_scale, params.rate_scale(), max_relative = 1e-13);
        assert_relative_eq!(inv.kz_exponent(2), ZF_EXPONENT);
        assert_relative_eq!(inv.rate_exponent(2, ZF_EXPONENT), 0.75);
    }

    #[test]
    fn custom_dispersion_inverts_by_bisection() {
        let d = Dispersion::Custom {
            omega: Arc::new(|k: f64| k + k * k * k),
            derivative: Arc::new(|k: f64| 1.0 + 3.0 * k * k),
        };
        let k = d.inverse(10.0).unwrap();
        assert_relative_eq!(k + k * k * k, 10.0, max_relative = 1e-12);
        assert!(d.inverse(0.0).is_err());
    }

    #[test]
    fn zf_amplitude_unit_params() {
        let p = PhysicalParams::default();
        assert_relative_eq!(p.zf_amplitude(), 13.98);
        assert!(PhysicalParams::new(1.0, 1.0, 0.0, 13.98).is_err());
    }
}
