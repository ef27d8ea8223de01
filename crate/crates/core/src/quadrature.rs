//! Double-exponential quadrature for integrands with algebraic endpoint
//! singularities and slowly decaying tails.
//!
//! `tanh_sinh` covers finite intervals, `exp_sinh` the half line. Both refine
//! by halving the step in the transformed variable, reusing earlier nodes, and
//! report the change between the last two levels as the error estimate.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WtError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub min_level: u32,
    pub max_level: u32,
}

impl Default for QuadSettings {
    fn default() -> Self {
        QuadSettings {
            rel_tol: 1e-10,
            abs_tol: 0.0,
            min_level: 3,
            max_level: 9,
        }
    }
}

impl QuadSettings {
    /// Same tolerances with one extra level of refinement allowed and half the tolerance.
    pub fn refined(&self) -> Self {
        QuadSettings {
            rel_tol: 0.5 * self.rel_tol,
            abs_tol: 0.5 * self.abs_tol,
            min_level: self.min_level + 1,
            max_level: self.max_level + 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    /// Integral of the absolute value of the integrand.
    pub magnitude: f64,
    pub evaluations: usize,
    pub levels: u32,
}

impl QuadResult {
    pub fn zero() -> Self {
        QuadResult {
            value: 0.0,
            error: 0.0,
            magnitude: 0.0,
            evaluations: 0,
            levels: 0,
        }
    }

    pub fn scale(self, factor: f64) -> Self {
        QuadResult {
            value: self.value * factor,
            error: self.error * factor.abs(),
            magnitude: self.magnitude * factor.abs(),
            ..self
        }
    }

    pub fn rel_error(&self) -> f64 {
        if self.value == 0.0 {
            if self.error == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.error / self.value.abs()
        }
    }
}

impl std::ops::Add for QuadResult {
    type Output = QuadResult;

    fn add(self, rhs: QuadResult) -> QuadResult {
        QuadResult {
            value: self.value + rhs.value,
            error: self.error + rhs.error,
            magnitude: self.magnitude + rhs.magnitude,
            evaluations: self.evaluations + rhs.evaluations,
            levels: self.levels.max(rhs.levels),
        }
    }
}

const INITIAL_STEP: f64 = 0.5;

/// Maps `t` to `(x, dx/dt)`; returns `None` where the node is unusable
/// (underflowed distance to a singular endpoint).
trait Transform {
    fn t_range(&self) -> (f64, f64);
    fn node(&self, t: f64) -> Option<(f64, f64)>;
}

struct TanhSinh {
    a: f64,
    b: f64,
}

impl Transform for TanhSinh {
    fn t_range(&self) -> (f64, f64) {
        (-6.0, 6.0)
    }

    fn node(&self, t: f64) -> Option<(f64, f64)> {
        let len = self.b - self.a;
        let u = FRAC_PI_2 * t.sinh();
        let cu = u.cosh();
        let w = 0.5 * len * FRAC_PI_2 * t.cosh() / (cu * cu);
        // Distances to the nearer endpoint are formed directly so that nodes
        // crowding a singular endpoint keep full relative accuracy.
        let x = if t < 0.0 {
            let d = len / (1.0 + (-2.0 * u).exp());
            if d < 1e-280 * len.max(1.0) {
                return None;
            }
            let x = self.a + d;
            if x == self.a {
                return None;
            }
            x
        } else {
            let d = len / (1.0 + (2.0 * u).exp());
            if d < 1e-280 * len.max(1.0) {
                return None;
            }
            let x = self.b - d;
            if x == self.b {
                return None;
            }
            x
        };
        Some((x, w))
    }
}

struct ExpSinh {
    a: f64,
    scale: f64,
}

impl Transform for ExpSinh {
    fn t_range(&self) -> (f64, f64) {
        // Upper end keeps x below ~1e40 * scale.
        (-6.5, 4.75)
    }

    fn node(&self, t: f64) -> Option<(f64, f64)> {
        let e = (FRAC_PI_2 * t.sinh()).exp();
        let d = self.scale * e;
        if d < 1e-280 * self.scale {
            return None;
        }
        Some((self.a + d, d * FRAC_PI_2 * t.cosh()))
    }
}

fn quad_error(what: &str, x: f64) -> WtError {
    WtError::Quadrature {
        what: format!("{what}: integrand not finite at x = {x:e}"),
        estimate: f64::NAN,
        error: f64::NAN,
    }
}

/// Integrates `N` components sharing the same nodes. A component converges
/// when its level difference is below `rel_tol` times the integral of its
/// absolute value, so integrals that nearly cancel are judged against the
/// size of their parts.
fn integrate<T: Transform, const N: usize, F: FnMut(f64) -> [f64; N]>(
    transform: &T,
    mut f: F,
    settings: &QuadSettings,
    what: &str,
) -> Result<[QuadResult; N]> {
    let (t_lo, t_hi) = transform.t_range();
    let mut evaluations = 0usize;
    let mut raw = [0.0f64; N];
    let mut raw_abs = [0.0f64; N];
    let mut edge = [0.0f64; N];
    let mut add_node = |t: f64, is_edge: bool, raw: &mut [f64; N], raw_abs: &mut [f64; N], edge: &mut [f64; N]| -> Result<()> {
        if let Some((x, w)) = transform.node(t) {
            evaluations += 1;
            let y = f(x);
            for i in 0..N {
                if !y[i].is_finite() {
                    return Err(quad_error(what, x));
                }
                let v = y[i] * w;
                raw[i] += v;
                raw_abs[i] += v.abs();
                if is_edge {
                    edge[i] = edge[i].max(v.abs());
                }
            }
        }
        Ok(())
    };

    let mut h = INITIAL_STEP;
    let j_lo = (t_lo / h).ceil() as i64;
    let j_hi = (t_hi / h).floor() as i64;
    for j in j_lo..=j_hi {
        add_node(j as f64 * h, j == j_lo || j == j_hi, &mut raw, &mut raw_abs, &mut edge)?;
    }
    let mut estimate = raw.map(|r| r * h);
    let mut error = [f64::INFINITY; N];
    let mut level = 0;
    let tolerance = |raw_abs: &[f64; N], h: f64, i: usize| settings.abs_tol.max(settings.rel_tol * raw_abs[i] * h);
    while level < settings.max_level {
        level += 1;
        h *= 0.5;
        let j_lo = (t_lo / h).ceil() as i64;
        let j_hi = (t_hi / h).floor() as i64;
        let mut j = if j_lo.rem_euclid(2) == 1 { j_lo } else { j_lo + 1 };
        while j <= j_hi {
            add_node(j as f64 * h, false, &mut raw, &mut raw_abs, &mut edge)?;
            j += 2;
        }
        let mut done = level >= settings.min_level;
        for i in 0..N {
            let next = raw[i] * h;
            error[i] = (next - estimate[i]).abs();
            estimate[i] = next;
            done &= error[i] <= tolerance(&raw_abs, h, i);
        }
        if done {
            break;
        }
    }
    let mut out = [QuadResult::zero(); N];
    for i in 0..N {
        // Truncation of the transformed range shows up as non-negligible edge terms.
        let err = error[i] + edge[i] * INITIAL_STEP;
        let magnitude = raw_abs[i] * h;
        if !(err <= tolerance(&raw_abs, h, i)) && !(magnitude == 0.0) {
            return Err(WtError::Quadrature {
                what: if N == 1 { what.to_string() } else { format!("{what} (component {i})") },
                estimate: estimate[i],
                error: err,
            });
        }
        out[i] = QuadResult {
            value: estimate[i],
            error: if magnitude == 0.0 { 0.0 } else { err },
            magnitude,
            evaluations,
            levels: level,
        };
    }
    Ok(out)
}

/// `int_a^b f(x) dx`; tolerant of integrable singularities at either end.
///
/// Near `a` the nodes resolve distances down to the underflow limit, near `b`
/// only down to the spacing of floats around `b`, so a strong singularity is
/// best placed at `a`.
pub fn tanh_sinh<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, settings: &QuadSettings) -> Result<QuadResult> {
    if !(b > a) {
        if a == b {
            return Ok(QuadResult::zero());
        }
        return Err(WtError::domain(format!("tanh_sinh needs a < b, got [{a}, {b}]")));
    }
    let [r] = integrate(&TanhSinh { a, b }, |x| [f(x)], settings, "tanh-sinh")?;
    Ok(r)
}

/// Vector form of [`tanh_sinh`]: all components share the nodes.
pub fn tanh_sinh_n<const N: usize, F: FnMut(f64) -> [f64; N]>(
    f: F,
    a: f64,
    b: f64,
    settings: &QuadSettings,
) -> Result<[QuadResult; N]> {
    if !(b > a) {
        if a == b {
            return Ok([QuadResult::zero(); N]);
        }
        return Err(WtError::domain(format!("tanh_sinh needs a < b, got [{a}, {b}]")));
    }
    integrate(&TanhSinh { a, b }, f, settings, "tanh-sinh")
}

/// `int_a^inf f(x) dx` with the transform centred at `a + scale`.
pub fn exp_sinh<F: FnMut(f64) -> f64>(mut f: F, a: f64, scale: f64, settings: &QuadSettings) -> Result<QuadResult> {
    if !(scale > 0.0) {
        return Err(WtError::domain(format!("exp_sinh needs a positive scale, got {scale}")));
    }
    let [r] = integrate(&ExpSinh { a, scale }, |x| [f(x)], settings, "exp-sinh")?;
    Ok(r)
}

/// Vector form of [`exp_sinh`].
pub fn exp_sinh_n<const N: usize, F: FnMut(f64) -> [f64; N]>(
    f: F,
    a: f64,
    scale: f64,
    settings: &QuadSettings,
) -> Result<[QuadResult; N]> {
    if !(scale > 0.0) {
        return Err(WtError::domain(format!("exp_sinh needs a positive scale, got {scale}")));
    }
    integrate(&ExpSinh { a, scale }, f, settings, "exp-sinh")
}
