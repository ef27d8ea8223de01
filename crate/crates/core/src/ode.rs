//! Adaptive Dormand–Prince 5(4) integration with exact stops.

use serde::{Deserialize, Serialize};

use crate::error::{Result, WtError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorControls {
    pub rtol: f64,
    /// Floor added to every component's absolute tolerance.
    pub atol_floor: f64,
    pub initial_step: Option<f64>,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for IntegratorControls {
    fn default() -> Self {
        IntegratorControls {
            rtol: 1e-10,
            atol_floor: 1e-300,
            initial_step: None,
            min_step: 1e-14,
            max_steps: 1_000_000,
        }
    }
}

impl IntegratorControls {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.rtol < 1.0) {
            return Err(WtError::domain(format!("rtol must lie in (0, 1), got {}", self.rtol)));
        }
        if !(self.atol_floor >= 0.0) || !(self.min_step > 0.0) || self.max_steps == 0 {
            return Err(WtError::domain("atol_floor >= 0, min_step > 0 and max_steps > 0 required"));
        }
        if let Some(h) = self.initial_step {
            if !(h > 0.0) {
                return Err(WtError::domain("initial_step must be positive"));
            }
        }
        Ok(())
    }
}

/// An accepted (tentatively) step handed to the step hook.
pub struct Step<'a> {
    pub t0: f64,
    pub t1: f64,
    pub y0: &'a [f64],
    pub y1: &'a [f64],
    pub f0: &'a [f64],
    pub f1: &'a [f64],
}

impl Step<'_> {
    pub fn h(&self) -> f64 {
        self.t1 - self.t0
    }

    /// Cubic Hermite value at the step midpoint.
    pub fn midpoint(&self) -> Vec<f64> {
        let h = self.h();
        (0..self.y0.len())
            .map(|i| 0.5 * (self.y0[i] + self.y1[i]) + 0.125 * h * (self.f0[i] - self.f1[i]))
            .collect()
    }
}

/// What the step hook decides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    /// Retry from `t0` with half the step.
    Halve,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

pub struct OdeOutput {
    /// `(t, y)` at each stop, in order.
    pub stops: Vec<(f64, Vec<f64>)>,
    pub stats: OdeStats,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// Fifth minus fourth order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `y' = rhs(t, y)` from `t0` to the last of `stops`, landing on
/// every stop exactly.
///
/// `atol[i]` is the absolute tolerance of component `i` (the floor from
/// `controls` is added). `admissible` can veto a step result (for instance
/// negative densities); `on_step` sees every step that passed the error test
/// and may still ask for a halved retry. Both rejections shrink the step, and
/// a step below `min_step` (relative to `max(1, |t|)`) is an error.
pub fn dopri5<F, A, H>(
    mut rhs: F,
    t0: f64,
    y0: &[f64],
    stops: &[f64],
    atol: &[f64],
    controls: &IntegratorControls,
    mut admissible: A,
    mut on_step: H,
) -> Result<OdeOutput>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    A: FnMut(&[f64]) -> bool,
    H: FnMut(&Step) -> Result<Verdict>,
{
    controls.validate()?;
    let dim = y0.len();
    if atol.len() != dim {
        return Err(WtError::invalid("atol length must match the state"));
    }
    if stops.windows(2).any(|w| w[1] <= w[0]) || stops.first().is_some_and(|s| *s <= t0) {
        return Err(WtError::domain("stops must be increasing and after t0"));
    }
    let atol: Vec<f64> = atol.iter().map(|a| a + controls.atol_floor).collect();
    let rtol = controls.rtol;
    let mut stats = OdeStats::default();
    let mut out = Vec::with_capacity(stops.len());
    let Some(&t_end) = stops.last() else {
        return Ok(OdeOutput { stops: out, stats });
    };

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut f = vec![0.0; dim];
    rhs(t, &y, &mut f)?;
    stats.evaluations += 1;

    let norm = |v: &[f64], y_a: &[f64], y_b: &[f64]| -> f64 {
        if dim == 0 {
            return 0.0;
        }
        let s: f64 = (0..dim)
            .map(|i| {
                let sc = atol[i] + rtol * y_a[i].abs().max(y_b[i].abs());
                (v[i] / sc).powi(2)
            })
            .sum();
        (s / dim as f64).sqrt()
    };

    let mut h = match controls.initial_step {
        Some(h) => h,
        None => {
            // Hairer–Nørsett–Wanner starting step.
            let d0 = norm(&y, &y, &y);
            let d1 = norm(&f, &y, &y);
            let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
            let y1: Vec<f64> = (0..dim).map(|i| y[i] + h0 * f[i]).collect();
            let mut f1 = vec![0.0; dim];
            rhs(t + h0, &y1, &mut f1)?;
            stats.evaluations += 1;
            let df: Vec<f64> = (0..dim).map(|i| f1[i] - f[i]).collect();
            let d2 = norm(&df, &y, &y) / h0;
            let h1 = if d1.max(d2) <= 1e-15 {
                (h0 * 1e-3).max(1e-6)
            } else {
                (0.01 / d1.max(d2)).powf(0.2)
            };
            (100.0 * h0).min(h1)
        }
    }
    .min(t_end - t0);

    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut k5 = vec![0.0; dim];
    let mut k6 = vec![0.0; dim];
    let mut k7 = vec![0.0; dim];
    let mut ys = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut err = vec![0.0; dim];
    let mut next_stop = 0;

    while next_stop < stops.len() {
        let target = stops[next_stop];
        if stats.accepted + stats.rejected >= controls.max_steps {
            return Err(WtError::StepUnderflow {
                t,
                h,
                reason: format!("step budget of {} exhausted", controls.max_steps),
            });
        }
        let mut hit_stop = false;
        let mut step = h;
        if t + step >= target || t + 1.01 * step >= target {
            step = target - t;
            hit_stop = true;
        }
        if step < controls.min_step * t.abs().max(1.0) {
            return Err(WtError::StepUnderflow {
                t,
                h: step,
                reason: "step size fell below the minimum".into(),
            });
        }

        for i in 0..dim {
            ys[i] = y[i] + step * A21 * f[i];
        }
        rhs(t + C2 * step, &ys, &mut k2)?;
        for i in 0..dim {
            ys[i] = y[i] + step * (A31 * f[i] + A32 * k2[i]);
        }
        rhs(t + C3 * step, &ys, &mut k3)?;
        for i in 0..dim {
            ys[i] = y[i] + step * (A41 * f[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(t + C4 * step, &ys, &mut k4)?;
        for i in 0..dim {
            ys[i] = y[i] + step * (A51 * f[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(t + C5 * step, &ys, &mut k5)?;
        for i in 0..dim {
            ys[i] = y[i] + step * (A61 * f[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs(t + step, &ys, &mut k6)?;
        for i in 0..dim {
            y_new[i] = y[i] + step * (A71 * f[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        let t_new = if hit_stop { target } else { t + step };
        rhs(t_new, &y_new, &mut k7)?;
        stats.evaluations += 6;
        for i in 0..dim {
            err[i] = step * (E1 * f[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let e = norm(&err, &y, &y_new);
        if !e.is_finite() {
            stats.rejected += 1;
            h = 0.25 * step;
            continue;
        }
        if e > 1.0 {
            stats.rejected += 1;
            h = step * (0.9 * e.powf(-0.2)).max(0.2);
            continue;
        }
        if !admissible(&y_new) {
            stats.rejected += 1;
            h = 0.5 * step;
            continue;
        }
        let verdict = on_step(&Step {
            t0: t,
            t1: t_new,
            y0: &y,
            y1: &y_new,
            f0: &f,
            f1: &k7,
        })?;
        if verdict == Verdict::Halve {
            stats.rejected += 1;
            h = 0.5 * step;
            continue;
        }
        stats.accepted += 1;
        t = t_new;
        std::mem::swap(&mut y, &mut y_new);
        std::mem::swap(&mut f, &mut k7);
        let grow = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
        if hit_stop {
            out.push((t, y.clone()));
            next_stop += 1;
            // Keep the step the controller wanted rather than the clipped one.
            h = h.max(step * grow).min(step.max(h) * 5.0);
        } else {
            h = step * grow;
        }
    }
    Ok(OdeOutput { stops: out, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn accept(_: &Step) -> Result<Verdict> {
        Ok(Verdict::Accept)
    }

    #[test]
    fn exponential_decay() {
        let out = dopri5(
            |_, y, dy| {
                dy[0] = -y[0];
                Ok(())
            },
            0.0,
            &[1.0],
            &[1.0, 2.0, 5.0],
            &[0.0],
            &IntegratorControls {
                rtol: 1e-12,
                ..Default::default()
            },
            |_| true,
            accept,
        )
        .unwrap();
        for (t, y) in &out.stops {
            assert_relative_eq!(y[0], (-t).exp(), max_relative = 1e-10);
        }
        assert_eq!(out.stops[2].0, 5.0);
    }

    #[test]
    fn harmonic_oscillator_conserves_phase() {
        let out = dopri5(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
                Ok(())
            },
            0.0,
            &[1.0, 0.0],
            &[std::f64::consts::TAU],
            &[1e-14, 1e-14],
            &IntegratorControls {
                rtol: 1e-12,
                ..Default::default()
            },
            |_| true,
            accept,
        )
        .unwrap();
        let y = &out.stops[0].1;
        assert!((y[0] - 1.0).abs() < 1e-9 && y[1].abs() < 1e-9);
    }

    #[test]
    fn inadmissible_steps_are_retried_smaller() {
        // y' = -10 y with a huge first step would overshoot below zero.
        let out = dopri5(
            |_, y, dy| {
                dy[0] = -10.0 * y[0];
                Ok(())
            },
            0.0,
            &[1.0],
            &[3.0],
            &[0.0],
            &IntegratorControls {
                rtol: 1e-3,
                initial_step: Some(1.0),
                ..Default::default()
            },
            |y| y[0] >= 0.0,
            accept,
        )
        .unwrap();
        assert!(out.stops[0].1[0] >= 0.0);
    }

    #[test]
    fn underflow_is_reported() {
        let r = dopri5(
            |_, _, dy| {
                dy[0] = 1.0;
                Ok(())
            },
            0.0,
            &[0.0],
            &[1.0],
            &[0.0],
            &IntegratorControls::default(),
            |_| false,
            accept,
        );
        assert!(matches!(r, Err(WtError::StepUnderflow { .. })));
    }

    #[test]
    fn bad_stops_rejected() {
        let r = dopri5(|_, _, _| Ok(()), 1.0, &[0.0], &[0.5], &[0.0], &IntegratorControls::default(), |_| true, accept);
        assert!(r.is_err());
    }
}
