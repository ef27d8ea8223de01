//! One-point moment hierarchy: initial states, time evolution, deviations
//! from Gaussian statistics and their exact solutions, fluctuation growth
//! and the large-order transport picture.
//!
//! With `θ = ∫ η/n dt` the deviations `F[p] = M[p]/(p! n^p) - 1` obey
//! `dF[p]/dθ = p (F[p-1] - F[p])`, `F[1] = 0`, whenever `n` is stationary.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use crate::error::{Result, WtError};
use crate::hierarchy::{factorial, ln_factorials, DeviationField, MomentHierarchy};
use crate::kinetic::{integrate_moments, EvolveControls, RateMode};
use crate::ode::{dopri5, IntegratorControls, OdeStats, Verdict};
use crate::quadrature::{tanh_sinh, QuadSettings};
use crate::rates::{gamma_prefactor, RateField, REFERENCE_GAMMA_PREFACTOR};
use crate::spectrum::{zf_spectrum, Grid, IsotropicSpectrum};
use crate::system::PhysicalParams;

/// Initial statistics of the wavefield.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialKind {
    /// `M[p] = p! n^p`.
    Gaussian,
    /// No fluctuations: `M[p] = n^p`.
    Deterministic,
    /// `M[p] = p! n^p (F[p] + 1)` from a deviation table on the same grid.
    Custom(DeviationField),
}

pub fn init_hierarchy(spectrum: &IsotropicSpectrum, max_order: usize, kind: &InitialKind) -> Result<MomentHierarchy> {
    if max_order == 0 {
        return Err(WtError::domain("maximum order must be at least 1"));
    }
    let n = spectrum.values();
    if let InitialKind::Custom(f) = kind {
        if f.grid() != spectrum.grid() {
            return Err(WtError::invalid("deviation table is on a different grid"));
        }
        if f.max_order() < max_order {
            return Err(WtError::invalid(format!(
                "deviation table stops at p = {}, need {max_order}",
                f.max_order()
            )));
        }
    }
    let mut values = Vec::with_capacity(max_order);
    for p in 1..=max_order {
        let fp = factorial(p);
        let row = n
            .iter()
            .enumerate()
            .map(|(i, &ni)| {
                let np = ni.powi(p as i32);
                match kind {
                    InitialKind::Gaussian => fp * np,
                    InitialKind::Deterministic => np,
                    InitialKind::Custom(f) if p >= 2 => fp * np * (f.deviation(p)[i] + 1.0),
                    InitialKind::Custom(_) => np,
                }
            })
            .map(|m| if m < 0.0 && m > -1e-300 { 0.0 } else { m })
            .collect();
        values.push(row);
    }
    MomentHierarchy::new(spectrum.grid().clone(), values)
}

/// `F[p] = M[p]/(p! n^p) - 1` for `p = 2..=P`. Nodes with `n = 0` and
/// vanishing moments get `F = 0`.
pub fn deviations(h: &MomentHierarchy) -> Result<DeviationField> {
    if h.max_order() < 2 {
        return Err(WtError::domain("deviations need at least two moments"));
    }
    let n = h.moment(1);
    let mut values = Vec::with_capacity(h.max_order() - 1);
    for p in 2..=h.max_order() {
        let fp = factorial(p);
        let row: Result<Vec<f64>> = h
            .moment(p)
            .iter()
            .zip(n)
            .enumerate()
            .map(|(i, (&m, &ni))| {
                let g = fp * ni.powi(p as i32);
                if g > 0.0 {
                    Ok(m / g - 1.0)
                } else if m == 0.0 {
                    Ok(0.0)
                } else {
                    Err(WtError::invalid(format!("node {i}: M[{p}] = {m} with vanishing mean")))
                }
            })
            .collect();
        values.push(row?);
    }
    DeviationField::new(h.grid().clone(), values)
}

/// Fourth-order cumulant coefficient `Q = M[2] - 2 n^2`, zero for Gaussian
/// fields.
pub fn cumulant_q(h: &MomentHierarchy) -> Result<Vec<f64>> {
    if h.max_order() < 2 {
        return Err(WtError::domain("Q needs the second moment"));
    }
    Ok(h.moment(2).iter().zip(h.moment(1)).map(|(m2, n)| m2 - 2.0 * n * n).collect())
}

/// Relative slack below which `M[2] < n^2` is read as rounding.
const XI_SLACK: f64 = 1e-12;

/// Standard deviation of the waveaction, `ξ = sqrt(M[2] - n^2)`.
pub fn xi(h: &MomentHierarchy) -> Result<Vec<f64>> {
    if h.max_order() < 2 {
        return Err(WtError::domain("ξ needs the second moment"));
    }
    h.moment(2)
        .iter()
        .zip(h.moment(1))
        .enumerate()
        .map(|(i, (m2, n))| {
            let v = m2 - n * n;
            if v >= 0.0 {
                Ok(v.sqrt())
            } else if v >= -XI_SLACK * n * n {
                Ok(0.0)
            } else {
                Err(WtError::invalid(format!("node {i}: M[2] = {m2} < n^2 = {}", n * n)))
            }
        })
        .collect()
}

fn check_theta(theta: f64) -> Result<()> {
    if theta >= 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(WtError::domain(format!("θ must be finite and non-negative, got {theta}")))
    }
}

/// Exact solution of the deviation dynamics for `p = 2..=P` (`f0[p - 2]`).
///
/// `F[p](θ) = Σ_j C(p, j) q^j (1 - q)^(p-j) F0[j]` with `q = e^{-θ}`: the
/// initial table averaged over a binomial thinning of the order. This is the
/// variation-of-constants solution written in a form that stays accurate at
/// large `p`.
pub fn exact_deviation_solution(f0: &[f64], theta: f64) -> Result<Vec<f64>> {
    check_theta(theta)?;
    if theta == 0.0 {
        return Ok(f0.to_vec());
    }
    let top = f0.len() + 1;
    let q = (-theta).exp();
    let r = -(-theta).exp_m1();
    let (ln_q, ln_r) = (-theta, r.ln());
    let lf = ln_factorials(top);
    let mut out = Vec::with_capacity(f0.len());
    for p in 2..=top {
        let mut acc = 0.0;
        if p <= 30 {
            let mut c = 1.0; // C(p, j), built upward from j = 0
            for j in 0..=p {
                if j >= 2 {
                    acc += c * q.powi(j as i32) * r.powi((p - j) as i32) * f0[j - 2];
                }
                c = c * (p - j) as f64 / (j + 1) as f64;
            }
        } else {
            for j in 2..=p {
                let ln_term = lf[p] - lf[j] - lf[p - j] + j as f64 * ln_q + (p - j) as f64 * ln_r;
                acc += ln_term.exp() * f0[j - 2];
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// Coefficients `c[p-2][j-2]` with `F[p](θ) = Σ_j c_pj e^{-jθ}`, from the
/// recursion `c_pj = p c_{p-1,j} / (p - j)`, `c_pp = F0[p] - Σ_{j<p} c_pj`.
/// The coefficients alternate and grow quickly; use for moderate `p`.
pub fn exact_deviation_coefficients(f0: &[f64]) -> Vec<Vec<f64>> {
    let mut c: Vec<Vec<f64>> = Vec::with_capacity(f0.len());
    for (r, &f) in f0.iter().enumerate() {
        let p = r + 2;
        let mut row: Vec<f64> = match c.last() {
            Some(prev) => prev.iter().enumerate().map(|(jj, v)| p as f64 * v / (p - (jj + 2)) as f64).collect(),
            None => Vec::new(),
        };
        let s: f64 = row.iter().sum();
        row.push(f - s);
        c.push(row);
    }
    c
}

/// Evaluates an exponential expansion from [`exact_deviation_coefficients`].
pub fn eval_deviation_coefficients(c: &[Vec<f64>], theta: f64) -> Vec<f64> {
    c.iter()
        .map(|row| row.iter().enumerate().map(|(jj, v)| v * (-((jj + 2) as f64) * theta).exp()).sum())
        .collect()
}

/// `F[p] = e^{-pθ} Σ_j θ^(p-j) p! / (j! (p-j)!) F0[j]`.
///
/// This agrees with [`exact_deviation_solution`] at `p = 2` and to first
/// order in `θ`, but is not a solution of the deviation dynamics for `p >= 3`
/// (at `p = 3`, `F0 = (1, 0)`, `θ = 0.1` it is 4.9% low).
pub fn printed_closed_form(f0: &[f64], theta: f64) -> Result<Vec<f64>> {
    check_theta(theta)?;
    let top = f0.len() + 1;
    let lf = ln_factorials(top);
    let mut out = Vec::with_capacity(f0.len());
    for p in 2..=top {
        let mut acc = 0.0;
        for j in 2..=p {
            let m = p - j;
            let binom = (lf[p] - lf[j] - lf[m]).exp();
            let binom = if p <= 30 { binom.round() } else { binom };
            acc += theta.powi(m as i32) * binom * f0[j - 2];
        }
        out.push((-(p as f64) * theta).exp() * acc);
    }
    Ok(out)
}

/// Integrates the deviation dynamics in `θ` directly, reporting `F` at each
/// of `stops`.
pub fn evolve_deviations(f0: &[f64], stops: &[f64], controls: &IntegratorControls) -> Result<Vec<(f64, Vec<f64>)>> {
    if f0.is_empty() {
        return Err(WtError::domain("need at least F[2]"));
    }
    let atol = vec![controls.rtol; f0.len()];
    let out = dopri5(
        |_, y, dy| {
            for r in 0..y.len() {
                let p = (r + 2) as f64;
                let lower = if r == 0 { 0.0 } else { y[r - 1] };
                dy[r] = p * (lower - y[r]);
            }
            Ok(())
        },
        0.0,
        f0,
        stops,
        &atol,
        controls,
        |_| true,
        |_| Ok(Verdict::Accept),
    )?;
    Ok(out.stops)
}

/// Hierarchy trajectory with its renormalised time.
#[derive(Debug, Clone)]
pub struct HierarchySolution {
    pub times: Vec<f64>,
    /// `θ(t)` per node at each frame.
    pub theta: Vec<Vec<f64>>,
    pub trajectory: Vec<MomentHierarchy>,
    /// Empty when `P = 1`.
    pub deviations: Vec<DeviationField>,
    /// `(frame, p, node)` where log-convexity failed.
    pub convexity_violations: Vec<(usize, usize, usize)>,
    pub stats: OdeStats,
    pub controls: EvolveControls,
    pub mode: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionManifest {
    pub mode: String,
    pub max_order: usize,
    pub k: Vec<f64>,
    pub times: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
    pub hierarchy_files: Vec<String>,
    pub deviation_files: Vec<String>,
    pub convexity_violations: usize,
    pub controls: EvolveControls,
    pub stats: OdeStats,
}

impl HierarchySolution {
    /// `(θ, F[2..=P])` at node `i` for every frame.
    pub fn deviation_series(&self, i: usize) -> Vec<(f64, Vec<f64>)> {
        self.deviations
            .iter()
            .zip(&self.theta)
            .map(|(d, th)| (th[i], d.at_node(i)))
            .collect()
    }

    pub fn final_hierarchy(&self) -> &MomentHierarchy {
        self.trajectory.last().expect("a solution has at least its start")
    }

    /// Writes `hierarchy_NNNN.csv` and `deviations_NNNN.csv` per frame.
    pub fn write_frames(&self, dir: &Path) -> Result<SolutionManifest> {
        fs::create_dir_all(dir)?;
        let mut hierarchy_files = Vec::new();
        let mut deviation_files = Vec::new();
        for (j, h) in self.trajectory.iter().enumerate() {
            let name = format!("hierarchy_{j:04}.csv");
            h.write_csv(BufWriter::new(fs::File::create(dir.join(&name))?))?;
            hierarchy_files.push(name);
        }
        for (j, d) in self.deviations.iter().enumerate() {
            let name = format!("deviations_{j:04}.csv");
            d.write_csv(BufWriter::new(fs::File::create(dir.join(&name))?))?;
            deviation_files.push(name);
        }
        let h0 = &self.trajectory[0];
        Ok(SolutionManifest {
            mode: self.mode.to_string(),
            max_order: h0.max_order(),
            k: h0.grid().nodes().to_vec(),
            times: self.times.clone(),
            theta: self.theta.clone(),
            hierarchy_files,
            deviation_files,
            convexity_violations: self.convexity_violations.len(),
            controls: self.controls.clone(),
            stats: self.stats,
        })
    }
}

/// Relative slack for the log-convexity monitor.
const CONVEXITY_SLACK: f64 = 1e-8;

/// Integrates `dM[p]/dt = -p γ M[p] + p² η M[p-1]` for `p = 1..=P`. The
/// first row is the kinetic equation, stepped identically to
/// [`crate::kinetic::evolve_ke`].
pub fn evolve_hierarchy(
    system: &crate::system::WaveSystem,
    mode: &RateMode,
    hierarchy: &MomentHierarchy,
    t_end: f64,
    controls: &EvolveControls,
) -> Result<HierarchySolution> {
    let template = hierarchy.spectrum()?;
    let p_max = hierarchy.max_order();
    let run = integrate_moments(system, mode, &template, p_max, &hierarchy.to_flat(), t_end, controls)?;
    let mut sol = HierarchySolution {
        times: Vec::with_capacity(run.frames.len()),
        theta: Vec::with_capacity(run.frames.len()),
        trajectory: Vec::with_capacity(run.frames.len()),
        deviations: Vec::new(),
        convexity_violations: Vec::new(),
        stats: run.stats,
        controls: controls.clone(),
        mode: mode.label(),
    };
    for (frame, (t, y, th)) in run.frames.into_iter().enumerate() {
        let h = MomentHierarchy::from_flat(hierarchy.grid(), p_max, &y)?;
        sol.convexity_violations
            .extend(h.log_convexity_violations(CONVEXITY_SLACK).into_iter().map(|(p, i)| (frame, p, i)));
        if p_max >= 2 {
            sol.deviations.push(deviations(&h)?);
        }
        sol.times.push(t);
        sol.theta.push(th);
        sol.trajectory.push(h);
    }
    Ok(sol)
}

/// Which value of the growth-rate prefactor to use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GammaSource {
    /// The quoted `γ = 1.20 sqrt(P) σ^{1/4} k^{3/4}`.
    Reference,
    /// `γ = I C / (16 π) sqrt(P) σ^{1/4} k^{3/4}` from a computed rate constant `I`.
    Computed(f64),
}

/// Capillary damping rate on the flux spectrum.
pub fn capillary_gamma(params: &PhysicalParams, k: f64, source: GammaSource) -> f64 {
    let pref = match source {
        GammaSource::Reference => REFERENCE_GAMMA_PREFACTOR,
        GammaSource::Computed(i) => gamma_prefactor(i, params.kz_constant),
    };
    pref * params.energy_flux.sqrt() * params.surface_tension.powf(0.25) * k.powf(0.75)
}

/// Predicted `ξ²(k, t) = A² k^{-17/2} (1 - e^{-2γt})` after a deterministic
/// start on the flux spectrum.
pub fn xi_growth_curve(params: &PhysicalParams, k: f64, t: f64, source: GammaSource) -> f64 {
    let a = params.zf_amplitude();
    let g = capillary_gamma(params, k, source);
    a * a * k.powf(-8.5) * -(-2.0 * g * t).exp_m1()
}

/// Deterministic start on the capillary flux spectrum, evolved with frozen
/// stationary rates.
#[derive(Debug, Clone)]
pub struct FluctuationRun {
    pub k: Vec<f64>,
    pub times: Vec<f64>,
    /// Simulated `ξ²` per frame and node.
    pub xi2: Vec<Vec<f64>>,
    /// `xi_growth_curve` at the same points.
    pub predicted: Vec<Vec<f64>>,
    /// Time at which `ξ²/n²` reaches `1 - 1/e`, per node.
    pub saturation_time: Vec<f64>,
    pub solution: HierarchySolution,
}

impl FluctuationRun {
    /// Largest `|ξ² / prediction - 1|` over frames with `t > 0`.
    pub fn max_relative_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (row, pred) in self.xi2.iter().zip(&self.predicted).skip(1) {
            for (a, b) in row.iter().zip(pred) {
                worst = worst.max((a / b - 1.0).abs());
            }
        }
        worst
    }

    /// Log-log slope of saturation time against `k`.
    pub fn saturation_exponent(&self) -> f64 {
        loglog_slope(&self.k, &self.saturation_time)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,k,xi2,xi2_predicted")?;
        for (j, t) in self.times.iter().enumerate() {
            for (i, k) in self.k.iter().enumerate() {
                writeln!(out, "{:e},{:e},{:e},{:e}", t, k, self.xi2[j][i], self.predicted[j][i])?;
            }
        }
        Ok(())
    }
}

pub fn capillary_fluctuations(
    params: &PhysicalParams,
    grid: Grid,
    source: GammaSource,
    max_order: usize,
    t_end: f64,
    controls: &EvolveControls,
) -> Result<FluctuationRun> {
    let system = params.system()?;
    let spec = zf_spectrum(params, grid)?;
    let gamma: Vec<f64> = spec.grid().nodes().iter().map(|&k| capillary_gamma(params, k, source)).collect();
    let mode = RateMode::Frozen(RateField::stationary(&spec, gamma)?);
    let h0 = init_hierarchy(&spec, max_order.max(2), &InitialKind::Deterministic)?;
    let solution = evolve_hierarchy(&system, &mode, &h0, t_end, controls)?;
    let k = spec.grid().nodes().to_vec();
    let n = spec.values();
    let mut xi2 = Vec::with_capacity(solution.times.len());
    let mut predicted = Vec::with_capacity(solution.times.len());
    for (h, &t) in solution.trajectory.iter().zip(&solution.times) {
        xi2.push(xi(h)?.iter().map(|x| x * x).collect::<Vec<_>>());
        predicted.push(k.iter().map(|&kk| xi_growth_curve(params, kk, t, source)).collect::<Vec<_>>());
    }
    let mut saturation_time = Vec::with_capacity(k.len());
    for i in 0..k.len() {
        // -ln(1 - ξ²/n²) is linear in t for the exact curve; interpolate it.
        let s: Vec<f64> = xi2.iter().map(|row| -(-(row[i] / (n[i] * n[i]))).ln_1p()).collect();
        let j = s.iter().position(|v| *v >= 1.0).ok_or_else(|| {
            WtError::invalid(format!("node {i} did not saturate by t = {t_end}; extend the run"))
        })?;
        if j == 0 {
            return Err(WtError::invalid("saturation before the first frame"));
        }
        let (t0, t1) = (solution.times[j - 1], solution.times[j]);
        saturation_time.push(t0 + (1.0 - s[j - 1]) * (t1 - t0) / (s[j] - s[j - 1]));
    }
    Ok(FluctuationRun {
        k,
        times: solution.times.clone(),
        xi2,
        predicted,
        saturation_time,
        solution,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_slope(&lx, &ly)
}

fn linear_slope(x: &[f64], y: &[f64]) -> f64 {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// `F[p] = amplitude exp(-(ln p - ln p0)² / (2 w²))` for `p = 2..=P`.
pub fn log_gaussian_bump(p0: f64, width: f64, amplitude: f64, max_order: usize) -> Vec<f64> {
    (2..=max_order)
        .map(|p| {
            let x = (p as f64 / p0).ln() / width;
            amplitude * (-0.5 * x * x).exp()
        })
        .collect()
}

/// Tracking of a bump in `F[p]` over `x = ln p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportReport {
    pub theta: Vec<f64>,
    /// Peak position in `x = ln p`, parabolically interpolated.
    pub position: Vec<f64>,
    /// RMS width of the bump in `x`.
    pub width: Vec<f64>,
    pub amplitude: Vec<f64>,
    /// `dx/dθ` from a least-squares fit; `None` with a single snapshot.
    pub speed: Option<f64>,
    /// `max |w / w(0) - 1|`.
    pub width_variation: f64,
    /// Fractional loss of peak amplitude per unit `θ`, `1 - (A_end/A_0)^(1/Δθ)`.
    pub amplitude_decay_per_theta: Option<f64>,
    /// Order at the initial peak, and the log decay rate of `F` there.
    pub fixed_order: usize,
    pub fixed_order_decay_rate: Option<f64>,
    /// The bump reached the top of the resolved orders.
    pub truncated: bool,
}

impl TransportReport {
    pub fn peak_order(&self, j: usize) -> f64 {
        self.position[j].exp()
    }
}

/// Tracks the peak of `F[p]` (`p = 2..=P`, one vector per snapshot) against
/// `θ`.
pub fn transport_wave_diagnostic(series: &[(f64, Vec<f64>)]) -> Result<TransportReport> {
    if series.is_empty() {
        return Err(WtError::domain("no snapshots"));
    }
    let len = series[0].1.len();
    if len < 3 || series.iter().any(|(_, f)| f.len() != len) {
        return Err(WtError::domain("snapshots need equal length and at least three orders"));
    }
    let top = len + 1;
    let xs: Vec<f64> = (2..=top).map(|p| (p as f64).ln()).collect();
    let dx: Vec<f64> = (2..=top).map(|p| ((p as f64 + 0.5) / (p as f64 - 0.5)).ln()).collect();
    let mut rep = TransportReport {
        theta: Vec::new(),
        position: Vec::new(),
        width: Vec::new(),
        amplitude: Vec::new(),
        speed: None,
        width_variation: 0.0,
        amplitude_decay_per_theta: None,
        fixed_order: 0,
        fixed_order_decay_rate: None,
        truncated: false,
    };
    for (theta, f) in series {
        let j = f
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, _)| j)
            .expect("non-empty");
        let (x, a) = if j == 0 || j + 1 == len {
            rep.truncated |= j + 1 == len;
            (xs[j], f[j])
        } else {
            parabola_vertex([xs[j - 1], xs[j], xs[j + 1]], [f[j - 1], f[j], f[j + 1]])
        };
        if f[len - 1] > 1e-3 * a {
            rep.truncated = true;
        }
        let (mut w, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for r in 0..len {
            if f[r] > 0.0 {
                let wt = f[r] * dx[r];
                w += wt;
                m1 += wt * xs[r];
                m2 += wt * xs[r] * xs[r];
            }
        }
        let mean = m1 / w;
        rep.width.push((m2 / w - mean * mean).max(0.0).sqrt());
        rep.theta.push(*theta);
        rep.position.push(x);
        rep.amplitude.push(a);
    }
    let w0 = rep.width[0];
    rep.width_variation = rep.width.iter().map(|w| (w / w0 - 1.0).abs()).fold(0.0, f64::max);
    rep.fixed_order = rep.position[0].exp().round() as usize;
    if series.len() >= 2 {
        rep.speed = Some(linear_slope(&rep.theta, &rep.position));
        let span = rep.theta[rep.theta.len() - 1] - rep.theta[0];
        let (a0, a1) = (rep.amplitude[0], rep.amplitude[rep.amplitude.len() - 1]);
        if span > 0.0 && a0 > 0.0 && a1 > 0.0 {
            rep.amplitude_decay_per_theta = Some(1.0 - (a1 / a0).powf(1.0 / span));
            let r = rep.fixed_order.clamp(2, top) - 2;
            let (f0, f1) = (series[0].1[r], series[series.len() - 1].1[r]);
            if f0 > 0.0 && f1 > 0.0 {
                rep.fixed_order_decay_rate = Some(-(f1 / f0).ln() / span);
            }
        }
    }
    Ok(rep)
}

fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> (f64, f64) {
    // Newton form through the three points.
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let c = (d2 - d1) / (x[2] - x[0]);
    if !(c < 0.0) {
        return (x[1], y[1]);
    }
    let b = d1 - c * (x[0] + x[1]);
    let xv = -b / (2.0 * c);
    let yv = y[0] + d1 * (xv - x[0]) + c * (xv - x[0]) * (xv - x[1]);
    (xv, yv)
}

/// Range of intensities `λ` that the order-`p` moment samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdfProbe {
    pub lambda: f64,
    pub width: f64,
}

pub fn pdf_probe(n: f64, p: usize) -> Result<PdfProbe> {
    if !(n > 0.0) || p == 0 {
        return Err(WtError::domain("need n > 0 and p >= 1"));
    }
    Ok(PdfProbe {
        lambda: p as f64 * n,
        width: n,
    })
}

/// Exponential intensity density of a Gaussian field, `e^{-λ/n} / n`.
pub fn rayleigh_density(n: f64, lambda: f64) -> f64 {
    if lambda < 0.0 {
        0.0
    } else {
        (-lambda / n).exp() / n
    }
}

/// `∫_0^{λ_max} rayleigh_density dλ` by quadrature.
pub fn rayleigh_mass(n: f64, lambda_max: f64) -> Result<f64> {
    Ok(tanh_sinh(|l| rayleigh_density(n, l), 0.0, lambda_max, &QuadSettings::default())?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetic::evolve_ke;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn flat(n: f64) -> IsotropicSpectrum {
        IsotropicSpectrum::new(Grid::geometric(1.0, 4.0, 3).unwrap(), vec![n; 3]).unwrap()
    }

    fn zf_setup(nodes: usize) -> (crate::system::WaveSystem, IsotropicSpectrum, RateMode, Vec<f64>) {
        let params = PhysicalParams::default();
        let spec = zf_spectrum(&params, Grid::geometric(1.0, 100.0, nodes).unwrap()).unwrap();
        let gamma: Vec<f64> = spec.grid().nodes().iter().map(|&k| capillary_gamma(&params, k, GammaSource::Reference)).collect();
        let mode = RateMode::Frozen(RateField::stationary(&spec, gamma.clone()).unwrap());
        (params.system().unwrap(), spec, mode, gamma)
    }

    fn strict() -> EvolveControls {
        EvolveControls {
            integrator: IntegratorControls {
                rtol: 1e-12,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn initial_hierarchies() {
        let s = flat(2.0);
        let g = init_hierarchy(&s, 3, &InitialKind::Gaussian).unwrap();
        assert_eq!(g.moment(3)[0], 48.0);
        let d = init_hierarchy(&s, 3, &InitialKind::Deterministic).unwrap();
        assert_eq!(d.moment(3)[0], 8.0);
        assert_eq!(deviations(&d).unwrap().deviation(2)[0], -0.5);
        assert!(init_hierarchy(&s, 0, &InitialKind::Gaussian).is_err());
    }

    #[test]
    fn custom_table_roundtrips_and_bound_is_enforced() {
        let s = flat(2.0);
        let f = DeviationField::new(s.grid().clone(), vec![vec![0.3; 3], vec![-0.2; 3]]).unwrap();
        let h = init_hierarchy(&s, 3, &InitialKind::Custom(f.clone())).unwrap();
        let back = deviations(&h).unwrap();
        for p in 2..=3 {
            for i in 0..3 {
                assert_relative_eq!(back.deviation(p)[i], f.deviation(p)[i], epsilon = 1e-15);
            }
        }
        // A table that would need negative moments cannot even be built.
        assert!(DeviationField::new(s.grid().clone(), vec![vec![-0.7; 3]]).is_err());
        let short = DeviationField::new(s.grid().clone(), vec![vec![0.0; 3]]).unwrap();
        assert!(init_hierarchy(&s, 3, &InitialKind::Custom(short)).is_err());
    }

    #[test]
    fn fluctuation_measures() {
        let s = flat(3.0);
        let g = init_hierarchy(&s, 2, &InitialKind::Gaussian).unwrap();
        assert!(deviations(&g).unwrap().deviation(2).iter().all(|f| *f == 0.0));
        assert!(cumulant_q(&g).unwrap().iter().all(|q| *q == 0.0));
        assert_eq!(xi(&g).unwrap(), vec![3.0; 3]);
        let d = init_hierarchy(&s, 2, &InitialKind::Deterministic).unwrap();
        assert_eq!(xi(&d).unwrap(), vec![0.0; 3]);
        let h = MomentHierarchy::new(s.grid().clone(), vec![vec![3.0; 3], vec![54.0; 3]]).unwrap();
        assert_relative_eq!(deviations(&h).unwrap().deviation(2)[0], 2.0);
        assert_relative_eq!(xi(&h).unwrap()[0], 5f64.sqrt() * 3.0);
        let bad = MomentHierarchy::new(s.grid().clone(), vec![vec![3.0; 3], vec![8.0; 3]]).unwrap();
        assert!(matches!(xi(&bad), Err(WtError::InvalidState(_))));
    }

    #[test]
    fn exact_solution_examples() {
        assert_relative_eq!(exact_deviation_solution(&[1.0], 0.5).unwrap()[0], (-1.0f64).exp(), max_relative = 1e-15);
        let f = exact_deviation_solution(&[1.0, 0.0], 0.1).unwrap();
        assert_relative_eq!(f[1], 3.0 * ((-0.2f64).exp() - (-0.3f64).exp()), max_relative = 1e-14);
        assert_relative_eq!(f[1], 0.23374, epsilon = 5e-6);
        let f0 = [0.3, -0.1, 2.0, 0.5];
        assert_eq!(exact_deviation_solution(&f0, 0.0).unwrap(), f0.to_vec());
        assert!(exact_deviation_solution(&f0, -1.0).is_err());
    }

    #[test]
    fn closed_form_gap() {
        let printed = printed_closed_form(&[1.0, 0.0], 0.1).unwrap();
        let exact = exact_deviation_solution(&[1.0, 0.0], 0.1).unwrap();
        assert_relative_eq!(printed[1], (-0.3f64).exp() * 0.3, max_relative = 1e-14);
        assert_relative_eq!(printed[0], exact[0], max_relative = 1e-15);
        let gap = 1.0 - printed[1] / exact[1];
        assert!((gap - 0.049).abs() < 0.001, "gap {gap}");
    }

    #[test]
    fn closed_form_agrees_to_first_order() {
        let f0 = [0.4, -0.3, 1.1, 0.2, -0.5];
        for h in [1e-2, 1e-3] {
            let a = printed_closed_form(&f0, h).unwrap();
            let b = exact_deviation_solution(&f0, h).unwrap();
            for p in 3..=6 {
                let first = f0[p - 2] + p as f64 * h * (f0[p - 3] - f0[p - 2]);
                // Both remainders are second order in θ.
                assert!((a[p - 2] - first).abs() < 60.0 * h * h);
                assert!((b[p - 2] - first).abs() < 60.0 * h * h);
            }
        }
    }

    #[test]
    fn coefficient_form_matches_propagator() {
        let f0 = [0.4, -0.3, 1.1, 0.2, -0.5, 0.7, 0.0, 0.3];
        let c = exact_deviation_coefficients(&f0);
        for theta in [0.0, 0.05, 0.7, 3.0] {
            let a = eval_deviation_coefficients(&c, theta);
            let b = exact_deviation_solution(&f0, theta).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-11 * (1.0 + y.abs()), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn direct_integration_matches_exact() {
        let f0 = [1.0, 0.0, -0.1, 0.4, 0.2, -0.3, 0.9, 0.0, 0.1];
        let stops = [0.1, 1.0, 3.0];
        let out = evolve_deviations(&f0, &stops, &IntegratorControls { rtol: 1e-12, ..Default::default() }).unwrap();
        for (theta, f) in out {
            let e = exact_deviation_solution(&f0, theta).unwrap();
            for (a, b) in f.iter().zip(&e) {
                assert!((a - b).abs() / b.abs().max(1.0) < 1e-10);
            }
        }
    }

    #[test]
    fn log_form_continues_exact_form() {
        // p = 30 uses products, p = 31 logarithms; both must match the coefficients.
        let f0 = log_gaussian_bump(12.0, 0.4, 1.0, 40);
        let d = evolve_deviations(&f0, &[0.8], &IntegratorControls { rtol: 1e-12, ..Default::default() }).unwrap();
        let e = exact_deviation_solution(&f0, 0.8).unwrap();
        for (a, b) in d[0].1.iter().zip(&e) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_fixed_point_holds() {
        let (sys, spec, mode, gamma) = zf_setup(8);
        let h0 = init_hierarchy(&spec, 8, &InitialKind::Gaussian).unwrap();
        // θ = γ t, so t = 5/γ_min covers θ in [0, 5] at every node.
        let t_end = 5.0 / gamma[0];
        let sol = evolve_hierarchy(&sys, &mode, &h0, t_end, &strict()).unwrap();
        for h in &sol.trajectory {
            for p in 1..=8 {
                for (a, b) in h.moment(p).iter().zip(h0.moment(p)) {
                    assert!((a / b - 1.0).abs() < 1e-6);
                }
            }
        }
        assert!(sol.convexity_violations.is_empty());
        assert_relative_eq!(sol.theta.last().unwrap()[0], 5.0, max_relative = 1e-12);
    }

    #[test]
    fn deterministic_second_moment() {
        let (sys, spec, mode, gamma) = zf_setup(6);
        let h0 = init_hierarchy(&spec, 2, &InitialKind::Deterministic).unwrap();
        let controls = EvolveControls {
            checkpoints: vec![0.01, 0.1, 0.3],
            ..strict()
        };
        let sol = evolve_hierarchy(&sys, &mode, &h0, 1.0, &controls).unwrap();
        for (h, t) in sol.trajectory.iter().zip(&sol.times) {
            for i in 0..6 {
                let n = spec.values()[i];
                let want = n * n * (2.0 - (-2.0 * gamma[i] * t).exp());
                assert_relative_eq!(h.moment(2)[i], want, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn hierarchy_with_one_order_is_the_kinetic_equation() {
        let (sys, spec, _, gamma) = zf_setup(6);
        // Not stationary: η is off by 20%, so both routes move.
        let eta: Vec<f64> = gamma.iter().zip(spec.values()).map(|(g, n)| 1.2 * g * n).collect();
        let mode = RateMode::Frozen(RateField::frozen(spec.grid().clone(), gamma, eta).unwrap());
        let controls = EvolveControls {
            checkpoints: vec![0.05, 0.2],
            ..Default::default()
        };
        let ke = evolve_ke(&sys, &spec, &mode, 0.5, &controls).unwrap();
        let h0 = init_hierarchy(&spec, 1, &InitialKind::Gaussian).unwrap();
        let hs = evolve_hierarchy(&sys, &mode, &h0, 0.5, &controls).unwrap();
        assert_eq!(ke.times, hs.times);
        for (s, h) in ke.spectra.iter().zip(&hs.trajectory) {
            assert_eq!(s.values(), h.moment(1));
        }
        assert_eq!(ke.theta, hs.theta);
        assert_eq!(ke.stats, hs.stats);
    }

    #[test]
    fn hierarchy_matches_exact_deviations() {
        let (sys, spec, mode, gamma) = zf_setup(5);
        let p_max = 10;
        let f0: Vec<Vec<f64>> = (2..=p_max).map(|p| vec![0.5 * (-1f64).powi(p as i32) / p as f64; 5]).collect();
        let table = DeviationField::new(spec.grid().clone(), f0.clone()).unwrap();
        let h0 = init_hierarchy(&spec, p_max, &InitialKind::Custom(table)).unwrap();
        let t_end = 3.0 / gamma[0];
        let controls = EvolveControls {
            checkpoints: vec![0.5 / gamma[0], 1.5 / gamma[0]],
            ..strict()
        };
        let sol = evolve_hierarchy(&sys, &mode, &h0, t_end, &controls).unwrap();
        for (d, th) in sol.deviations.iter().zip(&sol.theta) {
            for i in 0..5 {
                let start: Vec<f64> = f0.iter().map(|r| r[i]).collect();
                let e = exact_deviation_solution(&start, th[i]).unwrap();
                for (a, b) in d.at_node(i).iter().zip(&e) {
                    assert!((a - b).abs() / b.abs().max(1.0) < 1e-8, "{a} vs {b} at θ = {}", th[i]);
                }
            }
        }
    }

    #[test]
    fn growth_curve_limits() {
        let params = PhysicalParams::default();
        assert_eq!(xi_growth_curve(&params, 3.0, 0.0, GammaSource::Reference), 0.0);
        let n = params.zf_amplitude() * 3f64.powf(-4.25);
        assert_relative_eq!(xi_growth_curve(&params, 3.0, 1e3, GammaSource::Reference), n * n, max_relative = 1e-14);
        assert_relative_eq!(capillary_gamma(&params, 1.0, GammaSource::Computed(4.30)), 1.1959, epsilon = 1e-4);
    }

    #[test]
    fn fluctuation_run_reproduces_curve() {
        let params = PhysicalParams::default();
        let controls = EvolveControls {
            checkpoints: (0..60).map(|j| 1e-3 * 1.12f64.powi(j)).collect(),
            ..strict()
        };
        let run = capillary_fluctuations(
            &params,
            Grid::geometric(1.0, 100.0, 9).unwrap(),
            GammaSource::Reference,
            2,
            1.0,
            &controls,
        )
        .unwrap();
        assert!(run.max_relative_error() < 1e-6, "{}", run.max_relative_error());
        assert!((run.saturation_exponent() + 0.75).abs() < 0.015, "{}", run.saturation_exponent());
        assert!(run.saturation_time.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn transport_examples() {
        let p_max = 120;
        let f0 = log_gaussian_bump(8.0, 0.3, 1.0, p_max);
        let f1 = exact_deviation_solution(&f0, 1.0).unwrap();
        let rep0 = transport_wave_diagnostic(&[(0.0, f0.clone())]).unwrap();
        assert!(rep0.speed.is_none());
        assert_relative_eq!(rep0.peak_order(0), 8.0, max_relative = 1e-3);
        let rep = transport_wave_diagnostic(&[(0.0, f0), (1.0, f1)]).unwrap();
        let p = rep.peak_order(1);
        assert!((19.0..=24.0).contains(&p), "peak at {p}");
        assert!(!rep.truncated);
    }

    #[test]
    fn transport_at_large_order() {
        let p_max = 1200;
        let f0 = log_gaussian_bump(32.0, 0.5, 1.0, p_max);
        let series: Vec<(f64, Vec<f64>)> = (0..=6)
            .map(|j| {
                let th = 0.25 * j as f64;
                (th, exact_deviation_solution(&f0, th).unwrap())
            })
            .collect();
        let rep = transport_wave_diagnostic(&series).unwrap();
        let speed = rep.speed.unwrap();
        assert!((speed - 1.0).abs() < 0.05, "speed {speed}");
        assert!(rep.width_variation < 0.1, "{}", rep.width_variation);
        assert!(rep.amplitude_decay_per_theta.unwrap() < 0.1);
        assert!(rep.fixed_order_decay_rate.unwrap() > 1.0);
        assert!(!rep.truncated);

        let cut = transport_wave_diagnostic(&[(0.0, log_gaussian_bump(32.0, 0.5, 1.0, 40))]).unwrap();
        assert!(cut.truncated);
    }

    #[test]
    fn pdf_probe_examples() {
        let pr = pdf_probe(1.0, 5).unwrap();
        assert_eq!((pr.lambda, pr.width), (5.0, 1.0));
        assert_eq!(rayleigh_density(2.0, 0.0), 0.5);
        assert!((rayleigh_mass(2.0, 100.0).unwrap() - 1.0).abs() < 1e-10);
        assert!(pdf_probe(0.0, 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn xi_identity(n in 1e-3f64..1e3, f2 in -0.5f64..5.0) {
            let s = flat(n);
            let table = DeviationField::new(s.grid().clone(), vec![vec![f2; 3]]).unwrap();
            let h = init_hierarchy(&s, 2, &InitialKind::Custom(table)).unwrap();
            let x = xi(&h).unwrap()[0];
            let f = deviations(&h).unwrap().deviation(2)[0];
            let rhs = n * n * (2.0 * f + 1.0);
            prop_assert!((x * x - rhs).abs() <= 1e-13 * n * n * (2.0 * f2 + 1.0).max(1.0));
        }

        #[test]
        fn fixed_order_decay(f0 in proptest::collection::vec(-0.4f64..3.0, 2..12), theta in 8.0f64..20.0) {
            // At large θ the slowest mode e^{-2θ} dominates every order.
            let f = exact_deviation_solution(&f0, theta).unwrap();
            let c: f64 = f0.iter().map(|v| v.abs()).sum::<f64>() * 2f64.powi(f0.len() as i32 + 1);
            for v in f {
                prop_assert!(v.abs() <= c * (-2.0 * theta * 0.9).exp());
            }
        }

        #[test]
        fn exact_solution_keeps_moments_admissible(f0 in proptest::collection::vec(0.0f64..1.0, 1..10), theta in 0.0f64..4.0) {
            // Deviations built from valid moment sequences stay above 1/p! - 1.
            let shifted: Vec<f64> = f0.iter().enumerate().map(|(r, v)| v - (1.0 - 1.0 / factorial(r + 2)) * 0.5).collect();
            let f = exact_deviation_solution(&shifted, theta).unwrap();
            for (r, v) in f.iter().enumerate() {
                prop_assert!(*v >= 1.0 / factorial(r + 2) - 1.0 - 1e-12);
            }
        }
    }
}
