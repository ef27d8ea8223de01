//! Damping and forcing rates of the moment hierarchy by quadrature over the
//! resonant manifold.
//!
//! For a target wave `k` the triads split into two branches:
//!
//! * A: `k = k1 + k2`, `ω(k) = ω(k1) + ω(k2)`, with `k1` on `(0, k)`;
//! * B: `k2 = k + k1`, `ω(k2) = ω(k) + ω(k1)`, with `k1` on `(0, ∞)`.
//!
//! After the angular reduction and elimination of the frequency delta each
//! branch point carries the weight `k1 k2 (2/S) |V|² / |ω'|` at the eliminated
//! wavenumber. Branch A is split at the symmetric point `ω(k1) = ω(k)/2` and
//! each half is parametrised by its smaller wavenumber, which puts every
//! endpoint singularity at the origin of a quadrature interval.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, WtError};
use crate::quadrature::{exp_sinh_n, tanh_sinh_n, QuadResult, QuadSettings};
use crate::resonance::{resonant_partner, sum_partner, ResonantPartner};
use crate::spectrum::{parse_f64, Grid, IsotropicSpectrum};
use crate::system::WaveSystem;

/// Value of the dimensionless growth-rate constant quoted for capillary waves.
pub const REFERENCE_RATE_CONSTANT: f64 = 4.30;
/// Quoted prefactor in `γ = 1.20 sqrt(P) σ^{1/4} k^{3/4}`.
pub const REFERENCE_GAMMA_PREFACTOR: f64 = 1.20;

/// Mean occupation as a function of wavenumber.
pub trait Occupation: Sync {
    fn n(&self, k: f64) -> f64;

    /// Range where `n` is data rather than extrapolation.
    fn support(&self) -> Option<(f64, f64)> {
        None
    }
}

impl Occupation for IsotropicSpectrum {
    fn n(&self, k: f64) -> f64 {
        self.eval(k)
    }

    fn support(&self) -> Option<(f64, f64)> {
        Some((self.grid().k_min(), self.grid().k_max()))
    }
}

/// `n = amplitude * k^-exponent` on the whole half line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawOccupation {
    pub amplitude: f64,
    pub exponent: f64,
}

impl Occupation for PowerLawOccupation {
    fn n(&self, k: f64) -> f64 {
        self.amplitude * k.powf(-self.exponent)
    }
}

/// Wraps a closure.
pub struct FnOccupation<F>(pub F);

impl<F: Fn(f64) -> f64 + Sync> Occupation for FnOccupation<F> {
    fn n(&self, k: f64) -> f64 {
        (self.0)(k)
    }
}

/// Rates at a single wavenumber. `gamma`, `eta` and `collision` share nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeRates {
    pub k: f64,
    pub n: f64,
    pub gamma: QuadResult,
    pub eta: QuadResult,
    /// Collision term `J`, assembled from its own kernel rather than from `η - γ n`.
    pub collision: QuadResult,
    /// Branch A and branch B parts of `gamma`.
    pub gamma_branches: [f64; 2],
    /// Share of `η + γ n` (by magnitude) coming from wavenumbers outside the
    /// occupation's support.
    pub extrapolated_fraction: f64,
}

/// Integrand parts `[η, γ, J]` at one resonant point, before the common `4π ε²`.
#[derive(Clone, Copy)]
enum Branch {
    A,
    B,
}

fn kernel(branch: Branch, n: f64, n1: f64, n2: f64) -> [f64; 3] {
    match branch {
        Branch::A => [n1 * n2, 2.0 * n2, n1 * n2 - n * (n1 + n2)],
        Branch::B => [
            2.0 * n1 * n2,
            2.0 * (n1 - n2),
            2.0 * (n1 * n2 + n * n2 - n * n1),
        ],
    }
}

struct Piece {
    lo: f64,
    hi: f64,
    extrapolated: bool,
}

/// Splits `(lo, hi)` at the interior `cuts`; `outside(s)` tells whether the
/// piece containing `s` draws on extrapolated occupation.
fn pieces(lo: f64, hi: f64, cuts: &[f64], outside: impl Fn(f64) -> bool) -> Vec<Piece> {
    let mut pts = vec![lo];
    let mut inner: Vec<f64> = cuts.iter().copied().filter(|c| *c > lo && *c < hi).collect();
    inner.sort_by(f64::total_cmp);
    pts.extend(inner);
    pts.push(hi);
    pts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let mid = if w[1].is_finite() { 0.5 * (w[0] + w[1]) } else { 2.0 * w[0] + 1.0 };
            Piece {
                lo: w[0],
                hi: w[1],
                extrapolated: outside(mid),
            }
        })
        .collect()
}

struct Accumulator {
    parts: [QuadResult; 3],
    gamma_branches: [f64; 2],
    extrapolated: f64,
}

impl Accumulator {
    fn add(&mut self, branch: Branch, piece: &Piece, r: [QuadResult; 3], n: f64) {
        for (acc, x) in self.parts.iter_mut().zip(r) {
            *acc = *acc + x;
        }
        self.gamma_branches[branch as usize] += r[1].value;
        if piece.extrapolated {
            self.extrapolated += r[0].magnitude + n * r[1].magnitude;
        }
    }
}

fn integrate_piece<F: FnMut(f64) -> [f64; 3]>(
    f: F,
    piece: &Piece,
    scale: f64,
    settings: &QuadSettings,
) -> Result<[QuadResult; 3]> {
    if piece.hi.is_finite() {
        tanh_sinh_n(f, piece.lo, piece.hi, settings)
    } else {
        exp_sinh_n(f, piece.lo, scale.max(piece.lo), settings)
    }
}

/// Resonant weight `k1 k2 (2/S) V² / |ω'|` at a partner; zero on
/// (numerically) collinear triads.
fn weight(system: &WaveSystem, k1: f64, k2: f64, partner: &ResonantPartner) -> f64 {
    let Some(w) = partner.triad.angular_weight() else {
        return 0.0;
    };
    let v = system.vertex_triad(&partner.triad);
    k1 * k2 * w * v * v * partner.jacobian
}

/// Nodes crowding the origin can overflow `n` before the small resonant
/// weight brings the product back down; below `1e-30 k` such nodes are
/// dropped, which for any integrable power-law singularity costs far less
/// than the quadrature tolerance.
fn finite_or_dropped(v: [f64; 3], s: f64, k: f64) -> [f64; 3] {
    if v.iter().all(|x| x.is_finite()) || s >= 1e-30 * k {
        v
    } else {
        [0.0; 3]
    }
}

/// `γ`, `η` and `J` at `k` in one pass over the resonant manifold.
pub fn node_rates(
    system: &WaveSystem,
    occupation: &impl Occupation,
    k: f64,
    settings: &QuadSettings,
) -> Result<NodeRates> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(WtError::domain(format!("wavenumber must be positive, got {k}")));
    }
    if let Some((lo, hi)) = occupation.support() {
        if k < lo * (1.0 - 1e-12) || k > hi * (1.0 + 1e-12) {
            return Err(WtError::domain(format!("k = {k} outside spectrum support [{lo}, {hi}]")));
        }
    }
    let n = occupation.n(k);
    let (sup_lo, sup_hi) = occupation.support().unwrap_or((0.0, f64::INFINITY));
    let out = |q: f64| q < sup_lo || q > sup_hi;
    let out = &out;
    let mut acc = Accumulator {
        parts: [QuadResult::zero(); 3],
        gamma_branches: [0.0; 2],
        extrapolated: 0.0,
    };

    // Branch A, both halves parametrised by the smaller wavenumber `s`.
    let k_sym = system.dispersion.inverse(0.5 * system.omega(k))?;
    for small_is_k1 in [true, false] {
        let failure = RefCell::new(None);
        let fail = |e: WtError| {
            failure.borrow_mut().get_or_insert(e);
            [f64::NAN; 3]
        };
        let mut f = |s: f64| -> [f64; 3] {
            let partner = match resonant_partner(system, k, s) {
                Ok(Some(p)) => p,
                Ok(None) => return [0.0; 3],
                Err(e) => return fail(e),
            };
            let (k1, k2) = if small_is_k1 { (s, partner.k2) } else { (partner.k2, s) };
            let (n1, n2) = (occupation.n(k1), occupation.n(k2));
            if n1 == 0.0 && n2 == 0.0 {
                return [0.0; 3];
            }
            let w = weight(system, k1, k2, &partner);
            finite_or_dropped(kernel(Branch::A, n, n1, n2).map(|c| w * c), s, k)
        };
        for piece in pieces(0.0, k_sym, &[sup_lo], out) {
            let r = integrate_piece(&mut f, &piece, k, settings);
            if let Some(e) = failure.borrow_mut().take() {
                return Err(e);
            }
            acc.add(Branch::A, &piece, r?, n);
        }
    }

    // Branch B: `k1 = s` on the half line, `k2` the sum partner.
    let s_max = if sup_hi.is_finite() && system.omega(sup_hi) > system.omega(k) {
        system.dispersion.inverse(system.omega(sup_hi) - system.omega(k))?
    } else {
        f64::INFINITY
    };
    let failure = RefCell::new(None);
    let fail = |e: WtError| {
        failure.borrow_mut().get_or_insert(e);
        [f64::NAN; 3]
    };
    let mut f = |s: f64| -> [f64; 3] {
        let partner = match sum_partner(system, k, s) {
            Ok(p) => p,
            Err(e) => return fail(e),
        };
        let (k1, k2) = (s, partner.k2);
        let (n1, n2) = (occupation.n(k1), occupation.n(k2));
        if n1 == 0.0 && n2 == 0.0 {
            return [0.0; 3];
        }
        let w = weight(system, k1, k2, &partner);
        finite_or_dropped(kernel(Branch::B, n, n1, n2).map(|c| w * c), s, k)
    };
    let b_pieces = pieces(0.0, f64::INFINITY, &[sup_lo, k, s_max], |s| s < sup_lo || s > s_max);
    for piece in &b_pieces {
        let r = integrate_piece(&mut f, piece, k, settings);
        if let Some(e) = failure.borrow_mut().take() {
            return Err(e);
        }
        acc.add(Branch::B, piece, r?, n);
    }

    let pref = 4.0 * PI * system.epsilon * system.epsilon;
    let [eta, gamma, collision] = acc.parts.map(|r| r.scale(pref));
    let total = eta.magnitude + n * gamma.magnitude;
    Ok(NodeRates {
        k,
        n,
        gamma,
        eta,
        collision,
        gamma_branches: acc.gamma_branches.map(|g| g * pref),
        extrapolated_fraction: if total > 0.0 { acc.extrapolated * pref / total } else { 0.0 },
    })
}

/// Forcing rate `η` at `k`.
pub fn eta(system: &WaveSystem, spectrum: &IsotropicSpectrum, k: f64, settings: &QuadSettings) -> Result<QuadResult> {
    Ok(node_rates(system, spectrum, k, settings)?.eta)
}

/// Damping rate `γ` at `k`.
pub fn gamma(system: &WaveSystem, spectrum: &IsotropicSpectrum, k: f64, settings: &QuadSettings) -> Result<QuadResult> {
    Ok(node_rates(system, spectrum, k, settings)?.gamma)
}

/// Per-node rates on a grid. Errors are relative quadrature error estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct RateField {
    pub grid: Grid,
    pub gamma: Vec<f64>,
    pub eta: Vec<f64>,
    pub gamma_err: Vec<f64>,
    pub eta_err: Vec<f64>,
    /// Collision term from its own kernel, with absolute error.
    pub collision: Vec<f64>,
    pub collision_err: Vec<f64>,
    pub extrapolated_fraction: Vec<f64>,
}

fn rel_err(r: &QuadResult) -> f64 {
    if r.value != 0.0 {
        r.error / r.value.abs()
    } else if r.magnitude > 0.0 {
        r.error / r.magnitude
    } else {
        0.0
    }
}

impl RateField {
    pub fn from_nodes(grid: Grid, nodes: &[NodeRates]) -> Result<Self> {
        if grid.len() != nodes.len() {
            return Err(WtError::invalid("rate field length does not match grid"));
        }
        let field = RateField {
            gamma: nodes.iter().map(|r| r.gamma.value).collect(),
            eta: nodes.iter().map(|r| r.eta.value).collect(),
            gamma_err: nodes.iter().map(|r| rel_err(&r.gamma)).collect(),
            eta_err: nodes.iter().map(|r| rel_err(&r.eta)).collect(),
            collision: nodes.iter().map(|r| r.collision.value).collect(),
            collision_err: nodes.iter().map(|r| r.collision.error).collect(),
            extrapolated_fraction: nodes.iter().map(|r| r.extrapolated_fraction).collect(),
            grid,
        };
        if let Some(i) = field.eta.iter().position(|e| *e < 0.0) {
            return Err(WtError::invalid(format!("negative eta at node {i}")));
        }
        Ok(field)
    }

    /// Fixed rates, e.g. to hold a spectrum stationary.
    pub fn frozen(grid: Grid, gamma: Vec<f64>, eta: Vec<f64>) -> Result<Self> {
        let n = grid.len();
        if gamma.len() != n || eta.len() != n {
            return Err(WtError::invalid("rate arrays must match the grid"));
        }
        if eta.iter().any(|e| !(*e >= 0.0)) || gamma.iter().any(|g| !g.is_finite()) {
            return Err(WtError::invalid("eta must be non-negative and gamma finite"));
        }
        Ok(RateField {
            grid,
            gamma,
            eta,
            gamma_err: vec![0.0; n],
            eta_err: vec![0.0; n],
            collision: vec![0.0; n],
            collision_err: vec![0.0; n],
            extrapolated_fraction: vec![0.0; n],
        })
    }

    /// Rates that make `spectrum` stationary: `η = γ n` with the given `γ`.
    pub fn stationary(spectrum: &IsotropicSpectrum, gamma: Vec<f64>) -> Result<Self> {
        let eta = gamma.iter().zip(spectrum.values()).map(|(g, n)| g * n).collect();
        RateField::frozen(spectrum.grid().clone(), gamma, eta)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,gamma,eta,gamma_err,eta_err")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e}",
                self.grid.nodes()[i],
                self.gamma[i],
                self.eta[i],
                self.gamma_err[i],
                self.eta_err[i]
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| WtError::Parse("empty rate file".into()))??;
        if header.trim() != "k,gamma,eta,gamma_err,eta_err" {
            return Err(WtError::Parse(format!("unexpected rate header `{header}`")));
        }
        let mut cols: [Vec<f64>; 5] = Default::default();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(WtError::Parse(format!("line {}: expected five columns", lineno + 2)));
            }
            for (c, s) in cols.iter_mut().zip(fields) {
                c.push(parse_f64(s, lineno + 2)?);
            }
        }
        let [k, gamma, eta, gamma_err, eta_err] = cols;
        let mut field = RateField::frozen(Grid::new(k)?, gamma, eta)?;
        field.gamma_err = gamma_err;
        field.eta_err = eta_err;
        Ok(field)
    }
}

/// Rates at every node of `grid`, computed in parallel. The first failing
/// node (by index) is reported.
pub fn rate_field(
    system: &WaveSystem,
    spectrum: &IsotropicSpectrum,
    grid: &Grid,
    settings: &QuadSettings,
) -> Result<RateField> {
    let results: Vec<Result<NodeRates>> = grid
        .nodes()
        .par_iter()
        .map(|&k| node_rates(system, spectrum, k, settings))
        .collect();
    let mut nodes = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        nodes.push(r.map_err(|e| e.at_node(i, grid.nodes()[i]))?);
    }
    RateField::from_nodes(grid.clone(), &nodes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateConstant {
    /// `I` in `γ = I A s / (16 π) k^y`.
    pub value: f64,
    pub error: f64,
    pub branch_a: f64,
    pub branch_b: f64,
    /// Spectrum exponent `x` used, `n = k^-x`.
    pub spectrum_exponent: f64,
    /// Rate exponent `y`.
    pub rate_exponent: f64,
    pub k: f64,
}

/// Dimensionless growth-rate constant of a scale-invariant system on its
/// constant-flux spectrum.
pub fn dimensionless_rate_constant(system: &WaveSystem, settings: &QuadSettings) -> Result<RateConstant> {
    dimensionless_rate_constant_at(system, 1.0, settings)
}

/// Same, evaluated at wavenumber `k`; scale invariance makes the result
/// independent of `k`.
pub fn dimensionless_rate_constant_at(system: &WaveSystem, k: f64, settings: &QuadSettings) -> Result<RateConstant> {
    let si = system
        .scale_invariance()
        .ok_or_else(|| WtError::domain("rate constant needs power-law dispersion and a homogeneous vertex"))?;
    let x = si.kz_exponent(system.dimension);
    let y = si.rate_exponent(system.dimension, x);
    let occupation = PowerLawOccupation {
        amplitude: 1.0,
        exponent: x,
    };
    let r = node_rates(system, &occupation, k, settings)?;
    let to_i = 16.0 * PI / (si.rate_scale * k.powf(y));
    Ok(RateConstant {
        value: r.gamma.value * to_i,
        error: r.gamma.error * to_i,
        branch_a: r.gamma_branches[0] * to_i,
        branch_b: r.gamma_branches[1] * to_i,
        spectrum_exponent: x,
        rate_exponent: y,
        k,
    })
}

/// `I C / (16 π)`, the prefactor of `sqrt(P) σ^{1/4} k^{3/4}` in the capillary damping rate.
pub fn gamma_prefactor(rate_constant: f64, kz_constant: f64) -> f64 {
    rate_constant * kz_constant / (16.0 * PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McRateSettings {
    /// Total samples, split evenly between the two branches.
    pub samples: usize,
    pub seed: u64,
    /// Half width of the square sampled for branch B.
    pub outer_radius: f64,
    /// Gaussian width of the smeared frequency delta, in frequency units.
    pub mollifier: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McRateEstimate {
    pub gamma: f64,
    pub gamma_err: f64,
    pub eta: f64,
    pub eta_err: f64,
    pub samples: usize,
}

/// Brute-force estimate of `γ` and `η` over the vector `k1` plane.
///
/// The momentum delta fixes `k2 = k - k1` (branch A) or `k2 = k + k1`
/// (branch B) exactly; the frequency delta is replaced by a Gaussian. Each
/// branch is sampled on a jittered square lattice: branch A on `|k1_x|,
/// |k1_y| < 1.25 k`, branch B on `|k1_x|, |k1_y| < outer_radius`. Errors are
/// one standard error estimated from neighbouring lattice cells.
pub fn rates_mc_oracle(
    system: &WaveSystem,
    occupation: &impl Occupation,
    k: f64,
    settings: &McRateSettings,
) -> Result<McRateEstimate> {
    if !(k > 0.0) || !(settings.outer_radius > 0.0) || !(settings.mollifier > 0.0) {
        return Err(WtError::domain("oracle needs positive k, radius and mollifier width"));
    }
    if settings.samples < 10_000 {
        return Err(WtError::domain("oracle needs at least 1e4 samples"));
    }
    let side = ((settings.samples / 2) as f64).sqrt().floor() as usize & !1;
    let h = settings.mollifier;
    let norm = 1.0 / (h * (2.0 * PI).sqrt());
    let delta = |g: f64| norm * (-0.5 * (g / h).powi(2)).exp();
    let n = occupation.n(k);
    let w = system.omega(k);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);

    let mut lattice = |radius: f64, f: &dyn Fn(f64, f64) -> [f64; 2]| -> ([f64; 2], [f64; 2]) {
        let cell = 2.0 * radius / side as f64;
        let area = cell * cell;
        let mut sum = [0.0; 2];
        let mut var = [0.0; 2];
        for iy in 0..side {
            let mut prev = [0.0; 2];
            for ix in 0..side {
                let x = -radius + (ix as f64 + rng.gen::<f64>()) * cell;
                let y = -radius + (iy as f64 + rng.gen::<f64>()) * cell;
                let v = f(x, y);
                for c in 0..2 {
                    sum[c] += v[c];
                    if ix % 2 == 1 {
                        var[c] += (v[c] - prev[c]).powi(2);
                    }
                }
                prev = v;
            }
        }
        (sum.map(|s| s * area), var.map(|v| v.sqrt() * area))
    };

    // Parts are [η, γ] before the common 4π ε².
    let branch_a = |x: f64, y: f64| -> [f64; 2] {
        let k1 = x.hypot(y);
        let k2 = (k - x).hypot(y);
        if k1 == 0.0 || k2 == 0.0 {
            return [0.0; 2];
        }
        let d = delta(w - system.omega(k1) - system.omega(k2));
        let v = system.vertex(k, k1, k2);
        let c = kernel(Branch::A, n, occupation.n(k1), occupation.n(k2));
        [v * v * d * c[0], v * v * d * c[1]]
    };
    let branch_b = |x: f64, y: f64| -> [f64; 2] {
        let k1 = x.hypot(y);
        let k2 = (k + x).hypot(y);
        if k1 == 0.0 || k2 == 0.0 {
            return [0.0; 2];
        }
        let d = delta(system.omega(k2) - w - system.omega(k1));
        let v = system.vertex(k2, k, k1);
        let c = kernel(Branch::B, n, occupation.n(k1), occupation.n(k2));
        [v * v * d * c[0], v * v * d * c[1]]
    };
    let (sa, ea) = lattice(1.25 * k, &branch_a);
    let (sb, eb) = lattice(settings.outer_radius, &branch_b);
    let pref = 4.0 * PI * system.epsilon * system.epsilon;
    Ok(McRateEstimate {
        eta: pref * (sa[0] + sb[0]),
        eta_err: pref * ea[0].hypot(eb[0]),
        gamma: pref * (sa[1] + sb[1]),
        gamma_err: pref * ea[1].hypot(eb[1]),
        samples: 2 * side * side,
    })
}
