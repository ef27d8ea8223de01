//! Radial wavenumber grids and isotropic waveaction spectra.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WtError};
use crate::system::{PhysicalParams, ZF_EXPONENT};

/// Strictly increasing, positive wavenumber magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nodes: Arc<[f64]>,
}

impl Grid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(WtError::invalid("grid is empty"));
        }
        if nodes.iter().any(|k| !(*k > 0.0) || !k.is_finite()) {
            return Err(WtError::invalid("grid nodes must be positive and finite"));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(WtError::invalid("grid must be strictly increasing"));
        }
        Ok(Grid {
            nodes: nodes.into(),
        })
    }

    /// `n` nodes spaced geometrically from `k_min` to `k_max` inclusive.
    pub fn geometric(k_min: f64, k_max: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(WtError::domain("geometric grid needs at least two nodes"));
        }
        if !(k_min > 0.0 && k_max > k_min) {
            return Err(WtError::domain(format!("bad grid bounds [{k_min}, {k_max}]")));
        }
        let ratio = (k_max / k_min).ln() / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| k_min * (ratio * i as f64).exp()).collect();
        nodes[n - 1] = k_max;
        Grid::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn k_min(&self) -> f64 {
        self.nodes[0]
    }

    pub fn k_max(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn contains(&self, k: f64) -> bool {
        k >= self.k_min() && k <= self.k_max()
    }

    /// Trapezoid weights for `int f(k) dk` over the grid.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let k = &self.nodes;
        let n = k.len();
        let mut w = vec![0.0; n];
        for i in 0..n.saturating_sub(1) {
            let h = 0.5 * (k[i + 1] - k[i]);
            w[i] += h;
            w[i + 1] += h;
        }
        w
    }
}

/// How a spectrum is continued outside its grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Extrapolation {
    /// Power law with exponent fitted over the last decade at each end.
    #[default]
    PowerLaw,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsotropicSpectrum {
    grid: Grid,
    values: Vec<f64>,
    extrapolation: Extrapolation,
    low_exponent: Option<f64>,
    high_exponent: Option<f64>,
}

impl IsotropicSpectrum {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::with_extrapolation(grid, values, Extrapolation::PowerLaw)
    }

    pub fn with_extrapolation(grid: Grid, values: Vec<f64>, extrapolation: Extrapolation) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(WtError::invalid(format!(
                "grid has {} nodes but {} values",
                grid.len(),
                values.len()
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(WtError::invalid(format!(
                "spectrum value {v} at node {i} is negative or not finite"
            )));
        }
        let (low_exponent, high_exponent) = fit_end_exponents(grid.nodes(), &values);
        Ok(IsotropicSpectrum {
            grid,
            values,
            extrapolation,
            low_exponent,
            high_exponent,
        })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().iter().map(|&k| f(k)).collect();
        Self::new(grid, values)
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        Self::new(grid, vec![0.0; n]).expect("zero spectrum is valid")
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn extrapolation(&self) -> Extrapolation {
        self.extrapolation
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::with_extrapolation(self.grid.clone(), values, self.extrapolation)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Log-log slopes used beyond the two ends of the grid.
    pub fn end_exponents(&self) -> (Option<f64>, Option<f64>) {
        (self.low_exponent, self.high_exponent)
    }

    /// Waveaction density at an arbitrary wavenumber.
    ///
    /// Inside the grid the spectrum is linear in `ln n` against `ln k`
    /// (falling back to linear interpolation next to a zero). Outside it is
    /// continued according to the extrapolation rule.
    pub fn eval(&self, k: f64) -> f64 {
        let nodes = self.grid.nodes();
        let last = nodes.len() - 1;
        if k < nodes[0] {
            return match (self.extrapolation, self.low_exponent) {
                (Extrapolation::PowerLaw, Some(s)) => self.values[0] * (k / nodes[0]).powf(s),
                (Extrapolation::PowerLaw, None) => self.values[0],
                (Extrapolation::Zero, _) => 0.0,
            };
        }
        if k > nodes[last] {
            return match (self.extrapolation, self.high_exponent) {
                (Extrapolation::PowerLaw, Some(s)) => self.values[last] * (k / nodes[last]).powf(s),
                (Extrapolation::PowerLaw, None) => 0.0,
                (Extrapolation::Zero, _) => 0.0,
            };
        }
        let j = nodes.partition_point(|&x| x <= k);
        if j == 0 {
            return self.values[0];
        }
        let i = j - 1;
        if nodes[i] == k || i == last {
            return self.values[i];
        }
        let (k0, k1) = (nodes[i], nodes[i + 1]);
        let (n0, n1) = (self.values[i], self.values[i + 1]);
        if n0 > 0.0 && n1 > 0.0 {
            let t = (k / k0).ln() / (k1 / k0).ln();
            (n0.ln() + t * (n1 / n0).ln()).exp()
        } else {
            n0 + (n1 - n0) * (k - k0) / (k1 - k0)
        }
    }

    /// `int omega(k) n(k) 2 pi k dk` by the trapezoid rule on the grid.
    pub fn energy(&self, omega: impl Fn(f64) -> f64) -> f64 {
        let w = self.grid.trapezoid_weights();
        self.grid
            .nodes()
            .iter()
            .zip(&self.values)
            .zip(&w)
            .map(|((&k, &n), &w)| 2.0 * std::f64::consts::PI * k * omega(k) * n * w)
            .sum()
    }

    /// Writes `k,n` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,n")?;
        for (k, n) in self.grid.nodes().iter().zip(&self.values) {
            writeln!(out, "{k:e},{n:e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| WtError::Parse("empty spectrum file".into()))??;
        if header.trim() != "k,n" {
            return Err(WtError::Parse(format!("expected header `k,n`, got `{header}`")));
        }
        let mut ks = Vec::new();
        let mut ns = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split(',');
            let (Some(k), Some(n), None) = (it.next(), it.next(), it.next()) else {
                return Err(WtError::Parse(format!("line {}: expected two columns", lineno + 2)));
            };
            ks.push(parse_f64(k, lineno + 2)?);
            ns.push(parse_f64(n, lineno + 2)?);
        }
        IsotropicSpectrum::new(Grid::new(ks)?, ns)
    }
}

pub(crate) fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| WtError::Parse(format!("line {line}: `{s}`: {e}")))
}

/// Least-squares log-log slope over the nodes within one decade of each end.
fn fit_end_exponents(k: &[f64], n: &[f64]) -> (Option<f64>, Option<f64>) {
    let n_nodes = k.len();
    if n_nodes < 2 {
        return (None, None);
    }
    let k_lo = k[0];
    let low: Vec<usize> = (0..n_nodes).take_while(|&i| k[i] <= 10.0 * k_lo).collect();
    let k_hi = k[n_nodes - 1];
    let high: Vec<usize> = (0..n_nodes).rev().take_while(|&i| k[i] >= 0.1 * k_hi).collect();
    let fit = |idx: &[usize]| -> Option<f64> {
        let idx: Vec<usize> = if idx.len() >= 2 {
            idx.to_vec()
        } else if idx[0] == 0 {
            vec![0, 1]
        } else {
            vec![idx[0] - 1, idx[0]]
        };
        if idx.iter().any(|&i| n[i] <= 0.0) {
            return None;
        }
        let m = idx.len() as f64;
        let (sx, sy) = idx
            .iter()
            .fold((0.0, 0.0), |(sx, sy), &i| (sx + k[i].ln(), sy + n[i].ln()));
        let (mx, my) = (sx / m, sy / m);
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for &i in &idx {
            let dx = k[i].ln() - mx;
            sxy += dx * (n[i].ln() - my);
            sxx += dx * dx;
        }
        Some(sxy / sxx)
    };
    (fit(&low), fit(&high))
}

/// Capillary constant-flux spectrum `n = A k^{-17/4}` on the grid.
pub fn zf_spectrum(params: &PhysicalParams, grid: Grid) -> Result<IsotropicSpectrum> {
    params.validate()?;
    let a = params.zf_amplitude();
    IsotropicSpectrum::from_fn(grid, |k| a * k.powf(-ZF_EXPONENT))
}

/// `n = T / omega(k)`.
pub fn rayleigh_jeans_spectrum(
    grid: Grid,
    temperature: f64,
    omega: impl Fn(f64) -> f64,
) -> Result<IsotropicSpectrum> {
    IsotropicSpectrum::from_fn(grid, |k| temperature / omega(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_validation() {
        assert!(Grid::new(vec![]).is_err());
        assert!(Grid::new(vec![1.0, 1.0]).is_err());
        assert!(Grid::new(vec![0.0, 1.0]).is_err());
        let g = Grid::geometric(1.0, 100.0, 3).unwrap();
        assert_relative_eq!(g.nodes()[1], 10.0, max_relative = 1e-14);
        assert_eq!(g.k_max(), 100.0);
    }

    #[test]
    fn spectrum_rejects_negative_values() {
        let g = Grid::geometric(1.0, 2.0, 2).unwrap();
        assert!(IsotropicSpectrum::new(g.clone(), vec![1.0, -1.0]).is_err());
        assert!(IsotropicSpectrum::new(g, vec![1.0]).is_err());
    }

    #[test]
    fn zf_examples() {
        let g = Grid::new(vec![1.0, 16.0]).unwrap();
        let s = zf_spectrum(&PhysicalParams::default(), g).unwrap();
        assert_relative_eq!(s.values()[0], 13.98);
        assert_relative_eq!(s.values()[1], 13.98 * 2f64.powi(-17), max_relative = 1e-14);
        assert_relative_eq!(s.values()[1], 1.0666e-4, max_relative = 1e-4);

        let quad = PhysicalParams {
            energy_flux: 4.0,
            ..PhysicalParams::default()
        };
        let s4 = zf_spectrum(&quad, Grid::new(vec![3.0]).unwrap()).unwrap();
        let s1 = zf_spectrum(&PhysicalParams::default(), Grid::new(vec![3.0]).unwrap()).unwrap();
        assert_relative_eq!(s4.values()[0], 2.0 * s1.values()[0], max_relative = 1e-15);
    }

    #[test]
    fn loglog_interpolation_and_extrapolation_exact_on_power_law() {
        let g = Grid::geometric(1.0, 100.0, 9).unwrap();
        let s = IsotropicSpectrum::from_fn(g, |k| 3.0 * k.powf(-4.25)).unwrap();
        for &k in &[0.01, 0.5, 1.7, 13.3, 99.0, 450.0, 1e5] {
            assert_relative_eq!(s.eval(k), 3.0 * k.powf(-4.25), max_relative = 1e-12);
        }
        let (lo, hi) = s.end_exponents();
        assert_relative_eq!(lo.unwrap(), -4.25, max_relative = 1e-12);
        assert_relative_eq!(hi.unwrap(), -4.25, max_relative = 1e-12);
    }

    #[test]
    fn zero_extrapolation_and_zero_values() {
        let g = Grid::new(vec![1.0, 2.0, 3.0]).unwrap();
        let s = IsotropicSpectrum::with_extrapolation(g.clone(), vec![1.0, 0.0, 2.0], Extrapolation::Zero).unwrap();
        assert_eq!(s.eval(0.5), 0.0);
        assert_eq!(s.eval(4.0), 0.0);
        assert_relative_eq!(s.eval(1.5), 0.5);
        assert_relative_eq!(s.eval(2.5), 1.0);
        assert_eq!(IsotropicSpectrum::zeros(g).eval(10.0), 0.0);
    }

    #[test]
    fn csv_roundtrip() {
        let g = Grid::geometric(0.5, 50.0, 7).unwrap();
        let s = IsotropicSpectrum::from_fn(g, |k| (-k).exp()).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k,n\n"));
        assert!(!text.contains('\r'));
        let back = IsotropicSpectrum::read_csv(&buf[..]).unwrap();
        assert_eq!(back, s);
        assert!(IsotropicSpectrum::read_csv(&b"k,m\n1,2\n"[..]).is_err());
    }
}
