//! Moment hierarchies `M[p](k)` and their relative deviations from Gaussian
//! values.

use std::io::{BufRead, Write};

use crate::error::{Result, WtError};
use crate::spectrum::{parse_f64, Grid, IsotropicSpectrum};

/// `p!` in floating point (infinite beyond 170).
pub fn factorial(p: usize) -> f64 {
    (2..=p).fold(1.0, |acc, j| acc * j as f64)
}

/// `ln j!` for `j = 0..=max`.
pub fn ln_factorials(max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(max + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for j in 1..=max {
        acc += (j as f64).ln();
        out.push(acc);
    }
    out
}

/// Moments `M[p](k_i)` for `p = 1..=P`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentHierarchy {
    grid: Grid,
    values: Vec<Vec<f64>>,
}

impl MomentHierarchy {
    /// `values[p - 1][i]` is `M[p](k_i)`.
    pub fn new(grid: Grid, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(WtError::domain("a hierarchy needs at least the first moment"));
        }
        for (r, row) in values.iter().enumerate() {
            if row.len() != grid.len() {
                return Err(WtError::invalid(format!("moment row {} has the wrong length", r + 1)));
            }
            if let Some(i) = row.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(WtError::invalid(format!(
                    "M[{}] at node {i} is {}; moments must be finite and non-negative",
                    r + 1,
                    row[i]
                )));
            }
        }
        Ok(MomentHierarchy { grid, values })
    }

    pub(crate) fn from_flat(grid: &Grid, max_order: usize, flat: &[f64]) -> Result<Self> {
        let n = grid.len();
        let values = (0..max_order).map(|p| flat[p * n..(p + 1) * n].to_vec()).collect();
        Self::new(grid.clone(), values)
    }

    pub(crate) fn to_flat(&self) -> Vec<f64> {
        self.values.concat()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn max_order(&self) -> usize {
        self.values.len()
    }

    /// Row `M[p]`, `1 <= p <= P`.
    pub fn moment(&self, p: usize) -> &[f64] {
        assert!(p >= 1 && p <= self.max_order(), "moment order {p} out of range");
        &self.values[p - 1]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// The mean spectrum `n = M[1]`.
    pub fn spectrum(&self) -> Result<IsotropicSpectrum> {
        IsotropicSpectrum::new(self.grid.clone(), self.values[0].clone())
    }

    /// Pairs `(p, i)` where `M[p] M[p-2] < M[p-1]^2` beyond a relative slack,
    /// with `M[0] = 1`. Moments of a non-negative variable never do this.
    pub fn log_convexity_violations(&self, rel_slack: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for p in 2..=self.max_order() {
            for i in 0..self.grid.len() {
                let lo = if p == 2 { 1.0 } else { self.values[p - 3][i] };
                let mid = self.values[p - 2][i];
                let hi = self.values[p - 1][i];
                if hi * lo < mid * mid * (1.0 - rel_slack) {
                    out.push((p, i));
                }
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,p,M")?;
        for (i, k) in self.grid.nodes().iter().enumerate() {
            for (r, row) in self.values.iter().enumerate() {
                writeln!(out, "{:e},{},{:e}", k, r + 1, row[i])?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let (grid, values) = read_table(input, "k,p,M", 1)?;
        Self::new(grid, values)
    }
}

/// Deviations `F[p](k_i) = (M[p] - p! n^p) / (p! n^p)` for `p = 2..=P`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationField {
    grid: Grid,
    values: Vec<Vec<f64>>,
}

/// Absolute slack on the bound `F >= 1/p! - 1`, for rounding in `F` itself.
const BOUND_SLACK: f64 = 1e-12;

impl DeviationField {
    /// `values[p - 2][i]` is `F[p](k_i)`.
    pub fn new(grid: Grid, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(WtError::domain("a deviation field starts at p = 2"));
        }
        for (r, row) in values.iter().enumerate() {
            let p = r + 2;
            if row.len() != grid.len() {
                return Err(WtError::invalid(format!("deviation row {p} has the wrong length")));
            }
            let bound = 1.0 / factorial(p) - 1.0;
            if let Some(i) = row.iter().position(|f| !f.is_finite() || *f < bound - BOUND_SLACK) {
                return Err(WtError::invalid(format!(
                    "F[{p}] at node {i} is {}, below the bound {bound} implied by M >= 0",
                    row[i]
                )));
            }
        }
        Ok(DeviationField { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn max_order(&self) -> usize {
        self.values.len() + 1
    }

    /// Row `F[p]`, `2 <= p <= P`.
    pub fn deviation(&self, p: usize) -> &[f64] {
        assert!(p >= 2 && p <= self.max_order(), "deviation order {p} out of range");
        &self.values[p - 2]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// `F[2..=P]` at one node.
    pub fn at_node(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[i]).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,p,F")?;
        for (i, k) in self.grid.nodes().iter().enumerate() {
            for (r, row) in self.values.iter().enumerate() {
                writeln!(out, "{:e},{},{:e}", k, r + 2, row[i])?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let (grid, values) = read_table(input, "k,p,F", 2)?;
        Self::new(grid, values)
    }
}

/// Reads a long-format `k,p,value` table with orders `first..` at every node.
fn read_table<R: BufRead>(input: R, header: &str, first: usize) -> Result<(Grid, Vec<Vec<f64>>)> {
    let mut lines = input.lines();
    let head = lines.next().ok_or_else(|| WtError::Parse("empty table".into()))??;
    if head.trim() != header {
        return Err(WtError::Parse(format!("expected header `{header}`, got `{head}`")));
    }
    let mut ks: Vec<f64> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let lineno = lineno + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(WtError::Parse(format!("line {lineno}: expected three columns")));
        }
        let k = parse_f64(fields[0], lineno)?;
        let p: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| WtError::Parse(format!("line {lineno}: bad order `{}`", fields[1])))?;
        let v = parse_f64(fields[2], lineno)?;
        if ks.last() != Some(&k) {
            ks.push(k);
        }
        let i = ks.len() - 1;
        if p < first || p - first > rows.len() {
            return Err(WtError::Parse(format!("line {lineno}: order {p} out of sequence")));
        }
        if p - first == rows.len() {
            rows.push(Vec::new());
        }
        let row = &mut rows[p - first];
        if row.len() != i {
            return Err(WtError::Parse(format!("line {lineno}: order {p} out of sequence")));
        }
        row.push(v);
    }
    if rows.is_empty() || rows.iter().any(|r| r.len() != ks.len()) {
        return Err(WtError::Parse("table is empty or ragged".into()));
    }
    Ok((Grid::new(ks)?, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::geometric(1.0, 4.0, 3).unwrap()
    }

    #[test]
    fn factorials() {
        assert_eq!(factorial(0), 1.0);
        assert_eq!(factorial(5), 120.0);
        assert!(factorial(171).is_infinite());
        let lf = ln_factorials(10);
        assert!((lf[10] - 3628800f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn negative_moment_rejected() {
        let r = MomentHierarchy::new(grid(), vec![vec![1.0, -1.0, 1.0]]);
        assert!(matches!(r, Err(WtError::InvalidState(_))));
    }

    #[test]
    fn convexity_flags_impossible_sequence() {
        // M2 < M1^2 cannot come from a non-negative variable.
        let h = MomentHierarchy::new(grid(), vec![vec![2.0; 3], vec![1.0, 4.0, 8.0]]).unwrap();
        assert_eq!(h.log_convexity_violations(1e-12), vec![(2, 0)]);
    }

    #[test]
    fn deviation_bound() {
        assert!(DeviationField::new(grid(), vec![vec![-0.5; 3]]).is_ok());
        assert!(DeviationField::new(grid(), vec![vec![-0.6, 0.0, 0.0]]).is_err());
        // p = 3 bound is 1/6 - 1.
        assert!(DeviationField::new(grid(), vec![vec![0.0; 3], vec![-0.8; 3]]).is_ok());
        assert!(DeviationField::new(grid(), vec![vec![0.0; 3], vec![-0.9; 3]]).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let h = MomentHierarchy::new(grid(), vec![vec![1.0, 0.5, 0.25], vec![2.0, 0.5, 0.125]]).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("k,p,M\n"));
        assert_eq!(MomentHierarchy::read_csv(&buf[..]).unwrap(), h);

        let f = DeviationField::new(grid(), vec![vec![0.1, 0.2, 0.3], vec![-0.1, 0.0, 4.0]]).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        assert_eq!(DeviationField::read_csv(&buf[..]).unwrap(), f);
    }

    #[test]
    fn ragged_table_rejected() {
        let text = "k,p,M\n1,1,1\n1,2,1\n2,1,1\n";
        assert!(MomentHierarchy::read_csv(text.as_bytes()).is_err());
    }
}
