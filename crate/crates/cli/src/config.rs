//! Run configuration: a TOML file with the sections `system`, `spectrum`,
//! `grid`, `quadrature`, `integrator` and `scenario`. Every key is optional;
//! unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wtmoments_core::kinetic::EvolveControls;
use wtmoments_core::ode::IntegratorControls;
use wtmoments_core::quadrature::QuadSettings;
use wtmoments_core::spectrum::{rayleigh_jeans_spectrum, zf_spectrum, Extrapolation, Grid, IsotropicSpectrum};
use wtmoments_core::system::{power_law_system, PhysicalParams, WaveSystem};

use crate::ToleranceProfile;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub system: SystemSection,
    pub spectrum: SpectrumSection,
    pub grid: GridSection,
    pub quadrature: QuadratureSection,
    pub integrator: IntegratorSection,
    pub scenario: ScenarioSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Capillary,
    PowerLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub kind: SystemKind,
    pub surface_tension: f64,
    pub density: f64,
    pub energy_flux: f64,
    pub kz_constant: f64,
    /// Power-law systems: `ω = c k^α`, constant coupling.
    pub dispersion_coefficient: f64,
    pub dispersion_exponent: f64,
    pub coupling: f64,
    pub dimension: u32,
    pub epsilon: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        let p = PhysicalParams::default();
        SystemSection {
            kind: SystemKind::Capillary,
            surface_tension: p.surface_tension,
            density: p.density,
            energy_flux: p.energy_flux,
            kz_constant: p.kz_constant,
            dispersion_coefficient: 1.0,
            dispersion_exponent: 2.0,
            coupling: 1.0,
            dimension: 2,
            epsilon: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumKind {
    /// Capillary constant-flux spectrum from the physical parameters.
    Zf,
    RayleighJeans,
    /// `n = amplitude k^{-exponent}`.
    PowerLaw,
    /// CSV `k,n`; its nodes replace the grid section.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    pub kind: SpectrumKind,
    pub temperature: f64,
    pub amplitude: f64,
    pub exponent: f64,
    pub path: Option<PathBuf>,
    pub extrapolation: Extrapolation,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection {
            kind: SpectrumKind::Zf,
            temperature: 1.0,
            amplitude: 1.0,
            exponent: 4.25,
            path: None,
            extrapolation: Extrapolation::PowerLaw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub k_min: f64,
    pub k_max: f64,
    pub nodes: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            k_min: 1.0,
            k_max: 100.0,
            nodes: 33,
        }
    }
}

/// Tolerance keys left out fall back to the tolerance profile.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSection {
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub min_level: Option<u32>,
    pub max_level: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    pub rtol: Option<f64>,
    pub atol_floor: Option<f64>,
    pub initial_step: Option<f64>,
    pub min_step: Option<f64>,
    pub max_steps: Option<usize>,
    pub theta_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateModeKind {
    /// Rates from the initial spectrum, held fixed.
    Frozen,
    /// Fixed rates with `η = γ n` on the initial spectrum.
    Stationary,
    SelfConsistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKindName {
    Gaussian,
    Deterministic,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaSourceName {
    Reference,
    Computed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportRoute {
    Exact,
    Integrate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub t_end: f64,
    /// Number of evenly spaced checkpoints before `t_end`.
    pub checkpoints: usize,
    pub rate_mode: RateModeKind,
    pub max_order: usize,
    pub initial: InitialKindName,
    /// Deviation table (`k,p,F`) for custom initial states.
    pub custom_table: Option<PathBuf>,
    pub gamma_source: GammaSourceName,
    /// Growth-rate constant used when `gamma_source = "computed"` and no
    /// value is given: computed on the fly.
    pub rate_constant: Option<f64>,
    /// Frames of the fluctuation run, geometric between these times.
    pub t_first: f64,
    pub frames: usize,
    pub bump_center: f64,
    pub bump_width: f64,
    pub bump_amplitude: f64,
    /// Highest order kept in the transport run.
    pub transport_orders: usize,
    pub theta_max: f64,
    pub snapshots: usize,
    pub transport_route: TransportRoute,
    pub oracle_triads: usize,
    pub oracle_samples: usize,
    pub oracle_rate_samples: usize,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            t_end: 1.0,
            checkpoints: 10,
            rate_mode: RateModeKind::Frozen,
            max_order: 4,
            initial: InitialKindName::Gaussian,
            custom_table: None,
            gamma_source: GammaSourceName::Reference,
            rate_constant: None,
            t_first: 1e-3,
            frames: 60,
            bump_center: 32.0,
            bump_width: 0.5,
            bump_amplitude: 1.0,
            transport_orders: 1200,
            theta_max: 1.5,
            snapshots: 7,
            transport_route: TransportRoute::Exact,
            oracle_triads: 50,
            oracle_samples: 1_000_000,
            oracle_rate_samples: 4_000_000,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Config> {
        let cfg: Config = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> anyhow::Result<()> {
        self.params()?;
        let g = &self.grid;
        anyhow::ensure!(g.k_min > 0.0 && g.k_max > g.k_min && g.nodes >= 2, "grid needs 0 < k_min < k_max and nodes >= 2");
        let s = &self.scenario;
        anyhow::ensure!(s.t_end > 0.0, "scenario.t_end must be positive");
        anyhow::ensure!(s.max_order >= 1, "scenario.max_order must be at least 1");
        anyhow::ensure!(s.t_first > 0.0 && s.t_first < s.t_end, "scenario.t_first must lie in (0, t_end)");
        anyhow::ensure!(s.snapshots >= 1 && s.theta_max >= 0.0, "transport needs snapshots >= 1 and theta_max >= 0");
        anyhow::ensure!(s.bump_center > 1.0 && s.bump_width > 0.0, "bump needs center > 1 and width > 0");
        anyhow::ensure!(
            s.transport_orders >= 3 && (s.transport_orders as f64) > s.bump_center,
            "scenario.transport_orders must exceed bump_center"
        );
        if s.initial == InitialKindName::Custom {
            anyhow::ensure!(s.custom_table.is_some(), "scenario.initial = \"custom\" needs scenario.custom_table");
        }
        if self.spectrum.kind == SpectrumKind::File {
            anyhow::ensure!(self.spectrum.path.is_some(), "spectrum.kind = \"file\" needs spectrum.path");
        }
        Ok(())
    }

    pub fn params(&self) -> anyhow::Result<PhysicalParams> {
        let s = &self.system;
        Ok(PhysicalParams::new(s.surface_tension, s.density, s.energy_flux, s.kz_constant)?)
    }

    pub fn system(&self) -> anyhow::Result<WaveSystem> {
        let s = &self.system;
        Ok(match s.kind {
            SystemKind::Capillary => self.params()?.system()?,
            SystemKind::PowerLaw => {
                power_law_system(s.dispersion_coefficient, s.dispersion_exponent, s.coupling, s.dimension, s.epsilon)?
            }
        })
    }

    pub fn grid(&self) -> anyhow::Result<Grid> {
        Ok(Grid::geometric(self.grid.k_min, self.grid.k_max, self.grid.nodes)?)
    }

    pub fn spectrum(&self) -> anyhow::Result<IsotropicSpectrum> {
        let sp = &self.spectrum;
        let base = match sp.kind {
            SpectrumKind::Zf => zf_spectrum(&self.params()?, self.grid()?)?,
            SpectrumKind::RayleighJeans => {
                let sys = self.system()?;
                rayleigh_jeans_spectrum(self.grid()?, sp.temperature, |k| sys.omega(k))?
            }
            SpectrumKind::PowerLaw => {
                IsotropicSpectrum::from_fn(self.grid()?, |k| sp.amplitude * k.powf(-sp.exponent))?
            }
            SpectrumKind::File => {
                let path = sp.path.as_ref().expect("checked at load");
                let f = std::fs::File::open(path)
                    .map_err(|e| anyhow::anyhow!("cannot open spectrum {}: {e}", path.display()))?;
                IsotropicSpectrum::read_csv(std::io::BufReader::new(f))?
            }
        };
        Ok(IsotropicSpectrum::with_extrapolation(
            base.grid().clone(),
            base.values().to_vec(),
            sp.extrapolation,
        )?)
    }

    pub fn quadrature(&self, profile: ToleranceProfile) -> QuadSettings {
        let d = profile.quadrature();
        let q = &self.quadrature;
        QuadSettings {
            rel_tol: q.rel_tol.unwrap_or(d.rel_tol),
            abs_tol: q.abs_tol.unwrap_or(d.abs_tol),
            min_level: q.min_level.unwrap_or(d.min_level),
            max_level: q.max_level.unwrap_or(d.max_level),
        }
    }

    pub fn evolve_controls(&self, profile: ToleranceProfile, t_end: f64) -> EvolveControls {
        let d = profile.evolve();
        let i = &self.integrator;
        let m = self.scenario.checkpoints;
        EvolveControls {
            integrator: IntegratorControls {
                rtol: i.rtol.unwrap_or(d.integrator.rtol),
                atol_floor: i.atol_floor.unwrap_or(d.integrator.atol_floor),
                initial_step: i.initial_step.or(d.integrator.initial_step),
                min_step: i.min_step.unwrap_or(d.integrator.min_step),
                max_steps: i.max_steps.unwrap_or(d.integrator.max_steps),
            },
            checkpoints: (1..=m).map(|j| t_end * j as f64 / (m + 1) as f64).collect(),
            theta_tol: i.theta_tol.unwrap_or(d.theta_tol),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::parse("[quadrature]\nrel_tolerance = 1e-3\n").is_err());
        assert!(Config::parse("[nonsense]\n").is_err());
    }

    #[test]
    fn sections_parse() {
        let cfg = Config::parse(
            "[system]\nsurface_tension = 0.07\ndensity = 1000.0\n[grid]\nnodes = 5\n[integrator]\nrtol = 1e-6\n[scenario]\ninitial = \"deterministic\"\n",
        )
        .unwrap();
        assert_eq!(cfg.grid.nodes, 5);
        assert_eq!(cfg.scenario.initial, InitialKindName::Deterministic);
        let c = cfg.evolve_controls(ToleranceProfile::Strict, 1.0);
        assert_eq!(c.integrator.rtol, 1e-6);
        assert_eq!(c.checkpoints.len(), 10);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::parse("[system]\ndensity = -1.0\n").is_err());
        assert!(Config::parse("[grid]\nk_min = 5.0\nk_max = 1.0\n").is_err());
        assert!(Config::parse("[scenario]\ninitial = \"custom\"\n").is_err());
    }
}
