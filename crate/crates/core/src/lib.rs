//! Statistics of weakly nonlinear three-wave systems: kinetic rates,
//! occupation-number moment hierarchies and their relaxation.

pub mod error;
pub mod hierarchy;
pub mod kinetic;
pub mod moments;
pub mod ode;
pub mod quadrature;
pub mod rates;
pub mod resonance;
pub mod spectrum;
pub mod system;

pub use error::{Result, WtError};
