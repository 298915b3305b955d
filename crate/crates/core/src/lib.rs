//! Simulation and analysis of coherent Doppler velocimetry of a driven
//! trapped ion: closed-form and numerically integrated oscillator response,
//! stochastic photon detection, phase-sensitive spectra and force extraction.

pub mod background;
pub mod consts;
pub mod detection;
pub mod error;
pub mod fit;
pub mod force;
pub mod ode;
pub mod oscillator;
pub mod peaks;
pub mod runner;
pub mod scenario;
pub mod spectroscopy;
pub mod stats;
pub mod sweep;

pub use error::{Error, Result};
