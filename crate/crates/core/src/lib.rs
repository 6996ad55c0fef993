//! Atom diode simulator.
//!
//! A one-dimensional laser potential that transmits ground-state atoms
//! moving left to right and reflects them moving right to left. The crate
//! provides the potential builders ([`physics`]), a stationary
//! coupled-channel solver ([`scattering`]), the diode figures of merit
//! ([`diode`]) and time-dependent quantum-jump dynamics with decay and
//! photon recoil ([`dynamics`]).
//!
//! Units throughout: micrometers, microseconds, and every Hamiltonian is
//! stored divided by hbar, so only the ratio `m / hbar` ever appears.

pub mod diode;
pub mod dynamics;
pub mod error;
pub mod physics;
pub mod scattering;

pub use diode::{DiodeScanRow, LimitingSide, WindowSearch};
pub use dynamics::{EnsembleResult, Propagator, Scenario, StepControl, WavePacket};
pub use error::{Error, Result};
pub use physics::{GaussianProfile, PotentialSpec, UnitSystem};
pub use scattering::{ScatteringResult, SolverConfig};
