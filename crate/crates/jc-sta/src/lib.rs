//! Shortcut-to-adiabaticity control pulses for the time-dependent
//! Jaynes-Cummings model, with protocols for Fock-state, cat-state and
//! photon-shifted-state preparation, Lindblad decoherence, Fourier pulse
//! truncation studies and Wigner-function non-classicality analysis.
//!
//! Propagation is carried out in the excitation rotating frame of the JC
//! model; see the `dynamics` module for the frame conventions.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod linalg;
pub mod observables;
pub mod protocols;
pub mod pulses;
pub mod runner;

pub use error::{JcError, Result};
pub use hilbert::{SpaceSpec, Spin, SystemState};
pub use pulses::{BaseProtocol, FourierPulse, GaussianPulse, StaPulse};
