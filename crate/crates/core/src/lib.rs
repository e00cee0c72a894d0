//! Numerical core for simulating an entanglement-based single-magnon
//! detector: a transmon qubit dispersively coupled to the Kittel mode of a
//! ferrimagnetic sphere through microwave cavity modes.
//!
//! The crate provides
//! - [`hilbert`]: truncated-Fock-space operators, the full hybrid-system
//!   Hamiltonian, and dressed-state analysis (couplings, dispersive shift,
//!   Purcell limit);
//! - [`pulses`]: Gaussian drive envelopes, protocol timing, and the numerical
//!   pi-pulse calibration;
//! - [`dynamics`]: the time-dependent Lindblad master equation in the
//!   doubly-rotating drive frame;
//! - [`readout`]: the classical readout-error model, its bounding procedure,
//!   and single-shot sampling;
//! - [`detection`]: the single-magnon detection protocols, dark-count and
//!   efficiency extraction, error budget, and device projections;
//! - [`spectra`]: closed-form spectrum models (cavity transmission,
//!   dressed-dephasing qubit spectrum) and the associated fits.

pub mod detection;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod hilbert;
pub mod integrate;
pub mod pulses;
pub mod readout;
pub mod spectra;
pub mod system;
pub mod units;

pub use error::{Error, Result};
pub use hilbert::Operator;
pub use system::SystemParams;
