//! Simulation toolkit for Kerr parametric oscillators (KPOs).
//!
//! The crate covers the truncated Fock-space algebra, KPO Hamiltonians,
//! spectra and frequency-collision checks, Lindblad dynamics, bit-flip
//! time extraction, parameter sweeps and a heterodyne readout emulator.
//!
//! All frequencies and rates are angular (rad/s) and times are in seconds.
//! Use [`units`] to convert to and from MHz and µs.

pub mod bitflip;
pub mod dynamics;
pub mod error;
pub mod fock;
pub mod model;
pub mod ode;
pub mod readout;
pub mod spectrum;
pub mod sweep;
pub mod units;

pub use error::{Error, Result};
pub use fock::{DensityState, FockDim, OperatorMatrix, StateVector, C64};
pub use model::{DriveSpec, KpoParams, TwoKpoParams};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/units.md")]
    mod units {}
    #[doc = include_str!("../../../book/src/spectrum.md")]
    mod spectrum {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/bitflip.md")]
    mod bitflip {}
    #[doc = include_str!("../../../book/src/sweeps.md")]
    mod sweeps {}
    #[doc = include_str!("../../../book/src/readout.md")]
    mod readout {}
}
