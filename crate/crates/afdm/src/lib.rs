//! MIMO-AFDM baseband simulation.
//!
//! Modules follow the receive chain: [`daft`] transforms, [`channel`] synthesis,
//! [`framing`] of pilots and guards, [`chanest`] diagonal-reconstruction channel
//! estimation, [`detect`] symbol detection and the Monte-Carlo [`harness`].

pub mod afdma;
pub mod band;
pub mod chanest;
pub mod channel;
pub mod daft;
pub mod detect;
pub mod error;
pub mod framing;
pub mod harness;
pub mod noise;
pub mod params;

#[cfg(test)]
pub(crate) mod test_util;

pub use num_complex::Complex64 as C64;

/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;

pub use error::{AfdmError, Result};
pub use params::AfdmParams;
