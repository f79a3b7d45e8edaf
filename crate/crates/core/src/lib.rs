//! Desk-scale simulation of a narrow-band, cavity-enhanced type-II SPDC source of
//! polarization-entangled photon pairs.
//!
//! The crate follows the physical pipeline of such a source:
//!
//! - [`spectral`]: cavity mode comb, mode weights of the multimode two-photon state,
//!   etalon filtering and single-mode purity.
//! - [`polarization`]: Jones calculus, PBS interference with post-selection, phase
//!   compensation and white-noise models.
//! - [`entanglement`]: correlation coefficients, CHSH, visibility and fidelity.
//! - [`tomography`]: simulated tomographic counts, linear inversion and maximum
//!   likelihood reconstruction.
//! - [`temporal`]: two-photon time correlation, detector response, TAC histograms and
//!   linewidth / coherence-length fitting.
//! - [`rates`]: below-threshold pair-rate scaling and spectral brightness.
//! - [`pdh`]: Pound-Drever-Hall reflection and error-signal model of the cavity lock.

// `!(x > 0.0)` deliberately rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod entanglement;
pub mod error;
pub mod numerics;
pub mod pdh;
pub mod polarization;
pub mod rates;
pub mod spectral;
pub mod temporal;
pub mod tomography;

pub use error::{Error, ParamIssue, Result};
pub use nalgebra;
pub use num_complex;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Wavelength of the down-converted photons, m.
pub const DEFAULT_WAVELENGTH: f64 = 780e-9;
