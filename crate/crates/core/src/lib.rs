//! Equalization-enhanced phase noise (EEPN) simulator and analysis toolkit.
//!
//! The crate models a coherent optical link at baseband: pulse-shaped
//! single-carrier or digitally multiplexed multi-carrier transmission,
//! chromatic dispersion, AWGN, receiver LO phase noise, digital dispersion
//! compensation, matched filtering and blind phase search. On top of the
//! chain it estimates the per-block frequency-dependent phase error between
//! transmitted and received symbols, fits it with polynomials, and reverses
//! it with a per-block all-pass FIR filter.
//!
//! Module map:
//!
//! - [`dsp`]: signal containers, FFT filtering, RRC design, resampling
//! - [`phase_noise`]: Wiener-process LO phase noise
//! - [`channel`]: dispersion, dispersion compensation, AWGN
//! - [`transceiver`]: symbols, SC/MC modulation, matched filter, BPS
//! - [`analysis`]: blockwise SNR, cross-spectral phase error, polynomial fits
//! - [`mitigation`]: all-pass FIR design and blockwise reversal
//! - [`experiment`]: configuration, seeded end-to-end runs, CSV output

pub mod analysis;
pub mod channel;
pub mod dsp;
pub mod error;
pub mod experiment;
pub mod mitigation;
pub mod phase_noise;
pub mod transceiver;

pub use error::{Error, Result};
pub use num_complex::Complex64;
