//! Linear fiber channel: chromatic dispersion, its compensation, and AWGN.
//!
//! Sign convention: the fiber applies `exp(+j pi lambda^2 D L f^2 / c)`;
//! compensation applies the conjugate. With this convention the group delay
//! of the fiber at frequency `f` is `-beta * f`, `beta = lambda^2 D L / c`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::{ComplexSignal, FrequencyGrid};
use crate::error::{param, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberSpec {
    /// ps / (nm km)
    pub dispersion: f64,
    /// km
    pub length: f64,
    /// nm
    pub wavelength: f64,
}

impl FiberSpec {
    pub fn new(dispersion: f64, length: f64, wavelength: f64) -> Result<Self> {
        let f = Self {
            dispersion,
            length,
            wavelength,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length >= 0.0 && self.length.is_finite()) {
            return param(format!("fiber length must be non-negative, got {}", self.length));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return param(format!("wavelength must be positive, got {}", self.wavelength));
        }
        if !self.dispersion.is_finite() {
            return param("dispersion must be finite");
        }
        Ok(())
    }

    /// Accumulated dispersion `lambda^2 D L / c` in s^2: group delay per Hz.
    pub fn dispersion_coefficient(&self) -> f64 {
        let d = self.dispersion * 1e-6; // s / m^2
        let l = self.length * 1e3;
        let lambda = self.wavelength * 1e-9;
        lambda * lambda * d * l / SPEED_OF_LIGHT
    }

    /// Spread of group delay (s) across `bandwidth` Hz.
    pub fn delay_spread(&self, bandwidth: f64) -> f64 {
        self.dispersion_coefficient().abs() * bandwidth
    }

    /// Group delay (s) of the fiber at frequency `f`.
    pub fn group_delay(&self, f: f64) -> f64 {
        -self.dispersion_coefficient() * f
    }
}

/// Fiber transfer function on `grid`.
pub fn cd_response(fiber: &FiberSpec, grid: &FrequencyGrid) -> Vec<Complex64> {
    let beta = fiber.dispersion_coefficient();
    grid.frequencies
        .iter()
        .map(|&f| Complex64::from_polar(1.0, PI * beta * f * f))
        .collect()
}

/// Dispersion compensation: the conjugate of [`cd_response`].
pub fn cdc_response(fiber: &FiberSpec, grid: &FrequencyGrid) -> Vec<Complex64> {
    cd_response(fiber, grid).into_iter().map(|h| h.conj()).collect()
}

/// Power reference for [`add_awgn`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseReference {
    /// Measured mean power of the input signal.
    Signal,
    Explicit(f64),
}

/// Circular complex Gaussian samples with the given total variance,
/// split equally between real and imaginary parts.
pub fn complex_gaussian(n: usize, variance: f64, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sigma = (variance / 2.0).sqrt();
    (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(sigma * re, sigma * im)
        })
        .collect()
}

/// Per-sample noise variance for `snr_db` against `reference` power.
pub fn noise_variance(signal: &ComplexSignal, snr_db: f64, reference: NoiseReference) -> Result<f64> {
    let p = match reference {
        NoiseReference::Signal => signal.power(),
        NoiseReference::Explicit(p) if p >= 0.0 && p.is_finite() => p,
        NoiseReference::Explicit(p) => return param(format!("invalid reference power {p}")),
    };
    Ok(p / 10f64.powf(snr_db / 10.0))
}

/// Add circular white Gaussian noise. `snr_db = +inf` disables the noise.
pub fn add_awgn(
    signal: &ComplexSignal,
    snr_db: f64,
    reference: NoiseReference,
    seed: u64,
) -> Result<ComplexSignal> {
    signal.ensure_non_empty()?;
    if snr_db == f64::INFINITY {
        return Ok(signal.clone());
    }
    if !snr_db.is_finite() {
        return param(format!("SNR must be finite or +inf, got {snr_db}"));
    }
    let var = noise_variance(signal, snr_db, reference)?;
    let noise = complex_gaussian(signal.len(), var, seed);
    let samples = signal.samples.iter().zip(&noise).map(|(s, n)| s + n).collect();
    ComplexSignal::new(samples, signal.sample_rate)
}
