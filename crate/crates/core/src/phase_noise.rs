//! Receiver LO phase noise as a discrete Wiener process.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::dsp::ComplexSignal;
use crate::error::{param, Result};

/// Per-sample phase in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrajectory {
    pub phases: Vec<f64>,
    pub sample_period: f64,
}

impl PhaseTrajectory {
    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn increments(&self) -> impl Iterator<Item = f64> + '_ {
        self.phases.windows(2).map(|w| w[1] - w[0])
    }
}

/// Increment variance of a Wiener phase for an oscillator of the given
/// linewidth sampled every `sample_period` seconds.
pub fn increment_variance(linewidth: f64, sample_period: f64) -> f64 {
    2.0 * PI * linewidth * sample_period
}

/// Random walk starting at zero with i.i.d. Gaussian increments of variance
/// `2 pi linewidth sample_period`. Identical seeds give identical paths.
pub fn generate_wiener_phase(
    n_samples: usize,
    linewidth: f64,
    sample_period: f64,
    seed: u64,
) -> Result<PhaseTrajectory> {
    if n_samples == 0 {
        return param("phase trajectory needs at least one sample");
    }
    if !(linewidth >= 0.0 && linewidth.is_finite()) {
        return param(format!("linewidth must be non-negative, got {linewidth}"));
    }
    if !(sample_period > 0.0 && sample_period.is_finite()) {
        return param(format!("sample period must be positive, got {sample_period}"));
    }
    let sigma = increment_variance(linewidth, sample_period).sqrt();
    let mut phases = Vec::with_capacity(n_samples);
    phases.push(0.0);
    if sigma == 0.0 {
        phases.resize(n_samples, 0.0);
    } else {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        let mut phi = 0.0;
        for _ in 1..n_samples {
            phi += normal.sample(&mut rng);
            phases.push(phi);
        }
    }
    Ok(PhaseTrajectory {
        phases,
        sample_period,
    })
}

/// Multiply each sample by `exp(j phi[k])`.
pub fn apply_phase(signal: &ComplexSignal, trajectory: &PhaseTrajectory) -> Result<ComplexSignal> {
    if signal.len() != trajectory.len() {
        return param(format!(
            "signal has {} samples but trajectory has {}",
            signal.len(),
            trajectory.len()
        ));
    }
    let samples = rotate(&signal.samples, &trajectory.phases);
    ComplexSignal::new(samples, signal.sample_rate)
}

pub(crate) fn rotate(samples: &[Complex64], phases: &[f64]) -> Vec<Complex64> {
    samples
        .iter()
        .zip(phases)
        .map(|(s, &p)| s * Complex64::from_polar(1.0, p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAPER_PERIOD: f64 = 1.0 / 360e9;

    #[test]
    fn zero_linewidth_gives_zero_path() {
        let t = generate_wiener_phase(1000, 0.0, PAPER_PERIOD, 7).unwrap();
        assert!(t.phases.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn paper_increment_variance() {
        // 2 pi * 70e3 / 360e9 = 1.221730e-6
        let v = increment_variance(70e3, PAPER_PERIOD);
        assert!((v - 1.2217e-6).abs() < 1e-10, "{v}");
    }

    #[test]
    fn starts_at_zero_and_is_seeded() {
        let a = generate_wiener_phase(500, 70e3, PAPER_PERIOD, 11).unwrap();
        let b = generate_wiener_phase(500, 70e3, PAPER_PERIOD, 11).unwrap();
        let c = generate_wiener_phase(500, 70e3, PAPER_PERIOD, 12).unwrap();
        assert_eq!(a.phases[0], 0.0);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate_wiener_phase(0, 1.0, 1.0, 0).is_err());
        assert!(generate_wiener_phase(10, -1.0, 1.0, 0).is_err());
        assert!(generate_wiener_phase(10, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn increment_sample_variance_within_one_percent() {
        // The sample variance of 1e6 Gaussian draws has relative std
        // sqrt(2 / 1e6) = 0.14 %, so 1 % is a ~7 sigma bound.
        let t = generate_wiener_phase(1_000_001, 70e3, PAPER_PERIOD, 3).unwrap();
        let inc: Vec<f64> = t.increments().collect();
        let n = inc.len() as f64;
        let mean = inc.iter().sum::<f64>() / n;
        let var = inc.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = increment_variance(70e3, PAPER_PERIOD);
        assert!((var / target - 1.0).abs() < 0.01, "{var} vs {target}");
    }

    #[test]
    fn structure_function_grows_linearly() {
        let sigma2 = 1e-4;
        let t = generate_wiener_phase(400_001, sigma2 / (2.0 * PI), 1.0, 5).unwrap();
        for lag in [1usize, 10, 100] {
            let d: Vec<f64> = t.phases.windows(lag + 1).map(|w| (w[lag] - w[0]).powi(2)).collect();
            let msd = d.iter().sum::<f64>() / d.len() as f64;
            let expect = sigma2 * lag as f64;
            // Overlapping differences; effective samples ~ n / lag.
            let tol = 6.0 * (2.0 * lag as f64 / 400_000.0).sqrt();
            assert!((msd / expect - 1.0).abs() < tol, "lag {lag}: {msd} vs {expect}");
        }
    }

    #[test]
    fn apply_phase_examples() {
        let s = ComplexSignal::new(
            (0..8).map(|k| Complex64::new(k as f64, 1.0 - k as f64)).collect(),
            1.0,
        )
        .unwrap();
        let zero = PhaseTrajectory { phases: vec![0.0; 8], sample_period: 1.0 };
        assert_eq!(apply_phase(&s, &zero).unwrap(), s);

        let constant = PhaseTrajectory { phases: vec![0.7; 8], sample_period: 1.0 };
        let out = apply_phase(&s, &constant).unwrap();
        let rot = Complex64::from_polar(1.0, 0.7);
        for (o, i) in out.samples.iter().zip(&s.samples) {
            assert!((o - i * rot).norm() < 1e-12);
        }

        let walk = generate_wiener_phase(8, 1e6, 1e-3, 1).unwrap();
        let out = apply_phase(&s, &walk).unwrap();
        for (o, i) in out.samples.iter().zip(&s.samples) {
            assert!((o.norm() - i.norm()).abs() < 1e-12);
        }
        assert!((out.energy() - s.energy()).abs() < 1e-12 * s.energy());

        let short = PhaseTrajectory { phases: vec![0.0; 3], sample_period: 1.0 };
        assert!(apply_phase(&s, &short).is_err());
    }
}
