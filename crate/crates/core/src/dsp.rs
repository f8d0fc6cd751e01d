//! Signal containers and frequency-domain filtering primitives.
//!
//! Frequency ordering convention used everywhere in the crate: for a
//! transform of length `n` at sample rate `fs`, bin `k` maps to `k * fs / n`
//! for `k < (n + 1) / 2` and to `(k - n) * fs / n` otherwise.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{param, Error, Result};

/// Uniformly sampled complex baseband waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
}

impl ComplexSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return param(format!("sample rate must be positive, got {sample_rate}"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    /// Mean power per sample.
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub(crate) fn ensure_non_empty(&self) -> Result<()> {
        if self.samples.is_empty() {
            return param("signal is empty");
        }
        Ok(())
    }
}

pub fn energy(samples: &[Complex64]) -> f64 {
    samples.iter().map(|s| s.norm_sqr()).sum()
}

pub fn mean_power(samples: &[Complex64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    energy(samples) / samples.len() as f64
}

/// Whether a [`FrequencyGrid`] follows FFT bin order or is sorted ascending.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridOrdering {
    FftOrder,
    Monotone,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    pub frequencies: Vec<f64>,
    pub resolution: f64,
    pub ordering: GridOrdering,
}

/// Frequency of FFT bin `k` of an `n`-point transform at `sample_rate`.
pub fn bin_frequency(k: usize, n: usize, sample_rate: f64) -> f64 {
    let df = sample_rate / n as f64;
    if k < (n + 1) / 2 {
        k as f64 * df
    } else {
        (k as f64 - n as f64) * df
    }
}

impl FrequencyGrid {
    pub fn fft_ordered(n: usize, sample_rate: f64) -> Self {
        Self {
            frequencies: (0..n).map(|k| bin_frequency(k, n, sample_rate)).collect(),
            resolution: sample_rate / n as f64,
            ordering: GridOrdering::FftOrder,
        }
    }

    /// Ascending grid from `-fs/2` (inclusive) to `fs/2` (exclusive); the
    /// FFT-ordered grid after an fftshift.
    pub fn monotone(n: usize, sample_rate: f64) -> Self {
        let mut frequencies: Vec<f64> = (0..n).map(|k| bin_frequency(k, n, sample_rate)).collect();
        frequencies.rotate_left(n / 2 + n % 2);
        Self {
            frequencies,
            resolution: sample_rate / n as f64,
            ordering: GridOrdering::Monotone,
        }
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

/// Unnormalized forward DFT in place.
pub fn fft(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    plan(buf.len(), false).process(buf);
}

/// Inverse DFT in place, scaled by `1/n`.
pub fn ifft(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    plan(buf.len(), true).process(buf);
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Swap the halves of an FFT-ordered vector so that frequency ascends.
pub fn fftshift<T: Clone>(v: &[T]) -> Vec<T> {
    let n = v.len();
    let mut out = v.to_vec();
    out.rotate_left(n / 2 + n % 2);
    out
}

/// Complex FIR filter; `nominal_delay` is the tap index treated as time zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    pub taps: Vec<Complex64>,
    pub nominal_delay: usize,
}

impl FirFilter {
    /// Filter whose group-delay center is the middle tap. Tap count must be odd.
    pub fn centered(taps: Vec<Complex64>) -> Result<Self> {
        if taps.len() % 2 == 0 {
            return param(format!("centered filter needs an odd tap count, got {}", taps.len()));
        }
        let nominal_delay = taps.len() / 2;
        Ok(Self {
            taps,
            nominal_delay,
        })
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn energy(&self) -> f64 {
        energy(&self.taps)
    }

    /// Response at normalized frequency `nu` (cycles per sample), with the
    /// nominal delay removed.
    pub fn response_at(&self, nu: f64) -> Complex64 {
        self.taps
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let n = i as f64 - self.nominal_delay as f64;
                t * Complex64::from_polar(1.0, -2.0 * PI * nu * n)
            })
            .sum()
    }

    /// Taps laid out circularly in an `n`-point buffer so that the nominal
    /// delay sits at index 0, transformed to the frequency domain.
    pub fn circular_spectrum(&self, n: usize) -> Result<Vec<Complex64>> {
        if self.taps.len() > n {
            return param(format!("{} taps do not fit a {n}-point transform", self.taps.len()));
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (i, &t) in self.taps.iter().enumerate() {
            let idx = (i as isize - self.nominal_delay as isize).rem_euclid(n as isize) as usize;
            buf[idx] += t;
        }
        fft(&mut buf);
        Ok(buf)
    }

    /// Circular convolution with zero delay at `nominal_delay`, through FFT.
    pub fn apply_circular(&self, input: &[Complex64]) -> Result<Vec<Complex64>> {
        let h = self.circular_spectrum(input.len())?;
        let mut buf = input.to_vec();
        fft(&mut buf);
        for (b, h) in buf.iter_mut().zip(&h) {
            *b *= h;
        }
        ifft(&mut buf);
        Ok(buf)
    }

    /// Linear convolution, zero-padded outside `input`, output aligned with
    /// input (same length, nominal delay removed).
    pub fn apply_same(&self, input: &[Complex64]) -> Vec<Complex64> {
        let n = input.len() as isize;
        let d = self.nominal_delay as isize;
        (0..n)
            .map(|m| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (i, &t) in self.taps.iter().enumerate() {
                    let src = m - (i as isize - d);
                    if (0..n).contains(&src) {
                        acc += t * input[src as usize];
                    }
                }
                acc
            })
            .collect()
    }
}

/// Root-raised-cosine taps, unit energy, covering `±span_symbols` symbols
/// (`2 * span_symbols * sps + 1` taps).
pub fn rrc_taps(rolloff: f64, span_symbols: usize, samples_per_symbol: usize) -> Result<FirFilter> {
    if !(0.0..=1.0).contains(&rolloff) {
        return param(format!("rolloff must be in [0, 1], got {rolloff}"));
    }
    if span_symbols < 8 {
        return param(format!("RRC span must be at least 8 symbols, got {span_symbols}"));
    }
    if samples_per_symbol < 1 {
        return param("samples per symbol must be at least 1");
    }
    let n = 2 * span_symbols * samples_per_symbol + 1;
    let center = (n / 2) as f64;
    let sps = samples_per_symbol as f64;
    let b = rolloff;
    let mut taps: Vec<Complex64> = (0..n)
        .map(|i| {
            let t = (i as f64 - center) / sps;
            Complex64::new(rrc_value(t, b), 0.0)
        })
        .collect();
    let norm = energy(&taps).sqrt();
    for t in &mut taps {
        *t /= norm;
    }
    FirFilter::centered(taps)
}

/// Continuous RRC impulse response at `t` symbol periods (unnormalized).
fn rrc_value(t: f64, b: f64) -> f64 {
    if t.abs() < 1e-12 {
        return 1.0 - b + 4.0 * b / PI;
    }
    if b > 0.0 && (t.abs() - 1.0 / (4.0 * b)).abs() < 1e-9 {
        let a = PI / (4.0 * b);
        return b / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
    }
    let num = (PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos();
    let den = PI * t * (1.0 - (4.0 * b * t).powi(2));
    num / den
}

/// How [`apply_frequency_response`] realizes the filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// One transform over the whole signal; circular convolution.
    Circular,
    /// Overlap-save block convolution of a zero-extended signal. `overlap`
    /// input samples are shared between consecutive blocks; the response's
    /// impulse response must fit in `memory` samples centered on zero.
    OverlapSave {
        fft_len: usize,
        overlap: usize,
        memory: usize,
    },
}

/// Filter `signal` with a per-bin frequency response built from the
/// FFT-ordered grid of the transform actually used.
pub fn apply_frequency_response<F>(
    signal: &ComplexSignal,
    response: F,
    mode: FilterMode,
) -> Result<ComplexSignal>
where
    F: Fn(&FrequencyGrid) -> Vec<Complex64>,
{
    signal.ensure_non_empty()?;
    let fs = signal.sample_rate;
    match mode {
        FilterMode::Circular => {
            let n = signal.len();
            let h = response(&FrequencyGrid::fft_ordered(n, fs));
            check_response_len(&h, n)?;
            let mut buf = signal.samples.clone();
            fft(&mut buf);
            for (b, h) in buf.iter_mut().zip(&h) {
                *b *= h;
            }
            ifft(&mut buf);
            ComplexSignal::new(buf, fs)
        }
        FilterMode::OverlapSave {
            fft_len,
            overlap,
            memory,
        } => {
            if overlap < memory {
                return Err(Error::Configuration(format!(
                    "overlap of {overlap} samples is shorter than the filter memory of {memory}"
                )));
            }
            if fft_len <= overlap {
                return Err(Error::Configuration(format!(
                    "transform length {fft_len} must exceed the overlap {overlap}"
                )));
            }
            let h = response(&FrequencyGrid::fft_ordered(fft_len, fs));
            check_response_len(&h, fft_len)?;
            let fwd = plan(fft_len, false);
            let inv = plan(fft_len, true);
            let step = fft_len - overlap;
            let lead = overlap / 2;
            let n = signal.len();
            let x = &signal.samples;
            let mut out = Vec::with_capacity(n);
            let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
            let scale = 1.0 / fft_len as f64;
            let mut start = 0usize;
            while start < n {
                for (i, b) in buf.iter_mut().enumerate() {
                    let src = start as isize - lead as isize + i as isize;
                    *b = if (0..n as isize).contains(&src) {
                        x[src as usize]
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                }
                fwd.process(&mut buf);
                for (b, h) in buf.iter_mut().zip(&h) {
                    *b *= h;
                }
                inv.process(&mut buf);
                let take = step.min(n - start);
                out.extend(buf[lead..lead + take].iter().map(|v| v * scale));
                start += step;
            }
            ComplexSignal::new(out, fs)
        }
    }
}

fn check_response_len(h: &[Complex64], n: usize) -> Result<()> {
    if h.len() != n {
        return param(format!("frequency response has {} bins, transform has {n}", h.len()));
    }
    Ok(())
}

/// Zero-insertion upsampling by `factor_up` followed by decimation by
/// `factor_down` starting at `offset` (in upsampled samples).
pub fn resample(
    signal: &ComplexSignal,
    factor_up: usize,
    factor_down: usize,
    offset: usize,
) -> Result<ComplexSignal> {
    if factor_up < 1 || factor_down < 1 {
        return param("resampling factors must be at least 1");
    }
    if offset >= factor_down {
        return param(format!("offset {offset} must be below the decimation factor {factor_down}"));
    }
    let zero = Complex64::new(0.0, 0.0);
    let up_len = signal.len() * factor_up;
    let samples = (offset..up_len)
        .step_by(factor_down)
        .map(|i| if i % factor_up == 0 { signal.samples[i / factor_up] } else { zero })
        .collect();
    ComplexSignal::new(
        samples,
        signal.sample_rate * factor_up as f64 / factor_down as f64,
    )
}
