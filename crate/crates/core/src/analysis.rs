//! Blockwise link metrics and the frequency-dependent phase error.
//!
//! The phase error of a block is the argument of the segment-averaged cross
//! spectrum `Y(f) X*(f)` between transmitted symbols `x` and received
//! symbols `y`: if `y` is `x` seen through an all-pass filter of phase
//! `psi(f)`, the estimate is `psi(f)`. Reversal then applies
//! `exp(-j psi(f))`.
//!
//! At one sample per symbol the roll-off regions of the two spectral edges
//! fold onto each other around `+-Rs/2`. Profiles are restricted to the
//! non-folded band `|f| <= (1 - rolloff) Rs / 2`.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::dsp::{fft, fftshift, FrequencyGrid, GridOrdering};
use crate::error::{param, Error, Result};
use crate::transceiver::SymbolSequence;

/// Reported SNR when the error power vanishes.
pub const SNR_CAP_DB: f64 = 80.0;

/// Contiguous, non-overlapping analysis blocks starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockPartition {
    pub start: usize,
    pub block_size: usize,
    pub n_blocks: usize,
}

impl BlockPartition {
    /// As many whole blocks as fit in `range`.
    pub fn covering(range: Range<usize>, block_size: usize) -> Result<Self> {
        if block_size < 64 {
            return param(format!("block size must be at least 64, got {block_size}"));
        }
        let n_blocks = range.len() / block_size;
        if n_blocks == 0 {
            return param(format!("{} symbols hold no {block_size}-symbol block", range.len()));
        }
        Ok(Self {
            start: range.start,
            block_size,
            n_blocks,
        })
    }

    pub fn block(&self, i: usize) -> Range<usize> {
        let a = self.start + i * self.block_size;
        a..a + self.block_size
    }

    pub fn blocks(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.n_blocks).map(|i| self.block(i))
    }

    pub fn end(&self) -> usize {
        self.start + self.n_blocks * self.block_size
    }
}

/// SNR of `y` against `x` after the least-squares complex gain `g` mapping
/// `x` onto `y`: `|g x|^2 / |y - g x|^2`. A zero reference gives 0 dB.
pub fn block_snr_db(x: &[Complex64], y: &[Complex64]) -> f64 {
    let (num, px) = x.iter().zip(y).fold(
        (Complex64::new(0.0, 0.0), 0.0),
        |(n, d), (x, y)| (n + x.conj() * y, d + x.norm_sqr()),
    );
    if px == 0.0 {
        return 0.0;
    }
    let gain = num / px;
    let signal = gain.norm_sqr() * px;
    let err: f64 = x.iter().zip(y).map(|(x, y)| (y - gain * x).norm_sqr()).sum();
    if err <= signal * 10f64.powf(-SNR_CAP_DB / 10.0) {
        return SNR_CAP_DB;
    }
    (10.0 * (signal / err).log10()).min(SNR_CAP_DB)
}

/// Per-block SNR in dB.
pub fn blockwise_snr(x: &SymbolSequence, y: &SymbolSequence, partition: &BlockPartition) -> Result<Vec<f64>> {
    blockwise_snr_slices(&x.symbols, &y.symbols, partition)
}

pub fn blockwise_snr_slices(x: &[Complex64], y: &[Complex64], partition: &BlockPartition) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return param(format!("x has {} symbols, y has {}", x.len(), y.len()));
    }
    if partition.end() > x.len() {
        return param("partition extends past the sequence");
    }
    Ok(partition.blocks().map(|r| block_snr_db(&x[r.clone()], &y[r])).collect())
}

/// Cross-spectrum estimator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpsdConfig {
    pub segment_len: usize,
    /// Hop between segment starts.
    pub hop: usize,
    /// Profile keeps bins with `|f| <= band_edge * Rs / 2`.
    pub band_edge: f64,
}

impl CpsdConfig {
    /// 256-symbol Hann segments with 50 % overlap over the non-folded band.
    pub fn for_rolloff(rolloff: f64) -> Self {
        Self {
            segment_len: 256,
            hop: 128,
            band_edge: 1.0 - rolloff,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_len < 8 || self.hop == 0 || self.hop > self.segment_len {
            return param("CPSD needs segments of at least 8 symbols and 0 < hop <= segment length");
        }
        if !(self.band_edge > 0.0 && self.band_edge <= 1.0) {
            return param(format!("band edge must be in (0, 1], got {}", self.band_edge));
        }
        Ok(())
    }
}

/// Phase error versus frequency on an ascending grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyPhaseProfile {
    pub grid: FrequencyGrid,
    /// Radians, unwrapped along frequency.
    pub phase: Vec<f64>,
    /// Cross-spectrum magnitude per bin.
    pub weight: Vec<f64>,
    pub symbol_rate: f64,
}

impl FrequencyPhaseProfile {
    pub fn len(&self) -> usize {
        self.phase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase.is_empty()
    }

    /// Frequencies scaled so that `+-Rs/2` maps to `+-1`.
    pub fn normalized_frequencies(&self) -> Vec<f64> {
        let h = self.symbol_rate / 2.0;
        self.grid.frequencies.iter().map(|f| f / h).collect()
    }

    pub fn weighted_mean(&self) -> f64 {
        let w: f64 = self.weight.iter().sum();
        self.phase.iter().zip(&self.weight).map(|(p, w)| p * w).sum::<f64>() / w
    }

    /// Largest deviation from the weighted mean phase.
    pub fn max_abs_deviation(&self) -> f64 {
        let m = self.weighted_mean();
        self.phase.iter().map(|p| (p - m).abs()).fold(0.0, f64::max)
    }

    /// Same grid and weights, phase replaced.
    pub fn with_phase(&self, phase: Vec<f64>) -> Self {
        Self {
            grid: self.grid.clone(),
            phase,
            weight: self.weight.clone(),
            symbol_rate: self.symbol_rate,
        }
    }

    /// Weighted average phase over bins with `|f - center| <= half_width`.
    pub fn band_average(&self, center: f64, half_width: f64) -> Option<f64> {
        let (s, w) = self
            .grid
            .frequencies
            .iter()
            .zip(self.phase.iter().zip(&self.weight))
            .filter(|(f, _)| (**f - center).abs() <= half_width)
            .fold((0.0, 0.0), |(s, ws), (_, (p, w))| (s + p * w, ws + w));
        (w > 0.0).then(|| s / w)
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Unwrap so adjacent bins differ by less than pi, starting at `anchor`.
fn unwrap_from(phase: &mut [f64], anchor: usize) {
    for i in anchor + 1..phase.len() {
        let d = phase[i] - phase[i - 1];
        phase[i] -= 2.0 * PI * (d / (2.0 * PI)).round();
    }
    for i in (0..anchor).rev() {
        let d = phase[i] - phase[i + 1];
        phase[i] -= 2.0 * PI * (d / (2.0 * PI)).round();
    }
}

/// Segment-averaged cross spectrum `sum Y_seg X_seg*` over `block`, in FFT order.
pub fn cross_spectrum(x: &[Complex64], y: &[Complex64], block: Range<usize>, cfg: &CpsdConfig) -> Result<Vec<Complex64>> {
    cfg.validate()?;
    if x.len() != y.len() {
        return param(format!("x has {} symbols, y has {}", x.len(), y.len()));
    }
    if block.end > x.len() {
        return param("block extends past the sequence");
    }
    let n = cfg.segment_len;
    if block.len() < n.max(256) {
        return param(format!("block of {} symbols is too short for cross-spectrum estimation", block.len()));
    }
    let win = hann(n);
    let mut acc = vec![Complex64::new(0.0, 0.0); n];
    let mut xs = vec![Complex64::new(0.0, 0.0); n];
    let mut ys = vec![Complex64::new(0.0, 0.0); n];
    let mut start = block.start;
    while start + n <= block.end {
        for i in 0..n {
            xs[i] = x[start + i] * win[i];
            ys[i] = y[start + i] * win[i];
        }
        fft(&mut xs);
        fft(&mut ys);
        for ((a, xv), yv) in acc.iter_mut().zip(&xs).zip(&ys) {
            *a += yv * xv.conj();
        }
        start += cfg.hop;
    }
    Ok(acc)
}

/// Frequency-dependent phase error of `y` relative to `x` over `block`.
pub fn estimate_phase_error(
    x: &SymbolSequence,
    y: &SymbolSequence,
    block: Range<usize>,
    cfg: &CpsdConfig,
) -> Result<FrequencyPhaseProfile> {
    let rs = x.symbol_rate;
    let acc = cross_spectrum(&x.symbols, &y.symbols, block, cfg)?;
    let n = cfg.segment_len;
    let all = FrequencyGrid::monotone(n, rs);
    let spec = fftshift(&acc);
    let limit = cfg.band_edge * rs / 2.0 * (1.0 + 1e-12);
    let keep: Vec<usize> = (0..n).filter(|&i| all.frequencies[i].abs() <= limit).collect();
    let frequencies: Vec<f64> = keep.iter().map(|&i| all.frequencies[i]).collect();
    let weight: Vec<f64> = keep.iter().map(|&i| spec[i].norm()).collect();
    let mut phase: Vec<f64> = keep.iter().map(|&i| spec[i].arg()).collect();
    let peak = weight.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Estimation("cross spectrum vanishes over the block".into()));
    }
    let anchor = weight.iter().position(|&w| w == peak).unwrap_or(0);
    unwrap_from(&mut phase, anchor);
    Ok(FrequencyPhaseProfile {
        grid: FrequencyGrid {
            frequencies,
            resolution: all.resolution,
            ordering: GridOrdering::Monotone,
        },
        phase,
        weight,
        symbol_rate: rs,
    })
}

/// Polynomial in normalized frequency `u = f / (Rs/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialPhase {
    /// `coefficients[k]` multiplies `u^k` (radians).
    pub coefficients: Vec<f64>,
    /// Weighted RMS of the fit residual (radians).
    pub residual_rms: f64,
    /// Fraction of the weighted phase variance explained by the fit.
    pub explained: f64,
    pub symbol_rate: f64,
}

impl PolynomialPhase {
    pub const MAX_ORDER: usize = 9;

    pub fn order(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn eval_normalized(&self, u: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * u + c)
    }

    pub fn eval_hz(&self, f: f64) -> f64 {
        self.eval_normalized(f / (self.symbol_rate / 2.0))
    }

    /// Coefficient of `f^k` with `f` in Hz.
    pub fn coefficient_per_hz(&self, k: usize) -> f64 {
        self.coefficients[k] / (self.symbol_rate / 2.0).powi(k as i32)
    }

    /// Linear part `phi_0 + phi_1 u`.
    pub fn linear_part(&self) -> PolynomialPhase {
        let mut c = self.coefficients.clone();
        c.resize(2, 0.0);
        PolynomialPhase {
            coefficients: c,
            residual_rms: f64::NAN,
            explained: f64::NAN,
            symbol_rate: self.symbol_rate,
        }
    }
}

/// Weighted least-squares polynomial fit of `profile` of the given order.
pub fn fit_polynomial(profile: &FrequencyPhaseProfile, order: usize) -> Result<PolynomialPhase> {
    if order > PolynomialPhase::MAX_ORDER {
        return param(format!("polynomial order {order} exceeds {}", PolynomialPhase::MAX_ORDER));
    }
    let u = profile.normalized_frequencies();
    let used = profile.weight.iter().filter(|&&w| w > 0.0).count();
    if order >= used {
        return Err(Error::Estimation(format!("order {order} needs more than {used} weighted bins")));
    }
    let m = profile.len();
    let sw: Vec<f64> = profile.weight.iter().map(|w| w.max(0.0).sqrt()).collect();
    let a = DMatrix::from_fn(m, order + 1, |i, j| sw[i] * u[i].powi(j as i32));
    let b = DVector::from_fn(m, |i, _| sw[i] * profile.phase[i]);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin / smax < 1e-12 {
        return Err(Error::Estimation("rank-deficient polynomial fit".into()));
    }
    let coef = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::Estimation(e.to_string()))?;
    let coefficients: Vec<f64> = coef.iter().copied().collect();

    let wsum: f64 = profile.weight.iter().sum();
    let mean = profile.weighted_mean();
    let mut res = 0.0;
    let mut var = 0.0;
    for i in 0..m {
        let w = profile.weight[i];
        let fit: f64 = coefficients.iter().rev().fold(0.0, |acc, c| acc * u[i] + c);
        res += w * (profile.phase[i] - fit).powi(2);
        var += w * (profile.phase[i] - mean).powi(2);
    }
    let explained = if var > 0.0 { 1.0 - res / var } else { 1.0 };
    Ok(PolynomialPhase {
        coefficients,
        residual_rms: (res / wsum).sqrt(),
        explained,
        symbol_rate: profile.symbol_rate,
    })
}

/// Timing offset in unit intervals from the linear term: a phase change of
/// `delta = 2 phi_1` across the symbol-rate band corresponds to an offset of
/// `-delta / 2 pi`. Positive values mean `y` lags `x`.
pub fn timing_offset_from_slope(fit: &PolynomialPhase) -> Result<f64> {
    if fit.order() < 1 {
        return param("timing offset needs a fit of order >= 1");
    }
    Ok(timing_offset_from_band_phase(2.0 * fit.coefficients[1]))
}

/// See [`timing_offset_from_slope`].
pub fn timing_offset_from_band_phase(delta_phi_band: f64) -> f64 {
    -delta_phi_band / (2.0 * PI)
}

/// `max(phase) - min(phase)` over the profile.
pub fn max_excursion(profile: &FrequencyPhaseProfile) -> Result<f64> {
    if profile.is_empty() {
        return param("empty profile");
    }
    let (lo, hi) = profile
        .phase
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    Ok(hi - lo)
}

/// Explained-variance threshold for calling a fit order sufficient.
pub const FIT_EXPLAINED_THRESHOLD: f64 = 0.9;

/// Dominant shape of a block's phase error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorShape {
    /// Order-1 fit explains more than the threshold: a timing offset.
    Linear,
    /// Order 2 needed: mainly dispersive.
    Quadratic,
    HigherOrder,
}

/// Lowest order whose fit explains more than [`FIT_EXPLAINED_THRESHOLD`] of
/// the weighted variance; `fits[k]` must be the order-`k + 1` fit.
pub fn select_order(fits: &[PolynomialPhase]) -> usize {
    fits.iter()
        .find(|f| f.explained > FIT_EXPLAINED_THRESHOLD)
        .map_or_else(|| fits.last().map_or(0, PolynomialPhase::order), PolynomialPhase::order)
}

pub fn classify(selected_order: usize) -> ErrorShape {
    match selected_order {
        0 | 1 => ErrorShape::Linear,
        2 => ErrorShape::Quadratic,
        _ => ErrorShape::HigherOrder,
    }
}

/// Per-block analysis output.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub block_index: usize,
    pub range: Range<usize>,
    pub snr_db: f64,
    pub phase_profile: FrequencyPhaseProfile,
    /// Fits of order 1 through [`PolynomialPhase::MAX_ORDER`].
    pub fits: Vec<PolynomialPhase>,
    pub max_excursion_rad: f64,
    pub timing_offset_ui: f64,
    pub selected_order: usize,
}

impl BlockReport {
    pub fn shape(&self) -> ErrorShape {
        classify(self.selected_order)
    }

    pub fn fit(&self, order: usize) -> &PolynomialPhase {
        &self.fits[order - 1]
    }
}

/// Profile, fits and metrics of one block.
pub fn analyze_block(
    x: &SymbolSequence,
    y: &SymbolSequence,
    block_index: usize,
    range: Range<usize>,
    cfg: &CpsdConfig,
) -> Result<BlockReport> {
    let profile = estimate_phase_error(x, y, range.clone(), cfg)?;
    let fits = (1..=PolynomialPhase::MAX_ORDER)
        .map(|n| fit_polynomial(&profile, n))
        .collect::<Result<Vec<_>>>()?;
    let selected_order = select_order(&fits);
    Ok(BlockReport {
        block_index,
        snr_db: block_snr_db(&x.symbols[range.clone()], &y.symbols[range.clone()]),
        range,
        max_excursion_rad: max_excursion(&profile)?,
        timing_offset_ui: timing_offset_from_slope(&fits[0])?,
        selected_order,
        fits,
        phase_profile: profile,
    })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    pearson(&ranks(a), &ranks(b))
}
