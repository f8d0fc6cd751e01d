//! Per-block all-pass FIR reversal of the frequency-dependent phase error.
//!
//! Filters run at one sample per symbol on the phase-recovered symbols.
//! Everything here sees only the transmitted and received symbols.

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;
use std::ops::Range;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::analysis::{
    analyze_block, fit_polynomial, BlockPartition, BlockReport, CpsdConfig, FrequencyPhaseProfile,
    PolynomialPhase,
};
use crate::dsp::{bin_frequency, ifft, FirFilter};
use crate::error::{param, Error, Result};
use crate::phase_noise::PhaseTrajectory;
use crate::transceiver::{bps, BpsConfig, SymbolSequence};

/// Which part of the estimated phase error is reversed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReversalMode {
    /// Only the first-order fit: a timing correction.
    OptimizedTiming,
    /// The full estimated profile.
    HigherOrder,
}

impl FromStr for ReversalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimized_timing" => Ok(ReversalMode::OptimizedTiming),
            "higher_order" => Ok(ReversalMode::HigherOrder),
            other => param(format!("unknown reversal mode {other:?}")),
        }
    }
}

impl fmt::Display for ReversalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReversalMode::OptimizedTiming => "optimized_timing",
            ReversalMode::HigherOrder => "higher_order",
        })
    }
}

/// How the target phase continues between the band edge and Nyquist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeExtension {
    /// Hold the nearest band-edge value.
    Hold,
    /// Linear interpolation across Nyquist between the two band edges.
    Bridge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllpassConfig {
    pub n_taps: usize,
    /// Dense frequency grid used for frequency sampling.
    pub dense_len: usize,
    /// Fraction of the taps covered by the raised-cosine taper (Tukey alpha).
    pub taper: f64,
    pub edge: EdgeExtension,
    /// Half-width in bins of the local quadratic smoothing of the target.
    pub smooth_bins: usize,
    /// Blend the designs of neighbouring windows instead of switching at
    /// block edges.
    pub interpolate: bool,
    /// Design windows per block length; windows slide by `block / designs_per_block`.
    pub designs_per_block: usize,
    /// Symbols per design window; 0 means one block.
    pub design_len: usize,
}

impl Default for AllpassConfig {
    fn default() -> Self {
        Self {
            n_taps: 61,
            dense_len: 4096,
            taper: 0.5,
            edge: EdgeExtension::Bridge,
            smooth_bins: 6,
            interpolate: true,
            designs_per_block: 2,
            design_len: 0,
        }
    }
}

impl AllpassConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_taps % 2 == 0 || self.n_taps == 0 {
            return param(format!("all-pass tap count must be odd, got {}", self.n_taps));
        }
        if self.dense_len < 2 * self.n_taps {
            return param("dense design grid must be at least twice the tap count");
        }
        if !(0.0..=1.0).contains(&self.taper) {
            return param(format!("taper fraction must be in [0, 1], got {}", self.taper));
        }
        if self.designs_per_block == 0 || (!self.interpolate && self.designs_per_block != 1) {
            return param("sliding design windows need interpolation and at least one window per block");
        }
        Ok(())
    }
}

/// A designed reversal filter with its in-band accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct AllpassFirDesign {
    pub filter: FirFilter,
    /// Smoothed phase the filter should remove, `H = exp(-j target)`.
    pub target: FrequencyPhaseProfile,
    /// Phase actually removed, `-arg H`, on the target grid.
    pub achieved: FrequencyPhaseProfile,
    /// Largest in-band `|20 log10 |H||`.
    pub magnitude_ripple_db: f64,
    pub phase_error_rms: f64,
    pub phase_error_max: f64,
}

impl AllpassFirDesign {
    pub fn taps(&self) -> &[Complex64] {
        &self.filter.taps
    }
}

/// Tukey window over `n` points, endpoints kept non-zero.
fn tukey(n: usize, alpha: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let x = (i + 1) as f64 / (n + 1) as f64;
            if alpha <= 0.0 {
                1.0
            } else if x < alpha / 2.0 {
                0.5 * (1.0 + (PI * (2.0 * x / alpha - 1.0)).cos())
            } else if x > 1.0 - alpha / 2.0 {
                0.5 * (1.0 + (PI * (2.0 * x / alpha - 2.0 / alpha + 1.0)).cos())
            } else {
                1.0
            }
        })
        .collect()
}

/// Target phase at frequency `f` (Hz) from an ascending profile, extended
/// outside the profile band per `edge`. The grid is periodic in `rs`.
fn target_at(profile: &FrequencyPhaseProfile, f: f64, edge: EdgeExtension) -> f64 {
    let fr = &profile.grid.frequencies;
    let ph = &profile.phase;
    let (lo, hi) = (fr[0], fr[fr.len() - 1]);
    if f < lo || f > hi {
        return match edge {
            EdgeExtension::Hold => {
                if f < lo {
                    ph[0]
                } else {
                    ph[ph.len() - 1]
                }
            }
            EdgeExtension::Bridge => {
                let rs = profile.symbol_rate;
                let gap = lo + rs - hi;
                let d = if f > hi { f - hi } else { f + rs - hi };
                let t = if gap > 0.0 { d / gap } else { 0.0 };
                ph[ph.len() - 1] + t * (ph[0] - ph[ph.len() - 1])
            }
        };
    }
    let i = fr.partition_point(|&v| v <= f).clamp(1, fr.len() - 1);
    let t = (f - fr[i - 1]) / (fr[i] - fr[i - 1]);
    ph[i - 1] + t * (ph[i] - ph[i - 1])
}

/// Local quadratic least-squares smoothing over `±half` bins. The window
/// is clipped at the band edges, so quadratic profiles pass through unchanged.
pub fn smooth_profile(profile: &FrequencyPhaseProfile, half: usize) -> FrequencyPhaseProfile {
    let ph = &profile.phase;
    let n = ph.len();
    if half == 0 || n < 5 {
        return profile.clone();
    }
    let phase = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let mut a = Matrix3::zeros();
            let mut b = Vector3::zeros();
            for (k, &p) in ph.iter().enumerate().take(hi + 1).skip(lo) {
                let d = k as f64 - i as f64;
                let v = Vector3::new(1.0, d, d * d);
                a += v * v.transpose();
                b += v * p;
            }
            a.lu().solve(&b).map_or(ph[i], |c| c[0])
        })
        .collect();
    profile.with_phase(phase)
}

/// Target profile from a polynomial on another profile's grid.
pub fn polynomial_target(fit: &PolynomialPhase, grid_of: &FrequencyPhaseProfile) -> FrequencyPhaseProfile {
    let phase = grid_of
        .normalized_frequencies()
        .iter()
        .map(|&u| fit.eval_normalized(u))
        .collect();
    grid_of.with_phase(phase)
}

/// Frequency-sampling design of a unit-magnitude FIR with response
/// `exp(-j target(f))`: sample on a dense grid, inverse transform, keep the
/// `n_taps` taps around time zero and apply a raised-cosine taper.
pub fn design_allpass(target: &FrequencyPhaseProfile, cfg: &AllpassConfig) -> Result<AllpassFirDesign> {
    cfg.validate()?;
    if target.len() < 2 {
        return param("design target needs at least two bins");
    }
    if target.phase.iter().any(|p| !p.is_finite()) {
        return Err(Error::Design("target phase is not finite".into()));
    }
    let target = &smooth_profile(target, cfg.smooth_bins);
    let rs = target.symbol_rate;
    let half = cfg.n_taps / 2;

    // Bulk group delay from the linear fit: c1 / pi samples.
    let max_delay = (fit_polynomial(target, 1)?.coefficients[1] / PI).abs();
    if max_delay > half as f64 {
        return Err(Error::Design(format!(
            "target needs {max_delay:.2} samples of group delay, {} taps allow {half}",
            cfg.n_taps
        )));
    }

    let n = cfg.dense_len;
    let mut dense: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(1.0, -target_at(target, bin_frequency(k, n, rs), cfg.edge)))
        .collect();
    ifft(&mut dense);
    let win = tukey(cfg.n_taps, cfg.taper);
    let taps: Vec<Complex64> = (0..cfg.n_taps)
        .map(|i| dense[(i as isize - half as isize).rem_euclid(n as isize) as usize] * win[i])
        .collect();
    let filter = FirFilter::centered(taps)?;

    let mut achieved = Vec::with_capacity(target.len());
    let mut ripple: f64 = 0.0;
    let mut sq = 0.0;
    let mut worst: f64 = 0.0;
    for (&f, &want) in target.grid.frequencies.iter().zip(&target.phase) {
        let h = filter.response_at(f / rs);
        let got = -h.arg();
        let got = got + 2.0 * PI * ((want - got) / (2.0 * PI)).round();
        ripple = ripple.max((20.0 * h.norm().log10()).abs());
        sq += (got - want).powi(2);
        worst = worst.max((got - want).abs());
        achieved.push(got);
    }
    Ok(AllpassFirDesign {
        filter,
        achieved: target.with_phase(achieved),
        target: target.clone(),
        magnitude_ripple_db: ripple,
        phase_error_rms: (sq / target.len() as f64).sqrt(),
        phase_error_max: worst,
    })
}

/// Filter the symbols of `range` with `design`, reading neighbouring symbols
/// of `y` across the block edges; samples outside `y` count as zero.
pub fn reverse_block(y: &[Complex64], range: std::ops::Range<usize>, design: &AllpassFirDesign) -> Result<Vec<Complex64>> {
    if range.end > y.len() {
        return param("block extends past the sequence");
    }
    let f = &design.filter;
    let d = f.nominal_delay as isize;
    let n = y.len() as isize;
    Ok(range
        .map(|m| {
            let m = m as isize;
            f.taps
                .iter()
                .enumerate()
                .filter_map(|(i, t)| {
                    let src = m - (i as isize - d);
                    (0..n).contains(&src).then(|| t * y[src as usize])
                })
                .sum()
        })
        .collect())
}

/// Apply one design per block; symbols outside the partition pass unchanged.
pub fn apply_designs(y: &[Complex64], partition: &BlockPartition, designs: &[AllpassFirDesign]) -> Result<Vec<Complex64>> {
    if designs.len() != partition.n_blocks {
        return param(format!("{} designs for {} blocks", designs.len(), partition.n_blocks));
    }
    let mut out = y.to_vec();
    let filtered: Vec<Vec<Complex64>> = partition
        .blocks()
        .collect::<Vec<_>>()
        .into_par_iter()
        .zip(designs.par_iter())
        .map(|(r, d)| reverse_block(y, r, d))
        .collect::<Result<_>>()?;
    for (r, v) in partition.blocks().zip(filtered) {
        out[r].copy_from_slice(&v);
    }
    Ok(out)
}

/// Design windows sliding by `block / per_block` across the partition. Each
/// is `len` symbols long (one block if 0), centred where a block-long window
/// would be and shifted to fit inside `0..seq_len`.
pub fn design_windows(partition: &BlockPartition, per_block: usize, len: usize, seq_len: usize) -> Vec<Range<usize>> {
    let b = partition.block_size;
    let len = if len == 0 { b } else { len.min(seq_len) };
    let hop = (b / per_block.max(1)).max(1);
    let end = partition.end();
    (0..)
        .map(|k| partition.start + k * hop)
        .take_while(|s| s + b <= end)
        .map(|s| {
            let lo = (s + b / 2).saturating_sub(len / 2).min(seq_len - len);
            lo..lo + len
        })
        .collect()
}

/// Each output symbol inside `span` blends the two designs whose window
/// centres surround it, weighted linearly by distance. Before the first and
/// after the last centre one design applies. Symbols outside `span` pass
/// unchanged.
pub fn apply_designs_interpolated(
    y: &[Complex64],
    span: Range<usize>,
    windows: &[Range<usize>],
    designs: &[AllpassFirDesign],
) -> Result<Vec<Complex64>> {
    if designs.len() != windows.len() || designs.is_empty() {
        return param(format!("{} designs for {} windows", designs.len(), windows.len()));
    }
    if span.end > y.len() {
        return param("span extends past the sequence");
    }
    let centre = |w: &Range<usize>| (w.start + w.end - 1) as f64 / 2.0;
    let centres: Vec<f64> = windows.iter().map(centre).collect();
    let n = windows.len();
    let pieces: Vec<(Range<usize>, Vec<Complex64>)> = (0..n)
        .into_par_iter()
        .map(|k| {
            let left = if k == 0 { span.start as f64 } else { centres[k - 1] };
            let right = if k + 1 == n { (span.end - 1) as f64 } else { centres[k + 1] };
            let lo = (left.ceil() as usize).max(span.start);
            let hi = ((right.floor() as usize) + 1).min(span.end);
            let c = centres[k];
            let v = reverse_block(y, lo..hi, &designs[k])?;
            let w = (lo..hi).zip(v).map(|(m, s)| {
                let m = m as f64;
                let wt = if m < c {
                    if k == 0 { 1.0 } else { (m - left) / (c - left) }
                } else if k + 1 == n {
                    1.0
                } else {
                    (right - m) / (right - c)
                };
                s * wt
            });
            Ok((lo..hi, w.collect()))
        })
        .collect::<Result<_>>()?;
    let mut out = y.to_vec();
    out[span.clone()].iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
    for (r, v) in pieces {
        for (o, s) in out[r].iter_mut().zip(v) {
            *o += s;
        }
    }
    Ok(out)
}

/// Apply designs made on `windows` as configured: blended, or one per block.
pub fn apply_reversal(
    y: &[Complex64],
    partition: &BlockPartition,
    windows: &[Range<usize>],
    designs: &[AllpassFirDesign],
    cfg: &AllpassConfig,
) -> Result<Vec<Complex64>> {
    if cfg.interpolate {
        apply_designs_interpolated(y, partition.start..partition.end(), windows, designs)
    } else {
        apply_designs(y, partition, designs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MitigationConfig {
    pub mode: ReversalMode,
    pub allpass: AllpassConfig,
    pub cpsd: CpsdConfig,
    /// Re-run phase search on the reversed output.
    pub refine_bps: Option<BpsConfig>,
}

impl MitigationConfig {
    pub fn new(mode: ReversalMode, n_taps: usize, rolloff: f64) -> Self {
        Self {
            mode,
            allpass: AllpassConfig {
                n_taps,
                ..AllpassConfig::default()
            },
            cpsd: CpsdConfig::for_rolloff(rolloff),
            refine_bps: None,
        }
    }
}

/// Timing offsets beyond this many UI exceed what symbol-rate reversal
/// handles well.
pub const DEGRADED_OFFSET_UI: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct MitigationResult {
    pub corrected: SymbolSequence,
    /// Windows the designs were estimated on.
    pub windows: Vec<Range<usize>>,
    pub designs: Vec<AllpassFirDesign>,
    pub before: Vec<BlockReport>,
    pub after: Vec<BlockReport>,
    /// Blocks whose estimated timing offset exceeds [`DEGRADED_OFFSET_UI`].
    pub degraded_blocks: Vec<usize>,
    /// Phase removed by the optional refinement pass.
    pub refine_phase: Option<PhaseTrajectory>,
}

impl MitigationResult {
    /// Carry another sequence (e.g. a noise-free component of the input)
    /// through the same rotations and filters.
    pub fn replay(&self, y: &[Complex64], partition: &BlockPartition, cfg: &AllpassConfig) -> Result<Vec<Complex64>> {
        let mut v = apply_reversal(y, partition, &self.windows, &self.designs, cfg)?;
        if let Some(p) = &self.refine_phase {
            v = derotate(&v, &p.phases);
        }
        Ok(v)
    }
}

fn derotate(y: &[Complex64], phases: &[f64]) -> Vec<Complex64> {
    y.iter().zip(phases).map(|(s, p)| s * Complex64::from_polar(1.0, -p)).collect()
}

/// Phase search on `y` with the estimate reduced to the principal interval;
/// the ambiguity is assumed already resolved.
fn refine(y: &SymbolSequence, b: &BpsConfig) -> Result<PhaseTrajectory> {
    let (_, mut phase) = bps(y, b)?;
    for p in &mut phase.phases {
        *p -= (*p / b.phase_range).round() * b.phase_range;
    }
    Ok(phase)
}

/// Design target for one block under `mode`.
pub fn reversal_target(report: &BlockReport, mode: ReversalMode) -> Result<FrequencyPhaseProfile> {
    Ok(match mode {
        ReversalMode::HigherOrder => report.phase_profile.clone(),
        ReversalMode::OptimizedTiming => {
            let fit = fit_polynomial(&report.phase_profile, 1)?;
            polynomial_target(&fit, &report.phase_profile)
        }
    })
}

/// Estimate, design and reverse block by block. Designs are computed in
/// parallel; the filtered output is assembled in block order.
pub fn mitigate(
    x: &SymbolSequence,
    y: &SymbolSequence,
    partition: &BlockPartition,
    cfg: &MitigationConfig,
) -> Result<MitigationResult> {
    if x.len() != y.len() {
        return param(format!("x has {} symbols, y has {}", x.len(), y.len()));
    }
    let before: Vec<BlockReport> = (0..partition.n_blocks)
        .into_par_iter()
        .map(|i| analyze_block(x, y, i, partition.block(i), &cfg.cpsd))
        .collect::<Result<_>>()?;
    let degraded_blocks = before
        .iter()
        .filter(|r| r.timing_offset_ui.abs() > DEGRADED_OFFSET_UI)
        .map(|r| r.block_index)
        .collect();
    let per_block = if cfg.allpass.interpolate { cfg.allpass.designs_per_block } else { 1 };
    let windows = design_windows(partition, per_block, cfg.allpass.design_len, y.len());
    let designs: Vec<AllpassFirDesign> = windows
        .par_iter()
        .enumerate()
        .map(|(k, w)| {
            let target = if per_block == 1 && windows[k] == partition.block(k) {
                reversal_target(&before[k], cfg.mode)?
            } else {
                reversal_target(&analyze_block(x, y, k, w.clone(), &cfg.cpsd)?, cfg.mode)?
            };
            design_allpass(&target, &cfg.allpass)
        })
        .collect::<Result<_>>()?;
    let mut corrected = y.with_symbols(apply_reversal(&y.symbols, partition, &windows, &designs, &cfg.allpass)?);
    let mut refine_phase = None;
    if let Some(b) = &cfg.refine_bps {
        let phase = refine(&corrected, b)?;
        corrected.symbols = derotate(&corrected.symbols, &phase.phases);
        refine_phase = Some(phase);
    }
    let after = (0..partition.n_blocks)
        .into_par_iter()
        .map(|i| analyze_block(x, &corrected, i, partition.block(i), &cfg.cpsd))
        .collect::<Result<_>>()?;
    Ok(MitigationResult {
        corrected,
        windows,
        designs,
        before,
        after,
        degraded_blocks,
        refine_phase,
    })
}
