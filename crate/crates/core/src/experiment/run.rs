//! Seeded end-to-end runs.
//!
//! The chain is linear in its input once the LO and BPS phases are fixed,
//! so the transmitted waveform and the AWGN are carried through it as two
//! separate components and summed where a receiver decision needs the
//! total. Blockwise penalties compare `y` against `x + noise component`,
//! which removes the noise realization from the comparison.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use super::config::{fnv1a, MitigationSettings, RunConfig};
use crate::analysis::{
    analyze_block, block_snr_db, blockwise_snr_slices, estimate_phase_error, BlockPartition, BlockReport,
    CpsdConfig, FrequencyPhaseProfile,
};
use crate::channel::{cd_response, cdc_response, complex_gaussian, noise_variance, NoiseReference};
use crate::dsp::{apply_frequency_response, ComplexSignal, FilterMode};
use crate::error::{Error, Result};
use crate::mitigation::{mitigate, MitigationConfig, MitigationResult, ReversalMode};
use crate::phase_noise::{generate_wiener_phase, rotate, PhaseTrajectory};
use crate::transceiver::{
    bps, generate_symbols, matched_filter_and_downsample, mc_demodulate, mc_modulate, merge_round_robin,
    sc_modulate, split_round_robin, BpsConfig, SymbolSequence,
};

/// Seeds of the independent random streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    pub data: u64,
    pub awgn: u64,
    pub lo_phase: u64,
}

impl SeedStreams {
    pub fn derive(master: u64) -> Self {
        Self {
            data: stream_seed(master, "data"),
            awgn: stream_seed(master, "awgn"),
            lo_phase: stream_seed(master, "lo_phase"),
        }
    }
}

/// `splitmix64(master ^ fnv1a(name))`.
pub fn stream_seed(master: u64, name: &str) -> u64 {
    let mut z = (master ^ fnv1a(name.as_bytes())).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: u64,
    pub seed: u64,
    pub version: &'static str,
}

impl Provenance {
    pub fn of(cfg: &RunConfig) -> Self {
        Self {
            config_hash: cfg.hash(),
            seed: cfg.master_seed,
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

/// One reversal mode applied to a run.
#[derive(Debug, Clone)]
pub struct MitigationOutcome {
    pub mode: ReversalMode,
    pub result: MitigationResult,
    pub snr_db: Vec<f64>,
    pub reference_snr_db: Vec<f64>,
    /// Phase error left on the signal component, per block.
    pub residual: Vec<FrequencyPhaseProfile>,
}

impl MitigationOutcome {
    pub fn penalty_db(&self) -> Vec<f64> {
        penalty(&self.reference_snr_db, &self.snr_db)
    }

    pub fn max_penalty_db(&self) -> f64 {
        max(&self.penalty_db())
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: RunConfig,
    pub provenance: Provenance,
    pub x: SymbolSequence,
    /// Phase-recovered received symbols.
    pub y: SymbolSequence,
    /// Transmitted-signal component of `y`; `y - y_signal` is the noise.
    pub y_signal: Vec<Complex64>,
    pub partition: BlockPartition,
    /// LO phase at the channel sample rate.
    pub lo: PhaseTrajectory,
    /// Carrier phase removed by BPS: one trajectory for SC, one per
    /// subcarrier at the subcarrier symbol rate for MC.
    pub carrier_phase: Vec<PhaseTrajectory>,
    pub block_snr_db: Vec<f64>,
    /// Block SNR of `x + noise component`, the same block without EEPN.
    pub reference_snr_db: Vec<f64>,
    /// Phase-error analysis per block; empty for MC.
    pub block_reports: Vec<BlockReport>,
    pub mitigation: Vec<MitigationOutcome>,
    pub overall_snr_db: f64,
}

impl RunResult {
    pub fn is_multi_carrier(&self) -> bool {
        self.carrier_phase.len() > 1
    }

    pub fn penalty_db(&self) -> Vec<f64> {
        penalty(&self.reference_snr_db, &self.block_snr_db)
    }

    pub fn max_penalty_db(&self) -> f64 {
        max(&self.penalty_db())
    }

    pub fn mitigation(&self, mode: ReversalMode) -> Option<&MitigationOutcome> {
        self.mitigation.iter().find(|m| m.mode == mode)
    }

    /// Start time of block `i` in ns.
    pub fn block_start_ns(&self, i: usize) -> f64 {
        self.partition.block(i).start as f64 / self.x.symbol_rate * 1e9
    }
}

fn penalty(reference: &[f64], snr: &[f64]) -> Vec<f64> {
    reference.iter().zip(snr).map(|(r, s)| r - s).collect()
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

struct Received {
    signal: ComplexSignal,
    noise: ComplexSignal,
    lo: PhaseTrajectory,
}

/// CD, AWGN, LO phase and CDC applied to both components.
fn channel(cfg: &RunConfig, tx: &ComplexSignal, seeds: &SeedStreams) -> Result<Received> {
    let fs = tx.sample_rate;
    let n = tx.len();
    let fiber = cfg.fiber;
    let cd = apply_frequency_response(tx, |g| cd_response(&fiber, g), FilterMode::Circular)?;
    // Noise power is referred to the symbol-rate bandwidth.
    let reference = NoiseReference::Explicit(cd.power() * cfg.shaping.sps as f64);
    let noise = if cfg.snr_db == f64::INFINITY {
        vec![Complex64::new(0.0, 0.0); n]
    } else {
        complex_gaussian(n, noise_variance(&cd, cfg.snr_db, reference)?, seeds.awgn)
    };
    let lo = generate_wiener_phase(n, cfg.linewidth, 1.0 / fs, seeds.lo_phase)?;
    let (signal, noise) = rayon::join(
        || compensate(&cfg.fiber, rotate(&cd.samples, &lo.phases), fs),
        || compensate(&cfg.fiber, rotate(&noise, &lo.phases), fs),
    );
    Ok(Received {
        signal: signal?,
        noise: noise?,
        lo,
    })
}

fn compensate(fiber: &crate::channel::FiberSpec, samples: Vec<Complex64>, fs: f64) -> Result<ComplexSignal> {
    let s = ComplexSignal::new(samples, fs)?;
    apply_frequency_response(&s, |g| cdc_response(fiber, g), FilterMode::Circular)
}

struct Recovered {
    total: Vec<Complex64>,
    signal: Vec<Complex64>,
    phase: PhaseTrajectory,
}

/// BPS on the total, the same rotation on the signal component, then the
/// rotational ambiguity resolved against `x` over `region`.
fn recover_phase(
    x: &[Complex64],
    signal: &SymbolSequence,
    noise: &[Complex64],
    bps_cfg: &BpsConfig,
    region: std::ops::Range<usize>,
) -> Result<Recovered> {
    let total = signal.with_symbols(signal.symbols.iter().zip(noise).map(|(s, n)| s + n).collect());
    let (_, mut phase) = bps(&total, bps_cfg)?;
    let c: Complex64 = total.symbols[region.clone()]
        .iter()
        .zip(&phase.phases[region.clone()])
        .zip(&x[region])
        .map(|((y, p), x)| y * Complex64::from_polar(1.0, -p) * x.conj())
        .sum();
    let k = (c.arg() / bps_cfg.phase_range).round();
    // Whole turns do not change the symbols; keep the trajectory near zero.
    let mean = phase.phases.iter().sum::<f64>() / phase.len() as f64 + k * bps_cfg.phase_range;
    let shift = k * bps_cfg.phase_range - 2.0 * PI * (mean / (2.0 * PI)).round();
    for p in &mut phase.phases {
        *p += shift;
    }
    let neg: Vec<f64> = phase.phases.iter().map(|p| -p).collect();
    Ok(Recovered {
        total: rotate(&total.symbols, &neg),
        signal: rotate(&signal.symbols, &neg),
        phase,
    })
}

fn check_mode(cfg: &RunConfig, want_mc: bool) -> Result<()> {
    cfg.validate()?;
    match (cfg.subcarriers.is_some(), want_mc) {
        (true, false) => Err(Error::Configuration("single-carrier run with subcarriers configured".into())),
        (false, true) => Err(Error::Configuration("multi-carrier run without subcarriers".into())),
        _ => Ok(()),
    }
}

fn transmit(cfg: &RunConfig, seeds: &SeedStreams) -> Result<SymbolSequence> {
    generate_symbols(cfg.n_symbols, cfg.constellation, cfg.symbol_rate, seeds.data)
}

/// Single-carrier run; `cfg.subcarriers` must be `None`.
pub fn run_sc(cfg: &RunConfig) -> Result<RunResult> {
    check_mode(cfg, false)?;
    let seeds = SeedStreams::derive(cfg.master_seed);
    let partition = cfg.partition()?;
    let x = transmit(cfg, &seeds)?;
    let tx = sc_modulate(&x, &cfg.shaping)?;
    let rx = channel(cfg, &tx, &seeds)?;
    let (ys, yn) = rayon::join(
        || matched_filter_and_downsample(&rx.signal, &cfg.shaping, 0, x.constellation),
        || matched_filter_and_downsample(&rx.noise, &cfg.shaping, 0, x.constellation),
    );
    let region = partition.start..partition.end();
    let rec = recover_phase(&x.symbols, &ys?, &yn?.symbols, &cfg.bps, region)?;
    let y = x.with_symbols(rec.total);
    analyze_recovered(cfg, x, y, rec.signal, rx.lo, vec![rec.phase])
}

/// Block analysis and, if configured, both reversal modes on phase-recovered
/// single-carrier symbols. Also the entry point for stored symbols, where
/// `lo` and `carrier_phase` may be empty.
pub fn analyze_recovered(
    cfg: &RunConfig,
    x: SymbolSequence,
    y: SymbolSequence,
    y_signal: Vec<Complex64>,
    lo: PhaseTrajectory,
    carrier_phase: Vec<PhaseTrajectory>,
) -> Result<RunResult> {
    let partition = cfg.partition()?;
    if x.len() != y.len() || y_signal.len() != x.len() || partition.end() > x.len() {
        return Err(Error::Parameter("symbol sequences do not match the configured partition".into()));
    }
    let block_reports = (0..partition.n_blocks)
        .into_par_iter()
        .map(|i| analyze_block(&x, &y, i, partition.block(i), &cfg.cpsd))
        .collect::<Result<Vec<_>>>()?;
    let mitigation = match &cfg.mitigation {
        Some(m) => [ReversalMode::OptimizedTiming, ReversalMode::HigherOrder]
            .into_par_iter()
            .map(|mode| reverse_and_measure(&x, &y, &y_signal, &partition, m, &cfg.cpsd, &cfg.bps, mode))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    finish(cfg, x, y, y_signal, partition, lo, carrier_phase, block_reports, mitigation)
}

/// Multi-carrier run; uses the same random streams as [`run_sc`] on the
/// same seed, so both see identical symbols, noise and LO phase.
pub fn run_mc(cfg: &RunConfig) -> Result<RunResult> {
    check_mode(cfg, true)?;
    let mc = cfg.mc_config().expect("checked above");
    let seeds = SeedStreams::derive(cfg.master_seed);
    let partition = cfg.partition()?;
    let x = transmit(cfg, &seeds)?;
    let tx = mc_modulate(&x, &mc, &cfg.shaping)?;
    let rx = channel(cfg, &tx, &seeds)?;
    let (ys, yn) = rayon::join(
        || mc_demodulate(&rx.signal, &mc, &cfg.shaping, x.constellation),
        || mc_demodulate(&rx.noise, &mc, &cfg.shaping, x.constellation),
    );
    let (ys, yn) = (ys?, yn?);
    let n = mc.n_subcarriers;
    let mc_bps = cfg.mc_bps(n);
    let xs = split_round_robin(&x.symbols, n);
    let region = partition.start.div_ceil(n)..partition.end() / n;
    let recovered = (0..n)
        .into_par_iter()
        .map(|i| recover_phase(&xs[i], &ys[i], &yn[i].symbols, &mc_bps, region.clone()))
        .collect::<Result<Vec<_>>>()?;
    let totals: Vec<Vec<Complex64>> = recovered.iter().map(|r| r.total.clone()).collect();
    let signals: Vec<Vec<Complex64>> = recovered.iter().map(|r| r.signal.clone()).collect();
    let y = x.with_symbols(merge_round_robin(&totals));
    let phases = recovered.into_iter().map(|r| r.phase).collect();
    finish(cfg, x, y, merge_round_robin(&signals), partition, rx.lo, phases, Vec::new(), Vec::new())
}

#[allow(clippy::too_many_arguments)]
fn finish(
    cfg: &RunConfig,
    x: SymbolSequence,
    y: SymbolSequence,
    y_signal: Vec<Complex64>,
    partition: BlockPartition,
    lo: PhaseTrajectory,
    carrier_phase: Vec<PhaseTrajectory>,
    block_reports: Vec<BlockReport>,
    mitigation: Vec<MitigationOutcome>,
) -> Result<RunResult> {
    let snr = blockwise_snr_slices(&x.symbols, &y.symbols, &partition)?;
    let reference_snr_db = reference_snr(&x.symbols, &y.symbols, &y_signal, &partition)?;
    let region = partition.start..partition.end();
    let overall_snr_db = block_snr_db(&x.symbols[region.clone()], &y.symbols[region]);
    Ok(RunResult {
        config: cfg.clone(),
        provenance: Provenance::of(cfg),
        x,
        y,
        y_signal,
        partition,
        lo,
        carrier_phase,
        block_snr_db: snr,
        reference_snr_db,
        block_reports,
        mitigation,
        overall_snr_db,
    })
}

/// Block SNR of `x + (y - y_signal)`.
pub fn reference_snr(
    x: &[Complex64],
    y: &[Complex64],
    y_signal: &[Complex64],
    partition: &BlockPartition,
) -> Result<Vec<f64>> {
    if y.len() != x.len() || y_signal.len() != x.len() {
        return Err(Error::Parameter("x, y and the signal component differ in length".into()));
    }
    let clean: Vec<Complex64> = x.iter().zip(y).zip(y_signal).map(|((x, y), s)| x + (y - s)).collect();
    blockwise_snr_slices(x, &clean, partition)
}

/// Reverse the per-block phase error of `y` and measure the result, with
/// the signal component passed through the same filters.
#[allow(clippy::too_many_arguments)]
pub fn reverse_and_measure(
    x: &SymbolSequence,
    y: &SymbolSequence,
    y_signal: &[Complex64],
    partition: &BlockPartition,
    settings: &MitigationSettings,
    cpsd: &CpsdConfig,
    bps_cfg: &BpsConfig,
    mode: ReversalMode,
) -> Result<MitigationOutcome> {
    let mcfg = MitigationConfig {
        mode,
        allpass: settings.allpass,
        cpsd: *cpsd,
        refine_bps: settings.refine_bps.then_some(*bps_cfg),
    };
    let result = mitigate(x, y, partition, &mcfg)?;
    let signal = result.replay(y_signal, partition, &settings.allpass)?;
    let snr_db = blockwise_snr_slices(&x.symbols, &result.corrected.symbols, partition)?;
    let reference_snr_db = reference_snr(&x.symbols, &result.corrected.symbols, &signal, partition)?;
    let signal = x.with_symbols(signal);
    let residual = (0..partition.n_blocks)
        .into_par_iter()
        .map(|i| estimate_phase_error(x, &signal, partition.block(i), cpsd))
        .collect::<Result<Vec<_>>>()?;
    Ok(MitigationOutcome {
        mode,
        result,
        snr_db,
        reference_snr_db,
        residual,
    })
}

/// SC and MC runs on the same seed.
#[derive(Debug, Clone)]
pub struct PairedRun {
    pub sc: RunResult,
    pub mc: RunResult,
}

pub fn run_paired(cfg: &RunConfig) -> Result<PairedRun> {
    if cfg.subcarriers.is_none() {
        return Err(Error::Configuration("paired run needs mc.n_subcarriers > 0".into()));
    }
    let mc_cfg = RunConfig {
        mitigation: None,
        ..cfg.clone()
    };
    let (sc, mc) = rayon::join(|| run_sc(&cfg.single_carrier()), || run_mc(&mc_cfg));
    Ok(PairedRun { sc: sc?, mc: mc? })
}

/// Subcarrier phases against the SC phase-error profile of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct SubcarrierComparison {
    pub block_index: usize,
    pub centers: Vec<f64>,
    /// Mean MC carrier phase over the block, minus its subcarrier average.
    pub mc_phase: Vec<f64>,
    /// SC profile averaged over each subcarrier band, minus its average.
    pub sc_phase: Vec<f64>,
}

impl SubcarrierComparison {
    /// RMS of the differences, taken modulo whole turns about their
    /// circular mean.
    pub fn rms_difference(&self) -> f64 {
        let d: Vec<f64> = self.mc_phase.iter().zip(&self.sc_phase).map(|(a, b)| a - b).collect();
        let centre = d.iter().map(|&v| Complex64::from_polar(1.0, v)).sum::<Complex64>().arg();
        let sq: f64 = d.iter().map(|&v| wrap(v - centre).powi(2)).sum();
        (sq / d.len() as f64).sqrt()
    }
}

impl PairedRun {
    pub fn compare_subcarriers(&self, block: usize) -> Result<SubcarrierComparison> {
        let mc = self.mc.config.mc_config().expect("paired MC run");
        let report = self
            .sc
            .block_reports
            .get(block)
            .ok_or_else(|| Error::Parameter(format!("no block {block}")))?;
        let n = mc.n_subcarriers;
        let r = self.sc.partition.block(block);
        let sub = r.start / n..r.end / n;
        let half = mc.per_subcarrier_rate / 2.0;
        let centers = mc.centers();
        let mut mc_phase = Vec::with_capacity(n);
        let mut sc_phase = Vec::with_capacity(n);
        for (i, &c) in centers.iter().enumerate() {
            let p = &self.mc.carrier_phase[i].phases[sub.clone()];
            mc_phase.push(p.iter().sum::<f64>() / p.len() as f64);
            let s = report.phase_profile.band_average(c, half).ok_or_else(|| {
                Error::Estimation(format!("no profile bins within subcarrier {i}"))
            })?;
            sc_phase.push(s);
        }
        for v in [&mut mc_phase, &mut sc_phase] {
            let m = v.iter().sum::<f64>() / n as f64;
            v.iter_mut().for_each(|p| *p -= m);
        }
        Ok(SubcarrierComparison {
            block_index: block,
            centers,
            mc_phase,
            sc_phase,
        })
    }
}

/// Wrap to `(-pi, pi]`.
pub fn wrap(p: f64) -> f64 {
    let w = p - 2.0 * PI * (p / (2.0 * PI)).round();
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}
