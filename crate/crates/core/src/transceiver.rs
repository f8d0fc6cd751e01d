//! Transmitter and receiver DSP around the fiber channel: symbol mapping,
//! RRC pulse shaping for single-carrier (SC) and digitally multiplexed
//! multi-carrier (MC) signals, matched filtering, and blind phase search.
//!
//! All shaping and matched filtering is circular over the frame with the
//! RRC center tap as time zero, so symbol `k` of an SC frame sits exactly at
//! sample `k * sps` and no delay bookkeeping is needed downstream.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::dsp::{rrc_taps, ComplexSignal, FirFilter};
use crate::error::{param, Error, Result};
use crate::phase_noise::PhaseTrajectory;

/// Square QAM constellations normalized to unit average energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Constellation {
    Qpsk,
    Qam16,
    Qam64,
}

impl Constellation {
    pub fn order(self) -> usize {
        match self {
            Constellation::Qpsk => 4,
            Constellation::Qam16 => 16,
            Constellation::Qam64 => 64,
        }
    }

    fn levels(self) -> usize {
        match self {
            Constellation::Qpsk => 2,
            Constellation::Qam16 => 4,
            Constellation::Qam64 => 8,
        }
    }

    /// Half the distance between adjacent levels.
    fn scale(self) -> f64 {
        let m = self.order() as f64;
        (3.0 / (2.0 * (m - 1.0))).sqrt()
    }

    fn level(self, i: usize) -> f64 {
        (2.0 * i as f64 - (self.levels() - 1) as f64) * self.scale()
    }

    pub fn points(self) -> Vec<Complex64> {
        let l = self.levels();
        (0..l)
            .flat_map(|i| (0..l).map(move |q| Complex64::new(self.level(i), self.level(q))))
            .collect()
    }

    fn slice_axis(self, v: f64) -> f64 {
        let l = self.levels();
        let idx = ((v / self.scale() + (l - 1) as f64) / 2.0).round();
        let idx = idx.clamp(0.0, (l - 1) as f64) as usize;
        self.level(idx)
    }

    /// Nearest constellation point.
    pub fn slice(self, y: Complex64) -> Complex64 {
        Complex64::new(self.slice_axis(y.re), self.slice_axis(y.im))
    }

    pub fn is_member(self, y: Complex64) -> bool {
        (self.slice(y) - y).norm() < 1e-12
    }
}

impl FromStr for Constellation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qpsk" | "4qam" | "4-qam" => Ok(Constellation::Qpsk),
            "16qam" | "16-qam" | "qam16" => Ok(Constellation::Qam16),
            "64qam" | "64-qam" | "qam64" => Ok(Constellation::Qam64),
            other => param(format!("unknown constellation {other:?}")),
        }
    }
}

impl fmt::Display for Constellation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Constellation::Qpsk => "qpsk",
            Constellation::Qam16 => "16qam",
            Constellation::Qam64 => "64qam",
        })
    }
}

/// Symbol-rate sequence. On the transmit side every entry is a
/// constellation point; on the receive side the tag names the decision grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolSequence {
    pub symbols: Vec<Complex64>,
    pub symbol_rate: f64,
    pub constellation: Constellation,
}

impl SymbolSequence {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn with_symbols(&self, symbols: Vec<Complex64>) -> Self {
        Self {
            symbols,
            symbol_rate: self.symbol_rate,
            constellation: self.constellation,
        }
    }
}

/// I.i.d. uniform constellation symbols.
pub fn generate_symbols(
    n: usize,
    constellation: Constellation,
    symbol_rate: f64,
    seed: u64,
) -> Result<SymbolSequence> {
    if n == 0 {
        return param("need at least one symbol");
    }
    if !(symbol_rate > 0.0) {
        return param(format!("symbol rate must be positive, got {symbol_rate}"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let l = constellation.levels();
    let symbols = (0..n)
        .map(|_| {
            let i = rng.random_range(0..l);
            let q = rng.random_range(0..l);
            Complex64::new(constellation.level(i), constellation.level(q))
        })
        .collect();
    Ok(SymbolSequence {
        symbols,
        symbol_rate,
        constellation,
    })
}

/// RRC pulse parameters shared by transmitter and matched filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseShaping {
    pub rolloff: f64,
    pub span_symbols: usize,
    pub sps: usize,
}

impl Default for PulseShaping {
    fn default() -> Self {
        Self {
            rolloff: 0.05,
            span_symbols: 64,
            sps: 2,
        }
    }
}

impl PulseShaping {
    fn filter(&self, sps: usize) -> Result<FirFilter> {
        rrc_taps(self.rolloff, self.span_symbols, sps)
    }
}

fn upsample(symbols: &[Complex64], sps: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); symbols.len() * sps];
    for (k, &s) in symbols.iter().enumerate() {
        out[k * sps] = s;
    }
    out
}

fn shape(symbols: &[Complex64], shaping: &PulseShaping, sps: usize) -> Result<Vec<Complex64>> {
    let fir = shaping.filter(sps)?;
    if symbols.len() * sps < fir.len() {
        return param(format!(
            "{} symbols are shorter than the {}-symbol pulse span",
            symbols.len(),
            shaping.span_symbols
        ));
    }
    fir.apply_circular(&upsample(symbols, sps))
}

/// RRC-shaped SC waveform at `sps * symbol_rate`.
pub fn sc_modulate(symbols: &SymbolSequence, shaping: &PulseShaping) -> Result<ComplexSignal> {
    let samples = shape(&symbols.symbols, shaping, shaping.sps)?;
    ComplexSignal::new(samples, symbols.symbol_rate * shaping.sps as f64)
}

fn matched_filter(samples: &[Complex64], shaping: &PulseShaping, sps: usize, timing_phase: usize) -> Result<Vec<Complex64>> {
    if timing_phase >= sps {
        return param(format!("timing phase {timing_phase} must be below sps {sps}"));
    }
    if samples.len() % sps != 0 {
        return param(format!("{} samples is not a whole number of {sps}-sample symbols", samples.len()));
    }
    let fir = shaping.filter(sps)?;
    // RRC taps are real and even, so the matched filter is the same filter.
    let filtered = fir.apply_circular(samples)?;
    Ok(filtered.into_iter().skip(timing_phase).step_by(sps).collect())
}

/// RRC matched filter followed by decimation to one sample per symbol,
/// starting at `timing_phase`.
pub fn matched_filter_and_downsample(
    signal: &ComplexSignal,
    shaping: &PulseShaping,
    timing_phase: usize,
    constellation: Constellation,
) -> Result<SymbolSequence> {
    signal.ensure_non_empty()?;
    let symbols = matched_filter(&signal.samples, shaping, shaping.sps, timing_phase)?;
    Ok(SymbolSequence {
        symbols,
        symbol_rate: signal.sample_rate / shaping.sps as f64,
        constellation,
    })
}

/// Digital subcarrier multiplexing layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub n_subcarriers: usize,
    pub per_subcarrier_rate: f64,
    pub subcarrier_spacing: f64,
}

impl McConfig {
    /// Contiguous subcarriers carrying `aggregate_rate` in total, spaced by
    /// their occupied bandwidth `(1 + rolloff) * rate`.
    pub fn contiguous(n_subcarriers: usize, aggregate_rate: f64, rolloff: f64) -> Self {
        let per = aggregate_rate / n_subcarriers as f64;
        Self {
            n_subcarriers,
            per_subcarrier_rate: per,
            subcarrier_spacing: (1.0 + rolloff) * per,
        }
    }

    pub fn center(&self, i: usize) -> f64 {
        (i as f64 - (self.n_subcarriers as f64 - 1.0) / 2.0) * self.subcarrier_spacing
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_subcarriers).map(|i| self.center(i)).collect()
    }

    pub fn aggregate_rate(&self) -> f64 {
        self.per_subcarrier_rate * self.n_subcarriers as f64
    }

    /// Two-sided bandwidth from the lowest to the highest spectral edge.
    pub fn occupied_bandwidth(&self, rolloff: f64) -> f64 {
        (self.n_subcarriers as f64 - 1.0) * self.subcarrier_spacing
            + (1.0 + rolloff) * self.per_subcarrier_rate
    }

    pub fn validate(&self, rolloff: f64, sample_rate: f64) -> Result<usize> {
        if self.n_subcarriers == 0 {
            return param("need at least one subcarrier");
        }
        if !(self.per_subcarrier_rate > 0.0 && self.subcarrier_spacing >= 0.0) {
            return param("subcarrier rate must be positive and spacing non-negative");
        }
        let edge = self.center(self.n_subcarriers - 1).abs() + (1.0 + rolloff) * self.per_subcarrier_rate / 2.0;
        if edge > sample_rate / 2.0 * (1.0 + 1e-12) {
            return Err(Error::Configuration(format!(
                "subcarriers reach {:.3} GHz, beyond the {:.3} GHz Nyquist limit",
                edge / 1e9,
                sample_rate / 2e9
            )));
        }
        let ratio = sample_rate / self.per_subcarrier_rate;
        let sps = ratio.round();
        if (ratio - sps).abs() > 1e-9 * ratio || sps < 1.0 {
            return Err(Error::Configuration(format!(
                "sample rate {sample_rate} is not an integer multiple of the subcarrier rate {}",
                self.per_subcarrier_rate
            )));
        }
        Ok(sps as usize)
    }
}

fn mix(samples: &mut [Complex64], freq: f64, sample_rate: f64) {
    if freq == 0.0 {
        return;
    }
    let w = 2.0 * PI * freq / sample_rate;
    for (n, s) in samples.iter_mut().enumerate() {
        *s *= Complex64::from_polar(1.0, w * n as f64);
    }
}

/// Split `symbols` round-robin: stream `i` takes indices `i, i + n, ...`.
pub fn split_round_robin(symbols: &[Complex64], n: usize) -> Vec<Vec<Complex64>> {
    (0..n)
        .map(|i| symbols.iter().skip(i).step_by(n).copied().collect())
        .collect()
}

/// Inverse of [`split_round_robin`].
pub fn merge_round_robin(streams: &[Vec<Complex64>]) -> Vec<Complex64> {
    let len = streams.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(len);
    for k in 0..streams.first().map_or(0, Vec::len) {
        for s in streams {
            out.push(s[k]);
        }
    }
    debug_assert_eq!(out.len(), len, "streams must be equally long");
    out
}

/// Multi-carrier waveform: each round-robin stream is RRC shaped at the
/// subcarrier rate, shifted to its center frequency and summed. The
/// output sample rate is `shaping.sps * aggregate symbol rate`.
pub fn mc_modulate(
    symbols: &SymbolSequence,
    cfg: &McConfig,
    shaping: &PulseShaping,
) -> Result<ComplexSignal> {
    let n = cfg.n_subcarriers;
    if n == 0 || symbols.len() % n != 0 {
        return param(format!("{} symbols do not split over {n} subcarriers", symbols.len()));
    }
    let fs = symbols.symbol_rate * shaping.sps as f64;
    if (cfg.aggregate_rate() - symbols.symbol_rate).abs() > 1e-9 * symbols.symbol_rate {
        return param("subcarrier rates do not add up to the symbol rate");
    }
    let sub_sps = cfg.validate(shaping.rolloff, fs)?;
    let streams = split_round_robin(&symbols.symbols, n);
    let shaped: Vec<Vec<Complex64>> = streams
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut w = shape(s, shaping, sub_sps)?;
            mix(&mut w, cfg.center(i), fs);
            Ok(w)
        })
        .collect::<Result<_>>()?;
    let mut out = vec![Complex64::new(0.0, 0.0); symbols.len() * shaping.sps];
    for w in &shaped {
        for (o, v) in out.iter_mut().zip(w) {
            *o += v;
        }
    }
    ComplexSignal::new(out, fs)
}

/// Per-subcarrier down-conversion, matched filter and symbol-rate sampling.
/// Output order matches the split in [`mc_modulate`].
pub fn mc_demodulate(
    signal: &ComplexSignal,
    cfg: &McConfig,
    shaping: &PulseShaping,
    constellation: Constellation,
) -> Result<Vec<SymbolSequence>> {
    signal.ensure_non_empty()?;
    let fs = signal.sample_rate;
    let sub_sps = cfg.validate(shaping.rolloff, fs)?;
    (0..cfg.n_subcarriers)
        .into_par_iter()
        .map(|i| {
            let mut w = signal.samples.clone();
            mix(&mut w, -cfg.center(i), fs);
            let symbols = matched_filter(&w, shaping, sub_sps, 0)?;
            Ok(SymbolSequence {
                symbols,
                symbol_rate: cfg.per_subcarrier_rate,
                constellation,
            })
        })
        .collect()
}

/// Blind phase search parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpsConfig {
    pub n_test_phases: usize,
    pub window_symbols: usize,
    /// Width of the searched interval, centered on zero. Also the period of
    /// the constellation's rotational ambiguity used for unwrapping.
    pub phase_range: f64,
}

impl Default for BpsConfig {
    fn default() -> Self {
        Self {
            n_test_phases: 64,
            window_symbols: 65,
            phase_range: PI / 2.0,
        }
    }
}

impl BpsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_test_phases < 2 {
            return param("BPS needs at least two test phases");
        }
        if self.window_symbols < 3 || self.window_symbols % 2 == 0 {
            return param(format!("BPS window must be odd and >= 3, got {}", self.window_symbols));
        }
        if !(self.phase_range > 0.0 && self.phase_range.is_finite()) {
            return param("BPS phase range must be positive");
        }
        Ok(())
    }

    pub fn test_phase(&self, b: usize) -> f64 {
        -self.phase_range / 2.0 + b as f64 * self.phase_range / self.n_test_phases as f64
    }

    pub fn quantization_step(&self) -> f64 {
        self.phase_range / self.n_test_phases as f64
    }
}

const BPS_CHUNK: usize = 8192;

/// Blind phase search. Each symbol takes the test phase minimizing the
/// centered-window sum of squared decision distances; the raw estimates are
/// unwrapped in steps of `phase_range` and the input is derotated by them.
pub fn bps(symbols: &SymbolSequence, cfg: &BpsConfig) -> Result<(SymbolSequence, PhaseTrajectory)> {
    cfg.validate()?;
    let n = symbols.len();
    if cfg.window_symbols > n {
        return param(format!("BPS window {} exceeds {n} symbols", cfg.window_symbols));
    }
    let y = &symbols.symbols;
    let c = symbols.constellation;
    let half = cfg.window_symbols / 2;
    let rotations: Vec<Complex64> = (0..cfg.n_test_phases)
        .map(|b| Complex64::from_polar(1.0, -cfg.test_phase(b)))
        .collect();

    let raw: Vec<usize> = (0..n.div_ceil(BPS_CHUNK))
        .into_par_iter()
        .flat_map_iter(|chunk| {
            let start = chunk * BPS_CHUNK;
            let end = (start + BPS_CHUNK).min(n);
            let lo = start.saturating_sub(half);
            let hi = (end + half).min(n);
            let mut best = vec![f64::INFINITY; end - start];
            let mut best_idx = vec![0usize; end - start];
            let mut prefix = vec![0.0; hi - lo + 1];
            for (b, rot) in rotations.iter().enumerate() {
                for (i, &v) in y[lo..hi].iter().enumerate() {
                    let r = v * rot;
                    prefix[i + 1] = prefix[i] + (r - c.slice(r)).norm_sqr();
                }
                for k in start..end {
                    let a = k.saturating_sub(half).max(lo) - lo;
                    let e = (k + half + 1).min(hi) - lo;
                    let cost = prefix[e] - prefix[a];
                    if cost < best[k - start] {
                        best[k - start] = cost;
                        best_idx[k - start] = b;
                    }
                }
            }
            best_idx
        })
        .collect();

    let period = cfg.phase_range;
    let mut phases = Vec::with_capacity(n);
    let mut prev = cfg.test_phase(raw[0]);
    phases.push(prev);
    for &b in &raw[1..] {
        let p = cfg.test_phase(b);
        let unwrapped = p + period * ((prev - p) / period).round();
        phases.push(unwrapped);
        prev = unwrapped;
    }
    let corrected = y
        .iter()
        .zip(&phases)
        .map(|(v, &p)| v * Complex64::from_polar(1.0, -p))
        .collect();
    Ok((
        symbols.with_symbols(corrected),
        PhaseTrajectory {
            phases,
            sample_period: 1.0 / symbols.symbol_rate,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::energy;

    fn mse(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() / a.len() as f64
    }

    #[test]
    fn constellation_energy_and_membership() {
        for c in [Constellation::Qpsk, Constellation::Qam16, Constellation::Qam64] {
            let pts = c.points();
            assert_eq!(pts.len(), c.order());
            let e = energy(&pts) / pts.len() as f64;
            assert!((e - 1.0).abs() < 1e-12, "{c}: {e}");
            assert!(pts.iter().all(|&p| c.is_member(p)));
        }
        let corner = Constellation::Qam16.points().iter().map(|p| p.norm()).fold(0.0, f64::max);
        assert!((corner - (9.0f64 / 5.0).sqrt()).abs() < 1e-12);
        assert!((corner - 1.3416).abs() < 1e-4);
    }

    #[test]
    fn qpsk_symbols_are_unit_modulus() {
        let s = generate_symbols(4, Constellation::Qpsk, 1.0, 0).unwrap();
        assert!(s.symbols.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        let many = generate_symbols(400, Constellation::Qpsk, 1.0, 0).unwrap();
        for p in Constellation::Qpsk.points() {
            assert!(many.symbols.contains(&p));
        }
    }

    #[test]
    fn generated_symbols_are_seeded_and_normalized() {
        let a = generate_symbols(20_000, Constellation::Qam16, 180e9, 42).unwrap();
        let b = generate_symbols(20_000, Constellation::Qam16, 180e9, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.symbols.iter().all(|&v| Constellation::Qam16.is_member(v)));
        let e = energy(&a.symbols) / a.len() as f64;
        assert!((e - 1.0).abs() < 3e-2, "{e}");
        assert!(generate_symbols(0, Constellation::Qam16, 1.0, 0).is_err());
        assert!("8psk".parse::<Constellation>().is_err());
        assert_eq!("16QAM".parse::<Constellation>().unwrap(), Constellation::Qam16);
    }

    #[test]
    fn single_symbol_gives_rrc_impulse_response() {
        let shaping = PulseShaping::default();
        let n = 256;
        let mut sym = vec![Complex64::new(0.0, 0.0); n];
        sym[100] = Complex64::new(1.0, 0.0);
        let seq = SymbolSequence { symbols: sym, symbol_rate: 1.0, constellation: Constellation::Qpsk };
        let out = sc_modulate(&seq, &shaping).unwrap();
        let taps = rrc_taps(0.05, 64, 2).unwrap();
        let start = 200 - taps.nominal_delay;
        for (i, t) in taps.taps.iter().enumerate() {
            assert!((out.samples[start + i] - t).norm() < 1e-12);
        }
        let outside: f64 = out.samples[..start].iter().map(|v| v.norm()).sum();
        assert!(outside < 1e-10);
    }

    #[test]
    fn back_to_back_sc_recovers_symbols() {
        let shaping = PulseShaping::default();
        let x = generate_symbols(1 << 14, Constellation::Qam16, 180e9, 1).unwrap();
        let s = sc_modulate(&x, &shaping).unwrap();
        assert_eq!(s.sample_rate, 360e9);
        // Unit-energy pulse at 2 sps: half the symbol power per sample.
        let p = s.power() * 2.0 / (energy(&x.symbols) / x.len() as f64);
        assert!((p - 1.0).abs() < 0.01, "{p}");
        let y = matched_filter_and_downsample(&s, &shaping, 0, x.constellation).unwrap();
        assert!(mse(&y.symbols, &x.symbols) < 1e-5, "{}", mse(&y.symbols, &x.symbols));
    }

    #[test]
    fn wrong_timing_phase_costs_over_10_db() {
        let shaping = PulseShaping::default();
        let x = generate_symbols(1 << 13, Constellation::Qam16, 1.0, 2).unwrap();
        let s = sc_modulate(&x, &shaping).unwrap();
        let y = matched_filter_and_downsample(&s, &shaping, 1, x.constellation).unwrap();
        // Half-symbol offset; compare against the best single-symbol alignment.
        let e = mse(&y.symbols, &x.symbols);
        assert!(10.0 * (1.0 / e).log10() < 10.0, "{e}");
    }

    #[test]
    fn linear_phase_channel_equals_shifted_sampling() {
        use crate::dsp::{apply_frequency_response, FilterMode};
        let shaping = PulseShaping::default();
        let x = generate_symbols(4096, Constellation::Qam16, 2.0, 3).unwrap();
        let s = sc_modulate(&x, &shaping).unwrap();
        // One sample (half a symbol) of delay.
        let tau = 1.0 / s.sample_rate;
        let d = apply_frequency_response(
            &s,
            |g| g.frequencies.iter().map(|f| Complex64::from_polar(1.0, -2.0 * PI * f * tau)).collect(),
            FilterMode::Circular,
        )
        .unwrap();
        let a = matched_filter_and_downsample(&d, &shaping, 1, x.constellation).unwrap();
        let b = matched_filter_and_downsample(&s, &shaping, 0, x.constellation).unwrap();
        assert!(mse(&a.symbols, &b.symbols) < 1e-20);
    }

    #[test]
    fn mc_config_arithmetic() {
        let cfg = McConfig::contiguous(8, 180e9, 0.05);
        assert_eq!(cfg.per_subcarrier_rate, 22.5e9);
        assert!((cfg.subcarrier_spacing - 23.625e9).abs() < 1.0);
        assert!((cfg.occupied_bandwidth(0.05) - 189e9).abs() < 1e3);
        assert!((cfg.occupied_bandwidth(0.05) - 1.05 * 180e9).abs() < 1e3);
        assert!((cfg.aggregate_rate() - 180e9).abs() < 1e-3);
        assert_eq!(cfg.validate(0.05, 360e9).unwrap(), 16);
        assert!((cfg.center(0) + cfg.center(7)).abs() < 1e-3);
        let wide = McConfig { subcarrier_spacing: 50e9, ..cfg };
        assert!(matches!(wide.validate(0.05, 360e9), Err(Error::Configuration(_))));
    }

    #[test]
    fn round_robin_round_trips() {
        let v: Vec<Complex64> = (0..24).map(|k| Complex64::new(k as f64, 0.0)).collect();
        let s = split_round_robin(&v, 8);
        assert_eq!(s[1][..3], [v[1], v[9], v[17]]);
        assert_eq!(merge_round_robin(&s), v);
    }

    #[test]
    fn single_subcarrier_equals_sc() {
        let shaping = PulseShaping::default();
        let x = generate_symbols(2048, Constellation::Qam16, 180e9, 4).unwrap();
        let cfg = McConfig::contiguous(1, 180e9, 0.05);
        let mc = mc_modulate(&x, &cfg, &shaping).unwrap();
        let sc = sc_modulate(&x, &shaping).unwrap();
        assert_eq!(mc.sample_rate, sc.sample_rate);
        assert!(mse(&mc.samples, &sc.samples) < 1e-28);
    }

    #[test]
    fn mc_back_to_back_has_low_ici() {
        let shaping = PulseShaping::default();
        let x = generate_symbols(1 << 15, Constellation::Qam16, 180e9, 5).unwrap();
        let cfg = McConfig::contiguous(8, 180e9, 0.05);
        let s = mc_modulate(&x, &cfg, &shaping).unwrap();
        let subs = mc_demodulate(&s, &cfg, &shaping, x.constellation).unwrap();
        let tx = split_round_robin(&x.symbols, 8);
        for (i, (rx, tx)) in subs.iter().zip(&tx).enumerate() {
            let e = mse(&rx.symbols, tx);
            let ici_db = 10.0 * e.log10();
            assert!(ici_db < -30.0, "subcarrier {i}: {ici_db} dB");
            assert!(e < 1e-3);
        }
        let merged = merge_round_robin(&subs.into_iter().map(|s| s.symbols).collect::<Vec<_>>());
        assert!(mse(&merged, &x.symbols) < 1e-3);
    }

    #[test]
    fn mc_rejects_indivisible_input() {
        let x = generate_symbols(1001, Constellation::Qam16, 180e9, 4).unwrap();
        let cfg = McConfig::contiguous(8, 180e9, 0.05);
        assert!(mc_modulate(&x, &cfg, &PulseShaping::default()).is_err());
    }

    #[test]
    fn bps_recovers_constant_rotation() {
        let x = generate_symbols(4000, Constellation::Qam16, 1.0, 6).unwrap();
        let cfg = BpsConfig::default();
        let rot = Complex64::from_polar(1.0, 0.1);
        let y = x.with_symbols(x.symbols.iter().map(|v| v * rot).collect());
        let (corrected, est) = bps(&y, &cfg).unwrap();
        let q = cfg.quantization_step();
        assert!(est.phases.iter().all(|p| (p - 0.1).abs() <= q));
        let first = est.phases[0];
        assert!(est.phases.iter().all(|&p| p == first), "constant offset must give a constant estimate");
        assert!(mse(&corrected.symbols, &x.symbols) < (q * q));

        let (_, zero) = bps(&x, &cfg).unwrap();
        assert!(zero.phases.iter().all(|p| p.abs() <= q / 2.0 + 1e-12));
    }

    #[test]
    fn bps_unwraps_across_the_ambiguity() {
        // A slow ramp through several multiples of pi/2 must not jump.
        let x = generate_symbols(20_000, Constellation::Qpsk, 1.0, 7).unwrap();
        let y = x.with_symbols(
            x.symbols.iter().enumerate().map(|(k, v)| v * Complex64::from_polar(1.0, 4.0 * k as f64 / 20_000.0)).collect(),
        );
        let (_, est) = bps(&y, &BpsConfig::default()).unwrap();
        let max_step = est.phases.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        assert!(max_step < PI / 4.0);
        assert!((est.phases.last().unwrap() - 4.0).abs() < 0.05);
    }

    #[test]
    fn bps_rejects_bad_config() {
        let x = generate_symbols(10, Constellation::Qpsk, 1.0, 7).unwrap();
        assert!(bps(&x, &BpsConfig::default()).is_err());
        let even = BpsConfig { window_symbols: 4, ..BpsConfig::default() };
        assert!(even.validate().is_err());
        let one = BpsConfig { n_test_phases: 1, ..BpsConfig::default() };
        assert!(one.validate().is_err());
    }
}
