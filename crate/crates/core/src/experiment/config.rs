//! Run configuration, presets and the key-value config file.
//!
//! Config files are flat `key = value` lines with dotted section keys, e.g.
//! `fiber.length_km = 6600`. Keys may also be grouped under `[section]`
//! headers. Every key overrides the chosen preset; unknown keys are errors.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::analysis::{BlockPartition, CpsdConfig};
use crate::channel::FiberSpec;
use crate::error::{Error, Result};
use crate::mitigation::{AllpassConfig, EdgeExtension};
use crate::transceiver::{BpsConfig, Constellation, McConfig, PulseShaping};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 180 GBd over 6600 km with a 70 kHz LO.
    Paper,
    /// 32 GBd over 660 km, linewidth raised so the product of linewidth,
    /// dispersion and symbol rate matches the paper preset.
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Configuration(format!("unknown preset {other:?}"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MitigationSettings {
    pub allpass: AllpassConfig,
    pub refine_bps: bool,
}

impl Default for MitigationSettings {
    fn default() -> Self {
        Self {
            allpass: AllpassConfig::default(),
            refine_bps: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Aggregate symbol rate in Bd.
    pub symbol_rate: f64,
    pub constellation: Constellation,
    pub n_symbols: usize,
    pub shaping: PulseShaping,
    pub fiber: FiberSpec,
    /// LO linewidth in Hz.
    pub linewidth: f64,
    pub snr_db: f64,
    /// Number of subcarriers; `None` for single carrier.
    pub subcarriers: Option<usize>,
    pub bps: BpsConfig,
    pub block_size: usize,
    pub cpsd: CpsdConfig,
    pub mitigation: Option<MitigationSettings>,
    pub master_seed: u64,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let rolloff = 0.05;
        match p {
            Preset::Paper => Self {
                symbol_rate: 180e9,
                constellation: Constellation::Qam16,
                n_symbols: 1 << 19,
                shaping: PulseShaping::default(),
                fiber: FiberSpec {
                    dispersion: 23.0,
                    length: 6600.0,
                    wavelength: 1550.0,
                },
                linewidth: 70e3,
                snr_db: 13.0,
                subcarriers: Some(8),
                bps: BpsConfig {
                    window_symbols: 1025,
                    ..BpsConfig::default()
                },
                block_size: 2048,
                cpsd: CpsdConfig::for_rolloff(rolloff),
                mitigation: Some(MitigationSettings::default()),
                master_seed: 1,
            },
            Preset::Desk => {
                let paper = Self::preset(Preset::Paper);
                let fiber = FiberSpec {
                    length: 660.0,
                    ..paper.fiber
                };
                let symbol_rate = 32e9;
                let fom = paper.linewidth * paper.fiber.dispersion_coefficient() * paper.symbol_rate;
                Self {
                    symbol_rate,
                    n_symbols: 1 << 16,
                    fiber,
                    linewidth: fom / (fiber.dispersion_coefficient() * symbol_rate),
                    ..paper
                }
            }
        }
    }

    pub fn sample_rate(&self) -> f64 {
        self.symbol_rate * self.shaping.sps as f64
    }

    /// Phase search for one subcarrier: the window keeps the single-carrier
    /// duration, rounded to an odd symbol count.
    pub fn mc_bps(&self, n_subcarriers: usize) -> BpsConfig {
        BpsConfig {
            window_symbols: (self.bps.window_symbols / n_subcarriers).max(3) | 1,
            ..self.bps
        }
    }

    pub fn mc_config(&self) -> Option<McConfig> {
        self.subcarriers
            .map(|n| McConfig::contiguous(n, self.symbol_rate, self.shaping.rolloff))
    }

    /// Dispersion memory in symbols over the occupied bandwidth.
    pub fn cd_memory_symbols(&self) -> f64 {
        self.fiber.delay_spread((1.0 + self.shaping.rolloff) * self.symbol_rate) * self.symbol_rate
    }

    /// Symbols discarded at each end before analysis.
    pub fn edge_discard(&self) -> usize {
        self.cd_memory_symbols().ceil() as usize + self.shaping.span_symbols
    }

    pub fn partition(&self) -> Result<BlockPartition> {
        let d = self.edge_discard();
        if 2 * d + self.block_size > self.n_symbols {
            return Err(Error::Configuration(format!(
                "{} symbols leave no {}-symbol block after discarding {d} at each edge",
                self.n_symbols, self.block_size
            )));
        }
        BlockPartition::covering(d..self.n_symbols - d, self.block_size)
    }

    /// This configuration without subcarriers.
    pub fn single_carrier(&self) -> Self {
        Self {
            subcarriers: None,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Configuration(m));
        if !(self.symbol_rate > 0.0 && self.symbol_rate.is_finite()) {
            return cfg(format!("symbol rate must be positive, got {}", self.symbol_rate));
        }
        if !(0.0..=1.0).contains(&self.shaping.rolloff) {
            return cfg(format!("rolloff must be in [0, 1], got {}", self.shaping.rolloff));
        }
        if self.shaping.sps < 1 || self.shaping.span_symbols < 8 {
            return cfg("need sps >= 1 and an RRC span of at least 8 symbols".into());
        }
        self.fiber.validate().map_err(to_config)?;
        if !(self.linewidth >= 0.0 && self.linewidth.is_finite()) {
            return cfg(format!("linewidth must be non-negative, got {}", self.linewidth));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return cfg(format!("invalid SNR {}", self.snr_db));
        }
        self.bps.validate().map_err(to_config)?;
        self.cpsd.validate().map_err(to_config)?;
        if let Some(m) = &self.mitigation {
            m.allpass.validate().map_err(to_config)?;
        }
        if self.block_size < self.cpsd.segment_len {
            return cfg(format!(
                "block size {} is shorter than the {}-symbol analysis segment",
                self.block_size, self.cpsd.segment_len
            ));
        }
        if let Some(mc) = self.mc_config() {
            mc.validate(self.shaping.rolloff, self.sample_rate())?;
            if self.n_symbols % mc.n_subcarriers != 0 {
                return cfg(format!(
                    "{} symbols do not split evenly over {} subcarriers",
                    self.n_symbols, mc.n_subcarriers
                ));
            }
            let sub = self.n_symbols / mc.n_subcarriers;
            if sub < 2 * self.shaping.span_symbols + 1 || sub < self.mc_bps(mc.n_subcarriers).window_symbols {
                return cfg(format!("{sub} symbols per subcarrier is too short"));
            }
        }
        if self.n_symbols < 2 * self.shaping.span_symbols + 1 || self.n_symbols < self.bps.window_symbols {
            return cfg(format!("{} symbols is too short", self.n_symbols));
        }
        self.partition()?;
        Ok(())
    }

    /// Non-fatal observations about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        let mem = self.cd_memory_symbols();
        if (self.n_symbols as f64) < 4.0 * mem {
            w.push(format!(
                "{} symbols is less than four times the {mem:.0}-symbol dispersion memory",
                self.n_symbols
            ));
        }
        w
    }

    /// Apply a config file on top of this configuration.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::ConfigFile(e.to_string()))?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries)?;
        let mut band_edge_set = false;
        for (key, value) in &entries {
            band_edge_set |= key == "analysis.band_edge";
            self.set(key, value)?;
        }
        if !band_edge_set {
            self.cpsd.band_edge = 1.0 - self.shaping.rolloff;
        }
        Ok(())
    }

    pub fn from_text(preset: Preset, text: &str) -> Result<Self> {
        let mut c = Self::preset(preset);
        c.apply_text(text)?;
        Ok(c)
    }

    fn set(&mut self, key: &str, v: &toml::Value) -> Result<()> {
        match key {
            "seed" => {
                // Seeds above i64::MAX do not fit a TOML integer and are written quoted.
                self.master_seed = match v {
                    toml::Value::String(t) => t.parse().map_err(|_| bad(key, "a non-negative integer", v))?,
                    _ => as_u64(key, v)?,
                }
            }
            "signal.symbol_rate_gbd" => self.symbol_rate = as_f64(key, v)? * 1e9,
            "signal.rolloff" => self.shaping.rolloff = as_f64(key, v)?,
            "signal.constellation" => self.constellation = as_str(key, v)?.parse().map_err(to_file)?,
            "signal.n_symbols" => self.n_symbols = as_usize(key, v)?,
            "signal.samples_per_symbol" => self.shaping.sps = as_usize(key, v)?,
            "signal.rrc_span_symbols" => self.shaping.span_symbols = as_usize(key, v)?,
            "fiber.dispersion_ps_nm_km" => self.fiber.dispersion = as_f64(key, v)?,
            "fiber.length_km" => self.fiber.length = as_f64(key, v)?,
            "fiber.wavelength_nm" => self.fiber.wavelength = as_f64(key, v)?,
            "lo.linewidth_khz" => self.linewidth = as_f64(key, v)? * 1e3,
            "channel.snr_db" => self.snr_db = as_f64(key, v)?,
            "mc.n_subcarriers" => {
                let n = as_usize(key, v)?;
                self.subcarriers = (n > 0).then_some(n);
            }
            "bps.n_test_phases" => self.bps.n_test_phases = as_usize(key, v)?,
            "bps.window_symbols" => self.bps.window_symbols = as_usize(key, v)?,
            "analysis.block_size" => self.block_size = as_usize(key, v)?,
            "analysis.segment_len" => self.cpsd.segment_len = as_usize(key, v)?,
            "analysis.hop" => self.cpsd.hop = as_usize(key, v)?,
            "analysis.band_edge" => self.cpsd.band_edge = as_f64(key, v)?,
            "mitigation.enabled" => {
                self.mitigation = if as_bool(key, v)? {
                    Some(self.mitigation.unwrap_or_default())
                } else {
                    None
                };
            }
            "mitigation.n_taps" => self.mitigation_mut().allpass.n_taps = as_usize(key, v)?,
            "mitigation.taper" => self.mitigation_mut().allpass.taper = as_f64(key, v)?,
            "mitigation.design_grid" => self.mitigation_mut().allpass.dense_len = as_usize(key, v)?,
            "mitigation.edge_extension" => {
                self.mitigation_mut().allpass.edge = match as_str(key, v)? {
                    "hold" => EdgeExtension::Hold,
                    "bridge" => EdgeExtension::Bridge,
                    other => return Err(Error::ConfigFile(format!("{key}: unknown edge extension {other:?}"))),
                }
            }
            "mitigation.refine_bps" => self.mitigation_mut().refine_bps = as_bool(key, v)?,
            "mitigation.designs_per_block" => self.mitigation_mut().allpass.designs_per_block = as_usize(key, v)?,
            "mitigation.smooth_bins" => self.mitigation_mut().allpass.smooth_bins = as_usize(key, v)?,
            "mitigation.interpolate" => self.mitigation_mut().allpass.interpolate = as_bool(key, v)?,
            "mitigation.design_len" => self.mitigation_mut().allpass.design_len = as_usize(key, v)?,
            other => return Err(Error::ConfigFile(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    fn mitigation_mut(&mut self) -> &mut MitigationSettings {
        self.mitigation.get_or_insert_with(MitigationSettings::default)
    }

    /// Canonical config file text; parsing it on any preset reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line(
            "seed",
            if self.master_seed > i64::MAX as u64 {
                format!("\"{}\"", self.master_seed)
            } else {
                self.master_seed.to_string()
            },
        );
        line("signal.symbol_rate_gbd", float(self.symbol_rate / 1e9));
        line("signal.rolloff", float(self.shaping.rolloff));
        line("signal.constellation", format!("\"{}\"", self.constellation));
        line("signal.n_symbols", self.n_symbols.to_string());
        line("signal.samples_per_symbol", self.shaping.sps.to_string());
        line("signal.rrc_span_symbols", self.shaping.span_symbols.to_string());
        line("fiber.dispersion_ps_nm_km", float(self.fiber.dispersion));
        line("fiber.length_km", float(self.fiber.length));
        line("fiber.wavelength_nm", float(self.fiber.wavelength));
        line("lo.linewidth_khz", float(self.linewidth / 1e3));
        line("channel.snr_db", float(self.snr_db));
        line("mc.n_subcarriers", self.subcarriers.unwrap_or(0).to_string());
        line("bps.n_test_phases", self.bps.n_test_phases.to_string());
        line("bps.window_symbols", self.bps.window_symbols.to_string());
        line("analysis.block_size", self.block_size.to_string());
        line("analysis.segment_len", self.cpsd.segment_len.to_string());
        line("analysis.hop", self.cpsd.hop.to_string());
        line("analysis.band_edge", float(self.cpsd.band_edge));
        line("mitigation.enabled", self.mitigation.is_some().to_string());
        if let Some(m) = &self.mitigation {
            line("mitigation.n_taps", m.allpass.n_taps.to_string());
            line("mitigation.taper", float(m.allpass.taper));
            line("mitigation.design_grid", m.allpass.dense_len.to_string());
            let edge = match m.allpass.edge {
                EdgeExtension::Hold => "hold",
                EdgeExtension::Bridge => "bridge",
            };
            line("mitigation.edge_extension", format!("\"{edge}\""));
            line("mitigation.refine_bps", m.refine_bps.to_string());
            line("mitigation.designs_per_block", m.allpass.designs_per_block.to_string());
            line("mitigation.smooth_bins", m.allpass.smooth_bins.to_string());
            line("mitigation.interpolate", m.allpass.interpolate.to_string());
            line("mitigation.design_len", m.allpass.design_len.to_string());
        }
        s
    }

    /// FNV-1a hash of [`RunConfig::to_text`].
    pub fn hash(&self) -> u64 {
        fnv1a(self.to_text().as_bytes())
    }
}

/// Round-trippable float literal (TOML needs a decimal point or exponent).
fn float(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'E']) || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn to_config(e: Error) -> Error {
    match e {
        Error::Parameter(m) => Error::Configuration(m),
        other => other,
    }
}

fn to_file(e: Error) -> Error {
    Error::ConfigFile(e.to_string())
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) -> Result<()> {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out)?,
            toml::Value::Array(_) => return Err(Error::ConfigFile(format!("{key}: arrays are not supported"))),
            other => out.push((key, other.clone())),
        }
    }
    Ok(())
}

fn bad(key: &str, want: &str, v: &toml::Value) -> Error {
    Error::ConfigFile(format!("{key}: expected {want}, got {v}"))
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(key, "a number", v)),
    }
}

fn as_u64(key: &str, v: &toml::Value) -> Result<u64> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(bad(key, "a non-negative integer", v)),
    }
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize> {
    as_u64(key, v).map(|u| u as usize)
}

fn as_str<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| bad(key, "a string", v))
}

fn as_bool(key: &str, v: &toml::Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| bad(key, "true or false", v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_is_valid() {
        let c = RunConfig::preset(Preset::Paper);
        c.validate().unwrap();
        assert_eq!(c.sample_rate(), 360e9);
        let p = c.partition().unwrap();
        assert!(p.n_blocks >= 170, "{}", p.n_blocks);
        assert!(c.warnings().is_empty());
        assert_eq!(c.mc_config().unwrap().validate(0.05, 360e9).unwrap(), 16);
    }

    #[test]
    fn desk_preset_keeps_figure_of_merit() {
        let p = RunConfig::preset(Preset::Paper);
        let d = RunConfig::preset(Preset::Desk);
        d.validate().unwrap();
        let fom = |c: &RunConfig| c.linewidth * c.fiber.dispersion_coefficient() * c.symbol_rate;
        assert!((fom(&d) / fom(&p) - 1.0).abs() < 1e-12);
        assert!(d.linewidth > 1e6);
    }

    #[test]
    fn dotted_keys_override_preset() {
        let c = RunConfig::from_text(
            Preset::Paper,
            "fiber.length_km = 1000\nlo.linewidth_khz = 100\nsignal.constellation = \"qpsk\"\nseed = 9\n",
        )
        .unwrap();
        assert_eq!(c.fiber.length, 1000.0);
        assert_eq!(c.linewidth, 100e3);
        assert_eq!(c.constellation, Constellation::Qpsk);
        assert_eq!(c.master_seed, 9);
    }

    #[test]
    fn section_headers_are_accepted() {
        let c = RunConfig::from_text(Preset::Desk, "[fiber]\nlength_km = 10.5\n[mc]\nn_subcarriers = 0\n").unwrap();
        assert_eq!(c.fiber.length, 10.5);
        assert_eq!(c.subcarriers, None);
    }

    #[test]
    fn unknown_and_mistyped_keys_are_errors() {
        for text in [
            "fiber.lenght_km = 5",
            "color = 3",
            "fiber.length_km = \"long\"",
            "signal.n_symbols = -4",
            "signal.constellation = \"8psk\"",
            "mitigation.edge_extension = \"mirror\"",
            "fiber = [1, 2]",
            "fiber.length_km = ",
        ] {
            assert!(
                matches!(RunConfig::from_text(Preset::Paper, text), Err(Error::ConfigFile(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn rolloff_change_moves_band_edge() {
        let c = RunConfig::from_text(Preset::Paper, "signal.rolloff = 0.1").unwrap();
        assert!((c.cpsd.band_edge - 0.9).abs() < 1e-15);
        let c = RunConfig::from_text(Preset::Paper, "signal.rolloff = 0.1\nanalysis.band_edge = 0.8").unwrap();
        assert_eq!(c.cpsd.band_edge, 0.8);
    }

    #[test]
    fn text_round_trip() {
        for p in [Preset::Paper, Preset::Desk] {
            let mut c = RunConfig::preset(p);
            c.snr_db = f64::INFINITY;
            let back = RunConfig::from_text(Preset::Desk, &c.to_text()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
        let mut c = RunConfig::preset(Preset::Paper);
        c.mitigation = None;
        assert_eq!(RunConfig::from_text(Preset::Paper, &c.to_text()).unwrap(), c);
    }

    #[test]
    fn validation_catches_inconsistent_settings() {
        let mut c = RunConfig::preset(Preset::Paper);
        c.n_symbols = 50_000;
        assert!(matches!(c.validate(), Err(Error::Configuration(_))));
        let mut c = RunConfig::preset(Preset::Paper);
        c.subcarriers = Some(7);
        assert!(c.validate().is_err());
        let mut c = RunConfig::preset(Preset::Paper);
        c.bps.window_symbols = 64;
        assert!(c.validate().is_err());
        let mut c = RunConfig::preset(Preset::Paper);
        c.fiber.wavelength = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
