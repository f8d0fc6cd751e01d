//! CSV files for runs and figure data.
//!
//! Floating-point fields use scientific notation with eleven significant
//! digits; values that do not apply to a run (mitigation columns without
//! mitigation, analysis columns of multi-carrier runs) are written as `NaN`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use super::config::RunConfig;
use super::run::{PairedRun, RunResult};
use crate::analysis::{BlockReport, ErrorShape};
use crate::error::{Error, Result};
use crate::mitigation::ReversalMode;
use crate::transceiver::SymbolSequence;

pub const BLOCKS_HEADER: [&str; 8] = [
    "block_index",
    "t_start_ns",
    "snr_db",
    "snr_db_opt_timing",
    "snr_db_higher_order",
    "max_excursion_rad",
    "timing_offset_ui",
    "fit_order_selected",
];

pub const PHASE_PROFILES_HEADER: [&str; 6] = [
    "block_index",
    "f_ghz",
    "phase_rad",
    "phase_after_opt_timing_rad",
    "phase_after_higher_order_rad",
    "weight",
];

pub const PENALTIES_HEADER: [&str; 7] = [
    "block_index",
    "reference_snr_db",
    "penalty_db",
    "penalty_db_opt_timing",
    "penalty_db_higher_order",
    "residual_opt_timing_rad",
    "residual_higher_order_rad",
];

const SYMBOLS_HEADER: [&str; 7] = ["index", "x_re", "x_im", "y_re", "y_im", "y_signal_re", "y_signal_im"];

/// Rows of `lo_trace.csv` are thinned to at most this many.
pub const LO_TRACE_MAX_ROWS: usize = 1 << 16;

pub fn num(v: f64) -> String {
    format!("{v:.10e}")
}

fn exact(v: f64) -> String {
    format!("{v:.16e}")
}

const NAN: f64 = f64::NAN;

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// One row per block.
pub fn write_blocks(path: &Path, run: &RunResult) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(BLOCKS_HEADER)?;
    let ot = run.mitigation(ReversalMode::OptimizedTiming);
    let ho = run.mitigation(ReversalMode::HigherOrder);
    for i in 0..run.partition.n_blocks {
        let rep = run.block_reports.get(i);
        w.write_record([
            i.to_string(),
            num(run.block_start_ns(i)),
            num(run.block_snr_db[i]),
            num(ot.map_or(NAN, |o| o.snr_db[i])),
            num(ho.map_or(NAN, |o| o.snr_db[i])),
            num(rep.map_or(NAN, |r| r.max_excursion_rad)),
            num(rep.map_or(NAN, |r| r.timing_offset_ui)),
            rep.map_or_else(|| "NaN".to_string(), |r| r.selected_order.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Penalties against the noise-only reference and the residual excursion
/// after each reversal mode.
pub fn write_penalties(path: &Path, run: &RunResult) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(PENALTIES_HEADER)?;
    let pen = run.penalty_db();
    let ot = run.mitigation(ReversalMode::OptimizedTiming);
    let ho = run.mitigation(ReversalMode::HigherOrder);
    let (ot_pen, ho_pen) = (ot.map(|o| o.penalty_db()), ho.map(|o| o.penalty_db()));
    for i in 0..run.partition.n_blocks {
        w.write_record([
            i.to_string(),
            num(run.reference_snr_db[i]),
            num(pen[i]),
            num(ot_pen.as_ref().map_or(NAN, |p| p[i])),
            num(ho_pen.as_ref().map_or(NAN, |p| p[i])),
            num(ot.map_or(NAN, |o| o.residual[i].max_abs_deviation())),
            num(ho.map_or(NAN, |o| o.residual[i].max_abs_deviation())),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Phase-error profiles of `blocks` before and after reversal. The
/// post-reversal profiles are measured on the noise-free signal component.
pub fn write_phase_profiles(path: &Path, run: &RunResult, blocks: &[usize]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(PHASE_PROFILES_HEADER)?;
    let ot = run.mitigation(ReversalMode::OptimizedTiming);
    let ho = run.mitigation(ReversalMode::HigherOrder);
    for &b in blocks {
        let Some(rep) = run.block_reports.get(b) else {
            return Err(Error::Parameter(format!("no analysis for block {b}")));
        };
        let p = &rep.phase_profile;
        for k in 0..p.len() {
            let after = |o: Option<&super::run::MitigationOutcome>| o.and_then(|o| o.residual[b].phase.get(k).copied()).unwrap_or(NAN);
            w.write_record([
                b.to_string(),
                num(p.grid.frequencies[k] / 1e9),
                num(p.phase[k]),
                num(after(ot)),
                num(after(ho)),
                num(p.weight[k]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// LO phase and the BPS estimates at symbol instants: one `bps_rad` column
/// for single carrier, one `subcarrier_<i>_rad` column per subcarrier
/// otherwise. Nothing is written for runs without an LO trajectory.
pub fn write_lo_trace(path: &Path, run: &RunResult) -> Result<bool> {
    if run.lo.is_empty() || run.carrier_phase.is_empty() {
        return Ok(false);
    }
    let n_streams = run.carrier_phase.len();
    let len = run.carrier_phase[0].len();
    let stream_rate = run.x.symbol_rate / n_streams as f64;
    let samples_per_symbol = 1.0 / (stream_rate * run.lo.sample_period);
    let stride = len.div_ceil(LO_TRACE_MAX_ROWS).max(1);
    let mut w = writer(path)?;
    let mut header = vec!["t_ns".to_string(), "phi_rad".to_string()];
    if n_streams == 1 {
        header.push("bps_rad".into());
    } else {
        header.extend((0..n_streams).map(|i| format!("subcarrier_{i}_rad")));
    }
    w.write_record(&header)?;
    for k in (0..len).step_by(stride) {
        let t = k as f64 / stream_rate;
        let idx = ((k as f64 * samples_per_symbol).round() as usize).min(run.lo.len() - 1);
        let mut row = vec![num(t * 1e9), num(run.lo.phases[idx])];
        row.extend(run.carrier_phase.iter().map(|c| num(c.phases[k])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(true)
}

/// Transmitted symbols, phase-recovered symbols and their signal component
/// at full precision, for re-analysis with `read_symbols`.
pub fn write_symbols(path: &Path, run: &RunResult) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(SYMBOLS_HEADER)?;
    for (i, ((x, y), s)) in run.x.symbols.iter().zip(&run.y.symbols).zip(&run.y_signal).enumerate() {
        w.write_record([
            i.to_string(),
            exact(x.re),
            exact(x.im),
            exact(y.re),
            exact(y.im),
            exact(s.re),
            exact(s.im),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Stored symbols as `(x, y, y_signal)`; rate and constellation come from `cfg`.
pub fn read_symbols(path: &Path, cfg: &RunConfig) -> Result<(SymbolSequence, SymbolSequence, Vec<Complex64>)> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(SYMBOLS_HEADER) {
        return Err(Error::Parameter(format!("{} is not a symbols file", path.display())));
    }
    let (mut x, mut y, mut s) = (Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parameter(format!("row {}: bad field {}", row + 1, SYMBOLS_HEADER[i])))
        };
        x.push(Complex64::new(f(1)?, f(2)?));
        y.push(Complex64::new(f(3)?, f(4)?));
        s.push(Complex64::new(f(5)?, f(6)?));
    }
    let seq = |v| SymbolSequence {
        symbols: v,
        symbol_rate: cfg.symbol_rate,
        constellation: cfg.constellation,
    };
    Ok((seq(x), seq(y), s))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// `config.txt` (canonical config) and `provenance.txt`.
pub fn write_metadata(dir: &Path, run: &RunResult) -> Result<Vec<PathBuf>> {
    let cfg = dir.join("config.txt");
    write_text(&cfg, &run.config.to_text())?;
    let prov = dir.join("provenance.txt");
    let p = &run.provenance;
    write_text(
        &prov,
        &format!(
            "config_hash = \"{:016x}\"\nseed = {}\nversion = \"{}\"\n",
            p.config_hash, p.seed, p.version
        ),
    )?;
    Ok(vec![cfg, prov])
}

/// Everything a `simulate` run produces.
pub fn write_run(dir: &Path, run: &RunResult, with_symbols: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = write_metadata(dir, run)?;
    let blocks = dir.join("blocks.csv");
    write_blocks(&blocks, run)?;
    out.push(blocks);
    let pen = dir.join("penalties.csv");
    write_penalties(&pen, run)?;
    out.push(pen);
    let prof = dir.join("phase_profiles.csv");
    let all: Vec<usize> = (0..run.block_reports.len()).collect();
    write_phase_profiles(&prof, run, &all)?;
    out.push(prof);
    let lo = dir.join("lo_trace.csv");
    if write_lo_trace(&lo, run)? {
        out.push(lo);
    }
    if with_symbols {
        let sym = dir.join("symbols.csv");
        write_symbols(&sym, run)?;
        out.push(sym);
    }
    Ok(out)
}

/// Characteristic blocks picked from the fit diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Selection {
    /// Linear-dominated block with the largest timing offset.
    pub linear: Option<usize>,
    /// Quadratic block with the largest excursion.
    pub quadratic: Option<usize>,
    /// Higher-order block with the largest excursion.
    pub higher_order: Option<usize>,
}

impl Selection {
    pub fn labelled(&self) -> Vec<(usize, &'static str)> {
        [
            (self.linear, "linear"),
            (self.quadratic, "quadratic"),
            (self.higher_order, "higher_order"),
        ]
        .into_iter()
        .filter_map(|(b, l)| b.map(|b| (b, l)))
        .collect()
    }

    pub fn blocks(&self) -> Vec<usize> {
        self.labelled().into_iter().map(|(b, _)| b).collect()
    }
}

pub fn select_blocks(reports: &[BlockReport]) -> Selection {
    let best = |shape: ErrorShape, key: fn(&BlockReport) -> f64| {
        reports
            .iter()
            .filter(|r| r.shape() == shape)
            .max_by(|a, b| key(a).total_cmp(&key(b)))
            .map(|r| r.block_index)
    };
    Selection {
        linear: best(ErrorShape::Linear, |r| r.timing_offset_ui.abs()),
        quadratic: best(ErrorShape::Quadratic, |r| r.max_excursion_rad),
        higher_order: best(ErrorShape::HigherOrder, |r| r.max_excursion_rad),
    }
}

fn write_selection(path: &Path, run: &RunResult, sel: &Selection) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "block_index",
        "label",
        "max_excursion_rad",
        "timing_offset_ui",
        "explained_order_1",
        "explained_order_2",
        "fit_order_selected",
        "penalty_db",
    ])?;
    let pen = run.penalty_db();
    for (b, label) in sel.labelled() {
        let r = &run.block_reports[b];
        w.write_record([
            b.to_string(),
            label.to_string(),
            num(r.max_excursion_rad),
            num(r.timing_offset_ui),
            num(r.fit(1).explained),
            num(r.fit(2).explained),
            r.selected_order.to_string(),
            num(pen[b]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Blockwise SNR of the paired single- and multi-carrier runs, LO and
/// carrier-phase traces, and phase-error profiles of the characteristic
/// blocks with the subcarrier comparison at those blocks.
pub fn reproduce_fig2(dir: &Path, paired: &PairedRun) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let sc = &paired.sc;
    let mut out = write_metadata(dir, sc)?;
    let mut add = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let p = dir.join(name);
        f(&p)?;
        out.push(p);
        Ok(())
    };
    add("blocks_sc.csv", &|p| write_blocks(p, sc))?;
    add("blocks_mc.csv", &|p| write_blocks(p, &paired.mc))?;
    add("penalties_sc.csv", &|p| write_penalties(p, sc))?;
    add("penalties_mc.csv", &|p| write_penalties(p, &paired.mc))?;
    add("lo_trace_sc.csv", &|p| write_lo_trace(p, sc).map(|_| ()))?;
    add("lo_trace_mc.csv", &|p| write_lo_trace(p, &paired.mc).map(|_| ()))?;
    let sel = select_blocks(&sc.block_reports);
    add("selection.csv", &|p| write_selection(p, sc, &sel))?;
    add("phase_profiles.csv", &|p| write_phase_profiles(p, sc, &sel.blocks()))?;
    add("subcarrier_phase.csv", &|p| {
        let mut w = writer(p)?;
        w.write_record(["block_index", "subcarrier", "f_center_ghz", "mc_phase_rad", "sc_phase_rad"])?;
        for b in sel.blocks() {
            let c = paired.compare_subcarriers(b)?;
            for i in 0..c.centers.len() {
                w.write_record([
                    b.to_string(),
                    i.to_string(),
                    num(c.centers[i] / 1e9),
                    num(c.mc_phase[i]),
                    num(c.sc_phase[i]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(out)
}

/// Blockwise SNR before and after both reversal modes, and phase-error
/// profiles of the characteristic blocks before and after reversal.
pub fn reproduce_fig3(dir: &Path, run: &RunResult) -> Result<Vec<PathBuf>> {
    if run.mitigation.is_empty() {
        return Err(Error::Configuration("figure 3 needs mitigation enabled".into()));
    }
    fs::create_dir_all(dir)?;
    let mut out = write_metadata(dir, run)?;
    let sel = select_blocks(&run.block_reports);
    for (name, f) in [
        ("blocks.csv", &(|p: &Path| write_blocks(p, run)) as &dyn Fn(&Path) -> Result<()>),
        ("penalties.csv", &|p| write_penalties(p, run)),
        ("selection.csv", &|p| write_selection(p, run, &sel)),
        ("phase_profiles.csv", &|p| write_phase_profiles(p, run, &sel.blocks())),
    ] {
        let p = dir.join(name);
        f(&p)?;
        out.push(p);
    }
    Ok(out)
}
