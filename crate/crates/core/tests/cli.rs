//! End-to-end runs of the `eepn` binary on the desk preset.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eepn::experiment::report::{BLOCKS_HEADER, PENALTIES_HEADER, PHASE_PROFILES_HEADER};

fn eepn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eepn"))
        .args(["--preset", "desk"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = eepn(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.txt");
    fs::write(&p, text).unwrap();
    p
}

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(String::from).collect()
}

/// Integers are exact and labels are skipped; any other field must carry at
/// least nine significant digits.
fn check_precision(path: &Path) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = 0;
    for rec in r.records() {
        for field in rec.unwrap().iter() {
            let label = field.chars().all(|c| c.is_ascii_lowercase() || c == '_');
            if label || field == "NaN" || field.parse::<i64>().is_ok() {
                continue;
            }
            let value: f64 = field.parse().unwrap_or_else(|_| panic!("{}: {field:?} is not numeric", path.display()));
            let mantissa = field.split(['e', 'E']).next().unwrap();
            let digits = mantissa.chars().filter(char::is_ascii_digit).collect::<String>();
            let significant = if value == 0.0 { digits.len() } else { digits.trim_start_matches('0').len() };
            assert!(significant >= 9, "{}: {field} has {significant} significant digits", path.display());
        }
        rows += 1;
    }
    assert!(rows > 0, "{} is empty", path.display());
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_is_deterministic_and_follows_the_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "signal.n_symbols = 32768\nmc.n_subcarriers = 4\n");
    let cfg = cfg.to_str().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["simulate", "--config", cfg, "--seed", "7", "--out", a.to_str().unwrap()]);
    ok(&["simulate", "--config", cfg, "--seed", "7", "--out", b.to_str().unwrap()]);
    for sub in ["sc", "mc"] {
        let (fa, fb) = (files(&a.join(sub)), files(&b.join(sub)));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{sub} output differs between identical runs");
    }

    let sc = a.join("sc");
    assert_eq!(header(&sc.join("blocks.csv")), BLOCKS_HEADER);
    assert_eq!(header(&sc.join("phase_profiles.csv")), PHASE_PROFILES_HEADER);
    assert_eq!(header(&sc.join("penalties.csv")), PENALTIES_HEADER);
    assert_eq!(header(&sc.join("lo_trace.csv")), ["t_ns", "phi_rad", "bps_rad"]);
    let mc_lo = header(&a.join("mc/lo_trace.csv"));
    assert_eq!(mc_lo[..2], ["t_ns", "phi_rad"]);
    assert_eq!(mc_lo.len(), 2 + 4);
    for f in ["blocks.csv", "phase_profiles.csv", "penalties.csv", "lo_trace.csv"] {
        check_precision(&sc.join(f));
    }
    check_precision(&a.join("mc/lo_trace.csv"));

    let c = tmp.path().join("c");
    ok(&["simulate", "--config", cfg, "--seed", "8", "--out", c.to_str().unwrap()]);
    assert_ne!(files(&a.join("sc")), files(&c.join("sc")));
}

#[test]
fn stored_symbols_reproduce_the_simulated_analysis() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "signal.n_symbols = 32768\nmc.n_subcarriers = 0\n");
    let cfg = cfg.to_str().unwrap();
    let sim = tmp.path().join("sim");
    let mit = tmp.path().join("mit");
    ok(&["simulate", "--config", cfg, "--out", sim.to_str().unwrap(), "--save-symbols"]);
    let symbols = sim.join("symbols.csv");
    ok(&["mitigate", "--config", cfg, "--symbols", symbols.to_str().unwrap(), "--out", mit.to_str().unwrap()]);
    for f in ["blocks.csv", "penalties.csv", "phase_profiles.csv"] {
        assert_eq!(fs::read(sim.join(f)).unwrap(), fs::read(mit.join(f)).unwrap(), "{f}");
    }
    assert!(!mit.join("lo_trace.csv").exists());
}

#[test]
fn figures_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "signal.n_symbols = 32768\nmc.n_subcarriers = 4\n");
    let cfg = cfg.to_str().unwrap();
    let f2 = tmp.path().join("f2");
    let f3 = tmp.path().join("f3");
    ok(&["reproduce", "--figure", "2", "--config", cfg, "--out", f2.to_str().unwrap()]);
    ok(&["reproduce", "--figure", "3", "--config", cfg, "--out", f3.to_str().unwrap()]);
    for f in ["blocks_sc.csv", "blocks_mc.csv", "lo_trace_sc.csv", "lo_trace_mc.csv", "selection.csv", "subcarrier_phase.csv"] {
        check_precision(&f2.join(f));
    }
    assert_eq!(header(&f3.join("blocks.csv")), BLOCKS_HEADER);
    check_precision(&f3.join("phase_profiles.csv"));
    let o = eepn(&["reproduce", "--figure", "4", "--out", f3.to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn bad_config_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    for text in ["fiber.lenght_km = 10\n", "fiber.length_km = \"long\"\n", "[fiber]\ncolour = 1\n"] {
        let cfg = config(tmp.path(), text);
        let o = eepn(&["simulate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"), "{text}");
    }
    let o = eepn(&["simulate", "--config", "/nonexistent/run.txt"]);
    assert_eq!(o.status.code(), Some(2));
}
