use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eepn::experiment::report::{read_symbols, reproduce_fig2, reproduce_fig3, write_run};
use eepn::experiment::run::analyze_recovered;
use eepn::experiment::{run_paired, run_sc, selftest, Preset, RunConfig};
use eepn::phase_noise::PhaseTrajectory;
use eepn::{Error, Result};

/// Equalization-enhanced phase noise simulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Config file with dotted keys, applied on top of the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = Preset::Paper, value_parser = parse_preset)]
    preset: Preset,
    #[command(subcommand)]
    command: Command,
}

fn parse_preset(s: &str) -> Result<Preset> {
    s.parse()
}

#[derive(Subcommand)]
enum Command {
    /// Run the link and write per-block results. With subcarriers
    /// configured, the single- and multi-carrier runs go to `sc/` and `mc/`.
    Simulate {
        /// Also write symbols.csv for later use with `mitigate`.
        #[arg(long)]
        save_symbols: bool,
    },
    /// Re-run analysis and reversal on stored single-carrier symbols.
    Mitigate {
        #[arg(long)]
        symbols: PathBuf,
    },
    /// Write the data behind one of the standard figures.
    Reproduce {
        #[arg(long, value_parser = ["2", "3"])]
        figure: String,
    },
    /// Run the acceptance checks.
    Selftest {
        /// Seeds for the multi-seed checks.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::preset(cli.preset);
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)?;
        cfg.apply_text(&text)?;
    }
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn report(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn simulate(cfg: &RunConfig, out: &Path, save_symbols: bool) -> Result<()> {
    if cfg.subcarriers.is_some() {
        let p = run_paired(cfg)?;
        report(&write_run(&out.join("sc"), &p.sc, save_symbols)?);
        report(&write_run(&out.join("mc"), &p.mc, false)?);
        println!(
            "max penalty: SC {:.3} dB, MC {:.3} dB",
            p.sc.max_penalty_db(),
            p.mc.max_penalty_db()
        );
    } else {
        let r = run_sc(cfg)?;
        report(&write_run(out, &r, save_symbols)?);
        println!("max penalty: SC {:.3} dB", r.max_penalty_db());
    }
    Ok(())
}

fn mitigate(cfg: &RunConfig, out: &Path, symbols: &Path) -> Result<()> {
    let mut cfg = cfg.single_carrier();
    cfg.mitigation.get_or_insert_with(Default::default);
    let (x, y, y_signal) = read_symbols(symbols, &cfg)?;
    cfg.n_symbols = x.len();
    cfg.validate()?;
    let lo = PhaseTrajectory {
        phases: Vec::new(),
        sample_period: 1.0 / cfg.sample_rate(),
    };
    let r = analyze_recovered(&cfg, x, y, y_signal, lo, Vec::new())?;
    report(&write_run(out, &r, false)?);
    for m in &r.mitigation {
        println!("{:?}: max penalty {:.3} dB", m.mode, m.max_penalty_db());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Simulate { save_symbols } => simulate(&cfg, &cli.out, *save_symbols)?,
        Command::Mitigate { symbols } => mitigate(&cfg, &cli.out, symbols)?,
        Command::Reproduce { figure } => {
            let files = if figure == "2" {
                if cfg.subcarriers.is_none() {
                    return Err(Error::Configuration("figure 2 needs mc.n_subcarriers > 0".into()));
                }
                reproduce_fig2(&cli.out, &run_paired(&cfg)?)?
            } else {
                let mut c = cfg.single_carrier();
                c.mitigation.get_or_insert_with(Default::default);
                reproduce_fig3(&cli.out, &run_sc(&c)?)?
            };
            report(&files);
        }
        Command::Selftest { seeds } => {
            let outcomes = selftest::run_all(&cfg, *seeds, |o| println!("{o}"))?;
            let passed = outcomes.iter().filter(|o| o.passed).count();
            println!("{passed}/{} criteria passed", outcomes.len());
            return Ok(passed == outcomes.len());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
