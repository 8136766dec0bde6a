use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlsp_core::analysis;
use nlsp_core::config::{parse_config, ScenarioConfig};
use nlsp_core::report::summarize_run;
use nlsp_core::scenario::{run_scenario_with, RunOptions};
use nlsp_core::error::ConfigIssue;
use nlsp_core::{snapshot, Error, ErrorClass};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "nlsp", version, about = "Soliton and trapped-mode simulator for NLS with a moving potential")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; JSON goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Soliton φ_ω at ω₁ and the trapped bound state Q_w at w₀.
    GroundState(Common),
    /// Internal modes of the linearization at ω₁ and their normalization.
    Spectrum(Common),
    /// Resonance classification of the internal-mode frequencies.
    Resonances(Common),
    /// Fermi-golden-rule ladders for random synthetic (ζ, G).
    Fgr {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        samples: usize,
    },
    /// Decompose a field snapshot (the config's initial data by default).
    Decompose {
        #[command(flatten)]
        common: Common,
        /// Field snapshot to decompose.
        #[arg(long)]
        field: Option<PathBuf>,
        /// Time at which the snapshot was taken.
        #[arg(long, default_value_t = 0.0)]
        time: f64,
    },
    /// Integrate a scenario and write a run directory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file to restart from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Aggregate a run directory into one summary JSON.
    Report {
        /// Run directory written by `simulate`.
        run: PathBuf,
        /// Directory for report.json; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        verbose: bool,
    },
}

fn load_config(path: &Path) -> Result<ScenarioConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(vec![ConfigIssue { line: 0, message: format!("cannot read {}: {e}", path.display()) }]))?;
    parse_config(&text)
}

fn emit<T: Serialize>(name: &str, value: &T, out: Option<&Path>, verbose: bool) -> Result<(), Error> {
    let json = serde_json::to_string_pretty(value)?;
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("{name}.json"));
            std::fs::write(&path, json + "\n")?;
            if verbose {
                eprintln!("wrote {}", path.display());
            }
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{json}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GroundState(c) => {
            let cfg = load_config(&c.config)?;
            let gs = analysis::ground_states(&cfg)?;
            if let Some(dir) = &c.out {
                std::fs::create_dir_all(dir)?;
                if let Some(phi) = &gs.phi {
                    snapshot::save(&dir.join("soliton.bin"), phi)?;
                }
                if let Some(q) = &gs.q {
                    snapshot::save(&dir.join("bound_state.bin"), q)?;
                }
            }
            emit("ground_state", &gs.report, c.out.as_deref(), c.verbose)
        }
        Command::Spectrum(c) => {
            let cfg = load_config(&c.config)?;
            emit("spectrum", &analysis::spectrum(&cfg)?.report, c.out.as_deref(), c.verbose)
        }
        Command::Resonances(c) => {
            let cfg = load_config(&c.config)?;
            emit("resonances", &analysis::resonances(&cfg)?, c.out.as_deref(), c.verbose)
        }
        Command::Fgr { common: c, samples } => {
            let cfg = load_config(&c.config)?;
            emit("fgr", &analysis::fgr(&cfg, samples)?, c.out.as_deref(), c.verbose)
        }
        Command::Decompose { common: c, field, time } => {
            let cfg = load_config(&c.config)?;
            let u = match &field {
                Some(path) => snapshot::load(path)?,
                None => nlsp_core::scenario::ScenarioSetup::new(&cfg)?.initial_data(&cfg)?,
            };
            emit("decomposition", &analysis::decompose_field(&cfg, &u, time)?, c.out.as_deref(), c.verbose)
        }
        Command::Simulate { common: c, resume } => {
            let cfg = load_config(&c.config)?;
            let out = c.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let opts = RunOptions { out_dir: Some(out.clone()), resume, verbose: c.verbose };
            let state = run_scenario_with(&cfg, &opts)?;
            if c.verbose {
                eprintln!("run written to {}", out.display());
            }
            emit("metrics", &state.metrics()?, None, c.verbose)
        }
        Command::Report { run, out, verbose } => emit("report", &summarize_run(&run)?, out.as_deref(), verbose),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            let label = match class {
                ErrorClass::Config => "config error",
                ErrorClass::Numerical => "numerical error",
                ErrorClass::Gate => "gate failure",
            };
            eprintln!("nlsp ({label}): {e}");
            ExitCode::from(class.exit_code() as u8)
        }
    }
}
