use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use peec_ris::commands::{cmd_optimize, cmd_pattern, cmd_simulate, cmd_zmatrix, Baseline};
use peec_ris::config::parse_scenario;
use peec_ris::farfield::Plane;
use peec_ris::geometry::Role;
use peec_ris::io::{read_loads_file, write_currents, write_loads, write_pattern, write_trace, write_zmatrix, RunReport};
use peec_ris::opt::{Init, LoadConstraint, OptParams};
use peec_ris::{Error, Result};

#[derive(Parser)]
#[command(name = "peec-ris", version, about = "Thin-wire PEEC solver and RIS load optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the driven link and write segment currents.
    Simulate {
        scenario: PathBuf,
        /// RIS loads CSV (ris_index,re_ohm,im_ohm); short circuits if omitted.
        #[arg(long)]
        loads: Option<PathBuf>,
        /// Currents CSV; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Extract the port impedance matrix.
    Zmatrix {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Optimize the RIS loads for the end-to-end gain.
    Optimize {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = ConstraintArg::Reactive)]
        constraint: ConstraintArg,
        /// Relative objective improvement per sweep that ends the ascent.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 20)]
        max_sweeps: usize,
        /// Seed of the random baseline (and of --init random).
        #[arg(long)]
        seed: Option<u64>,
        /// Number of random reactive configurations in the baseline.
        #[arg(long, default_value_t = 100)]
        baseline_samples: usize,
        #[arg(long, value_enum, default_value_t = InitArg::Short)]
        init: InitArg,
        /// Signal-to-noise scale for the reported rate.
        #[arg(long, default_value_t = 1.0)]
        noise_power_ratio: f64,
        /// Loads CSV; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Objective trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Normalized cut of the field scattered by the RIS.
    Pattern {
        scenario: PathBuf,
        #[arg(long)]
        loads: Option<PathBuf>,
        #[arg(long, value_enum)]
        plane: PlaneArg,
        /// Fixed angle of the cut in degrees; the Rx direction if omitted.
        #[arg(long, allow_negative_numbers = true)]
        fixed_angle: Option<f64>,
        #[arg(long, default_value_t = 361)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ConstraintArg {
    Reactive,
    Passive,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Short,
    Open,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlaneArg {
    Phi,
    Theta,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Input {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn emit_report(path: Option<&Path>, report: &RunReport) -> Result<()> {
    if let Some(p) = path {
        let mut w = create(p)?;
        report.write_json(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            scenario,
            loads,
            out,
            report,
        } => {
            let cfg = parse_scenario(&scenario)?;
            let loads = match loads {
                Some(p) => Some(read_loads_file(&p, cfg.scenario.count(Role::Ris))?),
                None => None,
            };
            let (driven, rep) = cmd_simulate(&cfg, loads.as_deref())?;
            emit(out.as_deref(), |w| write_currents(w, &driven.solution.currents))?;
            emit_report(report.as_deref(), &rep)
        }
        Command::Zmatrix { scenario, out, report } => {
            let cfg = parse_scenario(&scenario)?;
            let (net, rep) = cmd_zmatrix(&cfg)?;
            emit(out.as_deref(), |w| write_zmatrix(w, &net))?;
            emit_report(report.as_deref(), &rep)
        }
        Command::Optimize {
            scenario,
            constraint,
            tol,
            max_sweeps,
            seed,
            baseline_samples,
            init,
            noise_power_ratio,
            out,
            trace,
            report,
        } => {
            let cfg = parse_scenario(&scenario)?;
            let params = OptParams {
                constraint: match constraint {
                    ConstraintArg::Reactive => LoadConstraint::Reactive,
                    ConstraintArg::Passive => LoadConstraint::Passive,
                },
                tol,
                max_sweeps,
                noise_power_ratio,
                init: match init {
                    InitArg::Short => Init::Short,
                    InitArg::Open => Init::Open,
                    InitArg::Random => Init::Random(seed.unwrap_or(0)),
                },
                ..OptParams::default()
            };
            let baseline = seed.map(|seed| Baseline {
                seed,
                samples: baseline_samples,
            });
            let (outcome, rep) = cmd_optimize(&cfg, &params, baseline)?;
            let loads: Vec<_> = outcome.loads.iter().copied().collect();
            emit(out.as_deref(), |w| write_loads(w, &loads))?;
            if let Some(p) = trace {
                emit(Some(&p), |w| write_trace(w, &outcome.trace))?;
            }
            emit_report(report.as_deref(), &rep)
        }
        Command::Pattern {
            scenario,
            loads,
            plane,
            fixed_angle,
            points,
            out,
            report,
        } => {
            let cfg = parse_scenario(&scenario)?;
            let loads = match loads {
                Some(p) => Some(read_loads_file(&p, cfg.scenario.count(Role::Ris))?),
                None => None,
            };
            let plane = match plane {
                PlaneArg::Phi => Plane::Phi,
                PlaneArg::Theta => Plane::Theta,
            };
            let (cut, rep) = cmd_pattern(&cfg, loads.as_deref(), plane, fixed_angle, points)?;
            emit(out.as_deref(), |w| write_pattern(w, &cut))?;
            emit_report(report.as_deref(), &rep)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
