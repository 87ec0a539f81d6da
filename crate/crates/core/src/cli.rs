//! `perchsim` command line: scripted runs, the teleop service and the
//! experiment harness.
//!
//! Exit codes: 0 success, 1 timeout or experiment outside its bands,
//! 2 unreadable or malformed input, 3 command rejected by a guard.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::command::OperationMode;
use crate::experiments::{run_experiment, ExperimentError, EXPERIMENTS};
use crate::model::ParamSet;
use crate::script::{MissionScript, ScriptOutcome, ScriptRunner};
use crate::sim::{mission_start, SimConfig, Simulator};
use crate::teleop::{serve, TeleopConfig, DEFAULT_PORT, PORT_ENV};
use crate::telemetry::{write_json_lines, write_telemetry_csv, OutboundMessage};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_BAD_INPUT: i32 = 2;
pub const EXIT_REJECTED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "perchsim", version, about = "Perch-and-tilt drilling quadrotor simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Parameter file (TOML); defaults are used when omitted.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Play a mission script as fast as possible.
    Run {
        script: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Serve telemetry and accept commands over a websocket.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Real-time factor.
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
        #[arg(long, env = PORT_ENV, default_value_t = DEFAULT_PORT)]
        port: u16,
    },
    /// Run one experiment and write its report.
    Experiment {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(EXPERIMENTS))]
        name: String,
        #[command(flatten)]
        common: Common,
    },
    /// Write the default parameter file.
    Params {
        #[arg(long, default_value = "params.toml")]
        out: PathBuf,
    },
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    completed: bool,
    fired: usize,
    end_time: f64,
    mode_trace: &'a [OperationMode],
    rejections: Vec<String>,
    holes: usize,
}

fn load_params(path: Option<&Path>) -> Result<ParamSet, String> {
    match path {
        None => Ok(ParamSet::default()),
        Some(p) => ParamSet::load(p).map_err(|e| format!("{}: {e}", p.display())),
    }
}

/// Play `script` from the default start and write `telemetry.csv`,
/// `events.jsonl` and `summary.json` into `out`.
pub fn run_script(script: &Path, params: Option<&Path>, seed: u64, out: &Path) -> i32 {
    let params = match load_params(params) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    let script = match MissionScript::load(script) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", script.display());
            return EXIT_BAD_INPUT;
        }
    };
    let config = SimConfig { seed, ..SimConfig::default() };
    let mut sim = match Simulator::new(&params, config, mission_start(&params)) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    let outcome = match ScriptRunner::new(script).strict().run(&mut sim) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: simulation failed: {e}");
            return EXIT_FAILED;
        }
    };
    if let Err(e) = write_run(&sim, &outcome, out) {
        eprintln!("error: writing {}: {e}", out.display());
        return EXIT_BAD_INPUT;
    }
    if let Some((line, r)) = outcome.rejections.first() {
        eprintln!("aborted: line {line}: {r}");
        return EXIT_REJECTED;
    }
    if !outcome.completed {
        eprintln!("timed out at {:.1} s after {} commands", outcome.end_time, outcome.fired);
        return EXIT_FAILED;
    }
    println!(
        "completed at {:.2} s; modes {}",
        outcome.end_time,
        sim.mode_trace.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(" -> ")
    );
    EXIT_OK
}

fn write_run(sim: &Simulator, outcome: &ScriptOutcome, out: &Path) -> Result<(), Box<dyn std::error::Error>> {
    fs::create_dir_all(out)?;
    write_telemetry_csv(BufWriter::new(File::create(out.join("telemetry.csv"))?), &sim.telemetry)?;
    let events: Vec<OutboundMessage> = sim.events.iter().cloned().map(OutboundMessage::Event).collect();
    write_json_lines(BufWriter::new(File::create(out.join("events.jsonl"))?), &events)?;
    let summary = RunSummary {
        completed: outcome.completed,
        fired: outcome.fired,
        end_time: outcome.end_time,
        mode_trace: &sim.mode_trace,
        rejections: outcome.rejections.iter().map(|(l, r)| format!("line {l}: {r}")).collect(),
        holes: sim.holes.len(),
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

pub fn experiment(name: &str, params: Option<&Path>, seed: u64, out: &Path) -> i32 {
    let params = match load_params(params) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    let report = match run_experiment(name, &params, seed) {
        Ok(r) => r,
        Err(e @ ExperimentError::Unknown(_)) => {
            eprintln!("error: {e}");
            return EXIT_BAD_INPUT;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILED;
        }
    };
    let dir = out.join(name);
    if let Err(e) = report.write(&dir) {
        eprintln!("error: writing {}: {e}", dir.display());
        return EXIT_BAD_INPUT;
    }
    for c in &report.checks {
        println!(
            "{} {:<28} {:>12.4} {:<3} in [{}, {}]",
            if c.pass { "ok  " } else { "MISS" },
            c.name,
            c.value,
            c.unit,
            c.lo,
            c.hi
        );
    }
    println!("report written to {}", dir.display());
    if report.passed() {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_BAD_INPUT } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run { script, common } => run_script(&script, common.params.as_deref(), common.seed, &common.out),
        Command::Experiment { name, common } => experiment(&name, common.params.as_deref(), common.seed, &common.out),
        Command::Params { out } => match ParamSet::default().save(&out) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_BAD_INPUT
            }
        },
        Command::Serve { common, rate, port } => {
            let params = match load_params(common.params.as_deref()) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_BAD_INPUT;
                }
            };
            let cfg = TeleopConfig {
                port,
                rate,
                seed: common.seed,
                capture: Some(common.out.join("teleop.jsonl")),
                ..TeleopConfig::default()
            };
            if !(rate > 0.0 && rate.is_finite()) {
                eprintln!("error: --rate must be positive");
                return EXIT_BAD_INPUT;
            }
            match serve(&params, cfg) {
                Ok(server) => {
                    println!("listening on ws://{}", server.local_addr());
                    server.join();
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_FAILED
                }
            }
        }
    }
}
