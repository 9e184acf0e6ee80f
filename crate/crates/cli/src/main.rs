//! `orbitfl`: command-line front end for the orbital federated-learning
//! simulator.
//!
//! Subcommands:
//!   sim      run a full simulation and write trace/summary artifacts
//!   windows  print ground-station visibility windows as CSV
//!   link     print a link-budget sweep over slant range as CSV
//!   timing   print the closed-form round-time analysis (no events)
//!
//! Exit codes: 0 success, 2 usage error, 3 invalid scenario,
//! 4 visibility horizon exhausted.
//!
//! Set `ORBITFL_LOG={error|info|debug}` to control log verbosity.

mod config;

use clap::{Parser, Subcommand};
use orbitfl_core::constellation::GeometryError;
use orbitfl_core::link::LinkError;
use orbitfl_core::protocol::Mode;
use orbitfl_core::simcore::{SimError, Simulation};
use orbitfl_core::timing::{RoundContext, TimingError};
use orbitfl_core::trace::SimTrace;
use orbitfl_core::Constellation;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use config::ScenarioFile;

#[derive(Parser)]
#[command(
    name = "orbitfl",
    version,
    about = "Discrete-event simulator of federated learning over an LEO constellation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write trace.json, trace.csv, summary.txt and
    /// accuracy_vs_time.svg into the output directory.
    Sim {
        /// Scenario file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the protocol mode from the scenario file.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the seed from the scenario file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print visibility windows over the given horizon as CSV on stdout.
    Windows {
        /// Scenario file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Horizon in hours.
        #[arg(long, default_value_t = 24.0)]
        hours: f64,
    },
    /// Print a link-budget sweep over distance as CSV on stdout.
    Link {
        /// Scenario file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Smallest distance in km.
        #[arg(long, default_value_t = 500.0)]
        dmin: f64,
        /// Largest distance in km (defaults to the max LoS distance).
        #[arg(long)]
        dmax: Option<f64>,
        /// Number of sample points.
        #[arg(long, default_value_t = 50)]
        steps: u32,
    },
    /// Print the closed-form round-time report without running events.
    Timing {
        /// Scenario file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the protocol mode from the scenario file.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "star" => Ok(Mode::Star),
        "dnc" => Ok(Mode::Dnc),
        other => Err(format!("invalid mode {other:?} (expected \"star\" or \"dnc\")")),
    }
}

/// A failure with its process exit code.
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn validation(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    fn horizon(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let horizon = matches!(
            e,
            SimError::Geometry(GeometryError::HorizonExhausted { .. })
                | SimError::Timing(TimingError::Geometry(GeometryError::HorizonExhausted { .. }))
        );
        if horizon {
            CliError::horizon(e.to_string())
        } else {
            CliError::validation(e.to_string())
        }
    }
}

impl From<TimingError> for CliError {
    fn from(e: TimingError) -> Self {
        CliError::from(SimError::Timing(e))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("ORBITFL_LOG")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sim { config, mode, out, seed } => cmd_sim(&config, mode, &out, seed),
        Command::Windows { config, hours } => cmd_windows(&config, hours),
        Command::Link { config, dmin, dmax, steps } => cmd_link(&config, dmin, dmax, steps),
        Command::Timing { config, mode } => cmd_timing(&config, mode),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn load_scenario_file(path: &Path) -> Result<ScenarioFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::usage(format!(
            "cannot read config {}: {e}\n\nUsage: pass --config <FILE> pointing at a scenario TOML file",
            path.display()
        ))
    })?;
    toml::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> Result<orbitfl_core::simcore::Scenario, CliError> {
    let scenario = load_scenario_file(path)?
        .into_scenario()
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let errs = scenario.validate();
    if errs.is_empty() {
        Ok(scenario)
    } else {
        Err(CliError::validation(format!(
            "invalid scenario:\n  {}",
            errs.join("\n  ")
        )))
    }
}

fn stop_reason_str(trace: &SimTrace) -> String {
    // StopReason serializes as a snake_case string; reuse that spelling.
    serde_json::to_string(&trace.stop_reason)
        .unwrap_or_default()
        .trim_matches('"')
        .to_string()
}

fn cmd_sim(
    config: &Path,
    mode: Option<Mode>,
    out: &Path,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let mut scenario = load_scenario(config)?;
    if let Some(mode) = mode {
        scenario.mode = mode;
    }
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let sim = Simulation::new(scenario)?;
    let trace = sim.run()?;

    std::fs::create_dir_all(out)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", out.display())))?;
    let write = |name: &str, body: String| -> Result<(), CliError> {
        std::fs::write(out.join(name), body)
            .map_err(|e| CliError::usage(format!("cannot write {name}: {e}")))
    };
    write("trace.json", trace.to_json() + "\n")?;
    write("trace.csv", trace.to_csv())?;
    write("summary.txt", summary_text(&trace))?;
    write("accuracy_vs_time.svg", accuracy_svg(&trace))?;
    println!(
        "{} round(s), final accuracy {:.4}, total {:.1} s -> {}",
        trace.rounds.len(),
        trace.final_accuracy,
        trace.total_time_s,
        out.display()
    );
    Ok(())
}

fn summary_text(trace: &SimTrace) -> String {
    let uplinks: u64 = trace.rounds.iter().map(|r| r.uplink_messages).sum();
    let downlinks: u64 = trace.rounds.iter().map(|r| r.downlink_messages).sum();
    format!(
        "mode: {}\n\
         seed: {}\n\
         rounds: {}\n\
         stop_reason: {}\n\
         final_accuracy: {:.4}\n\
         total_time_s: {:.3}\n\
         simulated_hours: {:.3}\n\
         uplink_messages: {}\n\
         downlink_messages: {}\n\
         uplink_mb: {:.6}\n\
         downlink_mb: {:.6}\n\
         max_sat_flops: {}\n\
         trace_digest: {}\n",
        trace.mode,
        trace.seed,
        trace.rounds.len(),
        stop_reason_str(trace),
        trace.final_accuracy,
        trace.total_time_s,
        trace.total_time_s / 3600.0,
        uplinks,
        downlinks,
        trace.total_uplink_bytes() as f64 / 1e6,
        trace.total_downlink_bytes() as f64 / 1e6,
        trace.max_sat_flops(),
        trace.digest(),
    )
}

/// Hand-rolled accuracy-over-time plot: one polyline with round markers.
fn accuracy_svg(trace: &SimTrace) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const ML: f64 = 60.0; // left margin
    const MR: f64 = 20.0;
    const MT: f64 = 20.0;
    const MB: f64 = 50.0;

    let points: Vec<(f64, f64)> = trace
        .rounds
        .iter()
        .map(|r| ((r.start_s + r.duration_s) / 3600.0, r.accuracy))
        .collect();
    let t_max = points.iter().map(|p| p.0).fold(1e-9, f64::max);
    let x = |t: f64| ML + (t / t_max) * (W - ML - MR);
    let y = |a: f64| H - MB - a.clamp(0.0, 1.0) * (H - MT - MB);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    // Axes.
    svg.push_str(&format!(
        "  <line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB
    ));
    svg.push_str(&format!(
        "  <line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB
    ));
    // Y ticks at 0, 0.5, 1.
    for a in [0.0, 0.5, 1.0] {
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"end\">{a:.1}</text>\n",
            ML - 6.0,
            y(a) + 4.0
        ));
        svg.push_str(&format!(
            "  <line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{ML}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            ML - 4.0,
            y(a),
            y(a)
        ));
    }
    // Axis labels.
    svg.push_str(&format!(
        "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"13\" text-anchor=\"middle\">time (hours)</text>\n",
        (ML + W - MR) / 2.0,
        H - 12.0
    ));
    svg.push_str(&format!(
        "  <text x=\"16\" y=\"{:.1}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">accuracy</text>\n",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0
    ));
    if !points.is_empty() {
        let coords: Vec<String> = points
            .iter()
            .map(|(t, a)| format!("{:.2},{:.2}", x(*t), y(*a)))
            .collect();
        svg.push_str(&format!(
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n",
            coords.join(" ")
        ));
        for (t, a) in &points {
            svg.push_str(&format!(
                "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>\n",
                x(*t),
                y(*a)
            ));
        }
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"end\">{:.1} h</text>\n",
            W - MR,
            H - MB + 16.0,
            t_max
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn cmd_windows(config: &Path, hours: f64) -> Result<(), CliError> {
    if !(hours > 0.0) {
        return Err(CliError::usage("--hours must be positive"));
    }
    let scenario = load_scenario(config)?;
    let constellation =
        Constellation::new(scenario.constellation.clone(), scenario.ground_station.clone());
    let windows = constellation.compute_windows(hours * 3600.0, scenario.window_step_s);
    print!("{}", orbitfl_core::constellation::windows_to_csv(&windows));
    Ok(())
}

fn cmd_link(config: &Path, dmin: f64, dmax: Option<f64>, steps: u32) -> Result<(), CliError> {
    let scenario = load_scenario(config)?;
    let link = &scenario.link;
    let dmax = dmax.unwrap_or(link.max_los_distance_km);
    if !(dmin > 0.0) || dmax < dmin || steps == 0 {
        return Err(CliError::usage(
            "require 0 < --dmin <= --dmax and --steps >= 1",
        ));
    }
    println!("distance_km,path_loss_db,snr_db,rate_mbps");
    for i in 0..steps {
        let d = if steps == 1 {
            dmin
        } else {
            dmin + (dmax - dmin) * i as f64 / (steps - 1) as f64
        };
        match (link.path_loss(d), link.snr(d), link.data_rate_bps(d)) {
            (Ok(loss), Ok(snr), Ok(rate)) => {
                println!(
                    "{:.6},{:.6},{:.6},{:.6}",
                    d,
                    10.0 * loss.log10(),
                    10.0 * snr.log10(),
                    rate / 1e6
                );
            }
            (Err(LinkError::NoLineOfSight { .. }), _, _) => {
                log::info!("skipping {d} km: beyond max LoS distance");
            }
            (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => {
                return Err(CliError::validation(e.to_string()));
            }
        }
    }
    Ok(())
}

fn cmd_timing(config: &Path, mode: Option<Mode>) -> Result<(), CliError> {
    let mut scenario = load_scenario(config)?;
    if let Some(mode) = mode {
        scenario.mode = mode;
    }
    let sim = Simulation::new(scenario)?;
    let scenario = sim.scenario();
    let ctx = RoundContext {
        constellation: sim.constellation(),
        windows: sim.windows(),
        link: &scenario.link,
        isl: &scenario.isl,
        compute: &scenario.compute,
        model_bits: sim.model_bits(),
        work: sim.work_map(),
        orbital_epochs: scenario.orbital_epochs,
    };
    println!("mode: {}", scenario.mode);
    println!("model_bits: {}", sim.model_bits());
    let total = match scenario.mode {
        Mode::Star => {
            let (total, orbits) = ctx.star_round(0.0)?;
            for o in &orbits {
                println!("orbit {}: total {:.3} s", o.orbit, o.total_s);
            }
            total
        }
        Mode::Dnc => {
            let (total, orbits) = ctx.relay_round(0.0)?;
            for o in &orbits {
                println!(
                    "orbit {}: source {}/{}, wait {:.3} s, sweep {:.6} s, total {:.3} s",
                    o.orbit, o.source.orbit, o.source.slot, o.t_wait_s, o.relay_sweep_s, o.total_s
                );
            }
            total
        }
    };
    println!("round_time_s: {total:.6}");
    Ok(())
}
