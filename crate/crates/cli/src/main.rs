//! `phononcount`: batch front end for rate tables, filter design, click
//! simulation, g² and thermometry analysis, and lock-cycle statistics.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phononcount::Error;

#[derive(Parser, Debug)]
#[command(name = "phononcount", version, about = "Phonon-counting optomechanics toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML experiment configuration; the built-in reference setup if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, env = "PHONONCOUNT_OUT", default_value = ".")]
    out: PathBuf,
    /// Write JSON documents instead of tab-delimited tables.
    #[arg(long, global = true)]
    json: bool,
    #[arg(long, global = true, allow_hyphen_values = true)]
    gamma_opt_hz: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    detuning_hz: Option<f64>,
    #[arg(long, global = true)]
    filter_linewidth_hz: Option<f64>,
    #[arg(long, global = true)]
    duration_s: Option<f64>,
    #[arg(long, global = true)]
    dark_rate_hz: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Transition rates, occupancy and detected rates over a Γ_opt grid.
    Rates {
        /// Comma-separated Γ_opt/2π values in Hz; an empty string gives an empty table.
        #[arg(long)]
        grid_hz: Option<String>,
    },
    /// Rejection curve of the filter chain versus offset from its center.
    FilterResponse {
        #[arg(long, default_value_t = 1e3)]
        from_hz: f64,
        #[arg(long, default_value_t = 3e6)]
        to_hz: f64,
        #[arg(long, default_value_t = 301)]
        points: usize,
    },
    /// Predicted count rate versus filter detuning from a measured PSD.
    PredictCounts {
        /// Columns: frequency_hz, psd[, shot_noise].
        #[arg(long)]
        psd: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        calibration: f64,
        /// Calibrate against this measured rate at `--reference-hz` instead.
        #[arg(long)]
        measured_rate_hz: Option<f64>,
        #[arg(long)]
        reference_hz: Option<f64>,
        #[arg(long, default_value_t = 1.42e6)]
        from_hz: f64,
        #[arg(long, default_value_t = 1.59e6)]
        to_hz: f64,
        #[arg(long, default_value_t = 171)]
        points: usize,
    },
    /// Simulate detected click streams.
    Simulate {
        #[arg(long, default_value = "both")]
        channel: String,
    },
    /// g²(τ) histogram and fit of a click-stream file.
    G2 {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        bin_width_s: Option<f64>,
        #[arg(long)]
        max_delay_s: Option<f64>,
        #[arg(long, default_value_t = 500e-9)]
        exclusion_s: f64,
        /// Width of the model confidence band, in standard deviations.
        #[arg(long, default_value_t = 3.0)]
        band_sigma: f64,
    },
    /// Raman-ratio thermometry from a Stokes and an anti-Stokes stream.
    Thermometry {
        #[arg(long)]
        stokes: PathBuf,
        #[arg(long)]
        antistokes: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        dark_rate_sigma_hz: f64,
    },
    /// Lock acquisition, frozen-lock drift ensemble and duty-cycle statistics.
    LockCycle {
        #[arg(long, default_value_t = 20)]
        cycles: usize,
        #[arg(long, default_value_t = 100)]
        seeds: usize,
        #[arg(long, default_value_t = 1.5)]
        freeze_s: f64,
        #[arg(long, default_value_t = 0.5)]
        relock_timeout_s: f64,
        #[arg(long, default_value_t = 12.0)]
        horizon_s: f64,
        /// Detuning diffusion in (κ_f/2)²/s.
        #[arg(long)]
        diffusion_norm: Option<f64>,
        /// Linear drift in (κ_f/2)/s.
        #[arg(long)]
        drift_norm: Option<f64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 4,
        e if e.is_validation() => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli.global, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
